//! Small fixed-size linear algebra: 3-vectors, 3x3 matrices, point statistics
//! and the symmetric 3x3 eigendecomposition used to build frames.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// A point or direction in 3D.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction, or `None` when the norm is below `eps`.
    #[inline]
    pub fn try_normalize(self, eps: f64) -> Option<Vec3> {
        let n = self.norm();
        if n < eps || !n.is_finite() {
            None
        } else {
            Some(self / n)
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Flip so the z component is positive; ties fall through to y, then x.
    pub fn canonical_sign(self) -> Vec3 {
        let key = if self.z != 0.0 {
            self.z
        } else if self.y != 0.0 {
            self.y
        } else {
            self.x
        };
        if key < 0.0 {
            -self
        } else {
            self
        }
    }

    /// Outer product `self * o^T`.
    pub fn outer(self, o: Vec3) -> Mat3 {
        let a = self.to_array();
        let b = o.to_array();
        let mut m = [[0.0; 3]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = a[r] * b[c];
            }
        }
        Mat3 { m }
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

/// 3x3 matrix stored row-major: `m[row][col]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat3 {
    pub m: [[f64; 3]; 3],
}

impl Mat3 {
    pub const ZERO: Mat3 = Mat3 { m: [[0.0; 3]; 3] };
    pub const IDENTITY: Mat3 = Mat3 {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub const fn from_rows(m: [[f64; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Self {
            m: [[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]],
        }
    }

    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        Self {
            m: [[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]],
        }
    }

    /// Right-handed rotation by `angle` radians about a unit `axis`.
    pub fn rotation(axis: Vec3, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let Vec3 { x, y, z } = axis;
        Self {
            m: [
                [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
            ],
        }
    }

    pub fn col(&self, c: usize) -> Vec3 {
        Vec3::new(self.m[0][c], self.m[1][c], self.m[2][c])
    }

    pub fn row(&self, r: usize) -> Vec3 {
        Vec3::from_array(self.m[r])
    }

    pub fn transpose(&self) -> Mat3 {
        let mut t = [[0.0; 3]; 3];
        for (r, row) in self.m.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                t[c][r] = *v;
            }
        }
        Mat3 { m: t }
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    /// `self^T * v` without materializing the transpose.
    #[inline]
    pub fn tr_mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3::new(self.col(0).dot(v), self.col(1).dot(v), self.col(2).dot(v))
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[r][k] * o.m[k][c]).sum();
            }
        }
        Mat3 { m: out }
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut out = self.m;
        out.iter_mut().flatten().for_each(|v| *v *= s);
        Mat3 { m: out }
    }

    pub fn add(&self, o: &Mat3) -> Mat3 {
        let mut out = self.m;
        for (a, b) in out.iter_mut().flatten().zip(o.m.iter().flatten()) {
            *a += b;
        }
        Mat3 { m: out }
    }

    pub fn sub(&self, o: &Mat3) -> Mat3 {
        self.add(&o.scale(-1.0))
    }

    pub fn det(&self) -> f64 {
        self.row(0).dot(self.row(1).cross(self.row(2)))
    }

    pub fn frobenius(&self) -> f64 {
        self.m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let m = &self.m;
        (m[0][1] - m[1][0])
            .abs()
            .max((m[0][2] - m[2][0]).abs())
            .max((m[1][2] - m[2][1]).abs())
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }
}

/// Eigendecomposition of a symmetric 3x3 matrix, eigenvalues ascending.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEig3 {
    pub values: [f64; 3],
    pub vectors: [Vec3; 3],
}

impl SymEig3 {
    /// `sum_i values[i] * v_i v_i^T`
    pub fn reconstruct(&self) -> Mat3 {
        self.vectors
            .iter()
            .zip(self.values)
            .fold(Mat3::ZERO, |acc, (v, l)| acc.add(&v.outer(*v).scale(l)))
    }
}

pub fn centroid(points: &[Vec3]) -> Result<Vec3> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sum = points.iter().fold(Vec3::ZERO, |acc, &p| acc + p);
    Ok(sum / points.len() as f64)
}

/// Population covariance `(1/m) sum (p - t)(p - t)^T` about the centroid.
pub fn covariance(points: &[Vec3]) -> Result<Mat3> {
    let t = centroid(points)?;
    let mut c = [[0.0; 3]; 3];
    for p in points {
        let d = (*p - t).to_array();
        for r in 0..3 {
            for k in r..3 {
                c[r][k] += d[r] * d[k];
            }
        }
    }
    let inv = 1.0 / points.len() as f64;
    for r in 0..3 {
        for k in r..3 {
            c[r][k] *= inv;
            c[k][r] = c[r][k];
        }
    }
    Ok(Mat3 { m: c })
}

const MAX_SWEEPS: usize = 64;
const SYMMETRY_TOL: f64 = 1e-9;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Iterates until the off-diagonal Frobenius norm falls below `1e-12` times
/// the matrix norm, or 64 sweeps. Eigenvector signs are whatever the rotations
/// produce; callers that need a sign convention must impose it.
pub fn eig_sym3(input: &Mat3) -> Result<SymEig3> {
    let scale = input.m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let asym = input.max_asymmetry();
    if asym > SYMMETRY_TOL * scale.max(1.0) {
        return Err(Error::NonSymmetric(asym));
    }
    // Work on the symmetrized matrix so tiny asymmetries cannot bias the result.
    let mut a = input.add(&input.transpose()).scale(0.5);
    let mut v = Mat3::IDENTITY;
    let threshold = 1e-12 * a.frobenius();

    for _ in 0..MAX_SWEEPS {
        let off = (2.0 * (a.m[0][1].powi(2) + a.m[0][2].powi(2) + a.m[1][2].powi(2))).sqrt();
        if off <= threshold {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a.m[p][q];
            if apq == 0.0 {
                continue;
            }
            let theta = (a.m[q][q] - a.m[p][p]) / (2.0 * apq);
            let t = if theta.abs() > 1e150 {
                0.5 / theta
            } else {
                theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
            };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut j = Mat3::IDENTITY;
            j.m[p][p] = c;
            j.m[q][q] = c;
            j.m[p][q] = s;
            j.m[q][p] = -s;
            a = j.transpose().mul_mat(&a).mul_mat(&j);
            a.m[p][q] = 0.0;
            a.m[q][p] = 0.0;
            v = v.mul_mat(&j);
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &k| a.m[i][i].total_cmp(&a.m[k][k]));
    let values = order.map(|i| a.m[i][i]);
    let vectors = order.map(|i| {
        let c = v.col(i);
        c / c.norm()
    });
    Ok(SymEig3 { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn centroid_examples() {
        let c = centroid(&[Vec3::ZERO, Vec3::new(2.0, 0.0, 0.0)]).unwrap();
        assert_eq!(c, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(centroid(&[Vec3::new(1.0, 2.0, 3.0)]).unwrap(), Vec3::new(1.0, 2.0, 3.0));
        assert!(matches!(centroid(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn centroid_of_uniform_cube_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..1000)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let c = centroid(&pts).unwrap();
        // summation oracle, one coordinate at a time
        for axis in 0..3 {
            let mean = pts.iter().map(|p| p[axis]).sum::<f64>() / 1000.0;
            assert_abs_diff_eq!(c[axis], mean, epsilon = 1e-12);
            assert!((c[axis] - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn covariance_examples() {
        let same = vec![Vec3::new(1.0, -2.0, 0.5); 5];
        assert_eq!(covariance(&same).unwrap(), Mat3::ZERO);

        let flat = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 3.0, 0.0),
            Vec3::new(-2.0, 0.5, 0.0),
        ];
        let c = covariance(&flat).unwrap();
        for k in 0..3 {
            assert_eq!(c.m[2][k], 0.0);
            assert_eq!(c.m[k][2], 0.0);
        }

        let cross = [
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
            Vec3::new(0.0, -2.0, 0.0),
        ];
        // hand summation: xx = (1+1)/4, yy = (4+4)/4
        assert_eq!(covariance(&cross).unwrap(), Mat3::diag(0.5, 2.0, 0.0));
        assert!(matches!(covariance(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn eig_identity_and_diagonal() {
        let e = eig_sym3(&Mat3::IDENTITY).unwrap();
        assert_eq!(e.values, [1.0, 1.0, 1.0]);
        assert!(e.reconstruct().sub(&Mat3::IDENTITY).frobenius() < 1e-12);

        let e = eig_sym3(&Mat3::diag(3.0, 1.0, 2.0)).unwrap();
        assert_eq!(e.values, [1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(e.vectors[0].dot(Vec3::Y).abs(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.vectors[1].dot(Vec3::Z).abs(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.vectors[2].dot(Vec3::X).abs(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn eig_plane_null_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..200)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0), 0.0))
            .collect();
        let e = eig_sym3(&covariance(&pts).unwrap()).unwrap();
        assert_abs_diff_eq!(e.vectors[0].dot(Vec3::Z).abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn eig_rejects_asymmetric() {
        let mut m = Mat3::IDENTITY;
        m.m[0][1] = 1e-3;
        assert!(matches!(eig_sym3(&m), Err(Error::NonSymmetric(_))));
    }

    #[test]
    fn eig_zero_matrix() {
        let e = eig_sym3(&Mat3::ZERO).unwrap();
        assert_eq!(e.values, [0.0; 3]);
    }

    #[test]
    fn rotation_is_orthonormal() {
        let r = Mat3::rotation(Vec3::new(1.0, 2.0, 2.0) / 3.0, 0.7);
        assert!(r.mul_mat(&r.transpose()).sub(&Mat3::IDENTITY).frobenius() < 1e-14);
        assert_abs_diff_eq!(r.det(), 1.0, epsilon = 1e-14);
        let q = Mat3::rotation(Vec3::Z, std::f64::consts::FRAC_PI_2);
        let v = q.mul_vec(Vec3::X);
        assert_abs_diff_eq!(v.y, 1.0, epsilon = 1e-15);
    }
}
