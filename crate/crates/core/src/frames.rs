//! E(3) frames of a point patch.
//!
//! A patch's frame set is built from its centroid and the eigenvectors of its
//! covariance: the eight rotations `[±v1, ±v2, ±v3]` paired with the centroid.
//! Averaging an estimator over the whole set makes it E(3)-equivariant no
//! matter what the estimator is.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::geom::{centroid, covariance, eig_sym3, Mat3, SymEig3, Vec3};

pub const FRAME_COUNT: usize = 8;

const GAP_EPS: f64 = 1e-300;
const AVERAGE_EPS: f64 = 1e-8;

/// An element `(R, t)` of E(3), acting on points as `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Frame {
    pub const IDENTITY: Frame = Frame {
        rotation: Mat3::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    /// `R p + t`
    #[inline]
    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }

    /// `R^T (p - t)`, the inverse action.
    #[inline]
    pub fn apply_inverse(&self, p: Vec3) -> Vec3 {
        self.rotation.tr_mul_vec(p - self.translation)
    }

    pub fn to_canonical(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.iter().map(|&p| self.apply_inverse(p)).collect()
    }

    pub fn to_world(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.iter().map(|&p| self.apply(p)).collect()
    }

    /// Directions ignore the translation part.
    #[inline]
    pub fn direction_to_world(&self, n: Vec3) -> Vec3 {
        self.rotation.mul_vec(n)
    }

    #[inline]
    pub fn direction_to_canonical(&self, n: Vec3) -> Vec3 {
        self.rotation.tr_mul_vec(n)
    }

    /// Frobenius distance of `R R^T` from identity.
    pub fn orthogonality_error(&self) -> f64 {
        self.rotation
            .mul_mat(&self.rotation.transpose())
            .sub(&Mat3::IDENTITY)
            .frobenius()
    }
}

/// The eight frames of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    /// Frame `k` negates eigenvector column `i` when bit `i` of `k` is set.
    pub frames: [Frame; FRAME_COUNT],
    pub eigen: SymEig3,
    /// `min_i (λ_{i+1} - λ_i) / λ_3`; near zero means the frames are ill-defined.
    pub eigen_gap: f64,
}

impl FrameSet {
    pub fn centroid(&self) -> Vec3 {
        self.frames[0].translation
    }

    pub fn get(&self, k: usize) -> &Frame {
        &self.frames[k]
    }
}

pub fn build_frame_set(points: &[Vec3]) -> Result<FrameSet> {
    let t = centroid(points)?;
    let eigen = eig_sym3(&covariance(points)?)?;
    let [l1, l2, l3] = eigen.values;
    let eigen_gap = (l2 - l1).min(l3 - l2) / (l3 + GAP_EPS);

    let frames = std::array::from_fn(|k| {
        let cols: [Vec3; 3] = std::array::from_fn(|i| {
            if k >> i & 1 == 1 {
                -eigen.vectors[i]
            } else {
                eigen.vectors[i]
            }
        });
        Frame::new(Mat3::from_cols(cols[0], cols[1], cols[2]), t)
    });
    Ok(FrameSet { frames, eigen, eigen_gap })
}

/// Pick one of the eight frames uniformly at random.
pub fn sample_random_frame<R: Rng + ?Sized>(fs: &FrameSet, rng: &mut R) -> Frame {
    fs.frames[rng.gen_range(0..FRAME_COUNT)]
}

/// Indices of `n_frames` distinct frames, ascending.
pub fn choose_frames<R: Rng + ?Sized>(n_frames: usize, rng: &mut R) -> Result<Vec<usize>> {
    if !(1..=FRAME_COUNT).contains(&n_frames) {
        return Err(Error::Range(format!("n_frames must be in 1..=8, got {n_frames}")));
    }
    if n_frames == FRAME_COUNT {
        return Ok((0..FRAME_COUNT).collect());
    }
    let mut picked = index::sample(rng, FRAME_COUNT, n_frames).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Frame-averaged estimate `mean_g g·φ(g⁻¹x)` over `n_frames` frames of the patch.
///
/// Unoriented candidates are sign-aligned before summing. The reference
/// hemisphere is the dominant axis of `Σ c cᵀ` over a point's candidates,
/// which rotates with the input, so the full eight-frame average stays
/// equivariant for any estimator. The result is finally oriented toward the
/// first candidate.
pub fn frame_average<R: Rng + ?Sized>(
    phi: &dyn Estimator,
    patch_points: &[Vec3],
    n_frames: usize,
    rng: &mut R,
) -> Result<Vec<Vec3>> {
    let fs = build_frame_set(patch_points)?;
    let chosen = choose_frames(n_frames, rng)?;
    frame_average_with(phi, patch_points, &fs, &chosen)
}

/// [`frame_average`] over an explicit list of frame indices.
pub fn frame_average_with(
    phi: &dyn Estimator,
    patch_points: &[Vec3],
    fs: &FrameSet,
    chosen: &[usize],
) -> Result<Vec<Vec3>> {
    let run = |&k: &usize| -> Result<Vec<Vec3>> {
        let frame = fs.frames[k];
        let local = frame.to_canonical(patch_points);
        let out = phi.estimate(&local)?;
        Error::check_len(out.len(), local.len())?;
        Ok(out.into_iter().map(|n| frame.direction_to_world(n)).collect())
    };
    let candidates: Vec<Vec<Vec3>> = if phi.concurrency_safe() && chosen.len() > 1 {
        chosen.par_iter().map(run).collect::<Result<_>>()?
    } else {
        chosen.iter().map(run).collect::<Result<_>>()?
    };

    let mut per_point = Vec::with_capacity(candidates.len());
    (0..patch_points.len())
        .map(|i| {
            per_point.clear();
            per_point.extend(candidates.iter().map(|c| c[i]));
            average_unoriented(&per_point).ok_or(Error::DegenerateAverage { point: i })
        })
        .collect()
}

/// Sign-aligned mean of unoriented unit directions, summed in slice order.
///
/// Returns `None` when the aligned sum is (near) zero or not finite.
pub fn average_unoriented(candidates: &[Vec3]) -> Option<Vec3> {
    let first = *candidates.first()?;
    if candidates.len() == 1 {
        return first.try_normalize(AVERAGE_EPS);
    }
    let scatter = candidates
        .iter()
        .fold(Mat3::ZERO, |acc, c| acc.add(&c.outer(*c)));
    let axis = eig_sym3(&scatter).ok()?.vectors[2];
    let mut sum = Vec3::ZERO;
    for &c in candidates {
        sum += if c.dot(axis) < 0.0 { -c } else { c };
    }
    let mean = sum.try_normalize(AVERAGE_EPS)?;
    Some(if mean.dot(first) < 0.0 { -mean } else { mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::PcaEstimator;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plane_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5), 0.0))
            .collect()
    }

    #[test]
    fn frame_set_has_eight_distinct_frames() {
        let fs = build_frame_set(&plane_points(50, 1)).unwrap();
        assert_eq!(fs.frames.len(), 8);
        for a in 0..8 {
            let f = fs.frames[a];
            assert!(f.orthogonality_error() < 1e-7);
            assert_abs_diff_eq!(f.rotation.det().abs(), 1.0, epsilon = 1e-7);
            for b in (a + 1)..8 {
                assert_ne!(f.rotation, fs.frames[b].rotation);
            }
            for i in 0..3 {
                assert_abs_diff_eq!(f.rotation.col(i).dot(fs.eigen.vectors[i]).abs(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn plane_first_column_is_z() {
        let fs = build_frame_set(&plane_points(80, 2)).unwrap();
        for f in &fs.frames {
            assert_abs_diff_eq!(f.rotation.col(0).dot(Vec3::Z).abs(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn axis_aligned_box_gives_signed_axes() {
        // box with distinct extents: x widest, then z, then y
        let mut pts = Vec::new();
        for i in -3..=3 {
            for j in -2..=2 {
                for k in -2..=2 {
                    pts.push(Vec3::new(i as f64, 0.25 * j as f64, 0.75 * k as f64));
                }
            }
        }
        let fs = build_frame_set(&pts).unwrap();
        assert!(fs.eigen_gap > 0.0);
        // oracle: diagonal of the covariance orders the axes
        let c = covariance(&pts).unwrap();
        let mut axes = [0usize, 1, 2];
        axes.sort_by(|&a, &b| c.m[a][a].total_cmp(&c.m[b][b]));
        let basis = [Vec3::X, Vec3::Y, Vec3::Z];
        for f in &fs.frames {
            for (i, &ax) in axes.iter().enumerate() {
                assert_abs_diff_eq!(f.rotation.col(i).dot(basis[ax]).abs(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn canonical_round_trip_and_centering() {
        let pts = plane_points(30, 4)
            .into_iter()
            .map(|p| p + Vec3::new(0.3, -2.0, 5.0))
            .collect::<Vec<_>>();
        assert_eq!(Frame::IDENTITY.to_canonical(&pts), pts);
        let shift = Frame::new(Mat3::IDENTITY, Vec3::new(1.0, 2.0, 3.0));
        let moved = shift.to_canonical(&pts);
        for (a, b) in moved.iter().zip(&pts) {
            assert_eq!(*a, *b - Vec3::new(1.0, 2.0, 3.0));
        }
        let fs = build_frame_set(&pts).unwrap();
        for f in &fs.frames {
            let local = f.to_canonical(&pts);
            let c = centroid(&local).unwrap();
            assert!(c.norm() < 1e-9);
            for (a, b) in f.to_world(&local).iter().zip(&pts) {
                assert!((*a - *b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn direction_mapping_examples() {
        assert_eq!(Frame::IDENTITY.direction_to_world(Vec3::Z), Vec3::Z);
        let rz = Frame::new(Mat3::rotation(Vec3::Z, std::f64::consts::FRAC_PI_2), Vec3::ZERO);
        let v = rz.direction_to_world(Vec3::X);
        assert!((v - Vec3::Y).norm() < 1e-15);
        let refl = Frame::new(Mat3::diag(1.0, 1.0, -1.0), Vec3::new(4.0, 4.0, 4.0));
        assert_eq!(refl.direction_to_world(Vec3::Z), -Vec3::Z);
    }

    #[test]
    fn random_frame_is_deterministic_and_uniform() {
        let fs = build_frame_set(&plane_points(20, 6)).unwrap();
        let a = sample_random_frame(&fs, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_random_frame(&fs, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut counts = [0usize; 8];
        for _ in 0..8000 {
            let f = sample_random_frame(&fs, &mut rng);
            let k = fs.frames.iter().position(|g| *g == f).unwrap();
            counts[k] += 1;
        }
        for c in counts {
            assert!((800..=1200).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn choose_frames_validates_and_sorts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(choose_frames(0, &mut rng).is_err());
        assert!(choose_frames(9, &mut rng).is_err());
        assert_eq!(choose_frames(8, &mut rng).unwrap(), (0..8).collect::<Vec<_>>());
        for n in [1, 2, 4] {
            let c = choose_frames(n, &mut rng).unwrap();
            assert_eq!(c.len(), n);
            assert!(c.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn single_frame_average_is_one_candidate() {
        let pts = plane_points(40, 7);
        let fs = build_frame_set(&pts).unwrap();
        let out = frame_average_with(&PcaEstimator, &pts, &fs, &[5]).unwrap();
        let f = fs.frames[5];
        let direct = PcaEstimator.estimate(&f.to_canonical(&pts)).unwrap();
        for (o, d) in out.iter().zip(direct) {
            assert!((*o - f.direction_to_world(d)).norm() < 1e-15);
        }
    }

    #[test]
    fn pca_average_on_plane_is_z() {
        let pts = plane_points(60, 8);
        let out = frame_average(&PcaEstimator, &pts, 8, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for n in out {
            assert_abs_diff_eq!(n.dot(Vec3::Z).abs(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn average_unoriented_aligns_signs() {
        let c = [Vec3::Z, -Vec3::Z, Vec3::Z];
        assert_eq!(average_unoriented(&c).unwrap(), Vec3::Z);
        let c = [-Vec3::X, Vec3::X];
        assert_eq!(average_unoriented(&c).unwrap(), -Vec3::X);
        assert!(average_unoriented(&[]).is_none());
        assert!(average_unoriented(&[Vec3::ZERO]).is_none());
    }
}
