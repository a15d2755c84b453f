use nalgebra::{DMatrix, DVector};

use super::{pca_estimate, Estimator};
use crate::error::{Error, Result};
use crate::geom::{centroid, covariance, eig_sym3, Vec3};

const MAX_CONDITION: f64 = 1e12;
const SVD_TRUNCATION: f64 = 1e-10;

/// Coefficients of a bivariate height polynomial `h = f(u, v)`, graded
/// lexicographic: `1, u, v, u², uv, v², u³, u²v, uv², v³`.
#[derive(Debug, Clone, PartialEq)]
pub struct JetCoefficients {
    pub order: usize,
    pub coeffs: Vec<f64>,
}

impl JetCoefficients {
    pub fn count(order: usize) -> usize {
        (order + 1) * (order + 2) / 2
    }

    /// `(power of u, power of v)` for each coefficient slot.
    pub fn exponents(order: usize) -> Vec<(i32, i32)> {
        let mut out = Vec::with_capacity(Self::count(order));
        for deg in 0..=order as i32 {
            for a in (0..=deg).rev() {
                out.push((a, deg - a));
            }
        }
        out
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        Self::exponents(self.order)
            .iter()
            .zip(&self.coeffs)
            .map(|(&(a, b), c)| c * u.powi(a) * v.powi(b))
            .sum()
    }

    /// `(∂f/∂u, ∂f/∂v)`
    pub fn gradient(&self, u: f64, v: f64) -> (f64, f64) {
        let mut du = 0.0;
        let mut dv = 0.0;
        for (&(a, b), c) in Self::exponents(self.order).iter().zip(&self.coeffs) {
            if a > 0 {
                du += c * a as f64 * u.powi(a - 1) * v.powi(b);
            }
            if b > 0 {
                dv += c * b as f64 * u.powi(a) * v.powi(b - 1);
            }
        }
        (du, dv)
    }
}

#[derive(Debug, Clone)]
pub struct JetFit {
    pub normals: Vec<Vec3>,
    /// `None` when the fit fell back to PCA.
    pub coefficients: Option<JetCoefficients>,
    /// Local axes `(u, v, h)`; `h` is the smallest-variance direction.
    pub axes: [Vec3; 3],
    pub origin: Vec3,
    pub ill_conditioned: bool,
}

/// Least-squares height-field fit of the given order.
///
/// The height axis is the smallest-variance direction of the input, which
/// in a canonical frame is the first coordinate axis. Normals come from the
/// fitted gradient at each point and follow the positive-z sign convention.
pub fn jet_estimate(points: &[Vec3], order: usize) -> Result<JetFit> {
    if !(1..=3).contains(&order) {
        return Err(Error::Range(format!("jet order must be 1..=3, got {order}")));
    }
    let k = JetCoefficients::count(order);
    if points.len() < k.max(3) {
        return Err(Error::TooFewPoints { needed: k.max(3), got: points.len() });
    }
    let origin = centroid(points)?;
    let eig = eig_sym3(&covariance(points)?)?;
    let axes = [eig.vectors[2], eig.vectors[1], eig.vectors[0]];

    let local: Vec<[f64; 3]> = points
        .iter()
        .map(|&p| {
            let d = p - origin;
            [d.dot(axes[0]), d.dot(axes[1]), d.dot(axes[2])]
        })
        .collect();
    let scale = local
        .iter()
        .fold(0.0f64, |m, l| m.max(l[0].abs()).max(l[1].abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };

    let exps = JetCoefficients::exponents(order);
    let design = DMatrix::from_fn(points.len(), k, |r, c| {
        let (a, b) = exps[c];
        (local[r][0] / scale).powi(a) * (local[r][1] / scale).powi(b)
    });
    let heights = DVector::from_iterator(points.len(), local.iter().map(|l| l[2]));

    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0) || smax / smin > MAX_CONDITION {
        log::warn!("jet fit ill-conditioned (sigma {smax:e}/{smin:e}), using PCA");
        return Ok(JetFit {
            normals: pca_estimate(points)?,
            coefficients: None,
            axes,
            origin,
            ill_conditioned: true,
        });
    }
    let scaled = svd
        .solve(&heights, SVD_TRUNCATION * smax)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let coeffs = exps
        .iter()
        .zip(scaled.iter())
        .map(|(&(a, b), c)| c / scale.powi(a + b))
        .collect();
    let jet = JetCoefficients { order, coeffs };

    let normals = local
        .iter()
        .map(|l| {
            let (du, dv) = jet.gradient(l[0], l[1]);
            let n = axes[2] - axes[0] * du - axes[1] * dv;
            (n / n.norm()).canonical_sign()
        })
        .collect();
    Ok(JetFit {
        normals,
        coefficients: Some(jet),
        axes,
        origin,
        ill_conditioned: false,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct JetEstimator {
    pub order: usize,
}

impl Default for JetEstimator {
    fn default() -> Self {
        Self { order: 2 }
    }
}

impl Estimator for JetEstimator {
    fn name(&self) -> &str {
        "jet"
    }

    fn estimate(&self, canonical_points: &[Vec3]) -> Result<Vec<Vec3>> {
        jet_estimate(canonical_points, self.order).map(|f| f.normals)
    }
}
