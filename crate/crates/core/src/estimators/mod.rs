//! Per-patch normal estimators.
//!
//! An [`Estimator`] maps a patch given in canonical coordinates to one unit
//! normal per point. None of them is equivariant on its own; wrapping them in
//! [`frame_average`](crate::frames::frame_average) makes them so.

mod jet;
mod neural;

pub use jet::{jet_estimate, JetCoefficients, JetEstimator, JetFit};
pub use neural::{neural_estimate, NetworkConfig, NetworkParams, NeuralEstimator, PARAMS_MAGIC, PARAMS_VERSION};

use crate::error::{Error, Result};
use crate::geom::{covariance, eig_sym3, Vec3};

pub trait Estimator: Send + Sync {
    fn name(&self) -> &str;

    /// Whether `estimate` may run on several threads at once.
    fn concurrency_safe(&self) -> bool {
        true
    }

    fn estimate(&self, canonical_points: &[Vec3]) -> Result<Vec<Vec3>>;
}

/// Smallest-variance direction of the whole patch, copied to every point.
pub fn pca_estimate(canonical_points: &[Vec3]) -> Result<Vec<Vec3>> {
    if canonical_points.len() < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: canonical_points.len() });
    }
    let eig = eig_sym3(&covariance(canonical_points)?)?;
    let n = eig.vectors[0].canonical_sign();
    Ok(vec![n; canonical_points.len()])
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PcaEstimator;

impl Estimator for PcaEstimator {
    fn name(&self) -> &str {
        "pca"
    }

    fn estimate(&self, canonical_points: &[Vec3]) -> Result<Vec<Vec3>> {
        pca_estimate(canonical_points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::build_frame_set;
    use crate::geom::Mat3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pca_on_exact_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..50)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0))
            .collect();
        let out = pca_estimate(&pts).unwrap();
        assert_eq!(out.len(), 50);
        for n in out {
            assert!((n - Vec3::Z).norm() < 1e-12);
        }
    }

    #[test]
    fn pca_in_canonical_frame_is_the_first_axis() {
        // Canonical coordinates put the smallest-variance axis first.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = Mat3::rotation(Vec3::new(0.48, 0.6, 0.64), 1.1);
        let pts: Vec<Vec3> = (0..80)
            .map(|_| q.mul_vec(Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.7..0.7), 0.0)))
            .collect();
        let fs = build_frame_set(&pts).unwrap();
        for f in &fs.frames {
            let out = pca_estimate(&f.to_canonical(&pts)).unwrap();
            assert!((out[0].dot(Vec3::X).abs() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pca_sign_convention() {
        let pts = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 0.0, 1.0),
        ];
        // plane y = 0: z component is zero so y must be positive
        let n = pca_estimate(&pts).unwrap()[0];
        assert!((n - Vec3::Y).norm() < 1e-12);
    }

    #[test]
    fn pca_needs_three_points() {
        assert!(matches!(
            pca_estimate(&[Vec3::ZERO, Vec3::X]),
            Err(Error::TooFewPoints { needed: 3, got: 2 })
        ));
    }
}
