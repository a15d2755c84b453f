//! E(3)-equivariant normal estimation for unoriented point clouds.
//!
//! A patch is canonicalized into each of the eight PCA frames, passed through
//! a per-patch estimator, mapped back and averaged. Patches come from a
//! geodesic proximity graph and overlapping predictions are merged with
//! Gaussian centre weights.

pub mod data;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod frames;
pub mod geom;
pub mod nn;
pub mod patches;
pub mod pipeline;

pub use error::{Error, Result};
pub use geom::{Mat3, SymEig3, Vec3};
pub use data::{PointCloud, SynthSpec};
pub use estimators::{Estimator, JetEstimator, NetworkConfig, NetworkParams, NeuralEstimator, PcaEstimator};
pub use frames::{build_frame_set, frame_average, Frame, FrameSet};
pub use pipeline::{infer, train, InferenceConfig, TrainConfig};
