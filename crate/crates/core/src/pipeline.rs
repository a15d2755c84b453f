//! Whole-cloud inference and random-frame training.
//!
//! Inference covers the cloud with patches, frame-averages the estimator on
//! each one, keeps the predictions inside each half patch and merges the
//! overlap with Gaussian centre weights. Training shows the network one
//! random frame of each patch per step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::estimators::{Estimator, NetworkParams};
use crate::frames::{build_frame_set, frame_average, sample_random_frame};
use crate::geom::Vec3;
use crate::nn::{cosine_lr, gaussian_weights, loss_on_tape, loss_weights, AdamW, GaussNorm, LossKind, Tape};
use crate::patches::{Patch, PatchBuilder};

const AGGREGATE_EPS: f64 = 1e-8;

/// Width of the Gaussian centre weights for one patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "rule", content = "sigma")]
pub enum SigmaRule {
    /// Half the centre distance of the farthest half-patch member.
    #[default]
    HalfRadius,
    Fixed(f64),
}

impl SigmaRule {
    /// `None` means every weight is one (a patch with zero half radius).
    pub fn sigma(self, patch: &Patch) -> Option<f64> {
        match self {
            SigmaRule::Fixed(s) => Some(s),
            SigmaRule::HalfRadius => {
                let r = patch.center_distances.get(patch.half_len().checked_sub(1)?)?;
                (*r > 0.0).then_some(r / 2.0)
            }
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            SigmaRule::Fixed(s) if !(s > 0.0 && s.is_finite()) => Err(Error::NonPositiveSigma(s)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub patch_size: usize,
    pub n_frames: usize,
    pub graph_k: usize,
    pub use_geodesic: bool,
    pub use_half_patch: bool,
    pub use_gaussian_agg: bool,
    pub sigma: SigmaRule,
    /// One patch per point, keeping only the centre prediction.
    pub per_point_mode: bool,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            patch_size: 1400,
            n_frames: 8,
            graph_k: 50,
            use_geodesic: true,
            use_half_patch: true,
            use_gaussian_agg: true,
            sigma: SigmaRule::HalfRadius,
            per_point_mode: false,
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 3 {
            return Err(Error::InvalidConfig(format!("patch size {} < 3", self.patch_size)));
        }
        if !(1..=8).contains(&self.n_frames) {
            return Err(Error::InvalidConfig(format!("n_frames {} not in 1..=8", self.n_frames)));
        }
        if self.graph_k == 0 {
            return Err(Error::InvalidConfig("graph_k must be positive".into()));
        }
        self.sigma.validate()
    }

    /// Per-point mode keeps only the centre, so the half-patch filter is moot.
    pub fn half_patch_active(&self) -> bool {
        self.use_half_patch && !self.per_point_mode
    }
}

/// One candidate normal for one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub point: usize,
    pub normal: Vec3,
    pub weight: f64,
    pub patch: usize,
}

/// Weighted mean of sign-aligned candidates; the first candidate fixes the
/// hemisphere.
pub fn aggregate(candidates: &[Prediction]) -> Result<Vec3> {
    let first = candidates.first().ok_or(Error::EmptyInput)?;
    let mut sum = Vec3::ZERO;
    for c in candidates {
        let n = if c.normal.dot(first.normal) < 0.0 { -c.normal } else { c.normal };
        sum += n * c.weight;
    }
    sum.try_normalize(AGGREGATE_EPS)
        .ok_or(Error::DegenerateAggregation { point: first.point })
}

/// [`aggregate`], falling back to the heaviest candidate when the sum cancels.
fn aggregate_or_heaviest(candidates: &[Prediction]) -> Result<Vec3> {
    match aggregate(candidates) {
        Err(Error::DegenerateAggregation { point }) => {
            let best = candidates
                .iter()
                .reduce(|a, b| if b.weight > a.weight { b } else { a })
                .ok_or(Error::EmptyInput)?;
            log::warn!("aggregation cancelled at point {point}, using the heaviest candidate");
            Ok(best.normal)
        }
        other => other,
    }
}

/// Kept predictions of one patch, centre first.
pub fn patch_predictions(
    points: &[Vec3],
    patch: &Patch,
    patch_id: usize,
    estimator: &dyn Estimator,
    cfg: &InferenceConfig,
) -> Result<Vec<Prediction>> {
    let local: Vec<Vec3> = patch.members.iter().map(|&m| points[m]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(patch_id as u64);
    let normals = frame_average(estimator, &local, cfg.n_frames, &mut rng)?;

    let keep = if cfg.per_point_mode {
        1
    } else if cfg.use_half_patch {
        patch.half_len()
    } else {
        patch.len()
    };
    let dists = &patch.center_distances[..keep];
    let weights = if cfg.use_gaussian_agg {
        gaussian_weights(dists, cfg.sigma.sigma(patch).unwrap_or(f64::INFINITY))?
    } else {
        vec![1.0; keep]
    };
    Ok((0..keep)
        .map(|i| Prediction {
            point: patch.members[i],
            normal: normals[i],
            weight: weights[i],
            patch: patch_id,
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct InferenceOutput {
    pub normals: Vec<Vec3>,
    pub patch_count: usize,
    pub geodesic_patches: usize,
}

/// One unit normal per input point.
pub fn infer(points: &[Vec3], estimator: &dyn Estimator, cfg: &InferenceConfig) -> Result<Vec<Vec3>> {
    infer_detailed(points, estimator, cfg).map(|o| o.normals)
}

pub fn infer_detailed(points: &[Vec3], estimator: &dyn Estimator, cfg: &InferenceConfig) -> Result<InferenceOutput> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let builder = PatchBuilder::new(points, cfg.use_geodesic.then_some(cfg.graph_k))?;
    let patches: Vec<Patch> = if cfg.per_point_mode {
        (0..points.len())
            .into_par_iter()
            .map(|i| builder.patch(i, cfg.patch_size))
            .collect()
    } else {
        builder.coverage(cfg.patch_size)
    };
    log::debug!("{} patches over {} points", patches.len(), points.len());

    let run = |(id, p): (usize, &Patch)| patch_predictions(points, p, id, estimator, cfg);
    let per_patch: Vec<Vec<Prediction>> = if estimator.concurrency_safe() {
        patches.par_iter().enumerate().map(run).collect::<Result<_>>()?
    } else {
        patches.iter().enumerate().map(run).collect::<Result<_>>()?
    };

    let mut by_point: Vec<Vec<Prediction>> = vec![Vec::new(); points.len()];
    for pred in per_patch.into_iter().flatten() {
        by_point[pred.point].push(pred);
    }
    let normals = by_point
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            if c.is_empty() {
                return Err(Error::InvalidConfig(format!("point {i} received no prediction")));
            }
            aggregate_or_heaviest(c)
        })
        .collect::<Result<_>>()?;
    Ok(InferenceOutput {
        normals,
        patch_count: patches.len(),
        geodesic_patches: patches.iter().filter(|p| p.is_geodesic).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Patches drawn per epoch; rounded up to whole batches.
    pub patches_per_epoch: usize,
    pub patch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub loss: LossKind,
    pub gauss_norm: GaussNorm,
    pub sigma: SigmaRule,
    /// Train on geodesic instead of Euclidean patches.
    pub geodesic_patches: bool,
    pub graph_k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 128,
            patches_per_epoch: 1024,
            patch_size: 1400,
            lr_max: 2e-3,
            lr_min: 2e-5,
            weight_decay: 0.01,
            loss: LossKind::Gau,
            gauss_norm: GaussNorm::PointCount,
            sigma: SigmaRule::HalfRadius,
            geodesic_patches: false,
            graph_k: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patches_per_epoch == 0 {
            return Err(Error::InvalidConfig("batch size and patches per epoch must be positive".into()));
        }
        if self.patch_size < 3 {
            return Err(Error::InvalidConfig(format!("patch size {} < 3", self.patch_size)));
        }
        if !(self.lr_min > 0.0) || self.lr_max < self.lr_min {
            return Err(Error::InvalidConfig(format!(
                "need lr_max >= lr_min > 0, got {} and {}",
                self.lr_max, self.lr_min
            )));
        }
        if self.geodesic_patches && self.graph_k == 0 {
            return Err(Error::InvalidConfig("graph_k must be positive".into()));
        }
        self.sigma.validate()
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.patches_per_epoch.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f64>,
    /// Mean loss of the first batch before any update.
    pub initial_loss: Option<f64>,
}

struct Example {
    loss: f64,
    grads: Vec<f64>,
}

fn train_example(
    shapes: &[(PointCloud, PatchBuilder)],
    params: &NetworkParams,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Example> {
    let (cloud, builder) = &shapes[rng.gen_range(0..shapes.len())];
    let seed = rng.gen_range(0..cloud.len());
    let patch = builder.patch(seed, cfg.patch_size);
    let pts: Vec<Vec3> = patch.members.iter().map(|&m| cloud.positions[m]).collect();
    let gt = cloud.gt_normals()?;

    let frame = sample_random_frame(&build_frame_set(&pts)?, rng);
    let local = frame.to_canonical(&pts);
    let local_gt: Vec<Vec3> = patch.members.iter().map(|&m| frame.direction_to_canonical(gt[m])).collect();
    let sigma = cfg.sigma.sigma(&patch).unwrap_or(f64::INFINITY);
    let weights = loss_weights(cfg.loss, &patch.center_distances, sigma, cfg.gauss_norm)?;

    let mut tape = Tape::new();
    let (out, leaves) = params.forward_on_tape(&mut tape, &local)?;
    let loss = loss_on_tape(&mut tape, out, &local_gt, &weights)?;
    tape.backward(loss)?;
    Ok(Example { loss: tape.value(loss).item(), grads: params.gather_grads(&tape, &leaves) })
}

/// Random-frame training with AdamW and a cosine schedule.
///
/// Every example draws from its own random stream, so results do not depend
/// on how rayon schedules the batch.
pub fn train(shapes: &[PointCloud], params: NetworkParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if shapes.is_empty() {
        return Err(Error::InvalidConfig("no training shapes".into()));
    }
    let mut prepared = Vec::with_capacity(shapes.len());
    for s in shapes {
        s.gt_normals()?;
        if s.len() < 3 {
            return Err(Error::TooFewPoints { needed: 3, got: s.len() });
        }
        let b = PatchBuilder::new(&s.positions, cfg.geodesic_patches.then_some(cfg.graph_k))?;
        prepared.push((s.clone(), b));
    }

    let mut params = params;
    let mut opt = AdamW::with_decay(params.len(), cfg.weight_decay);
    let steps = cfg.steps_per_epoch();
    let total = (cfg.epochs * steps) as u64;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut initial_loss = None;
    let mut example_id = 0u64;

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for s in 0..steps {
            let ids: Vec<u64> = (example_id..example_id + cfg.batch_size as u64).collect();
            example_id += cfg.batch_size as u64;
            let batch: Vec<Example> = ids
                .par_iter()
                .map(|&id| {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(id);
                    train_example(&prepared, &params, cfg, &mut rng)
                })
                .collect::<Result<_>>()?;

            let scale = 1.0 / batch.len() as f64;
            let mut grads = vec![0.0; params.len()];
            let mut loss = 0.0;
            for ex in &batch {
                loss += ex.loss * scale;
                for (g, e) in grads.iter_mut().zip(&ex.grads) {
                    *g += e * scale;
                }
            }
            initial_loss.get_or_insert(loss);
            epoch_loss += loss;

            let step = (epoch * steps + s) as u64;
            let lr = cosine_lr(step, total, cfg.lr_max, cfg.lr_min)?;
            opt.step(params.flat_mut(), &grads, lr)?;
        }
        let mean = epoch_loss / steps as f64;
        log::info!("epoch {} loss {mean:.6}", epoch + 1);
        history.push(mean);
    }
    Ok(TrainOutcome { params, loss_history: history, initial_loss })
}
