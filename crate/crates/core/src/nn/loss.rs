//! Unoriented normal losses.
//!
//! Every variant reduces to `total = (1/N) Σ w_i (reg_i + sin_i)` with a
//! per-variant weight vector, so the scalar and taped versions share one
//! weighting routine.

use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::geom::Vec3;

/// `min(|p - g|², |p + g|²)`
pub fn loss_reg(pred: Vec3, gt: Vec3) -> f64 {
    (pred - gt).norm_squared().min((pred + gt).norm_squared())
}

/// `|p × g|`
pub fn loss_sin(pred: Vec3, gt: Vec3) -> f64 {
    pred.cross(gt).norm()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// `reg_i + sin_i` for each point.
    pub per_point: Vec<f64>,
    /// Effective weights: `total == (1/N) Σ weights_i · per_point_i`.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Unweighted mean over the patch.
    Val,
    /// Gaussian center-distance weighting.
    #[default]
    Gau,
    /// Unweighted mean over the nearest half of the patch.
    Half,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val" => Ok(LossKind::Val),
            "gau" => Ok(LossKind::Gau),
            "half" => Ok(LossKind::Half),
            _ => Err(Error::InvalidConfig(format!("unknown loss '{s}'"))),
        }
    }
}

/// How the Gaussian-weighted sum is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GaussNorm {
    /// Divide by the point count.
    #[default]
    PointCount,
    /// Divide by the weight sum.
    WeightSum,
}

/// `w_i = exp(-d_i² / 2σ²)`
pub fn gaussian_weights(center_distances: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma(sigma));
    }
    let denom = 2.0 * sigma * sigma;
    Ok(center_distances.iter().map(|d| (-d * d / denom).exp()).collect())
}

/// Mask of the `ceil(N/2)` points closest to the center; ties go to the lower index.
pub fn nearest_half(center_distances: &[f64]) -> Vec<bool> {
    let n = center_distances.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| center_distances[a].total_cmp(&center_distances[b]));
    let mut mask = vec![false; n];
    for &i in &order[..n.div_ceil(2)] {
        mask[i] = true;
    }
    mask
}

/// Per-variant effective weights for [`LossBreakdown`].
pub fn loss_weights(
    kind: LossKind,
    center_distances: &[f64],
    sigma: f64,
    norm: GaussNorm,
) -> Result<Vec<f64>> {
    let n = center_distances.len();
    match kind {
        LossKind::Val => Ok(vec![1.0; n]),
        LossKind::Gau => {
            let w = gaussian_weights(center_distances, sigma)?;
            Ok(match norm {
                GaussNorm::PointCount => w,
                GaussNorm::WeightSum => {
                    let s: f64 = w.iter().sum();
                    w.iter().map(|v| v * n as f64 / s).collect()
                }
            })
        }
        LossKind::Half => {
            let keep = n.div_ceil(2);
            let scale = n as f64 / keep as f64;
            Ok(nearest_half(center_distances)
                .into_iter()
                .map(|m| if m { scale } else { 0.0 })
                .collect())
        }
    }
}

fn weighted(preds: &[Vec3], gts: &[Vec3], weights: Vec<f64>) -> Result<LossBreakdown> {
    Error::check_len(preds.len(), gts.len())?;
    Error::check_len(preds.len(), weights.len())?;
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let per_point: Vec<f64> = preds
        .iter()
        .zip(gts)
        .map(|(&p, &g)| loss_reg(p, g) + loss_sin(p, g))
        .collect();
    let total = per_point.iter().zip(&weights).map(|(l, w)| l * w).sum::<f64>() / preds.len() as f64;
    Ok(LossBreakdown { total, per_point, weights })
}

pub fn loss_val(preds: &[Vec3], gts: &[Vec3]) -> Result<LossBreakdown> {
    weighted(preds, gts, vec![1.0; preds.len()])
}

pub fn loss_gau(preds: &[Vec3], gts: &[Vec3], center_distances: &[f64], sigma: f64) -> Result<LossBreakdown> {
    loss_gau_with(preds, gts, center_distances, sigma, GaussNorm::PointCount)
}

pub fn loss_gau_with(
    preds: &[Vec3],
    gts: &[Vec3],
    center_distances: &[f64],
    sigma: f64,
    norm: GaussNorm,
) -> Result<LossBreakdown> {
    Error::check_len(preds.len(), center_distances.len())?;
    weighted(preds, gts, loss_weights(LossKind::Gau, center_distances, sigma, norm)?)
}

pub fn loss_half(preds: &[Vec3], gts: &[Vec3], center_distances: &[f64]) -> Result<LossBreakdown> {
    Error::check_len(preds.len(), center_distances.len())?;
    weighted(preds, gts, loss_weights(LossKind::Half, center_distances, 1.0, GaussNorm::PointCount)?)
}

/// Taped `(1/N) Σ w_i (reg_i + sin_i)` for an `N x 3` prediction node.
pub fn loss_on_tape(tape: &mut Tape, pred: Var, gts: &[Vec3], weights: &[f64]) -> Result<Var> {
    let n = tape.value(pred).rows();
    Error::check_len(n, gts.len())?;
    Error::check_len(n, weights.len())?;
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let gt_rows: Vec<[f64; 3]> = gts.iter().map(|g| g.to_array()).collect();
    let gt = tape.leaf(Tensor::from_rows3(&gt_rows));
    let w = tape.leaf(Tensor::column(weights));

    let minus = tape.sub(pred, gt)?;
    let minus = tape.square(minus);
    let minus = tape.sum_cols(minus);
    let plus = tape.add(pred, gt)?;
    let plus = tape.square(plus);
    let plus = tape.sum_cols(plus);
    let reg = tape.min(minus, plus)?;

    let c = tape.cross_rows(pred, gt)?;
    let c = tape.square(c);
    let c = tape.sum_cols(c);
    let sin = tape.sqrt(c);

    let per = tape.add(reg, sin)?;
    let per = tape.mul(per, w)?;
    let total = tape.sum(per);
    Ok(tape.scale(total, 1.0 / n as f64))
}
