//! A small trainable point network: shared per-point MLP, max-pooled global
//! feature, and a per-point decoder over `[local | global]`.
//!
//! Parameters live in one flat vector, laid out layer by layer (weights as
//! `in x out` row-major, then bias). The same layout is used on disk after a
//! short header:
//!
//! ```text
//! "E3NP" | version u32 | n_enc u32 | enc widths u32.. | n_dec u32 | dec widths u32.. | f64 params..
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Estimator;
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::nn::tape::NORMALIZE_FALLBACK;
use crate::nn::{Tape, Tensor, Var};

pub const PARAMS_MAGIC: &[u8; 4] = b"E3NP";
pub const PARAMS_VERSION: u32 = 1;
const NORMALIZE_EPS: f64 = 1e-12;

/// Layer widths. `encoder` starts at 3 (xyz); its last width is the fused
/// feature size. `decoder` starts at twice that and ends at 3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::with_fused_dim(128)
    }
}

impl NetworkConfig {
    pub fn with_fused_dim(fused: usize) -> Self {
        Self {
            encoder: vec![3, 64, fused],
            decoder: vec![2 * fused, 128, 64, 3],
        }
    }

    pub fn fused_dim(&self) -> usize {
        *self.encoder.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ShapeMismatch(format!("network config: {m}")));
        if self.encoder.len() < 2 || self.decoder.len() < 2 {
            return bad("encoder and decoder need at least one layer each");
        }
        if self.encoder[0] != 3 {
            return bad("encoder input must be 3");
        }
        if self.decoder[0] != 2 * self.fused_dim() {
            return bad("decoder input must be twice the fused width");
        }
        if *self.decoder.last().unwrap() != 3 {
            return bad("decoder output must be 3");
        }
        if self.encoder.iter().chain(&self.decoder).any(|&w| w == 0) {
            return bad("zero width");
        }
        Ok(())
    }

    /// `(in, out)` for every layer, encoder first.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        self.encoder
            .windows(2)
            .chain(self.decoder.windows(2))
            .map(|w| (w[0], w[1]))
            .collect()
    }

    pub fn encoder_layers(&self) -> usize {
        self.encoder.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    config: NetworkConfig,
    flat: Vec<f64>,
}

impl NetworkParams {
    /// He-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut flat = Vec::with_capacity(config.param_count());
        for (fan_in, out) in config.layers() {
            let bound = (6.0 / fan_in as f64).sqrt();
            flat.extend((0..fan_in * out).map(|_| rng.gen_range(-bound..bound)));
            flat.extend(std::iter::repeat_n(0.0, out));
        }
        Ok(Self { config, flat })
    }

    pub fn from_flat(config: NetworkConfig, flat: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if flat.len() != config.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for a network that needs {}",
                flat.len(),
                config.param_count()
            )));
        }
        Ok(Self { config, flat })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Zero the weights and bias of the output layer.
    pub fn zero_output_layer(&mut self) {
        let (i, o) = *self.config.layers().last().unwrap();
        let n = self.flat.len();
        self.flat[n - (i * o + o)..].fill(0.0);
    }

    fn layer_tensors(&self) -> Vec<(Tensor, Tensor)> {
        let mut off = 0;
        self.config
            .layers()
            .into_iter()
            .map(|(i, o)| {
                let w = Tensor::from_vec(i, o, self.flat[off..off + i * o].to_vec()).expect("shape");
                off += i * o;
                let b = Tensor::from_vec(1, o, self.flat[off..off + o].to_vec()).expect("shape");
                off += o;
                (w, b)
            })
            .collect()
    }

    fn check(&self) -> Result<()> {
        if self.flat.len() != self.config.param_count() {
            return Err(Error::ShapeMismatch("parameter vector does not match config".into()));
        }
        Ok(())
    }

    /// Raw `n x 3` decoder output before normalization.
    pub fn forward_raw(&self, points: &[Vec3]) -> Result<Tensor> {
        self.check()?;
        if points.is_empty() {
            return Err(Error::TooFewPoints { needed: 1, got: 0 });
        }
        let layers = self.layer_tensors();
        let n_enc = self.config.encoder_layers();
        let rows: Vec<[f64; 3]> = points.iter().map(|p| p.to_array()).collect();
        let mut h = Tensor::from_rows3(&rows);
        for (w, b) in &layers[..n_enc] {
            h = affine(&h, w, b).map(|v| v.max(0.0));
        }
        let global = max_rows(&h);
        let cols = h.cols() + global.cols();
        let mut data = Vec::with_capacity(h.rows() * cols);
        for r in 0..h.rows() {
            data.extend_from_slice(h.row(r));
            data.extend_from_slice(global.data());
        }
        let mut z = Tensor::from_vec(h.rows(), cols, data)?;
        let dec = &layers[n_enc..];
        for (k, (w, b)) in dec.iter().enumerate() {
            z = affine(&z, w, b);
            if k + 1 < dec.len() {
                z = z.map(|v| v.max(0.0));
            }
        }
        Ok(z)
    }

    pub fn forward(&self, points: &[Vec3]) -> Result<Vec<Vec3>> {
        let raw = self.forward_raw(points)?;
        Ok((0..raw.rows())
            .map(|r| {
                let v = Vec3::new(raw.get(r, 0), raw.get(r, 1), raw.get(r, 2));
                v.try_normalize(NORMALIZE_EPS)
                    .unwrap_or(Vec3::from_array(NORMALIZE_FALLBACK))
            })
            .collect())
    }

    /// Records the forward pass on `tape`. Returns the normalized `n x 3`
    /// output node and one leaf per weight/bias, in flat-layout order.
    pub fn forward_on_tape(&self, tape: &mut Tape, points: &[Vec3]) -> Result<(Var, Vec<Var>)> {
        self.check()?;
        if points.is_empty() {
            return Err(Error::TooFewPoints { needed: 1, got: 0 });
        }
        let mut leaves = Vec::new();
        let rows: Vec<[f64; 3]> = points.iter().map(|p| p.to_array()).collect();
        let mut h = tape.leaf(Tensor::from_rows3(&rows));
        let n_enc = self.config.encoder_layers();
        let layers = self.layer_tensors();
        let n_layers = layers.len();
        for (k, (w, b)) in layers.into_iter().enumerate() {
            let w = tape.leaf(w);
            let b = tape.leaf(b);
            leaves.push(w);
            leaves.push(b);
            if k == n_enc {
                let g = tape.max_rows(h)?;
                h = tape.concat_broadcast(h, g)?;
            }
            let a = tape.matmul(h, w)?;
            h = tape.add_row(a, b)?;
            if k + 1 < n_layers {
                h = tape.relu(h);
            }
        }
        let out = tape.normalize_rows(h, NORMALIZE_EPS)?;
        Ok((out, leaves))
    }

    /// Gradients of the leaves from [`forward_on_tape`](Self::forward_on_tape)
    /// gathered into the flat layout.
    pub fn gather_grads(&self, tape: &Tape, leaves: &[Var]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat.len());
        for &v in leaves {
            match tape.grad(v) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, tape.value(v).data().len())),
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 8 * self.flat.len());
        buf.extend_from_slice(PARAMS_MAGIC);
        buf.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
        for widths in [&self.config.encoder, &self.config.decoder] {
            buf.extend_from_slice(&(widths.len() as u32).to_le_bytes());
            for &w in widths {
                buf.extend_from_slice(&(w as u32).to_le_bytes());
            }
        }
        for v in &self.flat {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::BadParams("truncated file".into()));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4)? != PARAMS_MAGIC {
            return Err(Error::BadParams("bad magic".into()));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let version = u32_at(take(4)?);
        if version != PARAMS_VERSION {
            return Err(Error::BadParams(format!("unsupported version {version}")));
        }
        let mut widths = Vec::with_capacity(2);
        for _ in 0..2 {
            let n = u32_at(take(4)?) as usize;
            if n > 64 {
                return Err(Error::BadParams(format!("implausible layer count {n}")));
            }
            let mut w = Vec::with_capacity(n);
            for _ in 0..n {
                w.push(u32_at(take(4)?) as usize);
            }
            widths.push(w);
        }
        let decoder = widths.pop().unwrap();
        let encoder = widths.pop().unwrap();
        let config = NetworkConfig { encoder, decoder };
        config.validate().map_err(|e| Error::BadParams(e.to_string()))?;
        let expected = config.param_count();
        let body = take(expected * 8)?;
        if !cur.is_empty() {
            return Err(Error::BadParams(format!("{} trailing bytes", cur.len())));
        }
        let flat = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_flat(config, flat)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        write_atomic(path, |w| w.write_all(&bytes))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let mut y = x.matmul(w);
    let c = y.cols();
    for (i, v) in y.data_mut().iter_mut().enumerate() {
        *v += b.data()[i % c];
    }
    y
}

fn max_rows(x: &Tensor) -> Tensor {
    let mut out = Tensor::from_vec(1, x.cols(), x.row(0).to_vec()).expect("shape");
    for r in 1..x.rows() {
        for (o, &v) in out.data_mut().iter_mut().zip(x.row(r)) {
            if v > *o {
                *o = v;
            }
        }
    }
    out
}

pub fn neural_estimate(canonical_points: &[Vec3], params: &NetworkParams) -> Result<Vec<Vec3>> {
    params.forward(canonical_points)
}

#[derive(Debug, Clone)]
pub struct NeuralEstimator {
    pub params: NetworkParams,
}

impl NeuralEstimator {
    pub fn new(params: NetworkParams) -> Self {
        Self { params }
    }
}

impl Estimator for NeuralEstimator {
    fn name(&self) -> &str {
        "neural"
    }

    fn estimate(&self, canonical_points: &[Vec3]) -> Result<Vec<Vec3>> {
        neural_estimate(canonical_points, &self.params)
    }
}
