//! Desk-scale stand-in for the diffusion U-Net.
//!
//! Each layer embeds every stitched token as `[image·(1−mask), noise]`,
//! average-pools to its scale, RMS-normalizes, projects to queries and keys
//! and runs full stitched self-attention. The finest layer's attention also
//! drives the value path: a damaged target token predicts its clean content
//! as the attention-weighted mix of reference image channels.

use alloc::vec;
use alloc::vec::Vec;
use alloc::format;

use crate::attn::{aggregate_layers, extract_tar2ref, rescale_map};
use crate::domain::rng::{derive_seed, SplitMix64};
use crate::domain::{AttentionKind, AttentionMap, AttentionMask, GridShape, LatentTensor};
use crate::error::{Error, Result};
use crate::guide::{downsample_mask, ObjectiveTarget};
use crate::mat::{softmax_in_place, Mat};
use crate::tape::{rms_norm_in_place, NodeId, Tape};
use crate::toydiff::schedule::Schedule;

const NORM_EPS: f64 = 1e-6;
/// Row-standardization guard inside the objective.
pub const STANDARDIZE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ModelConfig {
    /// Query/key embedding width.
    pub d_a: usize,
    /// Pooling factor per layer; the first must be 1.
    pub scales: Vec<usize>,
    /// Multiplier on the query/key projections (attention sharpness).
    pub feature_gain: f64,
    /// Relative perturbation separating key from query projections.
    pub key_jitter: f64,
    /// Relative key perturbation redrawn at every timestep, standing in for
    /// timestep conditioning of the features.
    pub step_jitter: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d_a: 16, scales: vec![1, 2], feature_gain: 2.0, key_jitter: 0.05, step_jitter: 0.7, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub scale: usize,
    /// `c_in × d_a`
    pub w_q: Mat,
    /// `c_in × d_a`
    pub w_k: Mat,
}

#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    cfg: ModelConfig,
    channels: usize,
    layers: Vec<LayerWeights>,
}

/// Everything one denoiser call produces.
#[derive(Debug, Clone)]
pub struct DenoiseOutput {
    pub eps_hat: Mat,
    pub x0_pred: Mat,
    /// Post-softmax stitched attention per layer, on the layer's own grid.
    pub layer_maps: Vec<AttentionMap>,
    /// Per-layer target→reference maps rescaled to the base half grid.
    pub tar2ref: Vec<AttentionMap>,
    /// Target→reference submatrix of the layer-aggregated map.
    pub aggregated_tar2ref: AttentionMap,
    /// Damaged tokens whose reference attention was fully suppressed and fell
    /// back to a uniform reference mix.
    pub fallback_tokens: Vec<usize>,
}

/// Orthonormal rows via Gram–Schmidt on seeded Gaussian rows.
fn orthonormal_rows(rows: usize, cols: usize, rng: &mut SplitMix64) -> Mat {
    let mut m = Mat::from_fn(rows, cols, |_, _| rng.normal());
    for r in 0..rows {
        for p in 0..r {
            let proj: f64 = m.row(r).iter().zip(m.row(p)).map(|(a, b)| a * b).sum();
            let prev = m.row(p).to_vec();
            for (x, y) in m.row_mut(r).iter_mut().zip(prev) {
                *x -= proj * y;
            }
        }
        let norm = libm::sqrt(m.row(r).iter().map(|x| x * x).sum::<f64>());
        m.row_mut(r).iter_mut().for_each(|x| *x /= norm);
    }
    m
}

impl ToyDenoiser {
    /// `channels` is the latent width `d`; token features have `2d` entries.
    pub fn new(cfg: ModelConfig, channels: usize) -> Result<Self> {
        let c_in = 2 * channels;
        if channels == 0 || cfg.d_a < c_in {
            return Err(Error::arg(format!("d_a = {} must be at least 2d = {}", cfg.d_a, c_in)));
        }
        if cfg.scales.first() != Some(&1) || cfg.scales.contains(&0) {
            return Err(Error::arg("layer scales must start at 1 and be positive"));
        }
        if !(cfg.feature_gain > 0.0) {
            return Err(Error::arg("feature_gain must be positive"));
        }
        if !(cfg.key_jitter >= 0.0 && cfg.step_jitter >= 0.0) {
            return Err(Error::arg("jitter magnitudes must be non-negative"));
        }
        let layers = cfg
            .scales
            .iter()
            .enumerate()
            .map(|(l, &scale)| {
                let mut rng = SplitMix64::new(derive_seed(cfg.seed, 0x1000 + l as u64));
                let base = orthonormal_rows(c_in, cfg.d_a, &mut rng);
                let w_q = base.scale(cfg.feature_gain);
                let jitter = cfg.key_jitter / libm::sqrt(cfg.d_a as f64);
                let w_k = base.add(&Mat::from_fn(c_in, cfg.d_a, |_, _| jitter * rng.normal())).scale(cfg.feature_gain);
                LayerWeights { scale, w_q, w_k }
            })
            .collect();
        Ok(Self { cfg, channels, layers })
    }

    /// The denoiser as conditioned on timestep `t`: keys carry an extra
    /// seeded perturbation of relative size `step_jitter`.
    pub fn at_step(&self, t: usize) -> ToyDenoiser {
        let mut model = self.clone();
        if self.cfg.step_jitter == 0.0 {
            return model;
        }
        let jitter = self.cfg.step_jitter / libm::sqrt(self.cfg.d_a as f64) * self.cfg.feature_gain;
        for (l, layer) in model.layers.iter_mut().enumerate() {
            let mut rng = SplitMix64::new(derive_seed(derive_seed(self.cfg.seed, 0x2000 + l as u64), t as u64));
            let noise = Mat::from_fn(layer.w_k.rows(), layer.w_k.cols(), |_, _| jitter * rng.normal());
            layer.w_k.add_assign(&noise);
        }
        model
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn d_a(&self) -> usize {
        self.cfg.d_a
    }

    /// Half-grid shape seen by one layer.
    pub fn layer_shape(&self, shape: GridShape, layer: usize) -> Result<GridShape> {
        let s = self.layers[layer].scale;
        if shape.h % s != 0 || shape.w % s != 0 {
            return Err(Error::arg(format!("grid {}x{} not divisible by layer scale {s}", shape.h, shape.w)));
        }
        GridShape::new(shape.h / s, shape.w / s)
    }

    pub fn check_shape(&self, shape: GridShape) -> Result<()> {
        (0..self.layers.len()).try_for_each(|l| self.layer_shape(shape, l).map(|_| ()))
    }

    /// Per-layer masks derived from one base-grid mask.
    pub fn layer_masks(&self, fine: &AttentionMask) -> Result<Vec<AttentionMask>> {
        self.layers.iter().map(|l| downsample_mask(fine, l.scale)).collect()
    }

    /// `[image·(1−mask), noise]` per stitched token.
    pub fn features(&self, z: &LatentTensor) -> Mat {
        let d = z.channels();
        let (img, noise) = (z.image_latent(), z.noise_latent());
        Mat::from_fn(z.shape().token_count(), 2 * d, |r, c| {
            if c < d {
                if z.is_masked(r) { 0.0 } else { img[(r, c)] }
            } else {
                noise[(r, c - d)]
            }
        })
    }

    fn conditioning(&self, z: &LatentTensor) -> Mat {
        let d = z.channels();
        Mat::from_fn(z.shape().token_count(), d, |r, c| if z.is_masked(r) { 0.0 } else { z.image_latent()[(r, c)] })
    }

    /// Average-pooling operator from the base stitched grid to a layer grid.
    pub fn pool_matrix(shape: GridShape, scale: usize) -> Mat {
        let (fw, cw) = (shape.stitched_width(), shape.stitched_width() / scale);
        let coarse = (shape.h / scale) * cw;
        let inv = 1.0 / (scale * scale) as f64;
        Mat::from_fn(coarse, shape.token_count(), |c, f| {
            let (fi, fj) = (f / fw, f % fw);
            if (fi / scale) * cw + fj / scale == c { inv } else { 0.0 }
        })
    }

    /// Pre-softmax logits `QKᵀ` of one layer on its own stitched grid.
    pub fn layer_logits(&self, z: &LatentTensor, layer: usize) -> Result<AttentionMap> {
        let shape = z.shape();
        let ls = self.layer_shape(shape, layer)?;
        let lw = &self.layers[layer];
        let mut f = self.features(z);
        if lw.scale > 1 {
            f = Self::pool_matrix(shape, lw.scale).matmul(&f);
        }
        for r in 0..f.rows() {
            rms_norm_in_place(f.row_mut(r), NORM_EPS);
        }
        let q = f.matmul(&lw.w_q);
        let k = f.matmul(&lw.w_k);
        AttentionMap::new(ls.stitched(), ls.stitched(), AttentionKind::Logits, q.matmul_t(&k))
    }

    /// Post-softmax attention per layer, optionally masked.
    pub fn layer_attention(&self, z: &LatentTensor, masks: Option<&[AttentionMask]>) -> Result<Vec<AttentionMap>> {
        (0..self.layers.len())
            .map(|l| {
                let logits = self.layer_logits(z, l)?;
                match masks {
                    Some(ms) => crate::guide::apply_mask(&logits, &ms[l], self.cfg.d_a),
                    None => Ok(plain_softmax(&logits, self.cfg.d_a)),
                }
            })
            .collect()
    }

    /// One denoiser call at step `t` (`1 ≤ t ≤ T`).
    pub fn forward(&self, z: &LatentTensor, t: usize, schedule: &Schedule, masks: Option<&[AttentionMask]>) -> Result<DenoiseOutput> {
        let shape = z.shape();
        if t == 0 || t > schedule.steps() {
            return Err(Error::arg("denoising step out of schedule range"));
        }
        if let Some(ms) = masks {
            if ms.len() != self.layers.len() {
                return Err(Error::arg("need one mask per layer"));
            }
        }
        let layer_maps = self.layer_attention(z, masks)?;
        let rescaled = layer_maps
            .iter()
            .map(|m| rescale_map(m, shape.stitched(), shape.stitched()))
            .collect::<Result<Vec<_>>>()?;
        let tar2ref = rescaled.iter().map(|m| extract_tar2ref(m, shape)).collect::<Result<Vec<_>>>()?;
        let aggregated_tar2ref = extract_tar2ref(&aggregate_layers(&rescaled)?, shape)?;

        let (x0_pred, fallback_tokens) = self.predict_x0(z, &layer_maps[0]);
        if !x0_pred.all_finite() {
            return Err(Error::Numeric { step: Some(t), detail: "non-finite x0 prediction".into() });
        }
        let eps_hat = schedule.eps_from_x0(z.noise_latent(), &x0_pred, t);
        Ok(DenoiseOutput { eps_hat, x0_pred, layer_maps, tar2ref, aggregated_tar2ref, fallback_tokens })
    }

    /// Value path: undamaged tokens keep their image channels; damaged tokens
    /// mix reference image channels by their renormalized reference attention.
    pub fn predict_x0(&self, z: &LatentTensor, base_attention: &AttentionMap) -> (Mat, Vec<usize>) {
        let shape = z.shape();
        let refs = shape.reference_indices();
        let img = z.image_latent();
        let d = z.channels();
        let mut x0 = img.clone();
        let mut fallback = Vec::new();
        for k in 0..shape.token_count() {
            if !z.is_masked(k) {
                continue;
            }
            let row = base_attention.scores.row(k);
            let mass: f64 = refs.iter().map(|&r| row[r]).sum();
            let out = x0.row_mut(k);
            out.fill(0.0);
            if mass > 0.0 {
                for &r in &refs {
                    let w = row[r] / mass;
                    if w != 0.0 {
                        for c in 0..d {
                            out[c] += w * img[(r, c)];
                        }
                    }
                }
            } else {
                fallback.push(k);
                let w = 1.0 / refs.len() as f64;
                for &r in &refs {
                    for c in 0..d {
                        out[c] += w * img[(r, c)];
                    }
                }
            }
        }
        (x0, fallback)
    }

    /// Records the per-layer objective on `tape` for a differentiable noise
    /// latent `noise`; returns one scalar node per requested layer.
    pub fn objective_on_tape(
        &self,
        tape: &mut Tape,
        noise: NodeId,
        z: &LatentTensor,
        masks: &[AttentionMask],
        target: &ObjectiveTarget,
        layers: &[usize],
    ) -> Result<Vec<NodeId>> {
        let shape = z.shape();
        let cond = tape.constant(self.conditioning(z));
        let features = tape.concat_cols(cond, noise);
        let mut out = Vec::with_capacity(layers.len());
        for &l in layers {
            let lw = &self.layers[l];
            let ls = self.layer_shape(shape, l)?;
            let mut f = features;
            if lw.scale > 1 {
                let pool = tape.constant(Self::pool_matrix(shape, lw.scale));
                f = tape.matmul(pool, f);
            }
            let f = tape.rms_norm_rows(f, NORM_EPS);
            let wq = tape.constant(lw.w_q.clone());
            let wk = tape.constant(lw.w_k.clone());
            let q = tape.matmul(f, wq);
            let k = tape.matmul(f, wk);
            let logits = tape.matmul_t(q, k);
            let mask = tape.constant(masks[l].values.clone());
            let masked = tape.add(logits, mask);
            let scaled = tape.scale(masked, 1.0 / libm::sqrt(self.cfg.d_a as f64));
            let attn = tape.row_softmax(scaled);
            let mut sub = tape.select(attn, &ls.target_indices(), &ls.reference_indices());
            if lw.scale > 1 {
                let (rq, rk) = upsample_operators(shape, lw.scale);
                let rq = tape.constant(rq);
                let rk = tape.constant(rk);
                let up = tape.matmul(rq, sub);
                sub = tape.matmul_t(up, rk);
            }
            let normed = tape.row_standardize(sub, STANDARDIZE_EPS);
            out.push(tape.bce_with_logits(normed, target.one_hot.clone(), target.pos_weight.clone(), target.row_weight.clone()));
        }
        Ok(out)
    }
}

/// Half-grid query replication (`hw × h_c w_c`) and key splitting operator
/// such that `R_q · A · R_kᵀ` equals [`rescale_map`] on a tar2ref block.
fn upsample_operators(shape: GridShape, scale: usize) -> (Mat, Mat) {
    let cw = shape.w / scale;
    let n = shape.half_len();
    let nc = (shape.h / scale) * cw;
    let covering = |f: usize| ((f / shape.w) / scale) * cw + (f % shape.w) / scale;
    let rq = Mat::from_fn(n, nc, |f, c| if covering(f) == c { 1.0 } else { 0.0 });
    let split = 1.0 / (scale * scale) as f64;
    let rk = Mat::from_fn(n, nc, |f, c| if covering(f) == c { split } else { 0.0 });
    (rq, rk)
}

fn plain_softmax(logits: &AttentionMap, d_a: usize) -> AttentionMap {
    let inv = 1.0 / libm::sqrt(d_a as f64);
    let mut s = logits.scores.scale(inv);
    for r in 0..s.rows() {
        softmax_in_place(s.row_mut(r));
    }
    AttentionMap::new_unchecked(logits.query, logits.key, AttentionKind::Softmax, s)
}
