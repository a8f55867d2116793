//! Turning a correspondence field into guidance: additive attention masks
//! and the weighted-BCE attention objective with its latent gradient.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{
    neighborhood, AttentionKind, AttentionMap, AttentionMask, Correspondence, CorrespondenceField,
    GridShape, GuidanceConfig, Half, LatentTensor, NEG_INF,
};
use crate::error::{Error, Result};
use crate::mat::{softmax_in_place, Mat};
use crate::tape::{standardize_in_place, weighted_bce_with_logits, Tape};
use crate::toydiff::model::{ToyDenoiser, STANDARDIZE_EPS};

/// Loss breakdown of one objective evaluation.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectiveReport {
    pub per_layer_loss: Vec<f64>,
    pub total_loss: f64,
    pub grad_norm: f64,
}

/// Builds the base-grid mask for every target token.
pub fn build_attention_mask(p: &CorrespondenceField, cfg: &GuidanceConfig, shape: GridShape) -> Result<AttentionMask> {
    build_attention_mask_for(p, cfg, shape, None)
}

/// Like [`build_attention_mask`]; when `guided` is given (per target half
/// index) only those target queries receive non-zero rows.
pub fn build_attention_mask_for(
    p: &CorrespondenceField,
    cfg: &GuidanceConfig,
    shape: GridShape,
    guided: Option<&[bool]>,
) -> Result<AttentionMask> {
    if p.shape != shape {
        return Err(Error::arg("field shape does not match mask shape"));
    }
    if !(cfg.str_a > 0.0) {
        return Err(Error::arg("str_a must be positive"));
    }
    let mut mask = AttentionMask::zeros(shape);
    let refs = shape.reference_indices();
    for (k, entry) in p.entries.iter().enumerate() {
        if guided.is_some_and(|g| !g[k]) {
            continue;
        }
        let q = shape.stitched_index(shape.half_coord(k), Half::Target);
        let row = mask.values.row_mut(q);
        match *entry {
            Correspondence::Inlier(c) => {
                for &r in &refs {
                    row[r] = NEG_INF;
                }
                for nb in neighborhood(c, cfg.win_a, shape) {
                    row[shape.stitched_index(nb, Half::Reference)] = cfg.str_a;
                }
            }
            Correspondence::Outlier(c) => {
                for nb in neighborhood(c, cfg.win_a, shape) {
                    row[shape.stitched_index(nb, Half::Reference)] = NEG_INF;
                }
            }
            Correspondence::Unmatched => {}
        }
    }
    Ok(mask)
}

/// Converts a base-grid mask to a grid pooled by `scale`. A coarse entry is
/// the boost if any covered fine entry is boosted, `NEG_INF` only if every
/// covered entry is suppressed, and 0 otherwise.
pub fn downsample_mask(mask: &AttentionMask, scale: usize) -> Result<AttentionMask> {
    if scale == 1 {
        return Ok(mask.clone());
    }
    let shape = mask.shape;
    if scale == 0 || shape.h % scale != 0 || shape.w % scale != 0 {
        return Err(Error::arg("mask grid not divisible by scale"));
    }
    let coarse = GridShape::new(shape.h / scale, shape.w / scale)?;
    let (fw, cw) = (shape.stitched_width(), coarse.stitched_width());
    let block = |c: usize| -> Vec<usize> {
        let (ci, cj) = (c / cw, c % cw);
        let mut v = Vec::with_capacity(scale * scale);
        for a in 0..scale {
            for b in 0..scale {
                v.push((ci * scale + a) * fw + cj * scale + b);
            }
        }
        v
    };
    let blocks: Vec<Vec<usize>> = (0..coarse.token_count()).map(block).collect();
    let n = coarse.token_count();
    let mut out = Mat::zeros(n, n);
    for cq in 0..n {
        for ck in 0..n {
            let (mut boost, mut all_neg) = (0.0_f64, true);
            for &fq in &blocks[cq] {
                let row = mask.values.row(fq);
                for &fk in &blocks[ck] {
                    let v = row[fk];
                    if v > 0.0 {
                        boost = boost.max(v);
                    }
                    if v != NEG_INF {
                        all_neg = false;
                    }
                }
            }
            out[(cq, ck)] = if boost > 0.0 {
                boost
            } else if all_neg {
                NEG_INF
            } else {
                0.0
            };
        }
    }
    Ok(AttentionMask { shape: coarse, values: out })
}

/// Row softmax of `(logits + m) / √d_a`.
pub fn apply_mask(logits: &AttentionMap, m: &AttentionMask, d_a: usize) -> Result<AttentionMap> {
    if logits.kind != AttentionKind::Logits {
        return Err(Error::arg("apply_mask expects logits"));
    }
    if logits.scores.shape() != m.values.shape() || logits.query != m.shape.stitched() {
        return Err(Error::arg("mask does not match attention logits"));
    }
    if d_a == 0 {
        return Err(Error::arg("embedding dimension must be positive"));
    }
    let inv = 1.0 / libm::sqrt(d_a as f64);
    let mut s = logits.scores.add(&m.values).scale(inv);
    for r in 0..s.rows() {
        softmax_in_place(s.row_mut(r));
    }
    Ok(AttentionMap::new_unchecked(logits.query, logits.key, AttentionKind::Softmax, s))
}

/// One-hot target rows for inliers; zero rows elsewhere.
pub fn one_hot_target(p: &CorrespondenceField) -> Mat {
    let n = p.shape.half_len();
    let mut e = Mat::zeros(n, n);
    for (k, entry) in p.entries.iter().enumerate() {
        if let Correspondence::Inlier(c) = entry {
            e[(k, p.shape.half_index(*c))] = 1.0;
        }
    }
    e
}

/// One-hot targets plus the per-row weights of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveTarget {
    pub one_hot: Mat,
    /// Positive-class weight per row (`#neg / #pos`).
    pub pos_weight: Vec<f64>,
    /// `1 / (included rows · hw)` on included inlier rows, 0 elsewhere.
    pub row_weight: Vec<f64>,
}

impl ObjectiveTarget {
    pub fn new(p: &CorrespondenceField, guided: Option<&[bool]>) -> Self {
        let n = p.shape.half_len();
        let include: Vec<bool> = p
            .entries
            .iter()
            .enumerate()
            .map(|(k, e)| matches!(e, Correspondence::Inlier(_)) && guided.is_none_or(|g| g[k]))
            .collect();
        let mut one_hot = one_hot_target(p);
        for (k, inc) in include.iter().enumerate() {
            if !inc {
                one_hot.row_mut(k).fill(0.0);
            }
        }
        let rows = include.iter().filter(|&&b| b).count();
        let w = if rows == 0 { 0.0 } else { 1.0 / (rows * n) as f64 };
        let row_weight = include.iter().map(|&b| if b { w } else { 0.0 }).collect();
        Self { one_hot, pos_weight: vec![(n - 1) as f64; n], row_weight }
    }

    pub fn is_empty(&self) -> bool {
        self.row_weight.iter().all(|&w| w == 0.0)
    }
}

/// Weighted BCE between `sigmoid(standardize_rows(a))` and the one-hot
/// correspondence target, averaged over entries of inlier rows.
pub fn objective_s(a: &AttentionMap, p: &CorrespondenceField) -> Result<f64> {
    objective_with_target(a, &ObjectiveTarget::new(p, None))
}

pub fn objective_with_target(a: &AttentionMap, target: &ObjectiveTarget) -> Result<f64> {
    if a.scores.shape() != target.one_hot.shape() {
        return Err(Error::arg("attention map does not match the correspondence grid"));
    }
    let mut x = a.scores.clone();
    for r in 0..x.rows() {
        standardize_in_place(x.row_mut(r), STANDARDIZE_EPS);
    }
    Ok(weighted_bce_with_logits(&x, &target.one_hot, &target.pos_weight, &target.row_weight))
}

/// How per-layer gradients are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradMode {
    /// One tape, summed objective, one backward sweep.
    #[default]
    Joint,
    /// One tape per layer, gradients added afterwards (lower peak memory).
    Accumulate,
}

/// `∂(Σ_l S_l) / ∂noise_latent` through the denoiser's attention stack.
pub fn grad_latent(
    model: &ToyDenoiser,
    z: &LatentTensor,
    masks: &[AttentionMask],
    target: &ObjectiveTarget,
    mode: GradMode,
) -> Result<(Mat, ObjectiveReport)> {
    let n_layers = model.layers().len();
    if masks.len() != n_layers {
        return Err(Error::arg("need one mask per layer"));
    }
    let mut grad = Mat::zeros(z.noise_latent().rows(), z.noise_latent().cols());
    let mut per_layer_loss = Vec::with_capacity(n_layers);
    let groups: Vec<Vec<usize>> = match mode {
        GradMode::Joint => vec![(0..n_layers).collect()],
        GradMode::Accumulate => (0..n_layers).map(|l| vec![l]).collect(),
    };
    for layers in groups {
        let mut tape = Tape::new();
        let x = tape.var(z.noise_latent().clone());
        let losses = model.objective_on_tape(&mut tape, x, z, masks, target, &layers)?;
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = tape.add(total, l);
        }
        for (&l, &node) in layers.iter().zip(&losses) {
            let v = tape.value(node)[(0, 0)];
            if !v.is_finite() {
                return Err(Error::Numeric { step: None, detail: format!("non-finite objective in layer {l}") });
            }
            per_layer_loss.push(v);
        }
        let mut grads = tape.backward(total);
        let g = grads.take(x).unwrap_or_else(|| Mat::zeros(grad.rows(), grad.cols()));
        if !g.all_finite() {
            return Err(Error::Numeric { step: None, detail: format!("non-finite gradient from layers {layers:?}") });
        }
        grad.add_assign(&g);
    }
    let total_loss = per_layer_loss.iter().sum();
    let grad_norm = libm::sqrt(grad.as_slice().iter().map(|g| g * g).sum());
    Ok((grad, ObjectiveReport { per_layer_loss, total_loss, grad_norm }))
}

/// Plain gradient-descent step on the noise channels.
pub fn optimize_latent(z: &LatentTensor, grad: &Mat, cfg: &GuidanceConfig) -> Result<LatentTensor> {
    if grad.shape() != z.noise_latent().shape() {
        return Err(Error::arg("gradient shape does not match the noise latent"));
    }
    if cfg.str_o == 0.0 {
        return Ok(z.clone());
    }
    let mut next = z.noise_latent().clone();
    for (x, g) in next.as_mut_slice().iter_mut().zip(grad.as_slice()) {
        *x -= cfg.str_o * g;
    }
    z.with_noise_latent(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TokenCoord;

    fn g2() -> GridShape {
        GridShape::new(2, 2).unwrap()
    }

    fn cfg(win_a: usize, v: f64) -> GuidanceConfig {
        GuidanceConfig { win_a, str_a: v, ..GuidanceConfig::default() }
    }

    #[test]
    fn inlier_row_layout() {
        let shape = g2();
        let mut coords = vec![None; 4];
        coords[0] = Some(TokenCoord::new(0, 0));
        let p = CorrespondenceField::from_coords(shape, &coords).unwrap();
        let m = build_attention_mask(&p, &cfg(0, 1.0), shape).unwrap();
        // target (0,0) = stitched row 2; stitched order per row: ref0 ref1 tar0 tar1
        let row = m.values.row(2);
        let refs = [row[0], row[1], row[4], row[5]];
        assert_eq!(refs, [1.0, NEG_INF, NEG_INF, NEG_INF]);
        assert_eq!([row[2], row[3], row[6], row[7]], [0.0; 4]);
        for r in [0, 1, 3, 4, 5, 6, 7] {
            assert!(m.values.row(r).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn outlier_row_layout() {
        let shape = g2();
        let mut entries = vec![Correspondence::Unmatched; 4];
        entries[0] = Correspondence::Outlier(TokenCoord::new(1, 1));
        let p = CorrespondenceField::from_entries(shape, entries, vec![0.0; 4]).unwrap();
        let m = build_attention_mask(&p, &cfg(0, 1.0), shape).unwrap();
        let row = m.values.row(2);
        assert_eq!([row[0], row[1], row[4], row[5]], [0.0, 0.0, 0.0, NEG_INF]);
    }

    #[test]
    fn all_unmatched_gives_zero_mask() {
        let p = CorrespondenceField::unmatched(g2());
        assert!(build_attention_mask(&p, &cfg(1, 1.0), g2()).unwrap().is_zero());
        assert_eq!(one_hot_target(&p), Mat::zeros(4, 4));
        let a = AttentionMap::new(g2().half(), g2().half(), AttentionKind::Scores, Mat::filled(4, 4, 0.2)).unwrap();
        assert_eq!(objective_s(&a, &p).unwrap(), 0.0);
    }

    #[test]
    fn one_hot_example() {
        let mut coords = vec![None; 4];
        coords[0] = Some(TokenCoord::new(1, 1));
        let p = CorrespondenceField::from_coords(g2(), &coords).unwrap();
        let e = one_hot_target(&p);
        assert_eq!(e.row(0), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(e.row_sums(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn apply_mask_suppresses_and_boosts() {
        let shape = g2();
        let n = shape.token_count();
        let logits = AttentionMap::new(shape.stitched(), shape.stitched(), AttentionKind::Logits, Mat::zeros(n, n)).unwrap();
        let plain = apply_mask(&logits, &AttentionMask::zeros(shape), 16).unwrap();
        assert!((plain.scores[(0, 0)] - 1.0 / n as f64).abs() < 1e-15);
        let mut m = AttentionMask::zeros(shape);
        m.values[(2, 0)] = 1.0;
        m.values[(2, 1)] = NEG_INF;
        let masked = apply_mask(&logits, &m, 16).unwrap();
        assert!(masked.scores[(2, 1)] < 1e-6);
        assert!(masked.scores[(2, 0)] > plain.scores[(2, 0)]);
    }

    #[test]
    fn downsample_rules() {
        let big = GridShape::new(4, 4).unwrap();
        let mut m = AttentionMask::zeros(big);
        // coarse query 1 (target half, row 0) covers fine stitched rows 2,3,10,11
        for q in [2, 3, 10, 11] {
            for k in [0, 1, 8, 9] {
                m.values[(q, k)] = NEG_INF;
            }
            for k in [4, 5, 12, 13] {
                m.values[(q, k)] = NEG_INF;
            }
        }
        m.values[(3, 5)] = 0.7;
        let c = downsample_mask(&m, 2).unwrap();
        assert_eq!(c.values[(1, 0)], NEG_INF);
        assert_eq!(c.values[(1, 2)], 0.7);
        assert_eq!(c.values[(1, 1)], 0.0);
        assert_eq!(c.values[(0, 0)], 0.0);
    }

    #[test]
    fn optimize_identity_cases() {
        let shape = g2();
        let z = LatentTensor::new(shape, Mat::filled(8, 2, 0.5), Mat::filled(8, 2, 0.1), vec![false; 8]).unwrap();
        let g = Mat::filled(8, 2, 3.0);
        let c0 = GuidanceConfig { str_o: 0.0, ..GuidanceConfig::default() };
        assert_eq!(optimize_latent(&z, &g, &c0).unwrap(), z);
        assert_eq!(optimize_latent(&z, &Mat::zeros(8, 2), &GuidanceConfig::default()).unwrap(), z);
        let moved = optimize_latent(&z, &g, &GuidanceConfig::default()).unwrap();
        assert!((moved.noise_latent()[(0, 0)] - (0.1 - 0.3)).abs() < 1e-15);
        assert_eq!(moved.image_latent(), z.image_latent());
    }
}
