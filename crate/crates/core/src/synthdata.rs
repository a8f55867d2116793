//! Synthetic reference/target pairs with exact token-level ground truth.
//!
//! The reference half is smooth value-noise texture; the target is an
//! integer warp of it, with tokens that fall outside the reference filled by
//! independent texture. Inpainting masks are a rectangle plus random-walk
//! strokes placed mostly over the overlap region.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::domain::rng::{derive_seed, SplitMix64};
use crate::domain::{GridShape, LatentTensor, TokenCoord};
use crate::error::{Error, Result};
use crate::mat::Mat;

const STREAM_REFERENCE: u64 = 1;
const STREAM_FILL: u64 = 2;
const STREAM_MASK: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_SHIFT: u64 = 5;

/// Integer map from target tokens to reference tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Warp {
    /// `gt(i, j) = (i + di, j + dj)`
    Shift { di: i32, dj: i32 },
    /// `gt(i, j) = m · (i, j) + offset`
    Affine { m: [[i32; 2]; 2], offset: [i32; 2] },
}

impl Warp {
    fn apply(&self, c: TokenCoord) -> (i64, i64) {
        let (i, j) = (c.i as i64, c.j as i64);
        match *self {
            Warp::Shift { di, dj } => (i + di as i64, j + dj as i64),
            Warp::Affine { m, offset } => (
                m[0][0] as i64 * i + m[0][1] as i64 * j + offset[0] as i64,
                m[1][0] as i64 * i + m[1][1] as i64 * j + offset[1] as i64,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SceneParams {
    pub h: usize,
    pub w: usize,
    /// Latent channels `d`.
    pub channels: usize,
    pub warp: Warp,
    /// Value-noise lattice spacing in tokens (spatial correlation length).
    pub texture_scale: f64,
    /// Lattice values are drawn from `[-amplitude, amplitude]`.
    pub amplitude: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self { h: 8, w: 8, channels: 4, warp: Warp::Shift { di: 0, dj: 2 }, texture_scale: 2.0, amplitude: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MaskParams {
    /// Accepted masked-token fraction `[lo, hi]`.
    pub ratio: [f64; 2],
    pub min_strokes: usize,
    pub max_strokes: usize,
    /// Random-walk length range per stroke, in tokens.
    pub stroke_len: [usize; 2],
    /// Minimum fraction of masked tokens inside the overlap.
    pub min_overlap_fraction: f64,
    pub max_attempts: usize,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            ratio: [0.10, 0.40],
            min_strokes: 1,
            max_strokes: 4,
            stroke_len: [2, 6],
            min_overlap_fraction: 0.8,
            max_attempts: 32,
        }
    }
}

/// One reference/target pair with exact correspondence and masks. Latents
/// are `hw × d`, row-major over the half grid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScenePair {
    pub shape: GridShape,
    pub reference_latent: Mat,
    pub target_latent: Mat,
    pub gt_correspondence: Vec<Option<TokenCoord>>,
    pub overlap_mask: Vec<bool>,
    pub inpaint_mask: Vec<bool>,
    pub seed: u64,
}

impl ScenePair {
    pub fn channels(&self) -> usize {
        self.reference_latent.cols()
    }

    pub fn overlap_count(&self) -> usize {
        self.overlap_mask.iter().filter(|&&b| b).count()
    }

    pub fn mask_ratio(&self) -> f64 {
        self.inpaint_mask.iter().filter(|&&b| b).count() as f64 / self.shape.half_len() as f64
    }

    /// Extremes over both latents, used to map values to `[0, 1]`.
    pub fn value_range(&self) -> (f64, f64) {
        let all = self.reference_latent.as_slice().iter().chain(self.target_latent.as_slice());
        all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn with_inpaint_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.shape.half_len() {
            return Err(Error::arg("inpaint mask length does not match grid"));
        }
        self.inpaint_mask = mask;
        Ok(self)
    }

    /// Checks every structural invariant, including bitwise equality of
    /// target content and its ground-truth reference token.
    pub fn validate(&self) -> Result<()> {
        let n = self.shape.half_len();
        let d = self.channels();
        if d == 0
            || self.reference_latent.shape() != (n, d)
            || self.target_latent.shape() != (n, d)
            || self.gt_correspondence.len() != n
            || self.overlap_mask.len() != n
            || self.inpaint_mask.len() != n
        {
            return Err(Error::arg("scene buffers do not match the grid"));
        }
        for k in 0..n {
            match (self.gt_correspondence[k], self.overlap_mask[k]) {
                (Some(c), true) => {
                    self.shape.check(c)?;
                    let src = self.reference_latent.row(self.shape.half_index(c));
                    if src.iter().zip(self.target_latent.row(k)).any(|(a, b)| a.to_bits() != b.to_bits()) {
                        return Err(Error::arg(format!("target token {k} differs from its ground-truth reference")));
                    }
                }
                (None, false) => {}
                _ => return Err(Error::arg("ground truth must be defined exactly on the overlap")),
            }
        }
        Ok(())
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// `rows × cols × channels` value noise with the given lattice spacing.
pub fn value_noise(rows: usize, cols: usize, channels: usize, scale: f64, amplitude: f64, rng: &mut SplitMix64) -> Mat {
    let lr = libm::ceil(rows as f64 / scale) as usize + 2;
    let lc = libm::ceil(cols as f64 / scale) as usize + 2;
    let lattices: Vec<Vec<f64>> = (0..channels).map(|_| (0..lr * lc).map(|_| rng.uniform(-amplitude, amplitude)).collect()).collect();
    let (oi, oj) = (rng.next_f64(), rng.next_f64());
    Mat::from_fn(rows * cols, channels, |k, c| {
        let (x, y) = ((k / cols) as f64 / scale + oi, (k % cols) as f64 / scale + oj);
        let (x0, y0) = (libm::floor(x) as usize, libm::floor(y) as usize);
        let (tx, ty) = (smoothstep(x - x0 as f64), smoothstep(y - y0 as f64));
        let lat = &lattices[c];
        let at = |a: usize, b: usize| lat[a * lc + b];
        let top = at(x0, y0) * (1.0 - ty) + at(x0, y0 + 1) * ty;
        let bottom = at(x0 + 1, y0) * (1.0 - ty) + at(x0 + 1, y0 + 1) * ty;
        top * (1.0 - tx) + bottom * tx
    })
}

/// Seeded integer shift with `|di| <= max[0]` and `|dj| <= max[1]`.
pub fn sample_shift(seed: u64, max: [usize; 2]) -> Warp {
    let mut rng = SplitMix64::new(derive_seed(seed, STREAM_SHIFT));
    let di = rng.range_inclusive(0, 2 * max[0]) as i32 - max[0] as i32;
    let dj = rng.range_inclusive(0, 2 * max[1]) as i32 - max[1] as i32;
    Warp::Shift { di, dj }
}

/// Builds the pair with an empty inpainting mask.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<ScenePair> {
    let shape = GridShape::new(params.h, params.w)?;
    if params.channels == 0 {
        return Err(Error::arg("scene needs at least one channel"));
    }
    if !(params.texture_scale >= 1.0) {
        return Err(Error::arg("texture_scale must be at least 1"));
    }
    if !(params.amplitude > 0.0 && params.amplitude.is_finite()) {
        return Err(Error::arg("amplitude must be positive"));
    }
    if let Warp::Shift { di, dj } = params.warp {
        if di.unsigned_abs() as usize > shape.h / 2 || dj.unsigned_abs() as usize > shape.w / 2 {
            return Err(Error::arg("shift must stay within half the grid"));
        }
    }
    let d = params.channels;
    let reference = value_noise(shape.h, shape.w, d, params.texture_scale, params.amplitude, &mut SplitMix64::new(derive_seed(seed, STREAM_REFERENCE)));
    let fill = value_noise(shape.h, shape.w, d, params.texture_scale, params.amplitude, &mut SplitMix64::new(derive_seed(seed, STREAM_FILL)));

    let n = shape.half_len();
    let mut target = Mat::zeros(n, d);
    let mut gt = vec![None; n];
    let mut overlap = vec![false; n];
    for c in shape.half_tokens() {
        let k = shape.half_index(c);
        let (si, sj) = params.warp.apply(c);
        if si >= 0 && sj >= 0 && (si as usize) < shape.h && (sj as usize) < shape.w {
            let src = TokenCoord::new(si as usize, sj as usize);
            gt[k] = Some(src);
            overlap[k] = true;
            target.row_mut(k).copy_from_slice(reference.row(shape.half_index(src)));
        } else {
            target.row_mut(k).copy_from_slice(fill.row(k));
        }
    }
    if !overlap.iter().any(|&b| b) {
        return Err(Error::arg("warp leaves no overlap between reference and target"));
    }
    Ok(ScenePair {
        shape,
        reference_latent: reference,
        target_latent: target,
        gt_correspondence: gt,
        overlap_mask: overlap,
        inpaint_mask: vec![false; n],
        seed,
    })
}

/// Rectangle plus random-walk strokes, resampled until the masked fraction
/// lies in `params.ratio` and enough of it covers the overlap.
pub fn generate_mask(seed: u64, scene: &ScenePair, params: &MaskParams) -> Result<Vec<bool>> {
    let [lo, hi] = params.ratio;
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::arg("mask ratio bounds must satisfy 0 < lo < hi < 1"));
    }
    if params.min_strokes > params.max_strokes || params.stroke_len[0] > params.stroke_len[1] {
        return Err(Error::arg("stroke ranges are inverted"));
    }
    let shape = scene.shape;
    let n = shape.half_len();
    let (mut bi0, mut bi1, mut bj0, mut bj1) = (usize::MAX, 0, usize::MAX, 0);
    for c in shape.half_tokens().filter(|c| scene.overlap_mask[shape.half_index(*c)]) {
        bi0 = bi0.min(c.i);
        bi1 = bi1.max(c.i);
        bj0 = bj0.min(c.j);
        bj1 = bj1.max(c.j);
    }
    if bi0 == usize::MAX {
        return Err(Error::Generation("scene has no overlap to mask".into()));
    }
    let (bh, bw) = (bi1 - bi0 + 1, bj1 - bj0 + 1);

    let mut rng = SplitMix64::new(derive_seed(seed, STREAM_MASK));
    for _ in 0..params.max_attempts {
        let mut mask = vec![false; n];
        let strokes = rng.range_inclusive(params.min_strokes, params.max_strokes);
        let area = rng.uniform(lo, hi) * n as f64;
        let rect_area = if strokes == 0 { area } else { area * 0.75 };
        let rh = rng.range_inclusive(1, bh.min(libm::ceil(rect_area) as usize).max(1));
        let rw = ((libm::round(rect_area / rh as f64) as usize).max(1)).min(bw);
        let i0 = bi0 + rng.below(bh - rh + 1);
        let j0 = bj0 + rng.below(bw - rw + 1);
        for i in i0..i0 + rh {
            for j in j0..j0 + rw {
                mask[i * shape.w + j] = true;
            }
        }
        for _ in 0..strokes {
            let (mut i, mut j) = (i0 + rng.below(rh), j0 + rng.below(rw));
            let len = rng.range_inclusive(params.stroke_len[0], params.stroke_len[1]);
            for _ in 0..len {
                match rng.below(4) {
                    0 if i + 1 < shape.h => i += 1,
                    1 if i > 0 => i -= 1,
                    2 if j + 1 < shape.w => j += 1,
                    3 if j > 0 => j -= 1,
                    _ => {}
                }
                mask[i * shape.w + j] = true;
            }
        }
        let masked = mask.iter().filter(|&&b| b).count();
        let inside = mask.iter().zip(&scene.overlap_mask).filter(|(&m, &o)| m && o).count();
        let ratio = masked as f64 / n as f64;
        if ratio >= lo && ratio <= hi && inside as f64 >= params.min_overlap_fraction * masked as f64 {
            return Ok(mask);
        }
    }
    Err(Error::Generation(format!("no mask within ratio [{lo}, {hi}] after {} attempts", params.max_attempts)))
}

/// Scene plus a generated mask.
pub fn generate_pair(seed: u64, scene: &SceneParams, mask: &MaskParams) -> Result<ScenePair> {
    let s = generate_scene(seed, scene)?;
    let m = generate_mask(seed, &s, mask)?;
    s.with_inpaint_mask(m)
}

/// Stitches reference (left) and target (right) into the initial latent,
/// with seeded standard-normal noise channels.
pub fn embed_stitched(scene: &ScenePair) -> Result<LatentTensor> {
    let shape = scene.shape;
    let d = scene.channels();
    let sw = shape.stitched_width();
    let image = Mat::from_fn(shape.token_count(), d, |k, c| {
        let (i, col) = (k / sw, k % sw);
        if col < shape.w {
            scene.reference_latent[(i * shape.w + col, c)]
        } else {
            scene.target_latent[(i * shape.w + col - shape.w, c)]
        }
    });
    let mask = (0..shape.token_count())
        .map(|k| {
            let (i, col) = (k / sw, k % sw);
            col >= shape.w && scene.inpaint_mask[i * shape.w + col - shape.w]
        })
        .collect();
    let mut rng = SplitMix64::new(derive_seed(scene.seed, STREAM_NOISE));
    let noise = Mat::from_fn(shape.token_count(), d, |_, _| rng.normal());
    LatentTensor::new(shape, image, noise, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(di: i32, dj: i32) -> SceneParams {
        SceneParams { warp: Warp::Shift { di, dj }, ..SceneParams::default() }
    }

    #[test]
    fn zero_shift_is_identity() {
        let s = generate_scene(1, &params(0, 0)).unwrap();
        assert_eq!(s.overlap_count(), 64);
        for c in s.shape.half_tokens() {
            assert_eq!(s.gt_correspondence[s.shape.half_index(c)], Some(c));
        }
        s.validate().unwrap();
    }

    #[test]
    fn column_shift_overlap() {
        let s = generate_scene(2, &params(0, 2)).unwrap();
        assert_eq!(s.overlap_count(), 48);
        assert_eq!(s.gt_correspondence[s.shape.half_index(TokenCoord::new(3, 1))], Some(TokenCoord::new(3, 3)));
        assert_eq!(s.gt_correspondence[s.shape.half_index(TokenCoord::new(3, 6))], None);
        s.validate().unwrap();
    }

    #[test]
    fn deterministic() {
        let a = generate_pair(9, &params(1, -2), &MaskParams::default()).unwrap();
        let b = generate_pair(9, &params(1, -2), &MaskParams::default()).unwrap();
        assert_eq!(a, b);
        let c = generate_pair(10, &params(1, -2), &MaskParams::default()).unwrap();
        assert_ne!(a.reference_latent, c.reference_latent);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(generate_scene(0, &params(0, 5)).is_err());
        let no_overlap = SceneParams { warp: Warp::Affine { m: [[1, 0], [0, 1]], offset: [0, 100] }, ..SceneParams::default() };
        assert!(generate_scene(0, &no_overlap).is_err());
        let s = generate_scene(0, &params(0, 0)).unwrap();
        let bad = MaskParams { ratio: [0.4, 0.1], ..MaskParams::default() };
        assert!(generate_mask(0, &s, &bad).is_err());
    }

    #[test]
    fn rectangle_only_mask() {
        let s = generate_scene(3, &params(0, 0)).unwrap();
        let p = MaskParams { min_strokes: 0, max_strokes: 0, ..MaskParams::default() };
        let m = generate_mask(3, &s, &p).unwrap();
        let rows: Vec<usize> = (0..8).filter(|i| (0..8).any(|j| m[i * 8 + j])).collect();
        let cols: Vec<usize> = (0..8).filter(|j| (0..8).any(|i| m[i * 8 + j])).collect();
        let count = m.iter().filter(|&&b| b).count();
        assert_eq!(count, rows.len() * cols.len());
    }

    #[test]
    fn embedding_layout() {
        let s = generate_scene(4, &params(0, 1)).unwrap();
        let z = embed_stitched(&s).unwrap();
        assert_eq!(z.concatenated().shape(), (128, 9));
        assert_eq!(z.image_latent().row(8), s.target_latent.row(0));
        assert!(z.mask().iter().all(|&m| !m));

        let full = s.clone().with_inpaint_mask(vec![true; 64]).unwrap();
        let z = embed_stitched(&full).unwrap();
        for k in 0..128 {
            if k % 16 >= 8 {
                assert!(z.image_latent().row(k).iter().all(|&v| v == 0.0));
            } else {
                assert!(!z.mask()[k]);
            }
        }
    }

    #[test]
    fn transpose_warp() {
        let p = SceneParams { warp: Warp::Affine { m: [[0, 1], [1, 0]], offset: [0, 0] }, ..SceneParams::default() };
        let s = generate_scene(5, &p).unwrap();
        assert_eq!(s.gt_correspondence[s.shape.half_index(TokenCoord::new(1, 5))], Some(TokenCoord::new(5, 1)));
        s.validate().unwrap();
    }
}
