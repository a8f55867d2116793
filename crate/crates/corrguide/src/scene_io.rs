//! CRFS scene files: a little-endian binary payload plus a JSON sidecar.
//!
//! Layout after the 4-byte magic `CRFS`:
//!
//! | field            | type                |
//! |------------------|---------------------|
//! | version          | u16                 |
//! | h, w, d          | u32 each            |
//! | seed             | u64                 |
//! | reference_latent | f64 × hw·d          |
//! | target_latent    | f64 × hw·d          |
//! | gt_i, gt_j       | f64 × hw each, -1 where undefined |
//! | overlap_mask     | f64 × hw, 0 or 1    |
//! | inpaint_mask     | f64 × hw, 0 or 1    |

use std::path::{Path, PathBuf};

use corrguide_core::mat::Mat;
use corrguide_core::synthdata::{MaskParams, SceneParams, ScenePair};
use corrguide_core::{GridShape, TokenCoord};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CRFS";
pub const FORMAT_VERSION: u16 = 1;
pub const ARRAYS: [&str; 6] = ["reference_latent", "target_latent", "gt_i", "gt_j", "overlap_mask", "inpaint_mask"];
const HEADER_LEN: usize = 4 + 2 + 3 * 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub version: u16,
    pub seed: u64,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub arrays: Vec<String>,
    pub overlap_count: usize,
    pub mask_ratio: f64,
    pub value_range: [f64; 2],
    pub scene_params: Option<SceneParams>,
    pub mask_params: Option<MaskParams>,
}

impl Sidecar {
    pub fn describe(scene: &ScenePair, scene_params: Option<&SceneParams>, mask_params: Option<&MaskParams>) -> Self {
        let (lo, hi) = scene.value_range();
        Self {
            format: "CRFS".into(),
            version: FORMAT_VERSION,
            seed: scene.seed,
            h: scene.shape.h,
            w: scene.shape.w,
            d: scene.channels(),
            arrays: ARRAYS.iter().map(|s| s.to_string()).collect(),
            overlap_count: scene.overlap_count(),
            mask_ratio: scene.mask_ratio(),
            value_range: [lo, hi],
            scene_params: scene_params.cloned(),
            mask_params: mask_params.cloned(),
        }
    }
}

pub fn sidecar_path(scene_path: &Path) -> PathBuf {
    scene_path.with_extension("json")
}

pub fn encode(scene: &ScenePair) -> Vec<u8> {
    let n = scene.shape.half_len();
    let d = scene.channels();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n * (2 * d + 4));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for dim in [scene.shape.h, scene.shape.w, d] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&scene.seed.to_le_bytes());
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    scene.reference_latent.as_slice().iter().for_each(|&v| put(v));
    scene.target_latent.as_slice().iter().for_each(|&v| put(v));
    scene.gt_correspondence.iter().for_each(|g| put(g.map_or(-1.0, |c| c.i as f64)));
    scene.gt_correspondence.iter().for_each(|g| put(g.map_or(-1.0, |c| c.j as f64)));
    scene.overlap_mask.iter().for_each(|&b| put(b as u8 as f64));
    scene.inpaint_mask.iter().for_each(|&b| put(b as u8 as f64));
    out
}

pub fn decode(bytes: &[u8]) -> Result<ScenePair, String> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err("not a CRFS file".into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(format!("unsupported CRFS version {version}"));
    }
    let (h, w, d) = (u32_at(6), u32_at(10), u32_at(14));
    let seed = u64::from_le_bytes(bytes[18..26].try_into().unwrap());
    let shape = GridShape::new(h, w).map_err(|e| e.to_string())?;
    let n = h * w;
    let expected = n.checked_mul(2 * d + 4).and_then(|c| c.checked_mul(8)).and_then(|c| c.checked_add(HEADER_LEN));
    if d == 0 || expected != Some(bytes.len()) {
        return Err(format!("payload length {} does not match {h}x{w}x{d}", bytes.len()));
    }
    let mut values = bytes[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |count: usize| -> Vec<f64> { values.by_ref().take(count).collect() };
    let reference = take(n * d);
    let target = take(n * d);
    let (gi, gj) = (take(n), take(n));
    let (overlap, inpaint) = (take(n), take(n));
    if reference.iter().chain(&target).any(|v| !v.is_finite()) {
        return Err("latent contains non-finite values".into());
    }
    let gt = gi
        .iter()
        .zip(&gj)
        .map(|(&i, &j)| match (i, j) {
            (i, j) if i == -1.0 && j == -1.0 => Ok(None),
            (i, j) if i >= 0.0 && j >= 0.0 && i.fract() == 0.0 && j.fract() == 0.0 && i < h as f64 && j < w as f64 => {
                Ok(Some(TokenCoord::new(i as usize, j as usize)))
            }
            _ => Err(format!("invalid ground-truth entry ({i}, {j})")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let flags = |v: &[f64], name: &str| -> Result<Vec<bool>, String> {
        v.iter()
            .map(|&x| match x {
                0.0 => Ok(false),
                1.0 => Ok(true),
                _ => Err(format!("{name} holds non-binary value {x}")),
            })
            .collect()
    };
    let scene = ScenePair {
        shape,
        reference_latent: Mat::from_vec(n, d, reference),
        target_latent: Mat::from_vec(n, d, target),
        gt_correspondence: gt,
        overlap_mask: flags(&overlap, "overlap_mask")?,
        inpaint_mask: flags(&inpaint, "inpaint_mask")?,
        seed,
    };
    scene.validate().map_err(|e| e.to_string())?;
    Ok(scene)
}

/// Writes `path` and its `.json` sidecar.
pub fn write_scene(path: &Path, scene: &ScenePair, scene_params: Option<&SceneParams>, mask_params: Option<&MaskParams>) -> Result<()> {
    std::fs::write(path, encode(scene)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let mut json = serde_json::to_string_pretty(&Sidecar::describe(scene, scene_params, mask_params)).expect("sidecar serializes");
    json.push('\n');
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn read_scene(path: &Path) -> Result<ScenePair> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|detail| Error::format(path, detail))
}
