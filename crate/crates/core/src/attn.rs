//! Attention aggregation: per-layer head averaging, rescaling to the common
//! base grid, layer summation, target→reference extraction and timestep
//! accumulation into the matching map.

use alloc::vec::Vec;

use crate::domain::{AttentionKind, AttentionMap, GridShape, MatchingMap, TokenGrid};
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Post-softmax head maps of one attention layer.
#[derive(Debug, Clone)]
pub struct LayerAttention {
    pub layer_id: usize,
    pub head_maps: Vec<AttentionMap>,
    /// Downsampling factor relative to the base grid (1, 2, 4, ...).
    pub scale: usize,
}

pub fn average_heads(layer: &LayerAttention) -> Result<AttentionMap> {
    let first = layer.head_maps.first().ok_or_else(|| Error::arg("layer has no attention heads"))?;
    let mut sum = first.scores.clone();
    for head in &layer.head_maps[1..] {
        if head.query != first.query || head.key != first.key {
            return Err(Error::arg("attention heads disagree in shape"));
        }
        sum.add_assign(&head.scores);
    }
    let mean = sum.scale(1.0 / layer.head_maps.len() as f64);
    Ok(AttentionMap::new_unchecked(first.query, first.key, first.kind, mean))
}

fn ratio(from: TokenGrid, to: TokenGrid) -> Result<(usize, usize)> {
    if from.rows == 0 || from.cols == 0 || to.rows % from.rows != 0 || to.cols % from.cols != 0 {
        return Err(Error::arg("rescale target is not an integer multiple of the source grid"));
    }
    Ok((to.rows / from.rows, to.cols / from.cols))
}

/// Upsample a map to finer query/key grids. Query rows are replicated over
/// the block they cover; each key score is split evenly over its block, so
/// row sums are preserved.
pub fn rescale_map(map: &AttentionMap, query: TokenGrid, key: TokenGrid) -> Result<AttentionMap> {
    let (qr, qc) = ratio(map.query, query)?;
    let (kr, kc) = ratio(map.key, key)?;
    if (qr, qc, kr, kc) == (1, 1, 1, 1) {
        return Ok(map.clone());
    }
    let split = (kr * kc) as f64;
    let src = &map.scores;
    let scores = Mat::from_fn(query.len(), key.len(), |q, k| {
        let (qi, qj) = (q / query.cols, q % query.cols);
        let (ki, kj) = (k / key.cols, k % key.cols);
        let sq = (qi / qr) * map.query.cols + qj / qc;
        let sk = (ki / kr) * map.key.cols + kj / kc;
        src[(sq, sk)] / split
    });
    Ok(AttentionMap::new_unchecked(query, key, map.kind, scores))
}

/// Entrywise sum of layer maps already on a common grid.
pub fn aggregate_layers(layers: &[AttentionMap]) -> Result<AttentionMap> {
    let first = layers.first().ok_or_else(|| Error::arg("no layers to aggregate"))?;
    let mut sum = first.scores.clone();
    for l in &layers[1..] {
        if l.query != first.query || l.key != first.key {
            return Err(Error::arg("layer maps are not on a common grid"));
        }
        sum.add_assign(&l.scores);
    }
    let kind = if first.kind == AttentionKind::Logits { AttentionKind::Logits } else { AttentionKind::Scores };
    Ok(AttentionMap::new_unchecked(first.query, first.key, kind, sum))
}

/// Target-query × reference-key submatrix of a stitched map, re-indexed to
/// half-grid row-major order.
pub fn extract_tar2ref(a_t: &AttentionMap, shape: GridShape) -> Result<AttentionMap> {
    if a_t.query != shape.stitched() || a_t.key != shape.stitched() {
        return Err(Error::arg("tar2ref extraction needs a stitched-grid map"));
    }
    let scores = a_t.scores.select(&shape.target_indices(), &shape.reference_indices());
    let kind = if a_t.kind == AttentionKind::Logits { AttentionKind::Logits } else { AttentionKind::Scores };
    Ok(AttentionMap::new_unchecked(shape.half(), shape.half(), kind, scores))
}

/// `C_t = C_{t+1} + A_t^{tar2ref}`.
pub fn accumulate_matching(prev: &MatchingMap, a: &AttentionMap) -> Result<MatchingMap> {
    let half = prev.shape.half();
    if a.query != half || a.key != half {
        return Err(Error::arg("tar2ref map does not match the matching map grid"));
    }
    if a.scores.as_slice().iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::arg("attention entries must be non-negative to accumulate"));
    }
    Ok(MatchingMap { shape: prev.shape, values: prev.values.add(&a.scores) })
}
