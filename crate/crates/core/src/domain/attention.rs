use crate::domain::{GridShape, TokenGrid};
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Suppression value written into attention masks. Finite so masked logits
/// stay finite through softmax and differentiation.
pub const NEG_INF: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum AttentionKind {
    /// Raw pre-softmax scores.
    Logits,
    /// Row-stochastic post-softmax probabilities.
    Softmax,
    /// Non-negative scores with arbitrary row sums (aggregates, submatrices).
    Scores,
}

/// Dense query × key score matrix with the token grids it was computed on.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttentionMap {
    pub query: TokenGrid,
    pub key: TokenGrid,
    pub kind: AttentionKind,
    pub scores: Mat,
}

impl AttentionMap {
    pub fn new(query: TokenGrid, key: TokenGrid, kind: AttentionKind, scores: Mat) -> Result<Self> {
        if scores.shape() != (query.len(), key.len()) {
            return Err(Error::arg("attention scores do not match query/key grids"));
        }
        match kind {
            AttentionKind::Logits => {}
            AttentionKind::Scores => {
                if scores.as_slice().iter().any(|&x| !(x >= 0.0)) {
                    return Err(Error::arg("attention scores must be non-negative"));
                }
            }
            AttentionKind::Softmax => {
                for r in 0..scores.rows() {
                    let row = scores.row(r);
                    if row.iter().any(|&x| !(x >= 0.0)) {
                        return Err(Error::arg("softmax attention has a negative entry"));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > 1e-6 {
                        return Err(Error::arg("softmax attention row does not sum to 1"));
                    }
                }
            }
        }
        Ok(Self { query, key, kind, scores })
    }

    pub(crate) fn new_unchecked(query: TokenGrid, key: TokenGrid, kind: AttentionKind, scores: Mat) -> Self {
        debug_assert_eq!(scores.shape(), (query.len(), key.len()));
        Self { query, key, kind, scores }
    }

    pub fn rows(&self) -> usize {
        self.scores.rows()
    }

    pub fn cols(&self) -> usize {
        self.scores.cols()
    }
}

/// Target → reference consensus, accumulated over denoising steps.
/// Row = target half index, column = reference half index.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MatchingMap {
    pub shape: GridShape,
    pub values: Mat,
}

impl MatchingMap {
    pub fn zeros(shape: GridShape) -> Self {
        Self { shape, values: Mat::zeros(shape.half_len(), shape.half_len()) }
    }

    pub fn new(shape: GridShape, values: Mat) -> Result<Self> {
        if values.shape() != (shape.half_len(), shape.half_len()) {
            return Err(Error::arg("matching map must be hw x hw"));
        }
        if values.as_slice().iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::arg("matching map entries must be non-negative"));
        }
        Ok(Self { shape, values })
    }
}

/// Additive logit mask over the stitched grid (queries × keys).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttentionMask {
    pub shape: GridShape,
    pub values: Mat,
}

impl AttentionMask {
    pub fn zeros(shape: GridShape) -> Self {
        let n = shape.token_count();
        Self { shape, values: Mat::zeros(n, n) }
    }

    pub fn is_zero(&self) -> bool {
        self.values.as_slice().iter().all(|&x| x == 0.0)
    }
}
