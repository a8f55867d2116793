//! Grid geometry and the value types shared by every stage of the pipeline.
//!
//! The stitched grid is `h × 2w` tokens, flattened row-major. Columns `[0, w)`
//! hold the reference image, columns `[w, 2w)` the target image.

mod attention;
mod config;
mod field;
mod latent;
pub mod rng;

pub use attention::{AttentionKind, AttentionMap, AttentionMask, MatchingMap, NEG_INF};
pub use config::GuidanceConfig;
pub use field::{Correspondence, CorrespondenceField};
pub use latent::LatentTensor;

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Token grid of one image half; the stitched grid is `h × 2w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridShape {
    pub h: usize,
    pub w: usize,
}

impl GridShape {
    pub fn new(h: usize, w: usize) -> Result<Self> {
        if h < 2 || w < 2 {
            return Err(Error::arg("grid needs at least 2x2 tokens per half"));
        }
        Ok(Self { h, w })
    }

    #[inline]
    pub fn stitched_width(&self) -> usize {
        2 * self.w
    }

    /// Tokens in one half.
    #[inline]
    pub fn half_len(&self) -> usize {
        self.h * self.w
    }

    /// Tokens in the stitched grid.
    #[inline]
    pub fn token_count(&self) -> usize {
        2 * self.h * self.w
    }

    pub fn half(&self) -> TokenGrid {
        TokenGrid { rows: self.h, cols: self.w }
    }

    pub fn stitched(&self) -> TokenGrid {
        TokenGrid { rows: self.h, cols: 2 * self.w }
    }

    #[inline]
    pub fn contains(&self, c: TokenCoord) -> bool {
        c.i < self.h && c.j < self.w
    }

    pub fn check(&self, c: TokenCoord) -> Result<()> {
        if self.contains(c) {
            Ok(())
        } else {
            Err(Error::OutOfBounds { i: c.i, j: c.j, h: self.h, w: self.w })
        }
    }

    /// Row-major index within one half.
    #[inline]
    pub fn half_index(&self, c: TokenCoord) -> usize {
        c.i * self.w + c.j
    }

    #[inline]
    pub fn half_coord(&self, index: usize) -> TokenCoord {
        TokenCoord { i: index / self.w, j: index % self.w }
    }

    /// Stitched index of every reference token, in half-grid order.
    pub fn reference_indices(&self) -> Vec<usize> {
        self.half_tokens().map(|c| self.stitched_index(c, Half::Reference)).collect()
    }

    /// Stitched index of every target token, in half-grid order.
    pub fn target_indices(&self) -> Vec<usize> {
        self.half_tokens().map(|c| self.stitched_index(c, Half::Target)).collect()
    }

    /// All coordinates of one half in row-major order.
    pub fn half_tokens(&self) -> impl Iterator<Item = TokenCoord> {
        let w = self.w;
        (0..self.half_len()).map(move |k| TokenCoord { i: k / w, j: k % w })
    }

    #[inline]
    pub(crate) fn stitched_index(&self, c: TokenCoord, half: Half) -> usize {
        c.i * self.stitched_width() + c.j + half.column_offset(self.w)
    }
}

/// Plain rows × cols token grid used as attention-map metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
}

impl TokenGrid {
    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Half {
    Reference,
    Target,
}

impl Half {
    #[inline]
    fn column_offset(self, w: usize) -> usize {
        match self {
            Half::Reference => 0,
            Half::Target => w,
        }
    }
}

/// Token position inside one image half.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TokenCoord {
    pub i: usize,
    pub j: usize,
}

impl TokenCoord {
    pub const fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }

    pub fn chebyshev(self, other: TokenCoord) -> usize {
        self.i.abs_diff(other.i).max(self.j.abs_diff(other.j))
    }
}

/// Stitched row-major index of a half-grid coordinate.
pub fn flatten(coord: TokenCoord, half: Half, shape: GridShape) -> Result<usize> {
    shape.check(coord)?;
    Ok(shape.stitched_index(coord, half))
}

/// Inverse of [`flatten`].
pub fn unflatten(index: usize, shape: GridShape) -> Result<(TokenCoord, Half)> {
    if index >= shape.token_count() {
        return Err(Error::arg("stitched index out of range"));
    }
    let i = index / shape.stitched_width();
    let col = index % shape.stitched_width();
    Ok(if col < shape.w {
        (TokenCoord { i, j: col }, Half::Reference)
    } else {
        (TokenCoord { i, j: col - shape.w }, Half::Target)
    })
}

/// Chebyshev ball of `radius` around `center`, clipped to the half grid.
/// Always contains `center`; row-major order.
pub fn neighborhood(center: TokenCoord, radius: usize, shape: GridShape) -> Vec<TokenCoord> {
    let (i0, i1) = (center.i.saturating_sub(radius), (center.i + radius).min(shape.h - 1));
    let (j0, j1) = (center.j.saturating_sub(radius), (center.j + radius).min(shape.w - 1));
    let mut out = Vec::with_capacity((i1 - i0 + 1) * (j1 - j0 + 1));
    for i in i0..=i1 {
        for j in j0..=j1 {
            out.push(TokenCoord { i, j });
        }
    }
    out
}
