use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{GridShape, TokenCoord};
use crate::error::{Error, Result};

/// Status of one target token's match in the reference half.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Correspondence {
    Inlier(TokenCoord),
    /// Removed by dominant-token filtering; the coordinate is kept so the
    /// mask can suppress its neighborhood.
    Outlier(TokenCoord),
    /// No usable signal (all-zero matching row or zero-consensus window).
    Unmatched,
}

impl Correspondence {
    pub fn inlier(&self) -> Option<TokenCoord> {
        match *self {
            Correspondence::Inlier(c) => Some(c),
            _ => None,
        }
    }

    pub fn coord(&self) -> Option<TokenCoord> {
        match *self {
            Correspondence::Inlier(c) | Correspondence::Outlier(c) => Some(c),
            Correspondence::Unmatched => None,
        }
    }
}

/// Per-target-token correspondence with consensus weights and displacements.
/// All vectors are indexed by target half index (row-major).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorrespondenceField {
    pub shape: GridShape,
    pub entries: Vec<Correspondence>,
    pub consensus: Vec<f64>,
    /// `(di, dj)` in token units.
    pub displacement: Vec<[f64; 2]>,
}

impl CorrespondenceField {
    pub fn unmatched(shape: GridShape) -> Self {
        let n = shape.half_len();
        Self {
            shape,
            entries: vec![Correspondence::Unmatched; n],
            consensus: vec![0.0; n],
            displacement: vec![[0.0; 2]; n],
        }
    }

    /// Builds a field from entries and consensus weights, deriving
    /// displacements and zeroing outlier/unmatched consensus.
    pub fn from_entries(shape: GridShape, entries: Vec<Correspondence>, consensus: Vec<f64>) -> Result<Self> {
        let n = shape.half_len();
        if entries.len() != n || consensus.len() != n {
            return Err(Error::arg("field length does not match grid"));
        }
        let mut field = Self { shape, entries, consensus, displacement: vec![[0.0; 2]; n] };
        for k in 0..n {
            let here = shape.half_coord(k);
            match field.entries[k] {
                Correspondence::Inlier(c) => {
                    shape.check(c)?;
                    if !(field.consensus[k] >= 0.0) {
                        return Err(Error::arg("consensus must be non-negative"));
                    }
                    field.displacement[k] = displacement(here, c);
                }
                Correspondence::Outlier(c) => {
                    shape.check(c)?;
                    field.consensus[k] = 0.0;
                    field.displacement[k] = displacement(here, c);
                }
                Correspondence::Unmatched => field.consensus[k] = 0.0,
            }
        }
        Ok(field)
    }

    /// Field of unit-consensus inliers, `None` → unmatched.
    pub fn from_coords(shape: GridShape, coords: &[Option<TokenCoord>]) -> Result<Self> {
        let entries = coords
            .iter()
            .map(|c| c.map_or(Correspondence::Unmatched, Correspondence::Inlier))
            .collect::<Vec<_>>();
        let consensus = coords.iter().map(|c| if c.is_some() { 1.0 } else { 0.0 }).collect();
        Self::from_entries(shape, entries, consensus)
    }

    pub fn get(&self, c: TokenCoord) -> Correspondence {
        self.entries[self.shape.half_index(c)]
    }

    pub fn count_inliers(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e, Correspondence::Inlier(_))).count()
    }

    pub fn count_outliers(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e, Correspondence::Outlier(_))).count()
    }
}

#[inline]
pub(crate) fn displacement(from: TokenCoord, to: TokenCoord) -> [f64; 2] {
    [to.i as f64 - from.i as f64, to.j as f64 - from.j as f64]
}
