//! Correspondence estimation from the matching map and its refinement by
//! dominant-token filtering and consensus-weighted displacement smoothing.

use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{neighborhood, Correspondence, CorrespondenceField, MatchingMap, TokenCoord};
use crate::error::{Error, Result};

/// Per-target-token argmax over reference tokens. Ties go to the smallest
/// reference index; an all-zero row yields `Unmatched`.
pub fn estimate(c: &MatchingMap) -> Result<CorrespondenceField> {
    let shape = c.shape;
    let n = shape.half_len();
    let mut entries = Vec::with_capacity(n);
    let mut consensus = Vec::with_capacity(n);
    for r in 0..n {
        let row = c.values.row(r);
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if !(v >= 0.0) {
                return Err(Error::arg("matching map entries must be non-negative"));
            }
            if v > row[best] {
                best = k;
            }
        }
        if row[best] > 0.0 {
            entries.push(Correspondence::Inlier(shape.half_coord(best)));
            consensus.push(row[best]);
        } else {
            entries.push(Correspondence::Unmatched);
            consensus.push(0.0);
        }
    }
    CorrespondenceField::from_entries(shape, entries, consensus)
}

/// Marks every inlier that points at a dominant reference token (one with
/// more than `threshold` inlier correspondents) as an outlier.
pub fn filter_outliers(p: &CorrespondenceField, threshold: usize) -> CorrespondenceField {
    let shape = p.shape;
    let mut counts = vec![0usize; shape.half_len()];
    for c in p.entries.iter().filter_map(Correspondence::inlier) {
        counts[shape.half_index(c)] += 1;
    }
    let mut out = p.clone();
    for (k, e) in out.entries.iter_mut().enumerate() {
        if let Correspondence::Inlier(c) = *e {
            if counts[shape.half_index(c)] > threshold {
                *e = Correspondence::Outlier(c);
                out.consensus[k] = 0.0;
            }
        }
    }
    out
}

#[inline]
fn round_half_up(x: f64) -> i64 {
    libm::floor(x + 0.5) as i64
}

/// Consensus-weighted average of displacements over a `win_s` window.
///
/// Outliers keep their recorded coordinate; tokens whose window carries no
/// consensus become `Unmatched`. The smoothed consensus is the window's mean
/// weight.
pub fn smooth(p: &CorrespondenceField, win_s: usize) -> CorrespondenceField {
    let shape = p.shape;
    let n = shape.half_len();
    let mut entries = Vec::with_capacity(n);
    let mut consensus = Vec::with_capacity(n);
    let mut displacement = Vec::with_capacity(n);
    for k in 0..n {
        let here = shape.half_coord(k);
        if let Correspondence::Outlier(_) = p.entries[k] {
            entries.push(p.entries[k]);
            consensus.push(0.0);
            displacement.push(p.displacement[k]);
            continue;
        }
        let window = neighborhood(here, win_s, shape);
        let (mut wsum, mut di, mut dj) = (0.0, 0.0, 0.0);
        for nb in &window {
            let m = shape.half_index(*nb);
            let w = p.consensus[m];
            if w > 0.0 {
                wsum += w;
                di += p.displacement[m][0] * w;
                dj += p.displacement[m][1] * w;
            }
        }
        if !(wsum > 0.0) {
            entries.push(Correspondence::Unmatched);
            consensus.push(0.0);
            displacement.push([0.0; 2]);
            continue;
        }
        let d = [di / wsum, dj / wsum];
        let ti = (round_half_up(here.i as f64 + d[0])).clamp(0, shape.h as i64 - 1) as usize;
        let tj = (round_half_up(here.j as f64 + d[1])).clamp(0, shape.w as i64 - 1) as usize;
        let target = TokenCoord::new(ti, tj);
        entries.push(Correspondence::Inlier(target));
        consensus.push(wsum / window.len() as f64);
        displacement.push([ti as f64 - here.i as f64, tj as f64 - here.j as f64]);
    }
    CorrespondenceField { shape, entries, consensus, displacement }
}

/// Unrounded smoothed displacement at one token, `None` when the window has
/// no consensus. Exposed for inspecting the weighted average itself.
pub fn smoothed_displacement(p: &CorrespondenceField, at: TokenCoord, win_s: usize) -> Option<[f64; 2]> {
    let shape = p.shape;
    let (mut wsum, mut di, mut dj) = (0.0, 0.0, 0.0);
    for nb in neighborhood(at, win_s, shape) {
        let m = shape.half_index(nb);
        let w = p.consensus[m];
        if w > 0.0 {
            wsum += w;
            di += p.displacement[m][0] * w;
            dj += p.displacement[m][1] * w;
        }
    }
    (wsum > 0.0).then(|| [di / wsum, dj / wsum])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::GridShape;
    use crate::mat::Mat;

    fn shape(h: usize, w: usize) -> GridShape {
        GridShape::new(h, w).unwrap()
    }

    #[test]
    fn estimate_one_hot_and_ties() {
        let g = shape(2, 3);
        let mut v = Mat::zeros(6, 6);
        for r in 0..6 {
            v[(r, (r + 1) % 6)] = 1.0;
        }
        v.row_mut(5).fill(0.0);
        v[(0, 3)] = 1.0; // tie with index 1 → index 1 wins
        v.row_mut(2).fill(0.0);
        v[(2, 3)] = 0.5;
        v[(2, 5)] = 0.5;
        let p = estimate(&MatchingMap::new(g, v).unwrap()).unwrap();
        assert_eq!(p.entries[0], Correspondence::Inlier(g.half_coord(1)));
        assert_eq!(p.entries[2], Correspondence::Inlier(g.half_coord(3)));
        assert_eq!(p.consensus[1], 1.0);
        assert_eq!(p.entries[5], Correspondence::Unmatched);
        assert_eq!(p.displacement[1], [0.0, 1.0]);
    }

    fn all_to(g: GridShape, targets: usize, to: TokenCoord) -> CorrespondenceField {
        let coords: Vec<_> = (0..g.half_len()).map(|k| (k < targets).then_some(to)).collect();
        CorrespondenceField::from_coords(g, &coords).unwrap()
    }

    #[test]
    fn filter_threshold_is_strict() {
        let g = shape(4, 4);
        let to = TokenCoord::new(2, 2);
        let five = filter_outliers(&all_to(g, 5, to), 4);
        assert_eq!(five.count_outliers(), 5);
        assert!(five.consensus[..5].iter().all(|&c| c == 0.0));
        let four = filter_outliers(&all_to(g, 4, to), 4);
        assert_eq!(four.count_outliers(), 0);
        assert_eq!(four.count_inliers(), 4);
    }

    #[test]
    fn smooth_hand_example() {
        // 3×3 window around (1,1): center D=(5,5), eight neighbors D=(1,0), all W=1.
        let g = shape(4, 8);
        let mut coords = vec![None; g.half_len()];
        for c in neighborhood(TokenCoord::new(1, 1), 1, g) {
            coords[g.half_index(c)] = Some(TokenCoord::new(c.i + 1, c.j));
        }
        let mut p = CorrespondenceField::from_coords(g, &coords).unwrap();
        let center = g.half_index(TokenCoord::new(1, 1));
        p.displacement[center] = [5.0, 5.0];
        let d = smoothed_displacement(&p, TokenCoord::new(1, 1), 1).unwrap();
        assert!((d[0] - 13.0 / 9.0).abs() < 1e-12);
        assert!((d[1] - 5.0 / 9.0).abs() < 1e-12);
        let s = smooth(&p, 1);
        assert_eq!(s.entries[center], Correspondence::Inlier(TokenCoord::new(2, 2)));
    }

    #[test]
    fn smooth_outlier_window_becomes_unmatched() {
        let g = shape(3, 3);
        let to = TokenCoord::new(0, 0);
        let p = filter_outliers(&all_to(g, 9, to), 4);
        let mut q = p.clone();
        q.entries[4] = Correspondence::Unmatched;
        let s = smooth(&q, 1);
        assert_eq!(s.entries[4], Correspondence::Unmatched);
        assert_eq!(s.entries[0], Correspondence::Outlier(to));
    }
}
