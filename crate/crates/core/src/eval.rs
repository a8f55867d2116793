//! Restoration metrics and correspondence correctness.

use crate::domain::{Correspondence, CorrespondenceField, TokenGrid};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::synthdata::ScenePair;

/// Reported when the two inputs are identical over the region.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Affine map of `values` from `[lo, hi]` to `[0, 1]`.
pub fn to_unit_range(values: &Mat, (lo, hi): (f64, f64)) -> Mat {
    let span = if hi > lo { hi - lo } else { 1.0 };
    values.map(|v| (v - lo) / span)
}

/// PSNR in dB for unit-range data over the tokens selected by `region`
/// (all tokens when `None`). Rows are tokens, columns channels.
pub fn psnr(a: &Mat, b: &Mat, region: Option<&[bool]>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::arg("psnr inputs differ in shape"));
    }
    if region.is_some_and(|r| r.len() != a.rows()) {
        return Err(Error::arg("psnr region does not match token count"));
    }
    let (mut se, mut count) = (0.0, 0usize);
    for r in 0..a.rows() {
        if region.is_some_and(|m| !m[r]) {
            continue;
        }
        for (x, y) in a.row(r).iter().zip(b.row(r)) {
            se += (x - y) * (x - y);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::arg("psnr region is empty"));
    }
    let mse = se / count as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * libm::log10(1.0 / mse)).min(PSNR_CAP_DB))
}

fn window_ssim(a: &Mat, b: &Mat, grid: TokenGrid, ch: usize, r0: usize, c0: usize, wr: usize, wc: usize) -> f64 {
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let n = (wr * wc) as f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in r0..r0 + wr {
        for c in c0..c0 + wc {
            let k = r * grid.cols + c;
            let (x, y) = (a[(k, ch)], b[(k, ch)]);
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
        }
    }
    let (ma, mb) = (sa / n, sb / n);
    let va = saa / n - ma * ma;
    let vb = sbb / n - mb * mb;
    let cov = sab / n - ma * mb;
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Mean SSIM over all `8×8` uniform windows and channels of unit-range data
/// laid out on `grid`. Grids smaller than the window use one global window.
pub fn ssim(a: &Mat, b: &Mat, grid: TokenGrid) -> Result<f64> {
    if a.shape() != b.shape() || a.rows() != grid.len() || grid.is_empty() {
        return Err(Error::arg("ssim inputs do not match the grid"));
    }
    let (wr, wc) = if grid.rows < SSIM_WINDOW || grid.cols < SSIM_WINDOW {
        (grid.rows, grid.cols)
    } else {
        (SSIM_WINDOW, SSIM_WINDOW)
    };
    let (mut total, mut count) = (0.0, 0usize);
    for ch in 0..a.cols() {
        for r0 in 0..=grid.rows - wr {
            for c0 in 0..=grid.cols - wc {
                total += window_ssim(a, b, grid, ch, r0, c0, wr, wc);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// `(correct, total)` over overlap tokens; an inlier is correct when it lies
/// within one token (Chebyshev) of the ground truth.
pub fn count_correct(p: &CorrespondenceField, scene: &ScenePair) -> Result<(usize, usize)> {
    if p.shape != scene.shape {
        return Err(Error::arg("field and scene grids differ"));
    }
    let (mut correct, mut total) = (0, 0);
    for (entry, gt) in p.entries.iter().zip(&scene.gt_correspondence) {
        let Some(gt) = gt else { continue };
        total += 1;
        if let Correspondence::Inlier(c) = entry {
            if c.chebyshev(*gt) <= 1 {
                correct += 1;
            }
        }
    }
    Ok((correct, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TokenCoord;
    use crate::synthdata::{generate_scene, SceneParams, Warp};
    use alloc::vec::Vec;

    #[test]
    fn psnr_closed_forms() {
        let a = Mat::filled(4, 2, 0.5);
        assert_eq!(psnr(&a, &a, None).unwrap(), PSNR_CAP_DB);
        let b = Mat::filled(4, 2, 0.6);
        assert!((psnr(&a, &b, None).unwrap() - 20.0).abs() < 1e-9);
        let empty = [false; 4];
        assert!(psnr(&a, &b, Some(&empty)).is_err());
    }

    #[test]
    fn ssim_identity_and_constants() {
        let g = TokenGrid { rows: 8, cols: 8 };
        let a = Mat::from_fn(64, 2, |k, c| ((k * 7 + c * 3) % 11) as f64 / 10.0);
        assert!((ssim(&a, &a, g).unwrap() - 1.0).abs() < 1e-12);
        let c = Mat::filled(64, 2, 0.3);
        assert!((ssim(&c, &c, g).unwrap() - 1.0).abs() < 1e-12);
        let inv = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &inv, g).unwrap() < 0.5);
        let small = TokenGrid { rows: 4, cols: 4 };
        let s = Mat::from_fn(16, 1, |k, _| k as f64 / 16.0);
        assert!((ssim(&s, &s, small).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn count_correct_offsets() {
        let scene = generate_scene(1, &SceneParams { warp: Warp::Shift { di: 0, dj: 2 }, ..SceneParams::default() }).unwrap();
        let shape = scene.shape;
        let exact = CorrespondenceField::from_coords(shape, &scene.gt_correspondence).unwrap();
        assert_eq!(count_correct(&exact, &scene).unwrap(), (48, 48));
        let one_off: Vec<_> = scene
            .gt_correspondence
            .iter()
            .map(|g| g.map(|c| TokenCoord::new(if c.i + 1 < shape.h { c.i + 1 } else { c.i - 1 }, c.j)))
            .collect();
        let f = CorrespondenceField::from_coords(shape, &one_off).unwrap();
        assert_eq!(count_correct(&f, &scene).unwrap(), (48, 48));
        let two_off: Vec<_> = scene.gt_correspondence.iter().map(|g| g.map(|c| TokenCoord::new(c.i, c.j - 2))).collect();
        let f = CorrespondenceField::from_coords(shape, &two_off).unwrap();
        assert_eq!(count_correct(&f, &scene).unwrap(), (0, 48));
    }
}
