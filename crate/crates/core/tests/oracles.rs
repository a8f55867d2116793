//! Operations checked against naive reference implementations.

use std::collections::HashMap;

use corrguide_core::attn::{accumulate_matching, aggregate_layers, extract_tar2ref};
use corrguide_core::corr::{estimate, filter_outliers, smooth, smoothed_displacement};
use corrguide_core::domain::rng::SplitMix64;
use corrguide_core::guide::{apply_mask, build_attention_mask, objective_s};
use corrguide_core::mat::Mat;
use corrguide_core::toydiff::build_schedule;
use corrguide_core::{
    AttentionKind, AttentionMap, AttentionMask, Correspondence, CorrespondenceField, GridShape, GuidanceConfig,
    MatchingMap, TokenCoord,
};

fn grid(h: usize, w: usize) -> GridShape {
    GridShape::new(h, w).unwrap()
}

fn random_matching(shape: GridShape, rng: &mut SplitMix64) -> MatchingMap {
    let n = shape.half_len();
    // Coarse quantization makes exact ties common.
    let values = Mat::from_fn(n, n, |_, _| rng.below(6) as f64 * 0.25);
    MatchingMap::new(shape, values).unwrap()
}

fn argmax_oracle(row: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &v) in row.iter().enumerate() {
        match best {
            None if v > 0.0 => best = Some(k),
            Some(b) if v > row[b] => best = Some(k),
            _ => {}
        }
    }
    best
}

#[test]
fn tar2ref_matches_index_arithmetic() {
    let mut rng = SplitMix64::new(11);
    for (h, w) in [(2, 2), (3, 5), (4, 4), (8, 8)] {
        let shape = grid(h, w);
        let n = shape.token_count();
        let a = AttentionMap::new(shape.stitched(), shape.stitched(), AttentionKind::Scores, Mat::from_fn(n, n, |_, _| rng.next_f64())).unwrap();
        let sub = extract_tar2ref(&a, shape).unwrap();
        assert_eq!(sub.scores.shape(), (h * w, h * w));
        let mut seen = 0;
        for q in 0..n {
            for k in 0..n {
                let (qi, qc) = (q / (2 * w), q % (2 * w));
                let (ki, kc) = (k / (2 * w), k % (2 * w));
                if qc >= w && kc < w {
                    assert_eq!(sub.scores[(qi * w + qc - w, ki * w + kc)], a.scores[(q, k)]);
                    seen += 1;
                }
            }
        }
        assert_eq!(seen, (h * w) * (h * w));
    }
}

#[test]
fn tar2ref_examples() {
    let shape = grid(2, 2);
    let identity = AttentionMap::new(shape.stitched(), shape.stitched(), AttentionKind::Softmax, Mat::from_fn(8, 8, |r, c| (r == c) as u8 as f64)).unwrap();
    assert!(extract_tar2ref(&identity, shape).unwrap().scores.as_slice().iter().all(|&x| x == 0.0));

    // target (0,0) is stitched index 2; reference (0,1) is stitched index 1
    let mut m = Mat::from_fn(8, 8, |r, c| (r == c) as u8 as f64);
    m.row_mut(2).fill(0.0);
    m.row_mut(2)[1] = 1.0;
    let a = AttentionMap::new(shape.stitched(), shape.stitched(), AttentionKind::Softmax, m).unwrap();
    assert_eq!(extract_tar2ref(&a, shape).unwrap().scores.row(0), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn aggregation_commutes_with_layer_order() {
    let shape = grid(3, 3);
    let n = shape.token_count();
    let mut rng = SplitMix64::new(5);
    let layers: Vec<AttentionMap> = (0..4)
        .map(|_| AttentionMap::new(shape.stitched(), shape.stitched(), AttentionKind::Scores, Mat::from_fn(n, n, |_, _| rng.next_f64())).unwrap())
        .collect();
    let forward = extract_tar2ref(&aggregate_layers(&layers).unwrap(), shape).unwrap();
    let mut reversed = layers.clone();
    reversed.reverse();
    let backward = extract_tar2ref(&aggregate_layers(&reversed).unwrap(), shape).unwrap();
    assert!(forward.scores.max_abs_diff(&backward.scores) < 1e-12);
    let copies = aggregate_layers(&vec![layers[0].clone(); 3]).unwrap();
    assert!(copies.scores.max_abs_diff(&layers[0].scores.scale(3.0)) < 1e-12);
}

#[test]
fn accumulation_matches_one_shot_sum() {
    let shape = grid(8, 8);
    let n = shape.half_len();
    let mut rng = SplitMix64::new(77);
    let mut c = MatchingMap::zeros(shape);
    let mut oracle = vec![0.0; n * n];
    for _ in 0..50 {
        let a = Mat::from_fn(n, n, |_, _| rng.next_f64() / n as f64);
        for (o, x) in oracle.iter_mut().zip(a.as_slice()) {
            *o += x;
        }
        c = accumulate_matching(&c, &AttentionMap::new(shape.half(), shape.half(), AttentionKind::Scores, a).unwrap()).unwrap();
    }
    let max_err = c.values.as_slice().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(max_err < 1e-9, "{max_err}");
}

#[test]
fn estimate_matches_argmax_oracle_on_1000_maps() {
    let shape = grid(8, 8);
    let mut rng = SplitMix64::new(2024);
    for _ in 0..1000 {
        let c = random_matching(shape, &mut rng);
        let p = estimate(&c).unwrap();
        for k in 0..shape.half_len() {
            let expected = argmax_oracle(c.values.row(k)).map(|r| TokenCoord::new(r / 8, r % 8));
            assert_eq!(p.entries[k].inlier(), expected);
            if expected.is_none() {
                assert_eq!(p.entries[k], Correspondence::Unmatched);
            }
        }
    }
}

#[test]
fn estimate_on_6x6_and_tie_break() {
    let shape = grid(6, 6);
    let mut rng = SplitMix64::new(9);
    let c = MatchingMap::new(shape, Mat::from_fn(36, 36, |_, _| rng.next_f64())).unwrap();
    let p = estimate(&c).unwrap();
    for k in 0..36 {
        let r = argmax_oracle(c.values.row(k)).unwrap();
        assert_eq!(p.entries[k], Correspondence::Inlier(TokenCoord::new(r / 6, r % 6)));
    }
    let mut v = Mat::zeros(36, 36);
    v[(0, 3)] = 2.0;
    v[(0, 5)] = 2.0;
    let p = estimate(&MatchingMap::new(shape, v).unwrap()).unwrap();
    assert_eq!(p.entries[0], Correspondence::Inlier(TokenCoord::new(0, 3)));
}

#[test]
fn filter_matches_counting_oracle_on_1000_maps() {
    let shape = grid(8, 8);
    let mut rng = SplitMix64::new(4242);
    for round in 0..1000 {
        // Restrict targets to a few reference tokens so dominant tokens occur.
        let spread = 2 + round % 20;
        let coords: Vec<Option<TokenCoord>> = (0..64)
            .map(|_| (rng.below(8) != 0).then(|| {
                let r = rng.below(spread);
                TokenCoord::new(r / 8, r % 8)
            }))
            .collect();
        let p = CorrespondenceField::from_coords(shape, &coords).unwrap();
        let threshold = 1 + rng.below(6);
        let f = filter_outliers(&p, threshold);
        for k in 0..64 {
            let expected = match coords[k] {
                None => Correspondence::Unmatched,
                Some(c) => {
                    let mut count = 0;
                    for other in &coords {
                        if *other == Some(c) {
                            count += 1;
                        }
                    }
                    if count > threshold { Correspondence::Outlier(c) } else { Correspondence::Inlier(c) }
                }
            };
            assert_eq!(f.entries[k], expected);
        }
    }
}

#[test]
fn filter_boundary_is_strict() {
    let shape = grid(4, 4);
    let hub = TokenCoord::new(1, 1);
    for (n, outlier) in [(5, true), (4, false)] {
        let mut coords = vec![None; 16];
        coords.iter_mut().take(n).for_each(|c| *c = Some(hub));
        let f = filter_outliers(&CorrespondenceField::from_coords(shape, &coords).unwrap(), 4);
        assert_eq!(f.count_outliers(), if outlier { n } else { 0 });
    }
}

#[test]
fn smoothing_hand_example() {
    let shape = grid(8, 8);
    let center = TokenCoord::new(1, 1);
    let mut coords = vec![None; shape.half_len()];
    for i in 0..3 {
        for j in 0..3 {
            let here = TokenCoord::new(i, j);
            coords[shape.half_index(here)] = Some(if here == center { TokenCoord::new(6, 6) } else { TokenCoord::new(i + 1, j) });
        }
    }
    let p = CorrespondenceField::from_coords(shape, &coords).unwrap();
    let d = smoothed_displacement(&p, center, 1).unwrap();
    assert!((d[0] - 13.0 / 9.0).abs() < 1e-12);
    assert!((d[1] - 5.0 / 9.0).abs() < 1e-12);
    assert_eq!(smooth(&p, 1).get(center), Correspondence::Inlier(TokenCoord::new(2, 2)));
}

#[test]
fn mask_suppression_and_boost() {
    let shape = grid(4, 4);
    let n = shape.token_count();
    let mut rng = SplitMix64::new(31);
    for _ in 0..100 {
        let coords: Vec<Option<TokenCoord>> = (0..16).map(|_| Some(TokenCoord::new(rng.below(4), rng.below(4)))).collect();
        let p = CorrespondenceField::from_coords(shape, &coords).unwrap();
        let cfg = GuidanceConfig { win_a: 0, ..GuidanceConfig::default() };
        let m = build_attention_mask(&p, &cfg, shape).unwrap();
        let logits = AttentionMap::new(shape.stitched(), shape.stitched(), AttentionKind::Logits, Mat::from_fn(n, n, |_, _| rng.uniform(-4.0, 4.0))).unwrap();
        let base = apply_mask(&logits, &AttentionMask::zeros(shape), 16).unwrap();
        let masked = apply_mask(&logits, &m, 16).unwrap();
        for q in 0..n {
            for k in 0..n {
                let v = m.values[(q, k)];
                if v < 0.0 {
                    assert!(masked.scores[(q, k)] < 1e-6);
                } else if v > 0.0 {
                    assert!(masked.scores[(q, k)] > base.scores[(q, k)]);
                }
            }
        }
    }
}

#[test]
fn objective_prefers_aligned_attention() {
    let shape = grid(3, 3);
    let coords: Vec<Option<TokenCoord>> = shape.half_tokens().map(|c| Some(TokenCoord::new(c.i, (c.j + 1) % 3))).collect();
    let p = CorrespondenceField::from_coords(shape, &coords).unwrap();
    let aligned = Mat::from_fn(9, 9, |r, c| if coords[r].map(|t| shape.half_index(t)) == Some(c) { 0.92 } else { 0.01 });
    let swapped = Mat::from_fn(9, 9, |r, c| if coords[r].map(|t| shape.half_index(t)) == Some(c) { 0.0 } else { 0.125 });
    let s = |m: Mat| objective_s(&AttentionMap::new(shape.half(), shape.half(), AttentionKind::Scores, m).unwrap(), &p).unwrap();
    assert!(s(aligned) < s(swapped));
    let none = CorrespondenceField::unmatched(shape);
    assert_eq!(objective_s(&AttentionMap::new(shape.half(), shape.half(), AttentionKind::Scores, Mat::filled(9, 9, 0.1)).unwrap(), &none).unwrap(), 0.0);
}

#[test]
fn ddim_inversion_round_trip() {
    let schedule = build_schedule(50).unwrap();
    let mut rng = SplitMix64::new(3);
    let x0 = Mat::from_fn(16, 4, |_, _| rng.normal());
    let eps = Mat::from_fn(16, 4, |_, _| rng.normal());
    for t in [2, 10, 50] {
        let ab = schedule.alpha_bar(t);
        let z_t = x0.scale(ab.sqrt()).add(&eps.scale((1.0 - ab).sqrt()));
        let z_prev = schedule.ddim_step(&x0, &eps, t);
        let x0_back = schedule.x0_from_eps(&z_prev, &eps, t - 1);
        assert!(x0_back.max_abs_diff(&x0) < 1e-9);
        assert!(schedule.eps_from_x0(&z_t, &x0, t).max_abs_diff(&eps) < 1e-9);
    }
}

#[test]
fn count_oracle_consistency() {
    // Counting with a HashMap agrees with the filter on a field of pairs.
    let shape = grid(8, 8);
    let mut rng = SplitMix64::new(8);
    let coords: Vec<Option<TokenCoord>> = (0..64).map(|_| Some(TokenCoord::new(rng.below(2), rng.below(2)))).collect();
    let mut counts: HashMap<TokenCoord, usize> = HashMap::new();
    coords.iter().flatten().for_each(|c| *counts.entry(*c).or_default() += 1);
    let f = filter_outliers(&CorrespondenceField::from_coords(shape, &coords).unwrap(), 4);
    let expected_outliers: usize = counts.values().filter(|&&n| n > 4).sum();
    assert_eq!(f.count_outliers(), expected_outliers);
}
