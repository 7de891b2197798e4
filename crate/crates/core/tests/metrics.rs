//! Metric values against a brute-force per-pixel oracle and hand arithmetic.

use corrnet_core::metrics::{
    self, e_measure, evaluate_directory, evaluate_pair, f_measure, mae, pr_curve, s_measure, Mode,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

mod common;

use common::metrics_oracle::{fixture16, fixture4, oracle_gaps, pair, random_pair};

fn check_against_oracle(s: &[f64], g: &[f64], w: usize) {
    for (name, gap) in oracle_gaps(s, g, w) {
        assert!(gap <= TOL, "{name}: off by {gap}");
    }
}

#[test]
fn four_by_four_matches_oracle() {
    let (s, g) = fixture4();
    check_against_oracle(&s, &g, 4);
}

#[test]
fn four_by_four_hand_counts() {
    let (s, g) = fixture4();
    let (sm, gt) = pair(&s, &g, 4);
    // mean 0.3875 → threshold 0.775: TP 4, FP 1, FN 4 → P 0.8, R 0.5
    let f_adp = 1.3 * 0.8 * 0.5 / (0.3 * 0.8 + 0.5);
    assert!((f_measure(&sm, &gt, Mode::Adaptive).unwrap() - f_adp).abs() < TOL);
    assert!((f_measure(&sm, &gt, Mode::Max).unwrap() - f_adp).abs() < TOL);
    // k ≤ 51 selects everything (P 0.5, R 1); 52..=204 gives f_adp; above 0.8 nothing
    let f_all = 1.3 * 0.5 / (0.3 * 0.5 + 1.0);
    let f_mean = (52.0 * f_all + 153.0 * f_adp) / 256.0;
    assert!((f_measure(&sm, &gt, Mode::Mean).unwrap() - f_mean).abs() < TOL);
    // |S−G|: 4×0.2 + 1×0.8 + 7×0.2 + 4×0.8 = 6.2 over 16
    assert!((mae(&sm, &gt).unwrap() - 6.2 / 16.0).abs() < TOL);
}

#[test]
fn sixteen_by_sixteen_matches_oracle() {
    let (s, g) = fixture16();
    check_against_oracle(&s, &g, 16);
    let (sm, gt) = pair(&s, &g, 16);
    assert!(s_measure(&sm, &gt).unwrap() > 0.8);
    let (_, g_self) = pair(&g, &g, 16);
    assert!(s_measure(&gt.as_map(), &g_self).unwrap() > 0.95);
}

#[test]
fn inverted_prediction_has_zero_alignment() {
    let (_, g) = fixture4();
    let inv: Vec<f64> = g.iter().map(|v| 1.0 - v).collect();
    let (sm, gt) = pair(&inv, &g, 4);
    // every pixel has ξ = −1
    assert!(e_measure(&sm, &gt, Mode::Adaptive).unwrap() < 1e-6);
    assert!((mae(&sm, &gt).unwrap() - 1.0).abs() < TOL);
}

#[test]
fn half_gray_prediction_mae() {
    let g = [1.0, 1.0, 0.0, 0.0];
    let (sm, gt) = pair(&[0.5; 4], &g, 2);
    assert_eq!(mae(&sm, &gt).unwrap(), 0.5);
}

#[test]
fn degenerate_ground_truth() {
    let (sm, gt) = pair(&[0.0; 16], &[0.0; 16], 4);
    assert_eq!(s_measure(&sm, &gt).unwrap(), 1.0);
    assert!(pr_curve(&sm, &gt).is_err());
    assert!(f_measure(&sm, &gt, Mode::Max).is_err());
    let m = evaluate_pair(&sm, &gt).unwrap();
    assert!(m.f_max.is_none() && m.pr.is_none());
    assert_eq!(m.e_adaptive, 1.0);

    let (sm, gt) = pair(&[1.0; 16], &[1.0; 16], 4);
    assert_eq!(e_measure(&sm, &gt, Mode::Adaptive).unwrap(), 1.0);
    assert_eq!(s_measure(&sm, &gt).unwrap(), 1.0);
}

#[test]
fn random_pairs_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let (s, g) = random_pair(&mut rng, 7, 9);
        check_against_oracle(&s, &g, 9);
    }
}

#[test]
fn perfect_prediction_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (_, g) = random_pair(&mut rng, 12, 10);
        let (sm, gt) = pair(&g, &g, 10);
        let m = evaluate_pair(&sm, &gt).unwrap();
        assert_eq!(m.mae, 0.0);
        assert!((m.s_alpha - 1.0).abs() < TOL, "{}", m.s_alpha);
        for v in [
            m.f_max.unwrap(),
            m.f_adaptive.unwrap(),
            m.e_max,
            m.e_adaptive,
        ] {
            assert!((v - 1.0).abs() < TOL, "{v}");
        }
        for (p, r) in pr_curve(&sm, &gt).unwrap().into_iter().take(255) {
            assert_eq!((p, r), (1.0, 1.0));
        }
    }
}

#[test]
fn constant_one_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (_, g) = random_pair(&mut rng, 8, 8);
    let ratio = g.iter().sum::<f64>() / 64.0;
    let (sm, gt) = pair(&[1.0; 64], &g, 8);
    for (p, r) in pr_curve(&sm, &gt).unwrap() {
        assert_eq!(r, 1.0);
        assert!((p - ratio).abs() < 1e-12);
    }
}

#[test]
fn one_hundred_random_pairs_ordering() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let (h, w) = (rng.random_range(2..20), rng.random_range(2..20));
        let (s, g) = random_pair(&mut rng, h, w);
        let (sm, gt) = pair(&s, &g, w);
        let m = evaluate_pair(&sm, &gt).unwrap();
        let (fmax, fmean, fadp) = (m.f_max.unwrap(), m.f_mean.unwrap(), m.f_adaptive.unwrap());
        assert!(fmax >= fmean && fmean >= 0.0);
        assert!(fmax >= fadp);
        assert!(m.e_max >= m.e_mean);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn measures_stay_in_unit_interval(
        w in 1usize..12,
        h in 1usize..12,
        seed in any::<u64>(),
        fg in 0.0f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
        let g: Vec<f64> = (0..h * w).map(|_| if rng.random_bool(fg) { 1.0 } else { 0.0 }).collect();
        let (sm, gt) = pair(&s, &g, w);
        let m = evaluate_pair(&sm, &gt).unwrap();
        let mut all = vec![m.mae, m.s_alpha, m.e_max, m.e_mean, m.e_adaptive];
        all.extend([m.f_max, m.f_mean, m.f_adaptive].into_iter().flatten());
        for v in all {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
        for (p, r) in m.pr.into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));
        }
        let inv: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
        let (si, _) = pair(&inv, &g, w);
        prop_assert!((mae(&sm, &gt).unwrap() + mae(&si, &gt).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recall_is_non_increasing(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, g) = random_pair(&mut rng, 6, 6);
        let (sm, gt) = pair(&s, &g, 6);
        let curve = pr_curve(&sm, &gt).unwrap();
        for k in 1..curve.len() {
            prop_assert!(curve[k].1 <= curve[k - 1].1);
        }
    }

    #[test]
    fn pixel_order_blind_measures(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, g) = random_pair(&mut rng, 5, 8);
        let mut order: Vec<usize> = (0..40).collect();
        for i in (1..40).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let ps: Vec<f64> = order.iter().map(|&i| s[i]).collect();
        let pg: Vec<f64> = order.iter().map(|&i| g[i]).collect();
        let (a, ga) = pair(&s, &g, 8);
        let (b, gb) = pair(&ps, &pg, 8);
        prop_assert!((mae(&a, &ga).unwrap() - mae(&b, &gb).unwrap()).abs() < 1e-12);
        for mode in [Mode::Max, Mode::Mean, Mode::Adaptive] {
            prop_assert!((f_measure(&a, &ga, mode).unwrap() - f_measure(&b, &gb, mode).unwrap()).abs() < 1e-12);
            prop_assert!((e_measure(&a, &ga, mode).unwrap() - e_measure(&b, &gb, mode).unwrap()).abs() < 1e-12);
        }
    }
}

mod directory {
    use super::*;
    use corrnet_core::data::image::{write_pnm, Image8};
    use std::path::Path;

    fn write_gray(path: &Path, w: usize, h: usize, data: Vec<u8>) {
        write_pnm(
            path,
            &Image8 {
                width: w,
                height: h,
                channels: 1,
                data,
            },
        )
        .unwrap();
    }

    fn fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let (pred, gt) = (dir.join("pred"), dir.join("gt"));
        std::fs::create_dir_all(&pred).unwrap();
        std::fs::create_dir_all(&gt).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for name in ["c", "a", "b"] {
            let g: Vec<u8> = (0..48)
                .map(|i| if (i % 8) < 3 && i >= 8 { 255 } else { 0 })
                .collect();
            let s: Vec<u8> = (0..48).map(|_| rng.random()).collect();
            write_gray(&gt.join(format!("{name}.pgm")), 8, 6, g);
            write_gray(&pred.join(format!("{name}.pgm")), 8, 6, s);
        }
        (pred, gt)
    }

    #[test]
    fn means_are_averages_of_per_image_values() {
        let dir = tempfile::tempdir().unwrap();
        let (pred, gt) = fixture(dir.path());
        let report = evaluate_directory(&pred, &gt).unwrap();
        let ids: Vec<&str> = report.images.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        let avg = |f: fn(&metrics::ImageMetrics) -> f64| {
            report.images.iter().map(|e| f(&e.metrics)).sum::<f64>() / 3.0
        };
        assert!((report.means.mae - avg(|m| m.mae)).abs() < 1e-12);
        assert!((report.means.s_alpha - avg(|m| m.s_alpha)).abs() < 1e-12);
        assert!((report.means.f_max.unwrap() - avg(|m| m.f_max.unwrap())).abs() < 1e-12);
        assert!((report.means.e_adaptive - avg(|m| m.e_adaptive)).abs() < 1e-12);
        assert_eq!(report.pr.len(), 256);
        let again = evaluate_directory(&pred, &gt).unwrap();
        assert_eq!(report.to_json().unwrap(), again.to_json().unwrap());
    }

    #[test]
    fn ground_truth_against_itself() {
        let dir = tempfile::tempdir().unwrap();
        let (_, gt) = fixture(dir.path());
        let report = evaluate_directory(&gt, &gt).unwrap();
        assert_eq!(report.means.mae, 0.0);
        assert!((report.means.f_max.unwrap() - 1.0).abs() < TOL);
    }

    #[test]
    fn resizes_and_warns() {
        let dir = tempfile::tempdir().unwrap();
        let (pred, gt) = fixture(dir.path());
        write_gray(&pred.join("a.pgm"), 4, 3, vec![200; 12]);
        write_gray(&pred.join("extra.pgm"), 4, 3, vec![0; 12]);
        std::fs::remove_file(pred.join("c.pgm")).unwrap();
        let report = evaluate_directory(&pred, &gt).unwrap();
        assert_eq!(report.images.len(), 2);
        assert!(report.images[0].resized && !report.images[1].resized);
        assert_eq!(report.warnings.len(), 2, "{:?}", report.warnings);
    }

    #[test]
    fn all_background_image_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let (pred, gt) = fixture(dir.path());
        write_gray(&gt.join("b.pgm"), 8, 6, vec![0; 48]);
        let report = evaluate_directory(&pred, &gt).unwrap();
        assert_eq!(report.pr_skipped, ["b"]);
        assert_eq!(report.images.len(), 3);
    }

    #[test]
    fn empty_intersection_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let (pred, gt) = fixture(dir.path());
        for name in ["a", "b", "c"] {
            std::fs::rename(
                pred.join(format!("{name}.pgm")),
                pred.join(format!("x{name}.pgm")),
            )
            .unwrap();
        }
        assert!(evaluate_directory(&pred, &gt).is_err());
        assert!(evaluate_directory(&dir.path().join("missing"), &gt).is_err());
    }
}
