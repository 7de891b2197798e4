//! Reference implementations shared by the metric tests and the acceptance run.

use corrnet_core::metrics::{
    e_measure, f_measure, mae, pr_curve, s_measure, GroundTruth, Mode, SaliencyMap,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Straightforward reference implementation working on 2-D grids.
mod oracle {
    pub type Grid = Vec<Vec<f64>>;

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn flat(g: &Grid) -> Vec<f64> {
        g.iter().flatten().copied().collect()
    }

    pub fn thresholds() -> Vec<f64> {
        (0..256).map(|k| k as f64 / 255.0).collect()
    }

    fn bin(s: &Grid, t: f64) -> Grid {
        s.iter()
            .map(|r| {
                r.iter()
                    .map(|&v| if v > 0.0 && v >= t { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    pub fn pr(s: &Grid, g: &Grid, t: f64) -> (f64, f64) {
        let (b, g) = (flat(&bin(s, t)), flat(g));
        let tp: f64 = b.iter().zip(&g).map(|(x, y)| x * y).sum();
        let pred: f64 = b.iter().sum();
        let pos: f64 = g.iter().sum();
        let p = if pred == 0.0 { 1.0 } else { tp / pred };
        (p, tp / pos)
    }

    pub fn f(s: &Grid, g: &Grid, t: f64) -> f64 {
        let (p, r) = pr(s, g, t);
        if p + r == 0.0 {
            0.0
        } else {
            1.3 * p * r / (0.3 * p + r)
        }
    }

    pub fn e(s: &Grid, g: &Grid, t: f64) -> f64 {
        let (b, g) = (flat(&bin(s, t)), flat(g));
        let (mb, mg) = (mean(&b), mean(&g));
        let mut acc = 0.0;
        for (x, y) in b.iter().zip(&g) {
            let (ps, pg) = (x - mb, y - mg);
            let xi = if ps == 0.0 && pg == 0.0 {
                1.0
            } else {
                2.0 * ps * pg / (ps * ps + pg * pg + 1e-8)
            };
            acc += (xi + 1.0) * (xi + 1.0) / 4.0;
        }
        acc / b.len() as f64
    }

    pub fn adaptive(s: &Grid) -> f64 {
        (2.0 * mean(&flat(s))).min(1.0)
    }

    fn object(v: &[f64]) -> f64 {
        let m = mean(v);
        let sd = if v.len() > 1 {
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        2.0 * m / (m * m + 1.0 + sd + 1e-8)
    }

    fn ssim(s: &[f64], g: &[f64]) -> f64 {
        let n = s.len() as f64;
        let (x, y) = (mean(s), mean(g));
        let cov = |a: &[f64], ma: f64, b: &[f64], mb: f64| {
            a.iter()
                .zip(b)
                .map(|(p, q)| (p - ma) * (q - mb))
                .sum::<f64>()
                / (n - 1.0 + 1e-8)
        };
        let (vx, vy, vxy) = (cov(s, x, s, x), cov(g, y, g, y), cov(s, x, g, y));
        let alpha = 4.0 * x * y * vxy;
        let beta = (x * x + y * y) * (vx + vy);
        if alpha != 0.0 {
            alpha / (beta + 1e-8)
        } else if beta == 0.0 {
            1.0
        } else {
            0.0
        }
    }

    pub fn s_alpha(s: &Grid, g: &Grid) -> f64 {
        let (h, w) = (g.len(), g[0].len());
        let gf = flat(g);
        let y = mean(&gf);
        if y == 0.0 {
            return 1.0 - mean(&flat(s));
        }
        if y == 1.0 {
            return mean(&flat(s));
        }
        let mut fg = vec![];
        let mut bg = vec![];
        for r in 0..h {
            for c in 0..w {
                if g[r][c] == 1.0 {
                    fg.push(s[r][c]);
                } else {
                    bg.push(1.0 - s[r][c]);
                }
            }
        }
        let so = y * object(&fg) + (1.0 - y) * object(&bg);
        let total: f64 = gf.iter().sum();
        let col: f64 = (0..w)
            .map(|c| (c + 1) as f64 * (0..h).map(|r| g[r][c]).sum::<f64>())
            .sum();
        let row: f64 = (0..h)
            .map(|r| (r + 1) as f64 * g[r].iter().sum::<f64>())
            .sum();
        let (cx, cy) = (
            (col / total).round() as usize,
            (row / total).round() as usize,
        );
        let mut sr = 0.0;
        for (rows, cols) in [
            (0..cy, 0..cx),
            (0..cy, cx..w),
            (cy..h, 0..cx),
            (cy..h, cx..w),
        ] {
            let mut a = vec![];
            let mut b = vec![];
            for r in rows.clone() {
                for c in cols.clone() {
                    a.push(s[r][c]);
                    b.push(g[r][c]);
                }
            }
            if !a.is_empty() {
                sr += a.len() as f64 / (h * w) as f64 * ssim(&a, &b);
            }
        }
        (0.5 * so + 0.5 * sr).clamp(0.0, 1.0)
    }
}

pub fn to_grid(v: &[f64], w: usize) -> oracle::Grid {
    v.chunks(w).map(|r| r.to_vec()).collect()
}

pub fn pair(s: &[f64], g: &[f64], w: usize) -> (SaliencyMap, GroundTruth) {
    let h = s.len() / w;
    (
        SaliencyMap::new(h, w, s.to_vec()).unwrap(),
        GroundTruth::new(h, w, g.iter().map(|&v| v == 1.0).collect()).unwrap(),
    )
}

/// 4×4: ground truth has the top-left and bottom-right 2×2 quadrants on;
/// the prediction is 0.8 on the top-left quadrant plus one top-right pixel.
pub fn fixture4() -> (Vec<f64>, Vec<f64>) {
    let g = vec![
        1., 1., 0., 0., //
        1., 1., 0., 0., //
        0., 0., 1., 1., //
        0., 0., 1., 1.,
    ];
    let s = vec![
        0.8, 0.8, 0.8, 0.2, //
        0.8, 0.8, 0.2, 0.2, //
        0.2, 0.2, 0.2, 0.2, //
        0.2, 0.2, 0.2, 0.2,
    ];
    (s, g)
}

/// 16×16: a 6×6 foreground square at rows 4..10, columns 5..11 with a soft
/// prediction that bleeds one pixel around it.
pub fn fixture16() -> (Vec<f64>, Vec<f64>) {
    let mut g = vec![0.0; 256];
    let mut s = vec![0.05; 256];
    for r in 0..16 {
        for c in 0..16 {
            let inside = (4..10).contains(&r) && (5..11).contains(&c);
            let ring = (3..11).contains(&r) && (4..12).contains(&c);
            if inside {
                g[r * 16 + c] = 1.0;
                s[r * 16 + c] = 0.9 - 0.01 * ((r + c) % 3) as f64;
            } else if ring {
                s[r * 16 + c] = 0.4;
            }
        }
    }
    (s, g)
}

/// Absolute gap between each library metric and the oracle, by name.
pub fn oracle_gaps(s: &[f64], g: &[f64], w: usize) -> Vec<(&'static str, f64)> {
    let mut gaps = Vec::new();
    let (sm, gt) = pair(s, g, w);
    let (so, go) = (to_grid(s, w), to_grid(g, w));
    let ts = oracle::thresholds();
    let f: Vec<f64> = ts.iter().map(|&t| oracle::f(&so, &go, t)).collect();
    let e: Vec<f64> = ts.iter().map(|&t| oracle::e(&so, &go, t)).collect();
    let max = |v: &[f64]| v.iter().copied().fold(f64::MIN, f64::max);
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ta = oracle::adaptive(&so);
    let expected_mae = s.iter().zip(g).map(|(a, b)| (a - b).abs()).sum::<f64>() / s.len() as f64;

    let mut close = |name: &'static str, got: f64, want: f64| gaps.push((name, (got - want).abs()));
    close("mae", mae(&sm, &gt).unwrap(), expected_mae);
    close("f max", f_measure(&sm, &gt, Mode::Max).unwrap(), max(&f));
    close("f mean", f_measure(&sm, &gt, Mode::Mean).unwrap(), avg(&f));
    close(
        "f adaptive",
        f_measure(&sm, &gt, Mode::Adaptive).unwrap(),
        oracle::f(&so, &go, ta),
    );
    close("e max", e_measure(&sm, &gt, Mode::Max).unwrap(), max(&e));
    close("e mean", e_measure(&sm, &gt, Mode::Mean).unwrap(), avg(&e));
    close(
        "e adaptive",
        e_measure(&sm, &gt, Mode::Adaptive).unwrap(),
        oracle::e(&so, &go, ta),
    );
    close(
        "s alpha",
        s_measure(&sm, &gt).unwrap(),
        oracle::s_alpha(&so, &go),
    );
    for (k, (p, r)) in pr_curve(&sm, &gt).unwrap().into_iter().enumerate() {
        let (op, or) = oracle::pr(&so, &go, ts[k]);
        close("precision", p, op);
        close("recall", r, or);
    }
    gaps
}

pub fn random_pair(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    loop {
        let g: Vec<f64> = (0..h * w)
            .map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 })
            .collect();
        if g.contains(&1.0) && g.contains(&0.0) {
            let s = (0..h * w).map(|_| rng.random::<f64>()).collect();
            return (s, g);
        }
    }
}
