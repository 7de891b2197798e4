//! Saliency evaluation: MAE, PR curve, F-measure, E-measure, S-measure.

mod directory;

pub use directory::{
    evaluate_directory, pr_csv, write_pr_csv, ImageEntry, MetricMeans, MetricReport, PrPoint,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA2: f64 = 0.3;
pub const EPS: f64 = 1e-8;
pub const LEVELS: usize = 256;
/// Gray level at or above which an 8-bit mask pixel is foreground.
pub const MASK_THRESHOLD: u8 = 128;

/// Prediction in [0, 1] (values are clamped on construction).
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height * width != data.len() || data.is_empty() {
            return Err(Error::Metric(format!(
                "saliency map {height}x{width} does not match {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Metric(
                "saliency map contains non-finite values".into(),
            ));
        }
        Ok(SaliencyMap {
            height,
            width,
            data: data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn from_gray(height: usize, width: usize, gray: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            gray.iter().map(|&v| v as f64 / 255.0).collect(),
        )
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Binary ground truth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl GroundTruth {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if height * width != data.len() || data.is_empty() {
            return Err(Error::Metric(format!(
                "ground truth {height}x{width} does not match {} values",
                data.len()
            )));
        }
        Ok(GroundTruth {
            height,
            width,
            data,
        })
    }

    pub fn from_gray(height: usize, width: usize, gray: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            gray.iter().map(|&v| v >= MASK_THRESHOLD).collect(),
        )
    }

    pub fn positives(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// The mask as a map of 0s and 1s.
    pub fn as_map(&self) -> SaliencyMap {
        SaliencyMap {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

fn check(s: &SaliencyMap, g: &GroundTruth) -> Result<()> {
    if (s.height, s.width) != (g.height, g.width) {
        return Err(Error::Metric(format!(
            "prediction {}x{} vs ground truth {}x{}",
            s.height, s.width, g.height, g.width
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Max,
    Mean,
    Adaptive,
}

pub fn threshold(k: usize) -> f64 {
    k as f64 / 255.0
}

/// Per-image adaptive threshold `min(2·mean(S), 1)`.
pub fn adaptive_threshold(s: &SaliencyMap) -> f64 {
    (2.0 * s.mean()).min(1.0)
}

/// A pixel is predicted salient at threshold `t` iff `s ≥ t` and `s > 0`.
#[inline]
pub fn binarize(s: f64, t: f64) -> bool {
    s >= t && s > 0.0
}

/// Number of thresholds `k/255` (k = 0..=255) a value passes.
fn levels_passed(s: f64) -> usize {
    if s <= 0.0 {
        return 0;
    }
    let mut k = ((s * 255.0).floor() as usize).min(255);
    while k < 255 && threshold(k + 1) <= s {
        k += 1;
    }
    while k > 0 && threshold(k) > s {
        k -= 1;
    }
    k + 1
}

/// Confusion counts at one threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    /// Ground-truth positives.
    pub pos: usize,
    pub total: usize,
}

impl Counts {
    pub fn at(s: &SaliencyMap, g: &GroundTruth, t: f64) -> Self {
        let mut c = Counts {
            tp: 0,
            fp: 0,
            pos: g.positives(),
            total: g.data.len(),
        };
        for (&v, &gt) in s.data.iter().zip(&g.data) {
            if binarize(v, t) {
                if gt {
                    c.tp += 1;
                } else {
                    c.fp += 1;
                }
            }
        }
        c
    }

    /// `TP/(TP+FP)`, defined as 1 when nothing is predicted.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> Option<f64> {
        (self.pos > 0).then(|| self.tp as f64 / self.pos as f64)
    }

    pub fn f_beta(&self) -> Option<f64> {
        let (p, r) = (self.precision(), self.recall()?);
        Some(f_beta(p, r))
    }

    /// Mean enhanced alignment of the binarized prediction with the truth.
    pub fn e_measure(&self) -> f64 {
        let n = self.total as f64;
        let pred_pos = (self.tp + self.fp) as f64;
        let (ms, mg) = (pred_pos / n, self.pos as f64 / n);
        let fn_ = (self.pos - self.tp) as f64;
        let tn = n - pred_pos - fn_;
        let enhanced = |s: f64, g: f64| {
            let (a, b) = (s - ms, g - mg);
            let xi = if a == 0.0 && b == 0.0 {
                1.0
            } else {
                2.0 * a * b / (a * a + b * b + EPS)
            };
            (xi + 1.0).powi(2) / 4.0
        };
        (self.tp as f64 * enhanced(1.0, 1.0)
            + self.fp as f64 * enhanced(1.0, 0.0)
            + fn_ * enhanced(0.0, 1.0)
            + tn * enhanced(0.0, 0.0))
            / n
    }
}

/// `(1+β²)PR/(β²P+R)` with β² = 0.3; zero when both are zero.
pub fn f_beta(p: f64, r: f64) -> f64 {
    let den = BETA2 * p + r;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + BETA2) * p * r / den
    }
}

/// Counts at all 256 thresholds in one pass.
pub fn counts_curve(s: &SaliencyMap, g: &GroundTruth) -> Result<Vec<Counts>> {
    check(s, g)?;
    let mut fg = [0usize; LEVELS + 1];
    let mut bg = [0usize; LEVELS + 1];
    for (&v, &gt) in s.data.iter().zip(&g.data) {
        let l = levels_passed(v);
        if gt {
            fg[l] += 1;
        } else {
            bg[l] += 1;
        }
    }
    // pixels passing threshold k are those with levels_passed > k
    let mut out = vec![
        Counts {
            tp: 0,
            fp: 0,
            pos: g.positives(),
            total: g.data.len()
        };
        LEVELS
    ];
    let (mut tp, mut fp) = (0, 0);
    for k in (0..LEVELS).rev() {
        tp += fg[k + 1];
        fp += bg[k + 1];
        out[k].tp = tp;
        out[k].fp = fp;
    }
    Ok(out)
}

pub fn mae(s: &SaliencyMap, g: &GroundTruth) -> Result<f64> {
    check(s, g)?;
    let sum: f64 = s
        .data
        .iter()
        .zip(&g.data)
        .map(|(&v, &b)| (v - if b { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(sum / s.data.len() as f64)
}

/// (precision, recall) at thresholds k/255, k = 0..=255. Undefined when the
/// ground truth has no foreground.
pub fn pr_curve(s: &SaliencyMap, g: &GroundTruth) -> Result<Vec<(f64, f64)>> {
    if g.positives() == 0 {
        return Err(Error::Metric(
            "recall is undefined for an all-background ground truth".into(),
        ));
    }
    Ok(counts_curve(s, g)?
        .iter()
        .map(|c| (c.precision(), c.recall().unwrap_or(0.0)))
        .collect())
}

pub fn f_measure(s: &SaliencyMap, g: &GroundTruth, mode: Mode) -> Result<f64> {
    if g.positives() == 0 {
        return Err(Error::Metric(
            "F-measure is undefined for an all-background ground truth".into(),
        ));
    }
    match mode {
        Mode::Adaptive => {
            check(s, g)?;
            Ok(Counts::at(s, g, adaptive_threshold(s))
                .f_beta()
                .unwrap_or(0.0))
        }
        _ => {
            let f: Vec<f64> = counts_curve(s, g)?
                .iter()
                .map(|c| c.f_beta().unwrap_or(0.0))
                .collect();
            Ok(reduce(&f, mode))
        }
    }
}

pub fn e_measure(s: &SaliencyMap, g: &GroundTruth, mode: Mode) -> Result<f64> {
    match mode {
        Mode::Adaptive => {
            check(s, g)?;
            Ok(Counts::at(s, g, adaptive_threshold(s)).e_measure())
        }
        _ => {
            let e: Vec<f64> = counts_curve(s, g)?.iter().map(Counts::e_measure).collect();
            Ok(reduce(&e, mode))
        }
    }
}

fn reduce(v: &[f64], mode: Mode) -> f64 {
    match mode {
        Mode::Max => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        _ => v.iter().sum::<f64>() / v.len() as f64,
    }
}

pub const S_ALPHA: f64 = 0.5;

/// Structure measure: 0.5·object-aware + 0.5·region-aware similarity.
pub fn s_measure(s: &SaliencyMap, g: &GroundTruth) -> Result<f64> {
    check(s, g)?;
    let n = g.data.len() as f64;
    let y = g.positives() as f64 / n;
    let q = if y == 0.0 {
        1.0 - s.mean()
    } else if y == 1.0 {
        s.mean()
    } else {
        S_ALPHA * object_score(s, g, y) + (1.0 - S_ALPHA) * region_score(s, g)
    };
    Ok(q.clamp(0.0, 1.0))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn object(v: &[f64]) -> f64 {
    let (m, sd) = mean_std(v);
    2.0 * m / (m * m + 1.0 + sd + EPS)
}

fn object_score(s: &SaliencyMap, g: &GroundTruth, y: f64) -> f64 {
    let fg: Vec<f64> = s
        .data
        .iter()
        .zip(&g.data)
        .filter(|(_, &b)| b)
        .map(|(&v, _)| v)
        .collect();
    let bg: Vec<f64> = s
        .data
        .iter()
        .zip(&g.data)
        .filter(|(_, &b)| !b)
        .map(|(&v, _)| 1.0 - v)
        .collect();
    y * object(&fg) + (1.0 - y) * object(&bg)
}

/// Round half away from zero.
fn round_half_away(v: f64) -> usize {
    v.round() as usize
}

/// 1-based foreground centroid `(x, y)`; the quadrant split puts columns
/// `0..x` left and rows `0..y` on top.
pub fn centroid(g: &GroundTruth) -> (usize, usize) {
    let total = g.positives();
    if total == 0 {
        return (
            round_half_away(g.width as f64 / 2.0),
            round_half_away(g.height as f64 / 2.0),
        );
    }
    let (mut sx, mut sy) = (0f64, 0f64);
    for (i, &b) in g.data.iter().enumerate() {
        if b {
            sx += (i % g.width + 1) as f64;
            sy += (i / g.width + 1) as f64;
        }
    }
    (
        round_half_away(sx / total as f64),
        round_half_away(sy / total as f64),
    )
}

fn ssim(s: &[f64], g: &[f64]) -> f64 {
    let n = s.len() as f64;
    let x = s.iter().sum::<f64>() / n;
    let y = g.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in s.iter().zip(g) {
        sxx += (a - x).powi(2);
        syy += (b - y).powi(2);
        sxy += (a - x) * (b - y);
    }
    let d = n - 1.0 + EPS;
    let (sxx, syy, sxy) = (sxx / d, syy / d, sxy / d);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sxx + syy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn region_score(s: &SaliencyMap, g: &GroundTruth) -> f64 {
    let (w, h) = (g.width, g.height);
    let (cx, cy) = centroid(g);
    let gm = g.as_map();
    let area = (w * h) as f64;
    let quads = [
        (0, cy, 0, cx),
        (0, cy, cx, w),
        (cy, h, 0, cx),
        (cy, h, cx, w),
    ];
    let mut score = 0.0;
    for (r0, r1, c0, c1) in quads {
        if r1 <= r0 || c1 <= c0 {
            continue;
        }
        let mut ps = Vec::with_capacity((r1 - r0) * (c1 - c0));
        let mut pg = Vec::with_capacity(ps.capacity());
        for r in r0..r1 {
            ps.extend_from_slice(&s.data[r * w + c0..r * w + c1]);
            pg.extend_from_slice(&gm.data[r * w + c0..r * w + c1]);
        }
        score += ps.len() as f64 / area * ssim(&ps, &pg);
    }
    score
}

/// All measures for one image. F-measures and the PR curve are `None` when
/// the ground truth has no foreground.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub mae: f64,
    pub s_alpha: f64,
    pub f_max: Option<f64>,
    pub f_mean: Option<f64>,
    pub f_adaptive: Option<f64>,
    pub e_max: f64,
    pub e_mean: f64,
    pub e_adaptive: f64,
    #[serde(skip)]
    pub pr: Option<Vec<(f64, f64)>>,
}

pub fn evaluate_pair(s: &SaliencyMap, g: &GroundTruth) -> Result<ImageMetrics> {
    let curve = counts_curve(s, g)?;
    let e: Vec<f64> = curve.iter().map(Counts::e_measure).collect();
    let adaptive = Counts::at(s, g, adaptive_threshold(s));
    let has_fg = g.positives() > 0;
    let f: Option<Vec<f64>> =
        has_fg.then(|| curve.iter().map(|c| c.f_beta().unwrap_or(0.0)).collect());
    Ok(ImageMetrics {
        mae: mae(s, g)?,
        s_alpha: s_measure(s, g)?,
        f_max: f.as_ref().map(|f| reduce(f, Mode::Max)),
        f_mean: f.as_ref().map(|f| reduce(f, Mode::Mean)),
        f_adaptive: has_fg.then(|| adaptive.f_beta().unwrap_or(0.0)),
        e_max: reduce(&e, Mode::Max),
        e_mean: reduce(&e, Mode::Mean),
        e_adaptive: adaptive.e_measure(),
        pr: has_fg.then(|| {
            curve
                .iter()
                .map(|c| (c.precision(), c.recall().unwrap_or(0.0)))
                .collect()
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(v: &[f64], w: usize) -> SaliencyMap {
        SaliencyMap::new(v.len() / w, w, v.to_vec()).unwrap()
    }

    fn gt(v: &[u8], w: usize) -> GroundTruth {
        GroundTruth::new(v.len() / w, w, v.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn levels_match_direct_comparison() {
        for i in 0..=2000 {
            let s = i as f64 / 2000.0;
            let direct = (0..LEVELS).filter(|&k| binarize(s, threshold(k))).count();
            assert_eq!(levels_passed(s), direct, "s = {s}");
        }
        assert_eq!(levels_passed(1.0 / 255.0), 2);
    }

    #[test]
    fn mae_basics() {
        let g = gt(&[1, 1, 0, 0], 2);
        assert_eq!(mae(&map(&[0.5; 4], 2), &g).unwrap(), 0.5);
        assert_eq!(mae(&map(&[0.0, 0.0, 1.0, 1.0], 2), &g).unwrap(), 1.0);
        assert!(mae(&map(&[0.5; 6], 3), &g).is_err());
    }

    #[test]
    fn constant_one_prediction_curve() {
        let g = gt(&[1, 0, 0, 0, 1, 0, 0, 0], 4);
        let pr = pr_curve(&map(&[1.0; 8], 4), &g).unwrap();
        for &(p, r) in &pr {
            assert_eq!((p, r), (0.25, 1.0));
        }
    }

    #[test]
    fn zero_prediction_scores_zero_f() {
        let g = gt(&[1, 0, 0, 1], 2);
        let s = map(&[0.0; 4], 2);
        for m in [Mode::Max, Mode::Mean, Mode::Adaptive] {
            assert_eq!(f_measure(&s, &g, m).unwrap(), 0.0);
        }
    }

    #[test]
    fn degenerate_structure_rules() {
        let bg = gt(&[0; 4], 2);
        assert_eq!(s_measure(&map(&[0.0; 4], 2), &bg).unwrap(), 1.0);
        assert!((s_measure(&map(&[0.2, 0.4, 0.0, 0.2], 2), &bg).unwrap() - 0.8).abs() < 1e-12);
        let fg = gt(&[1; 4], 2);
        assert!((s_measure(&map(&[0.2, 0.4, 0.0, 0.2], 2), &fg).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(
            e_measure(&map(&[1.0; 4], 2), &fg, Mode::Adaptive).unwrap(),
            1.0
        );
    }

    #[test]
    fn centroid_is_one_based() {
        // single foreground pixel at row 0, column 2
        let g = gt(&[0, 0, 1, 0], 4);
        assert_eq!(centroid(&g), (3, 1));
    }
}
