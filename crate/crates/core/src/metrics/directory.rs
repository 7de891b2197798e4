use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate_pair, threshold, GroundTruth, ImageMetrics, SaliencyMap, LEVELS};
use crate::data::dataset::files_by_stem;
use crate::data::image::read_pnm;
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{ops::resize_bilinear, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    /// The prediction was bilinearly resized to the ground-truth size.
    pub resized: bool,
    #[serde(flatten)]
    pub metrics: ImageMetrics,
}

/// Dataset means of per-image values. F-measures average over images that
/// have foreground and are `None` when none do.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub s_alpha: f64,
    pub f_max: Option<f64>,
    pub f_mean: Option<f64>,
    pub f_adaptive: Option<f64>,
    pub e_max: f64,
    pub e_mean: f64,
    pub e_adaptive: f64,
    pub mae: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub images: Vec<ImageEntry>,
    pub means: MetricMeans,
    /// Mean per-image precision/recall at each of the 256 thresholds.
    pub pr: Vec<PrPoint>,
    /// Images left out of the PR curve and F-measures (no foreground).
    pub pr_skipped: Vec<String>,
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn from_images(images: Vec<ImageEntry>, warnings: Vec<String>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Metric(
                "no prediction/ground-truth pairs to evaluate".into(),
            ));
        }
        let n = images.len() as f64;
        let mean = |f: &dyn Fn(&ImageMetrics) -> f64| {
            images.iter().map(|e| f(&e.metrics)).sum::<f64>() / n
        };
        let defined_mean = |f: &dyn Fn(&ImageMetrics) -> Option<f64>| {
            let v: Vec<f64> = images.iter().filter_map(|e| f(&e.metrics)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let means = MetricMeans {
            s_alpha: mean(&|m| m.s_alpha),
            f_max: defined_mean(&|m| m.f_max),
            f_mean: defined_mean(&|m| m.f_mean),
            f_adaptive: defined_mean(&|m| m.f_adaptive),
            e_max: mean(&|m| m.e_max),
            e_mean: mean(&|m| m.e_mean),
            e_adaptive: mean(&|m| m.e_adaptive),
            mae: mean(&|m| m.mae),
        };
        let curves: Vec<&Vec<(f64, f64)>> = images
            .iter()
            .filter_map(|e| e.metrics.pr.as_ref())
            .collect();
        let pr = if curves.is_empty() {
            Vec::new()
        } else {
            let m = curves.len() as f64;
            (0..LEVELS)
                .map(|k| PrPoint {
                    threshold: threshold(k),
                    precision: curves.iter().map(|c| c[k].0).sum::<f64>() / m,
                    recall: curves.iter().map(|c| c[k].1).sum::<f64>() / m,
                })
                .collect()
        };
        let pr_skipped = images
            .iter()
            .filter(|e| e.metrics.pr.is_none())
            .map(|e| e.id.clone())
            .collect();
        Ok(MetricReport {
            images,
            means,
            pr,
            pr_skipped,
            warnings,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// `threshold,precision,recall` lines after a header.
pub fn pr_csv(pr: &[PrPoint]) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in pr {
        let _ = writeln!(out, "{:.6},{:.6},{:.6}", p.threshold, p.precision, p.recall);
    }
    out
}

pub fn write_pr_csv(path: &Path, pr: &[PrPoint]) -> Result<()> {
    std::fs::write(path, pr_csv(pr)).map_err(|e| Error::io(path, e))
}

fn load_pair(pred: &Path, gt: &Path) -> Result<(SaliencyMap, GroundTruth, bool)> {
    let g = read_pnm(gt)?;
    let truth = GroundTruth::from_gray(g.height, g.width, &g.gray())?;
    let p = read_pnm(pred)?;
    let gray: Vec<f64> = p.gray().iter().map(|&v| v as f64 / 255.0).collect();
    if (p.height, p.width) == (g.height, g.width) {
        return Ok((SaliencyMap::new(p.height, p.width, gray)?, truth, false));
    }
    let t = Tensor::new(&[1, 1, p.height, p.width], gray)?;
    let r = resize_bilinear(&t, g.height, g.width)?;
    Ok((
        SaliencyMap::new(g.height, g.width, r.into_data())?,
        truth,
        true,
    ))
}

/// Evaluates every prediction in `pred_dir` against the ground truth in
/// `gt_dir` with the same file stem. Unmatched files become warnings.
pub fn evaluate_directory(pred_dir: &Path, gt_dir: &Path) -> Result<MetricReport> {
    let mut warnings = Vec::new();
    let preds = files_by_stem(pred_dir, &mut warnings)?;
    let gts = files_by_stem(gt_dir, &mut warnings)?;
    let mut pairs = Vec::new();
    for (stem, p) in &preds {
        match gts.get(stem) {
            Some(g) => pairs.push((stem.clone(), p.clone(), g.clone())),
            None => warnings.push(format!("prediction `{stem}` has no ground truth")),
        }
    }
    for stem in gts.keys().filter(|s| !preds.contains_key(*s)) {
        warnings.push(format!("ground truth `{stem}` has no prediction"));
    }
    if pairs.is_empty() {
        return Err(Error::Metric(format!(
            "no matching files between {} and {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    let results = parallel::map_indexed(pairs.len(), |i| {
        let (id, p, g) = &pairs[i];
        let (s, truth, resized) = load_pair(p, g)?;
        Ok(ImageEntry {
            id: id.clone(),
            resized,
            metrics: evaluate_pair(&s, &truth)?,
        })
    });
    let images = results.into_iter().collect::<Result<Vec<_>>>()?;
    for e in images.iter().filter(|e| e.metrics.pr.is_none()) {
        warnings.push(format!(
            "`{}` has an all-background ground truth; PR and F-measure skipped",
            e.id
        ));
    }
    MetricReport::from_images(images, warnings)
}
