use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::image::{load_image, load_mask};
use crate::error::{Error, Result};
use crate::tensor::ops::{resize_bilinear, resize_nearest};
use crate::tensor::Tensor;

/// An RGB image (`3×H×W`, [0, 1]) with its binary mask (`1×H×W`).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub id: String,
}

impl Sample {
    pub fn new(image: Tensor<f32>, mask: Tensor<f32>, id: impl Into<String>) -> Result<Self> {
        match (image.shape(), mask.shape()) {
            ([3, h, w], [1, mh, mw]) if h == mh && w == mw => {}
            (a, b) => {
                return Err(Error::shape(format!(
                    "sample needs a 3×H×W image and 1×H×W mask, got {a:?} and {b:?}"
                )))
            }
        }
        Ok(Sample {
            image,
            mask,
            id: id.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn foreground_ratio(&self) -> f64 {
        self.mask.data().iter().filter(|&&v| v > 0.5).count() as f64 / self.mask.numel() as f64
    }
}

/// Image bilinear, mask nearest-neighbour then re-binarized.
pub fn resize(sample: &Sample, size: usize) -> Result<Sample> {
    if size == 0 || !size.is_multiple_of(16) {
        return Err(Error::InvalidArgument(format!(
            "resize target {size} is not a multiple of 16"
        )));
    }
    let (h, w) = (sample.height(), sample.width());
    let image = resize_bilinear(&sample.image.reshape(&[1, 3, h, w])?, size, size)?
        .into_reshaped(&[3, size, size])?;
    let mask = resize_nearest(&sample.mask.reshape(&[1, 1, h, w])?, size, size)?
        .into_reshaped(&[1, size, size])?
        .map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    Sample::new(image, mask, sample.id.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augment {
    Identity,
    HFlip,
    /// Quarter turn clockwise.
    Rot90,
    Rot180,
    Rot270,
}

impl Augment {
    pub const ALL: [Augment; 5] = [
        Augment::Identity,
        Augment::HFlip,
        Augment::Rot90,
        Augment::Rot180,
        Augment::Rot270,
    ];
}

/// Source pixel `(y, x)` that lands at destination `(i, j)` of an `h×w` plane.
fn source_of(op: Augment, h: usize, w: usize, i: usize, j: usize) -> (usize, usize) {
    match op {
        Augment::Identity => (i, j),
        Augment::HFlip => (i, w - 1 - j),
        Augment::Rot90 => (h - 1 - j, i),
        Augment::Rot180 => (h - 1 - i, w - 1 - j),
        Augment::Rot270 => (j, w - 1 - i),
    }
}

fn transform(t: &Tensor<f32>, op: Augment) -> Result<Tensor<f32>> {
    let [c, h, w] = match *t.shape() {
        [c, h, w] => [c, h, w],
        ref s => return Err(Error::shape(format!("expected C×H×W, got {s:?}"))),
    };
    let d = t.data();
    Tensor::new(
        &[c, h, w],
        (0..c * h * w)
            .map(|idx| {
                let (ch, i, j) = (idx / (h * w), idx / w % h, idx % w);
                let (y, x) = source_of(op, h, w, i, j);
                d[ch * h * w + y * w + x]
            })
            .collect(),
    )
}

/// Applies the same geometric transform to image and mask.
pub fn augment(sample: &Sample, op: Augment) -> Result<Sample> {
    if matches!(op, Augment::Rot90 | Augment::Rot270) && sample.height() != sample.width() {
        return Err(Error::InvalidArgument(format!(
            "{op:?} needs a square sample, got {}x{}",
            sample.height(),
            sample.width()
        )));
    }
    Ok(Sample {
        image: transform(&sample.image, op)?,
        mask: transform(&sample.mask, op)?,
        id: sample.id.clone(),
    })
}

pub const MIN_FOREGROUND: f64 = 0.02;
pub const MAX_FOREGROUND: f64 = 0.4;

#[derive(Clone, Copy, Debug)]
enum Shape {
    Disk { cy: f64, cx: f64, r: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Triangle([(f64, f64); 3]),
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Disk { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y <= y1 && x >= x0 && x <= x1,
            Shape::Triangle(p) => {
                let side = |a: (f64, f64), b: (f64, f64)| {
                    (b.1 - a.1) * (y - a.0) - (b.0 - a.0) * (x - a.1)
                };
                let (d0, d1, d2) = (side(p[0], p[1]), side(p[1], p[2]), side(p[2], p[0]));
                (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
            }
        }
    }

    fn random(rng: &mut ChaCha8Rng, size: f64) -> Shape {
        let cy = rng.random_range(0.15..0.85) * size;
        let cx = rng.random_range(0.15..0.85) * size;
        let s = rng.random_range(0.08..0.25) * size;
        match rng.random_range(0..3) {
            0 => Shape::Disk { cy, cx, r: s },
            1 => {
                let a = rng.random_range(0.5..1.5);
                Shape::Rect {
                    y0: cy - s * a,
                    x0: cx - s / a,
                    y1: cy + s * a,
                    x1: cx + s / a,
                }
            }
            _ => {
                let rot = rng.random_range(0.0..std::f64::consts::TAU);
                Shape::Triangle(std::array::from_fn(|k| {
                    let ang = rot + k as f64 * std::f64::consts::TAU / 3.0;
                    (cy + 1.3 * s * ang.sin(), cx + 1.3 * s * ang.cos())
                }))
            }
        }
    }
}

fn render(rng: &mut ChaCha8Rng, size: usize, id: String) -> Sample {
    let n_shapes = rng.random_range(1..=3);
    let shapes: Vec<(Shape, [f32; 3])> = (0..n_shapes)
        .map(|_| {
            let shape = Shape::random(rng, size as f64);
            let color = std::array::from_fn(|_| rng.random_range(0.6f32..1.0));
            (shape, color)
        })
        .collect();
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.05f32..0.35));
    // stripe texture on the background
    let freq = rng.random_range(0.1f32..0.5);
    let phase = rng.random_range(0.0f32..std::f32::consts::TAU);
    let (dy, dx) = {
        let a = rng.random_range(0.0f32..std::f32::consts::PI);
        (a.sin(), a.cos())
    };
    let plane = size * size;
    let mut image = vec![0f32; 3 * plane];
    let mut mask = vec![0f32; plane];
    for i in 0..size {
        for j in 0..size {
            let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
            let p = i * size + j;
            let hit = shapes.iter().rev().find(|(s, _)| s.contains(y, x));
            let stripe = 0.06 * (freq * (dy * i as f32 + dx * j as f32) + phase).sin();
            for c in 0..3 {
                let noise = rng.random_range(-0.05f32..0.05);
                image[c * plane + p] = match hit {
                    Some((_, color)) => color[c] + noise,
                    None => base[c] + stripe + noise,
                }
                .clamp(0.0, 1.0);
            }
            if hit.is_some() {
                mask[p] = 1.0;
            }
        }
    }
    Sample {
        image: Tensor::from_parts(vec![3, size, size], image),
        mask: Tensor::from_parts(vec![1, size, size], mask),
        id,
    }
}

/// `n` samples of 1–3 bright disks, rectangles or triangles on a darker
/// striped, noisy background. Masks are the exact shape union (pixel centres
/// inside a shape) and are redrawn until the foreground covers 2–40%.
pub fn synth_dataset(n: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    if size == 0 || !size.is_multiple_of(16) {
        return Err(Error::InvalidArgument(format!(
            "sample size {size} is not a multiple of 16"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = render(&mut rng, size, format!("synth_{:05}", out.len()));
        let r = s.foreground_ratio();
        if (MIN_FOREGROUND..=MAX_FOREGROUND).contains(&r) {
            out.push(s);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplePaths {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Clone, Debug, Default)]
pub struct DatasetScan {
    pub pairs: Vec<SamplePaths>,
    pub warnings: Vec<String>,
}

/// Files of `dir` keyed by stem. Two files sharing a stem are reported.
pub fn files_by_stem(dir: &Path, warnings: &mut Vec<String>) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
            warnings.push(format!(
                "duplicate stem `{stem}`: {} and {}",
                prev.display(),
                path.display()
            ));
        }
    }
    Ok(out)
}

/// Pairs `root/images/*` with `root/masks/*` by file stem, sorted.
pub fn scan_dataset(root: &Path) -> Result<DatasetScan> {
    let mut scan = DatasetScan::default();
    let images = files_by_stem(&root.join("images"), &mut scan.warnings)?;
    let masks = files_by_stem(&root.join("masks"), &mut scan.warnings)?;
    for (stem, image) in &images {
        match masks.get(stem) {
            Some(mask) => scan.pairs.push(SamplePaths {
                id: stem.clone(),
                image: image.clone(),
                mask: mask.clone(),
            }),
            None => scan.warnings.push(format!("image `{stem}` has no mask")),
        }
    }
    for stem in masks.keys().filter(|s| !images.contains_key(*s)) {
        scan.warnings.push(format!("mask `{stem}` has no image"));
    }
    if scan.pairs.is_empty() {
        return Err(Error::Dataset(format!(
            "no image/mask pairs under {}",
            root.display()
        )));
    }
    Ok(scan)
}

pub fn load_sample(paths: &SamplePaths) -> Result<Sample> {
    Sample::new(
        load_image(&paths.image)?,
        load_mask(&paths.mask)?,
        paths.id.clone(),
    )
}
