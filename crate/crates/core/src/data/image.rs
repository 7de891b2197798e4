//! Binary PPM (P6) and PGM (P5) with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Raw 8-bit raster, interleaved when `channels == 3`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image8 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image8 {
    /// Per-pixel gray level; RGB is averaged with rounding.
    pub fn gray(&self) -> Vec<u8> {
        match self.channels {
            1 => self.data.clone(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|p| ((p[0] as u16 + p[1] as u16 + p[2] as u16 + 1) / 3) as u8)
                .collect(),
        }
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Parses a P5/P6 file from memory; `path` is used for error messages only.
pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Image8> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(bad(path, "not a binary PGM (P5) or PPM (P6) file")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|c| c.is_ascii_digit()) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(path, "malformed header field"))?;
    }
    if !bytes.get(pos).is_some_and(|c| c.is_ascii_whitespace()) {
        return Err(bad(path, "missing whitespace after header"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad(path, "zero image extent"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(bad(
            path,
            format!("unsupported maxval {maxval} (8-bit only)"),
        ));
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| bad(path, "image too large"))?;
    let raster = bytes
        .get(pos..pos + len)
        .ok_or_else(|| bad(path, "truncated pixel data"))?;
    let data = if maxval == 255 {
        raster.to_vec()
    } else {
        raster
            .iter()
            .map(|&v| {
                ((v.min(maxval as u8) as u32 * 255 + maxval as u32 / 2) / maxval as u32) as u8
            })
            .collect()
    };
    Ok(Image8 {
        width,
        height,
        channels,
        data,
    })
}

pub fn encode_pnm(img: &Image8) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn read_pnm(path: &Path) -> Result<Image8> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, path)
}

pub fn write_pnm(path: &Path, img: &Image8) -> Result<()> {
    if img.channels != 1 && img.channels != 3 {
        return Err(bad(path, format!("cannot write {} channels", img.channels)));
    }
    std::fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}

/// RGB image as `3×H×W` in [0, 1]; grayscale files are replicated.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img = read_pnm(path)?;
    Ok(image_to_tensor(&img))
}

pub fn image_to_tensor(img: &Image8) -> Tensor<f32> {
    let (h, w, c) = (img.height, img.width, img.channels);
    Tensor::from_fn(&[3, h, w], |i| {
        let (ch, p) = (i / (h * w), i % (h * w));
        let src = if c == 1 { p } else { p * 3 + ch };
        img.data[src] as f32 / 255.0
    })
}

/// `3×H×W` tensor in [0, 1] to 8-bit RGB.
pub fn tensor_to_image(t: &Tensor<f32>) -> Result<Image8> {
    let (h, w) = match t.shape() {
        [3, h, w] => (*h, *w),
        s => return Err(Error::shape(format!("expected 3×H×W image, got {s:?}"))),
    };
    let d = t.data();
    let mut data = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        for ch in 0..3 {
            data.push(quantize(d[ch * h * w + p]));
        }
    }
    Ok(Image8 {
        width: w,
        height: h,
        channels: 3,
        data,
    })
}

/// Binary mask `1×H×W` from a grayscale (or averaged RGB) file, foreground ≥ 128.
pub fn load_mask(path: &Path) -> Result<Tensor<f32>> {
    let img = read_pnm(path)?;
    let g = img.gray();
    Tensor::new(
        &[1, img.height, img.width],
        g.iter()
            .map(|&v| if v >= 128 { 1.0 } else { 0.0 })
            .collect(),
    )
}

/// Gray levels of a saliency map file scaled to [0, 1], as `1×H×W`.
pub fn load_map(path: &Path) -> Result<Tensor<f32>> {
    let img = read_pnm(path)?;
    Tensor::new(
        &[1, img.height, img.width],
        img.gray().iter().map(|&v| v as f32 / 255.0).collect(),
    )
}

pub fn quantize(s: f32) -> u8 {
    (255.0 * s.clamp(0.0, 1.0)).round() as u8
}

/// Writes a `1×H×W` (or `H×W`) map as 8-bit PGM with value `round(255·s)`.
pub fn save_map(path: &Path, map: &Tensor<f32>) -> Result<()> {
    let (h, w) = match map.shape() {
        [1, h, w] | [h, w] => (*h, *w),
        [1, 1, h, w] => (*h, *w),
        s => {
            return Err(Error::shape(format!(
                "saliency map must be 1×H×W, got {s:?}"
            )))
        }
    };
    if !map.is_finite() {
        return Err(bad(path, "saliency map contains non-finite values"));
    }
    write_pnm(
        path,
        &Image8 {
            width: w,
            height: h,
            channels: 1,
            data: map.data().iter().map(|&v| quantize(v)).collect(),
        },
    )
}
