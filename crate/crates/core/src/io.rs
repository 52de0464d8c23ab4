//! File formats: input PNGs, saliency outputs, curves, reports, manifests.
//!
//! Raw saliency file layout (little-endian):
//!
//! ```text
//! offset 0   8 bytes   "DECAMSM1"
//! offset 8   u32       height
//! offset 12  u32       width
//! offset 16  H*W f32   values, row-major
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregation::SaliencyMap;
use crate::metrics::{EvalReport, MetricCurve};
use crate::tensor::{ImageTensor, TensorError};

pub const SM_MAGIC: &[u8; 8] = b"DECAMSM1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("unsupported image color type {0:?} (need 8-bit gray or RGB)")]
    ColorType(image::ColorType),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("not a saliency file (bad magic)")]
    BadMagic,
    #[error("saliency file truncated: header says {height}x{width}, payload has {got} bytes")]
    SizeMismatch { height: u32, width: u32, got: usize },
    #[error("saliency value {value} at index {index} is outside [0, 1]")]
    BadValue { index: usize, value: f32 },
}

/// Load an 8-bit grayscale or RGB PNG as `[0, 1]` values.
pub fn load_image(path: &Path) -> Result<ImageTensor, FormatError> {
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()?;
    image_to_tensor(&img)
}

pub fn image_to_tensor(img: &DynamicImage) -> Result<ImageTensor, FormatError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, bytes) = match img {
        DynamicImage::ImageLuma8(g) => (1, g.as_raw().clone()),
        DynamicImage::ImageRgb8(rgb) => (3, rgb.as_raw().clone()),
        other => return Err(FormatError::ColorType(other.color())),
    };
    let data = bytes.into_iter().map(|b| f64::from(b) / 255.0).collect();
    Ok(ImageTensor::new(h, w, channels, data)?)
}

/// Write an image tensor as an 8-bit PNG (gray or RGB).
pub fn save_image(img: &ImageTensor, path: &Path) -> Result<(), FormatError> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v * 255.0).round() as u8)
        .collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    if img.channels() == 1 {
        GrayImage::from_raw(w, h, bytes)
            .expect("sized buffer")
            .save(path)?;
    } else {
        RgbImage::from_raw(w, h, bytes)
            .expect("sized buffer")
            .save(path)?;
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String, FormatError> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
}

pub fn write_sm_raw<W: Write>(sm: &SaliencyMap, mut w: W) -> io::Result<()> {
    let mut buf = Vec::with_capacity(16 + sm.values().len() * 4);
    buf.extend_from_slice(SM_MAGIC);
    buf.extend_from_slice(&(sm.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(sm.width() as u32).to_le_bytes());
    for &v in sm.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()
}

pub fn read_sm_raw<R: Read>(mut r: R) -> Result<SaliencyMap, FormatError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..8] != SM_MAGIC {
        return Err(FormatError::BadMagic);
    }
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let payload = &bytes[16..];
    let expected = (height as usize)
        .checked_mul(width as usize)
        .and_then(|n| n.checked_mul(4));
    if expected != Some(payload.len()) {
        return Err(FormatError::SizeMismatch {
            height,
            width,
            got: payload.len(),
        });
    }
    let mut values = Vec::with_capacity(payload.len() / 4);
    for (index, c) in payload.chunks_exact(4).enumerate() {
        let value = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        if !(0.0..=1.0).contains(&value) {
            return Err(FormatError::BadValue { index, value });
        }
        values.push(f64::from(value));
    }
    Ok(SaliencyMap::new(height as usize, width as usize, values).expect("validated above"))
}

/// Gray level of a saliency value, from its stored `f32` form so the PNG
/// and the raw file agree.
pub fn sm_gray_level(v: f64) -> u8 {
    (255.0 * f64::from(v as f32)).round() as u8
}

pub fn sm_to_gray(sm: &SaliencyMap) -> GrayImage {
    let bytes = sm.values().iter().map(|&v| sm_gray_level(v)).collect();
    GrayImage::from_raw(sm.width() as u32, sm.height() as u32, bytes).expect("sized buffer")
}

pub fn save_sm_png(sm: &SaliencyMap, path: &Path) -> Result<(), FormatError> {
    sm_to_gray(sm).save(path)?;
    Ok(())
}

/// Saliency blended over the input at 50%: gray images become RGB, the
/// map is laid over in red.
pub fn overlay(image: &ImageTensor, sm: &SaliencyMap) -> RgbImage {
    let (h, w) = (image.height(), image.width());
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        let px = image.pixel(p);
        let base = |k: usize| if px.len() == 1 { px[0] } else { px[k] };
        let s = sm.values()[p];
        let mix = |b: f64, o: f64| ((0.5 * b + 0.5 * o) * 255.0).round() as u8;
        Rgb([mix(base(0), s), mix(base(1), 0.0), mix(base(2), 0.0)])
    })
}

pub fn save_overlay(image: &ImageTensor, sm: &SaliencyMap, path: &Path) -> Result<(), FormatError> {
    overlay(image, sm).save(path)?;
    Ok(())
}

/// Read back a grayscale PNG, mostly for tests.
pub fn load_gray(path: &Path) -> Result<ImageBuffer<Luma<u8>, Vec<u8>>, FormatError> {
    Ok(image::open(path)?.to_luma8())
}

pub fn write_curve_csv<W: Write>(curve: &MetricCurve, mut w: W) -> io::Result<()> {
    let mut s = String::from("x,y\n");
    for (x, y) in curve.xs.iter().zip(&curve.ys) {
        let _ = writeln!(s, "{x},{y}");
    }
    w.write_all(s.as_bytes())
}

pub fn write_report<W: Write>(report: &EvalReport, mut w: W) -> io::Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "auc_insertion={}", report.auc_insertion);
    let _ = writeln!(s, "auc_deletion={}", report.auc_deletion);
    let _ = writeln!(s, "diff_auc={}", report.diff_auc);
    let _ = writeln!(s, "score_kind={}", report.score_kind);
    let _ = writeln!(s, "steps={}", report.steps);
    w.write_all(s.as_bytes())
}

/// Parse a flat `key=value` file, preserving order.
pub fn parse_key_values(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Ordered `key=value` record of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k}={v}");
            s
        })
    }

    pub fn from_text(text: &str) -> Self {
        RunManifest {
            entries: parse_key_values(text),
        }
    }
}
