//! PNG and text I/O.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde::Serialize;

use crate::ekp::Kernel;
use crate::error::{Error, Result};
use crate::noise::VarianceMap;
use crate::tensor::Tensor;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads an 8-bit PNG into `[C, H, W]` with values in [0, 1]. Grayscale
/// stays single-channel, everything else becomes RGB.
pub fn read_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let scale = 1.0 / 255.0;
    match img {
        image::DynamicImage::ImageLuma8(g) => {
            Tensor::new(vec![1, h, w], g.into_raw().into_iter().map(|v| v as f64 * scale).collect())
        }
        other => {
            let rgb = other.to_rgb8();
            let raw = rgb.as_raw();
            Ok(Tensor::from_fn(&[3, h, w], |i| {
                let (c, p) = (i / (h * w), i % (h * w));
                raw[p * 3 + c] as f64 * scale
            }))
        }
    }
}

/// Writes a 1- or 3-channel tensor as an 8-bit PNG, clamping to [0, 1].
pub fn write_png(path: &Path, img: &Tensor) -> Result<()> {
    let (c, h, w) = img.dims3()?;
    let d = img.data();
    let n = h * w;
    let result = match c {
        1 => GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(d[y as usize * w + x as usize])])).save(path),
        3 => RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let p = y as usize * w + x as usize;
            Rgb([to_u8(d[p]), to_u8(d[n + p]), to_u8(d[2 * n + p])])
        })
        .save(path),
        _ => return Err(Error::invalid(format!("PNG output needs 1 or 3 channels, got {c}"))),
    };
    result.map_err(|source| Error::Image { path: path.into(), source })
}

fn write_gray(path: &Path, w: usize, h: usize, values: &[f64]) -> Result<()> {
    let img: ImageBuffer<Luma<u8>, Vec<u8>> =
        GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(values[y as usize * w + x as usize])]));
    img.save(path).map_err(|source| Error::Image { path: path.into(), source })
}

/// Kernel as grayscale scaled so its maximum is white.
pub fn write_kernel_png(path: &Path, kernel: &Kernel) -> Result<()> {
    let max = kernel.values().iter().cloned().fold(0.0, f64::max);
    let scaled: Vec<f64> = kernel.values().iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect();
    write_gray(path, kernel.side(), kernel.side(), &scaled)
}

/// `√λ` scaled so the largest value is white.
pub fn write_variance_png(path: &Path, lambda: &VarianceMap) -> Result<()> {
    let roots: Vec<f64> = lambda.values().iter().map(|v| v.sqrt()).collect();
    let max = roots.iter().cloned().fold(0.0, f64::max);
    let scaled: Vec<f64> = roots.iter().map(|v| v / max).collect();
    write_gray(path, lambda.width(), lambda.height(), &scaled)
}

/// Space-separated rows of `{:.10e}` values.
pub fn variance_to_text(lambda: &VarianceMap) -> String {
    lambda
        .values()
        .chunks(lambda.width())
        .map(|row| row.iter().map(|v| format!("{v:.10e}")).collect::<Vec<_>>().join(" ") + "\n")
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
