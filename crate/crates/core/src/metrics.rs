//! PSNR and SSIM on the luminance channel, and a bicubic baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 100.0;

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub psnr_y: f64,
    pub ssim_y: f64,
    pub crop_border: usize,
}

/// BT.601 studio-swing luma `(65.481 R + 128.553 G + 24.966 B + 16) / 255`.
/// Single-channel images are returned unchanged.
pub fn rgb_to_luminance(img: &Tensor) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    match c {
        1 => Ok(img.clone()),
        3 => {
            let n = h * w;
            let d = img.data();
            let y = (0..n)
                .map(|i| (65.481 * d[i] + 128.553 * d[n + i] + 24.966 * d[2 * n + i] + 16.0) / 255.0)
                .collect();
            Tensor::new(vec![1, h, w], y)
        }
        _ => Err(Error::invalid(format!("luminance needs 1 or 3 channels, got {c}"))),
    }
}

/// Luminance planes of both images with `border` pixels removed per side.
fn cropped_pair(a: &Tensor, b: &Tensor, border: usize) -> Result<(Vec<f64>, Vec<f64>, usize, usize)> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("image shapes differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let (ya, yb) = (rgb_to_luminance(a)?, rgb_to_luminance(b)?);
    let (_, h, w) = ya.dims3()?;
    if 2 * border >= h || 2 * border >= w {
        return Err(Error::invalid(format!("crop border {border} leaves nothing of {h}x{w}")));
    }
    let (ch, cw) = (h - 2 * border, w - 2 * border);
    let crop = |t: &Tensor| -> Vec<f64> {
        (border..h - border).flat_map(|y| t.data()[y * w + border..y * w + w - border].to_vec()).collect()
    };
    Ok((crop(&ya), crop(&yb), ch, cw))
}

pub fn psnr(a: &Tensor, b: &Tensor, crop_border: usize) -> Result<f64> {
    let (ya, yb, _, _) = cropped_pair(a, b, crop_border)?;
    let mse = ya.iter().zip(&yb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / ya.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let r = SSIM_RADIUS as isize;
    let taps: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.iter().map(|t| t / total).collect()
}

/// Separable "valid" filtering with the normalized Gaussian window.
fn filter_valid(img: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = win.iter().enumerate().map(|(t, c)| c * img[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = win.iter().enumerate().map(|(t, c)| c * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean single-scale SSIM over the cropped luminance: 11×11 Gaussian window
/// (σ = 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1.
pub fn ssim(a: &Tensor, b: &Tensor, crop_border: usize) -> Result<f64> {
    let (ya, yb, h, w) = cropped_pair(a, b, crop_border)?;
    let k = 2 * SSIM_RADIUS + 1;
    if h < k || w < k {
        return Err(Error::invalid(format!("SSIM needs at least {k}x{k} pixels after cropping, got {h}x{w}")));
    }
    let win = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mu_a = filter_valid(&ya, h, w, &win);
    let mu_b = filter_valid(&yb, h, w, &win);
    let aa = filter_valid(&prod(&ya, &ya), h, w, &win);
    let bb = filter_valid(&prod(&yb, &yb), h, w, &win);
    let ab = filter_valid(&prod(&ya, &yb), h, w, &win);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

pub fn evaluate(result: &Tensor, reference: &Tensor, crop_border: usize) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr_y: psnr(result, reference, crop_border)?,
        ssim_y: ssim(result, reference, crop_border)?,
        crop_border,
    })
}

/// Keys cubic convolution weight with `a = −0.5`.
fn cubic(t: f64) -> f64 {
    let t = t.abs();
    let a = -0.5;
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic upsampling by an integer factor on the sampling grid of the
/// direct downsampler: LR pixel `(i, j)` sits at HR position `(s·i, s·j)`.
/// Borders are replicated.
pub fn bicubic_upsample(lr: &Tensor, scale: usize) -> Result<Tensor> {
    let (c, h, w) = lr.dims3()?;
    if scale == 0 {
        return Err(Error::invalid("scale must be positive"));
    }
    let (oh, ow) = (h * scale, w * scale);
    // Per output coordinate: four source indices and weights.
    let taps = |n: usize, out: usize| -> Vec<[(usize, f64); 4]> {
        (0..out)
            .map(|o| {
                let pos = o as f64 / scale as f64;
                let base = pos.floor() as isize;
                let frac = pos - base as f64;
                std::array::from_fn(|t| {
                    let idx = (base - 1 + t as isize).clamp(0, n as isize - 1) as usize;
                    (idx, cubic(frac - (t as f64 - 1.0)))
                })
            })
            .collect()
    };
    let (ty, tx) = (taps(h, oh), taps(w, ow));
    let src = lr.data();
    let mut rows = vec![0.0; c * h * ow];
    for ch in 0..c {
        for y in 0..h {
            for (x, t) in tx.iter().enumerate() {
                rows[(ch * h + y) * ow + x] = t.iter().map(|(i, wt)| wt * src[(ch * h + y) * w + i]).sum();
            }
        }
    }
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for (y, t) in ty.iter().enumerate() {
            for x in 0..ow {
                out[(ch * oh + y) * ow + x] = t.iter().map(|(i, wt)| wt * rows[(ch * h + i) * ow + x]).sum();
            }
        }
    }
    Ok(Tensor::new(vec![c, oh, ow], out)?.map(|v| v.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::test_image;
    use crate::tensor::ops::direct_downsample_tensor;

    fn gray(h: usize, w: usize) -> Tensor {
        let img = test_image(h, w, 1);
        Tensor::new(vec![1, h, w], img.data()[..h * w].to_vec()).unwrap()
    }

    #[test]
    fn luminance_examples() {
        let white = rgb_to_luminance(&Tensor::full(&[3, 1, 1], 1.0)).unwrap();
        assert!((white.item() - 235.0 / 255.0).abs() < 1e-12);
        let black = rgb_to_luminance(&Tensor::zeros(&[3, 1, 1])).unwrap();
        assert!((black.item() - 16.0 / 255.0).abs() < 1e-15);
        let g = gray(4, 4);
        assert_eq!(rgb_to_luminance(&g).unwrap(), g);
        assert!(rgb_to_luminance(&Tensor::zeros(&[2, 2, 2])).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = gray(24, 24).map(|v| 0.8 * v);
        assert_eq!(psnr(&a, &a, 2).unwrap(), PSNR_CAP);
        assert!((psnr(&a, &a.map(|v| v + 0.1), 0).unwrap() - 20.0).abs() < 1e-9);
        assert!((psnr(&a, &a.map(|v| v + 0.01), 2).unwrap() - 40.0).abs() < 1e-9);
        let b = a.map(|v| (v * 7.0).sin().abs());
        assert_eq!(psnr(&a, &b, 1).unwrap(), psnr(&b, &a, 1).unwrap());
        assert!(matches!(psnr(&a, &gray(24, 20), 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn ssim_examples() {
        let a = gray(32, 32);
        assert_eq!(ssim(&a, &a, 0).unwrap(), 1.0);
        assert!(ssim(&a, &a.map(|v| 1.0 - v), 0).unwrap() < 0.5);

        let ca = Tensor::full(&[1, 16, 16], 0.2);
        let cb = Tensor::full(&[1, 16, 16], 0.7);
        let c1 = SSIM_K1 * SSIM_K1;
        let want = (2.0 * 0.2 * 0.7 + c1) / (0.04 + 0.49 + c1);
        assert!((ssim(&ca, &cb, 0).unwrap() - want).abs() < 1e-12);
        assert!(matches!(ssim(&ca, &cb, 3), Err(Error::Validation(_))));

        let b = a.map(|v| (v + 0.05 * (v * 40.0).sin()).clamp(0.0, 1.0));
        assert!((ssim(&a, &b, 0).unwrap() - ssim(&b, &a, 0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn ssim_matches_direct_window_sum() {
        let a = gray(13, 12);
        let b = a.map(|v| v * v);
        let win = gaussian_window();
        let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
        let mut total = 0.0;
        for oy in 0..3 {
            for ox in 0..2 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for u in 0..11 {
                    for v in 0..11 {
                        let wt = win[u] * win[v];
                        let (x, y) = (a.data()[(oy + u) * 12 + ox + v], b.data()[(oy + u) * 12 + ox + v]);
                        ma += wt * x;
                        mb += wt * y;
                        saa += wt * x * x;
                        sbb += wt * y * y;
                        sab += wt * x * y;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        assert!((ssim(&a, &b, 0).unwrap() - total / 6.0).abs() < 1e-12);
    }

    #[test]
    fn bicubic_interpolates_samples() {
        let lr = gray(8, 10);
        for s in [2, 3] {
            let up = bicubic_upsample(&lr, s).unwrap();
            assert_eq!(up.shape(), &[1, 8 * s, 10 * s]);
            assert_eq!(direct_downsample_tensor(&up, s).unwrap(), lr);
        }
        let ramp = Tensor::from_fn(&[1, 6, 6], |i| 0.1 * (i % 6) as f64);
        let up = bicubic_upsample(&ramp, 2).unwrap();
        for x in 2..8 {
            assert!((up.data()[3 * 12 + x] - 0.05 * x as f64).abs() < 1e-12);
        }
    }
}
