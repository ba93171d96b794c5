//! Deterministic procedural images with smooth regions, edges and texture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

struct Disc {
    cy: f64,
    cx: f64,
    radius: f64,
    color: [f64; 3],
}

/// `[3, h, w]` image in [0, 1]: a color gradient, anti-aliased discs, a
/// rectangle and a patch of oblique stripes.
pub fn test_image(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (h as f64, w as f64);
    let base: [[f64; 3]; 2] = [
        [rng.random_range(0.2..0.5), rng.random_range(0.2..0.5), rng.random_range(0.2..0.5)],
        [rng.random_range(0.5..0.8), rng.random_range(0.5..0.8), rng.random_range(0.5..0.8)],
    ];
    let discs: Vec<Disc> = (0..5)
        .map(|_| Disc {
            cy: rng.random_range(0.1..0.9) * hf,
            cx: rng.random_range(0.1..0.9) * wf,
            radius: rng.random_range(0.08..0.22) * hf.min(wf),
            color: [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)],
        })
        .collect();
    let rect = [
        rng.random_range(0.05..0.4) * hf,
        rng.random_range(0.05..0.4) * wf,
        rng.random_range(0.55..0.95) * hf,
        rng.random_range(0.55..0.95) * wf,
    ];
    let rect_color = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let period = rng.random_range(5.0..9.0);
    let stripe_center = (rng.random_range(0.3..0.7) * hf, rng.random_range(0.3..0.7) * wf);
    let stripe_radius = 0.25 * hf.min(wf);

    let mut out = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
            let t = 0.5 * (yf / hf + xf / wf);
            let mut px: [f64; 3] = std::array::from_fn(|c| base[0][c] * (1.0 - t) + base[1][c] * t);

            let inside = |v: f64| v.clamp(0.0, 1.0);
            let cover = inside(yf - rect[0] + 0.5).min(inside(rect[2] - yf + 0.5)).min(inside(xf - rect[1] + 0.5)).min(inside(rect[3] - xf + 0.5));
            for c in 0..3 {
                px[c] += 0.5 * cover * (rect_color[c] - px[c]);
            }

            let (dy, dx) = (yf - stripe_center.0, xf - stripe_center.1);
            let fade = inside(stripe_radius - (dy * dy + dx * dx).sqrt());
            let phase = (dx * angle.cos() + dy * angle.sin()) * std::f64::consts::TAU / period;
            for v in &mut px {
                *v += 0.15 * fade * phase.sin();
            }

            for d in &discs {
                let dist = ((yf - d.cy).powi(2) + (xf - d.cx).powi(2)).sqrt();
                let a = inside(d.radius - dist + 0.5);
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - a) + d.color[c] * a;
                }
            }
            for c in 0..3 {
                out[(c * h + y) * w + x] = px[c].clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![3, h, w], out).expect("sized above")
}

/// [`test_image`] with a gray Siemens star (16 spokes, 4×4 supersampled)
/// over its central region, so edges of every orientation are present.
pub fn star_chart(h: usize, w: usize, seed: u64) -> Tensor {
    let mut img = test_image(h, w, seed);
    let (cy, cx) = (0.5 * h as f64, 0.5 * w as f64);
    let radius = 0.3 * h.min(w) as f64;
    let spokes = 16.0;
    let sub = 4;
    let data = img.data_mut();
    for y in 0..h {
        for x in 0..w {
            let (mut cover, mut bright) = (0.0, 0.0);
            for i in 0..sub * sub {
                let yf = y as f64 + (0.5 + (i / sub) as f64) / sub as f64 - cy;
                let xf = x as f64 + (0.5 + (i % sub) as f64) / sub as f64 - cx;
                if yf.hypot(xf) <= radius {
                    cover += 1.0;
                    if (spokes * yf.atan2(xf)).sin() >= 0.0 {
                        bright += 1.0;
                    }
                }
            }
            if cover == 0.0 {
                continue;
            }
            let a = cover / (sub * sub) as f64;
            let v = 0.15 + 0.7 * bright / cover;
            for c in 0..3 {
                let p = &mut data[(c * h + y) * w + x];
                *p = *p * (1.0 - a) + v * a;
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = test_image(40, 56, 3);
        assert_eq!(a, test_image(40, 56, 3));
        assert_ne!(a, test_image(40, 56, 4));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let mean = a.mean();
        let var = a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.len() as f64;
        assert!(var > 1e-3);
    }

    #[test]
    fn star_covers_the_center_only() {
        let (a, s) = (test_image(64, 64, 2), star_chart(64, 64, 2));
        assert_eq!(a.data()[0], s.data()[0]);
        assert_ne!(a.data()[32 * 64 + 40], s.data()[32 * 64 + 40]);
        assert!(s.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
