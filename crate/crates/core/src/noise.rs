//! Patch-based Gaussian noise model.
//!
//! Every LR pixel `i` carries its own variance `λ_i`, estimated from the
//! squared residuals of the `p × p` patch centred on it. Treating the whole
//! image as one patch recovers plain AWGN with an estimated level.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensor::{compensated_sum, Backward, Graph, Tensor, Var};

/// Smallest admissible variance.
pub const LAMBDA_FLOOR: f64 = 1e-6;

/// Neighborhood used to estimate `λ_i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchSize {
    /// Odd side length of a square window.
    Square(usize),
    /// One shared variance for the whole image.
    WholeImage,
}

impl fmt::Display for PatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatchSize::Square(p) => write!(f, "{p}"),
            PatchSize::WholeImage => f.write_str("full"),
        }
    }
}

impl FromStr for PatchSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "full" | "whole" | "whole_image" => Ok(PatchSize::WholeImage),
            other => other
                .parse::<usize>()
                .map(PatchSize::Square)
                .map_err(|_| Error::invalid(format!("patch must be an odd integer or \"full\", got {s:?}"))),
        }
    }
}

impl Serialize for PatchSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PatchSize::Square(p) => s.serialize_u64(*p as u64),
            PatchSize::WholeImage => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for PatchSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(p) => Ok(PatchSize::Square(p)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Per-pixel noise variance at LR resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    patch: PatchSize,
}

impl VarianceMap {
    /// Same variance everywhere.
    pub fn uniform(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::from_values(height, width, vec![value; height * width], PatchSize::WholeImage)
    }

    pub fn from_values(height: usize, width: usize, values: Vec<f64>, patch: PatchSize) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::dim(format!("variance map {height}x{width} needs {} values", height * width)));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= LAMBDA_FLOOR)) {
            return Err(Error::invalid(format!("variance {v} is below the floor {LAMBDA_FLOOR}")));
        }
        Ok(VarianceMap { height, width, values, patch })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn patch(&self) -> PatchSize {
        self.patch
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `(C/2) Σ_i log λ_i`, the normalizer of the Gaussian likelihood over
    /// `channels` channels.
    pub fn log_normalizer(&self, channels: usize) -> f64 {
        let logs: Vec<f64> = self.values.iter().map(|v| v.ln()).collect();
        0.5 * channels as f64 * compensated_sum(&logs)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.height, self.width], self.values.clone()).expect("sized grid")
    }
}

/// Closed-form variance update from a residual `[C,H,W]`.
///
/// Squared residuals are averaged over channels, box-filtered over the `p × p`
/// window with replicate borders and floored at [`LAMBDA_FLOOR`]. In
/// whole-image mode every entry is the global mean of squared residuals.
pub fn update_variance(residual: &Tensor, patch: PatchSize) -> Result<VarianceMap> {
    let (c, h, w) = residual.dims3()?;
    let n = h * w;
    let r = residual.data();
    let mut sq = vec![0.0; n];
    for ch in 0..c {
        for (s, v) in sq.iter_mut().zip(&r[ch * n..(ch + 1) * n]) {
            *s += v * v;
        }
    }
    sq.iter_mut().for_each(|s| *s /= c as f64);

    let values = match patch {
        PatchSize::WholeImage => {
            let mean = sq.iter().sum::<f64>() / n as f64;
            vec![mean.max(LAMBDA_FLOOR); n]
        }
        PatchSize::Square(p) => {
            if p % 2 == 0 {
                return Err(Error::invalid(format!("patch size must be odd, got {p}")));
            }
            if p > h.min(w) {
                return Err(Error::invalid(format!("patch {p} exceeds image size {h}x{w}")));
            }
            box_mean_replicate(&sq, h, w, p).into_iter().map(|v| v.max(LAMBDA_FLOOR)).collect()
        }
    };
    VarianceMap::from_values(h, w, values, patch)
}

/// Separable `p × p` mean filter with replicate padding.
fn box_mean_replicate(src: &[f64], h: usize, w: usize, p: usize) -> Vec<f64> {
    let r = (p / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..w {
            rows[y * w + x] = (-r..=r).map(|d| line[clamp(x as isize + d, w)]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    let area = (p * p) as f64;
    for y in 0..h {
        for x in 0..w {
            let s: f64 = (-r..=r).map(|d| rows[clamp(y as isize + d, h) * w + x]).sum();
            out[y * w + x] = s / area;
        }
    }
    out
}

struct WeightedSseBackward {
    target: Vec<f64>,
    inv_lambda: Vec<f64>,
}

impl Backward for WeightedSseBackward {
    fn name(&self) -> &'static str {
        "weighted_data_term"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let n = self.inv_lambda.len();
        let d = inputs[0]
            .data()
            .iter()
            .zip(&self.target)
            .enumerate()
            .map(|(idx, (p, t))| g[0] * (p - t) * self.inv_lambda[idx % n])
            .collect();
        vec![Some(d)]
    }
}

/// `½ Σ_{c,i} (y − ŷ)²_{c,i} / λ_i` with gradient flowing to `y_hat` only.
pub fn weighted_data_term(g: &mut Graph, y: &Tensor, y_hat: Var, lambda: &VarianceMap) -> Result<Var> {
    let (c, h, w) = g.value(y_hat).dims3()?;
    if y.shape() != g.shape(y_hat) {
        return Err(Error::dim(format!("observation {:?} vs prediction {:?}", y.shape(), g.shape(y_hat))));
    }
    if (lambda.height, lambda.width) != (h, w) {
        return Err(Error::dim(format!(
            "variance map {}x{} vs image {h}x{w}",
            lambda.height, lambda.width
        )));
    }
    if let Some(v) = lambda.values.iter().find(|v| !(**v >= LAMBDA_FLOOR)) {
        return Err(Error::invalid(format!("variance {v} is below the floor {LAMBDA_FLOOR}")));
    }
    let n = h * w;
    let inv_lambda: Vec<f64> = lambda.values.iter().map(|l| 1.0 / l).collect();
    let pred = g.value(y_hat).data();
    let terms: Vec<f64> = (0..c * n)
        .map(|k| {
            let d = y.data()[k] - pred[k];
            d * d * inv_lambda[k % n]
        })
        .collect();
    let value = Tensor::scalar(0.5 * compensated_sum(&terms));
    let op = WeightedSseBackward { target: y.data().to_vec(), inv_lambda };
    Ok(g.record(value, &[y_hat], op))
}
