//! Anisotropic Gaussian blur kernels parameterized by a lower-triangular
//! Cholesky factor of their precision matrix.
//!
//! With `L = [[q11, 0], [q21, q22]]` and `Λ = L·Lᵀ`, the kernel on the integer
//! grid `S = (i, j)`, `i, j ∈ −r..=r`, is
//!
//! ```text
//! k_ij ∝ |L| / 2π · exp(−½ · Sᵀ Λ S)
//! ```
//!
//! normalized so the grid sums to one. `i` is the row offset and `j` the
//! column offset. Three scalars control the whole kernel, and `Λ` is positive
//! semi-definite for any value of them.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Backward, Graph, Tensor, Var};

/// Below this `|q11·q22|` the precision matrix is treated as collapsed.
pub const DEGENERATE_DET: f64 = 1e-12;

/// Magnitude below which `q11`/`q22` are pushed back during optimization.
pub const DIAGONAL_FLOOR: f64 = 1e-6;

/// Blur kernel side length for a supported scale factor (11, 15, 19).
pub fn kernel_size_for_scale(scale: usize) -> Result<usize> {
    match scale {
        2 => Ok(11),
        3 => Ok(15),
        4 => Ok(19),
        _ => Err(Error::invalid(format!(
            "no default kernel size for scale {scale}; supported scales are 2, 3 and 4"
        ))),
    }
}

/// Free entries of the Cholesky factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EkpParams {
    pub q11: f64,
    pub q21: f64,
    pub q22: f64,
}

impl EkpParams {
    pub fn new(q11: f64, q21: f64, q22: f64) -> Self {
        EkpParams { q11, q21, q22 }
    }

    /// Isotropic kernel of width `sigma`: `Λ = σ⁻²·I`.
    pub fn isotropic(sigma: f64) -> Self {
        EkpParams { q11: 1.0 / sigma, q21: 0.0, q22: 1.0 / sigma }
    }

    /// Parameters reproducing a Gaussian with covariance
    /// `R(θ)·diag(σ1², σ2²)·R(θ)ᵀ` in (row, column) coordinates.
    pub fn from_covariance(sigma1: f64, sigma2: f64, theta: f64) -> Self {
        let p = precision_from_covariance(sigma1, sigma2, theta);
        // Cholesky of [[a, b], [b, d]].
        let q11 = p[0].sqrt();
        let q21 = p[1] / q11;
        let q22 = (p[3] - q21 * q21).sqrt();
        EkpParams { q11, q21, q22 }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.q11, self.q21, self.q22]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match *v {
            [q11, q21, q22] => Ok(EkpParams { q11, q21, q22 }),
            _ => Err(Error::dim(format!("kernel parameters need 3 values, got {}", v.len()))),
        }
    }

    /// `|L| = |q11·q22|`.
    pub fn det(self) -> f64 {
        (self.q11 * self.q22).abs()
    }

    /// Precision matrix `L·Lᵀ`, row-major.
    pub fn precision(self) -> [f64; 4] {
        let EkpParams { q11, q21, q22 } = self;
        [q11 * q11, q11 * q21, q11 * q21, q21 * q21 + q22 * q22]
    }

    /// Keeps the diagonal away from zero without changing its sign.
    pub fn clamp_degenerate(&mut self) {
        for v in [&mut self.q11, &mut self.q22] {
            if v.abs() < DIAGONAL_FLOOR {
                *v = if *v < 0.0 { -DIAGONAL_FLOOR } else { DIAGONAL_FLOOR };
            }
        }
    }

    pub fn check(self) -> Result<()> {
        let det = self.det();
        if !(det > DEGENERATE_DET) {
            return Err(Error::DegenerateKernel { det });
        }
        Ok(())
    }

    /// Unnormalized density `|L|/2π · exp(−½‖LᵀS‖²)` at offset `(i, j)`.
    pub fn density(self, i: f64, j: f64) -> f64 {
        let t1 = self.q11 * i + self.q21 * j;
        let t2 = self.q22 * j;
        self.det() / (2.0 * PI) * (-0.5 * (t1 * t1 + t2 * t2)).exp()
    }
}

pub(crate) fn precision_from_covariance(sigma1: f64, sigma2: f64, theta: f64) -> [f64; 4] {
    let (s, c) = theta.sin_cos();
    let (l1, l2) = (1.0 / (sigma1 * sigma1), 1.0 / (sigma2 * sigma2));
    // R·diag(l1, l2)·Rᵀ with R = [[c, −s], [s, c]].
    let a = c * c * l1 + s * s * l2;
    let b = c * s * (l1 - l2);
    let d = s * s * l1 + c * c * l2;
    [a, b, b, d]
}

/// Odd-sized, non-negative blur kernel summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    radius: usize,
    values: Vec<f64>,
}

impl Kernel {
    /// Wraps a `(2r+1)²` grid. Values must be non-negative with a positive sum;
    /// they are renormalized.
    pub fn from_values(radius: usize, mut values: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        if values.len() != side * side {
            return Err(Error::dim(format!("kernel radius {radius} needs {} values", side * side)));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("kernel values must be non-negative"));
        }
        let total: f64 = values.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("kernel must have a positive sum"));
        }
        values.iter_mut().for_each(|v| *v /= total);
        Ok(Kernel { radius, values })
    }

    /// Single-tap identity kernel.
    pub fn delta() -> Self {
        Kernel { radius: 0, values: vec![1.0] }
    }

    /// Closed-form Gaussian with the given precision matrix (row-major).
    pub fn gaussian_from_precision(radius: usize, precision: [f64; 4]) -> Result<Self> {
        let r = radius as isize;
        let mut values = Vec::with_capacity((2 * radius + 1).pow(2));
        for i in -r..=r {
            for j in -r..=r {
                let (i, j) = (i as f64, j as f64);
                let q = precision[0] * i * i + 2.0 * precision[1] * i * j + precision[3] * j * j;
                values.push((-0.5 * q).exp());
            }
        }
        Self::from_values(radius, values)
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at offset `(i, j)` from the center.
    pub fn at(&self, i: isize, j: isize) -> f64 {
        let r = self.radius as isize;
        self.values[((i + r) * (2 * r + 1) + j + r) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `Σ k_ij (i² + j²)`.
    pub fn second_moment(&self) -> f64 {
        let r = self.radius as isize;
        let mut m = 0.0;
        for i in -r..=r {
            for j in -r..=r {
                m += self.at(i, j) * (i * i + j * j) as f64;
            }
        }
        m
    }

    /// Euclidean distance between two kernels of the same size.
    pub fn l2_distance(&self, other: &Kernel) -> Result<f64> {
        if self.radius != other.radius {
            return Err(Error::dim(format!(
                "kernel sizes differ: {} vs {}",
                self.side(),
                other.side()
            )));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    }

    pub fn transpose(&self) -> Kernel {
        let n = self.side();
        let values = (0..n * n).map(|idx| self.values[(idx % n) * n + idx / n]).collect();
        Kernel { radius: self.radius, values }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.side(), self.side()], self.values.clone()).expect("square grid")
    }

    /// Rows of space-separated decimals, one line per row.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for row in self.values.chunks(self.side()) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.10e}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| Error::invalid(format!("bad kernel value {t:?}: {e}"))))
                    .collect()
            })
            .collect::<Result<_>>()?;
        let n = rows.len();
        if n % 2 == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::dim("kernel text must be an odd square matrix"));
        }
        Self::from_values(n / 2, rows.concat())
    }
}

/// Kernel generated from `q` on a `(2r+1)²` grid.
pub fn generate_kernel(q: EkpParams, radius: usize) -> Result<Kernel> {
    let mut g = Graph::new();
    let qv = g.constant(Tensor::new(vec![3], q.to_array().to_vec())?);
    let k = ekp_kernel(&mut g, qv, radius)?;
    Ok(Kernel { radius, values: g.value(k).data().to_vec() })
}

struct EkpBackward {
    radius: usize,
}

impl Backward for EkpBackward {
    fn name(&self) -> &'static str {
        "ekp_kernel"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let q = inputs[0].data();
        let (q11, q21, q22) = (q[0], q[1], q[2]);
        let k = out.data();
        let r = self.radius as isize;
        // d log u / dq without the 1/q terms from |L|: they cancel under normalization.
        let mut dlog = Vec::with_capacity(k.len());
        let mut mean = [0.0; 3];
        let mut idx = 0;
        for i in -r..=r {
            for j in -r..=r {
                let (fi, fj) = (i as f64, j as f64);
                let t1 = q11 * fi + q21 * fj;
                let t2 = q22 * fj;
                let a = [-t1 * fi, -t1 * fj, -t2 * fj];
                for m in 0..3 {
                    mean[m] += k[idx] * a[m];
                }
                dlog.push(a);
                idx += 1;
            }
        }
        let mut dq = vec![0.0; 3];
        for ((a, &kv), &gv) in dlog.iter().zip(k).zip(g) {
            for m in 0..3 {
                dq[m] += gv * kv * (a[m] - mean[m]);
            }
        }
        vec![Some(dq)]
    }
}

/// Taped kernel generator: `q [3] → kernel [2r+1, 2r+1]`.
pub fn ekp_kernel(g: &mut Graph, q: Var, radius: usize) -> Result<Var> {
    let params = EkpParams::from_slice(g.value(q).data())?;
    params.check()?;
    let r = radius as isize;
    let side = 2 * radius + 1;
    let mut values = Vec::with_capacity(side * side);
    for i in -r..=r {
        for j in -r..=r {
            values.push(params.density(i as f64, j as f64));
        }
    }
    let total: f64 = values.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateKernel { det: params.det() });
    }
    values.iter_mut().for_each(|v| *v /= total);
    let value = Tensor::new(vec![side, side], values)?;
    Ok(g.record(value, &[q], EkpBackward { radius }))
}
