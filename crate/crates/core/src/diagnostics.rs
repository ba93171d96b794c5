//! Finite-difference checks of every differentiable operation, the energy
//! and the Langevin objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::degradation::{blur_downsample, synthesize_pair, DegradationSpec, KernelSpec, NoiseSpec};
use crate::ekp::{ekp_kernel, generate_kernel, EkpParams};
use crate::em::{energy, langevin_objective, SolverConfig};
use crate::error::Result;
use crate::generator::{sample_latent, Architecture, Generator};
use crate::noise::{update_variance, weighted_data_term, PatchSize};
use crate::pattern::test_image;
use crate::tensor::ops::{self, Axis};
use crate::tensor::{grad_check, grad_check_sweep, Backward, GradCheckReport, Graph, PadMode, Probe, Stencil, Tensor, Var};

/// Pass threshold on the relative error.
pub const TOLERANCE: f64 = 1e-5;

/// Central-difference step for the operation checks.
pub const STEP: f64 = 1e-5;

/// Steps tried per coordinate, with the fourth-order stencil, for the energy
/// and the Langevin objective. Tiny latent gradients drown in rounding of
/// the full objective (~5e3) unless the step is large, while the smoothed `|t|^γ` prior has
/// curvature up to ~1e5 where a difference is near zero, which needs steps
/// near 1e-7. A gain or bias step shifts a whole channel and can also push a
/// pre-activation across the LeakyReLU kink. See [`grad_check_sweep`].
pub const ENERGY_STEPS: [f64; 6] = [1e-5, 1e-4, 1e-6, 3e-6, 3e-7, 1e-7];

/// Network coordinates whose analytic gradient is below this fraction of the
/// largest one in the same tensor are skipped. At the 2×2 bottleneck of a
/// 32×32 instance, reflect padding makes some stride-2 taps read the same
/// pixel for every output, so their contribution is removed by the
/// normalization and the gradient is zero up to rounding.
pub const DEAD_TAP_RATIO: f64 = 1e-9;

pub const CHECK_NAMES: [&str; 18] = [
    "conv2d",
    "upsample_nearest",
    "spatial_norm",
    "leaky_relu",
    "sigmoid",
    "scale",
    "smooth_abs_pow",
    "add",
    "sub",
    "mul",
    "concat_channels",
    "direct_downsample",
    "forward_diff",
    "blur_downsample",
    "ekp_kernel",
    "weighted_data_term",
    "energy",
    "langevin",
];

/// Name of the deliberately wrong operation used as a negative control.
pub const CORRUPT_NAME: &str = "corrupt_adjoint";

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

impl CheckOutcome {
    fn new(name: &str, r: GradCheckReport) -> Self {
        CheckOutcome {
            name: name.to_string(),
            max_rel_error: r.max_rel_error,
            checked: r.checked,
            passed: r.max_rel_error < TOLERANCE,
        }
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// `Σ w ⊙ y` with a fixed random `w`, so every output coordinate matters.
fn probe_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let w = uniform(g.shape(y), -1.0, 1.0, &mut rng);
    let wv = g.constant(w);
    let p = ops::mul(g, y, wv)?;
    Ok(ops::sum(g, p))
}

fn check_unary(name: &str, seed: u64, f: impl Fn(&mut Graph, Var) -> Var) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&[2, 6, 6], -2.0, 2.0, &mut rng);
    let r = grad_check(|g, v| {
        let y = f(g, v[0]);
        probe_sum(g, y, seed)
    }, &[x], STEP, Probe::All)?;
    Ok(CheckOutcome::new(name, r))
}

fn check_binary(name: &str, seed: u64, f: impl Fn(&mut Graph, Var, Var) -> Result<Var>) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = uniform(&[2, 5, 5], -1.0, 1.0, &mut rng);
    let b = uniform(&[2, 5, 5], -1.0, 1.0, &mut rng);
    let r = grad_check(|g, v| {
        let y = f(g, v[0], v[1])?;
        probe_sum(g, y, seed)
    }, &[a, b], STEP, Probe::All)?;
    Ok(CheckOutcome::new(name, r))
}

/// `2x` forward with the adjoint of `2.2x`.
struct CorruptScale;

impl Backward for CorruptScale {
    fn name(&self) -> &'static str {
        CORRUPT_NAME
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.iter().map(|v| 2.2 * v).collect())]
    }
}

/// The 32×32-HR instance used by the energy and Langevin checks: a degraded
/// test image, the default generator and `λ` fitted to its initial output.
pub struct ToyInstance {
    pub y: Tensor,
    pub z: Tensor,
    pub generator: Generator,
    pub q: EkpParams,
    pub lambda: crate::noise::VarianceMap,
    pub cfg: SolverConfig,
}

impl ToyInstance {
    pub fn new(seed: u64) -> Result<Self> {
        let hr = test_image(32, 32, seed);
        let spec = DegradationSpec {
            kernel: KernelSpec::Anisotropic { sigma1: 2.0, sigma2: 1.0, theta_deg: 30.0 },
            scale: 2,
            noise: NoiseSpec::Awgn { level: 0.01 },
            seed,
            clip: false,
        };
        let y = synthesize_pair(&hr, &spec)?.lr;
        let cfg = SolverConfig { patch: PatchSize::Square(5), ..SolverConfig::default() };
        let generator = Generator::new(Architecture::new(3), 32, 32, seed)?;
        let z = sample_latent(32, 32, generator.architecture().latent_channels, seed + 1);
        let q = EkpParams::new(0.55, 0.1, 0.45);
        let x = generator.render(&z)?;
        let k = generate_kernel(q, cfg.kernel_radius()?)?;
        let pred = crate::degradation::blur_downsample_tensor(&x, &k, 2)?;
        let residual = Tensor::new(y.shape().to_vec(), y.data().iter().zip(pred.data()).map(|(a, b)| a - b).collect())?;
        let lambda = update_variance(&residual, cfg.patch)?;
        Ok(ToyInstance { y, z, generator, q, lambda, cfg })
    }

    pub fn point(&self) -> Vec<Tensor> {
        let mut p = vec![self.z.clone(), Tensor::new(vec![3], self.q.to_array().to_vec()).expect("3 values")];
        p.extend(self.generator.params().iter().cloned());
        p
    }

    pub fn energy_on(&self, g: &mut Graph, v: &[Var]) -> Result<Var> {
        let k = ekp_kernel(g, v[1], self.cfg.kernel_radius()?)?;
        let x = self.generator.forward(g, v[0], &v[2..])?;
        energy(g, &self.y, x, k, &self.lambda, &self.cfg)
    }

    /// 24 latent coordinates, all of `q`, and 2 live entries of every
    /// network tensor.
    fn energy_probe(&self, seed: u64) -> Result<Probe> {
        let mut g = Graph::new();
        let leaves: Vec<Var> = self.point().into_iter().map(|t| g.leaf(t, true)).collect();
        let e = self.energy_on(&mut g, &leaves)?;
        g.backward(e)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coords: Vec<(usize, usize)> = (0..24).map(|_| (0, rng.random_range(0..self.z.len()))).collect();
        coords.extend((0..3).map(|i| (1, i)));
        for (i, leaf) in leaves.iter().enumerate().skip(2) {
            let grad = g.grad(*leaf).expect("leaf requires grad").data();
            let max = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let live: Vec<usize> = (0..grad.len()).filter(|&j| grad[j].abs() > DEAD_TAP_RATIO * max).collect();
            coords.extend((0..2.min(live.len())).map(|_| (i, live[rng.random_range(0..live.len())])));
        }
        Ok(Probe::Coords(coords))
    }

    /// Gradient check of the energy with respect to `z`, `q` and `α`.
    pub fn check_energy(&self, seed: u64) -> Result<GradCheckReport> {
        let probe = self.energy_probe(seed)?;
        grad_check_sweep(|g, v| self.energy_on(g, v), &self.point(), &ENERGY_STEPS, probe, Stencil::Central4, TOLERANCE / 10.0)
    }

    /// Gradient check of `energy + ½‖z‖²` with respect to `z`.
    pub fn check_langevin(&self, seed: u64) -> Result<GradCheckReport> {
        let kernel = generate_kernel(self.q, self.cfg.kernel_radius()?)?.to_tensor();
        grad_check_sweep(
            |g, v| {
                let alpha = self.generator.register(g, false);
                let k = g.constant(kernel.clone());
                langevin_objective(g, &self.y, v[0], &self.generator, &alpha, k, &self.lambda, &self.cfg, true)
            },
            std::slice::from_ref(&self.z),
            &ENERGY_STEPS,
            Probe::Sample { per_input: 48, seed },
            Stencil::Central4,
            TOLERANCE / 10.0,
        )
    }
}

/// Runs one named check.
pub fn run_check(name: &str, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outcome = match name {
        "conv2d" => {
            let x = uniform(&[2, 8, 8], -1.0, 1.0, &mut rng);
            let w = uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
            let b = uniform(&[3], -1.0, 1.0, &mut rng);
            let mut worst: Option<GradCheckReport> = None;
            for (stride, pad, mode) in
                [(1, 1, PadMode::Reflect), (2, 1, PadMode::Reflect), (1, 1, PadMode::Replicate), (2, 0, PadMode::Zero)]
            {
                let r = grad_check(|g, v| {
                    let y = ops::conv2d(g, v[0], v[1], Some(v[2]), stride, pad, mode)?;
                    probe_sum(g, y, seed)
                }, &[x.clone(), w.clone(), b.clone()], STEP, Probe::All)?;
                if worst.as_ref().is_none_or(|w| r.max_rel_error > w.max_rel_error) {
                    worst = Some(r);
                }
            }
            CheckOutcome::new(name, worst.expect("four configurations"))
        }
        "upsample_nearest" => check_unary(name, seed, |g, x| ops::upsample_nearest(g, x, 2).expect("valid factor"))?,
        "spatial_norm" => {
            let x = uniform(&[2, 4, 4], -1.0, 1.0, &mut rng);
            let gain = uniform(&[2], 0.5, 1.5, &mut rng);
            let bias = uniform(&[2], -0.5, 0.5, &mut rng);
            let r = grad_check(|g, v| {
                let y = ops::spatial_norm(g, v[0], v[1], v[2], 1e-5)?;
                probe_sum(g, y, seed)
            }, &[x, gain, bias], STEP, Probe::All)?;
            CheckOutcome::new(name, r)
        }
        "leaky_relu" => check_unary(name, seed, |g, x| ops::leaky_relu(g, x, 0.25))?,
        "sigmoid" => check_unary(name, seed, ops::sigmoid)?,
        "scale" => check_unary(name, seed, |g, x| ops::scale(g, x, -1.7))?,
        "smooth_abs_pow" => check_unary(name, seed, |g, x| ops::smooth_abs_pow(g, x, 2.0 / 3.0, 1e-8))?,
        "add" => check_binary(name, seed, ops::add)?,
        "sub" => check_binary(name, seed, ops::sub)?,
        "mul" => check_binary(name, seed, ops::mul)?,
        "concat_channels" => check_binary(name, seed, |g, a, b| ops::concat_channels(g, &[a, b]))?,
        "direct_downsample" => {
            let x = uniform(&[2, 8, 8], -1.0, 1.0, &mut rng);
            let r = grad_check(|g, v| {
                let y = ops::direct_downsample(g, v[0], 2)?;
                probe_sum(g, y, seed)
            }, &[x], STEP, Probe::All)?;
            CheckOutcome::new(name, r)
        }
        "forward_diff" => {
            let x = uniform(&[2, 6, 7], -1.0, 1.0, &mut rng);
            let r = grad_check(|g, v| {
                let h = ops::forward_diff(g, v[0], Axis::Horizontal)?;
                let vd = ops::forward_diff(g, v[0], Axis::Vertical)?;
                let s = ops::add(g, h, vd)?;
                probe_sum(g, s, seed)
            }, &[x], STEP, Probe::All)?;
            CheckOutcome::new(name, r)
        }
        "blur_downsample" => {
            let x = uniform(&[2, 8, 8], 0.0, 1.0, &mut rng);
            let k = generate_kernel(EkpParams::new(0.6, 0.2, 0.5), 2)?.to_tensor();
            let r = grad_check(|g, v| {
                let y = blur_downsample(g, v[0], v[1], 2)?;
                probe_sum(g, y, seed)
            }, &[x, k], STEP, Probe::All)?;
            CheckOutcome::new(name, r)
        }
        "ekp_kernel" => {
            let q = Tensor::new(vec![3], vec![0.5, 0.12, 0.35])?;
            let r = grad_check(|g, v| {
                let k = ekp_kernel(g, v[0], 5)?;
                probe_sum(g, k, seed)
            }, &[q], STEP, Probe::All)?;
            CheckOutcome::new(name, r)
        }
        "weighted_data_term" => {
            let y = uniform(&[3, 6, 6], 0.0, 1.0, &mut rng);
            let y_hat = uniform(&[3, 6, 6], 0.0, 1.0, &mut rng);
            let residual = uniform(&[3, 6, 6], -0.3, 0.3, &mut rng);
            let lambda = update_variance(&residual, PatchSize::Square(3))?;
            let r = grad_check(|g, v| weighted_data_term(g, &y, v[0], &lambda), &[y_hat], STEP, Probe::All)?;
            CheckOutcome::new(name, r)
        }
        "energy" => CheckOutcome::new(name, ToyInstance::new(seed)?.check_energy(seed)?),
        "langevin" => CheckOutcome::new(name, ToyInstance::new(seed)?.check_langevin(seed)?),
        CORRUPT_NAME => {
            let x = uniform(&[2, 4, 4], -1.0, 1.0, &mut rng);
            let r = grad_check(|g, v| {
                let value = g.value(v[0]).map(|t| 2.0 * t);
                let y = g.record(value, &[v[0]], CorruptScale);
                probe_sum(g, y, seed)
            }, &[x], STEP, Probe::All)?;
            CheckOutcome::new(name, r)
        }
        other => {
            return Err(crate::Error::invalid(format!(
                "unknown check {other:?}; available: {}",
                CHECK_NAMES.join(", ")
            )))
        }
    };
    Ok(outcome)
}

/// Runs `names` (all checks when empty).
pub fn run_suite(names: &[String], seed: u64) -> Result<Vec<CheckOutcome>> {
    let all: Vec<String> = CHECK_NAMES.iter().map(|s| s.to_string()).collect();
    let selected = if names.is_empty() { &all } else { names };
    selected.iter().map(|n| run_check(n, seed)).collect()
}
