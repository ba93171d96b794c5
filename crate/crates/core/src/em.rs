//! Monte Carlo EM: Langevin sampling of the latent `z`, Adam updates of the
//! network and kernel parameters, closed-form update of the variance map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::degradation::blur_downsample;
use crate::ekp::{ekp_kernel, generate_kernel, kernel_size_for_scale, EkpParams, Kernel};
use crate::error::{Error, Result};
use crate::generator::{sample_latent, Architecture, Generator};
use crate::noise::{update_variance, weighted_data_term, PatchSize, VarianceMap};
use crate::tensor::ops::{self, Axis};
use crate::tensor::{AdamState, Graph, Tensor, Var};

/// Smoothing of `|t|^γ` in the gradient prior.
pub const PRIOR_EPS: f64 = 1e-8;

/// Iterations after which the kernel estimate is recorded.
pub const SNAPSHOT_ITERATIONS: [usize; 5] = [1, 50, 100, 200, 300];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub scale: usize,
    /// Weight of the hyper-Laplacian gradient prior.
    pub rho: f64,
    pub gamma: f64,
    pub patch: PatchSize,
    pub lr_net: f64,
    pub lr_kernel: f64,
    pub langevin_steps: usize,
    pub langevin_delta: f64,
    pub iterations: usize,
    /// Adam steps per M-step.
    pub steps_per_m: usize,
    pub seed: u64,
    /// Overrides the kernel side derived from the scale.
    pub kernel_size: Option<usize>,
    pub width_multiplier: f64,
    /// Progress line to stderr every this many iterations; 0 is silent.
    pub log_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            scale: 2,
            rho: 0.2,
            gamma: 2.0 / 3.0,
            patch: PatchSize::Square(15),
            lr_net: 1e-2,
            lr_kernel: 5e-3,
            langevin_steps: 10,
            langevin_delta: 0.01,
            iterations: 300,
            steps_per_m: 1,
            seed: 0,
            kernel_size: None,
            width_multiplier: 1.0,
            log_every: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0) {
            return Err(Error::invalid(format!("rho must be non-negative, got {}", self.rho)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 2.0) {
            return Err(Error::invalid(format!("gamma must lie in (0, 2], got {}", self.gamma)));
        }
        if !(self.langevin_delta >= 0.0) {
            return Err(Error::invalid(format!("langevin_delta must be non-negative, got {}", self.langevin_delta)));
        }
        if !(self.lr_net >= 0.0 && self.lr_kernel >= 0.0) {
            return Err(Error::invalid("learning rates must be non-negative"));
        }
        if let PatchSize::Square(p) = self.patch {
            if p % 2 == 0 {
                return Err(Error::invalid(format!("patch size must be odd, got {p}")));
            }
        }
        if !(self.width_multiplier > 0.0) {
            return Err(Error::invalid("width_multiplier must be positive"));
        }
        self.kernel_radius().map(|_| ())
    }

    pub fn kernel_radius(&self) -> Result<usize> {
        match self.kernel_size {
            Some(k) if k % 2 == 1 => Ok(k / 2),
            Some(k) => Err(Error::invalid(format!("kernel size must be odd, got {k}"))),
            None => kernel_size_for_scale(self.scale).map(|k| k / 2),
        }
    }
}

/// `ρ Σ_k Σ_i (|f_k ∗ x|_i² + ε)^{γ/2}` with forward differences, shifted by
/// its value at a constant image so that flat images cost nothing.
pub fn gradient_prior(g: &mut Graph, x: Var, rho: f64, gamma: f64) -> Result<Var> {
    let mut terms = Vec::with_capacity(2);
    for axis in [Axis::Horizontal, Axis::Vertical] {
        let d = ops::forward_diff(g, x, axis)?;
        let p = ops::smooth_abs_pow(g, d, gamma, PRIOR_EPS);
        terms.push(ops::sum(g, p));
    }
    let total = ops::add(g, terms[0], terms[1])?;
    let offset = 2.0 * g.value(x).len() as f64 * PRIOR_EPS.powf(0.5 * gamma);
    let offset = g.constant(Tensor::scalar(offset));
    let shifted = ops::sub(g, total, offset)?;
    Ok(ops::scale(g, shifted, rho))
}

/// Data term plus gradient prior for an HR estimate `x` and kernel.
pub fn energy(
    g: &mut Graph,
    y: &Tensor,
    x: Var,
    kernel: Var,
    lambda: &VarianceMap,
    cfg: &SolverConfig,
) -> Result<Var> {
    let y_hat = blur_downsample(g, x, kernel, cfg.scale)?;
    let data = weighted_data_term(g, y, y_hat, lambda)?;
    if cfg.rho == 0.0 {
        return Ok(data);
    }
    let prior = gradient_prior(g, x, cfg.rho, cfg.gamma)?;
    ops::add(g, data, prior)
}

/// `energy(G(z; α)) + ½‖z‖²`, or only `½‖z‖²` when `include_energy` is false.
#[allow(clippy::too_many_arguments)]
pub fn langevin_objective(
    g: &mut Graph,
    y: &Tensor,
    z: Var,
    generator: &Generator,
    alpha: &[Var],
    kernel: Var,
    lambda: &VarianceMap,
    cfg: &SolverConfig,
    include_energy: bool,
) -> Result<Var> {
    let sq = ops::mul(g, z, z)?;
    let sq = ops::sum(g, sq);
    let half = ops::scale(g, sq, 0.5);
    if !include_energy {
        return Ok(half);
    }
    let x = generator.forward(g, z, alpha)?;
    let e = energy(g, y, x, kernel, lambda, cfg)?;
    ops::add(g, e, half)
}

/// Blur kernel being estimated, or held at a known value.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelEstimate {
    Learned(EkpParams),
    Fixed(Kernel),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSnapshot {
    pub iteration: usize,
    /// `(q11, q21, q22)`; absent for a fixed kernel.
    pub q: Option<[f64; 3]>,
    pub kernel: Vec<Vec<f64>>,
}

impl KernelSnapshot {
    fn new(iteration: usize, estimate: &KernelEstimate, kernel: &Kernel) -> Self {
        let q = match estimate {
            KernelEstimate::Learned(q) => Some(q.to_array()),
            KernelEstimate::Fixed(_) => None,
        };
        let kernel = kernel.values().chunks(kernel.side()).map(<[f64]>::to_vec).collect();
        KernelSnapshot { iteration, q, kernel }
    }

    pub fn to_kernel(&self) -> Result<Kernel> {
        let side = self.kernel.len();
        Kernel::from_values(side / 2, self.kernel.concat())
    }
}

/// Record of an EM run without wall-clock data, so it is reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub energy_history: Vec<f64>,
    pub lambda_mean_history: Vec<f64>,
    pub kernel_snapshots: Vec<KernelSnapshot>,
}

#[derive(Clone, Debug)]
pub struct EmOutput {
    /// `G(z; α)` cropped to `s·h × s·w` and clamped to [0, 1].
    pub hr: Tensor,
    pub kernel: Kernel,
    pub lambda: VarianceMap,
    pub trace: EmTrace,
}

/// Sizes after padding the LR input so the HR side suits the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PaddedSize {
    pub lr_height: usize,
    pub lr_width: usize,
    pub padded_lr_height: usize,
    pub padded_lr_width: usize,
}

pub fn padded_size(lr_height: usize, lr_width: usize, scale: usize, arch: &Architecture) -> Result<PaddedSize> {
    if scale == 0 || lr_height == 0 || lr_width == 0 {
        return Err(Error::invalid("scale and LR size must be positive"));
    }
    let m = arch.size_multiple();
    let step = m / gcd(scale, m);
    let min_lr = 32usize.div_ceil(scale);
    let pad = |n: usize| n.max(min_lr).div_ceil(step) * step;
    Ok(PaddedSize {
        lr_height,
        lr_width,
        padded_lr_height: pad(lr_height),
        padded_lr_width: pad(lr_width),
    })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Replicates the last row and column out to `h × w`.
pub fn pad_replicate(img: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, ih, iw) = img.dims3()?;
    if h < ih || w < iw {
        return Err(Error::dim(format!("cannot pad {ih}x{iw} to {h}x{w}")));
    }
    let src = img.data();
    Ok(Tensor::from_fn(&[c, h, w], |idx| {
        let (ch, y, x) = (idx / (h * w), (idx / w) % h, idx % w);
        src[(ch * ih + y.min(ih - 1)) * iw + x.min(iw - 1)]
    }))
}

fn crop_top_left(img: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, ih, iw) = img.dims3()?;
    let src = img.data();
    Ok(Tensor::from_fn(&[c, h, w], |idx| {
        let (ch, y, x) = (idx / (h * w), (idx / w) % h, idx % w);
        src[(ch * ih + y) * iw + x]
    }))
}

/// Iteration-by-iteration solver. [`EmSolver::step`] leaves the state
/// untouched when it fails, so a caller can still dump the trace.
pub struct EmSolver {
    cfg: SolverConfig,
    y: Tensor,
    size: PaddedSize,
    radius: usize,
    z: Tensor,
    generator: Generator,
    estimate: KernelEstimate,
    lambda: VarianceMap,
    adam_net: AdamState,
    adam_kernel: AdamState,
    iteration: usize,
    rng: ChaCha8Rng,
    trace: EmTrace,
}

impl EmSolver {
    /// Kernel initialized as an isotropic Gaussian of width `s`.
    pub fn new(y: &Tensor, cfg: SolverConfig) -> Result<Self> {
        let q = EkpParams::isotropic(cfg.scale as f64);
        Self::with_kernel(y, cfg, KernelEstimate::Learned(q))
    }

    pub fn with_kernel(y: &Tensor, cfg: SolverConfig, estimate: KernelEstimate) -> Result<Self> {
        cfg.validate()?;
        let (c, h, w) = y.dims3()?;
        if !y.is_finite() {
            return Err(Error::invalid("observation contains non-finite values"));
        }
        let radius = match &estimate {
            KernelEstimate::Learned(q) => {
                q.check()?;
                cfg.kernel_radius()?
            }
            KernelEstimate::Fixed(k) => k.radius(),
        };
        let arch = Architecture::new(c).widened(cfg.width_multiplier);
        let size = padded_size(h, w, cfg.scale, &arch)?;
        let y = pad_replicate(y, size.padded_lr_height, size.padded_lr_width)?;
        let (hh, hw) = (cfg.scale * size.padded_lr_height, cfg.scale * size.padded_lr_width);

        let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
        let generator = Generator::new(arch, hh, hw, seeds.random())?;
        let z = sample_latent(hh, hw, generator.architecture().latent_channels, seeds.random());
        let rng = ChaCha8Rng::seed_from_u64(seeds.random());

        let adam_net = AdamState::new(&generator.params().iter().collect::<Vec<_>>());
        let adam_kernel = AdamState::new(&[&Tensor::zeros(&[3])]);
        let lambda = VarianceMap::uniform(size.padded_lr_height, size.padded_lr_width, 1.0)?;
        let mut solver = EmSolver {
            cfg,
            y,
            size,
            radius,
            z,
            generator,
            estimate,
            lambda,
            adam_net,
            adam_kernel,
            iteration: 0,
            rng,
            trace: EmTrace::default(),
        };
        solver.lambda = solver.fitted_variance()?;
        Ok(solver)
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn padded_size(&self) -> PaddedSize {
        self.size
    }

    pub fn z(&self) -> &Tensor {
        &self.z
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn estimate(&self) -> &KernelEstimate {
        &self.estimate
    }

    pub fn lambda(&self) -> &VarianceMap {
        &self.lambda
    }

    pub fn trace(&self) -> &EmTrace {
        &self.trace
    }

    /// Adam step counts of the network and kernel optimizers.
    pub fn adam_steps(&self) -> (u64, u64) {
        (self.adam_net.step_count(), self.adam_kernel.step_count())
    }

    pub fn kernel(&self) -> Result<Kernel> {
        match &self.estimate {
            KernelEstimate::Learned(q) => generate_kernel(*q, self.radius),
            KernelEstimate::Fixed(k) => Ok(k.clone()),
        }
    }

    /// Kernel on the tape, plus the `q` leaf when the kernel is learned.
    fn kernel_var(&self, g: &mut Graph, requires_grad: bool) -> Result<(Var, Option<Var>)> {
        match &self.estimate {
            KernelEstimate::Learned(q) => {
                let qv = g.leaf(Tensor::new(vec![3], q.to_array().to_vec())?, requires_grad);
                Ok((ekp_kernel(g, qv, self.radius)?, Some(qv)))
            }
            KernelEstimate::Fixed(k) => Ok((g.constant(k.to_tensor()), None)),
        }
    }

    /// Current energy at the current `z`, `α`, kernel and `λ`.
    pub fn energy_value(&self) -> Result<f64> {
        let mut g = Graph::new();
        let zv = g.constant(self.z.clone());
        let alpha = self.generator.register(&mut g, false);
        let (kv, _) = self.kernel_var(&mut g, false)?;
        let x = self.generator.forward(&mut g, zv, &alpha)?;
        let e = energy(&mut g, &self.y, x, kv, &self.lambda, &self.cfg)?;
        Ok(g.value(e).item())
    }

    /// `∇_z` of the Langevin objective with `α`, kernel and `λ` held fixed.
    pub fn langevin_grad(&self, include_energy: bool) -> Result<Tensor> {
        let mut g = Graph::new();
        let zv = g.leaf(self.z.clone(), true);
        let alpha = self.generator.register(&mut g, false);
        let kernel = match &self.estimate {
            KernelEstimate::Learned(q) => g.constant(generate_kernel(*q, self.radius)?.to_tensor()),
            KernelEstimate::Fixed(k) => g.constant(k.to_tensor()),
        };
        let obj = langevin_objective(
            &mut g,
            &self.y,
            zv,
            &self.generator,
            &alpha,
            kernel,
            &self.lambda,
            &self.cfg,
            include_energy,
        )?;
        g.backward(obj)?;
        Ok(g.take_grad(zv).expect("z requires grad"))
    }

    /// One update `z ← z − (δ²/2)∇g + δζ`. Returns the `ζ` that was drawn.
    pub fn langevin_step(&mut self, include_energy: bool) -> Result<Tensor> {
        let grad = self.langevin_grad(include_energy)?;
        if !grad.is_finite() {
            return Err(Error::Divergence { iteration: self.iteration + 1, stage: "e-step" });
        }
        let delta = self.cfg.langevin_delta;
        let zeta = Tensor::from_fn(self.z.shape(), |_| StandardNormal.sample(&mut self.rng));
        let mut next = self.z.clone();
        for ((v, gr), n) in next.data_mut().iter_mut().zip(grad.data()).zip(zeta.data()) {
            *v += -0.5 * delta * delta * gr + delta * n;
        }
        if !next.is_finite() {
            return Err(Error::Divergence { iteration: self.iteration + 1, stage: "e-step" });
        }
        self.z = next;
        Ok(zeta)
    }

    pub fn e_step(&mut self) -> Result<()> {
        for _ in 0..self.cfg.langevin_steps {
            self.langevin_step(true)?;
        }
        Ok(())
    }

    /// Adam updates of `α` and the kernel. Returns the energy before the
    /// first update.
    pub fn m_step_params(&mut self) -> Result<f64> {
        let mut first = None;
        for _ in 0..self.cfg.steps_per_m.max(1) {
            let mut g = Graph::new();
            let zv = g.constant(self.z.clone());
            let alpha = self.generator.register(&mut g, true);
            let (kv, qv) = self.kernel_var(&mut g, true)?;
            let x = self.generator.forward(&mut g, zv, &alpha)?;
            let e = energy(&mut g, &self.y, x, kv, &self.lambda, &self.cfg)?;
            let value = g.value(e).item();
            if !value.is_finite() {
                return Err(Error::Divergence { iteration: self.iteration + 1, stage: "m-step" });
            }
            first.get_or_insert(value);
            g.backward(e)?;

            let grads: Vec<Tensor> = alpha.iter().map(|a| g.take_grad(*a).expect("alpha requires grad")).collect();
            if grads.iter().any(|t| !t.is_finite()) {
                return Err(Error::Divergence { iteration: self.iteration + 1, stage: "m-step" });
            }
            let mut new_params = self.generator.params().to_vec();
            let mut adam_net = self.adam_net.clone();
            {
                let mut refs: Vec<&mut Tensor> = new_params.iter_mut().collect();
                let grad_refs: Vec<Option<&Tensor>> = grads.iter().map(Some).collect();
                adam_net.step(&mut refs, &grad_refs, self.cfg.lr_net)?;
            }

            let mut new_estimate = self.estimate.clone();
            let mut adam_kernel = self.adam_kernel.clone();
            if let (Some(qv), KernelEstimate::Learned(q)) = (qv, &mut new_estimate) {
                let gq = g.take_grad(qv).expect("q requires grad");
                if !gq.is_finite() {
                    return Err(Error::Divergence { iteration: self.iteration + 1, stage: "m-step" });
                }
                let mut qt = Tensor::new(vec![3], q.to_array().to_vec())?;
                adam_kernel.step(&mut [&mut qt], &[Some(&gq)], self.cfg.lr_kernel)?;
                *q = EkpParams::from_slice(qt.data())?;
                q.clamp_degenerate();
            }
            self.generator.params_mut().clone_from_slice(&new_params);
            self.adam_net = adam_net;
            self.adam_kernel = adam_kernel;
            self.estimate = new_estimate;
        }
        Ok(first.expect("at least one step"))
    }

    /// LR prediction of the current state.
    pub fn prediction(&self) -> Result<Tensor> {
        let mut g = Graph::new();
        let zv = g.constant(self.z.clone());
        let alpha = self.generator.register(&mut g, false);
        let (kv, _) = self.kernel_var(&mut g, false)?;
        let x = self.generator.forward(&mut g, zv, &alpha)?;
        let y_hat = blur_downsample(&mut g, x, kv, self.cfg.scale)?;
        Ok(g.value(y_hat).clone())
    }

    fn fitted_variance(&self) -> Result<VarianceMap> {
        let pred = self.prediction()?;
        let residual = Tensor::new(
            self.y.shape().to_vec(),
            self.y.data().iter().zip(pred.data()).map(|(a, b)| a - b).collect(),
        )?;
        update_variance(&residual, self.cfg.patch)
    }

    pub fn m_step_variance(&mut self) -> Result<()> {
        self.lambda = self.fitted_variance()?;
        Ok(())
    }

    /// One full EM iteration. Returns the recorded objective: the energy at
    /// the sampled `z` before the parameter update plus the likelihood
    /// normalizer of the `λ` it was weighted with. Without the normalizer the
    /// closed-form `λ` update pins the data term near `N·C/2` and the value
    /// stops tracking the fit.
    pub fn step(&mut self) -> Result<f64> {
        let saved_z = self.z.clone();
        let saved_rng = self.rng.clone();
        let result = self.e_step().and_then(|_| self.m_step_params());
        let energy = match result {
            Ok(e) => e + self.lambda.log_normalizer(self.y.shape()[0]),
            Err(err) => {
                self.z = saved_z;
                self.rng = saved_rng;
                return Err(err);
            }
        };
        self.m_step_variance()?;
        self.iteration += 1;
        self.trace.energy_history.push(energy);
        self.trace.lambda_mean_history.push(self.lambda.mean());
        let kernel = self.kernel()?;
        if SNAPSHOT_ITERATIONS.contains(&self.iteration) || self.iteration == self.cfg.iterations {
            if self.trace.kernel_snapshots.last().map(|s| s.iteration) != Some(self.iteration) {
                self.trace.kernel_snapshots.push(KernelSnapshot::new(self.iteration, &self.estimate, &kernel));
            }
        }
        if self.cfg.log_every > 0 && self.iteration % self.cfg.log_every == 0 {
            eprintln!(
                "iter {:4}  energy {:.6e}  lambda_mean {:.4e}  kernel_m2 {:.4}",
                self.iteration,
                energy,
                self.lambda.mean(),
                kernel.second_moment()
            );
        }
        Ok(energy)
    }

    /// Runs the remaining iterations.
    pub fn run(&mut self) -> Result<()> {
        while self.iteration < self.cfg.iterations {
            self.step()?;
        }
        Ok(())
    }

    /// `G(z; α)` cropped to the unpadded HR size and clamped to [0, 1].
    pub fn current_image(&self) -> Result<Tensor> {
        let x = self.generator.render(&self.z)?;
        let s = self.cfg.scale;
        let x = crop_top_left(&x, s * self.size.lr_height, s * self.size.lr_width)?;
        Ok(x.map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn output(&self) -> Result<EmOutput> {
        let lambda_full = self.lambda.to_tensor().reshape(vec![1, self.size.padded_lr_height, self.size.padded_lr_width])?;
        let lambda = crop_top_left(&lambda_full, self.size.lr_height, self.size.lr_width)?;
        let lambda = VarianceMap::from_values(
            self.size.lr_height,
            self.size.lr_width,
            lambda.into_data(),
            self.lambda.patch(),
        )?;
        Ok(EmOutput { hr: self.current_image()?, kernel: self.kernel()?, lambda, trace: self.trace.clone() })
    }
}

/// Runs all EM iterations from the default initialization.
pub fn run_em(y: &Tensor, cfg: &SolverConfig) -> Result<EmOutput> {
    let mut solver = EmSolver::new(y, cfg.clone())?;
    solver.run()?;
    solver.output()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::{blur_downsample_tensor, KernelSpec};
    use crate::tensor::{grad_check, Probe};

    fn small_cfg() -> SolverConfig {
        SolverConfig { width_multiplier: 0.25, iterations: 3, langevin_steps: 2, ..Default::default() }
    }

    fn toy_lr(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[3, 16, 16], |_| rng.random_range(0.2..0.8))
    }

    #[test]
    fn padding_sizes() {
        let arch = Architecture::new(3);
        let p = padded_size(48, 50, 2, &arch).unwrap();
        assert_eq!((p.padded_lr_height, p.padded_lr_width), (48, 56));
        let p = padded_size(10, 21, 3, &arch).unwrap();
        assert_eq!((p.padded_lr_height, p.padded_lr_width), (16, 32));
        let p = padded_size(9, 9, 4, &arch).unwrap();
        assert_eq!((p.padded_lr_height, p.padded_lr_width), (12, 12));
    }

    #[test]
    fn flat_image_has_no_prior_cost() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[3, 8, 8], 0.4), true);
        let p = gradient_prior(&mut g, x, 0.2, 2.0 / 3.0).unwrap();
        assert!(g.value(p).item().abs() < 1e-12);
        g.backward(p).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn exact_fit_has_zero_energy() {
        let x = toy_lr(1);
        let k = KernelSpec::Isotropic { sigma: 1.2 }.build(2).unwrap();
        let y = blur_downsample_tensor(&x, &k, 2).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x);
        let kv = g.constant(k.to_tensor());
        let cfg = SolverConfig { rho: 0.0, ..Default::default() };
        let e = energy(&mut g, &y, xv, kv, &VarianceMap::uniform(8, 8, 1e-4).unwrap(), &cfg).unwrap();
        assert_eq!(g.value(e).item(), 0.0);
    }

    #[test]
    fn energy_gradient_all_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(&[1, 12, 12], |_| rng.random_range(0.0..1.0));
        let y = Tensor::from_fn(&[1, 6, 6], |_| rng.random_range(0.0..1.0));
        let lambda = VarianceMap::from_values(6, 6, (0..36).map(|i| 0.5 + 0.02 * i as f64).collect(), PatchSize::Square(3))
            .unwrap();
        let cfg = SolverConfig { kernel_size: Some(5), ..Default::default() };
        let q = Tensor::new(vec![3], vec![0.6, 0.15, 0.45]).unwrap();
        let r = grad_check(
            |g, v| {
                let k = ekp_kernel(g, v[1], 2)?;
                energy(g, &y, v[0], k, &lambda, &cfg)
            },
            &[x, q],
            1e-6,
            Probe::All,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn prior_only_langevin() {
        let cfg = SolverConfig { langevin_delta: 0.3, ..small_cfg() };
        let mut s = EmSolver::new(&toy_lr(2), cfg).unwrap();
        let z0 = s.z().clone();
        assert_eq!(s.langevin_grad(false).unwrap(), z0);
        let zeta = s.langevin_step(false).unwrap();
        for ((a, b), n) in s.z().data().iter().zip(z0.data()).zip(zeta.data()) {
            assert!((a - ((1.0 - 0.045) * b + 0.3 * n)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_delta_keeps_latent() {
        let cfg = SolverConfig { langevin_delta: 0.0, ..small_cfg() };
        let mut s = EmSolver::new(&toy_lr(2), cfg).unwrap();
        let z0 = s.z().clone();
        s.e_step().unwrap();
        assert_eq!(s.z(), &z0);
    }

    #[test]
    fn m_step_descends_and_counts() {
        let cfg = SolverConfig { rho: 0.0, lr_net: 1e-5, lr_kernel: 1e-5, ..small_cfg() };
        let mut s = EmSolver::new(&toy_lr(4), cfg).unwrap();
        let before = s.energy_value().unwrap();
        assert_eq!(s.m_step_params().unwrap(), before);
        assert!(s.energy_value().unwrap() < before);
        assert_eq!(s.adam_steps(), (1, 1));
    }

    #[test]
    fn run_records_history_and_is_reproducible() {
        let y = toy_lr(5);
        let a = run_em(&y, &small_cfg()).unwrap();
        assert_eq!(a.trace.energy_history.len(), 3);
        assert_eq!(a.hr.shape(), &[3, 32, 32]);
        assert!(a.lambda.values().iter().all(|v| *v >= crate::noise::LAMBDA_FLOOR));
        assert!((a.kernel.sum() - 1.0).abs() < 1e-12);
        let snaps: Vec<usize> = a.trace.kernel_snapshots.iter().map(|s| s.iteration).collect();
        assert_eq!(snaps, vec![1, 3]);
        let b = run_em(&y, &small_cfg()).unwrap();
        assert_eq!(a.hr, b.hr);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn whole_image_variance_is_uniform() {
        let cfg = SolverConfig { patch: PatchSize::WholeImage, ..small_cfg() };
        let out = run_em(&toy_lr(6), &cfg).unwrap();
        let v = out.lambda.values();
        assert!(v.iter().all(|x| *x == v[0]));
    }

    #[test]
    fn fixed_kernel_is_kept() {
        let k = KernelSpec::Isotropic { sigma: 1.5 }.build(2).unwrap();
        let mut s = EmSolver::with_kernel(&toy_lr(7), small_cfg(), KernelEstimate::Fixed(k.clone())).unwrap();
        s.run().unwrap();
        assert_eq!(s.kernel().unwrap(), k);
        assert_eq!(s.adam_steps(), (3, 0));
    }
}
