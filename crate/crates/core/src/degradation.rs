//! Forward degradation `y = (x ∗ k)↓s + n` and synthetic test data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ekp::{kernel_size_for_scale, precision_from_covariance, Kernel};
use crate::error::{Error, Result};
use crate::tensor::{Backward, Graph, Tensor, Var};

/// Noise level of the Gaussian test case: 2.55 on the 0–255 scale.
pub const CASE1_NOISE_LEVEL: f64 = 2.55 / 255.0;

/// Read noise of the signal-dependent preset.
pub const CASE2_SIGMA_READ: f64 = 0.005;
/// Shot-noise variance per unit intensity of the signal-dependent preset.
pub const CASE2_SIGMA_SHOT: f64 = 0.001;

struct BlurDownsampleBackward {
    scale: usize,
    radius: usize,
}

impl BlurDownsampleBackward {
    /// Visits every `(output index, kernel index, input index)` triple.
    fn for_each_tap(&self, c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (s, r) = (self.scale, self.radius as isize);
        let side = 2 * self.radius + 1;
        let (oh, ow) = (h / s, w / s);
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let o = (ch * oh + i) * ow + j;
                    for u in -r..=r {
                        let y = clamp((s * i) as isize - u, h);
                        for v in -r..=r {
                            let x = clamp((s * j) as isize - v, w);
                            let kidx = (u + r) as usize * side + (v + r) as usize;
                            f(o, kidx, (ch * h + y) * w + x);
                        }
                    }
                }
            }
        }
    }
}

impl Backward for BlurDownsampleBackward {
    fn name(&self) -> &'static str {
        "blur_downsample"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (c, h, w) = inputs[0].dims3().expect("rank checked in forward");
        let (x, k) = (inputs[0].data(), inputs[1].data());
        let mut dx = needs[0].then(|| vec![0.0; x.len()]);
        let mut dk = needs[1].then(|| vec![0.0; k.len()]);
        self.for_each_tap(c, h, w, |o, ki, xi| {
            if let Some(dx) = dx.as_mut() {
                dx[xi] += g[o] * k[ki];
            }
            if let Some(dk) = dk.as_mut() {
                dk[ki] += g[o] * x[xi];
            }
        });
        vec![dx, dk]
    }
}

/// Per-channel convolution with `kernel [2r+1, 2r+1]` (replicate borders)
/// followed by keeping the upper-left pixel of each `s × s` block. Only the
/// retained samples are computed.
pub fn blur_downsample(g: &mut Graph, x: Var, kernel: Var, scale: usize) -> Result<Var> {
    let (c, h, w) = g.value(x).dims3()?;
    let side = match g.shape(kernel)[..] {
        [a, b] if a == b && a % 2 == 1 => a,
        ref s => return Err(Error::dim(format!("kernel must be an odd square, got {s:?}"))),
    };
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(Error::invalid(format!("{h}x{w} is not divisible by scale {scale}; crop first")));
    }
    let op = BlurDownsampleBackward { scale, radius: side / 2 };
    let (xs, ks) = (g.value(x).data(), g.value(kernel).data());
    let mut out = vec![0.0; c * (h / scale) * (w / scale)];
    op.for_each_tap(c, h, w, |o, ki, xi| out[o] += ks[ki] * xs[xi]);
    let value = Tensor::new(vec![c, h / scale, w / scale], out)?;
    Ok(g.record(value, &[x, kernel], op))
}

/// Untaped [`blur_downsample`].
pub fn blur_downsample_tensor(x: &Tensor, kernel: &Kernel, scale: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let kv = g.constant(kernel.to_tensor());
    let y = blur_downsample(&mut g, xv, kv, scale)?;
    Ok(g.value(y).clone())
}

fn normal_field(len: usize, seed: u64) -> impl Iterator<Item = f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(move |_| StandardNormal.sample(&mut rng))
}

/// Adds i.i.d. `N(0, level²)` noise. No clipping.
pub fn add_awgn(img: &Tensor, level: f64, seed: u64) -> Result<Tensor> {
    if !(level >= 0.0) {
        return Err(Error::invalid(format!("noise level must be non-negative, got {level}")));
    }
    let mut out = img.clone();
    for (v, n) in out.data_mut().iter_mut().zip(normal_field(img.len(), seed)) {
        *v += level * n;
    }
    Ok(out)
}

/// Heteroscedastic surrogate of camera noise: `n_i ~ N(0, σ_read² + σ_shot·x_i)`.
pub fn add_signal_dependent(img: &Tensor, sigma_read: f64, sigma_shot: f64, seed: u64) -> Result<Tensor> {
    if !(sigma_read >= 0.0) || !(sigma_shot >= 0.0) {
        return Err(Error::invalid("noise parameters must be non-negative"));
    }
    let mut out = img.clone();
    for (v, n) in out.data_mut().iter_mut().zip(normal_field(img.len(), seed)) {
        let std = (sigma_read * sigma_read + sigma_shot * v.max(0.0)).sqrt();
        *v += std * n;
    }
    Ok(out)
}

/// Blur kernel description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Delta,
    Isotropic { sigma: f64 },
    /// Widths along the principal axes and rotation in degrees.
    Anisotropic { sigma1: f64, sigma2: f64, theta_deg: f64 },
    /// One of the six test kernels, 1-based.
    Bank { index: usize },
}

impl KernelSpec {
    pub fn build(&self, scale: usize) -> Result<Kernel> {
        let radius = || kernel_size_for_scale(scale).map(|k| k / 2);
        match *self {
            KernelSpec::Delta => Ok(Kernel::delta()),
            KernelSpec::Isotropic { sigma } => {
                check_width(sigma)?;
                anisotropic(radius()?, sigma, sigma, 0.0)
            }
            KernelSpec::Anisotropic { sigma1, sigma2, theta_deg } => {
                check_width(sigma1)?;
                check_width(sigma2)?;
                anisotropic(radius()?, sigma1, sigma2, theta_deg)
            }
            KernelSpec::Bank { index } => {
                let bank = make_test_kernels(scale)?;
                if index == 0 || index > bank.len() {
                    return Err(Error::invalid(format!("kernel bank index must be 1..=6, got {index}")));
                }
                Ok(bank[index - 1].clone())
            }
        }
    }
}

fn check_width(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("kernel width must be positive, got {sigma}")));
    }
    Ok(())
}

fn anisotropic(radius: usize, sigma1: f64, sigma2: f64, theta_deg: f64) -> Result<Kernel> {
    Kernel::gaussian_from_precision(radius, precision_from_covariance(sigma1, sigma2, theta_deg.to_radians()))
}

/// The six test kernels: isotropic widths 1.2 and 2.0, then anisotropic
/// `(σ1, σ2) ∈ {(2.0, 0.8), (3.0, 1.0)}` at 45° and 135°.
pub fn test_kernel_specs() -> [KernelSpec; 6] {
    use KernelSpec::*;
    [
        Isotropic { sigma: 1.2 },
        Isotropic { sigma: 2.0 },
        Anisotropic { sigma1: 2.0, sigma2: 0.8, theta_deg: 45.0 },
        Anisotropic { sigma1: 2.0, sigma2: 0.8, theta_deg: 135.0 },
        Anisotropic { sigma1: 3.0, sigma2: 1.0, theta_deg: 45.0 },
        Anisotropic { sigma1: 3.0, sigma2: 1.0, theta_deg: 135.0 },
    ]
}

pub fn make_test_kernels(scale: usize) -> Result<Vec<Kernel>> {
    test_kernel_specs().iter().map(|s| s.build(scale)).collect()
}

/// Additive noise description, on the unit intensity scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    None,
    Awgn { level: f64 },
    SignalDependent { sigma_read: f64, sigma_shot: f64 },
}

impl NoiseSpec {
    pub fn apply(&self, img: &Tensor, seed: u64) -> Result<Tensor> {
        match *self {
            NoiseSpec::None => Ok(img.clone()),
            NoiseSpec::Awgn { level } => add_awgn(img, level, seed),
            NoiseSpec::SignalDependent { sigma_read, sigma_shot } => {
                add_signal_dependent(img, sigma_read, sigma_shot, seed)
            }
        }
    }
}

/// Full recipe for synthesizing an LR observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationSpec {
    pub kernel: KernelSpec,
    pub scale: usize,
    pub noise: NoiseSpec,
    pub seed: u64,
    /// Clip the noisy result to [0, 1].
    pub clip: bool,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        DegradationSpec {
            kernel: KernelSpec::Isotropic { sigma: 1.2 },
            scale: 2,
            noise: NoiseSpec::Awgn { level: CASE1_NOISE_LEVEL },
            seed: 0,
            clip: false,
        }
    }
}

impl DegradationSpec {
    /// Isotropic σ = 1.2 blur with AWGN of level 2.55/255.
    pub fn case1(scale: usize) -> Self {
        DegradationSpec { scale, ..Self::default() }
    }

    /// Isotropic σ = 1.2 blur with the signal-dependent noise surrogate.
    pub fn case2(scale: usize) -> Self {
        DegradationSpec {
            scale,
            noise: NoiseSpec::SignalDependent { sigma_read: CASE2_SIGMA_READ, sigma_shot: CASE2_SIGMA_SHOT },
            ..Self::default()
        }
    }
}

/// Region kept from the HR input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crop {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Ground-truth record written next to a synthesized LR image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub kernel_path: String,
    pub scale: usize,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub crop: Crop,
}

#[derive(Clone, Debug)]
pub struct SyntheticPair {
    /// Cropped HR image actually degraded.
    pub hr: Tensor,
    pub lr: Tensor,
    /// LR image before noise.
    pub clean_lr: Tensor,
    pub kernel: Kernel,
    pub sidecar: Sidecar,
}

/// Center crop so both sides are multiples of `multiple`.
pub fn center_crop(img: &Tensor, multiple: usize) -> Result<(Tensor, Crop)> {
    let (_, h, w) = img.dims3()?;
    let (nh, nw) = (h - h % multiple, w - w % multiple);
    if nh == 0 || nw == 0 {
        return Err(Error::dim(format!("{h}x{w} image is smaller than the crop multiple {multiple}")));
    }
    let crop = Crop { top: (h - nh) / 2, left: (w - nw) / 2, height: nh, width: nw };
    Ok((crop_tensor(img, crop)?, crop))
}

pub fn crop_tensor(img: &Tensor, crop: Crop) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    if crop.top + crop.height > h || crop.left + crop.width > w {
        return Err(Error::dim(format!("crop {crop:?} outside {h}x{w}")));
    }
    let mut out = Vec::with_capacity(c * crop.height * crop.width);
    for ch in 0..c {
        for y in crop.top..crop.top + crop.height {
            let row = (ch * h + y) * w;
            out.extend_from_slice(&img.data()[row + crop.left..row + crop.left + crop.width]);
        }
    }
    Tensor::new(vec![c, crop.height, crop.width], out)
}

/// Crops, blurs, downsamples and adds noise according to `spec`.
pub fn synthesize_pair(hr: &Tensor, spec: &DegradationSpec) -> Result<SyntheticPair> {
    let (hr, crop) = center_crop(hr, spec.scale)?;
    let kernel = spec.kernel.build(spec.scale)?;
    let clean_lr = blur_downsample_tensor(&hr, &kernel, spec.scale)?;
    let mut lr = spec.noise.apply(&clean_lr, spec.seed)?;
    if spec.clip {
        lr.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    let sidecar = Sidecar {
        kernel_path: "kernel.txt".into(),
        scale: spec.scale,
        noise: spec.noise.clone(),
        seed: spec.seed,
        crop,
    };
    Ok(SyntheticPair { hr, lr, clean_lr, kernel, sidecar })
}
