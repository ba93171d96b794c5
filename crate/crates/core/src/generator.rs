//! Hourglass CNN image prior `x = G(z; α)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops;
use crate::tensor::{Graph, PadMode, Tensor, Var};

/// Number of latent channels of the default architecture.
pub const LATENT_CHANNELS: usize = 8;

/// Layer widths and kernel sizes. Index `l` of every per-level vector refers
/// to encoder level `l + 1`, counted from the full-resolution end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub latent_channels: usize,
    pub out_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub encoder_kernels: Vec<usize>,
    /// 1×1 projections of `z` and of the first `depth − 1` encoder outputs.
    pub skip_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub decoder_kernels: Vec<usize>,
    pub negative_slope: f64,
    pub norm_eps: f64,
}

impl Architecture {
    pub fn new(out_channels: usize) -> Self {
        Architecture {
            latent_channels: LATENT_CHANNELS,
            out_channels,
            encoder_channels: vec![16, 32, 64, 64],
            encoder_kernels: vec![3, 3, 5, 3],
            skip_channels: vec![4, 4, 8, 16],
            decoder_channels: vec![16, 32, 64, 64],
            decoder_kernels: vec![3, 3, 5, 5],
            negative_slope: 0.25,
            norm_eps: 1e-5,
        }
    }

    /// Multiplies every hidden width by `factor` (rounded, at least 1).
    pub fn widened(mut self, factor: f64) -> Self {
        let scale = |v: &mut Vec<usize>| v.iter_mut().for_each(|c| *c = ((*c as f64 * factor).round() as usize).max(1));
        scale(&mut self.encoder_channels);
        scale(&mut self.skip_channels);
        scale(&mut self.decoder_channels);
        self
    }

    pub fn depth(&self) -> usize {
        self.encoder_channels.len()
    }

    /// HR sides must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth()
    }

    fn validate(&self) -> Result<()> {
        let d = self.depth();
        if d == 0 {
            return Err(Error::invalid("architecture needs at least one level"));
        }
        for (name, v) in [
            ("encoder_kernels", &self.encoder_kernels),
            ("skip_channels", &self.skip_channels),
            ("decoder_channels", &self.decoder_channels),
            ("decoder_kernels", &self.decoder_kernels),
        ] {
            if v.len() != d {
                return Err(Error::invalid(format!("{name} has {} entries, expected {d}", v.len())));
            }
        }
        if self.encoder_kernels.iter().chain(&self.decoder_kernels).any(|k| k % 2 == 0) {
            return Err(Error::invalid("architecture kernel sizes must be odd"));
        }
        if !matches!(self.out_channels, 1 | 3) {
            return Err(Error::invalid(format!("out_channels must be 1 or 3, got {}", self.out_channels)));
        }
        Ok(())
    }

    /// `(c_in, c_out, k)` of every conv in the order the forward pass uses them.
    fn convs(&self) -> Vec<(usize, usize, usize)> {
        let d = self.depth();
        let mut out = Vec::new();
        let mut c = self.latent_channels;
        for l in 0..d {
            let (co, k) = (self.encoder_channels[l], self.encoder_kernels[l]);
            out.push((c, co, k));
            out.push((co, co, k));
            c = co;
        }
        for l in 0..d {
            let c_in = if l == 0 { self.latent_channels } else { self.encoder_channels[l - 1] };
            out.push((c_in, self.skip_channels[l], 1));
        }
        for l in (0..d).rev() {
            let below = if l == d - 1 { self.encoder_channels[d - 1] } else { self.decoder_channels[l + 1] };
            let co = self.decoder_channels[l];
            out.push((below + self.skip_channels[l], co, self.decoder_kernels[l]));
            out.push((co, co, 1));
        }
        out
    }
}

/// Network weights `α` for a fixed HR size.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    arch: Architecture,
    height: usize,
    width: usize,
    params: Vec<Tensor>,
}

impl Generator {
    /// Kaiming-normal conv weights (gain for LeakyReLU), unit gains, zero biases.
    pub fn new(arch: Architecture, height: usize, width: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        let m = arch.size_multiple();
        if height < 32 || width < 32 {
            return Err(Error::invalid(format!("HR size {height}x{width} is below the 32x32 minimum")));
        }
        if height % m != 0 || width % m != 0 {
            return Err(Error::invalid(format!("HR size {height}x{width} is not divisible by {m}; pad or crop first")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = arch.negative_slope;
        let mut kaiming = |co: usize, ci: usize, k: usize| {
            let std = (2.0 / ((1.0 + a * a) * (ci * k * k) as f64)).sqrt();
            Tensor::from_fn(&[co, ci, k, k], |_| { let n: f64 = StandardNormal.sample(&mut rng); std * n })
        };
        let mut params = Vec::new();
        for (ci, co, k) in arch.convs() {
            params.push(kaiming(co, ci, k));
            params.push(Tensor::full(&[co], 1.0));
            params.push(Tensor::zeros(&[co]));
        }
        let last = *arch.decoder_channels.first().expect("validated depth");
        params.push(kaiming(arch.out_channels, last, 1));
        params.push(Tensor::zeros(&[arch.out_channels]));
        Ok(Generator { arch, height, width, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Puts every parameter on the tape.
    pub fn register(&self, g: &mut Graph, requires_grad: bool) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.clone(), requires_grad)).collect()
    }

    /// `G(z; α)` with `α` given as tape handles from [`Generator::register`].
    pub fn forward(&self, g: &mut Graph, z: Var, alpha: &[Var]) -> Result<Var> {
        let expect = [self.arch.latent_channels, self.height, self.width];
        if g.shape(z) != expect {
            return Err(Error::dim(format!("latent must be {expect:?}, got {:?}", g.shape(z))));
        }
        if alpha.len() != self.params.len() {
            return Err(Error::dim(format!("expected {} parameter handles, got {}", self.params.len(), alpha.len())));
        }
        let arch = &self.arch;
        let d = arch.depth();
        let mut next = alpha.chunks_exact(3);
        let mut block = |g: &mut Graph, x: Var, stride: usize| -> Result<Var> {
            let p = next.next().expect("parameter count checked");
            let k = g.shape(p[0])[2];
            let y = ops::conv2d(g, x, p[0], None, stride, k / 2, PadMode::Reflect)?;
            let y = ops::spatial_norm(g, y, p[1], p[2], arch.norm_eps)?;
            Ok(ops::leaky_relu(g, y, arch.negative_slope))
        };

        let mut features = vec![z];
        let mut h = z;
        for _ in 0..d {
            h = block(g, h, 2)?;
            h = block(g, h, 1)?;
            features.push(h);
        }
        let mut skips = Vec::with_capacity(d);
        for f in &features[..d] {
            skips.push(block(g, *f, 1)?);
        }
        for l in (0..d).rev() {
            let up = ops::upsample_nearest(g, h, 2)?;
            let cat = ops::concat_channels(g, &[up, skips[l]])?;
            h = block(g, cat, 1)?;
            h = block(g, h, 1)?;
        }
        let tail = &alpha[alpha.len() - 2..];
        let logits = ops::conv2d(g, h, tail[0], Some(tail[1]), 1, 0, PadMode::Zero)?;
        Ok(ops::sigmoid(g, logits))
    }

    /// Untaped forward pass.
    pub fn render(&self, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let alpha = self.register(&mut g, false);
        let x = self.forward(&mut g, zv, &alpha)?;
        Ok(g.value(x).clone())
    }
}

/// `z ~ N(0, I)` of shape `[c_z, h, w]`.
pub fn sample_latent(h: usize, w: usize, c_z: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[c_z, h, w], |_| StandardNormal.sample(&mut rng))
}
