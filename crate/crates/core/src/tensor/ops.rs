//! Differentiable operations recorded on a [`Graph`].

use super::{gemm, Backward, Graph, PadMap, PadMode, Tensor, Var};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

/// Geometry of an im2col lowering: row `(c, ky, kx)`, column `(oy, ox)`.
#[derive(Clone, Debug)]
struct Im2Col {
    channels: usize,
    height: usize,
    width: usize,
    k: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
    rows: PadMap,
    cols: PadMap,
}

impl Im2Col {
    fn col_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source offset inside one channel plane for each `(k, out)` pair of an axis.
    fn axis_sources(&self, map: &PadMap, out_len: usize, width: usize) -> Vec<Option<usize>> {
        let mut v = Vec::with_capacity(self.k * out_len);
        for kk in 0..self.k {
            for o in 0..out_len {
                v.push(map.get(o * self.stride + kk).map(|s| s * width));
            }
        }
        v
    }

    fn gather(&self, x: &[f64]) -> Vec<f64> {
        let plane = self.height * self.width;
        let row_src = self.axis_sources(&self.rows, self.out_h, self.width);
        let col_src = self.axis_sources(&self.cols, self.out_w, 1);
        let mut out = vec![0.0; self.channels * self.k * self.k * self.col_len()];
        let mut dst = out.chunks_exact_mut(self.col_len());
        for c in 0..self.channels {
            let xc = &x[c * plane..(c + 1) * plane];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = dst.next().expect("sized above");
                    let cs = &col_src[kx * self.out_w..(kx + 1) * self.out_w];
                    for oy in 0..self.out_h {
                        let Some(ry) = row_src[ky * self.out_h + oy] else { continue };
                        let line = &mut row[oy * self.out_w..(oy + 1) * self.out_w];
                        for (d, s) in line.iter_mut().zip(cs) {
                            if let Some(sx) = s {
                                *d = xc[ry + sx];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn scatter(&self, cols: &[f64]) -> Vec<f64> {
        let plane = self.height * self.width;
        let row_src = self.axis_sources(&self.rows, self.out_h, self.width);
        let col_src = self.axis_sources(&self.cols, self.out_w, 1);
        let mut dx = vec![0.0; self.channels * plane];
        let mut src = cols.chunks_exact(self.col_len());
        for c in 0..self.channels {
            let dxc = &mut dx[c * plane..(c + 1) * plane];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = src.next().expect("sized above");
                    let cs = &col_src[kx * self.out_w..(kx + 1) * self.out_w];
                    for oy in 0..self.out_h {
                        let Some(ry) = row_src[ky * self.out_h + oy] else { continue };
                        let line = &row[oy * self.out_w..(oy + 1) * self.out_w];
                        for (g, s) in line.iter().zip(cs) {
                            if let Some(sx) = s {
                                dxc[ry + sx] += g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

struct Conv2dBackward {
    geom: Im2Col,
    out_channels: usize,
    cols: Option<Vec<f64>>,
    has_bias: bool,
}

impl Backward for Conv2dBackward {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let co = self.out_channels;
        let n = self.geom.col_len();
        let kdim = self.geom.channels * self.geom.k * self.geom.k;
        let weight = inputs[1].data();

        let dx = needs[0].then(|| {
            let mut dcols = vec![0.0; kdim * n];
            gemm(kdim, co, n, weight, true, g, false, 0.0, &mut dcols);
            self.geom.scatter(&dcols)
        });
        let dw = needs[1].then(|| {
            let cols = self.cols.as_ref().expect("columns kept when the weight needs a gradient");
            let mut dw = vec![0.0; co * kdim];
            gemm(co, n, kdim, g, false, cols, true, 0.0, &mut dw);
            dw
        });
        let mut out = vec![dx, dw];
        if self.has_bias {
            out.push(needs[2].then(|| g.chunks_exact(n).map(|r| r.iter().sum()).collect()));
        }
        out
    }
}

/// 2-D cross-correlation of `input [C_in,H,W]` with `weight [C_out,C_in,k,k]`.
///
/// Output size is `floor((H + 2·padding − k)/stride) + 1` per axis.
pub fn conv2d(
    g: &mut Graph,
    input: Var,
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    mode: PadMode,
) -> Result<Var> {
    let (ci, h, w) = g.value(input).dims3()?;
    let (co, wci, k) = match g.shape(weight)[..] {
        [co, wci, kh, kw] if kh == kw => (co, wci, kh),
        ref s => return Err(Error::dim(format!("conv weight must be [C_out,C_in,k,k], got {s:?}"))),
    };
    if wci != ci {
        return Err(Error::dim(format!("conv input has {ci} channels, weight expects {wci}")));
    }
    if k % 2 == 0 {
        return Err(Error::invalid(format!("conv kernel size must be odd, got {k}")));
    }
    if stride == 0 {
        return Err(Error::invalid("conv stride must be positive"));
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::dim(format!("kernel {k} larger than padded input {h}x{w}+{padding}")));
    }
    if let Some(b) = bias {
        if g.shape(b) != [co] {
            return Err(Error::dim(format!("conv bias must be [{co}], got {:?}", g.shape(b))));
        }
    }
    let geom = Im2Col {
        channels: ci,
        height: h,
        width: w,
        k,
        stride,
        out_h: (h + 2 * padding - k) / stride + 1,
        out_w: (w + 2 * padding - k) / stride + 1,
        rows: PadMap::new(h, padding, mode)?,
        cols: PadMap::new(w, padding, mode)?,
    };
    let n = geom.col_len();
    let kdim = ci * k * k;
    let cols = if k == 1 && stride == 1 && padding == 0 {
        g.value(input).data().to_vec()
    } else {
        geom.gather(g.value(input).data())
    };
    let mut out = vec![0.0; co * n];
    gemm(co, kdim, n, g.value(weight).data(), false, &cols, false, 0.0, &mut out);
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_exact_mut(n).zip(g.value(b).data()) {
            row.iter_mut().for_each(|v| *v += bv);
        }
    }
    let value = Tensor::new(vec![co, geom.out_h, geom.out_w], out)?;
    let keep_cols = g.requires_grad(weight);
    let op = Conv2dBackward {
        geom,
        out_channels: co,
        cols: keep_cols.then_some(cols),
        has_bias: bias.is_some(),
    };
    let parents: Vec<Var> = [input, weight].into_iter().chain(bias).collect();
    Ok(g.record(value, &parents, op))
}

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

struct UpsampleBackward {
    factor: usize,
}

impl Backward for UpsampleBackward {
    fn name(&self) -> &'static str {
        "upsample_nearest"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (c, h, w) = inputs[0].dims3().expect("rank checked in forward");
        let ow = out.shape()[2];
        let f = self.factor;
        let mut dx = vec![0.0; c * h * w];
        for ch in 0..c {
            for oy in 0..h * f {
                let src = ch * h * w + (oy / f) * w;
                let row = &g[(ch * h * f + oy) * ow..][..ow];
                for (ox, v) in row.iter().enumerate() {
                    dx[src + ox / f] += v;
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Replicates each pixel into a `factor × factor` block.
pub fn upsample_nearest(g: &mut Graph, x: Var, factor: usize) -> Result<Var> {
    if factor == 0 {
        return Err(Error::invalid("upsample factor must be positive"));
    }
    let (c, h, w) = g.value(x).dims3()?;
    let src = g.value(x).data();
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            let row = &src[ch * h * w + (oy / factor) * w..][..w];
            out.extend((0..ow).map(|ox| row[ox / factor]));
        }
    }
    let value = Tensor::new(vec![c, oh, ow], out)?;
    Ok(g.record(value, &[x], UpsampleBackward { factor }))
}

struct DownsampleBackward {
    s: usize,
}

impl Backward for DownsampleBackward {
    fn name(&self) -> &'static str {
        "direct_downsample"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (c, h, w) = inputs[0].dims3().expect("rank checked in forward");
        let (_, oh, ow) = out.dims3().expect("rank 3");
        let mut dx = vec![0.0; c * h * w];
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    dx[(ch * h + self.s * i) * w + self.s * j] = g[(ch * oh + i) * ow + j];
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Keeps the upper-left pixel of every `s × s` block.
pub fn direct_downsample(g: &mut Graph, x: Var, s: usize) -> Result<Var> {
    let value = direct_downsample_tensor(g.value(x), s)?;
    Ok(g.record(value, &[x], DownsampleBackward { s }))
}

/// Untaped [`direct_downsample`].
pub fn direct_downsample_tensor(x: &Tensor, s: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if s == 0 {
        return Err(Error::invalid("downsampling factor must be positive"));
    }
    if h % s != 0 || w % s != 0 {
        return Err(Error::invalid(format!("{h}x{w} is not divisible by scale {s}; crop first")));
    }
    let (oh, ow) = (h / s, w / s);
    let src = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            out.extend((0..ow).map(|j| src[(ch * h + s * i) * w + s * j]));
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

struct SpatialNormBackward {
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Backward for SpatialNormBackward {
    fn name(&self) -> &'static str {
        "spatial_norm"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (c, h, w) = inputs[0].dims3().expect("rank checked in forward");
        let n = h * w;
        let gain = inputs[1].data();
        let mut dx = needs[0].then(|| vec![0.0; c * n]);
        let mut dgain = vec![0.0; c];
        let mut dbias = vec![0.0; c];
        for ch in 0..c {
            let gy = &g[ch * n..(ch + 1) * n];
            let xh = &self.normalized[ch * n..(ch + 1) * n];
            let sum_g: f64 = gy.iter().sum();
            let sum_gx: f64 = gy.iter().zip(xh).map(|(a, b)| a * b).sum();
            dgain[ch] = sum_gx;
            dbias[ch] = sum_g;
            if let Some(dx) = dx.as_mut() {
                let scale = gain[ch] * self.inv_std[ch] / n as f64;
                for ((d, &gv), &xv) in dx[ch * n..(ch + 1) * n].iter_mut().zip(gy).zip(xh) {
                    *d = scale * (n as f64 * gv - sum_g - xv * sum_gx);
                }
            }
        }
        vec![dx, needs[1].then_some(dgain), needs[2].then_some(dbias)]
    }
}

/// Per-channel normalization with statistics taken over the spatial axes of
/// the current input: `gain·(x − μ)/√(σ² + eps) + bias`.
pub fn spatial_norm(g: &mut Graph, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
    let (c, h, w) = g.value(x).dims3()?;
    if h * w < 2 {
        return Err(Error::dim("spatial_norm needs at least two pixels per channel"));
    }
    if g.shape(gain) != [c] || g.shape(bias) != [c] {
        return Err(Error::dim(format!("spatial_norm gain/bias must be [{c}]")));
    }
    let n = h * w;
    let src = g.value(x).data();
    let (gv, bv) = (g.value(gain).data(), g.value(bias).data());
    let mut normalized = vec![0.0; c * n];
    let mut inv_std = vec![0.0; c];
    let mut out = vec![0.0; c * n];
    for ch in 0..c {
        let xs = &src[ch * n..(ch + 1) * n];
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[ch] = is;
        for i in 0..n {
            let xh = (xs[i] - mean) * is;
            normalized[ch * n + i] = xh;
            out[ch * n + i] = gv[ch] * xh + bv[ch];
        }
    }
    let value = Tensor::new(vec![c, h, w], out)?;
    Ok(g.record(value, &[x, gain, bias], SpatialNormBackward { normalized, inv_std }))
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

/// Pointwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    LeakyRelu { slope: f64 },
    Sigmoid,
    Scale(f64),
    /// `(t² + eps)^(gamma/2)`, a smooth stand-in for `|t|^gamma`.
    SmoothAbsPow { gamma: f64, eps: f64 },
}

impl Unary {
    fn apply(self, t: f64) -> f64 {
        match self {
            Unary::LeakyRelu { slope } => {
                if t >= 0.0 {
                    t
                } else {
                    slope * t
                }
            }
            Unary::Sigmoid => 1.0 / (1.0 + (-t).exp()),
            Unary::Scale(c) => c * t,
            Unary::SmoothAbsPow { gamma, eps } => (t * t + eps).powf(0.5 * gamma),
        }
    }

    fn derivative(self, t: f64, y: f64) -> f64 {
        match self {
            Unary::LeakyRelu { slope } => {
                if t >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Scale(c) => c,
            Unary::SmoothAbsPow { gamma, eps } => gamma * t * (t * t + eps).powf(0.5 * gamma - 1.0),
        }
    }
}

struct UnaryBackward {
    kind: Unary,
}

impl Backward for UnaryBackward {
    fn name(&self) -> &'static str {
        match self.kind {
            Unary::LeakyRelu { .. } => "leaky_relu",
            Unary::Sigmoid => "sigmoid",
            Unary::Scale(_) => "scale",
            Unary::SmoothAbsPow { .. } => "smooth_abs_pow",
        }
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let dx = inputs[0]
            .data()
            .iter()
            .zip(out.data())
            .zip(g)
            .map(|((&t, &y), &gv)| gv * self.kind.derivative(t, y))
            .collect();
        vec![Some(dx)]
    }
}

pub fn unary(g: &mut Graph, x: Var, kind: Unary) -> Var {
    let value = g.value(x).map(|t| kind.apply(t));
    g.record(value, &[x], UnaryBackward { kind })
}

pub fn leaky_relu(g: &mut Graph, x: Var, slope: f64) -> Var {
    unary(g, x, Unary::LeakyRelu { slope })
}

pub fn sigmoid(g: &mut Graph, x: Var) -> Var {
    unary(g, x, Unary::Sigmoid)
}

pub fn scale(g: &mut Graph, x: Var, c: f64) -> Var {
    unary(g, x, Unary::Scale(c))
}

pub fn smooth_abs_pow(g: &mut Graph, x: Var, gamma: f64, eps: f64) -> Var {
    unary(g, x, Unary::SmoothAbsPow { gamma, eps })
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

struct BinaryBackward {
    kind: BinaryKind,
}

impl Backward for BinaryBackward {
    fn name(&self) -> &'static str {
        match self.kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        }
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        match self.kind {
            BinaryKind::Add => vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())],
            BinaryKind::Sub => {
                vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.iter().map(|v| -v).collect())]
            }
            BinaryKind::Mul => {
                let prod = |other: &Tensor| g.iter().zip(other.data()).map(|(a, b)| a * b).collect();
                vec![needs[0].then(|| prod(inputs[1])), needs[1].then(|| prod(inputs[0]))]
            }
        }
    }
}

fn binary(g: &mut Graph, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::dim(format!("operand shapes differ: {:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    let (x, y) = (g.value(a).data(), g.value(b).data());
    let data = x
        .iter()
        .zip(y)
        .map(|(&p, &q)| match kind {
            BinaryKind::Add => p + q,
            BinaryKind::Sub => p - q,
            BinaryKind::Mul => p * q,
        })
        .collect();
    let value = Tensor::new(g.shape(a).to_vec(), data)?;
    Ok(g.record(value, &[a, b], BinaryBackward { kind }))
}

pub fn add(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    binary(g, a, b, BinaryKind::Add)
}

pub fn sub(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    binary(g, a, b, BinaryKind::Sub)
}

pub fn mul(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    binary(g, a, b, BinaryKind::Mul)
}

// ---------------------------------------------------------------------------
// reductions and structure
// ---------------------------------------------------------------------------

struct SumBackward;

impl Backward for SumBackward {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![g[0]; inputs[0].len()])]
    }
}

/// Sum of all entries as a scalar.
pub fn sum(g: &mut Graph, x: Var) -> Var {
    let value = Tensor::scalar(g.value(x).sum());
    g.record(value, &[x], SumBackward)
}

struct ConcatBackward;

impl Backward for ConcatBackward {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let mut offset = 0;
        inputs
            .iter()
            .zip(needs)
            .map(|(t, &need)| {
                let part = need.then(|| g[offset..offset + t.len()].to_vec());
                offset += t.len();
                part
            })
            .collect()
    }
}

/// Stacks `[C_i,H,W]` tensors along the channel axis.
pub fn concat_channels(g: &mut Graph, parts: &[Var]) -> Result<Var> {
    let Some(&first) = parts.first() else {
        return Err(Error::invalid("concat needs at least one tensor"));
    };
    let (_, h, w) = g.value(first).dims3()?;
    let mut channels = 0;
    let mut data = Vec::new();
    for &p in parts {
        let (c, ph, pw) = g.value(p).dims3()?;
        if (ph, pw) != (h, w) {
            return Err(Error::dim(format!("concat spatial mismatch: {h}x{w} vs {ph}x{pw}")));
        }
        channels += c;
        data.extend_from_slice(g.value(p).data());
    }
    let value = Tensor::new(vec![channels, h, w], data)?;
    Ok(g.record(value, parts, ConcatBackward))
}

/// Direction of a first-order difference filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// `[−1, 1]` along a row.
    Horizontal,
    /// `[−1, 1]ᵀ` along a column.
    Vertical,
}

struct ForwardDiffBackward {
    axis: Axis,
}

impl Backward for ForwardDiffBackward {
    fn name(&self) -> &'static str {
        "forward_diff"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (c, h, w) = inputs[0].dims3().expect("rank checked in forward");
        let mut dx = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let i = (ch * h + y) * w + x;
                    let next = match self.axis {
                        Axis::Horizontal if x + 1 < w => i + 1,
                        Axis::Vertical if y + 1 < h => i + w,
                        _ => continue,
                    };
                    dx[next] += g[i];
                    dx[i] -= g[i];
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Forward difference `x[·+1] − x[·]` with replicate boundary (zero at the
/// last row/column).
pub fn forward_diff(g: &mut Graph, x: Var, axis: Axis) -> Result<Var> {
    let (c, h, w) = g.value(x).dims3()?;
    let src = g.value(x).data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let i = (ch * h + y) * w + xx;
                out[i] = match axis {
                    Axis::Horizontal if xx + 1 < w => src[i + 1] - src[i],
                    Axis::Vertical if y + 1 < h => src[i + w] - src[i],
                    _ => 0.0,
                };
            }
        }
    }
    let value = Tensor::new(vec![c, h, w], out)?;
    Ok(g.record(value, &[x], ForwardDiffBackward { axis }))
}
