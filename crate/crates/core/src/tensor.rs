//! Dense row-major tensors and the numeric kernels used by the network.
//!
//! Every kernel takes an [`ArithContext`]. When its precision config asks
//! for [`Granularity::PerOperation`], each scalar product, sum, difference,
//! quotient and transcendental result is quantized before it is used again.
//! Otherwise kernels run in plain binary32.
//!
//! Accumulations always run left to right in a fixed index order, documented
//! per kernel, so results are bit-reproducible and the per-operation
//! rounding sequence is well defined. Loops are arranged so that several
//! independent accumulators advance together, which keeps each accumulator's
//! own order intact.

use std::fmt;

use thiserror::Error;

use crate::quant::{self, Granularity, MantissaBits, PrecisionConfig, Rng};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: unsupported shape {shape:?}")]
    BadShape { op: &'static str, shape: Vec<usize> },
    #[error("{op}: kernel {kernel:?} larger than input {input:?}")]
    KernelTooLarge { op: &'static str, input: Vec<usize>, kernel: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::BadShape { op: "new", shape });
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength { shape, len: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dimension in {shape:?}");
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    /// Convenience for literal matrices in tests and examples.
    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::BadShape { op: "from_rows", shape: vec![rows.len(), cols] });
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn at(&self, index: &[usize]) -> f32 {
        self.data[self.offset(index)]
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            acc * d + i
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = dims2("transpose", self)?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 16;
        write!(f, "Tensor{:?}", self.shape)?;
        let head = &self.data[..self.data.len().min(SHOWN)];
        write!(f, "{head:?}")?;
        if self.data.len() > SHOWN {
            write!(f, "…")?;
        }
        Ok(())
    }
}

/// Precision config plus the random stream that stochastic rounding draws
/// from. Owned by one caller at a time.
#[derive(Debug, Clone)]
pub struct ArithContext {
    pub cfg: PrecisionConfig,
    pub rng: Rng,
}

impl ArithContext {
    pub fn new(cfg: PrecisionConfig, rng: Rng) -> Self {
        ArithContext { cfg, rng }
    }

    /// Plain binary32 arithmetic.
    pub fn exact() -> Self {
        ArithContext::new(PrecisionConfig::full(), Rng::new(0))
    }

    pub fn granularity(&self) -> Granularity {
        self.cfg.granularity
    }

    pub fn is_per_operation(&self) -> bool {
        self.cfg.granularity == Granularity::PerOperation
    }

    pub fn is_per_layer(&self) -> bool {
        self.cfg.granularity == Granularity::PerLayer
    }

    pub fn quantize(&mut self, x: f32) -> f32 {
        quant::quantize(x, &self.cfg, &mut self.rng)
    }

    /// Quantizes every entry, regardless of granularity unless it is `None`.
    pub fn quantize_tensor(&mut self, t: &mut Tensor) {
        quant::quantize_slice(&mut t.data, &self.cfg, &mut self.rng);
    }

    /// Quantizes `t` only under [`Granularity::PerLayer`].
    pub fn layer_boundary(&mut self, t: &mut Tensor) {
        if self.is_per_layer() {
            self.quantize_tensor(t);
        }
    }
}

/// Scalar arithmetic with an optional rounding step after each operation.
pub(crate) trait Arith {
    fn q(&mut self, x: f32) -> f32;

    #[inline(always)]
    fn add(&mut self, a: f32, b: f32) -> f32 {
        self.q(a + b)
    }
    #[inline(always)]
    fn sub(&mut self, a: f32, b: f32) -> f32 {
        self.q(a - b)
    }
    #[inline(always)]
    fn mul(&mut self, a: f32, b: f32) -> f32 {
        self.q(a * b)
    }
    #[inline(always)]
    fn div(&mut self, a: f32, b: f32) -> f32 {
        self.q(a / b)
    }
    #[inline(always)]
    fn mul_add(&mut self, acc: f32, a: f32, b: f32) -> f32 {
        let p = self.mul(a, b);
        self.add(acc, p)
    }
}

pub(crate) struct Exact;

impl Arith for Exact {
    #[inline(always)]
    fn q(&mut self, x: f32) -> f32 {
        x
    }
}

pub(crate) struct TruncateEach(pub(crate) MantissaBits);

impl Arith for TruncateEach {
    #[inline(always)]
    fn q(&mut self, x: f32) -> f32 {
        quant::truncate(x, self.0)
    }
}

pub(crate) struct StochasticEach<'a>(pub(crate) MantissaBits, pub(crate) &'a mut Rng);

impl Arith for StochasticEach<'_> {
    #[inline(always)]
    fn q(&mut self, x: f32) -> f32 {
        quant::stochastic_round(x, self.0, self.1)
    }
}

/// Runs `$body` with `$ar` bound to the arithmetic matching `$ctx`.
macro_rules! with_arith {
    ($ctx:expr, $ar:ident => $body:expr) => {{
        let ctx: &mut $crate::tensor::ArithContext = $ctx;
        if ctx.cfg.granularity != $crate::quant::Granularity::PerOperation {
            let $ar = &mut $crate::tensor::Exact;
            $body
        } else {
            match ctx.cfg.rounding {
                $crate::quant::Rounding::Truncate => {
                    let $ar = &mut $crate::tensor::TruncateEach(ctx.cfg.mantissa_bits);
                    $body
                }
                $crate::quant::Rounding::Stochastic => {
                    let $ar = &mut $crate::tensor::StochasticEach(ctx.cfg.mantissa_bits, &mut ctx.rng);
                    $body
                }
            }
        }
    }};
}
pub(crate) use with_arith;

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::BadShape { op, shape: t.shape.clone() }),
    }
}

fn dims4(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [a, b, c, d] => Ok((a, b, c, d)),
        _ => Err(TensorError::BadShape { op, shape: t.shape.clone() }),
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch { op, left: a.shape.clone(), right: b.shape.clone() }
}

/// `a[r×k] · b[k×c]`. Each output sums over `k` in increasing order.
pub fn matmul(a: &Tensor, b: &Tensor, ctx: &mut ArithContext) -> Result<Tensor> {
    let (r, k) = dims2("matmul", a)?;
    let (k2, c) = dims2("matmul", b)?;
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    let mut out = vec![0.0f32; r * c];
    with_arith!(ctx, ar => matmul_into(ar, &a.data, &b.data, &mut out, r, k, c));
    Tensor::new(vec![r, c], out)
}

/// `a[r×k] · b[c×k]ᵀ`, same summation order as [`matmul`].
pub fn matmul_bt(a: &Tensor, b: &Tensor, ctx: &mut ArithContext) -> Result<Tensor> {
    let (_, k) = dims2("matmul_bt", a)?;
    let (_, k2) = dims2("matmul_bt", b)?;
    if k != k2 {
        return Err(mismatch("matmul_bt", a, b));
    }
    matmul(a, &b.transpose()?, ctx)
}

/// `a[k×r]ᵀ · b[k×c]`. Each output sums over `k` in increasing order.
pub fn matmul_at(a: &Tensor, b: &Tensor, ctx: &mut ArithContext) -> Result<Tensor> {
    let (k, r) = dims2("matmul_at", a)?;
    let (k2, c) = dims2("matmul_at", b)?;
    if k != k2 {
        return Err(mismatch("matmul_at", a, b));
    }
    let mut out = vec![0.0f32; r * c];
    with_arith!(ctx, ar => {
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            for t in 0..k {
                let s = a.data[t * r + i];
                let b_row = &b.data[t * c..(t + 1) * c];
                for (acc, &bv) in row.iter_mut().zip(b_row) {
                    *acc = ar.mul_add(*acc, s, bv);
                }
            }
        }
    });
    Tensor::new(vec![r, c], out)
}

#[inline]
fn matmul_into<A: Arith>(ar: &mut A, a: &[f32], b: &[f32], out: &mut [f32], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let row = &mut out[i * c..(i + 1) * c];
        for t in 0..k {
            let s = a[i * k + t];
            let b_row = &b[t * c..(t + 1) * c];
            for (acc, &bv) in row.iter_mut().zip(b_row) {
                *acc = ar.mul_add(*acc, s, bv);
            }
        }
    }
}

/// Valid-mode cross-correlation of one 2-D plane:
/// `S(i, j) = Σ_m Σ_n I(i+m, j+n) · W(m, n)`, no kernel flip, no padding.
pub fn conv2d_valid(input: &Tensor, kernel: &Tensor, ctx: &mut ArithContext) -> Result<Tensor> {
    let (h, w) = dims2("conv2d_valid", input)?;
    let (m, n) = dims2("conv2d_valid", kernel)?;
    let batched = conv2d(
        &input.clone().reshape(&[1, 1, h, w])?,
        &kernel.clone().reshape(&[1, 1, m, n])?,
        ctx,
    )?;
    batched.reshape(&[h - m + 1, w - n + 1])
}

/// Batched multi-channel valid cross-correlation.
///
/// `input[B,C,H,W]` with `kernels[F,C,M,N]` gives `[B,F,H−M+1,W−N+1]`, each
/// output summing over channel, then kernel row, then kernel column.
pub fn conv2d(input: &Tensor, kernels: &Tensor, ctx: &mut ArithContext) -> Result<Tensor> {
    let (batch, chans, h, w) = dims4("conv2d", input)?;
    let (filters, kc, m, n) = dims4("conv2d", kernels)?;
    if kc != chans {
        return Err(mismatch("conv2d", input, kernels));
    }
    if m > h || n > w {
        return Err(TensorError::KernelTooLarge {
            op: "conv2d",
            input: input.shape.clone(),
            kernel: kernels.shape.clone(),
        });
    }
    let (oh, ow) = (h - m + 1, w - n + 1);
    let mut out = vec![0.0f32; batch * filters * oh * ow];
    with_arith!(ctx, ar => {
        for b in 0..batch {
            let img = &input.data[b * chans * h * w..(b + 1) * chans * h * w];
            for f in 0..filters {
                let kern = &kernels.data[f * chans * m * n..(f + 1) * chans * m * n];
                let plane = &mut out[(b * filters + f) * oh * ow..(b * filters + f + 1) * oh * ow];
                for i in 0..oh {
                    let row = &mut plane[i * ow..(i + 1) * ow];
                    for c in 0..chans {
                        for dm in 0..m {
                            let src = &img[c * h * w + (i + dm) * w..c * h * w + (i + dm + 1) * w];
                            for dn in 0..n {
                                let wv = kern[(c * m + dm) * n + dn];
                                for (acc, &x) in row.iter_mut().zip(&src[dn..dn + ow]) {
                                    *acc = ar.mul_add(*acc, x, wv);
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![batch, filters, oh, ow], out)
}

/// Gradient of [`conv2d`] with respect to its kernels.
///
/// `dK[f,c,m,n] = Σ_b Σ_i Σ_j dS[b,f,i,j] · I[b,c,i+m,j+n]`, accumulated in
/// `(b, i, j)` order.
pub fn conv2d_kernel_grad(
    input: &Tensor,
    grad_out: &Tensor,
    kernel_hw: (usize, usize),
    ctx: &mut ArithContext,
) -> Result<Tensor> {
    let (batch, chans, h, w) = dims4("conv2d_kernel_grad", input)?;
    let (gb, filters, oh, ow) = dims4("conv2d_kernel_grad", grad_out)?;
    let (m, n) = kernel_hw;
    if gb != batch || m > h || n > w || oh != h - m + 1 || ow != w - n + 1 {
        return Err(mismatch("conv2d_kernel_grad", input, grad_out));
    }
    let mut out = vec![0.0f32; filters * chans * m * n];
    with_arith!(ctx, ar => {
        for f in 0..filters {
            for c in 0..chans {
                for dm in 0..m {
                    let acc = &mut out[((f * chans + c) * m + dm) * n..((f * chans + c) * m + dm + 1) * n];
                    for b in 0..batch {
                        let g = &grad_out.data[(b * filters + f) * oh * ow..(b * filters + f + 1) * oh * ow];
                        let img = &input.data[(b * chans + c) * h * w..(b * chans + c + 1) * h * w];
                        for i in 0..oh {
                            let src = &img[(i + dm) * w..(i + dm + 1) * w];
                            for j in 0..ow {
                                let gv = g[i * ow + j];
                                for (a, &x) in acc.iter_mut().zip(&src[j..j + n]) {
                                    *a = ar.mul_add(*a, gv, x);
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![filters, chans, m, n], out)
}

/// Gradient of [`conv2d`] with respect to its input.
///
/// `dI[b,c,p,q] = Σ_f Σ_m Σ_n dS[b,f,p−m,q−n] · K[f,c,m,n]` over valid
/// indices, accumulated in `(f, m, n)` order.
pub fn conv2d_input_grad(
    grad_out: &Tensor,
    kernels: &Tensor,
    input_hw: (usize, usize),
    ctx: &mut ArithContext,
) -> Result<Tensor> {
    let (batch, filters, oh, ow) = dims4("conv2d_input_grad", grad_out)?;
    let (kf, chans, m, n) = dims4("conv2d_input_grad", kernels)?;
    let (h, w) = input_hw;
    if kf != filters || m > h || n > w || oh != h - m + 1 || ow != w - n + 1 {
        return Err(mismatch("conv2d_input_grad", grad_out, kernels));
    }
    let mut out = vec![0.0f32; batch * chans * h * w];
    with_arith!(ctx, ar => {
        for b in 0..batch {
            for c in 0..chans {
                let dst = &mut out[(b * chans + c) * h * w..(b * chans + c + 1) * h * w];
                for f in 0..filters {
                    let g = &grad_out.data[(b * filters + f) * oh * ow..(b * filters + f + 1) * oh * ow];
                    for dm in 0..m {
                        for dn in 0..n {
                            let kv = kernels.data[((f * chans + c) * m + dm) * n + dn];
                            for i in 0..oh {
                                let drow = &mut dst[(i + dm) * w + dn..(i + dm) * w + dn + ow];
                                for (d, &gv) in drow.iter_mut().zip(&g[i * ow..(i + 1) * ow]) {
                                    *d = ar.mul_add(*d, gv, kv);
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![batch, chans, h, w], out)
}

/// 2×2 non-overlapping max pooling on a rank-2 tensor.
pub fn maxpool2(input: &Tensor) -> Result<Tensor> {
    let (h, w) = dims2("maxpool2", input)?;
    let pooled = maxpool2_planes(&input.clone().reshape(&[1, 1, h, w])?)?;
    pooled.output.reshape(&[h / 2, w / 2])
}

/// Pooled values and, per output cell, the flat input offset it came from.
#[derive(Debug, Clone)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// 2×2 max pooling over the last two axes of `[B,C,H,W]`. Odd trailing rows
/// and columns are dropped. Ties go to the first element in row-major order.
pub fn maxpool2_planes(input: &Tensor) -> Result<Pooled> {
    let (batch, chans, h, w) = dims4("maxpool2", input)?;
    if h < 2 || w < 2 {
        return Err(TensorError::BadShape { op: "maxpool2", shape: input.shape.clone() });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(batch * chans * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..batch * chans {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for off in [1, w, w + 1] {
                    let cand = base + 2 * i * w + 2 * j + off;
                    if input.data[cand] > input.data[best] {
                        best = cand;
                    }
                }
                out.push(input.data[best]);
                argmax.push(best);
            }
        }
    }
    Ok(Pooled { output: Tensor::new(vec![batch, chans, oh, ow], out)?, argmax })
}

/// Routes each pooled gradient back to the input cell that won the max.
pub fn maxpool2_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(TensorError::ShapeMismatch {
            op: "maxpool2_backward",
            left: grad_out.shape.clone(),
            right: vec![argmax.len()],
        });
    }
    let mut out = Tensor::zeros(input_shape);
    for (&g, &src) in grad_out.data.iter().zip(argmax) {
        out.data[src] = g;
    }
    Ok(out)
}

/// `max(0, x)` element-wise. Selection only, never rounded.
pub fn relu(t: &Tensor) -> Tensor {
    Tensor { shape: t.shape.clone(), data: t.data.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect() }
}

/// Passes `grad` where the pre-activation was positive.
pub fn relu_backward(grad: &Tensor, pre: &Tensor) -> Result<Tensor> {
    if grad.shape != pre.shape {
        return Err(mismatch("relu_backward", grad, pre));
    }
    let data = grad.data.iter().zip(&pre.data).map(|(&g, &z)| if z > 0.0 { g } else { 0.0 }).collect();
    Tensor::new(grad.shape.clone(), data)
}

/// Row-wise softmax of a rank-2 tensor.
///
/// The row max is subtracted first. Under per-operation rounding the
/// subtraction, `exp`, the running sum and each division are rounded.
pub fn softmax_rows(t: &Tensor, ctx: &mut ArithContext) -> Result<Tensor> {
    let (r, c) = dims2("softmax_rows", t)?;
    let mut out = vec![0.0f32; r * c];
    with_arith!(ctx, ar => {
        for i in 0..r {
            let row = &t.data[i * c..(i + 1) * c];
            let dst = &mut out[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut total = 0.0f32;
            for (d, &x) in dst.iter_mut().zip(row) {
                let shifted = ar.sub(x, max);
                *d = ar.q(shifted.exp());
                total = ar.add(total, *d);
            }
            for d in dst.iter_mut() {
                *d = ar.div(*d, total);
            }
        }
    });
    Tensor::new(vec![r, c], out)
}

/// Adds `bias[c]` to every row of `t[r×c]`.
pub fn add_bias_rows(t: &Tensor, bias: &Tensor, ctx: &mut ArithContext) -> Result<Tensor> {
    let (_, c) = dims2("add_bias_rows", t)?;
    if bias.shape != [c] {
        return Err(mismatch("add_bias_rows", t, bias));
    }
    let mut out = t.clone();
    with_arith!(ctx, ar => {
        for row in out.data.chunks_mut(c) {
            for (x, &b) in row.iter_mut().zip(&bias.data) {
                *x = ar.add(*x, b);
            }
        }
    });
    Ok(out)
}

/// Adds `bias[f]` to every cell of channel `f` in `t[B,F,H,W]`.
pub fn add_bias_channels(t: &Tensor, bias: &Tensor, ctx: &mut ArithContext) -> Result<Tensor> {
    let (_, f, h, w) = dims4("add_bias_channels", t)?;
    if bias.shape != [f] {
        return Err(mismatch("add_bias_channels", t, bias));
    }
    let mut out = t.clone();
    with_arith!(ctx, ar => {
        for (p, plane) in out.data.chunks_mut(h * w).enumerate() {
            let b = bias.data[p % f];
            for x in plane.iter_mut() {
                *x = ar.add(*x, b);
            }
        }
    });
    Ok(out)
}

/// Column sums of `t[r×c]`, accumulated over rows in order.
pub fn sum_rows(t: &Tensor, ctx: &mut ArithContext) -> Result<Tensor> {
    let (_, c) = dims2("sum_rows", t)?;
    let mut out = vec![0.0f32; c];
    with_arith!(ctx, ar => {
        for row in t.data.chunks(c) {
            for (acc, &x) in out.iter_mut().zip(row) {
                *acc = ar.add(*acc, x);
            }
        }
    });
    Tensor::new(vec![c], out)
}

/// Per-channel sums of `t[B,F,H,W]`, accumulated over `(b, i, j)`.
pub fn sum_channels(t: &Tensor, ctx: &mut ArithContext) -> Result<Tensor> {
    let (_, f, h, w) = dims4("sum_channels", t)?;
    let mut out = vec![0.0f32; f];
    with_arith!(ctx, ar => {
        for (p, plane) in t.data.chunks(h * w).enumerate() {
            let acc = &mut out[p % f];
            for &x in plane {
                *acc = ar.add(*acc, x);
            }
        }
    });
    Tensor::new(vec![f], out)
}

fn zip_with(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    ctx: &mut ArithContext,
    kind: fn(&mut dyn FnMut(f32) -> f32, f32, f32) -> f32,
) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(mismatch(op, a, b));
    }
    let mut round = |x: f32| ctx.quantize_op(x);
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| kind(&mut round, x, y)).collect();
    Tensor::new(a.shape.clone(), data)
}

impl ArithContext {
    /// Rounds `x` if and only if per-operation quantization is active.
    #[inline]
    pub fn quantize_op(&mut self, x: f32) -> f32 {
        if self.is_per_operation() {
            self.quantize(x)
        } else {
            x
        }
    }
}

pub fn add(a: &Tensor, b: &Tensor, ctx: &mut ArithContext) -> Result<Tensor> {
    zip_with("add", a, b, ctx, |q, x, y| q(x + y))
}

pub fn sub(a: &Tensor, b: &Tensor, ctx: &mut ArithContext) -> Result<Tensor> {
    zip_with("sub", a, b, ctx, |q, x, y| q(x - y))
}

pub fn hadamard(a: &Tensor, b: &Tensor, ctx: &mut ArithContext) -> Result<Tensor> {
    zip_with("hadamard", a, b, ctx, |q, x, y| q(x * y))
}

pub fn scale(t: &Tensor, s: f32, ctx: &mut ArithContext) -> Tensor {
    let data = t.data.iter().map(|&x| ctx.quantize_op(x * s)).collect();
    Tensor { shape: t.shape.clone(), data }
}
