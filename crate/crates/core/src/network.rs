//! Convolutional classifier trained from scratch with RMSprop.
//!
//! Architecture: a stack of `conv → relu → 2×2 max-pool` stages, a flatten,
//! `dense_layers` hidden fully connected layers with ReLU, and a final dense
//! readout followed by softmax. Training minimises softmax cross-entropy.
//!
//! Reduced precision enters in three places, selected by
//! [`Granularity`](crate::quant::Granularity):
//!
//! * `PerBatch`: parameters are quantized after every optimizer update.
//! * `PerLayer`: additionally, the input batch, every layer output and every
//!   back-propagated gradient tensor are quantized as they are produced.
//! * `PerOperation`: every elementary arithmetic result inside the kernels,
//!   the loss gradient and the optimizer update is quantized.

use std::ops::ControlFlow;

use thiserror::Error;

use crate::data::Dataset;
use crate::quant::{Granularity, PrecisionConfig, Rng};
use crate::tensor::{self, with_arith, Arith, ArithContext, Pooled, Tensor, TensorError};

/// Random stream ids derived from the run seed.
pub const INIT_STREAM: u64 = 0;
pub const ROUNDING_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("forward trace does not match this call: {0}")]
    TraceMismatch(String),
    #[error("training diverged in epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: String },
    #[error("evaluation on an empty dataset")]
    EmptyDataset,
}

pub type Result<T> = std::result::Result<T, NetworkError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    /// `(channels, height, width)` of one input sample.
    pub input: (usize, usize, usize),
    pub conv_layers: Vec<ConvSpec>,
    /// Hidden dense layers, not counting the readout.
    pub dense_layers: usize,
    pub dense_units: usize,
    pub classes: usize,
}

impl Default for NetworkSpec {
    /// 28×28 grayscale input, 8 then 16 filters of 5×5, one hidden dense
    /// layer of 100 units, 10 classes.
    fn default() -> Self {
        NetworkSpec {
            input: (1, 28, 28),
            conv_layers: vec![
                ConvSpec { filters: 8, kernel: (5, 5) },
                ConvSpec { filters: 16, kernel: (5, 5) },
            ],
            dense_layers: 1,
            dense_units: 100,
            classes: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvGeometry {
    in_chans: usize,
    in_hw: (usize, usize),
    out_hw: (usize, usize),
    pooled_hw: (usize, usize),
}

/// A validated [`NetworkSpec`] with all intermediate shapes resolved.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    conv: Vec<ConvGeometry>,
    /// `(fan_in, fan_out)` of every dense layer including the readout.
    dense: Vec<(usize, usize)>,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let (chans, h, w) = spec.input;
        if chans == 0 || h == 0 || w == 0 {
            return Err(NetworkError::InvalidSpec(format!("empty input {:?}", spec.input)));
        }
        if !(1..=5).contains(&spec.dense_layers) {
            return Err(NetworkError::InvalidSpec(format!(
                "dense_layers must be in 1..=5, got {}",
                spec.dense_layers
            )));
        }
        if spec.dense_units == 0 || spec.classes < 2 {
            return Err(NetworkError::InvalidSpec("need dense_units ≥ 1 and classes ≥ 2".into()));
        }
        let mut conv = Vec::new();
        let (mut c, mut hw) = (chans, (h, w));
        for (i, layer) in spec.conv_layers.iter().enumerate() {
            let (m, n) = layer.kernel;
            if layer.filters == 0 || m == 0 || n == 0 || m > hw.0 || n > hw.1 {
                return Err(NetworkError::InvalidSpec(format!(
                    "conv layer {i}: kernel {m}×{n} with {} filters does not fit input {}×{}",
                    layer.filters, hw.0, hw.1
                )));
            }
            let out_hw = (hw.0 - m + 1, hw.1 - n + 1);
            let pooled_hw = (out_hw.0 / 2, out_hw.1 / 2);
            if pooled_hw.0 == 0 || pooled_hw.1 == 0 {
                return Err(NetworkError::InvalidSpec(format!(
                    "conv layer {i}: {}×{} output vanishes after pooling",
                    out_hw.0, out_hw.1
                )));
            }
            conv.push(ConvGeometry { in_chans: c, in_hw: hw, out_hw, pooled_hw });
            c = layer.filters;
            hw = pooled_hw;
        }
        let mut fan_in = c * hw.0 * hw.1;
        let mut dense = Vec::new();
        for _ in 0..spec.dense_layers {
            dense.push((fan_in, spec.dense_units));
            fan_in = spec.dense_units;
        }
        dense.push((fan_in, spec.classes));
        Ok(Network { spec, conv, dense })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let conv: usize = self
            .spec
            .conv_layers
            .iter()
            .zip(&self.conv)
            .map(|(l, g)| l.filters * (g.in_chans * l.kernel.0 * l.kernel.1 + 1))
            .sum();
        conv + self.dense.iter().map(|(i, o)| o * (i + 1)).sum::<usize>()
    }

    fn param_shapes(&self) -> Vec<(Vec<usize>, usize)> {
        let conv = self.spec.conv_layers.iter().zip(&self.conv).map(|(l, g)| {
            (vec![l.filters, g.in_chans, l.kernel.0, l.kernel.1], l.filters)
        });
        let dense = self.dense.iter().map(|&(i, o)| (vec![o, i], o));
        conv.chain(dense).collect()
    }

    /// Small symmetric uniform weights plus a constant offset, zero biases.
    ///
    /// Every weight is `init_scale · u + init_perturbation` with `u` uniform
    /// in `[-1, 1)` drawn from the run seed, layer by layer in row-major
    /// order.
    pub fn init_weights(&self, cfg: &TrainConfig) -> Params {
        let mut rng = Rng::with_stream(cfg.seed, INIT_STREAM);
        let layers = self
            .param_shapes()
            .into_iter()
            .map(|(shape, bias_len)| {
                let mut weight = Tensor::zeros(&shape);
                for w in weight.data_mut() {
                    *w = cfg.init_scale * rng.symmetric_f32() + cfg.init_perturbation;
                }
                LayerParams { weight, bias: Tensor::zeros(&[bias_len]) }
            })
            .collect();
        Params { layers }
    }

    fn check_params(&self, params: &Params) -> Result<()> {
        let shapes = self.param_shapes();
        let ok = params.layers.len() == shapes.len()
            && params
                .layers
                .iter()
                .zip(&shapes)
                .all(|(l, (w, b))| l.weight.shape() == w.as_slice() && l.bias.shape() == [*b]);
        if ok {
            Ok(())
        } else {
            Err(NetworkError::InvalidSpec("parameter shapes do not match the network".into()))
        }
    }

    /// Runs a batch `[B,C,H,W]` (or `[B,H,W]` for one channel) through the
    /// network and returns the softmax outputs with everything backward
    /// needs.
    pub fn forward(&self, params: &Params, batch: &Tensor, ctx: &mut ArithContext) -> Result<(Tensor, ForwardTrace)> {
        self.check_params(params)?;
        let (chans, h, w) = self.spec.input;
        let b = batch.shape()[0];
        if batch.len() != b * chans * h * w {
            return Err(NetworkError::Tensor(TensorError::ShapeMismatch {
                op: "forward",
                left: batch.shape().to_vec(),
                right: vec![b, chans, h, w],
            }));
        }
        let mut x = batch.clone().reshape(&[b, chans, h, w])?;
        if matches!(ctx.granularity(), Granularity::PerLayer | Granularity::PerOperation) {
            ctx.quantize_tensor(&mut x);
        }

        let n_conv = self.conv.len();
        let mut conv_trace = Vec::with_capacity(n_conv);
        for (layer, _geo) in params.layers[..n_conv].iter().zip(&self.conv) {
            let mut z = tensor::conv2d(&x, &layer.weight, ctx)?;
            z = tensor::add_bias_channels(&z, &layer.bias, ctx)?;
            ctx.layer_boundary(&mut z);
            let pooled = tensor::maxpool2_planes(&tensor::relu(&z))?;
            let next = pooled.output.clone();
            conv_trace.push(ConvTrace { input: x, pre: z, pool: pooled });
            x = next;
        }

        let flat = x.len() / b;
        let mut a = x.reshape(&[b, flat])?;
        let mut dense_trace = Vec::with_capacity(self.dense.len());
        let last = self.dense.len() - 1;
        for (k, layer) in params.layers[n_conv..].iter().enumerate() {
            let mut z = tensor::matmul_bt(&a, &layer.weight, ctx)?;
            z = tensor::add_bias_rows(&z, &layer.bias, ctx)?;
            ctx.layer_boundary(&mut z);
            let next = if k == last { z.clone() } else { tensor::relu(&z) };
            dense_trace.push(DenseTrace { input: a, pre: z });
            a = next;
        }

        let logits = a;
        let mut probs = tensor::softmax_rows(&logits, ctx)?;
        ctx.layer_boundary(&mut probs);
        let trace = ForwardTrace { batch: b, conv: conv_trace, dense: dense_trace, logits, probs: probs.clone() };
        Ok((probs, trace))
    }

    /// Gradients of mean softmax cross-entropy for one-hot `targets[B×classes]`.
    ///
    /// The readout gradient is `(p − y) / B`. Dense layers then follow the
    /// usual recursion: bias gradient is the column sum of `g`, weight
    /// gradient is `gᵀ · a_prev`, and `g ← g · W` masked by the previous
    /// ReLU. Pool and conv layers use the adjoints of their forward kernels.
    pub fn backward(
        &self,
        params: &Params,
        trace: &ForwardTrace,
        targets: &Tensor,
        ctx: &mut ArithContext,
    ) -> Result<Grads> {
        self.check_params(params)?;
        self.check_trace(trace, targets)?;
        let n_conv = self.conv.len();
        let mut grads: Vec<Option<LayerParams>> = vec![None; params.layers.len()];

        let mut g = cross_entropy_delta(&trace.probs, targets, ctx)?;
        ctx.layer_boundary(&mut g);

        for k in (0..self.dense.len()).rev() {
            let layer_trace = &trace.dense[k];
            let mut dw = tensor::matmul_at(&g, &layer_trace.input, ctx)?;
            let mut db = tensor::sum_rows(&g, ctx)?;
            ctx.layer_boundary(&mut dw);
            ctx.layer_boundary(&mut db);
            grads[n_conv + k] = Some(LayerParams { weight: dw, bias: db });
            if k == 0 && n_conv == 0 {
                break;
            }
            let mut ga = tensor::matmul(&g, &params.layers[n_conv + k].weight, ctx)?;
            ctx.layer_boundary(&mut ga);
            g = if k > 0 { tensor::relu_backward(&ga, &trace.dense[k - 1].pre)? } else { ga };
        }

        for (c, geo) in self.conv.iter().enumerate().rev() {
            let layer_trace = &trace.conv[c];
            let pooled_shape = layer_trace.pool.output.shape().to_vec();
            let g_pool = g.reshape(&pooled_shape)?;
            let g_relu = tensor::maxpool2_backward(&g_pool, &layer_trace.pool.argmax, layer_trace.pre.shape())?;
            let gz = tensor::relu_backward(&g_relu, &layer_trace.pre)?;
            let kernel = &params.layers[c].weight;
            let kernel_hw = (kernel.shape()[2], kernel.shape()[3]);
            let mut dk = tensor::conv2d_kernel_grad(&layer_trace.input, &gz, kernel_hw, ctx)?;
            let mut db = tensor::sum_channels(&gz, ctx)?;
            ctx.layer_boundary(&mut dk);
            ctx.layer_boundary(&mut db);
            grads[c] = Some(LayerParams { weight: dk, bias: db });
            if c == 0 {
                break;
            }
            let mut gi = tensor::conv2d_input_grad(&gz, kernel, geo.in_hw, ctx)?;
            ctx.layer_boundary(&mut gi);
            g = gi;
        }
        Ok(Params { layers: grads.into_iter().map(|l| l.expect("every layer visited")).collect() })
    }

    fn check_trace(&self, trace: &ForwardTrace, targets: &Tensor) -> Result<()> {
        if trace.conv.len() != self.conv.len() || trace.dense.len() != self.dense.len() {
            return Err(NetworkError::TraceMismatch("layer count differs from the network".into()));
        }
        if targets.shape() != [trace.batch, self.spec.classes] || trace.probs.shape() != targets.shape() {
            return Err(NetworkError::TraceMismatch(format!(
                "targets {:?} vs trace batch {} with {} classes",
                targets.shape(),
                trace.batch,
                self.spec.classes
            )));
        }
        Ok(())
    }

    /// Class scores for a batch in plain binary32.
    pub fn predict(&self, params: &Params, batch: &Tensor) -> Result<Vec<usize>> {
        let (probs, _) = self.forward(params, batch, &mut ArithContext::exact())?;
        let classes = self.spec.classes;
        Ok(probs.data().chunks(classes).map(argmax).collect())
    }

    /// Fraction of samples whose arg-max prediction equals the label, using a
    /// full-precision forward pass. Ties resolve to the lowest class index.
    pub fn evaluate(&self, params: &Params, data: &Dataset) -> Result<f64> {
        const CHUNK: usize = 500;
        if data.is_empty() {
            return Err(NetworkError::EmptyDataset);
        }
        let mut correct = 0usize;
        for start in (0..data.len()).step_by(CHUNK) {
            let idx: Vec<usize> = (start..(start + CHUNK).min(data.len())).collect();
            let images = data.gather_images(&idx);
            let preds = self.predict(params, &images)?;
            correct += preds.iter().zip(&idx).filter(|(&p, &i)| p == data.label(i) as usize).count();
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

/// Index of the largest entry; the first one wins ties and NaNs never win.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `(p − y) / B` for softmax outputs `p` and one-hot targets `y`.
pub fn cross_entropy_delta(probs: &Tensor, targets: &Tensor, ctx: &mut ArithContext) -> Result<Tensor> {
    if probs.shape() != targets.shape() || probs.rank() != 2 {
        return Err(NetworkError::TraceMismatch(format!(
            "probabilities {:?} vs targets {:?}",
            probs.shape(),
            targets.shape()
        )));
    }
    let batch = probs.shape()[0] as f32;
    let mut out = probs.clone();
    with_arith!(ctx, ar => {
        for (o, &y) in out.data_mut().iter_mut().zip(targets.data()) {
            let diff = ar.sub(*o, y);
            *o = ar.div(diff, batch);
        }
    });
    Ok(out)
}

/// Mean cross-entropy computed from logits in binary64, used to detect
/// divergence. Not part of the quantized computation.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[u8]) -> f64 {
    let classes = logits.shape()[1];
    let total: f64 = logits
        .data()
        .chunks(classes)
        .zip(labels)
        .map(|(row, &label)| {
            let max = row.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
            lse - row[label as usize] as f64
        })
        .sum();
    total / labels.len() as f64
}

/// Output delta of a sigmoid unit under squared loss, `(y₀ − y) ⊙ (y − y²)`.
///
/// Written in the descent-direction sign convention, with `y − y²` the
/// sigmoid derivative expressed through its output.
pub fn sigmoid_squared_error_delta(y: &[f64], target: &[f64]) -> Vec<f64> {
    y.iter().zip(target).map(|(&y, &y0)| (y0 - y) * (y - y * y)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Weights and biases of every layer, conv layers first, readout last.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<LayerParams>,
}

pub type Grads = Params;

impl Params {
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }

    pub fn quantize(&mut self, ctx: &mut ArithContext) {
        for t in self.tensors_mut() {
            ctx.quantize_tensor(t);
        }
    }

    pub fn zeros_like(&self) -> Params {
        Params {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: Tensor::zeros(l.weight.shape()),
                    bias: Tensor::zeros(l.bias.shape()),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvTrace {
    pub input: Tensor,
    /// Conv output plus bias, before ReLU.
    pub pre: Tensor,
    pub pool: Pooled,
}

#[derive(Debug, Clone)]
pub struct DenseTrace {
    /// Activation feeding this layer, `[B × fan_in]`.
    pub input: Tensor,
    /// `a · Wᵀ + b`, before ReLU.
    pub pre: Tensor,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub batch: usize,
    pub conv: Vec<ConvTrace>,
    pub dense: Vec<DenseTrace>,
    pub logits: Tensor,
    pub probs: Tensor,
}

/// When parameters are rounded under `PerBatch`/`PerLayer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantizeTiming {
    EveryBatch,
    EveryEpoch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub rmsprop_decay: f32,
    pub rmsprop_epsilon: f32,
    pub seed: u64,
    pub init_scale: f32,
    pub init_perturbation: f32,
    pub precision: PrecisionConfig,
    pub timing: QuantizeTiming,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 30,
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            seed: 0,
            init_scale: 0.05,
            init_perturbation: 0.0,
            precision: PrecisionConfig::full(),
            timing: QuantizeTiming::EveryBatch,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(NetworkError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.init_perturbation >= 0.0) {
            return Err(NetworkError::InvalidConfig("init perturbation must be ≥ 0".into()));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) || !(self.learning_rate > 0.0) {
            return Err(NetworkError::InvalidConfig("need 0 ≤ decay < 1 and learning_rate > 0".into()));
        }
        Ok(())
    }
}

/// Running mean of squared gradients, one slot per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    pub cache: Params,
}

impl RmsPropState {
    pub fn new(params: &Params) -> Self {
        RmsPropState { cache: params.zeros_like() }
    }
}

/// One RMSprop update, in place:
/// `cache ← decay·cache + (1−decay)·g²`, `w ← w − lr·g / (√cache + ε)`.
///
/// Rejects non-finite gradients before touching anything.
pub fn rmsprop_step(
    params: &mut Params,
    grads: &Grads,
    state: &mut RmsPropState,
    cfg: &TrainConfig,
    ctx: &mut ArithContext,
    epoch: usize,
) -> Result<()> {
    if !grads.all_finite() {
        return Err(NetworkError::Diverged { epoch, what: "non-finite gradient".into() });
    }
    let shapes_match = params.layers.len() == grads.layers.len()
        && params.tensors().zip(grads.tensors()).all(|(p, g)| p.shape() == g.shape())
        && params.tensors().zip(state.cache.tensors()).all(|(p, c)| p.shape() == c.shape());
    if !shapes_match {
        return Err(NetworkError::InvalidSpec("optimizer state does not match parameters".into()));
    }
    let (lr, decay, eps) = (cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_epsilon);
    let keep = 1.0 - decay;
    let triples = params.tensors_mut().zip(grads.tensors()).zip(state.cache.tensors_mut());
    with_arith!(ctx, ar => {
        for ((p, g), c) in triples {
            for ((w, &gv), cv) in p.data_mut().iter_mut().zip(g.data()).zip(c.data_mut()) {
                let sq = ar.mul(gv, gv);
                let old = ar.mul(decay, *cv);
                let fresh = ar.mul(keep, sq);
                *cv = ar.add(old, fresh);
                let root = ar.q(cv.sqrt());
                let denom = ar.add(root, eps);
                let scaled = ar.mul(lr, gv);
                let step = ar.div(scaled, denom);
                *w = ar.sub(*w, step);
            }
        }
    });
    Ok(())
}

/// How a training run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// Stopped early by the epoch observer.
    Stopped,
    Diverged { epoch: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Test accuracy after each finished epoch.
    pub accuracies: Vec<f64>,
    pub status: RunStatus,
    pub params: Params,
}

/// Trains for `cfg.epochs` passes over `train` and records test accuracy
/// after each pass.
pub fn train(net: &Network, cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<TrainOutcome> {
    train_observed(net, cfg, train, test, |_, _| ControlFlow::Continue(()))
}

/// As [`train`], calling `observe(epoch, accuracy)` after each epoch; a
/// `Break` ends the run with [`RunStatus::Stopped`].
pub fn train_observed(
    net: &Network,
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    mut observe: impl FnMut(usize, f64) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(NetworkError::EmptyDataset);
    }
    let mut ctx = ArithContext::new(cfg.precision, Rng::with_stream(cfg.seed, ROUNDING_STREAM));
    let granularity = cfg.precision.granularity;
    let rounds_params = matches!(granularity, Granularity::PerBatch | Granularity::PerLayer);

    let mut params = net.init_weights(cfg);
    if granularity != Granularity::None {
        params.quantize(&mut ctx);
    }
    let mut state = RmsPropState::new(&params);
    let mut accuracies = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        for batch in train.batches(cfg.batch_size, cfg.seed, epoch as u64) {
            let (_, trace) = net.forward(&params, &batch.images, &mut ctx)?;
            let loss = cross_entropy_loss(&trace.logits, &batch.labels);
            let step = if loss.is_finite() {
                net.backward(&params, &trace, &batch.targets, &mut ctx)
                    .and_then(|grads| rmsprop_step(&mut params, &grads, &mut state, cfg, &mut ctx, epoch))
            } else {
                Err(NetworkError::Diverged { epoch, what: format!("loss is {loss}") })
            };
            match step {
                Ok(()) => {}
                Err(NetworkError::Diverged { epoch, what }) => {
                    accuracies.push(net.evaluate(&params, test)?);
                    return Ok(TrainOutcome {
                        accuracies,
                        status: RunStatus::Diverged { epoch, reason: what },
                        params,
                    });
                }
                Err(e) => return Err(e),
            }
            if rounds_params && cfg.timing == QuantizeTiming::EveryBatch {
                params.quantize(&mut ctx);
            }
        }
        if rounds_params && cfg.timing == QuantizeTiming::EveryEpoch {
            params.quantize(&mut ctx);
        }
        let accuracy = net.evaluate(&params, test)?;
        accuracies.push(accuracy);
        if observe(epoch, accuracy).is_break() {
            return Ok(TrainOutcome { accuracies, status: RunStatus::Stopped, params });
        }
    }
    Ok(TrainOutcome { accuracies, status: RunStatus::Completed, params })
}
