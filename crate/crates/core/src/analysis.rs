//! Round-off propagation through stacked convolutions and through the
//! output layer of back-propagation.
//!
//! # Forward error
//!
//! Model every stored value `x` as `x − ε` with one shared `ε`. For a stack
//! of valid convolutions with filter sizes `Mᵢ × Nᵢ`, weights of magnitude
//! `Wᵢ` and input magnitude `I` (written as layer 0 with `M₀ = N₀ = 1`,
//! `W₀ = I`), the output of layer `n` is perturbed to first order by
//!
//! ```text
//! S̃ₙ ≈ Sₙ − Tₙ·ε,   Tₙ = (∏ᵢ MᵢNᵢWᵢ) · (Σᵢ 1/Wᵢ),   i = 0..=n
//! ```
//!
//! [`predicted_forward_error`] evaluates `Tₙ·ε`. [`measured_forward_error`]
//! is an independent brute-force check: it builds constant tensors, runs the
//! convolutions in binary64 with and without the perturbation and returns
//! the difference.
//!
//! # Output-layer gradient error
//!
//! With a sigmoid output `y`, squared loss and `g = y₀ − y`, the output
//! delta is `g·y·(1 − y)`. Perturbing `y → y − ε_y` and `g → g − ε_y` gives
//!
//! ```text
//! (g − ε)(y − ε)(1 − y + ε)
//!   = g·y(1−y) + (−g + 2gy − y + y²)ε + (−g + 1 − 2y)ε² + ε³
//! ```
//!
//! an exact polynomial identity checked by [`backprop_error_expansion`].

use thiserror::Error;

use crate::quant::{self, MantissaBits};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("magnitude of layer {layer} is zero; the predictor needs every weight nonzero")]
    ZeroMagnitude { layer: usize },
    #[error("invalid stack geometry: {0}")]
    Geometry(String),
    #[error("output y = {0} outside (0, 1)")]
    OutputRange(f64),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// One convolution layer described by filter size and a representative
/// weight magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerMagnitude {
    pub rows: usize,
    pub cols: usize,
    pub weight: f64,
}

/// Symbolic stack: input magnitude, per-layer filters and the shared
/// perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStackModel {
    pub input: f64,
    pub layers: Vec<LayerMagnitude>,
    pub epsilon: f64,
}

impl ConvStackModel {
    /// `n` identical layers.
    pub fn uniform(n: usize, rows: usize, cols: usize, weight: f64, input: f64, epsilon: f64) -> Self {
        ConvStackModel { input, layers: vec![LayerMagnitude { rows, cols, weight }; n], epsilon }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        ConvStackModel { epsilon, ..self.clone() }
    }

    /// First `n` layers; the last layer is repeated if `n` exceeds the depth.
    pub fn with_depth(&self, n: usize) -> Self {
        let mut layers: Vec<LayerMagnitude> = self.layers.iter().copied().take(n).collect();
        while layers.len() < n {
            let last = *self.layers.last().expect("model has at least one layer");
            layers.push(last);
        }
        ConvStackModel { layers, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(AnalysisError::Geometry("no layers".into()));
        }
        if self.input == 0.0 {
            return Err(AnalysisError::ZeroMagnitude { layer: 0 });
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight == 0.0 {
                return Err(AnalysisError::ZeroMagnitude { layer: i + 1 });
            }
            if l.rows == 0 || l.cols == 0 {
                return Err(AnalysisError::Geometry(format!("layer {} has an empty filter", i + 1)));
            }
        }
        Ok(())
    }

    /// `Tₙ = (∏ MᵢNᵢWᵢ)(Σ 1/Wᵢ)` including the input as layer 0.
    pub fn coefficient(&self) -> Result<f64> {
        self.validate()?;
        let mut product = self.input;
        let mut reciprocal_sum = 1.0 / self.input;
        for l in &self.layers {
            product *= (l.rows * l.cols) as f64 * l.weight;
            reciprocal_sum += 1.0 / l.weight;
        }
        Ok(product * reciprocal_sum)
    }
}

/// First-order forward error `Tₙ·ε`.
pub fn predicted_forward_error(model: &ConvStackModel) -> Result<f64> {
    Ok(model.coefficient()? * model.epsilon)
}

/// Brute-force `Sₙ − S̃ₙ` at the centre of a constant stack, in binary64.
///
/// The input is sized so the final output is 3×3. The perturbed run
/// subtracts `ε` from every input entry and every kernel entry; intermediate
/// outputs are not perturbed further.
pub fn measured_forward_error(model: &ConvStackModel) -> Result<f64> {
    model.validate()?;
    let eps = model.epsilon;
    let exact = run_constant_stack(model, |x| x)?;
    let perturbed = run_constant_stack(model, |x| x - eps)?;
    Ok(exact - perturbed)
}

/// `Sₙ − Ŝₙ` where `Ŝₙ` uses input and kernels truncated to `bits`.
///
/// Reported alongside the shared-ε model but never asserted: real
/// truncation error differs per value.
pub fn measured_truncation_error(model: &ConvStackModel, bits: MantissaBits) -> Result<f64> {
    model.validate()?;
    let exact = run_constant_stack(model, |x| x)?;
    let truncated = run_constant_stack(model, |x| quant::truncate(x as f32, bits) as f64)?;
    Ok(exact - truncated)
}

fn run_constant_stack(model: &ConvStackModel, store: impl Fn(f64) -> f64) -> Result<f64> {
    const OUT: usize = 3;
    let h = OUT + model.layers.iter().map(|l| l.rows - 1).sum::<usize>();
    let w = OUT + model.layers.iter().map(|l| l.cols - 1).sum::<usize>();
    let mut plane = Plane { h, w, data: vec![store(model.input); h * w] };
    for l in &model.layers {
        let kernel = Plane { h: l.rows, w: l.cols, data: vec![store(l.weight); l.rows * l.cols] };
        plane = plane.correlate(&kernel);
    }
    if (plane.h, plane.w) != (OUT, OUT) {
        return Err(AnalysisError::Geometry(format!("ended at {}×{}", plane.h, plane.w)));
    }
    Ok(plane.data[OUT * OUT / 2])
}

struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn correlate(&self, k: &Plane) -> Plane {
        let (oh, ow) = (self.h - k.h + 1, self.w - k.w + 1);
        let mut data = vec![0.0; oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0;
                for m in 0..k.h {
                    for n in 0..k.w {
                        acc += self.data[(i + m) * self.w + j + n] * k.data[m * k.w + n];
                    }
                }
                data[i * ow + j] = acc;
            }
        }
        Plane { h: oh, w: ow, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub depth: usize,
    pub epsilon: f64,
    pub predicted: f64,
    pub measured: f64,
    /// `measured / predicted`, reported as 0 when both are 0.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `ln measured` against `ln ε`, per depth.
    pub slopes: Vec<(usize, f64)>,
}

impl ScalingReport {
    /// Checks every ratio with `ε ≤ eps_max` against 1 and every slope
    /// against 1, returning the first violation.
    pub fn check(&self, ratio_tol: f64, eps_max: f64, slope_tol: f64) -> std::result::Result<(), String> {
        for r in self.rows.iter().filter(|r| r.epsilon > 0.0 && r.epsilon <= eps_max) {
            if (r.ratio - 1.0).abs() >= ratio_tol {
                return Err(format!("depth {} ε {:e}: ratio {}", r.depth, r.epsilon, r.ratio));
            }
        }
        for &(depth, slope) in &self.slopes {
            if (slope - 1.0).abs() > slope_tol {
                return Err(format!("depth {depth}: log-log slope {slope}"));
            }
        }
        Ok(())
    }
}

/// Predicted and measured forward error over a grid of perturbations and
/// depths.
pub fn forward_error_scaling_report(model: &ConvStackModel, epsilons: &[f64], depths: &[usize]) -> Result<ScalingReport> {
    let mut rows = Vec::with_capacity(epsilons.len() * depths.len());
    let mut slopes = Vec::with_capacity(depths.len());
    for &depth in depths {
        let base = model.with_depth(depth);
        let mut points = Vec::new();
        for &eps in epsilons {
            let m = base.with_epsilon(eps);
            let predicted = predicted_forward_error(&m)?;
            let measured = measured_forward_error(&m)?;
            let ratio = if predicted == 0.0 && measured == 0.0 { 0.0 } else { measured / predicted };
            if eps > 0.0 && measured > 0.0 {
                points.push((eps.ln(), measured.ln()));
            }
            rows.push(ScalingRow { depth, epsilon: eps, predicted, measured, ratio });
        }
        if points.len() >= 2 {
            slopes.push((depth, least_squares_slope(&points)));
        }
    }
    Ok(ScalingReport { rows, slopes })
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Output-layer quantities for the gradient error expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackpropErrorCase {
    /// `y₀ − y`
    pub g: f64,
    /// Sigmoid output in `(0, 1)`.
    pub y: f64,
    /// Error in the stored output.
    pub eps_y: f64,
}

impl BackpropErrorCase {
    pub fn new(g: f64, y: f64, eps_y: f64) -> Result<Self> {
        if !(y > 0.0 && y < 1.0) {
            return Err(AnalysisError::OutputRange(y));
        }
        Ok(BackpropErrorCase { g, y, eps_y })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackpropExpansion {
    /// `(g − ε)(y − ε)(1 − y + ε)`
    pub exact: f64,
    /// Unperturbed delta, then the ε, ε² and ε³ corrections.
    pub terms: [f64; 4],
}

impl BackpropExpansion {
    pub fn term_sum(&self) -> f64 {
        self.terms.iter().sum()
    }

    pub fn residual(&self) -> f64 {
        self.exact - self.term_sum()
    }
}

/// Perturbed output delta and its exact expansion in powers of `ε_y`.
pub fn backprop_error_expansion(case: &BackpropErrorCase) -> BackpropExpansion {
    let BackpropErrorCase { g, y, eps_y: e } = *case;
    let exact = (g - e) * (y - e) * (1.0 - y + e);
    let terms = [
        g * y * (1.0 - y),
        (-g + 2.0 * g * y - y + y * y) * e,
        (-g + 1.0 - 2.0 * y) * e * e,
        e * e * e,
    ];
    BackpropExpansion { exact, terms }
}

/// Perturbed loss gradient at the output under both sign readings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputErrorStep {
    /// Unperturbed `g = y₀ − y`.
    pub g: f64,
    /// `g − ε_y`, the form used by the expansion above.
    pub shifted_down: f64,
    /// `y₀ − (y − ε_y)`, the direct substitution of the perturbed output.
    pub substituted: f64,
    /// `substituted − shifted_down`, equal to `2ε_y`.
    pub discrepancy: f64,
}

/// Computes the perturbed `g̃` for output `y`, target `y0` and output error
/// `eps_y` both ways and reports the difference.
pub fn step1_output_error(y: f64, y0: f64, eps_y: f64) -> OutputErrorStep {
    let g = y0 - y;
    let shifted_down = g - eps_y;
    let substituted = y0 - (y - eps_y);
    OutputErrorStep { g, shifted_down, substituted, discrepancy: substituted - shifted_down }
}
