//! Forward-error and output-gradient error tables.

use std::io::Write;

use lowprec::analysis::{self, AnalysisError, BackpropErrorCase, ConvStackModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportKind {
    /// Predicted vs. measured forward error of constant conv stacks.
    Prop1,
    /// Residuals of the output-delta expansion.
    Backprop,
}

/// Grid for the forward-error table.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardGrid {
    pub depths: Vec<usize>,
    pub epsilons: Vec<f64>,
    /// Filter rows and columns of every layer.
    pub kernel: (usize, usize),
    pub weight: f64,
    pub input: f64,
}

impl Default for ForwardGrid {
    fn default() -> Self {
        ForwardGrid {
            depths: vec![1, 2, 3],
            epsilons: vec![1e-8, 1e-7, 1e-6],
            kernel: (3, 3),
            weight: 0.5,
            input: 1.0,
        }
    }
}

pub const FORWARD_COLUMNS: [&str; 5] = ["n", "eps", "predicted", "measured", "ratio"];
pub const BACKPROP_COLUMNS: [&str; 11] =
    ["g", "y", "eps", "exact", "term0", "term1", "term2", "term3", "residual", "step1_shifted", "step1_substituted"];

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn forward_report<W: Write>(grid: &ForwardGrid, out: W) -> Result<analysis::ScalingReport, ReportError> {
    let (rows, cols) = grid.kernel;
    let depth = grid.depths.iter().copied().max().unwrap_or(1).max(1);
    let model = ConvStackModel::uniform(depth, rows, cols, grid.weight, grid.input, 0.0);
    let report = analysis::forward_error_scaling_report(&model, &grid.epsilons, &grid.depths)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FORWARD_COLUMNS)?;
    for r in &report.rows {
        w.write_record([
            r.depth.to_string(),
            format!("{:e}", r.epsilon),
            format!("{:e}", r.predicted),
            format!("{:e}", r.measured),
            r.ratio.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(report)
}

/// Default output-delta grid: signs of `g`, outputs across (0, 1) and
/// errors from tiny to large.
pub fn backprop_grid() -> Vec<BackpropErrorCase> {
    let mut cases = Vec::new();
    for g in [-1.0, -0.5, -0.1, 0.1, 0.5, 1.0] {
        for y in [0.05, 0.25, 0.5, 0.75, 0.95] {
            for eps in [0.0, 1e-6, 1e-3, 1e-2, 0.1] {
                cases.push(BackpropErrorCase::new(g, y, eps).expect("grid outputs lie in (0, 1)"));
            }
        }
    }
    cases
}

/// Writes one row per case and returns the largest absolute residual.
pub fn backprop_report<W: Write>(cases: &[BackpropErrorCase], out: W) -> Result<f64, ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BACKPROP_COLUMNS)?;
    let mut worst: f64 = 0.0;
    for c in cases {
        let e = analysis::backprop_error_expansion(c);
        // the target that yields this g at output y
        let step = analysis::step1_output_error(c.y, c.g + c.y, c.eps_y);
        worst = worst.max(e.residual().abs());
        let mut row = vec![c.g.to_string(), c.y.to_string(), c.eps_y.to_string(), format!("{:e}", e.exact)];
        row.extend(e.terms.iter().map(|t| format!("{t:e}")));
        row.push(format!("{:e}", e.residual()));
        row.push(format!("{:e}", step.shifted_down));
        row.push(format!("{:e}", step.substituted));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(worst)
}
