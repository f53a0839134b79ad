use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Parser;
use lowprec::data::Split;
use lowprec::Dataset;
use lowprec_cli::config::{ExperimentConfig, GranularityArg, RoundingArg};
use lowprec_cli::report::{self, ForwardGrid, ReportKind};
use lowprec_cli::sweep::{self, SweepParam, SweepSpec};

/// Train small CNNs on MNIST under emulated low-precision arithmetic.
///
/// Without --sweep or --report, trains one configuration (or one per
/// --mantissa-bits entry). Settings come from flags, then --config, then
/// built-in defaults.
#[derive(Debug, Parser)]
#[command(name = "lowprec", version)]
struct Args {
    /// Directory holding the MNIST IDX files (plain or .gz).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Parameter to sweep.
    #[arg(long, value_enum)]
    sweep: Option<SweepParam>,
    /// Values of the swept parameter, comma separated. Each parameter has a
    /// built-in default grid.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<String>>,
    /// Kept mantissa bits (0..=23), comma separated.
    #[arg(long, value_delimiter = ',')]
    mantissa_bits: Option<Vec<u32>>,
    #[arg(long, value_enum)]
    rounding: Option<RoundingArg>,
    #[arg(long, value_enum)]
    granularity: Option<GranularityArg>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Base seed, used when --seeds is absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Replicate seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Training images to use.
    #[arg(long)]
    subset: Option<usize>,
    /// Test images to use.
    #[arg(long)]
    test_subset: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dense_layers: Option<usize>,
    #[arg(long)]
    dense_units: Option<usize>,
    /// Start from the full-dataset profile (60 000 images, 50 epochs).
    #[arg(long)]
    full: bool,
    /// Extra `key=value` overrides, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit an analysis table instead of training.
    #[arg(long, value_enum)]
    report: Option<ReportKind>,
    /// Stack depths for --report prop1, as `1..4` or `1,2,3`.
    #[arg(long)]
    layers: Option<String>,
    /// Perturbations for --report prop1, comma separated.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
}

fn main() -> Result<()> {
    let args = Args::parse();
    if let Some(kind) = args.report {
        return run_report(kind, &args);
    }
    let base = build_config(&args)?;
    let spec = build_sweep(&args, base)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("results.csv"));
    spec.cells()?;

    let dir = &spec.base.data_dir;
    let train = Dataset::load_mnist(dir, Split::Train).with_context(|| format!("loading training set from {}", dir.display()))?;
    let test = Dataset::load_mnist(dir, Split::Test).with_context(|| format!("loading test set from {}", dir.display()))?;

    let summary = sweep::run_sweep(&spec, &train, &test, &out, |rec| {
        let last = rec.accuracies.last().copied().unwrap_or(0.0);
        let reached = rec.epochs_to_threshold.map_or("-".to_string(), |e| e.to_string());
        eprintln!(
            "{}: {} after {} epochs, accuracy {:.4}, to-threshold {}, {:.1}s",
            rec.run_id,
            rec.status.as_str(),
            rec.accuracies.len(),
            last,
            reached,
            rec.wall_seconds
        );
    })?;
    eprintln!(
        "{} runs ({} computed, {} reused) -> {}",
        summary.rows.len(),
        summary.computed,
        summary.reused,
        out.display()
    );
    Ok(())
}

fn build_config(args: &Args) -> Result<ExperimentConfig> {
    let mut cfg = if args.full { ExperimentConfig::full_scale() } else { ExperimentConfig::default() };
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    for kv in &args.overrides {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k, v)?;
    }
    if let Some(d) = &args.data_dir {
        cfg.data_dir = d.clone();
    }
    macro_rules! flag {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { cfg.$field = v; })* };
    }
    flag!(rounding, granularity, epochs, seed, subset, test_subset, batch_size, dense_layers, dense_units);
    if let Some([m]) = args.mantissa_bits.as_deref() {
        cfg.mantissa_bits = *m;
    }
    cfg.precision()?;
    Ok(cfg)
}

fn default_values(param: SweepParam) -> &'static [&'static str] {
    match param {
        SweepParam::Bitsize => &[],
        SweepParam::Rounding => &["truncate", "stochastic"],
        SweepParam::DenseLayers => &["1", "2", "3", "4", "5"],
        SweepParam::DenseUnits => &["160", "130", "110", "100", "90", "70", "40"],
        SweepParam::BatchSize => &["32", "64", "128", "256", "512"],
        SweepParam::InitPerturbation => &["0", "0.002", "0.004"],
    }
}

fn build_sweep(args: &Args, base: ExperimentConfig) -> Result<SweepSpec> {
    let bits = args.mantissa_bits.clone().unwrap_or_default();
    let seeds = args.seeds.clone().unwrap_or_else(|| vec![base.seed]);
    let param = args.sweep.unwrap_or(SweepParam::Bitsize);
    let (values, mantissa_bits) = match param {
        SweepParam::Bitsize => {
            let values = match &args.values {
                Some(v) => v.clone(),
                None if bits.is_empty() => vec![(base.mantissa_bits + 9).to_string()],
                None => bits.iter().map(|m| (m + 9).to_string()).collect(),
            };
            (values, Vec::new())
        }
        p => {
            let values = args.values.clone().unwrap_or_else(|| default_values(p).iter().map(|s| s.to_string()).collect());
            (values, if bits.len() > 1 { bits } else { Vec::new() })
        }
    };
    if values.iter().all(|v| v.trim().is_empty()) {
        bail!("--values is empty");
    }
    Ok(SweepSpec { param, values, mantissa_bits, seeds, base })
}

fn parse_layers(text: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
        if a == 0 || b < a {
            bail!("--layers range {text:?} is empty or starts at 0");
        }
        return Ok((a..=b).collect());
    }
    Ok(text.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?)
}

fn run_report(kind: ReportKind, args: &Args) -> Result<()> {
    let sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(BufWriter::new(fs::File::create(path).with_context(|| path.display().to_string())?)),
        None => Box::new(std::io::stdout().lock()),
    };
    match kind {
        ReportKind::Prop1 => {
            let mut grid = ForwardGrid::default();
            if let Some(l) = &args.layers {
                grid.depths = parse_layers(l)?;
            }
            if let Some(e) = &args.eps {
                grid.epsilons = e.clone();
            }
            let rep = report::forward_report(&grid, sink)?;
            for (depth, slope) in rep.slopes {
                eprintln!("n={depth}: log-log slope {slope:.4}");
            }
        }
        ReportKind::Backprop => {
            let worst = report::backprop_report(&report::backprop_grid(), sink)?;
            eprintln!("largest expansion residual {worst:e}");
        }
    }
    Ok(())
}
