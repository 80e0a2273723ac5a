//! `sid`: config-driven hypergradient experiments, bound tables and dataset
//! conversion.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or
//! configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sid_core::data::{load_csv, load_idx, load_libsvm, write_csv, write_idx, Dataset};
use sid_core::harness::{bounds_table, run_bilevel, run_experiment, write_bounds_csv, ExperimentConfig};
use sid_core::{Error, Result};

/// Environment variable naming the output directory used when neither
/// `--out` nor `output.dir` is given.
const OUT_ENV: &str = "SID_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "sid", version, about = "Stochastic implicit differentiation experiments")]
struct Cli {
    /// Worker threads for replicate runs (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the configured variants and write run, curve and bound-overlay CSVs.
    Run(ConfigArgs),
    /// Run the outer hyperparameter loop and write trace.csv.
    Bilevel(ConfigArgs),
    /// Tabulate the MSE bound at the configured (t, k) pairs.
    Bounds(ConfigArgs),
    /// Convert a dataset between IDX, libsvm and CSV.
    Convert(ConvertArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir` and $SID_OUT_DIR.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seeds.master`.
    #[arg(long)]
    seed: Option<u64>,
    /// `section.key=value` override, applied after the file is read.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Idx,
    Libsvm,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Target {
    Idx,
    Csv,
}

#[derive(Args, Debug)]
struct ConvertArgs {
    #[arg(long, value_enum)]
    from: Format,
    #[arg(long, value_enum, default_value = "csv")]
    to: Target,
    #[arg(long)]
    input: PathBuf,
    /// IDX label file of the input.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// IDX label file to write.
    #[arg(long)]
    output_labels: Option<PathBuf>,
    /// Raw pixel value of a feature equal to 1 when writing IDX.
    #[arg(long)]
    pixel_scale: Option<f64>,
    /// Image shape `ROWSxCOLS` when writing IDX.
    #[arg(long, value_parser = parse_shape)]
    image_shape: Option<(usize, usize)>,
}

fn parse_shape(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(r)?, parse(c)?))
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seeds.master={seed}"));
    }
    ExperimentConfig::load(&args.config, &overrides)
}

fn out_dir(args: &ConfigArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_run(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let dir = out_dir(args, &cfg);
    let summary = run_experiment(&cfg, &dir)?;
    println!("wrote {} runs to {}", summary.records.len(), dir.display());
    for c in &summary.curves {
        if let Some(p) = c.points.last() {
            println!(
                "{:<16} epoch {:>10.4}  mean sq error {:.6e}",
                c.variant.as_str(),
                p.epoch,
                p.mean
            );
        }
    }
    Ok(())
}

fn cmd_bilevel(args: &ConfigArgs) -> Result<ExitCode> {
    let cfg = load_config(args)?;
    let dir = out_dir(args, &cfg);
    let trace = run_bilevel(&cfg, &dir)?;
    println!(
        "wrote {} outer steps to {}",
        trace.steps.len(),
        dir.join("trace.csv").display()
    );
    if let Some(msg) = &trace.aborted {
        eprintln!("error: outer loop stopped early: {msg}");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bounds(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let dir = out_dir(args, &cfg);
    let rows = bounds_table(&cfg)?;
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("bounds.csv");
    write_bounds_csv(&rows, &path)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required for IDX")))
}

fn cmd_convert(args: &ConvertArgs) -> Result<()> {
    let mut ds: Dataset = match args.from {
        Format::Idx => load_idx(&args.input, require(&args.labels, "labels")?)?,
        Format::Libsvm => load_libsvm(&args.input)?,
        Format::Csv => load_csv(&args.input)?,
    };
    match args.to {
        Target::Csv => write_csv(&ds, &args.output)?,
        Target::Idx => {
            if let Some(s) = args.pixel_scale {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::InvalidArgument(format!("--pixel-scale {s} must be positive")));
                }
                ds.feature_scale = s;
            }
            if let Some(shape) = args.image_shape {
                ds.image_shape = Some(shape);
            }
            write_idx(&ds, &args.output, require(&args.output_labels, "output-labels")?)?;
        }
    }
    println!("converted {} examples with {} features", ds.n(), ds.d());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be ≥ 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|()| ExitCode::SUCCESS),
        Command::Bilevel(a) => cmd_bilevel(a),
        Command::Bounds(a) => cmd_bounds(a).map(|()| ExitCode::SUCCESS),
        Command::Convert(a) => cmd_convert(a).map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
