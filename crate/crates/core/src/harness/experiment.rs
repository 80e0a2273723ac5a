//! Running experiments described by an [`ExperimentConfig`].

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::config::{
    BoundsSection, ConstantsSection, DataFormat, DomainKind, ExperimentConfig, LabelMap, NoiseKind, ProblemKind,
    ProblemSection,
};
use super::export::{fmt_f64, write_curves_csv, write_runs_csv};
use super::runs::{aggregate_runs, log_checkpoints, reference_gradient, run_variant, Curve, RunRecord, RunSettings};
use super::variant::{Algo, StepParams, VariantName};
use crate::bounds::{bias_bound, mse_bound, subproblem_rate_constants, variance_bounds, MseBound, RateFunction};
use crate::data::{binarize_odd_even, load_csv, load_idx, load_libsvm, split_train_val, Dataset};
use crate::fixpoint::{schedule_decreasing, StepSchedule};
use crate::outer::{outer_sgd, HyperDomain, HypergradSource, OuterConfig, OuterTrace};
use crate::problem::{Constant, ProblemConstants, StochasticFixedPointProblem};
use crate::problems::{
    logistic_problem, multinomial_problem, quadratic_bilevel, solve_fixed_point, toy_contraction, Classifier,
    MultinomialLogistic, NoiseMode, QuadraticBilevel, RegLogistic, ToyContraction,
};
use crate::rng::derive_seed;
use crate::{Error, RealVec, Result};

/// A problem instantiated from a `[problem]` section.
#[derive(Clone, Debug)]
pub enum BuiltProblem {
    Toy(ToyContraction),
    Quadratic(QuadraticBilevel),
    Logistic(RegLogistic),
    Multinomial(MultinomialLogistic),
}

impl BuiltProblem {
    pub fn as_dyn(&self) -> &dyn StochasticFixedPointProblem {
        match self {
            BuiltProblem::Toy(p) => p,
            BuiltProblem::Quadratic(p) => p,
            BuiltProblem::Logistic(p) => p,
            BuiltProblem::Multinomial(p) => p,
        }
    }

    pub fn as_classifier(&self) -> Option<&dyn Classifier> {
        match self {
            BuiltProblem::Logistic(p) => Some(p),
            BuiltProblem::Multinomial(p) => Some(p),
            _ => None,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn square(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(cfg_err(format!(
            "problem.{what} must be a non-empty rectangular matrix"
        )));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn load_dataset(section: &ProblemSection, cfg: &ExperimentConfig) -> Result<Dataset> {
    let format = section
        .data_format
        .ok_or_else(|| cfg_err("problem.data_format is required for data-driven problems"))?;
    let path = cfg.resolve(
        section
            .data_path
            .as_deref()
            .ok_or_else(|| cfg_err("problem.data_path is required for data-driven problems"))?,
    );
    if !path.exists() {
        return Err(cfg_err(format!("data file {} not found", path.display())));
    }
    let mut ds = match format {
        DataFormat::Idx => {
            let labels = cfg.resolve(
                section
                    .labels_path
                    .as_deref()
                    .ok_or_else(|| cfg_err("problem.labels_path is required for IDX data"))?,
            );
            if !labels.exists() {
                return Err(cfg_err(format!("label file {} not found", labels.display())));
            }
            load_idx(&path, &labels)?
        }
        DataFormat::Libsvm => load_libsvm(&path)?,
        DataFormat::Csv => load_csv(&path)?,
    };
    if section.labels == LabelMap::OddEven {
        ds.labels = binarize_odd_even(&ds.labels)?;
    }
    Ok(ds)
}

fn split(section: &ProblemSection, ds: &Dataset) -> Result<(Dataset, Dataset)> {
    let n = ds.n();
    let (n_tr, n_val) = match (section.n_train, section.n_val) {
        (Some(a), Some(b)) => (a, b),
        (Some(a), None) => (a, n.saturating_sub(a)),
        (None, Some(b)) => (n.saturating_sub(b), b),
        (None, None) => (n - n / 2, n / 2),
    };
    split_train_val(ds, n_tr, n_val, section.split_seed)
}

/// Instantiates the `[problem]` section. Relative data paths are resolved
/// against the configuration's directory.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<BuiltProblem> {
    let section = cfg
        .problem
        .as_ref()
        .ok_or_else(|| cfg_err("missing [problem] section"))?;
    let noise_std = section.noise_std.unwrap_or(0.0);
    let built = match section.kind {
        ProblemKind::Toy => {
            let q = section
                .q
                .ok_or_else(|| cfg_err("problem.q is required for the toy problem"))?;
            let shift = section.shift.clone().unwrap_or_else(|| vec![1.0]);
            BuiltProblem::Toy(toy_contraction(q, RealVec::from_vec(shift), noise_std)?)
        }
        ProblemKind::Quadratic => {
            let a = match (&section.a, &section.a_diag) {
                (Some(_), Some(_)) => return Err(cfg_err("give at most one of problem.a and problem.a_diag")),
                (Some(rows), None) => square(rows, "a")?,
                (None, Some(diag)) => DMatrix::from_diagonal(&RealVec::from_vec(diag.clone())),
                (None, None) => DMatrix::from_diagonal(&RealVec::from_vec(vec![2.0, 4.0])),
            };
            let d = a.nrows();
            let b = match &section.b {
                Some(rows) => square(rows, "b")?,
                None => DMatrix::identity(d, section.lambda.len()),
            };
            let w_target = RealVec::from_vec(section.w_target.clone().unwrap_or_else(|| vec![1.0; d]));
            let noise = match section.noise {
                NoiseKind::None => NoiseMode::None,
                NoiseKind::Additive => NoiseMode::Additive(noise_std),
                NoiseKind::LambdaMultiplicative => NoiseMode::LambdaMultiplicative(noise_std),
            };
            BuiltProblem::Quadratic(quadratic_bilevel(a, b, w_target, noise)?)
        }
        ProblemKind::Logistic => {
            let ds = load_dataset(section, cfg)?;
            let (train, val) = split(section, &ds)?;
            let p = logistic_problem(&train, &val, section.reg, section.batch_size)?
                .with_sampling(section.sampling, section.split_seed)?;
            BuiltProblem::Logistic(p)
        }
        ProblemKind::Multinomial => {
            let ds = load_dataset(section, cfg)?;
            let n_classes = match section.n_classes {
                Some(c) => c,
                None => ds.labels.iter().copied().max().map_or(0, |m| m.max(0) as usize + 1),
            };
            let (train, val) = split(section, &ds)?;
            let p = multinomial_problem(&train, &val, n_classes, section.reg, section.batch_size)?
                .with_sampling(section.sampling, section.split_seed)?;
            BuiltProblem::Multinomial(p)
        }
    };
    Ok(built)
}

/// The configured hyperparameter, checked against the problem.
pub fn config_lambda(cfg: &ExperimentConfig, problem: &dyn StochasticFixedPointProblem) -> Result<RealVec> {
    let section = cfg
        .problem
        .as_ref()
        .ok_or_else(|| cfg_err("missing [problem] section"))?;
    let lambda = RealVec::from_vec(section.lambda.clone());
    if lambda.len() != problem.dim_lambda() {
        return Err(cfg_err(format!(
            "problem.lambda has {} entries, the problem expects {}",
            lambda.len(),
            problem.dim_lambda()
        )));
    }
    Ok(lambda)
}

/// Problem constants at `λ` with any `[constants]` entries substituted.
pub fn merged_constants(
    problem: Option<&dyn StochasticFixedPointProblem>,
    lambda: Option<&RealVec>,
    section: Option<&ConstantsSection>,
) -> Result<ProblemConstants> {
    let base = match (problem, lambda) {
        (Some(p), Some(l)) => p.constants(l),
        _ => None,
    };
    let have_base = base.is_some();
    let mut c = base.unwrap_or_default();
    let mut missing = Vec::new();
    let empty = ConstantsSection::default();
    let section = section.unwrap_or(&empty);
    for name in &section.estimated {
        if c.field_mut(name).is_none() {
            return Err(cfg_err(format!("unknown constant {name:?} in constants.estimated")));
        }
    }
    for (name, value) in section.values() {
        let flagged = section.estimated.iter().any(|e| e == name);
        let slot = c.field_mut(name).expect("known constant");
        match value {
            Some(v) => {
                *slot = if flagged {
                    Constant::estimated(v)
                } else {
                    Constant::analytic(v)
                }
            }
            None if flagged => slot.provenance = crate::problem::Provenance::Estimated,
            None if !have_base && name != "sigma_lam2" => missing.push(name),
            None => {}
        }
    }
    if !missing.is_empty() {
        return Err(cfg_err(format!(
            "constants missing without a problem: {}",
            missing.join(", ")
        )));
    }
    if !have_base && section.sigma_lam2.is_none() {
        c.sigma_lam2 = Constant::analytic(c.derived_sigma_lam2());
    }
    c.validate()?;
    Ok(c)
}

/// Decreasing-step parameters for the bound: `β = 2/(1 − q²)` and
/// `γ = β(1 + σ_λ2)` unless given.
fn bound_schedule(c: &ProblemConstants, beta: Option<f64>, gamma: Option<f64>) -> (f64, f64) {
    let q = c.q.value;
    let beta = beta.unwrap_or(2.0 / (1.0 - q * q));
    let gamma = gamma.unwrap_or(beta * (1.0 + c.derived_sigma_lam2()));
    (beta, gamma)
}

fn w_norm_at(problem: &dyn StochasticFixedPointProblem, lambda: &RealVec) -> Result<f64> {
    match problem.fixed_point(lambda) {
        Some(w) => Ok(w.norm()),
        None => Ok(solve_fixed_point(problem, lambda, None, 1e-12, 10_000_000)?.norm()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundRow {
    pub t: f64,
    pub k: f64,
    pub rho: f64,
    pub sigma: f64,
    pub bias: f64,
    pub var_inner: f64,
    pub var_outer: f64,
    pub bound: MseBound,
}

pub const BOUNDS_HEADER: [&str; 10] = [
    "t",
    "k",
    "rho",
    "sigma",
    "bias",
    "var_inner",
    "var_outer",
    "total",
    "floor",
    "indicative",
];

/// Evaluates the MSE bound with power-law subproblem rates at the `(t, k)`
/// pairs of a `[bounds]` section.
pub fn bounds_table(cfg: &ExperimentConfig) -> Result<Vec<BoundRow>> {
    let b: &BoundsSection = cfg.bounds.as_ref().ok_or_else(|| cfg_err("missing [bounds] section"))?;
    if b.t.len() != b.k.len() || b.t.is_empty() {
        return Err(cfg_err("bounds.t and bounds.k must be non-empty and of equal length"));
    }
    let built = match &cfg.problem {
        Some(_) => Some(build_problem(cfg)?),
        None => None,
    };
    let problem = built.as_ref().map(BuiltProblem::as_dyn);
    let lambda = match problem {
        Some(p) => Some(config_lambda(cfg, p)?),
        None => None,
    };
    let c = merged_constants(problem, lambda.as_ref(), cfg.constants.as_ref())?;
    let w_norm = match (b.w_norm, problem, &lambda) {
        (Some(v), _, _) => v,
        (None, Some(p), Some(l)) => w_norm_at(p, l)?,
        _ => return Err(cfg_err("bounds.w_norm is required without a [problem] section")),
    };
    let (beta, gamma) = bound_schedule(&c, b.beta, b.gamma);
    let rates = subproblem_rate_constants(&c, beta, gamma, w_norm, b.grad1e_norm.unwrap_or(c.l_e.value))?;
    let (rho_f, sigma_f) = (rates.rho(gamma), rates.sigma(gamma));
    b.t.iter()
        .zip(&b.k)
        .map(|(&t, &k)| {
            if !(t >= 0.0 && k >= 0.0) {
                return Err(cfg_err("bounds.t and bounds.k must be ≥ 0"));
            }
            let (rho, sigma) = (rho_f.eval(t), sigma_f.eval(k));
            let (var_inner, var_outer) = variance_bounds(&c, rho, sigma)?;
            Ok(BoundRow {
                t,
                k,
                rho,
                sigma,
                bias: bias_bound(&c, rho, sigma)?,
                var_inner,
                var_outer,
                bound: mse_bound(&c, rho, sigma)?,
            })
        })
        .collect()
}

pub fn write_bounds_csv(rows: &[BoundRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(BOUNDS_HEADER)?;
    for r in rows {
        w.write_record([
            fmt_f64(r.t),
            fmt_f64(r.k),
            fmt_f64(r.rho),
            fmt_f64(r.sigma),
            fmt_f64(r.bias),
            fmt_f64(r.var_inner),
            fmt_f64(r.var_outer),
            fmt_f64(r.bound.total),
            fmt_f64(r.bound.floor),
            r.bound.indicative.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct OverlayRow {
    pub variant: VariantName,
    pub epoch: f64,
    pub t: usize,
    pub k: usize,
    pub mean_sq_error: f64,
    pub bound: MseBound,
}

#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub records: Vec<RunRecord>,
    pub curves: Vec<Curve>,
    pub overlay: Vec<OverlayRow>,
}

/// Runs every configured variant for every replicate, writing `runs.csv`,
/// `curve_<variant>.csv` and, where constants are known and a variant uses
/// decreasing steps in both subproblems, `bounds_overlay.csv`.
///
/// Replicate `r` of every variant uses the same seed, so variants are compared
/// on common random numbers.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentSummary> {
    let built = build_problem(cfg)?;
    let problem = built.as_dyn();
    let lambda = config_lambda(cfg, problem)?;
    problem.validate_lambda(&lambda)?;
    if cfg.variant.names.is_empty() {
        return Err(cfg_err("variant.names is empty"));
    }
    if cfg.seeds.replicates == 0 {
        return Err(cfg_err("seeds.replicates must be ≥ 1"));
    }
    let checkpoint_epochs = cfg
        .budget
        .checkpoint_epochs
        .clone()
        .unwrap_or_else(|| log_checkpoints(cfg.budget.epochs, cfg.budget.checkpoints));
    let batch = problem.sampling().batch;
    let settings = RunSettings {
        checkpoint_epochs,
        batch_ll: batch,
        batch_ls: batch,
        params: cfg.variant.step_params(),
    };
    let reference = reference_gradient(problem, &lambda)?;

    let jobs: Vec<(VariantName, usize)> = cfg
        .variant
        .names
        .iter()
        .flat_map(|&v| (0..cfg.seeds.replicates).map(move |r| (v, r)))
        .collect();
    let records = jobs
        .par_iter()
        .enumerate()
        .map(|(id, &(v, r))| {
            run_variant(
                problem,
                &lambda,
                v,
                &settings,
                &reference,
                id,
                derive_seed(cfg.seeds.master, r as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(out_dir)?;
    write_runs_csv(&records, &out_dir.join("runs.csv"))?;
    let mut curves = Vec::new();
    for &v in &cfg.variant.names {
        let mine: Vec<RunRecord> = records.iter().filter(|r| r.variant == v).cloned().collect();
        let curve = aggregate_runs(&mine)?;
        write_curves_csv(
            std::slice::from_ref(&curve),
            &out_dir.join(format!("curve_{}.csv", v.as_str())),
        )?;
        curves.push(curve);
    }

    let overlay = overlay_rows(cfg, problem, &lambda, &records, &curves, &settings.params)?;
    if !overlay.is_empty() {
        write_overlay_csv(&overlay, &out_dir.join("bounds_overlay.csv"))?;
    }
    Ok(ExperimentSummary {
        records,
        curves,
        overlay,
    })
}

fn overlay_rows(
    cfg: &ExperimentConfig,
    problem: &dyn StochasticFixedPointProblem,
    lambda: &RealVec,
    records: &[RunRecord],
    curves: &[Curve],
    params: &StepParams,
) -> Result<Vec<OverlayRow>> {
    let dec_dec = |v: VariantName| {
        let s = v.spec();
        s.lower == Algo::SgdDec && s.linear == Algo::SgdDec
    };
    if !curves.iter().any(|c| dec_dec(c.variant)) {
        return Ok(vec![]);
    }
    let Ok(c) = merged_constants(Some(problem), Some(lambda), cfg.constants.as_ref()) else {
        return Ok(vec![]);
    };
    // the bound needs γ ≥ β(1 + σ_λ2); runs whose own γ is smaller are still
    // overlaid, flagged as indicative
    let (beta, gamma) = bound_schedule(&c, params.beta, None);
    let gamma = params.gamma.map_or(gamma, |g| g.max(gamma));
    let run_sched = schedule_decreasing(c.q.value, c.sigma2_lower.value, params.beta, params.gamma)?;
    let matches = matches!(run_sched, StepSchedule::Decreasing { beta: b, gamma: g } if b == beta && g == gamma);
    let grad1e = cfg.bounds.as_ref().and_then(|b| b.grad1e_norm).unwrap_or(c.l_e.value);
    let w_norm = w_norm_at(problem, lambda)?;
    let rates = match subproblem_rate_constants(&c, beta, gamma, w_norm, grad1e) {
        Ok(r) => r,
        Err(_) => return Ok(vec![]),
    };
    let (rho, sigma): (RateFunction, RateFunction) = (rates.rho(gamma), rates.sigma(gamma));
    let mut rows = Vec::new();
    for curve in curves {
        if !dec_dec(curve.variant) {
            continue;
        }
        let first = records
            .iter()
            .find(|r| r.variant == curve.variant)
            .expect("every curve has runs");
        for (p, cp) in curve.points.iter().zip(&first.checkpoints) {
            let mut bound = mse_bound(&c, rho.eval(cp.t as f64), sigma.eval(cp.k as f64))?;
            bound.indicative |= !matches;
            rows.push(OverlayRow {
                variant: curve.variant,
                epoch: p.epoch,
                t: cp.t,
                k: cp.k,
                mean_sq_error: p.mean,
                bound,
            });
        }
    }
    Ok(rows)
}

fn write_overlay_csv(rows: &[OverlayRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "variant",
        "epoch",
        "t",
        "k",
        "mean_sq_error",
        "bound_total",
        "bound_floor",
        "indicative",
    ])?;
    for r in rows {
        w.write_record([
            r.variant.as_str().to_string(),
            fmt_f64(r.epoch),
            r.t.to_string(),
            r.k.to_string(),
            fmt_f64(r.mean_sq_error),
            fmt_f64(r.bound.total),
            fmt_f64(r.bound.floor),
            r.bound.indicative.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn outer_domain(cfg: &ExperimentConfig, dim: usize) -> Result<HyperDomain> {
    let o = cfg.outer.as_ref().ok_or_else(|| cfg_err("missing [outer] section"))?;
    Ok(match o.domain {
        DomainKind::PositiveOrthant => HyperDomain::PositiveOrthant {
            lambda_min: o.lambda_min.unwrap_or(1e-6),
        },
        DomainKind::Unconstrained => HyperDomain::Unconstrained,
        DomainKind::Box => {
            let lower = o
                .lower
                .clone()
                .ok_or_else(|| cfg_err("outer.lower is required for a box domain"))?;
            let upper = o
                .upper
                .clone()
                .ok_or_else(|| cfg_err("outer.upper is required for a box domain"))?;
            if lower.len() != dim || upper.len() != dim {
                return Err(cfg_err(format!("outer.lower and outer.upper must have {dim} entries")));
            }
            HyperDomain::Box {
                lower: RealVec::from_vec(lower),
                upper: RealVec::from_vec(upper),
            }
        }
    })
}

/// Runs the outer loop of an `[outer]` section and writes `trace.csv`.
pub fn run_bilevel(cfg: &ExperimentConfig, out_dir: &Path) -> Result<OuterTrace> {
    let o = cfg.outer.as_ref().ok_or_else(|| cfg_err("missing [outer] section"))?;
    let built = build_problem(cfg)?;
    let problem = built.as_dyn();
    let lambda0 = config_lambda(cfg, problem)?;
    let source = if o.estimator.eq_ignore_ascii_case("oracle") {
        HypergradSource::Oracle
    } else {
        HypergradSource::Variant {
            variant: o
                .estimator
                .parse()
                .map_err(|e: Error| cfg_err(format!("outer.estimator: {e}")))?,
            epochs_per_step: o.epochs_per_step,
            batch: problem.sampling().batch,
            params: cfg.variant.step_params(),
        }
    };
    let outer = OuterConfig {
        steps: o.steps,
        lr: o.lr,
        domain: outer_domain(cfg, lambda0.len())?,
        source,
        warm_start: o.warm_start,
        log_space: o.log_space,
        master_seed: cfg.seeds.master,
    };
    let classifier = built.as_classifier();
    let acc = |_: &RealVec, w: &RealVec| classifier.map_or(f64::NAN, |c| c.eval_accuracy(w));
    let trace = outer_sgd(problem, &lambda0, &outer, classifier.map(|_| &acc as _))?;
    fs::create_dir_all(out_dir)?;
    write_trace_csv(&trace, lambda0.len(), &out_dir.join("trace.csv"))?;
    Ok(trace)
}

pub fn write_trace_csv(trace: &OuterTrace, dim: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["step".to_string()];
    header.extend((0..dim).map(|i| format!("lambda_{i}")));
    header.push("f_val".into());
    header.extend((0..dim).map(|i| format!("hypergrad_{i}")));
    header.extend(["epochs".to_string(), "accuracy".to_string()]);
    w.write_record(&header)?;
    for s in &trace.steps {
        let mut row = vec![s.step.to_string()];
        row.extend(s.lambda.iter().map(|&x| fmt_f64(x)));
        row.push(fmt_f64(s.f_val));
        row.extend(s.hypergrad.iter().map(|&x| fmt_f64(x)));
        row.push(fmt_f64(s.epochs));
        row.push(s.accuracy.map(fmt_f64).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
