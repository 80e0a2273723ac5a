//! TOML run configuration.
//!
//! ```toml
//! [problem]
//! kind = "quadratic"          # toy | quadratic | logistic | multinomial
//! lambda = [1.0, 1.0]
//! noise = "additive"          # none | additive | lambda_multiplicative
//! noise_std = 0.1
//!
//! [variant]
//! names = ["batch", "stoch_const", "stoch_dec"]
//!
//! [budget]
//! epochs = 60
//! checkpoints = 20
//!
//! [seeds]
//! master = 0
//! replicates = 5
//!
//! [output]
//! dir = "out/quadratic"
//! ```
//!
//! Every section rejects unknown keys. Overrides use `section.key=value`
//! where `value` is a TOML literal (bare words are taken as strings).

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::variant::{StepParams, VariantName};
use crate::data::SamplingMode;
use crate::problems::RegMode;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Toy,
    Quadratic,
    Logistic,
    Multinomial,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    None,
    Additive,
    LambdaMultiplicative,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Idx,
    Libsvm,
    Csv,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum LabelMap {
    /// Use labels as stored.
    #[default]
    AsIs,
    /// Digits: odd → +1, even → −1.
    OddEven,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    pub lambda: Vec<f64>,
    // toy
    pub q: Option<f64>,
    pub shift: Option<Vec<f64>>,
    // toy and quadratic
    pub noise_std: Option<f64>,
    // quadratic
    pub a: Option<Vec<Vec<f64>>>,
    pub a_diag: Option<Vec<f64>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub w_target: Option<Vec<f64>>,
    #[serde(default)]
    pub noise: NoiseKind,
    // data-driven problems
    pub data_format: Option<DataFormat>,
    pub data_path: Option<PathBuf>,
    /// IDX labels file.
    pub labels_path: Option<PathBuf>,
    #[serde(default)]
    pub labels: LabelMap,
    pub n_train: Option<usize>,
    pub n_val: Option<usize>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub reg: RegMode,
    #[serde(default)]
    pub sampling: SamplingMode,
    pub n_classes: Option<usize>,
}

fn default_batch() -> usize {
    50
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct VariantSection {
    pub names: Vec<VariantName>,
    pub eta: f64,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub jvp_samples: usize,
}

impl Default for VariantSection {
    fn default() -> Self {
        Self {
            names: vec![VariantName::Batch, VariantName::StochConst, VariantName::StochDec],
            eta: 1.0,
            beta: None,
            gamma: None,
            jvp_samples: 1,
        }
    }
}

impl VariantSection {
    pub fn step_params(&self) -> StepParams {
        StepParams {
            eta: self.eta,
            beta: self.beta,
            gamma: self.gamma,
            jvp_samples: self.jvp_samples,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetSection {
    pub epochs: f64,
    /// Number of log-spaced checkpoints, ignored if `checkpoint_epochs` is set.
    pub checkpoints: usize,
    pub checkpoint_epochs: Option<Vec<f64>>,
}

impl Default for BudgetSection {
    fn default() -> Self {
        Self {
            epochs: 60.0,
            checkpoints: 20,
            checkpoint_epochs: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsSection {
    pub master: u64,
    pub replicates: usize,
}

impl Default for SeedsSection {
    fn default() -> Self {
        Self {
            master: 0,
            replicates: 5,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Unset means the caller's default (the CLI uses `SID_OUT_DIR`, then `out`).
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    #[default]
    PositiveOrthant,
    Box,
    Unconstrained,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OuterSection {
    pub steps: usize,
    pub lr: f64,
    #[serde(default)]
    pub warm_start: bool,
    #[serde(default)]
    pub domain: DomainKind,
    pub lambda_min: Option<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Take steps on `log λ` instead of `λ`.
    #[serde(default)]
    pub log_space: bool,
    /// `"oracle"` for the exact hypergradient, otherwise a variant name.
    #[serde(default = "default_estimator")]
    pub estimator: String,
    #[serde(default = "default_epochs_per_step")]
    pub epochs_per_step: f64,
}

fn default_estimator() -> String {
    "stoch_dec".into()
}

fn default_epochs_per_step() -> f64 {
    2.0
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub t: Vec<f64>,
    pub k: Vec<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    /// `‖w(λ)‖`, when there is no problem section to compute it from.
    pub w_norm: Option<f64>,
    /// Bound on `‖∇₁E‖`; defaults to `L_E`.
    pub grad1e_norm: Option<f64>,
}

/// Constants given directly; any listed in `estimated` are flagged as such.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSection {
    pub q: Option<f64>,
    pub l_e: Option<f64>,
    pub nu1: Option<f64>,
    pub nu2: Option<f64>,
    pub mu1: Option<f64>,
    pub mu2: Option<f64>,
    pub l_phi: Option<f64>,
    pub l_phi_tilde: Option<f64>,
    pub m2: Option<f64>,
    pub sigma1_lower: Option<f64>,
    pub sigma2_lower: Option<f64>,
    pub sigma_lam1: Option<f64>,
    pub sigma_lam2: Option<f64>,
    #[serde(default)]
    pub estimated: Vec<String>,
}

impl ConstantsSection {
    pub fn values(&self) -> [(&'static str, Option<f64>); 13] {
        [
            ("q", self.q),
            ("l_e", self.l_e),
            ("nu1", self.nu1),
            ("nu2", self.nu2),
            ("mu1", self.mu1),
            ("mu2", self.mu2),
            ("l_phi", self.l_phi),
            ("l_phi_tilde", self.l_phi_tilde),
            ("m2", self.m2),
            ("sigma1_lower", self.sigma1_lower),
            ("sigma2_lower", self.sigma2_lower),
            ("sigma_lam1", self.sigma_lam1),
            ("sigma_lam2", self.sigma_lam2),
        ]
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Option<ProblemSection>,
    #[serde(default)]
    pub variant: VariantSection,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub seeds: SeedsSection,
    #[serde(default)]
    pub output: OutputSection,
    pub outer: Option<OuterSection>,
    pub bounds: Option<BoundsSection>,
    pub constants: Option<ConstantsSection>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn parse_override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies one `section.key=value` override to a parsed document.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override key {path:?}")));
    }
    let mut table = doc;
    for k in &keys[..keys.len() - 1] {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key {path:?}: {k} is not a section")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: ExperimentConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, overrides, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.variant.jvp_samples == 0 {
            return Err(Error::Config("variant.jvp_samples must be ≥ 1".into()));
        }
        if !(self.budget.epochs > 0.0) {
            return Err(Error::Config("budget.epochs must be positive".into()));
        }
        if let Some(p) = &self.problem {
            if p.lambda.is_empty() {
                return Err(Error::Config("problem.lambda must be non-empty".into()));
            }
        }
        Ok(())
    }
}
