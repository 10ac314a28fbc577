//! Run configuration: an optional JSON file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;
use stratfit::losses::{LossKind, LossModel, Metric};
use stratfit::model::{parse_grid, CvOptions, FitOptions, GridCell};
use stratfit::regularizers::RegularizerSpec;
use stratfit::{Regularizer, SolverConfig};

use crate::Failure;

#[derive(Args, Debug, Clone, Default)]
pub struct Flags {
    /// JSON run configuration; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Records as delimited text with z:, x: and y columns
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Graph description (factory, product or explicit JSON)
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub model_in: Option<PathBuf>,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Output file for tables and predictions (default: standard output)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the fit report as JSON here
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Validation records; cv then scores this set instead of folds
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// square, logistic, multinomial, exponential, poisson, bernoulli, gaussian, discrete
    #[arg(long)]
    pub loss: Option<String>,
    /// Classes, categories or Gaussian dimension for losses that need one
    #[arg(long)]
    pub classes: Option<usize>,
    /// Margin of bounded parameter domains
    #[arg(long)]
    pub eps: Option<f64>,
    /// Local regularizer: JSON object or shorthand like l1:0.1, sum_squares:1, elastic:0.1:1
    #[arg(long)]
    pub reg: Option<String>,
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[arg(long)]
    pub eps_abs: Option<f64>,
    #[arg(long)]
    pub eps_rel: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Worker threads (default: all cores; 1 runs serially)
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// anll, rmse or error
    #[arg(long)]
    pub metric: Option<String>,
    /// Grid: comma list of Laplacian scales, JSON text, or a file holding either
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Split folds within each node
    #[arg(long)]
    pub stratify_by_node: bool,
    /// Fit on raw features
    #[arg(long)]
    pub no_standardize: bool,
    /// More log output on standard error (-v progress, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    data: Option<PathBuf>,
    graph: Option<PathBuf>,
    model_in: Option<PathBuf>,
    model_out: Option<PathBuf>,
    out: Option<PathBuf>,
    report: Option<PathBuf>,
    validation: Option<PathBuf>,
    loss: Option<String>,
    classes: Option<usize>,
    eps: Option<f64>,
    reg: Option<RegularizerSpec>,
    solver: Option<SolverConfig>,
    seed: Option<u64>,
    metric: Option<Metric>,
    grid: Option<serde_json::Value>,
    folds: Option<usize>,
    stratify_by_node: Option<bool>,
    standardize: Option<bool>,
}

/// Fully merged settings of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub model_in: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub loss: Option<String>,
    pub classes: Option<usize>,
    pub eps: Option<f64>,
    pub reg: Regularizer,
    pub solver: SolverConfig,
    pub seed: u64,
    pub metric: Option<Metric>,
    pub grid: Option<Vec<GridCell>>,
    pub folds: usize,
    pub stratify_by_node: bool,
    pub standardize: bool,
}

fn rebase(base: &Path, p: Option<PathBuf>) -> Option<PathBuf> {
    p.map(|p| if p.is_relative() { base.join(p) } else { p })
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// `l1:0.1`, `sum_squares:2`, `l2_norm:1`, `elastic:0.1:1`, `zero`, or a JSON object.
pub fn parse_reg(text: &str) -> Result<Regularizer, Failure> {
    let t = text.trim();
    if t.starts_with('{') {
        return serde_json::from_str(t).map_err(|e| invalid(format!("--reg: {e}")));
    }
    let mut parts = t.split(':');
    let kind = parts.next().unwrap_or_default().to_string();
    let nums: Vec<f64> = parts
        .map(|p| p.parse::<f64>().map_err(|_| invalid(format!("--reg: '{p}' is not a number"))))
        .collect::<Result<_, _>>()?;
    let mut spec = RegularizerSpec {
        kind,
        gamma: None,
        l1: None,
        l2: None,
        set: None,
        skip_intercept: false,
        intercept_index: 0,
    };
    match (spec.kind.as_str(), nums.as_slice()) {
        ("zero", []) => {}
        ("elastic", [a, b]) => {
            spec.l1 = Some(*a);
            spec.l2 = Some(*b);
        }
        (_, [g]) => spec.gamma = Some(*g),
        _ => return Err(invalid(format!("--reg: cannot read '{t}'"))),
    }
    Regularizer::try_from(spec).map_err(|e| invalid(format!("--reg: {e}")))
}

fn grid_from_text(text: &str) -> Result<Vec<GridCell>, Failure> {
    let path = Path::new(text.trim());
    let owned;
    let body = if !text.trim().is_empty() && path.is_file() {
        owned = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        owned.as_str()
    } else {
        text
    };
    parse_grid(body).map_err(|e| invalid(format!("grid: {e}")))
}

impl RunConfig {
    pub fn resolve(flags: &Flags) -> Result<Self, Failure> {
        let file = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
                let mut fc: FileConfig = serde_json::from_str(&text)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
                // paths in a config file are relative to the file itself
                let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
                fc.data = rebase(&base, fc.data);
                fc.graph = rebase(&base, fc.graph);
                fc.model_in = rebase(&base, fc.model_in);
                fc.model_out = rebase(&base, fc.model_out);
                fc.out = rebase(&base, fc.out);
                fc.report = rebase(&base, fc.report);
                fc.validation = rebase(&base, fc.validation);
                fc
            }
            None => FileConfig::default(),
        };

        let reg = match (&flags.reg, file.reg) {
            (Some(text), _) => parse_reg(text)?,
            (None, Some(spec)) => Regularizer::try_from(spec).map_err(|e| invalid(format!("config reg: {e}")))?,
            (None, None) => Regularizer::zero(),
        };

        let mut solver = file.solver.unwrap_or_default();
        if let Some(v) = flags.lambda0 {
            solver.lambda0 = v;
        }
        if let Some(v) = flags.eps_abs {
            solver.eps_abs = v;
        }
        if let Some(v) = flags.eps_rel {
            solver.eps_rel = v;
        }
        if let Some(v) = flags.max_iter {
            solver.max_iter = v;
        }
        if let Some(v) = flags.threads {
            solver.threads = v;
        }
        if flags.verbose > 0 {
            solver.log_progress = true;
        }
        solver.validate().map_err(|e| invalid(e.to_string()))?;

        let metric = match &flags.metric {
            Some(m) => Some(m.parse::<Metric>().map_err(|e| invalid(e.to_string()))?),
            None => file.metric,
        };

        let grid = match (&flags.grid, file.grid) {
            (Some(text), _) => Some(grid_from_text(text)?),
            (None, Some(serde_json::Value::String(s))) => Some(grid_from_text(&s)?),
            (None, Some(v)) => Some(parse_grid(&v.to_string()).map_err(|e| invalid(format!("grid: {e}")))?),
            (None, None) => None,
        };

        if let Some(e) = flags.eps.or(file.eps) {
            if !(e > 0.0 && e < 0.5) {
                return Err(invalid("eps must lie in (0, 0.5)"));
            }
        }

        Ok(RunConfig {
            data: flags.data.clone().or(file.data),
            graph: flags.graph.clone().or(file.graph),
            model_in: flags.model_in.clone().or(file.model_in),
            model_out: flags.model_out.clone().or(file.model_out),
            out: flags.out.clone().or(file.out),
            report: flags.report.clone().or(file.report),
            validation: flags.validation.clone().or(file.validation),
            loss: flags.loss.clone().or(file.loss),
            classes: flags.classes.or(file.classes),
            eps: flags.eps.or(file.eps),
            reg,
            solver,
            seed: flags.seed.or(file.seed).unwrap_or(0),
            metric,
            grid,
            folds: flags.folds.or(file.folds).unwrap_or(5),
            stratify_by_node: flags.stratify_by_node || file.stratify_by_node.unwrap_or(false),
            standardize: !flags.no_standardize && file.standardize.unwrap_or(true),
        })
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
        field
            .as_deref()
            .ok_or_else(|| invalid(format!("missing --{flag} (or '{}' in the config file)", flag.replace('-', "_"))))
    }

    /// Loss for data with `n_features` feature and `outcome_dim` outcome columns.
    pub fn loss_model(&self, n_features: usize, outcome_dim: usize) -> Result<LossModel, Failure> {
        let name = self
            .loss
            .as_deref()
            .ok_or_else(|| invalid("missing --loss (or 'loss' in the config file)"))?;
        let classes = match (name, self.classes) {
            ("gaussian" | "gaussian-covariance", None) => Some(outcome_dim),
            (_, c) => c,
        };
        let kind = LossKind::from_name(name, classes).map_err(|e| invalid(e.to_string()))?;
        let n = if kind.uses_features() { n_features } else { 0 };
        let mut model = LossModel::new(kind, n).map_err(|e| invalid(e.to_string()))?;
        if let Some(eps) = self.eps {
            model = model.with_eps(eps).map_err(|e| invalid(e.to_string()))?;
        }
        Ok(model)
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            solver: self.solver.clone(),
            standardize: self.standardize,
        }
    }

    pub fn cv_options(&self) -> CvOptions {
        CvOptions {
            folds: self.folds,
            seed: self.seed,
            metric: self.metric,
            stratify_by_node: self.stratify_by_node,
            fit: self.fit_options(),
        }
    }
}
