use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hctb_core::analysis::{AnalysisConfig, GammaChoice};
use hctb_core::conformal::SplitMode;
use hctb_core::data::ColumnSchema;
use hctb_core::estimators::{Estimand, SeMethod};
use hctb_core::frt::RefitPolicy;
use hctb_core::nuisance::VarianceRatioModel;

#[derive(Debug, Parser)]
#[command(
    name = "hctb",
    version,
    about = "Borrowing, conformal selection and randomization tests for hybrid controlled trials"
)]
pub struct Cli {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (results never depend on this).
    #[arg(long, global = true, env = "HCTB_THREADS")]
    pub threads: Option<usize>,
    /// Output file; stdout when absent. A `<out>.manifest.json` is written next to it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Include wall-clock runtimes in the primary output, not only the manifest.
    #[arg(long, global = true)]
    pub record_runtime: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate treatment effects on a trial CSV.
    Analyze(AnalyzeArgs),
    /// Monte-Carlo study on the built-in data-generating process.
    Simulate(SimulateArgs),
    /// Fisher randomization test for one method and estimand.
    Frt(FrtArgs),
    /// Nearest-neighbour matching of an external-control pool to an RCT.
    Match(MatchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analyze(_) => "analyze",
            Command::Simulate(_) => "simulate",
            Command::Frt(_) => "frt",
            Command::Match(_) => "match",
        }
    }
}

#[derive(Debug, Args)]
pub struct ColumnArgs {
    #[arg(long, default_value = "y")]
    pub col_y: String,
    #[arg(long, default_value = "a")]
    pub col_a: String,
    #[arg(long, default_value = "s")]
    pub col_s: String,
    /// Comma-separated covariate columns; every other column when absent.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
}

impl ColumnArgs {
    pub fn schema(&self) -> ColumnSchema {
        ColumnSchema {
            y: self.col_y.clone(),
            a: self.col_a.clone(),
            s: self.col_s.clone(),
            covariates: self.covariates.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    CvPlus,
    Single,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RModelArg {
    Plugin,
    One,
}

#[derive(Debug, Args)]
pub struct AnalysisArgs {
    /// `adaptive` or a fixed threshold in [0, 1].
    #[arg(long, default_value = "adaptive", value_parser = parse_gamma)]
    pub gamma: GammaChoice,
    #[arg(long, value_delimiter = ',')]
    pub gamma_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, value_enum, default_value = "cv-plus")]
    pub split: SplitArg,
    /// Bootstrap replicates for the adaptive threshold.
    #[arg(long, default_value_t = 200)]
    pub boot_reps: usize,
    #[arg(long, default_value = "eif")]
    pub se: SeMethod,
    #[arg(long, default_value_t = 1000)]
    pub se_reps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "plugin")]
    pub r_model: RModelArg,
    #[arg(long)]
    pub fit_propensity: bool,
}

fn parse_gamma(s: &str) -> Result<GammaChoice, String> {
    if s.eq_ignore_ascii_case("adaptive") {
        return Ok(GammaChoice::Adaptive);
    }
    s.parse::<f64>()
        .map(GammaChoice::Fixed)
        .map_err(|_| format!("expected `adaptive` or a number, got `{s}`"))
}

impl AnalysisArgs {
    pub fn config(&self, seed: u64) -> AnalysisConfig {
        let mut cfg = AnalysisConfig::default().with_seed(seed);
        cfg.gamma = self.gamma;
        if let Some(grid) = &self.gamma_grid {
            cfg.conformal.gamma_grid = grid.clone();
        }
        cfg.conformal.folds = self.folds;
        cfg.conformal.split = match self.split {
            SplitArg::CvPlus => SplitMode::CvPlus,
            SplitArg::Single => SplitMode::SingleSplit,
        };
        cfg.conformal.bootstrap_reps = self.boot_reps;
        cfg.se = self.se;
        cfg.bootstrap_se_reps = self.se_reps;
        cfg.alpha = self.alpha;
        cfg.nuisance.r_model = match self.r_model {
            RModelArg::Plugin => VarianceRatioModel::Plugin,
            RModelArg::One => VarianceRatioModel::One,
        };
        cfg.nuisance.fit_propensity = self.fit_propensity;
        cfg
    }
}

pub fn parse_estimands(s: &str) -> Result<Vec<Estimand>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part.eq_ignore_ascii_case("all") {
            out.extend(Estimand::ALL);
            continue;
        }
        let e: Estimand = part.parse().map_err(|e: hctb_core::Error| e.to_string())?;
        if !out.contains(&e) {
            out.push(e);
        }
    }
    if out.is_empty() {
        return Err("empty estimand list".into());
    }
    Ok(out)
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub columns: ColumnArgs,
    /// Comma-separated method names or `all`.
    #[arg(long, default_value = "all")]
    pub methods: String,
    /// Comma-separated estimands (rd, rr, or) or `all`.
    #[arg(long, alias = "estimands", default_value = "rd")]
    pub estimand: String,
    /// Randomization replicates per method and estimand; 0 skips the test.
    #[arg(long, default_value_t = 0)]
    pub frt_reps: usize,
    #[arg(long, default_value = "full")]
    pub refit: RefitPolicy,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario label or `all`.
    #[arg(long, default_value = "sm-correct-om-correct")]
    pub scenario: String,
    /// Hidden-bias magnitudes; one scenario per value.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub bias: Vec<f64>,
    /// Marginal (p0:p1) targets, e.g. `0.3:0.4,0.3:0.5`.
    #[arg(long, value_delimiter = ',', value_parser = parse_target, default_value = "0.3:0.4")]
    pub targets: Vec<(f64, f64)>,
    /// Outcomes follow Y = Y(0) for every unit.
    #[arg(long)]
    pub null: bool,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long, default_value_t = 50)]
    pub n_treated: usize,
    #[arg(long, default_value_t = 25)]
    pub n_control: usize,
    #[arg(long, default_value_t = 150)]
    pub n_ec: usize,
    /// Sampling-score slopes; a single value is repeated for every covariate.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub eta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub beta0: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub beta1: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub dim: usize,
    #[arg(long, default_value = "all")]
    pub methods: String,
    #[arg(long, alias = "estimand", default_value = "rd")]
    pub estimands: String,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    /// Randomization replicates per dataset; 0 skips the test.
    #[arg(long, default_value_t = 2000)]
    pub frt_reps: usize,
    #[arg(long, default_value = "full")]
    pub refit: RefitPolicy,
    /// Denominator method of the relative MSE.
    #[arg(long, default_value = "no-borrow-unadj")]
    pub reference: String,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
}

fn parse_target(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected p0:p1, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok((p(a)?, p(b)?))
}

#[derive(Debug, Args)]
pub struct FrtArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub columns: ColumnArgs,
    #[arg(long)]
    pub method: String,
    #[arg(long, default_value = "rd")]
    pub estimand: Estimand,
    #[arg(long, default_value_t = 2000)]
    pub reps: usize,
    #[arg(long, default_value = "full")]
    pub refit: RefitPolicy,
    /// Enumerate every assignment instead of sampling.
    #[arg(long)]
    pub exact: bool,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MatchOn {
    All,
    Controls,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// RCT table.
    #[arg(long)]
    pub rct: PathBuf,
    /// External-control pool.
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub ratio: usize,
    /// RCT units that receive matches.
    #[arg(long, value_enum, default_value = "all")]
    pub match_on: MatchOn,
    #[command(flatten)]
    pub columns: ColumnArgs,
}
