//! Simulation engine: hybrid-trial data-generating process with optional
//! model misspecification and hidden EC bias, plus a Monte-Carlo runner.
//!
//! Probabilities in the DGP are written as 1/(1+exp(η)) (note: no minus
//! sign), so positive slopes lower the probability.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{AnalysisConfig, Analyzer, GammaChoice};
use crate::data::{Covariates, TrialDataset};
use crate::error::{Error, Result};
use crate::estimators::{Estimand, Method};
use crate::frt::{frt_pvalue, FrtSpec, RefitPolicy};
use crate::nuisance::expit;
use crate::rng::{derive_seed, stream, tag, StreamRng};

/// Seed of the fixed Monte-Carlo samples used for calibration and truth.
pub const CALIBRATION_SEED: u64 = 0x00c0_ffee;
pub const CALIBRATION_DRAWS: usize = 100_000;
pub const TRUTH_DRAWS: usize = 2_000_000;
const COVARIATE_BOUND: f64 = 2.0;

/// 1/(1+exp(η)).
pub fn paper_probability(eta: f64) -> f64 {
    expit(-eta)
}

/// e^x + 10 sin(x) cos(x).
pub fn transform_covariate(x: f64) -> f64 {
    x.exp() + 10.0 * x.sin() * x.cos()
}

pub fn transform_covariates(x: &Covariates) -> Covariates {
    let values = x
        .as_slice()
        .iter()
        .map(|&v| transform_covariate(v))
        .collect();
    Covariates::new(values, x.ncols()).expect("same shape")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// x'slopes, on transformed covariates when `transformed`.
fn linear(x: &[f64], slopes: &[f64], transformed: bool) -> f64 {
    if transformed {
        x.iter()
            .zip(slopes)
            .map(|(&v, b)| b * transform_covariate(v))
            .sum()
    } else {
        dot(x, slopes)
    }
}

fn uniform_row<R: Rng + ?Sized>(rng: &mut R, p: usize) -> Vec<f64> {
    (0..p)
        .map(|_| rng.random_range(-COVARIATE_BOUND..COVARIATE_BOUND))
        .collect()
}

/// `draws` rows of U(-2, 2)^p from a seeded stream.
pub fn uniform_sample(p: usize, draws: usize, seed: u64, path: &[u64]) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, path);
    (0..draws).map(|_| uniform_row(&mut rng, p)).collect()
}

/// Intercept c with mean over `sample` of 1/(1+exp(c + x'slopes)) equal to
/// `target`: Newton steps safeguarded by bisection on [-50, 50].
pub fn calibrate_intercept_on(sample: &[Vec<f64>], slopes: &[f64], target: f64) -> f64 {
    let lin: Vec<f64> = sample.iter().map(|x| dot(x, slopes)).collect();
    let n = lin.len() as f64;
    // Mean probability is decreasing in c.
    let (mut lo, mut hi) = (-50.0f64, 50.0f64);
    let mut c = 0.0;
    for _ in 0..200 {
        let (mut f, mut df) = (0.0, 0.0);
        for l in &lin {
            let p = paper_probability(c + l);
            f += p;
            df -= p * (1.0 - p);
        }
        f = f / n - target;
        df /= n;
        if f > 0.0 {
            lo = c;
        } else {
            hi = c;
        }
        let newton = c - f / df;
        let next = if df < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - c).abs() <= 1e-14 * c.abs().max(1.0) || hi - lo < 1e-13 {
            return next;
        }
        c = next;
    }
    c
}

/// Calibrates over a fixed seeded sample of 10⁵ draws X ~ U(-2, 2)^p.
pub fn calibrate_intercept(slopes: &[f64], target: f64, seed: u64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Config(
            "calibration target must lie in (0, 1)".into(),
        ));
    }
    let sample = uniform_sample(slopes.len(), CALIBRATION_DRAWS, seed, &[tag::CALIBRATION]);
    Ok(calibrate_intercept_on(&sample, slopes, target))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    SmCorrectOmCorrect,
    SmCorrectOmWrong,
    SmWrongOmCorrect,
    SmWrongOmWrong,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::SmCorrectOmCorrect,
        Scenario::SmCorrectOmWrong,
        Scenario::SmWrongOmCorrect,
        Scenario::SmWrongOmWrong,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::SmCorrectOmCorrect => "sm-correct-om-correct",
            Scenario::SmCorrectOmWrong => "sm-correct-om-wrong",
            Scenario::SmWrongOmCorrect => "sm-wrong-om-correct",
            Scenario::SmWrongOmWrong => "sm-wrong-om-wrong",
        }
    }

    pub fn sm_correct(self) -> bool {
        matches!(
            self,
            Scenario::SmCorrectOmCorrect | Scenario::SmCorrectOmWrong
        )
    }

    pub fn om_correct(self) -> bool {
        matches!(
            self,
            Scenario::SmCorrectOmCorrect | Scenario::SmWrongOmCorrect
        )
    }

    pub fn from_flags(sm_correct: bool, om_correct: bool) -> Self {
        match (sm_correct, om_correct) {
            (true, true) => Scenario::SmCorrectOmCorrect,
            (true, false) => Scenario::SmCorrectOmWrong,
            (false, true) => Scenario::SmWrongOmCorrect,
            (false, false) => Scenario::SmWrongOmWrong,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub n_rct: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub n_ec: usize,
    pub p: usize,
    pub eta: Vec<f64>,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub target_p0: f64,
    pub target_p1: f64,
    /// Hidden-bias magnitude b; biased ECs get -b/20 in their linear predictor.
    pub bias: f64,
    pub rho: f64,
    pub sm_correct: bool,
    pub om_correct: bool,
    /// Y = Y(0) for every unit.
    pub null_hypothesis: bool,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_rct: 75,
            n_treated: 50,
            n_control: 25,
            n_ec: 150,
            p: 3,
            eta: vec![2.0; 3],
            beta0: vec![1.0; 3],
            beta1: vec![2.0; 3],
            target_p0: 0.3,
            target_p1: 0.4,
            bias: 0.0,
            rho: 0.5,
            sm_correct: true,
            om_correct: true,
            null_hypothesis: false,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn scenario(&self) -> Scenario {
        Scenario::from_flags(self.sm_correct, self.om_correct)
    }

    pub fn with_scenario(mut self, scenario: Scenario) -> Self {
        self.sm_correct = scenario.sm_correct();
        self.om_correct = scenario.om_correct();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n_treated + self.n_control != self.n_rct {
            return bad("n_treated + n_control must equal n_rct");
        }
        if self.n_treated == 0 || self.n_control == 0 {
            return bad("both RCT arms need units");
        }
        if self.eta.len() != self.p || self.beta0.len() != self.p || self.beta1.len() != self.p {
            return bad("slope vectors must have length p");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1]");
        }
        if self.bias < 0.0 || !self.bias.is_finite() {
            return bad("bias must be nonnegative");
        }
        for t in [self.target_p0, self.target_p1] {
            if !(t > 0.0 && t < 1.0) {
                return bad("marginal targets must lie in (0, 1)");
            }
        }
        Ok(())
    }
}

/// True arm means in the RCT population and the estimands they imply.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Truth {
    pub theta1: f64,
    pub theta0: f64,
}

impl Truth {
    pub fn value(&self, estimand: Estimand) -> f64 {
        match estimand {
            Estimand::Rd => self.theta1 - self.theta0,
            Estimand::Rr => self.theta1 / self.theta0,
            Estimand::Or => {
                (self.theta1 / (1.0 - self.theta1)) / (self.theta0 / (1.0 - self.theta0))
            }
        }
    }
}

/// Scenario with intercepts solved and the true estimands computed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibratedDgp {
    pub config: ScenarioConfig,
    pub eta0: f64,
    pub beta00: f64,
    pub beta10: f64,
    pub truth: Truth,
}

impl CalibratedDgp {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let raw = uniform_sample(
            config.p,
            CALIBRATION_DRAWS,
            CALIBRATION_SEED,
            &[tag::CALIBRATION],
        );
        let transformed: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| r.iter().map(|&v| transform_covariate(v)).collect())
            .collect();
        let pick = |correct: bool| if correct { &raw } else { &transformed };
        let share = config.n_rct as f64 / (config.n_rct + config.n_ec) as f64;
        let eta0 = calibrate_intercept_on(pick(config.sm_correct), &config.eta, share);
        let om = pick(config.om_correct);
        let beta00 = calibrate_intercept_on(om, &config.beta0, config.target_p0);
        let beta10 = calibrate_intercept_on(om, &config.beta1, config.target_p1);
        let mut dgp = Self {
            config: config.clone(),
            eta0,
            beta00,
            beta10,
            truth: Truth {
                theta1: f64::NAN,
                theta0: f64::NAN,
            },
        };
        dgp.truth = dgp.rct_population_truth(TRUTH_DRAWS);
        Ok(dgp)
    }

    /// π(x) = P(S=1 | X=x).
    pub fn sampling_probability(&self, x: &[f64]) -> f64 {
        let lin = linear(x, &self.config.eta, !self.config.sm_correct);
        paper_probability(self.eta0 + lin)
    }

    /// μₐ(x); `biased` applies the hidden-bias shift to μ₀.
    pub fn outcome_probability(&self, x: &[f64], arm: u8, biased: bool) -> f64 {
        let wrong = !self.config.om_correct;
        if arm == 1 {
            paper_probability(self.beta10 + linear(x, &self.config.beta1, wrong))
        } else {
            let shift = if biased { self.config.bias / 20.0 } else { 0.0 };
            paper_probability(self.beta00 + linear(x, &self.config.beta0, wrong) - shift)
        }
    }

    /// θₐ = E[μₐ(X) | S=1] by π-weighted Monte Carlo over X ~ U(-2,2)^p.
    /// Under the null flag both arms share θ₀.
    pub fn rct_population_truth(&self, draws: usize) -> Truth {
        const CHUNK: usize = 50_000;
        let chunks = draws.div_ceil(CHUNK);
        let sums: Vec<(f64, f64, f64)> = (0..chunks as u64)
            .into_par_iter()
            .map(|c| {
                let mut rng = stream(CALIBRATION_SEED, &[tag::TRUTH, c]);
                let len = CHUNK.min(draws - c as usize * CHUNK);
                let mut acc = (0.0, 0.0, 0.0);
                let mut x = vec![0.0; self.config.p];
                for _ in 0..len {
                    for v in x.iter_mut() {
                        *v = rng.random_range(-COVARIATE_BOUND..COVARIATE_BOUND);
                    }
                    let w = self.sampling_probability(&x);
                    acc.0 += w;
                    acc.1 += w * self.outcome_probability(&x, 1, false);
                    acc.2 += w * self.outcome_probability(&x, 0, false);
                }
                acc
            })
            .collect();
        let (w, m1, m0) = sums
            .iter()
            .fold((0.0, 0.0, 0.0), |a, s| (a.0 + s.0, a.1 + s.1, a.2 + s.2));
        let theta0 = m0 / w;
        let theta1 = if self.config.null_hypothesis {
            theta0
        } else {
            m1 / w
        };
        Truth { theta1, theta0 }
    }

    /// One dataset: RCT units first (in acceptance order), then ECs.
    pub fn generate(&self, rng: &mut StreamRng) -> Result<SimulatedData> {
        let cfg = &self.config;
        let budget = 10_000 * (cfg.n_rct + cfg.n_ec).max(1);
        let mut rct_x = Vec::with_capacity(cfg.n_rct);
        let mut ec_x = Vec::with_capacity(cfg.n_ec);
        let mut draws = 0;
        while rct_x.len() < cfg.n_rct || ec_x.len() < cfg.n_ec {
            draws += 1;
            if draws > budget {
                return Err(Error::RejectionBudget(budget));
            }
            let x = uniform_row(rng, cfg.p);
            let s = rng.random::<f64>() < self.sampling_probability(&x);
            if s && rct_x.len() < cfg.n_rct {
                rct_x.push(x);
            } else if !s && ec_x.len() < cfg.n_ec {
                ec_x.push(x);
            }
        }
        let mut arms: Vec<u8> = (0..cfg.n_rct)
            .map(|i| u8::from(i < cfg.n_treated))
            .collect();
        arms.shuffle(rng);
        let n_biased = (cfg.rho * cfg.n_ec as f64).floor() as usize;
        let mut biased = vec![false; cfg.n_ec];
        for j in index::sample(rng, cfg.n_ec, n_biased) {
            biased[j] = true;
        }

        let n = cfg.n_rct + cfg.n_ec;
        let mut y = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n * cfg.p);
        let units = rct_x
            .iter()
            .zip(&arms)
            .map(|(x, &arm)| (x, arm, 1u8, false))
            .chain(ec_x.iter().zip(&biased).map(|(x, &b)| (x, 0u8, 0u8, b)));
        for (x, arm, src, is_biased) in units {
            let y0 = u8::from(rng.random::<f64>() < self.outcome_probability(x, 0, is_biased));
            let y1 = u8::from(rng.random::<f64>() < self.outcome_probability(x, 1, false));
            let obs = if cfg.null_hypothesis || arm == 0 {
                y0
            } else {
                y1
            };
            y.push(obs);
            a.push(arm);
            s.push(src);
            values.extend_from_slice(x);
        }
        let dataset = TrialDataset::new(y, a, s, Covariates::new(values, cfg.p)?)?;
        let biased_ec_ids = (0..cfg.n_ec)
            .filter(|&j| biased[j])
            .map(|j| cfg.n_rct + j)
            .collect();
        Ok(SimulatedData {
            dataset,
            biased_ec_ids,
            truth: self.truth,
        })
    }

    /// Dataset of replicate `rep` of this scenario.
    pub fn replicate(&self, rep: u64) -> Result<SimulatedData> {
        let mut rng = stream(self.config.seed, &[tag::DATASET, rep]);
        self.generate(&mut rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedData {
    pub dataset: TrialDataset,
    pub biased_ec_ids: Vec<usize>,
    pub truth: Truth,
}

pub fn generate_dataset(config: &ScenarioConfig, rng: &mut StreamRng) -> Result<SimulatedData> {
    CalibratedDgp::new(config)?.generate(rng)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrtSettings {
    pub reps: usize,
    pub refit: RefitPolicy,
    /// Estimands that get a randomization test; all estimands when empty.
    pub estimands: Vec<Estimand>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationPlan {
    pub methods: Vec<Method>,
    pub estimands: Vec<Estimand>,
    pub reps: usize,
    /// Seed fields are replaced by per-replicate seeds.
    pub analysis: AnalysisConfig,
    pub frt: Option<FrtSettings>,
    /// Denominator of the relative MSE.
    pub reference: Method,
}

impl Default for SimulationPlan {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            estimands: vec![Estimand::Rd],
            reps: 1000,
            analysis: AnalysisConfig::default(),
            frt: None,
            reference: Method::NoBorrowUnadj,
        }
    }
}

/// Outcome of one (method, estimand) on one replicate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub method: Method,
    pub estimand: Estimand,
    /// `None` when the estimator failed on this replicate.
    pub point: Option<f64>,
    pub se: f64,
    pub covered: bool,
    pub reject_asym: bool,
    pub p_frt: Option<f64>,
    pub n_borrowed: usize,
    pub gamma: Option<f64>,
}

fn replicate_records(
    dgp: &CalibratedDgp,
    plan: &SimulationPlan,
    rep: usize,
) -> Result<Vec<ReplicateRecord>> {
    let rep_seed = derive_seed(dgp.config.seed, &[tag::DATASET, rep as u64]);
    let data = dgp.generate(&mut stream(rep_seed, &[tag::DATASET]))?;
    let ds = &data.dataset;
    let cfg = plan.analysis.clone().with_seed(rep_seed);
    let alpha = cfg.alpha;
    let mut analyzer = Analyzer::new(ds, &cfg);
    let mut out = Vec::with_capacity(plan.methods.len() * plan.estimands.len());
    for &method in &plan.methods {
        let fit = analyzer.fit(method);
        for &estimand in &plan.estimands {
            let truth = data.truth.value(estimand);
            let est = fit
                .as_ref()
                .ok()
                .and_then(|f| f.estimate(estimand, alpha).ok());
            let wants_frt = plan
                .frt
                .as_ref()
                .filter(|f| f.estimands.is_empty() || f.estimands.contains(&estimand));
            let p_frt = match wants_frt {
                Some(f) => {
                    let mut analysis = cfg.clone();
                    // The observed threshold is already known from the fit above.
                    if let (RefitPolicy::FixedGamma, Some(g)) =
                        (f.refit, fit.as_ref().ok().and_then(|f| f.gamma()))
                    {
                        analysis.gamma = GammaChoice::Fixed(g);
                    }
                    let spec = FrtSpec {
                        method,
                        estimand,
                        reps: f.reps,
                        seed: derive_seed(rep_seed, &[tag::PERMUTATION]),
                        refit: f.refit,
                        analysis,
                    };
                    // An observed statistic that cannot be computed gives no evidence.
                    Some(frt_pvalue(ds, &spec).map(|r| r.p).unwrap_or(1.0))
                }
                None => None,
            };
            out.push(match est {
                Some(e) => ReplicateRecord {
                    rep,
                    method,
                    estimand,
                    point: Some(e.point),
                    se: e.se,
                    covered: e.ci_low <= truth && truth <= e.ci_high,
                    reject_asym: e.p_asym < alpha,
                    p_frt,
                    n_borrowed: e.n_borrowed,
                    gamma: e.gamma,
                },
                None => ReplicateRecord {
                    rep,
                    method,
                    estimand,
                    point: None,
                    se: f64::NAN,
                    covered: false,
                    reject_asym: false,
                    p_frt,
                    n_borrowed: 0,
                    gamma: None,
                },
            });
        }
    }
    Ok(out)
}

/// Monte-Carlo summary of one (method, estimand) in one scenario.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricSummary {
    pub method: Method,
    pub estimand: Estimand,
    pub truth: f64,
    pub n_ok: usize,
    pub failures: usize,
    pub bias: f64,
    pub bias_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub mse: f64,
    pub mse_se: f64,
    pub relative_mse: f64,
    pub relative_mse_se: f64,
    pub coverage: f64,
    pub coverage_se: f64,
    pub reject_asym: f64,
    pub reject_asym_se: f64,
    pub reject_frt: Option<f64>,
    pub reject_frt_se: Option<f64>,
    pub mean_selected: f64,
    pub mean_selected_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioMetrics {
    pub scenario: Scenario,
    pub config: ScenarioConfig,
    pub truth: Truth,
    pub reps: usize,
    pub summaries: Vec<MetricSummary>,
    #[serde(skip)]
    pub records: Vec<ReplicateRecord>,
}

impl ScenarioMetrics {
    pub fn summary(&self, method: Method, estimand: Estimand) -> Option<&MetricSummary> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.estimand == estimand)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean and its Monte-Carlo standard error.
fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, (var / v.len() as f64).sqrt())
}

fn proportion(hits: usize, n: usize) -> (f64, f64) {
    let r = hits as f64 / n as f64;
    (r, (r * (1.0 - r) / n as f64).sqrt())
}

fn summarize(
    method: Method,
    estimand: Estimand,
    truth: f64,
    records: &[&ReplicateRecord],
    reference: &[&ReplicateRecord],
    alpha: f64,
) -> MetricSummary {
    let ok: Vec<&&ReplicateRecord> = records.iter().filter(|r| r.point.is_some()).collect();
    let n_ok = ok.len();
    let points: Vec<f64> = ok.iter().map(|r| r.point.unwrap()).collect();
    let center = mean(&points);
    let (_, bias_se) = mean_se(&points);
    let dev2: Vec<f64> = points.iter().map(|p| (p - center).powi(2)).collect();
    let variance = mean(&dev2);
    let variance_se = mean_se(&dev2).1;
    let err2: Vec<f64> = points.iter().map(|p| (p - truth).powi(2)).collect();
    let (mse, mse_se) = mean_se(&err2);

    // Relative MSE on replicates where both this method and the reference
    // produced an estimate.
    let mut pairs = Vec::new();
    for r in records {
        if let (Some(p), Some(q)) = (
            r.point,
            reference
                .iter()
                .find(|x| x.rep == r.rep)
                .and_then(|x| x.point),
        ) {
            pairs.push(((p - truth).powi(2), (q - truth).powi(2)));
        }
    }
    let (relative_mse, relative_mse_se) = if pairs.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let a = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
        let b = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
        let ratio = a / b;
        let resid: Vec<f64> = pairs.iter().map(|(x, y)| x - ratio * y).collect();
        (ratio, mean_se(&resid).1 / b)
    };

    let (coverage, coverage_se) = proportion(ok.iter().filter(|r| r.covered).count(), n_ok);
    let (reject_asym, reject_asym_se) =
        proportion(ok.iter().filter(|r| r.reject_asym).count(), n_ok);
    let frt: Vec<f64> = records.iter().filter_map(|r| r.p_frt).collect();
    let (reject_frt, reject_frt_se) = if frt.is_empty() {
        (None, None)
    } else {
        let (r, se) = proportion(frt.iter().filter(|&&p| p <= alpha).count(), frt.len());
        (Some(r), Some(se))
    };
    let selected: Vec<f64> = ok.iter().map(|r| r.n_borrowed as f64).collect();
    let (mean_selected, mean_selected_se) = mean_se(&selected);
    MetricSummary {
        method,
        estimand,
        truth,
        n_ok,
        failures: records.len() - n_ok,
        bias: center - truth,
        bias_se,
        variance,
        variance_se,
        mse,
        mse_se,
        relative_mse,
        relative_mse_se,
        coverage,
        coverage_se,
        reject_asym,
        reject_asym_se,
        reject_frt,
        reject_frt_se,
        mean_selected,
        mean_selected_se,
    }
}

pub fn run_scenario(config: &ScenarioConfig, plan: &SimulationPlan) -> Result<ScenarioMetrics> {
    if plan.methods.is_empty() || plan.estimands.is_empty() {
        return Err(Error::Config(
            "at least one method and estimand are required".into(),
        ));
    }
    plan.analysis.validate()?;
    let dgp = CalibratedDgp::new(config)?;
    let per_rep: Vec<Vec<ReplicateRecord>> = (0..plan.reps)
        .into_par_iter()
        .map(|r| replicate_records(&dgp, plan, r))
        .collect::<Result<_>>()?;
    let records: Vec<ReplicateRecord> = per_rep.into_iter().flatten().collect();
    let mut summaries = Vec::new();
    for &method in &plan.methods {
        for &estimand in &plan.estimands {
            let mine: Vec<&ReplicateRecord> = records
                .iter()
                .filter(|r| r.method == method && r.estimand == estimand)
                .collect();
            let reference: Vec<&ReplicateRecord> = records
                .iter()
                .filter(|r| r.method == plan.reference && r.estimand == estimand)
                .collect();
            summaries.push(summarize(
                method,
                estimand,
                dgp.truth.value(estimand),
                &mine,
                &reference,
                plan.analysis.alpha,
            ));
        }
    }
    Ok(ScenarioMetrics {
        scenario: config.scenario(),
        config: config.clone(),
        truth: dgp.truth,
        reps: plan.reps,
        summaries,
        records,
    })
}

/// Default hidden-bias sweep.
pub fn default_bias_grid() -> Vec<f64> {
    (0..=7).map(|k| 2.0 * k as f64).collect()
}

/// One scenario per bias magnitude, each with recalibrated truth.
pub fn bias_sweep(
    base: &ScenarioConfig,
    biases: &[f64],
    plan: &SimulationPlan,
) -> Result<Vec<ScenarioMetrics>> {
    biases
        .iter()
        .map(|&b| {
            let cfg = ScenarioConfig {
                bias: b,
                ..base.clone()
            };
            run_scenario(&cfg, plan)
        })
        .collect()
}

/// One scenario per (target_p0, target_p1) pair, for power curves.
pub fn effect_sweep(
    base: &ScenarioConfig,
    targets: &[(f64, f64)],
    plan: &SimulationPlan,
) -> Result<Vec<ScenarioMetrics>> {
    targets
        .iter()
        .map(|&(p0, p1)| {
            let cfg = ScenarioConfig {
                target_p0: p0,
                target_p1: p1,
                ..base.clone()
            };
            run_scenario(&cfg, plan)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_examples() {
        assert_eq!(transform_covariate(0.0), 1.0);
        let half_pi = std::f64::consts::FRAC_PI_2;
        assert!((transform_covariate(half_pi) - half_pi.exp()).abs() < 1e-12);
        assert!((transform_covariate(half_pi) - 4.8105).abs() < 1e-4);
        let quarter = std::f64::consts::FRAC_PI_4;
        assert!((transform_covariate(quarter) - (quarter.exp() + 5.0)).abs() < 1e-12);
        assert!((transform_covariate(quarter) - 7.1933).abs() < 1e-4);
    }

    #[test]
    fn probability_convention() {
        assert_eq!(paper_probability(0.0), 0.5);
        assert!((paper_probability((7.0f64 / 3.0).ln()) - 0.3).abs() < 1e-15);
        assert!(paper_probability(3.0) < 0.5);
    }

    #[test]
    fn calibration_closed_forms() {
        let c = calibrate_intercept(&[0.0, 0.0, 0.0], 0.3, 1).unwrap();
        assert!((c - (7.0f64 / 3.0).ln()).abs() < 1e-6);
        assert!((c - 0.8473).abs() < 1e-4);
        let c = calibrate_intercept(&[0.0; 3], 0.5, 1).unwrap();
        assert!(c.abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        let bad = ScenarioConfig {
            n_treated: 40,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(ScenarioConfig::default().validate().is_ok());
    }

    #[test]
    fn default_sizes() {
        let dgp = CalibratedDgp::new(&ScenarioConfig::default()).unwrap();
        let d = dgp.replicate(0).unwrap();
        let ds = &d.dataset;
        assert_eq!(
            (ds.n_rct(), ds.n_treated(), ds.n_rct_control(), ds.n_ec()),
            (75, 50, 25, 150)
        );
        assert_eq!(d.biased_ec_ids.len(), 75);
        assert!(d.biased_ec_ids.iter().all(|&j| !ds.is_rct(j)));
    }

    #[test]
    fn zero_bias_leaves_law_unchanged() {
        let dgp = CalibratedDgp::new(&ScenarioConfig::default()).unwrap();
        let x = [0.3, -0.2, 1.1];
        assert_eq!(
            dgp.outcome_probability(&x, 0, true),
            dgp.outcome_probability(&x, 0, false)
        );
        let biased = CalibratedDgp::new(&ScenarioConfig {
            bias: 6.0,
            ..Default::default()
        })
        .unwrap();
        assert!(biased.outcome_probability(&x, 0, true) > biased.outcome_probability(&x, 0, false));
    }

    #[test]
    fn reproducible() {
        let dgp = CalibratedDgp::new(&ScenarioConfig::default()).unwrap();
        assert_eq!(dgp.replicate(3).unwrap(), dgp.replicate(3).unwrap());
        assert_ne!(
            dgp.replicate(3).unwrap().dataset,
            dgp.replicate(4).unwrap().dataset
        );
    }

    #[test]
    fn null_truth() {
        let dgp = CalibratedDgp::new(&ScenarioConfig {
            null_hypothesis: true,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(dgp.truth.value(Estimand::Rd), 0.0);
        assert_eq!(dgp.truth.value(Estimand::Rr), 1.0);
        assert_eq!(dgp.truth.value(Estimand::Or), 1.0);
    }

    #[test]
    fn scenario_names() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
            assert_eq!(Scenario::from_flags(s.sm_correct(), s.om_correct()), s);
        }
    }

    #[test]
    fn metrics_identity_small_run() {
        let plan = SimulationPlan {
            methods: vec![Method::NoBorrowUnadj, Method::BorrowAipw],
            estimands: vec![Estimand::Rd, Estimand::Rr],
            reps: 20,
            ..Default::default()
        };
        let m = run_scenario(&ScenarioConfig::default(), &plan).unwrap();
        for s in &m.summaries {
            assert!((s.mse - (s.bias * s.bias + s.variance)).abs() < 1e-12 * s.mse.max(1.0));
            assert!((0.0..=1.0).contains(&s.coverage));
        }
        let r = m.summary(Method::NoBorrowUnadj, Estimand::Rd).unwrap();
        assert!((r.relative_mse - 1.0).abs() < 1e-12);
    }
}
