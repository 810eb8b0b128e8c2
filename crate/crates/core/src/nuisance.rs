//! Nuisance models: propensity e(x), sampling score π(x), outcome means and
//! the variance ratio r(x).
//!
//! Analyst-side fits use the standard logistic link, p = 1/(1+exp(-η)).
//! (The simulation engine writes its probabilities as 1/(1+exp(η)); see
//! [`crate::sim::paper_probability`].)

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::{Covariates, TrialDataset};
use crate::error::{Error, Result};

/// Fitted probabilities are kept inside [PROB_CLIP, 1 - PROB_CLIP].
pub const PROB_CLIP: f64 = 1e-6;
/// L2 penalty on slopes used when the unpenalized fit fails.
pub const RIDGE_PENALTY: f64 = 1e-4;
pub const MAX_ITERATIONS: usize = 100;
pub const RATIO_FLOOR: f64 = 0.1;
pub const RATIO_CAP: f64 = 10.0;

const STEP_TOL: f64 = 1e-10;
// A linear predictor this large means the unpenalized MLE is running off to
// infinity (separation).
const SEPARATION_ETA: f64 = 40.0;

pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn clip_probability(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogisticFit {
    /// Intercept followed by one slope per covariate.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub ridge_used: bool,
    /// Constant response; the fit is intercept-only at the clipped mean.
    pub degenerate: bool,
}

impl LogisticFit {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(row)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }

    /// Clipped fitted probability.
    pub fn predict(&self, row: &[f64]) -> f64 {
        clip_probability(expit(self.linear_predictor(row)))
    }

    pub fn predict_all(&self, x: &Covariates) -> Vec<f64> {
        x.rows().map(|r| self.predict(r)).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FitOptions {
    /// Return an intercept-only fit at the clipped mean instead of failing
    /// when the response is constant.
    pub allow_degenerate: bool,
}

pub fn fit_logistic(x: &Covariates, y: &[f64], weights: Option<&[f64]>) -> Result<LogisticFit> {
    fit_logistic_with(x, y, weights, FitOptions::default())
}

/// Weighted logistic regression by iteratively reweighted least squares.
/// Falls back to a ridge fit (penalty [`RIDGE_PENALTY`] on the slopes) when
/// the design is singular, the data are separated, or IRLS does not
/// converge within [`MAX_ITERATIONS`].
pub fn fit_logistic_with(
    x: &Covariates,
    y: &[f64],
    weights: Option<&[f64]>,
    opts: FitOptions,
) -> Result<LogisticFit> {
    fit_logistic_from(x, y, weights, opts, None)
}

/// As [`fit_logistic_with`], starting Newton iterations from `start` when it
/// has the right length (the ridge fallback always starts cold).
pub fn fit_logistic_from(
    x: &Covariates,
    y: &[f64],
    weights: Option<&[f64]>,
    opts: FitOptions,
    start: Option<&[f64]>,
) -> Result<LogisticFit> {
    let n = x.nrows();
    if y.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::InvalidDataset(
            "logistic fit: length mismatch".into(),
        ));
    }
    let w: Vec<f64> = match weights {
        Some(w) => {
            if w.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidDataset("weights must be nonnegative".into()));
            }
            w.to_vec()
        }
        None => vec![1.0; n],
    };
    let total: f64 = w.iter().sum();
    if n == 0 || total <= 0.0 {
        return Err(Error::EmptyTrainingSet("logistic regression"));
    }
    let ybar = y.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / total;
    let d = x.ncols() + 1;
    if ybar <= 0.0 || ybar >= 1.0 {
        if !opts.allow_degenerate {
            return Err(Error::DegenerateResponse);
        }
        let mut coefficients = vec![0.0; d];
        coefficients[0] = logit(clip_probability(ybar));
        return Ok(LogisticFit {
            coefficients,
            converged: true,
            iterations: 0,
            ridge_used: true,
            degenerate: true,
        });
    }
    let irls = Irls { x, y, w: &w };
    let cold = {
        let mut b = vec![0.0; d];
        b[0] = logit(ybar);
        b
    };
    let first = start
        .filter(|b| b.len() == d && b.iter().all(|v| v.is_finite()))
        .map_or_else(|| cold.clone(), <[f64]>::to_vec);
    if let Some(fit) = irls.run(first, 0.0) {
        if fit.converged {
            return Ok(fit);
        }
    }
    Ok(irls
        .run(cold, RIDGE_PENALTY)
        .unwrap_or_else(|| LogisticFit {
            // The ridge system is positive definite whenever some weight is
            // positive; this branch only guards against NaN input.
            coefficients: {
                let mut b = vec![0.0; d];
                b[0] = logit(ybar);
                b
            },
            converged: false,
            iterations: MAX_ITERATIONS,
            ridge_used: true,
            degenerate: false,
        }))
}

struct Irls<'a> {
    x: &'a Covariates,
    y: &'a [f64],
    w: &'a [f64],
}

impl Irls<'_> {
    fn eta(&self, beta: &[f64], i: usize) -> f64 {
        beta[0]
            + beta[1..]
                .iter()
                .zip(self.x.row(i))
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }

    fn penalized_loglik(&self, beta: &[f64], lambda: f64) -> f64 {
        let ll: f64 = (0..self.x.nrows())
            .map(|i| {
                let eta = self.eta(beta, i);
                let softplus = eta.max(0.0) + (-eta.abs()).exp().ln_1p();
                self.w[i] * (self.y[i] * eta - softplus)
            })
            .sum();
        ll - 0.5 * lambda * beta[1..].iter().map(|b| b * b).sum::<f64>()
    }

    /// Gradient and lower-triangle Hessian of the penalized log-likelihood
    /// at `beta`, written into the buffers; returns the largest |η|.
    fn accumulate(&self, beta: &[f64], lambda: f64, grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let d = beta.len();
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.iter_mut().for_each(|h| *h = 0.0);
        let mut max_eta: f64 = 0.0;
        let mut z = vec![1.0; d];
        for i in 0..self.x.nrows() {
            z[1..].copy_from_slice(self.x.row(i));
            let eta = self.eta(beta, i);
            max_eta = max_eta.max(eta.abs());
            let mu = expit(eta);
            let r = self.w[i] * (self.y[i] - mu);
            let v = self.w[i] * mu * (1.0 - mu);
            for a in 0..d {
                grad[a] += r * z[a];
                let va = v * z[a];
                for b in 0..=a {
                    hess[a * d + b] += va * z[b];
                }
            }
        }
        for a in 1..d {
            grad[a] -= lambda * beta[a];
            hess[a * d + a] += lambda;
        }
        max_eta
    }

    /// Damped Newton iterations. `None` signals a singular Hessian.
    ///
    /// A step is accepted when the objective is still increasing at the
    /// candidate (concavity then guarantees ascent), otherwise when the
    /// log-likelihood has not decreased; failing both, it is halved.
    fn run(&self, mut beta: Vec<f64>, lambda: f64) -> Option<LogisticFit> {
        let d = beta.len();
        let mut grad = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        let mut max_eta = self.accumulate(&beta, lambda, &mut grad, &mut hess);
        let converged = |beta: Vec<f64>, it: usize| LogisticFit {
            coefficients: beta,
            converged: true,
            iterations: it,
            ridge_used: lambda > 0.0,
            degenerate: false,
        };
        for it in 1..=MAX_ITERATIONS {
            if lambda == 0.0 && max_eta > SEPARATION_ETA {
                return Some(self.failed(beta, it));
            }
            for a in 0..d {
                for b in 0..a {
                    hess[b * d + a] = hess[a * d + b];
                }
            }
            let h = DMatrix::from_row_slice(d, d, &hess);
            let step = h.cholesky()?.solve(&DVector::from_column_slice(&grad));
            if step.iter().any(|s| !s.is_finite()) {
                return None;
            }
            let scale = 1.0 + beta.iter().map(|b| b.abs()).fold(0.0, f64::max);
            let size = step.iter().map(|s| s.abs()).fold(0.0, f64::max);
            if size <= STEP_TOL * scale {
                beta.iter_mut().zip(step.iter()).for_each(|(b, s)| *b += s);
                return Some(converged(beta, it));
            }
            let mut base_ll = None;
            let mut t = 1.0;
            loop {
                let cand: Vec<f64> = beta
                    .iter()
                    .zip(step.iter())
                    .map(|(b, s)| b + t * s)
                    .collect();
                let cand_eta = self.accumulate(&cand, lambda, &mut grad, &mut hess);
                let slope: f64 = grad.iter().zip(step.iter()).map(|(g, s)| g * s).sum();
                let accept = slope >= 0.0 || t < 1e-8 || {
                    let base = *base_ll.get_or_insert_with(|| self.penalized_loglik(&beta, lambda));
                    self.penalized_loglik(&cand, lambda) >= base - 1e-12 * base.abs().max(1.0)
                };
                if accept {
                    beta = cand;
                    max_eta = cand_eta;
                    break;
                }
                t *= 0.5;
            }
            if t * size <= STEP_TOL * scale {
                return Some(converged(beta, it));
            }
        }
        Some(self.failed_with(beta, MAX_ITERATIONS, lambda))
    }

    fn failed(&self, beta: Vec<f64>, it: usize) -> LogisticFit {
        self.failed_with(beta, it, 0.0)
    }

    fn failed_with(&self, beta: Vec<f64>, it: usize, lambda: f64) -> LogisticFit {
        LogisticFit {
            coefficients: beta,
            converged: false,
            iterations: it,
            ridge_used: lambda > 0.0,
            degenerate: false,
        }
    }
}

/// Variance ratio for a binary outcome, Var(Y|X,S=1)/Var(Y|X,S=0), from the
/// two conditional means, clipped to [RATIO_FLOOR, RATIO_CAP].
pub fn variance_ratio(mean_rct: f64, mean_ec: f64) -> f64 {
    let num = mean_rct * (1.0 - mean_rct);
    let den = mean_ec * (1.0 - mean_ec);
    if den <= 0.0 {
        return if num > 0.0 { RATIO_CAP } else { 1.0 };
    }
    (num / den).clamp(RATIO_FLOOR, RATIO_CAP)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceRatioModel {
    /// Bernoulli-variance plug-in from RCT-control and EC outcome fits.
    Plugin,
    /// r(x) = 1.
    One,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct NuisanceConfig {
    /// Fit e(x) by logistic regression instead of using n1/n_R.
    pub fit_propensity: bool,
    pub r_model: VarianceRatioModel,
    /// Constant responses in a training subset give an intercept-only fit
    /// at the clipped mean rather than an error.
    pub allow_degenerate: bool,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            fit_propensity: false,
            r_model: VarianceRatioModel::Plugin,
            allow_degenerate: true,
        }
    }
}

impl NuisanceConfig {
    fn fit_options(&self) -> FitOptions {
        FitOptions {
            allow_degenerate: self.allow_degenerate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Propensity {
    Known(f64),
    Fitted(LogisticFit),
}

/// Which units trained a nuisance model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub model: &'static str,
    pub training_subset: &'static str,
    pub n_train: usize,
}

/// Nuisance functions evaluated at every unit of the dataset they were
/// fitted on. This is what the estimators consume; tests may build it
/// directly from constants.
#[derive(Clone, Debug, PartialEq)]
pub struct NuisanceValues {
    pub e: Vec<f64>,
    pub mu1: Vec<f64>,
    pub mu0_r: Vec<f64>,
    pub borrow: Option<BorrowValues>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BorrowValues {
    /// True for external controls in the borrowing set.
    pub in_subset: Vec<bool>,
    pub pi: Vec<f64>,
    pub mu0_re: Vec<f64>,
    pub r: Vec<f64>,
}

impl NuisanceValues {
    pub fn is_rct_only(&self) -> bool {
        self.borrow.is_none()
    }
}

fn fit_on(
    ds: &TrialDataset,
    ids: &[usize],
    response: impl Fn(usize) -> f64,
    cfg: &NuisanceConfig,
) -> Result<LogisticFit> {
    fit_on_from(ds, ids, response, cfg, None)
}

fn fit_on_from(
    ds: &TrialDataset,
    ids: &[usize],
    response: impl Fn(usize) -> f64,
    cfg: &NuisanceConfig,
    start: Option<&LogisticFit>,
) -> Result<LogisticFit> {
    let x = ds.x().select_rows(ids);
    let y: Vec<f64> = ids.iter().map(|&i| response(i)).collect();
    let start = start
        .filter(|f| !f.degenerate)
        .map(|f| f.coefficients.as_slice());
    fit_logistic_from(&x, &y, None, cfg.fit_options(), start)
}

/// RCT-only nuisances: propensity and the arm-specific outcome means.
#[derive(Clone, Debug, PartialEq)]
pub struct RctFits {
    pub e: Propensity,
    pub mu1_r: LogisticFit,
    pub mu0_r: LogisticFit,
    pub values: NuisanceValues,
    pub provenance: Vec<Provenance>,
}

impl RctFits {
    pub fn fallback_models(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (name, fit) in [("mu1_R", &self.mu1_r), ("mu0_R", &self.mu0_r)] {
            if needs_flag(fit) {
                out.push(name);
            }
        }
        if let Propensity::Fitted(f) = &self.e {
            if needs_flag(f) {
                out.push("e");
            }
        }
        out
    }

    pub fn fit(ds: &TrialDataset, cfg: &NuisanceConfig) -> Result<Self> {
        let treated = ds.treated_ids();
        let controls = ds.rct_control_ids();
        if treated.is_empty() {
            return Err(Error::EmptyArm(1));
        }
        if controls.is_empty() {
            return Err(Error::EmptyArm(0));
        }
        let y = |i: usize| f64::from(ds.y()[i]);
        let mu1_r = fit_on(ds, &treated, y, cfg)?;
        let mu0_r = fit_on(ds, &controls, y, cfg)?;
        let n_r = ds.n_rct();
        let e = if cfg.fit_propensity {
            Propensity::Fitted(fit_on(ds, &ds.rct_ids(), |i| f64::from(ds.a()[i]), cfg)?)
        } else {
            Propensity::Known(treated.len() as f64 / n_r as f64)
        };
        let e_values = match &e {
            Propensity::Known(p) => vec![*p; ds.n()],
            Propensity::Fitted(fit) => fit.predict_all(ds.x()),
        };
        let mut provenance = vec![
            Provenance {
                model: "mu1_R",
                training_subset: "rct-treated",
                n_train: treated.len(),
            },
            Provenance {
                model: "mu0_R",
                training_subset: "rct-control",
                n_train: controls.len(),
            },
        ];
        if cfg.fit_propensity {
            provenance.push(Provenance {
                model: "e",
                training_subset: "rct",
                n_train: n_r,
            });
        }
        let values = NuisanceValues {
            e: e_values,
            mu1: mu1_r.predict_all(ds.x()),
            mu0_r: mu0_r.predict_all(ds.x()),
            borrow: None,
        };
        Ok(Self {
            e,
            mu1_r,
            mu0_r,
            values,
            provenance,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BorrowFits {
    pub ec_subset: Vec<usize>,
    pub pi: LogisticFit,
    pub mu0_re: LogisticFit,
    /// Outcome model on the borrowed ECs alone (feeds r(x)).
    pub mu0_e: LogisticFit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NuisanceBundle {
    pub rct: RctFits,
    pub borrow: Option<BorrowFits>,
    pub values: NuisanceValues,
    pub provenance: Vec<Provenance>,
    pub config: NuisanceConfig,
}

impl NuisanceBundle {
    /// Fits every nuisance model. An empty `ec_subset` yields an RCT-only
    /// bundle that the borrowing estimators refuse.
    pub fn fit(ds: &TrialDataset, ec_subset: &[usize], cfg: &NuisanceConfig) -> Result<Self> {
        let rct = RctFits::fit(ds, cfg)?;
        Self::extend(ds, &rct, ec_subset, cfg)
    }

    /// Adds the borrowing nuisances for `ec_subset` on top of existing
    /// RCT-only fits.
    pub fn extend(
        ds: &TrialDataset,
        rct: &RctFits,
        ec_subset: &[usize],
        cfg: &NuisanceConfig,
    ) -> Result<Self> {
        Self::extend_from(ds, rct, ec_subset, cfg, None)
    }

    /// As [`NuisanceBundle::extend`], warm-starting the borrowing fits from
    /// those of a nearby subset.
    pub fn extend_from(
        ds: &TrialDataset,
        rct: &RctFits,
        ec_subset: &[usize],
        cfg: &NuisanceConfig,
        warm: Option<&BorrowFits>,
    ) -> Result<Self> {
        if let Some(&bad) = ec_subset.iter().find(|&&i| i >= ds.n() || ds.is_rct(i)) {
            return Err(Error::InvalidDataset(format!(
                "unit {bad} is not an external control"
            )));
        }
        let mut values = rct.values.clone();
        let mut provenance = rct.provenance.clone();
        if ec_subset.is_empty() {
            return Ok(Self {
                rct: rct.clone(),
                borrow: None,
                values,
                provenance,
                config: *cfg,
            });
        }
        let y = |i: usize| f64::from(ds.y()[i]);
        let mut pooled_units = ds.rct_ids();
        pooled_units.extend_from_slice(ec_subset);
        let pi = fit_on_from(
            ds,
            &pooled_units,
            |i| f64::from(ds.s()[i]),
            cfg,
            warm.map(|w| &w.pi),
        )?;
        let mut pooled_controls = ds.rct_control_ids();
        pooled_controls.extend_from_slice(ec_subset);
        let mu0_re = fit_on_from(ds, &pooled_controls, y, cfg, warm.map(|w| &w.mu0_re))?;
        let mu0_e = fit_on_from(ds, ec_subset, y, cfg, warm.map(|w| &w.mu0_e))?;

        let mut in_subset = vec![false; ds.n()];
        for &i in ec_subset {
            in_subset[i] = true;
        }
        let r = match cfg.r_model {
            VarianceRatioModel::One => vec![1.0; ds.n()],
            VarianceRatioModel::Plugin => ds
                .x()
                .rows()
                .zip(&values.mu0_r)
                .map(|(row, &m_r)| variance_ratio(m_r, mu0_e.predict(row)))
                .collect(),
        };
        values.borrow = Some(BorrowValues {
            in_subset,
            pi: pi.predict_all(ds.x()),
            mu0_re: mu0_re.predict_all(ds.x()),
            r,
        });
        provenance.extend([
            Provenance {
                model: "pi",
                training_subset: "rct+borrowed-ec",
                n_train: pooled_units.len(),
            },
            Provenance {
                model: "mu0_R+E",
                training_subset: "rct-control+borrowed-ec",
                n_train: pooled_controls.len(),
            },
            Provenance {
                model: "mu0_E",
                training_subset: "borrowed-ec",
                n_train: ec_subset.len(),
            },
        ]);
        Ok(Self {
            rct: rct.clone(),
            borrow: Some(BorrowFits {
                ec_subset: ec_subset.to_vec(),
                pi,
                mu0_re,
                mu0_e,
            }),
            values,
            provenance,
            config: *cfg,
        })
    }

    pub fn is_rct_only(&self) -> bool {
        self.borrow.is_none()
    }

    /// Names of models that needed the ridge or degenerate fallback.
    pub fn fallback_models(&self) -> Vec<&'static str> {
        let mut out = self.rct.fallback_models();
        if let Some(b) = &self.borrow {
            for (name, fit) in [("pi", &b.pi), ("mu0_R+E", &b.mu0_re), ("mu0_E", &b.mu0_e)] {
                if needs_flag(fit) {
                    out.push(name);
                }
            }
        }
        out
    }
}

fn needs_flag(fit: &LogisticFit) -> bool {
    fit.ridge_used || !fit.converged
}

/// Propensity P(A=1|X) fitted on all units, ignoring the source indicator.
pub fn fit_pooled_propensity(ds: &TrialDataset, cfg: &NuisanceConfig) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..ds.n()).collect();
    Ok(fit_on(ds, &all, |i| f64::from(ds.a()[i]), cfg)?.predict_all(ds.x()))
}

/// Calibration odds q(x) = exp(λ'(1, x)) solving the balance equations
/// Σ_{j ∈ ECs} q(X_j)(1, X_j) = Σ_{i ∈ RCT} (1, X_i).
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationFit {
    pub q: Vec<f64>,
    pub converged: bool,
    /// The balance equations had no solution; q falls back to the logistic
    /// odds π/(1-π).
    pub fell_back: bool,
}

pub fn calibration_odds(
    ds: &TrialDataset,
    ec_subset: &[usize],
    fallback_pi: &[f64],
) -> Result<CalibrationFit> {
    if ec_subset.is_empty() {
        return Err(Error::NoExternalControls);
    }
    // Balancing standardized covariates is equivalent to balancing the raw
    // ones and better conditioned.
    let xs = ds.x().standardized();
    let d = ds.p() + 1;
    let g = |i: usize| {
        let mut v = Vec::with_capacity(d);
        v.push(1.0);
        v.extend_from_slice(xs.row(i));
        v
    };
    let rct = ds.rct_ids();
    let mut target = vec![0.0; d];
    for &i in &rct {
        for (t, v) in target.iter_mut().zip(g(i)) {
            *t += v;
        }
    }
    let ec_g: Vec<Vec<f64>> = ec_subset.iter().map(|&j| g(j)).collect();
    let dot = |l: &[f64], v: &[f64]| l.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let objective = |l: &[f64]| ec_g.iter().map(|v| dot(l, v).exp()).sum::<f64>() - dot(l, &target);

    let mut lambda = vec![0.0; d];
    lambda[0] = (rct.len() as f64 / ec_subset.len() as f64).ln();
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let mut grad: Vec<f64> = target.iter().map(|t| -t).collect();
        let mut hess = DMatrix::<f64>::zeros(d, d);
        for v in &ec_g {
            let w = dot(&lambda, v).exp();
            for a in 0..d {
                grad[a] += w * v[a];
                for b in 0..d {
                    hess[(a, b)] += w * v[a] * v[b];
                }
            }
        }
        if grad.iter().map(|g| g.abs()).fold(0.0, f64::max) < 1e-9 * rct.len() as f64 {
            converged = true;
            break;
        }
        let Some(chol) = hess.cholesky() else { break };
        let step = chol.solve(&DVector::from_column_slice(&grad));
        let base = objective(&lambda);
        let mut t = 1.0;
        let mut cand: Vec<f64>;
        loop {
            cand = lambda
                .iter()
                .zip(step.iter())
                .map(|(l, s)| l - t * s)
                .collect();
            let val = objective(&cand);
            if (val.is_finite() && val <= base) || t < 1e-10 {
                break;
            }
            t *= 0.5;
        }
        if t < 1e-10 {
            break;
        }
        lambda = cand;
    }
    if !converged || lambda.iter().any(|l| !l.is_finite()) {
        return Ok(CalibrationFit {
            q: fallback_pi.iter().map(|p| p / (1.0 - p)).collect(),
            converged: false,
            fell_back: true,
        });
    }
    Ok(CalibrationFit {
        q: (0..ds.n()).map(|i| dot(&lambda, &g(i)).exp()).collect(),
        converged: true,
        fell_back: false,
    })
}
