//! Method dispatch for one dataset: fits shared nuisances once and turns
//! them into effect estimates for any method and estimand.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::conformal::{
    adaptive_gamma_with, conformal_pvalues, csb_pair, sample_variance, select, AdaptiveGamma,
    ConformalConfig, ConformalPValues, ScoreKind, SelectionResult, MAX_REDRAWS,
};
use crate::data::{stratified_bootstrap_ids, TrialDataset};
use crate::error::{Error, Result};
use crate::estimators::{
    borrow_acw, borrow_aipw, borrow_cw, borrow_ipw, borrow_naive, borrow_om, no_borrow_covadj,
    no_borrow_unadj, EffectEstimate, Estimand, Method, SeMethod, ThetaPair,
};
use crate::nuisance::{
    calibration_odds, fit_pooled_propensity, CalibrationFit, NuisanceBundle, NuisanceConfig,
    RctFits,
};
use crate::rng::{stream, tag};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum GammaChoice {
    Adaptive,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalysisConfig {
    pub nuisance: NuisanceConfig,
    /// The score field is overridden by the CSB method being run.
    pub conformal: ConformalConfig,
    pub gamma: GammaChoice,
    pub alpha: f64,
    pub se: SeMethod,
    pub bootstrap_se_reps: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            nuisance: NuisanceConfig::default(),
            conformal: ConformalConfig::default(),
            gamma: GammaChoice::Adaptive,
            alpha: 0.05,
            se: SeMethod::Eif,
            bootstrap_se_reps: 1000,
        }
    }
}

impl AnalysisConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.conformal.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.conformal.validate()?;
        if let GammaChoice::Fixed(g) = self.gamma {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Config("gamma must lie in [0, 1]".into()));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// θ estimates of one method plus what was needed to get them.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodFit {
    pub method: Method,
    pub pair: ThetaPair,
    pub selection: Option<SelectionResult>,
    pub adaptive: Option<AdaptiveGamma>,
    pub warnings: Vec<String>,
}

impl MethodFit {
    pub fn gamma(&self) -> Option<f64> {
        self.selection.as_ref().map(|s| s.gamma)
    }

    pub fn estimate(&self, estimand: Estimand, alpha: f64) -> Result<EffectEstimate> {
        let mut est = EffectEstimate::from_pair(self.method, estimand, &self.pair, alpha)?;
        est.gamma = self.gamma();
        est.warnings.extend(self.warnings.iter().cloned());
        Ok(est)
    }
}

pub struct Analyzer<'a> {
    ds: &'a TrialDataset,
    cfg: &'a AnalysisConfig,
    rct: Option<RctFits>,
    full: Option<NuisanceBundle>,
    pooled_e: Option<Vec<f64>>,
    calibration: Option<CalibrationFit>,
    pvalues: HashMap<ScoreKind, ConformalPValues>,
}

impl<'a> Analyzer<'a> {
    pub fn new(ds: &'a TrialDataset, cfg: &'a AnalysisConfig) -> Self {
        Self {
            ds,
            cfg,
            rct: None,
            full: None,
            pooled_e: None,
            calibration: None,
            pvalues: HashMap::new(),
        }
    }

    pub fn rct_fits(&mut self) -> Result<&RctFits> {
        if self.rct.is_none() {
            self.rct = Some(RctFits::fit(self.ds, &self.cfg.nuisance)?);
        }
        Ok(self.rct.as_ref().unwrap())
    }

    /// Nuisances with every EC in the borrowing set.
    pub fn full_bundle(&mut self) -> Result<&NuisanceBundle> {
        if self.full.is_none() {
            if self.ds.n_ec() == 0 {
                return Err(Error::NoExternalControls);
            }
            let rct = self.rct_fits()?.clone();
            let ecs = self.ds.ec_ids();
            self.full = Some(NuisanceBundle::extend(
                self.ds,
                &rct,
                &ecs,
                &self.cfg.nuisance,
            )?);
        }
        Ok(self.full.as_ref().unwrap())
    }

    fn pooled_propensity(&mut self) -> Result<Vec<f64>> {
        if self.pooled_e.is_none() {
            self.pooled_e = Some(fit_pooled_propensity(self.ds, &self.cfg.nuisance)?);
        }
        Ok(self.pooled_e.clone().unwrap())
    }

    fn calibration(&mut self) -> Result<CalibrationFit> {
        if self.calibration.is_none() {
            let pi = self
                .full_bundle()?
                .values
                .borrow
                .as_ref()
                .map(|b| b.pi.clone())
                .ok_or(Error::NoExternalControls)?;
            let ecs = self.ds.ec_ids();
            self.calibration = Some(calibration_odds(self.ds, &ecs, &pi)?);
        }
        Ok(self.calibration.clone().unwrap())
    }

    pub fn conformal_pvalues(&mut self, score: ScoreKind) -> Result<&ConformalPValues> {
        if !self.pvalues.contains_key(&score) {
            let cfg = ConformalConfig {
                score,
                ..self.cfg.conformal.clone()
            };
            self.pvalues
                .insert(score, conformal_pvalues(self.ds, &cfg)?);
        }
        Ok(&self.pvalues[&score])
    }

    pub fn fit(&mut self, method: Method) -> Result<MethodFit> {
        let ds = self.ds;
        let mut warnings = Vec::new();
        let mut selection = None;
        let mut adaptive = None;
        let pair = match method {
            Method::NoBorrowUnadj => no_borrow_unadj(ds)?,
            Method::NoBorrowCovAdj => no_borrow_covadj(ds, &self.rct_fits()?.values),
            Method::BorrowAipw => borrow_aipw(ds, &self.full_bundle()?.values)?,
            Method::BorrowIpw => borrow_ipw(ds, &self.full_bundle()?.values)?,
            Method::BorrowOm => borrow_om(ds, &self.full_bundle()?.values)?,
            Method::BorrowNaive => {
                let e = self.pooled_propensity()?;
                borrow_naive(ds, &self.full_bundle()?.values, &e)?
            }
            Method::BorrowCw | Method::BorrowAcw => {
                let cal = self.calibration()?;
                if cal.fell_back {
                    warnings.push("calibration weighting infeasible; used logistic odds".into());
                }
                let values = &self.full_bundle()?.values;
                if method == Method::BorrowCw {
                    borrow_cw(ds, values, &cal.q)?
                } else {
                    borrow_acw(ds, values, &cal.q)?
                }
            }
            Method::CsbNn | Method::CsbLcNn | Method::CsbSar => {
                let score = ScoreKind::for_method(method).expect("CSB method");
                let rct = self.rct_fits()?.clone();
                let pv = self.conformal_pvalues(score)?.clone();
                if pv.empty_label_folds > 0 {
                    warnings.push(format!(
                        "{} EC/fold pairs had no same-outcome calibration unit",
                        pv.empty_label_folds
                    ));
                }
                let gamma = match self.cfg.gamma {
                    GammaChoice::Fixed(g) => g,
                    GammaChoice::Adaptive => {
                        let cfg = ConformalConfig {
                            score,
                            ..self.cfg.conformal.clone()
                        };
                        let a = adaptive_gamma_with(ds, &rct, &pv, &cfg, &self.cfg.nuisance)?;
                        let g = a.gamma;
                        adaptive = Some(a);
                        g
                    }
                };
                let sel = select(&pv, gamma);
                let pair = csb_pair(ds, &rct, &sel.selected, &self.cfg.nuisance)?;
                selection = Some(sel);
                pair
            }
        };
        if method != Method::NoBorrowUnadj {
            let fallbacks = if method.borrows() && !method.is_csb() {
                self.full.as_ref().map(NuisanceBundle::fallback_models)
            } else {
                self.rct.as_ref().map(RctFits::fallback_models)
            };
            let fallbacks = fallbacks.unwrap_or_default();
            if !fallbacks.is_empty() {
                warnings.push(format!("ridge fallback used for {}", fallbacks.join(", ")));
            }
        }
        Ok(MethodFit {
            method,
            pair,
            selection,
            adaptive,
            warnings,
        })
    }
}

/// Point estimate of one method, without inference.
pub fn point_estimate(
    ds: &TrialDataset,
    method: Method,
    estimand: Estimand,
    cfg: &AnalysisConfig,
) -> Result<f64> {
    let fit = Analyzer::new(ds, cfg).fit(method)?;
    fit.pair.point(estimand)
}

/// Two-sided test statistic: |τ̂| for RD, |log τ̂| for RR and OR.
pub fn statistic(point: f64, estimand: Estimand) -> f64 {
    if estimand.is_ratio() {
        point.ln().abs()
    } else {
        point.abs()
    }
}

/// Standard error from a bootstrap stratified by (S, A). CSB methods keep
/// the threshold chosen on the original data.
pub fn bootstrap_se(
    ds: &TrialDataset,
    fit: &MethodFit,
    estimand: Estimand,
    cfg: &AnalysisConfig,
    reps: usize,
) -> Result<f64> {
    let mut boot_cfg = cfg.clone();
    if let Some(g) = fit.gamma() {
        boot_cfg.gamma = GammaChoice::Fixed(g);
    }
    let seed = cfg.conformal.seed;
    let draws: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, &[tag::BOOTSTRAP_SE, k]);
            let mut last = Error::RejectionBudget(MAX_REDRAWS);
            for _ in 0..MAX_REDRAWS {
                let ids = stratified_bootstrap_ids(ds, &mut rng);
                match ds
                    .subset(&ids)
                    .and_then(|b| point_estimate(&b, fit.method, estimand, &boot_cfg))
                {
                    Ok(v) if v.is_finite() => return Ok(v),
                    Ok(_) => {}
                    Err(e) => last = e,
                }
            }
            Err(last)
        })
        .collect::<Result<_>>()?;
    Ok(sample_variance(draws.iter().copied()).sqrt())
}

/// Every (method, estimand) estimate, method-major.
pub fn analyze(
    ds: &TrialDataset,
    methods: &[Method],
    estimands: &[Estimand],
    cfg: &AnalysisConfig,
) -> Result<Vec<(MethodFit, Vec<EffectEstimate>)>> {
    cfg.validate()?;
    let mut analyzer = Analyzer::new(ds, cfg);
    let mut out = Vec::with_capacity(methods.len());
    for &m in methods {
        let fit = analyzer.fit(m)?;
        let mut rows = Vec::with_capacity(estimands.len());
        for &est in estimands {
            let mut row = fit.estimate(est, cfg.alpha)?;
            if cfg.se == SeMethod::Bootstrap {
                let se = bootstrap_se(ds, &fit, est, cfg, cfg.bootstrap_se_reps)?;
                row = row.with_se(se, SeMethod::Bootstrap, cfg.alpha);
            }
            rows.push(row);
        }
        out.push((fit, rows));
    }
    Ok(out)
}
