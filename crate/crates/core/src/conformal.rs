//! Conformal p-values for external controls, EC selection, the selective
//! borrowing (CSB) estimator and bootstrap choice of the threshold γ.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{euclidean, stratified_bootstrap_ids, TrialDataset};
use crate::error::{Error, Result};
use crate::estimators::{borrow_aipw, no_borrow_covadj, Estimand, Method, ThetaPair};
use crate::nuisance::{
    fit_logistic_with, BorrowFits, FitOptions, NuisanceBundle, NuisanceConfig, RctFits,
};
use crate::rng::{stream, tag};

pub const SAR_VARIANCE_FLOOR: f64 = 1e-6;
pub const MAX_REDRAWS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Nn,
    LcNn,
    Sar,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Nn => "nn",
            ScoreKind::LcNn => "lcnn",
            ScoreKind::Sar => "sar",
        }
    }

    pub fn for_method(method: Method) -> Option<Self> {
        match method {
            Method::CsbNn => Some(ScoreKind::Nn),
            Method::CsbLcNn => Some(ScoreKind::LcNn),
            Method::CsbSar => Some(ScoreKind::Sar),
            _ => None,
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "").as_str() {
            "nn" => Ok(ScoreKind::Nn),
            "lcnn" => Ok(ScoreKind::LcNn),
            "sar" => Ok(ScoreKind::Sar),
            other => Err(Error::Config(format!("unknown conformal score '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Every fold serves once as calibration set; fold p-values are averaged.
    #[default]
    CvPlus,
    /// Only the first fold calibrates; p-values are exact split-conformal.
    SingleSplit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConformalConfig {
    pub score: ScoreKind,
    pub folds: usize,
    pub split: SplitMode,
    pub gamma_grid: Vec<f64>,
    pub bootstrap_reps: usize,
    pub seed: u64,
}

impl Default for ConformalConfig {
    fn default() -> Self {
        Self {
            score: ScoreKind::Nn,
            folds: 10,
            split: SplitMode::CvPlus,
            gamma_grid: default_gamma_grid(),
            bootstrap_reps: 200,
            seed: 0,
        }
    }
}

/// 0, 0.05, ..., 1.
pub fn default_gamma_grid() -> Vec<f64> {
    (0..=20).map(|k| k as f64 / 20.0).collect()
}

impl ConformalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        let g = &self.gamma_grid;
        if g.is_empty() || g.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("gamma grid must lie in [0, 1]".into()));
        }
        if g.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "gamma grid must be strictly increasing".into(),
            ));
        }
        if *g.last().unwrap() != 1.0 {
            return Err(Error::Config("gamma grid must contain 1".into()));
        }
        if self.bootstrap_reps < 2 && g.len() > 1 {
            return Err(Error::Config(
                "adaptive gamma needs at least 2 bootstrap reps".into(),
            ));
        }
        Ok(())
    }
}

/// Conformal p-value: (#{calibration scores >= s} + 1) / (m + 1). Ties count
/// against the test unit, which keeps the p-value valid for discrete scores.
pub fn conformal_pvalue(calibration: &[f64], s: f64) -> f64 {
    let count = calibration.iter().filter(|&&c| c >= s).count();
    (count + 1) as f64 / (calibration.len() + 1) as f64
}

/// Distance to the nearest reference point with the same outcome; +∞ when
/// no reference unit shares the outcome.
pub fn nn_score<'a>(x: &[f64], y: u8, reference: impl IntoIterator<Item = (&'a [f64], u8)>) -> f64 {
    reference
        .into_iter()
        .filter(|(_, yr)| *yr == y)
        .map(|(xr, _)| euclidean(x, xr))
        .fold(f64::INFINITY, f64::min)
}

/// Standardized absolute residual |y - m| / √max(m(1-m), floor).
pub fn sar_score(y: u8, m: f64) -> f64 {
    (f64::from(y) - m).abs() / (m * (1.0 - m)).max(SAR_VARIANCE_FLOOR).sqrt()
}

/// Fold label for each of `n` units: a seeded shuffle dealt round-robin.
pub fn assign_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[tag::FOLDS]));
    let mut label = vec![0; n];
    for (rank, &unit) in order.iter().enumerate() {
        label[unit] = rank % folds;
    }
    label
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConformalPValues {
    pub score: ScoreKind,
    /// EC unit ids, aligned with `p_values`.
    pub ec_ids: Vec<usize>,
    pub p_values: Vec<f64>,
    pub folds_used: usize,
    /// (EC, fold) pairs where LC-NN found no same-outcome calibration unit
    /// and the fold p-value defaulted to 1.
    pub empty_label_folds: usize,
}

pub fn conformal_pvalues(ds: &TrialDataset, cfg: &ConformalConfig) -> Result<ConformalPValues> {
    if cfg.folds < 2 {
        return Err(Error::Config("folds must be at least 2".into()));
    }
    let controls = ds.rct_control_ids();
    let ecs = ds.ec_ids();
    if controls.len() < cfg.folds {
        return Err(Error::Config(format!(
            "{} RCT controls cannot fill {} folds",
            controls.len(),
            cfg.folds
        )));
    }
    let fold = assign_folds(controls.len(), cfg.folds, cfg.seed);
    let active = match cfg.split {
        SplitMode::CvPlus => cfg.folds,
        SplitMode::SingleSplit => 1,
    };
    let y = ds.y();
    let yc: Vec<u8> = controls.iter().map(|&i| y[i]).collect();
    let ye: Vec<u8> = ecs.iter().map(|&j| y[j]).collect();

    // Score of every control (as calibration unit) and every EC against the
    // training part of each fold.
    let (ctrl_scores, ec_scores): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match cfg.score {
        ScoreKind::Nn | ScoreKind::LcNn => {
            let xs = ds.x().standardized();
            let d_cc: Vec<Vec<f64>> = controls
                .iter()
                .map(|&i| {
                    controls
                        .iter()
                        .map(|&k| euclidean(xs.row(i), xs.row(k)))
                        .collect()
                })
                .collect();
            let d_ec: Vec<Vec<f64>> = ecs
                .iter()
                .map(|&j| {
                    controls
                        .iter()
                        .map(|&k| euclidean(xs.row(j), xs.row(k)))
                        .collect()
                })
                .collect();
            let nearest = |dist: &[f64], label: u8, f: usize| {
                (0..controls.len())
                    .filter(|&k| fold[k] != f && yc[k] == label)
                    .map(|k| dist[k])
                    .fold(f64::INFINITY, f64::min)
            };
            (0..active)
                .map(|f| {
                    let c = (0..controls.len())
                        .map(|i| nearest(&d_cc[i], yc[i], f))
                        .collect();
                    let e = (0..ecs.len())
                        .map(|j| nearest(&d_ec[j], ye[j], f))
                        .collect();
                    (c, e)
                })
                .unzip()
        }
        ScoreKind::Sar => {
            let mut cs = Vec::with_capacity(active);
            let mut es = Vec::with_capacity(active);
            for f in 0..active {
                let train: Vec<usize> = (0..controls.len())
                    .filter(|&k| fold[k] != f)
                    .map(|k| controls[k])
                    .collect();
                let fit = fit_logistic_with(
                    &ds.x().select_rows(&train),
                    &ds.y_f64(&train),
                    None,
                    FitOptions {
                        allow_degenerate: true,
                    },
                )?;
                cs.push(
                    controls
                        .iter()
                        .map(|&i| sar_score(y[i], fit.predict(ds.x().row(i))))
                        .collect(),
                );
                es.push(
                    ecs.iter()
                        .map(|&j| sar_score(y[j], fit.predict(ds.x().row(j))))
                        .collect(),
                );
            }
            (cs, es)
        }
    };

    let mut p_values = vec![0.0; ecs.len()];
    let mut empty_label_folds = 0;
    for f in 0..active {
        let cal: Vec<usize> = (0..controls.len()).filter(|&k| fold[k] == f).collect();
        for (j, p) in p_values.iter_mut().enumerate() {
            let s = ec_scores[f][j];
            let pool: Vec<f64> = match cfg.score {
                ScoreKind::LcNn => cal
                    .iter()
                    .filter(|&&k| yc[k] == ye[j])
                    .map(|&k| ctrl_scores[f][k])
                    .collect(),
                _ => cal.iter().map(|&k| ctrl_scores[f][k]).collect(),
            };
            if pool.is_empty() {
                empty_label_folds += 1;
            }
            *p += conformal_pvalue(&pool, s);
        }
    }
    for p in &mut p_values {
        *p /= active as f64;
    }
    Ok(ConformalPValues {
        score: cfg.score,
        ec_ids: ecs,
        p_values,
        folds_used: active,
        empty_label_folds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionResult {
    pub score: ScoreKind,
    pub gamma: f64,
    pub ec_ids: Vec<usize>,
    pub p_values: Vec<f64>,
    /// {j : p_j > γ}, in EC id order.
    pub selected: Vec<usize>,
}

pub fn select_ids(ec_ids: &[usize], p_values: &[f64], gamma: f64) -> Vec<usize> {
    ec_ids
        .iter()
        .zip(p_values)
        .filter(|(_, &p)| p > gamma)
        .map(|(&j, _)| j)
        .collect()
}

pub fn select(pv: &ConformalPValues, gamma: f64) -> SelectionResult {
    SelectionResult {
        score: pv.score,
        gamma,
        ec_ids: pv.ec_ids.clone(),
        p_values: pv.p_values.clone(),
        selected: select_ids(&pv.ec_ids, &pv.p_values, gamma),
    }
}

/// Borrow AIPW restricted to `selected`; an empty selection gives the
/// RCT-only covariate-adjusted estimator.
pub fn csb_pair(
    ds: &TrialDataset,
    rct: &RctFits,
    selected: &[usize],
    cfg: &NuisanceConfig,
) -> Result<ThetaPair> {
    if selected.is_empty() {
        return Ok(no_borrow_covadj(ds, &rct.values));
    }
    let bundle = NuisanceBundle::extend(ds, rct, selected, cfg)?;
    borrow_aipw(ds, &bundle.values)
}

/// RD estimates along the γ grid. Selections are nested in γ, so the
/// selection size identifies the set and is used as a cache key.
pub fn tau_curve(
    ds: &TrialDataset,
    rct: &RctFits,
    pv: &ConformalPValues,
    grid: &[f64],
    cfg: &NuisanceConfig,
) -> Result<Vec<f64>> {
    let mut cache: HashMap<usize, f64> = HashMap::new();
    // Neighbouring selections differ by a few units, so each fit starts
    // from the previous one.
    let mut warm: Option<BorrowFits> = None;
    grid.iter()
        .map(|&g| {
            let sel = select_ids(&pv.ec_ids, &pv.p_values, g);
            if let Some(&v) = cache.get(&sel.len()) {
                return Ok(v);
            }
            let pair = if sel.is_empty() {
                no_borrow_covadj(ds, &rct.values)
            } else {
                let bundle = NuisanceBundle::extend_from(ds, rct, &sel, cfg, warm.as_ref())?;
                let pair = borrow_aipw(ds, &bundle.values)?;
                warm = bundle.borrow;
                pair
            };
            let v = pair.point(Estimand::Rd)?;
            cache.insert(sel.len(), v);
            Ok(v)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptiveGamma {
    pub gamma: f64,
    pub grid: Vec<f64>,
    pub mse: Vec<f64>,
    /// RD estimate at each γ on the original data.
    pub tau: Vec<f64>,
    /// Bootstrap draws that had to be redrawn.
    pub redraws: usize,
}

/// Estimated-MSE minimizing threshold. `ds`-level conformal p-values are
/// recomputed inside every bootstrap sample.
pub fn adaptive_gamma(
    ds: &TrialDataset,
    cfg: &ConformalConfig,
    nuisance: &NuisanceConfig,
) -> Result<AdaptiveGamma> {
    let rct = RctFits::fit(ds, nuisance)?;
    let pv = conformal_pvalues(ds, cfg)?;
    adaptive_gamma_with(ds, &rct, &pv, cfg, nuisance)
}

/// As [`adaptive_gamma`], reusing already computed RCT fits and p-values for
/// the original sample.
pub fn adaptive_gamma_with(
    ds: &TrialDataset,
    rct: &RctFits,
    pv: &ConformalPValues,
    cfg: &ConformalConfig,
    nuisance: &NuisanceConfig,
) -> Result<AdaptiveGamma> {
    cfg.validate()?;
    let grid = cfg.gamma_grid.clone();
    let tau = tau_curve(ds, rct, pv, &grid, nuisance)?;
    if grid.len() == 1 {
        return Ok(AdaptiveGamma {
            gamma: grid[0],
            grid,
            mse: vec![0.0],
            tau,
            redraws: 0,
        });
    }
    let boot: Vec<(Vec<f64>, usize)> = (0..cfg.bootstrap_reps)
        .into_par_iter()
        .map(|k| bootstrap_curve(ds, cfg, nuisance, &grid, k as u64))
        .collect::<Result<_>>()?;
    let redraws = boot.iter().map(|(_, r)| r).sum();
    let curves: Vec<&Vec<f64>> = boot.iter().map(|(c, _)| c).collect();
    let last = grid.len() - 1;
    let mse: Vec<f64> = (0..grid.len())
        .map(|g| {
            let var_g = sample_variance(curves.iter().map(|c| c[g]));
            if g == last {
                return var_g;
            }
            let var_diff = sample_variance(curves.iter().map(|c| c[g] - c[last]));
            (tau[g] - tau[last]).powi(2) - var_diff + var_g
        })
        .collect();
    let mut best = 0;
    for g in 1..grid.len() {
        if mse[g] <= mse[best] {
            best = g;
        }
    }
    Ok(AdaptiveGamma {
        gamma: grid[best],
        grid,
        mse,
        tau,
        redraws,
    })
}

fn bootstrap_curve(
    ds: &TrialDataset,
    cfg: &ConformalConfig,
    nuisance: &NuisanceConfig,
    grid: &[f64],
    k: u64,
) -> Result<(Vec<f64>, usize)> {
    let mut rng = stream(cfg.seed, &[tag::BOOTSTRAP, k]);
    let mut last_err = None;
    for attempt in 0..MAX_REDRAWS {
        let ids = stratified_bootstrap_ids(ds, &mut rng);
        let sub_cfg = ConformalConfig {
            seed: crate::rng::derive_seed(cfg.seed, &[tag::BOOTSTRAP, k, attempt as u64]),
            ..cfg.clone()
        };
        let result = ds.subset(&ids).and_then(|b| {
            let rct = RctFits::fit(&b, nuisance)?;
            let pv = conformal_pvalues(&b, &sub_cfg)?;
            tau_curve(&b, &rct, &pv, grid, nuisance)
        });
        match result {
            Ok(curve) if curve.iter().all(|v| v.is_finite()) => return Ok((curve, attempt)),
            Ok(_) => {
                last_err = Some(Error::InvalidDataset(
                    "non-finite bootstrap estimate".into(),
                ))
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or(Error::RejectionBudget(MAX_REDRAWS)))
}

/// Unbiased (K-1 divisor) sample variance.
pub fn sample_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}
