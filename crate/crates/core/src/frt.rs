//! Fisher randomization tests that permute treatment within the RCT.

use std::fmt;
use std::str::FromStr;
use web_time::Instant;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{statistic, AnalysisConfig, Analyzer, GammaChoice};
use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::estimators::{Estimand, Method};
use crate::rng::{stream, tag};

/// Largest reference set [`frt_exact`] will enumerate.
pub const EXACT_BUDGET: u128 = 1_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefitPolicy {
    /// Every replicate reruns the whole procedure, including adaptive γ.
    #[default]
    Full,
    /// Replicates reuse the γ chosen on the observed data (approximate).
    FixedGamma,
}

impl fmt::Display for RefitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RefitPolicy::Full => "full",
            RefitPolicy::FixedGamma => "fixed-gamma",
        })
    }
}

impl FromStr for RefitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "full" => Ok(RefitPolicy::Full),
            "fixed-gamma" => Ok(RefitPolicy::FixedGamma),
            other => Err(Error::Config(format!("unknown refit policy '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrtSpec {
    pub method: Method,
    pub estimand: Estimand,
    pub reps: usize,
    /// Seeds the permutations. The statistic's own randomness (folds,
    /// bootstrap) comes from `analysis` and is the same for every replicate.
    pub seed: u64,
    pub refit: RefitPolicy,
    pub analysis: AnalysisConfig,
}

impl FrtSpec {
    pub fn new(method: Method, estimand: Estimand, reps: usize, seed: u64) -> Self {
        Self {
            method,
            estimand,
            reps,
            seed,
            refit: RefitPolicy::Full,
            analysis: AnalysisConfig::default().with_seed(seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrtResult {
    pub p: f64,
    pub observed_stat: f64,
    pub reps: usize,
    /// Replicates whose statistic could not be computed (counted as +∞).
    pub failures: usize,
    pub refit: RefitPolicy,
    /// Threshold reused by every replicate under [`RefitPolicy::FixedGamma`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_gamma: Option<f64>,
    #[serde(skip)]
    pub replicate_stats: Vec<f64>,
    #[serde(skip)]
    pub runtime_s: f64,
}

/// Uniformly random relabelling of the RCT units with the observed numbers
/// of treated and control units; EC labels are kept.
pub fn permute_assignment<R: Rng + ?Sized>(ds: &TrialDataset, rng: &mut R) -> Vec<u8> {
    let rct = ds.rct_ids();
    let mut labels: Vec<u8> = rct.iter().map(|&i| ds.a()[i]).collect();
    labels.shuffle(rng);
    let mut a = ds.a().to_vec();
    for (&i, l) in rct.iter().zip(labels) {
        a[i] = l;
    }
    a
}

/// T_b ≥ T_obs up to floating-point noise: a replicate that reproduces the
/// observed statistic through a different summation order still counts.
fn at_least(t: f64, observed: f64) -> bool {
    t >= observed - 1e-9 * observed.abs().max(1.0)
}

/// (#{T_b ≥ T_obs} + 1) / (B + 1).
pub fn monte_carlo_p(observed: f64, replicates: &[f64]) -> f64 {
    let count = replicates
        .iter()
        .filter(|&&t| at_least(t, observed))
        .count();
    (count + 1) as f64 / (replicates.len() + 1) as f64
}

/// Share of the reference distribution at least as extreme as `observed`.
pub fn exact_p(observed: f64, reference: &[f64]) -> f64 {
    reference.iter().filter(|&&t| at_least(t, observed)).count() as f64 / reference.len() as f64
}

/// Monte-Carlo randomization p-value for an arbitrary statistic.
pub fn frt_pvalue_with<F>(ds: &TrialDataset, reps: usize, seed: u64, stat: F) -> Result<FrtResult>
where
    F: Fn(&TrialDataset) -> Result<f64> + Sync,
{
    if reps == 0 {
        return Err(Error::Config(
            "at least one randomization replicate is required".into(),
        ));
    }
    let start = Instant::now();
    let observed = stat(ds)?;
    if observed.is_nan() {
        return Err(Error::InvalidDataset(
            "observed statistic is undefined".into(),
        ));
    }
    let replicate_stats: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|b| {
            let a = permute_assignment(ds, &mut stream(seed, &[tag::PERMUTATION, b]));
            match ds.with_assignment(a).and_then(|d| stat(&d)) {
                Ok(t) if !t.is_nan() => t,
                _ => f64::INFINITY,
            }
        })
        .collect();
    let failures = replicate_stats.iter().filter(|t| t.is_infinite()).count();
    Ok(FrtResult {
        p: monte_carlo_p(observed, &replicate_stats),
        observed_stat: observed,
        reps,
        failures,
        refit: RefitPolicy::Full,
        fixed_gamma: None,
        replicate_stats,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Statistic |τ̂| (|log τ̂| for ratios) of a method under a fixed config.
pub fn method_statistic(
    ds: &TrialDataset,
    method: Method,
    estimand: Estimand,
    cfg: &AnalysisConfig,
) -> Result<f64> {
    let fit = Analyzer::new(ds, cfg).fit(method)?;
    Ok(statistic(fit.pair.point(estimand)?, estimand))
}

pub fn frt_pvalue(ds: &TrialDataset, spec: &FrtSpec) -> Result<FrtResult> {
    spec.analysis.validate()?;
    let mut cfg = spec.analysis.clone();
    let mut fixed_gamma = None;
    if spec.refit == RefitPolicy::FixedGamma
        && spec.method.is_csb()
        && cfg.gamma == GammaChoice::Adaptive
    {
        let fit = Analyzer::new(ds, &cfg).fit(spec.method)?;
        let g = fit.gamma().expect("CSB fit has a threshold");
        cfg.gamma = GammaChoice::Fixed(g);
        fixed_gamma = Some(g);
    }
    let mut res = frt_pvalue_with(ds, spec.reps, spec.seed, |d| {
        method_statistic(d, spec.method, spec.estimand, &cfg)
    })?;
    res.refit = spec.refit;
    res.fixed_gamma = fixed_gamma;
    Ok(res)
}

/// Number of assignments with n₁ treated among n_R RCT units.
pub fn assignment_count(n_rct: usize, n_treated: usize) -> u128 {
    let k = n_treated.min(n_rct - n_treated) as u128;
    (0..k).fold(1u128, |acc, i| acc * (n_rct as u128 - i) / (i + 1))
}

/// Every RCT assignment with the observed arm sizes, in lexicographic order
/// of treated positions.
pub fn all_assignments(ds: &TrialDataset) -> Result<Vec<Vec<u8>>> {
    let rct = ds.rct_ids();
    let n1 = ds.n_treated();
    let count = assignment_count(rct.len(), n1);
    if count > EXACT_BUDGET {
        return Err(Error::BudgetExceeded(count));
    }
    Ok(rct
        .iter()
        .copied()
        .combinations(n1)
        .map(|treated| {
            let mut a = ds.a().to_vec();
            for &i in &rct {
                a[i] = 0;
            }
            for i in treated {
                a[i] = 1;
            }
            a
        })
        .collect())
}

/// Statistic at every assignment of the reference set (failures are +∞).
pub fn exact_reference<F>(ds: &TrialDataset, stat: F) -> Result<Vec<(Vec<u8>, f64)>>
where
    F: Fn(&TrialDataset) -> Result<f64> + Sync,
{
    let assignments = all_assignments(ds)?;
    Ok(assignments
        .into_par_iter()
        .map(|a| {
            let t = match ds.with_assignment(a.clone()).and_then(|d| stat(&d)) {
                Ok(t) if !t.is_nan() => t,
                _ => f64::INFINITY,
            };
            (a, t)
        })
        .collect())
}

/// Exact randomization p-value P_A(T ≥ T_obs), observed assignment included.
pub fn frt_exact<F>(ds: &TrialDataset, stat: F) -> Result<f64>
where
    F: Fn(&TrialDataset) -> Result<f64> + Sync,
{
    let observed = stat(ds)?;
    let reference: Vec<f64> = exact_reference(ds, stat)?
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    Ok(exact_p(observed, &reference))
}
