use hctb_core::conformal::{AdaptiveGamma, SelectionResult};
use hctb_core::data::CovariateBalance;
use hctb_core::estimators::{EffectEstimate, Estimand, Method};
use hctb_core::frt::FrtResult;
use hctb_core::sim::ScenarioMetrics;
use serde::Serialize;

use crate::CliError;

/// One row of the results table: method, point estimate, SE, CI,
/// asymptotic and FRT p-values, number and ESS of borrowed ECs, FRT runtime.
#[derive(Debug, Serialize)]
pub struct AnalyzeRow {
    pub method: &'static str,
    pub label: &'static str,
    pub estimand: Estimand,
    pub point_est: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value_asym: f64,
    pub p_value_frt: Option<f64>,
    pub num_ec: usize,
    pub ess_ec: f64,
    pub frt_runtime_s: Option<f64>,
    pub gamma: Option<f64>,
    pub se_method: &'static str,
    pub theta1: f64,
    pub theta0: f64,
}

pub fn analyze_row(est: &EffectEstimate, frt: Option<&FrtResult>, runtime: bool) -> AnalyzeRow {
    AnalyzeRow {
        method: est.method.name(),
        label: est.method.label(),
        estimand: est.estimand,
        point_est: est.point,
        se: est.se,
        ci_low: est.ci_low,
        ci_high: est.ci_high,
        p_value_asym: est.p_asym,
        p_value_frt: frt.map(|r| r.p),
        num_ec: est.n_borrowed,
        ess_ec: est.ess,
        frt_runtime_s: frt.filter(|_| runtime).map(|r| r.runtime_s),
        gamma: est.gamma,
        se_method: match est.se_method {
            hctb_core::estimators::SeMethod::Eif => "eif",
            hctb_core::estimators::SeMethod::Bootstrap => "bootstrap",
        },
        theta1: est.theta1,
        theta0: est.theta0,
    }
}

#[derive(Debug, Serialize)]
pub struct Selection {
    pub method: Method,
    pub score: &'static str,
    pub gamma: f64,
    pub ec_ids: Vec<usize>,
    pub p_values: Vec<f64>,
    pub selected: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<Vec<f64>>,
}

impl Selection {
    pub fn new(method: Method, sel: &SelectionResult, adaptive: Option<&AdaptiveGamma>) -> Self {
        Self {
            method,
            score: sel.score.name(),
            gamma: sel.gamma,
            ec_ids: sel.ec_ids.clone(),
            p_values: sel.p_values.clone(),
            selected: sel.selected.clone(),
            gamma_grid: adaptive.map(|a| a.grid.clone()),
            mse: adaptive.map(|a| a.mse.clone()),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub n_rct: usize,
    pub n_ec: usize,
    pub rows: Vec<AnalyzeRow>,
    pub selections: Vec<Selection>,
}

#[derive(Debug, Serialize)]
pub struct FrtReport {
    pub method: Method,
    pub estimand: Estimand,
    pub exact: bool,
    pub seed: u64,
    pub p: f64,
    pub observed_stat: f64,
    pub reps: usize,
    pub failures: usize,
    pub refit: String,
    pub fixed_gamma: Option<f64>,
    pub runtime_s: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct MatchReport {
    pub ratio: usize,
    pub n_rct: usize,
    pub n_pool: usize,
    pub selected_pool_rows: Vec<usize>,
    pub balance: Vec<CovariateBalance>,
}

/// Long-format simulation metric.
#[derive(Debug, Serialize)]
pub struct MetricRow {
    pub scenario: &'static str,
    pub bias: f64,
    pub target_p0: f64,
    pub target_p1: f64,
    pub null: bool,
    pub method: &'static str,
    pub estimand: Estimand,
    pub metric: &'static str,
    pub value: f64,
    pub mc_se: Option<f64>,
}

pub fn metric_rows(m: &ScenarioMetrics) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for s in &m.summaries {
        let mut push = |metric: &'static str, value: f64, mc_se: Option<f64>| {
            rows.push(MetricRow {
                scenario: m.scenario.name(),
                bias: m.config.bias,
                target_p0: m.config.target_p0,
                target_p1: m.config.target_p1,
                null: m.config.null_hypothesis,
                method: s.method.name(),
                estimand: s.estimand,
                metric,
                value,
                mc_se,
            })
        };
        push("truth", s.truth, None);
        push("bias", s.bias, Some(s.bias_se));
        push("variance", s.variance, Some(s.variance_se));
        push("mse", s.mse, Some(s.mse_se));
        push("relative_mse", s.relative_mse, Some(s.relative_mse_se));
        push("coverage", s.coverage, Some(s.coverage_se));
        push("reject_asym", s.reject_asym, Some(s.reject_asym_se));
        if let (Some(r), se) = (s.reject_frt, s.reject_frt_se) {
            push("reject_frt", r, se);
        }
        push("mean_selected", s.mean_selected, Some(s.mean_selected_se));
        push("failures", s.failures as f64, None);
    }
    rows
}

pub fn to_json<T: Serialize + ?Sized>(v: &T) -> Result<Vec<u8>, CliError> {
    let mut out = serde_json::to_vec_pretty(v)?;
    out.push(b'\n');
    Ok(out)
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}
