//! Browser bindings used by `www/index.html`. Every entry point takes and
//! returns plain strings so the page needs no extra glue.

use hctb_core::analysis::{analyze, AnalysisConfig, GammaChoice};
use hctb_core::data::{read_csv, write_csv, ColumnSchema, TrialDataset};
use hctb_core::estimators::{Estimand, Method};
use hctb_core::frt::{frt_pvalue, FrtSpec, RefitPolicy};
use hctb_core::sim::{CalibratedDgp, Scenario, ScenarioConfig};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn fail(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn parse_dataset(csv: &str) -> Result<TrialDataset, JsError> {
    read_csv(csv.as_bytes(), &ColumnSchema::default()).map_err(fail)
}

fn parse_gamma(gamma: &str) -> Result<GammaChoice, JsError> {
    if gamma.trim().eq_ignore_ascii_case("adaptive") {
        return Ok(GammaChoice::Adaptive);
    }
    gamma.trim().parse().map(GammaChoice::Fixed).map_err(|_| {
        fail(format!(
            "gamma must be `adaptive` or a number, got `{gamma}`"
        ))
    })
}

fn config(seed: u64, gamma: &str, boot_reps: usize) -> Result<AnalysisConfig, JsError> {
    let mut cfg = AnalysisConfig::default().with_seed(seed);
    cfg.gamma = parse_gamma(gamma)?;
    cfg.conformal.bootstrap_reps = boot_reps;
    cfg.validate().map_err(fail)?;
    Ok(cfg)
}

/// Draws one hybrid trial from the built-in simulation design and returns
/// it as CSV (columns y, a, s, x1..x3).
#[wasm_bindgen]
pub fn simulate_dataset(scenario: &str, bias: f64, seed: u64) -> Result<String, JsError> {
    let scenario: Scenario = scenario.parse().map_err(fail)?;
    let cfg = ScenarioConfig {
        bias,
        seed,
        ..Default::default()
    }
    .with_scenario(scenario);
    let sim = CalibratedDgp::new(&cfg)
        .and_then(|d| d.replicate(0))
        .map_err(fail)?;
    let mut out = Vec::new();
    write_csv(&sim.dataset, &mut out).map_err(fail)?;
    String::from_utf8(out).map_err(fail)
}

/// Runs the listed methods (comma-separated names or `all`) and returns a
/// JSON object with one row per method and estimand plus the conformal
/// selections of the CSB methods.
#[wasm_bindgen]
pub fn analyze_csv(
    csv: &str,
    methods: &str,
    estimand: &str,
    gamma: &str,
    boot_reps: usize,
    seed: u64,
) -> Result<String, JsError> {
    let ds = parse_dataset(csv)?;
    let methods = Method::parse_list(methods).map_err(fail)?;
    let estimand: Estimand = estimand.parse().map_err(fail)?;
    let cfg = config(seed, gamma, boot_reps)?;
    let fits = analyze(&ds, &methods, &[estimand], &cfg).map_err(fail)?;
    let mut rows = Vec::new();
    let mut selections = Vec::new();
    for (fit, estimates) in &fits {
        if let Some(sel) = &fit.selection {
            selections.push(json!({
                "method": fit.method.name(),
                "gamma": sel.gamma,
                "ec_ids": sel.ec_ids,
                "p_values": sel.p_values,
                "selected": sel.selected,
            }));
        }
        for est in estimates {
            rows.push(json!({
                "method": est.method.label(),
                "point_est": est.point,
                "se": est.se,
                "ci_low": est.ci_low,
                "ci_high": est.ci_high,
                "p_value_asym": est.p_asym,
                "num_ec": est.n_borrowed,
                "ess_ec": est.ess,
                "gamma": est.gamma,
            }));
        }
    }
    let report: Value = json!({
        "n_rct": ds.n_rct(),
        "n_ec": ds.n_ec(),
        "rows": rows,
        "selections": selections,
    });
    Ok(report.to_string())
}

/// Monte Carlo Fisher randomization test of the sharp null for one method;
/// the CSB threshold is held at its observed value across permutations.
#[wasm_bindgen]
pub fn randomization_test(
    csv: &str,
    method: &str,
    estimand: &str,
    reps: usize,
    gamma: &str,
    boot_reps: usize,
    seed: u64,
) -> Result<String, JsError> {
    let ds = parse_dataset(csv)?;
    let spec = FrtSpec {
        method: method.parse().map_err(fail)?,
        estimand: estimand.parse().map_err(fail)?,
        reps,
        seed,
        refit: RefitPolicy::FixedGamma,
        analysis: config(seed, gamma, boot_reps)?,
    };
    let res = frt_pvalue(&ds, &spec).map_err(fail)?;
    Ok(json!({
        "p": res.p,
        "observed_stat": res.observed_stat,
        "reps": res.reps,
        "failures": res.failures,
        "fixed_gamma": res.fixed_gamma,
    })
    .to_string())
}
