use std::collections::BTreeSet;
use std::time::Instant;

use hctb_core::analysis::analyze;
use hctb_core::data::{balance_summary, load_records, nn_match, write_records, TrialDataset};
use hctb_core::estimators::Method;
use hctb_core::frt::{frt_exact, frt_pvalue, method_statistic, FrtResult, FrtSpec};
use hctb_core::sim::{run_scenario, FrtSettings, Scenario, ScenarioConfig, SimulationPlan};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{
    parse_estimands, AnalyzeArgs, Format, FrtArgs, MatchArgs, MatchOn, SimulateArgs,
};
use crate::output::{
    analyze_row, metric_rows, to_csv, to_json, AnalyzeReport, FrtReport, MatchReport, Selection,
};
use crate::CliError;

/// Everything a command hands back to `main` for writing.
pub struct Outcome {
    pub body: Vec<u8>,
    /// Extra files as (suffix appended to `--out`, contents).
    pub extras: Vec<(String, Vec<u8>)>,
    pub config: Value,
    pub stages: Vec<(String, f64)>,
    pub warnings: Vec<String>,
}

pub struct Context {
    pub seed: u64,
    pub format: Option<Format>,
    pub record_runtime: bool,
}

fn timed<T>(stages: &mut Vec<(String, f64)>, name: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    stages.push((name.to_string(), start.elapsed().as_secs_f64()));
    out
}

fn config_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

pub fn analyze_cmd(args: &AnalyzeArgs, ctx: &Context) -> Result<Outcome, CliError> {
    let mut stages = Vec::new();
    let schema = args.columns.schema();
    let ds = timed(&mut stages, "load", || {
        load_records(&args.data, &schema).and_then(TrialDataset::from_records)
    })?;
    let methods = Method::parse_list(&args.methods)?;
    let estimands = parse_estimands(&args.estimand).map_err(CliError::Usage)?;
    let cfg = args.analysis.config(ctx.seed);
    cfg.validate()?;

    let fits = timed(&mut stages, "estimate", || {
        analyze(&ds, &methods, &estimands, &cfg)
    })?;
    let mut rows = Vec::new();
    let mut selections = Vec::new();
    let mut warnings = BTreeSet::new();
    let frt_start = Instant::now();
    for (fit, estimates) in &fits {
        if let Some(sel) = &fit.selection {
            selections.push(Selection::new(fit.method, sel, fit.adaptive.as_ref()));
        }
        for est in estimates {
            let frt = if args.frt_reps > 0 {
                let spec = FrtSpec {
                    method: fit.method,
                    estimand: est.estimand,
                    reps: args.frt_reps,
                    seed: ctx.seed,
                    refit: args.refit,
                    analysis: cfg.clone(),
                };
                let res = frt_pvalue(&ds, &spec)?;
                if res.failures > 0 {
                    warnings.insert(format!(
                        "{} {}: {} randomization replicates failed",
                        fit.method, est.estimand, res.failures
                    ));
                }
                Some(res)
            } else {
                None
            };
            warnings.extend(est.warnings.iter().map(|w| format!("{}: {w}", fit.method)));
            rows.push(analyze_row(est, frt.as_ref(), ctx.record_runtime));
        }
    }
    if args.frt_reps > 0 {
        stages.push(("frt".into(), frt_start.elapsed().as_secs_f64()));
    }

    let body = match ctx.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&AnalyzeReport {
            n_rct: ds.n_rct(),
            n_ec: ds.n_ec(),
            rows,
            selections,
        })?,
        Format::Csv => to_csv(&rows)?,
    };
    Ok(Outcome {
        body,
        extras: Vec::new(),
        config: json!({
            "data": args.data,
            "methods": methods,
            "estimands": estimands,
            "frt_reps": args.frt_reps,
            "refit": args.refit.to_string(),
            "analysis": config_value(&cfg),
        }),
        stages,
        warnings: warnings.into_iter().collect(),
    })
}

fn repeat_slopes(v: &[f64], p: usize) -> Vec<f64> {
    if v.len() == 1 {
        vec![v[0]; p]
    } else {
        v.to_vec()
    }
}

pub fn simulate_cmd(args: &SimulateArgs, ctx: &Context) -> Result<Outcome, CliError> {
    let scenarios: Vec<Scenario> = if args.scenario.eq_ignore_ascii_case("all") {
        Scenario::ALL.to_vec()
    } else {
        vec![args.scenario.parse()?]
    };
    let methods = Method::parse_list(&args.methods)?;
    let estimands = parse_estimands(&args.estimands).map_err(CliError::Usage)?;
    let plan = SimulationPlan {
        methods,
        estimands,
        reps: args.reps,
        analysis: args.analysis.config(ctx.seed),
        frt: (args.frt_reps > 0).then(|| FrtSettings {
            reps: args.frt_reps,
            refit: args.refit,
            estimands: Vec::new(),
        }),
        reference: args.reference.parse()?,
    };
    if !plan.methods.contains(&plan.reference) {
        return Err(CliError::Usage(format!(
            "reference method {} is not among the simulated methods",
            plan.reference
        )));
    }
    let base = ScenarioConfig {
        n_rct: args.n_treated + args.n_control,
        n_treated: args.n_treated,
        n_control: args.n_control,
        n_ec: args.n_ec,
        p: args.dim,
        eta: repeat_slopes(&args.eta, args.dim),
        beta0: repeat_slopes(&args.beta0, args.dim),
        beta1: repeat_slopes(&args.beta1, args.dim),
        rho: args.rho,
        null_hypothesis: args.null,
        seed: ctx.seed,
        ..Default::default()
    };

    let mut stages = Vec::new();
    let mut warnings = Vec::new();
    let mut rows = Vec::new();
    let mut configs = Vec::new();
    for &scenario in &scenarios {
        for &bias in &args.bias {
            for &(p0, p1) in &args.targets {
                let mut cfg = base.clone().with_scenario(scenario);
                cfg.bias = bias;
                cfg.target_p0 = p0;
                cfg.target_p1 = p1;
                let label = format!("{scenario} b={bias} p0={p0} p1={p1}");
                let metrics = timed(&mut stages, &label, || run_scenario(&cfg, &plan))?;
                for s in &metrics.summaries {
                    if s.failures > 0 {
                        warnings.push(format!(
                            "{label}: {} {}: {} of {} replicates failed",
                            s.method, s.estimand, s.failures, metrics.reps
                        ));
                    }
                }
                rows.extend(metric_rows(&metrics));
                configs.push(
                    json!({"scenario": config_value(&cfg), "truth": config_value(&metrics.truth)}),
                );
            }
        }
    }
    let body = match ctx.format.unwrap_or(Format::Csv) {
        Format::Csv => to_csv(&rows)?,
        Format::Json => to_json(&rows)?,
    };
    Ok(Outcome {
        body,
        extras: Vec::new(),
        config: json!({"plan": config_value(&plan), "cells": configs}),
        stages,
        warnings,
    })
}

pub fn frt_cmd(args: &FrtArgs, ctx: &Context) -> Result<Outcome, CliError> {
    let mut stages = Vec::new();
    let schema = args.columns.schema();
    let ds = timed(&mut stages, "load", || {
        load_records(&args.data, &schema).and_then(TrialDataset::from_records)
    })?;
    let method: Method = args.method.parse()?;
    let spec = FrtSpec {
        method,
        estimand: args.estimand,
        reps: args.reps,
        seed: ctx.seed,
        refit: args.refit,
        analysis: args.analysis.config(ctx.seed),
    };
    spec.analysis.validate()?;
    let start = Instant::now();
    let res: FrtResult = if args.exact {
        let cfg = spec.analysis.clone();
        let p = frt_exact(&ds, |d| method_statistic(d, method, args.estimand, &cfg))?;
        let observed = method_statistic(&ds, method, args.estimand, &cfg)?;
        FrtResult {
            p,
            observed_stat: observed,
            reps: hctb_core::frt::assignment_count(ds.n_rct(), ds.n_treated()) as usize,
            failures: 0,
            refit: args.refit,
            fixed_gamma: None,
            replicate_stats: Vec::new(),
            runtime_s: 0.0,
        }
    } else {
        frt_pvalue(&ds, &spec)?
    };
    let runtime = start.elapsed().as_secs_f64();
    stages.push(("frt".into(), runtime));
    let warnings = if res.failures > 0 {
        vec![format!("{} randomization replicates failed", res.failures)]
    } else {
        Vec::new()
    };
    let report = FrtReport {
        method,
        estimand: args.estimand,
        exact: args.exact,
        seed: ctx.seed,
        p: res.p,
        observed_stat: res.observed_stat,
        reps: res.reps,
        failures: res.failures,
        refit: res.refit.to_string(),
        fixed_gamma: res.fixed_gamma,
        runtime_s: ctx.record_runtime.then_some(runtime),
    };
    let body = match ctx.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&report)?,
        Format::Csv => to_csv(std::slice::from_ref(&report))?,
    };
    Ok(Outcome {
        body,
        extras: Vec::new(),
        config: json!({
            "data": args.data,
            "method": method,
            "estimand": args.estimand,
            "reps": args.reps,
            "exact": args.exact,
            "refit": args.refit.to_string(),
            "analysis": config_value(&spec.analysis),
        }),
        stages,
        warnings,
    })
}

pub fn match_cmd(args: &MatchArgs, ctx: &Context) -> Result<Outcome, CliError> {
    let mut stages = Vec::new();
    let schema = args.columns.schema();
    let rct = load_records(&args.rct, &schema)?;
    let pool = load_records(&args.pool, &schema)?;
    if rct.covariate_names != pool.covariate_names {
        return Err(hctb_core::Error::InvalidDataset(
            "RCT and pool have different covariate columns".into(),
        )
        .into());
    }
    let targets: Vec<usize> = (0..rct.len())
        .filter(|&i| matches!(args.match_on, MatchOn::All) || rct.a[i] == 0)
        .collect();
    let target_x = rct.x.select_rows(&targets);
    let selected = timed(&mut stages, "match", || {
        nn_match(&target_x, &pool.x, args.ratio)
    })?;
    let combined = rct.concat(&pool.select(&selected))?;
    // Validates the combined table as a hybrid trial.
    TrialDataset::from_records(combined.clone())?;
    let balance = balance_summary(&target_x, &pool.x, &selected, &rct.covariate_names);

    let mut table = Vec::new();
    write_records(&combined, &mut table)?;
    let (body, extras) = match ctx.format.unwrap_or(Format::Csv) {
        Format::Csv => (table, vec![(".balance.csv".to_string(), to_csv(&balance)?)]),
        Format::Json => (
            to_json(&MatchReport {
                ratio: args.ratio,
                n_rct: rct.len(),
                n_pool: pool.len(),
                selected_pool_rows: selected.clone(),
                balance,
            })?,
            vec![(".matched.csv".to_string(), table)],
        ),
    };
    Ok(Outcome {
        body,
        extras,
        config: json!({
            "rct": args.rct,
            "pool": args.pool,
            "ratio": args.ratio,
            "match_on": format!("{:?}", args.match_on).to_lowercase(),
        }),
        stages,
        warnings: Vec::new(),
    })
}
