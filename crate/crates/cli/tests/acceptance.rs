//! Acceptance gate. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion plus a summary. With `--strict` (or
//! `HCTB_ACCEPTANCE_STRICT=1`) any failure makes the process exit nonzero.
//!
//! `cargo test --release --test acceptance -- 3 7` runs a subset.

use std::panic::{self, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use hctb_core::analysis::{AnalysisConfig, Analyzer, GammaChoice};
use hctb_core::conformal::{
    conformal_pvalue, conformal_pvalues, nn_score, sar_score, select_ids, ConformalConfig,
    ScoreKind, SplitMode,
};
use hctb_core::data::{ess, nn_match, read_csv, write_csv, ColumnSchema, Covariates, TrialDataset};
use hctb_core::error::Error;
use hctb_core::estimators::{plug_in, Estimand, Method, ThetaPair};
use hctb_core::frt::{
    exact_p, exact_reference, frt_exact, frt_pvalue_with, method_statistic, monte_carlo_p,
    RefitPolicy,
};
use hctb_core::nuisance::{fit_logistic, variance_ratio};
use hctb_core::sim::{
    calibrate_intercept, paper_probability, run_scenario, transform_covariate, CalibratedDgp,
    FrtSettings, Scenario, ScenarioConfig, SimulationPlan,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng as StdRng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// n_R = 6 (three treated), `n_ec` ECs, one covariate.
fn tiny_dataset(seed: u64, n_ec: usize, null: bool) -> TrialDataset {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = 6 + n_ec;
    let mut y = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let xi: f64 = rng.random_range(-1.0..1.0);
        let arm = u8::from(i < 3);
        let effect = if null { 0.0 } else { 0.3 * f64::from(arm) };
        let p = (0.35 + 0.2 * xi + effect).clamp(0.05, 0.95);
        y.push(u8::from(rng.random::<f64>() < p));
        a.push(arm);
        s.push(u8::from(i < 6));
        x.push(xi);
    }
    TrialDataset::new(y, a, s, Covariates::new(x, 1).unwrap()).unwrap()
}

fn tiny_config(seed: u64) -> AnalysisConfig {
    let mut cfg = AnalysisConfig::default().with_seed(seed);
    cfg.conformal.folds = 3;
    cfg.gamma = GammaChoice::Fixed(0.5);
    cfg
}

const TINY_METHODS: [Method; 3] = [Method::NoBorrowCovAdj, Method::BorrowAipw, Method::CsbNn];

fn criterion_1() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..3u64 {
        let ds = tiny_dataset(100 + seed, 6, false);
        let cfg = tiny_config(seed);
        for m in TINY_METHODS {
            let stat = |d: &TrialDataset| method_statistic(d, m, Estimand::Rd, &cfg);
            let mc = frt_pvalue_with(&ds, 50_000, 7 + seed, stat).map_err(|e| e.to_string())?;
            let exact = frt_exact(&ds, stat).map_err(|e| e.to_string())?;
            let diff = (mc.p - exact).abs();
            worst = worst.max(diff);
            ensure(
                diff <= 0.01,
                format!("dataset {seed}, {m}: MC {} vs exact {exact}", mc.p),
            )?;
        }
    }
    Ok(format!(
        "max |MC - exact| = {worst:.4} over 3 datasets x 3 statistics"
    ))
}

fn criterion_2() -> Check {
    let alphas = [0.05, 0.1, 0.25];
    let mut worst = [0.0f64; 3];
    for seed in 0..5u64 {
        let ds = tiny_dataset(200 + seed, 4, true);
        let mut adaptive = tiny_config(seed);
        adaptive.gamma = GammaChoice::Adaptive;
        adaptive.conformal.bootstrap_reps = 50;
        let stats: Vec<(String, AnalysisConfig, Method)> = TINY_METHODS
            .iter()
            .map(|&m| (m.to_string(), tiny_config(seed), m))
            .chain([("csb-nn adaptive".to_string(), adaptive, Method::CsbNn)])
            .collect();
        for (name, cfg, m) in &stats {
            let reference = exact_reference(&ds, |d| method_statistic(d, *m, Estimand::Rd, cfg))
                .map_err(|e| e.to_string())?;
            ensure(
                reference.len() == 20,
                "reference set must have 20 assignments",
            )?;
            let t: Vec<f64> = reference.iter().map(|(_, t)| *t).collect();
            let p: Vec<f64> = t.iter().map(|&obs| exact_p(obs, &t)).collect();
            for (k, &alpha) in alphas.iter().enumerate() {
                let frac = p.iter().filter(|&&v| v <= alpha).count() as f64 / 20.0;
                worst[k] = worst[k].max(frac);
                ensure(
                    frac <= alpha,
                    format!("dataset {seed}, {name}: P(p <= {alpha}) = {frac}"),
                )?;
            }
        }
    }
    Ok(format!(
        "max rejection fraction at alpha 0.05/0.1/0.25 = {}/{}/{} over 5 datasets x 4 statistics",
        worst[0], worst[1], worst[2]
    ))
}

fn criterion_3() -> Check {
    let bound = 0.05 + 2.0 * (0.05f64 * 0.95 / 500.0).sqrt();
    let plan = SimulationPlan {
        methods: vec![Method::NoBorrowCovAdj, Method::BorrowAipw, Method::CsbNn],
        estimands: vec![Estimand::Rd],
        reps: 500,
        frt: Some(FrtSettings {
            reps: 500,
            refit: RefitPolicy::FixedGamma,
            estimands: Vec::new(),
        }),
        reference: Method::NoBorrowCovAdj,
        ..Default::default()
    };
    let mut cells = Vec::new();
    let mut failed = Vec::new();
    for b in [0.0, 6.0] {
        let cfg = ScenarioConfig {
            bias: b,
            null_hypothesis: true,
            seed: 31,
            ..Default::default()
        }
        .with_scenario(Scenario::SmWrongOmWrong);
        let m = run_scenario(&cfg, &plan).map_err(|e| e.to_string())?;
        for s in &m.summaries {
            let r = s.reject_frt.ok_or("FRT was not run")?;
            cells.push(format!("b={b} {}={r:.3}", s.method));
            if r > bound {
                failed.push(format!("b={b} {} rejects {r:.3} > {bound:.4}", s.method));
            }
        }
    }
    ensure(failed.is_empty(), failed.join("; "))?;
    Ok(format!(
        "FRT rejection rates {} (bound {bound:.4})",
        cells.join(", ")
    ))
}

fn criterion_4() -> Check {
    let plan = SimulationPlan {
        methods: vec![Method::BorrowAipw, Method::BorrowAcw],
        estimands: vec![Estimand::Rd],
        reps: 1000,
        reference: Method::BorrowAipw,
        ..Default::default()
    };
    let mut cells = Vec::new();
    let mut failed = Vec::new();
    for sc in [Scenario::SmCorrectOmWrong, Scenario::SmWrongOmCorrect] {
        let cfg = ScenarioConfig {
            seed: 41,
            ..Default::default()
        }
        .with_scenario(sc);
        let m = run_scenario(&cfg, &plan).map_err(|e| e.to_string())?;
        for s in &m.summaries {
            let z = s.bias.abs() / s.bias_se;
            cells.push(format!(
                "{sc} {} bias={:.4} ({z:.2} MC-SE)",
                s.method, s.bias
            ));
            if z >= 2.0 {
                failed.push(format!("{sc} {}: |bias| = {z:.2} MC-SE", s.method));
            }
        }
    }
    ensure(failed.is_empty(), failed.join("; "))?;
    Ok(cells.join(", "))
}

fn criterion_5() -> Check {
    let plan = SimulationPlan {
        methods: vec![Method::CsbLcNn, Method::BorrowAipw],
        estimands: vec![Estimand::Rd],
        reps: 1000,
        reference: Method::BorrowAipw,
        ..Default::default()
    };
    let cfg = ScenarioConfig {
        bias: 6.0,
        rho: 0.5,
        seed: 51,
        ..Default::default()
    };
    let m = run_scenario(&cfg, &plan).map_err(|e| e.to_string())?;
    let csb = m.summary(Method::CsbLcNn, Estimand::Rd).unwrap().bias.abs();
    let aipw = m
        .summary(Method::BorrowAipw, Estimand::Rd)
        .unwrap()
        .bias
        .abs();
    let detail = format!("|bias| CSB LC-NN = {csb:.4}, Borrow AIPW = {aipw:.4}");
    ensure(csb < 0.035 && aipw > 0.05 && csb < aipw, detail.clone())?;
    Ok(detail)
}

fn criterion_6() -> Check {
    let cfg = ScenarioConfig {
        seed: 61,
        ..Default::default()
    };
    let methods = vec![Method::NoBorrowCovAdj, Method::BorrowAipw];
    let mse_plan = SimulationPlan {
        methods: methods.clone(),
        estimands: vec![Estimand::Rd],
        reps: 1000,
        reference: Method::NoBorrowCovAdj,
        ..Default::default()
    };
    let m = run_scenario(&cfg, &mse_plan).map_err(|e| e.to_string())?;
    let mse_aipw = m.summary(Method::BorrowAipw, Estimand::Rd).unwrap().mse;
    let mse_cov = m.summary(Method::NoBorrowCovAdj, Estimand::Rd).unwrap().mse;
    let power_plan = SimulationPlan {
        reps: 500,
        frt: Some(FrtSettings {
            reps: 500,
            refit: RefitPolicy::Full,
            estimands: Vec::new(),
        }),
        ..mse_plan
    };
    let p = run_scenario(&cfg, &power_plan).map_err(|e| e.to_string())?;
    let pow_aipw = p
        .summary(Method::BorrowAipw, Estimand::Rd)
        .unwrap()
        .reject_frt
        .unwrap();
    let pow_cov = p
        .summary(Method::NoBorrowCovAdj, Estimand::Rd)
        .unwrap()
        .reject_frt
        .unwrap();
    let detail = format!(
        "MSE AIPW {mse_aipw:.5} vs CovAdj {mse_cov:.5}; FRT power AIPW {pow_aipw:.3} vs CovAdj {pow_cov:.3}"
    );
    ensure(mse_aipw < mse_cov && pow_aipw > pow_cov, detail.clone())?;
    Ok(detail)
}

fn criterion_7() -> Check {
    // Exchangeable ECs: no sampling shift and no hidden bias.
    let cfg = ScenarioConfig {
        eta: vec![0.0; 3],
        seed: 71,
        ..Default::default()
    };
    let dgp = CalibratedDgp::new(&cfg).map_err(|e| e.to_string())?;
    let n = 2000;
    let scores = [ScoreKind::Nn, ScoreKind::LcNn, ScoreKind::Sar];
    let mut p: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(n)).collect();
    for r in 0..n as u64 {
        let ds = dgp.replicate(r).map_err(|e| e.to_string())?.dataset;
        for (k, &score) in scores.iter().enumerate() {
            let c = ConformalConfig {
                score,
                folds: 2,
                split: SplitMode::SingleSplit,
                seed: r,
                ..Default::default()
            };
            let pv = conformal_pvalues(&ds, &c).map_err(|e| e.to_string())?;
            // One EC per dataset keeps the p-values independent.
            p[k].push(pv.p_values[0]);
        }
    }
    let mut worst = f64::NEG_INFINITY;
    for (k, score) in scores.iter().enumerate() {
        for step in 1..=10 {
            let t = step as f64 * 0.05;
            let emp = p[k].iter().filter(|&&v| v <= t).count() as f64 / n as f64;
            let se = (t * (1.0 - t) / n as f64).sqrt();
            worst = worst.max((emp - t) / se);
            ensure(
                emp <= t + 3.0 * se,
                format!("{}: P(p <= {t:.2}) = {emp:.4}", score.name()),
            )?;
        }
    }
    Ok(format!(
        "max (P(p<=t) - t)/MC-SE = {worst:.2} over NN, LC-NN, SAR at t = 0.05..0.5"
    ))
}

fn pairs_identical(a: &ThetaPair, b: &ThetaPair) -> bool {
    let same = |x: &[f64], y: &[f64]| {
        x.len() == y.len() && x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits())
    };
    a.theta1.value.to_bits() == b.theta1.value.to_bits()
        && a.theta0.value.to_bits() == b.theta0.value.to_bits()
        && same(&a.theta1.per_unit, &b.theta1.per_unit)
        && same(&a.theta0.per_unit, &b.theta0.per_unit)
        && same(&a.theta0.frame, &b.theta0.frame)
}

fn criterion_8() -> Check {
    let mut compared = 0;
    for k in 0..50u64 {
        let sc = Scenario::ALL[(k % 4) as usize];
        let cfg = ScenarioConfig {
            bias: (k % 3) as f64 * 5.0,
            seed: 80 + k,
            ..Default::default()
        }
        .with_scenario(sc);
        let ds = CalibratedDgp::new(&cfg)
            .and_then(|d| d.replicate(k))
            .map_err(|e| e.to_string())?
            .dataset;
        let base = AnalysisConfig::default().with_seed(k);
        let mut az = Analyzer::new(&ds, &base);
        let covadj = az.fit(Method::NoBorrowCovAdj).map_err(|e| e.to_string())?;
        let aipw = az.fit(Method::BorrowAipw).map_err(|e| e.to_string())?;
        for csb in [Method::CsbNn, Method::CsbLcNn, Method::CsbSar] {
            for (gamma, target) in [(1.0, &covadj), (0.0, &aipw)] {
                let cfg = AnalysisConfig {
                    gamma: GammaChoice::Fixed(gamma),
                    ..base.clone()
                };
                let fit = Analyzer::new(&ds, &cfg)
                    .fit(csb)
                    .map_err(|e| e.to_string())?;
                ensure(
                    pairs_identical(&fit.pair, &target.pair),
                    format!(
                        "dataset {k}: {csb} at gamma {gamma} differs from {}",
                        target.method
                    ),
                )?;
                for e in Estimand::ALL {
                    let (a, b) = (fit.pair.point(e), target.pair.point(e));
                    if let (Ok(a), Ok(b)) = (a, b) {
                        ensure(
                            a.to_bits() == b.to_bits(),
                            format!("dataset {k}: {csb} {e}"),
                        )?;
                    }
                }
                compared += 1;
            }
        }
    }
    Ok(format!(
        "{compared} endpoint comparisons bit-identical on 50 datasets"
    ))
}

fn criterion_9() -> Check {
    let mut rng = StdRng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let t1: f64 = rng.random_range(0.001..0.999);
        let t0: f64 = rng.random_range(0.001..0.999);
        let rd = plug_in(t1, t0, Estimand::Rd).unwrap();
        let rr = plug_in(t1, t0, Estimand::Rr).unwrap();
        let or = plug_in(t1, t0, Estimand::Or).unwrap();
        let rel = (or - rr * (1.0 - t0) / (1.0 - t1)).abs() / or.abs().max(1.0);
        worst = worst.max(rel);
        ensure(
            rel <= 1e-12,
            format!("OR identity off by {rel:e} at ({t1}, {t0})"),
        )?;
        ensure(
            (rd > 0.0) == (rr > 1.0) && (rr > 1.0) == (or > 1.0),
            format!("sign disagreement at ({t1}, {t0})"),
        )?;
        let up: f64 = rng.random_range(0.0..(0.999 - t1));
        if up > 0.0 {
            let t1b = t1 + up;
            for e in Estimand::ALL {
                ensure(
                    plug_in(t1b, t0, e).unwrap() > plug_in(t1, t0, e).unwrap(),
                    format!("{e} not increasing in theta1 at ({t1}, {t0})"),
                )?;
            }
        }
        let up0: f64 = rng.random_range(0.0..(0.999 - t0));
        if up0 > 0.0 {
            let t0b = t0 + up0;
            for e in Estimand::ALL {
                ensure(
                    plug_in(t1, t0b, e).unwrap() < plug_in(t1, t0, e).unwrap(),
                    format!("{e} not decreasing in theta0 at ({t1}, {t0})"),
                )?;
            }
        }
    }
    Ok(format!(
        "1000 pairs; max relative OR identity error {worst:.1e}; monotone"
    ))
}

/// Plain Newton-Raphson for intercept + one slope, used as an oracle.
fn newton_oracle(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mut b0, mut b1) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let p = 1.0 / (1.0 + (-(b0 + b1 * xi)).exp());
            let w = p * (1.0 - p);
            g0 += yi - p;
            g1 += (yi - p) * xi;
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
        }
        let det = h00 * h11 - h01 * h01;
        let d0 = (h11 * g0 - h01 * g1) / det;
        let d1 = (h00 * g1 - h01 * g0) / det;
        b0 += d0;
        b1 += d1;
        if d0.abs().max(d1.abs()) < 1e-13 {
            break;
        }
    }
    (b0, b1)
}

fn loglik(x: &[f64], y: &[f64], b0: f64, b1: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let eta = b0 + b1 * xi;
            yi * eta - (1.0 + eta.exp()).ln()
        })
        .sum()
}

fn criterion_10() -> Check {
    // Logistic fits against a Newton oracle confirmed by a local grid.
    let mut rng = StdRng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = 200;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (c0, c1) = (rng.random_range(-1.0..1.0), rng.random_range(-1.5..1.5));
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-(c0 + c1 * xi)).exp())))
            .collect();
        let fit = fit_logistic(&Covariates::new(x.clone(), 1).unwrap(), &y, None)
            .map_err(|e| e.to_string())?;
        let (o0, o1) = newton_oracle(&x, &y);
        let best = loglik(&x, &y, o0, o1);
        for d0 in [-1e-3, 0.0, 1e-3] {
            for d1 in [-1e-3, 0.0, 1e-3] {
                ensure(
                    loglik(&x, &y, o0 + d0, o1 + d1) <= best + 1e-12,
                    "oracle is not a maximum",
                )?;
            }
        }
        let err = (fit.coefficients[0] - o0)
            .abs()
            .max((fit.coefficients[1] - o1).abs());
        worst = worst.max(err);
        ensure(err < 1e-4, format!("logistic fit off by {err:e}"))?;
    }

    // Intercept calibration: closed forms and a brute-force integral.
    let c = calibrate_intercept(&[0.0; 3], 0.3, 1).map_err(|e| e.to_string())?;
    ensure(
        (c - (7.0f64 / 3.0).ln()).abs() < 1e-6,
        format!("slopes 0, target 0.3: {c}"),
    )?;
    let c = calibrate_intercept(&[0.0; 3], 0.5, 1).map_err(|e| e.to_string())?;
    ensure(c.abs() < 1e-6, format!("slopes 0, target 0.5: {c}"))?;
    let c = calibrate_intercept(&[1.0; 3], 0.3, 1).map_err(|e| e.to_string())?;
    let mut mc_rng = StdRng::seed_from_u64(1010);
    let draws = 1_000_000;
    let mean = (0..draws)
        .map(|_| {
            let s: f64 = (0..3).map(|_| mc_rng.random_range(-2.0..2.0)).sum();
            paper_probability(c + s)
        })
        .sum::<f64>()
        / draws as f64;
    ensure((mean - 0.3).abs() < 5e-3, format!("MC integral {mean}"))?;

    // Hand examples.
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    ensure(ess(&[1.0; 4]).unwrap() == 4.0, "ess equal weights")?;
    ensure(
        ess(&[2.0, 0.0, 0.0, 0.0]).unwrap() == 1.0,
        "ess single weight",
    )?;
    ensure(close(ess(&[1.0, 3.0]).unwrap(), 1.6), "ess {1,3}")?;
    let rct = Covariates::new(vec![0.0], 1).unwrap();
    let pool = Covariates::new(vec![5.0, 1.0, -3.0], 1).unwrap();
    ensure(
        nn_match(&rct, &pool, 1).unwrap() == vec![1],
        "nn_match ratio 1",
    )?;
    let mut two = nn_match(&rct, &pool, 2).unwrap();
    two.sort_unstable();
    ensure(two == vec![1, 2], "nn_match ratio 2")?;
    ensure(
        matches!(nn_match(&rct, &pool, 4), Err(Error::PoolExhausted { .. })),
        "nn_match pool exhausted",
    )?;
    let schema = ColumnSchema::default();
    let ds = read_csv(
        "y,a,s,x1\n1,1,1,0.2\n0,0,1,-0.1\n1,0,0,0.0\n".as_bytes(),
        &schema,
    )
    .map_err(|e| e.to_string())?;
    ensure(ds.n_rct() == 2 && ds.n_ec() == 1, "csv parse sizes")?;
    ensure(
        matches!(
            read_csv("y,a,s,x1\n1,1,1,0\n0,0,1,1\n0,1,0,2\n".as_bytes(), &schema),
            Err(Error::TreatedExternalControl(_))
        ),
        "treated EC rejected",
    )?;
    let imputed = read_csv("y,a,s,x1\n1,1,1,1\n0,0,1,3\n1,0,0,NA\n".as_bytes(), &schema)
        .map_err(|e| e.to_string())?;
    ensure(imputed.x().row(2)[0] == 2.0, "median imputation")?;
    let one = Covariates::intercept_only(4);
    let f = fit_logistic(&one, &[0.0, 1.0, 0.0, 1.0], None).unwrap();
    ensure(
        f.intercept().abs() < 1e-10 && close(f.predict(&[]), 0.5),
        "intercept-only 0.5",
    )?;
    let f = fit_logistic(&one, &[1.0, 1.0, 1.0, 0.0], None).unwrap();
    ensure(
        (f.intercept() - 3f64.ln()).abs() < 1e-8,
        "intercept-only 0.75",
    )?;
    ensure(
        matches!(
            fit_logistic(&one, &[1.0; 4], None),
            Err(Error::DegenerateResponse)
        ),
        "degenerate response",
    )?;
    ensure(variance_ratio(0.3, 0.3) == 1.0, "variance ratio identity")?;
    ensure(
        close(variance_ratio(0.5, 0.9), 0.25 / 0.09),
        "variance ratio hand value",
    )?;
    ensure(variance_ratio(0.5, 0.999) == 10.0, "variance ratio cap")?;
    ensure(
        close(plug_in(0.4, 0.3, Estimand::Rd).unwrap(), 0.1),
        "RD plug-in",
    )?;
    ensure(
        close(plug_in(0.4, 0.3, Estimand::Rr).unwrap(), 4.0 / 3.0),
        "RR plug-in",
    )?;
    ensure(
        close(plug_in(0.4, 0.3, Estimand::Or).unwrap(), 14.0 / 9.0),
        "OR plug-in",
    )?;
    ensure(
        nn_score(&[0.0], 1, [(&[1.0][..], 1u8), (&[-2.0][..], 1u8)]) == 1.0,
        "NN score",
    )?;
    ensure(
        nn_score(&[0.0], 1, [(&[1.0][..], 0u8)]).is_infinite(),
        "NN sentinel",
    )?;
    ensure(
        nn_score(&[0.0, 0.0], 1, [(&[3.0, 4.0][..], 1u8)]) == 5.0,
        "NN 3-4-5",
    )?;
    ensure(
        sar_score(1, 0.5) == 1.0 && close(sar_score(0, 0.8), 2.0),
        "SAR scores",
    )?;
    ensure(
        conformal_pvalue(&[1.0, 2.0, 3.0], 2.5) == 0.5,
        "conformal p 0.5",
    )?;
    ensure(
        conformal_pvalue(&[1.0, 2.0, 3.0], 0.0) == 1.0,
        "conformal p 1",
    )?;
    ensure(
        conformal_pvalue(&[1.0, 2.0, 3.0], 10.0) == 0.25,
        "conformal p 1/4",
    )?;
    ensure(
        select_ids(&[1, 2, 3], &[0.1, 0.5, 0.9], 0.3) == vec![2, 3],
        "selection",
    )?;
    ensure(
        monte_carlo_p(0.3, &[0.1, 0.2, 0.3, 0.5]) == 0.6,
        "FRT hand count",
    )?;
    ensure(transform_covariate(0.0) == 1.0, "transform at 0")?;
    ensure(
        (transform_covariate(std::f64::consts::FRAC_PI_4) - 7.1933).abs() < 1e-4,
        "transform at pi/4",
    )?;
    Ok(format!(
        "logistic max error {worst:.1e}; calibration closed forms and MC integral {mean:.4}; hand examples exact"
    ))
}

fn hctb(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hctb"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!(
            "hctb {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ),
    )?;
    Ok(out.stdout)
}

fn criterion_11() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("trial.csv");
    let ds = CalibratedDgp::new(&ScenarioConfig::default())
        .and_then(|d| d.replicate(0))
        .map_err(|e| e.to_string())?
        .dataset;
    write_csv(
        &ds,
        std::fs::File::create(&data).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let data = data.to_str().unwrap().to_string();
    let runs: [(&str, Vec<&str>); 2] = [
        (
            "simulate",
            vec![
                "simulate",
                "--reps",
                "6",
                "--frt-reps",
                "30",
                "--methods",
                "no-borrow-covadj,borrow-aipw,csb-nn",
                "--estimands",
                "rd,rr",
                "--boot-reps",
                "20",
                "--bias",
                "0,6",
                "--reference",
                "no-borrow-covadj",
            ],
        ),
        (
            "frt",
            vec![
                "frt",
                "--data",
                &data,
                "--method",
                "csb-lcnn",
                "--reps",
                "100",
                "--boot-reps",
                "20",
            ],
        ),
    ];
    for (name, args) in &runs {
        let mut outputs = Vec::new();
        for threads in ["1", "4", "8"] {
            let out = dir.path().join(format!("{name}-{threads}.out"));
            let out_s = out.to_str().unwrap();
            let mut full = vec!["--seed", "11", "--threads", threads, "--out", out_s];
            full.extend(args.iter().copied());
            hctb(&full)?;
            outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
        }
        ensure(
            outputs.windows(2).all(|w| w[0] == w[1]),
            format!("{name} output differs across thread counts"),
        )?;
    }
    Ok("simulate and frt outputs byte-identical across 1, 4, 8 threads".into())
}

type Criterion = (usize, &'static str, fn() -> Check);

const CRITERIA: [Criterion; 11] = [
    (1, "FRT exactness oracle", criterion_1),
    (2, "finite-sample validity, exhaustive", criterion_2),
    (3, "type I error control", criterion_3),
    (4, "double robustness", criterion_4),
    (5, "hidden-bias robustness ordering", criterion_5),
    (6, "efficiency gain without bias", criterion_6),
    (7, "conformal super-uniformity", criterion_7),
    (8, "CSB endpoint identities", criterion_8),
    (9, "estimand algebra", criterion_9),
    (10, "numerical oracles", criterion_10),
    (11, "determinism and parallel safety", criterion_11),
];

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let wanted: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let strict = args.iter().any(|a| a == "--strict")
        || std::env::var("HCTB_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    let mut ran = 0;
    for (id, name, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {id:>2} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {id:>2} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    println!(
        "acceptance: {} of {ran} criteria PASS, {failures} FAIL",
        ran - failures
    );
    if strict && failures > 0 {
        std::process::exit(1);
    }
}
