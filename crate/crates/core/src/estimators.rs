//! Arm-mean (θ) estimators, the borrowing estimators, plug-in estimands and
//! influence-function inference.
//!
//! Every θ estimate is an average of per-unit contributions c_i over a
//! sampling frame with indicators d_i (d_i = S_i for RCT-frame estimators):
//! θ̂ = Σ c_i / Σ d_i. The centred contribution c_i - d_i θ̂ is the
//! estimated influence of unit i up to the constant n/Σd.

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{TrialDataset, WeightDiagnostics};
use crate::error::{Error, Result};
use crate::nuisance::{BorrowValues, NuisanceValues, PROB_CLIP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    Rd,
    Rr,
    Or,
}

impl Estimand {
    pub const ALL: [Estimand; 3] = [Estimand::Rd, Estimand::Rr, Estimand::Or];

    pub fn name(self) -> &'static str {
        match self {
            Estimand::Rd => "rd",
            Estimand::Rr => "rr",
            Estimand::Or => "or",
        }
    }

    /// Value of the estimand under no effect.
    pub fn null_value(self) -> f64 {
        match self {
            Estimand::Rd => 0.0,
            Estimand::Rr | Estimand::Or => 1.0,
        }
    }

    /// Ratio estimands are tested and interval-estimated on the log scale.
    pub fn is_ratio(self) -> bool {
        self != Estimand::Rd
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rd" => Ok(Estimand::Rd),
            "rr" => Ok(Estimand::Rr),
            "or" => Ok(Estimand::Or),
            other => Err(Error::Config(format!("unknown estimand '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    NoBorrowUnadj,
    NoBorrowCovAdj,
    BorrowNaive,
    BorrowIpw,
    BorrowCw,
    BorrowOm,
    BorrowAipw,
    BorrowAcw,
    CsbNn,
    CsbLcNn,
    CsbSar,
}

impl Method {
    /// The ten methods compared in the main results table.
    pub const ALL: [Method; 10] = [
        Method::NoBorrowUnadj,
        Method::NoBorrowCovAdj,
        Method::BorrowNaive,
        Method::BorrowIpw,
        Method::BorrowCw,
        Method::BorrowOm,
        Method::BorrowAcw,
        Method::BorrowAipw,
        Method::CsbNn,
        Method::CsbLcNn,
    ];

    pub const EVERY: [Method; 11] = [
        Method::NoBorrowUnadj,
        Method::NoBorrowCovAdj,
        Method::BorrowNaive,
        Method::BorrowIpw,
        Method::BorrowCw,
        Method::BorrowOm,
        Method::BorrowAcw,
        Method::BorrowAipw,
        Method::CsbNn,
        Method::CsbLcNn,
        Method::CsbSar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::NoBorrowUnadj => "no-borrow-unadj",
            Method::NoBorrowCovAdj => "no-borrow-covadj",
            Method::BorrowNaive => "borrow-naive",
            Method::BorrowIpw => "borrow-ipw",
            Method::BorrowCw => "borrow-cw",
            Method::BorrowOm => "borrow-om",
            Method::BorrowAipw => "borrow-aipw",
            Method::BorrowAcw => "borrow-acw",
            Method::CsbNn => "csb-nn",
            Method::CsbLcNn => "csb-lcnn",
            Method::CsbSar => "csb-sar",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::NoBorrowUnadj => "No Borrow Unadj",
            Method::NoBorrowCovAdj => "No Borrow CovAdj",
            Method::BorrowNaive => "Borrow Naive",
            Method::BorrowIpw => "Borrow IPW",
            Method::BorrowCw => "Borrow CW",
            Method::BorrowOm => "Borrow OM",
            Method::BorrowAipw => "Borrow AIPW",
            Method::BorrowAcw => "Borrow ACW",
            Method::CsbNn => "CSB NN",
            Method::CsbLcNn => "CSB LC-NN",
            Method::CsbSar => "CSB SAR",
        }
    }

    pub fn is_csb(self) -> bool {
        matches!(self, Method::CsbNn | Method::CsbLcNn | Method::CsbSar)
    }

    pub fn borrows(self) -> bool {
        !matches!(self, Method::NoBorrowUnadj | Method::NoBorrowCovAdj)
    }

    /// Parses a comma-separated list; `all` expands to [`Method::ALL`].
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part.eq_ignore_ascii_case("all") {
                out.extend(Method::ALL);
            } else {
                out.push(part.parse()?);
            }
        }
        if out.is_empty() {
            return Err(Error::Config("empty method list".into()));
        }
        let mut seen = std::collections::HashSet::new();
        out.retain(|m| seen.insert(*m));
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Method::EVERY
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThetaEstimate {
    pub arm: u8,
    pub value: f64,
    /// c_i; zero for units outside the estimator's support.
    pub per_unit: Vec<f64>,
    /// d_i: 1 for units in the averaging frame.
    pub frame: Vec<f64>,
}

impl ThetaEstimate {
    pub fn from_contributions(arm: u8, per_unit: Vec<f64>, frame: Vec<f64>) -> Self {
        let total: f64 = frame.iter().sum();
        let value = per_unit.iter().sum::<f64>() / total;
        Self {
            arm,
            value,
            per_unit,
            frame,
        }
    }

    pub fn normalizer(&self) -> f64 {
        self.frame.iter().sum()
    }

    /// Centred contributions c_i - d_i θ̂.
    pub fn centered(&self) -> Vec<f64> {
        self.per_unit
            .iter()
            .zip(&self.frame)
            .map(|(c, d)| c - d * self.value)
            .collect()
    }

    /// Influence-function standard error of θ̂.
    pub fn se(&self) -> f64 {
        self.centered().iter().map(|v| v * v).sum::<f64>().sqrt() / self.normalizer()
    }
}

/// θ̂₁ and θ̂₀ of one method plus the weights it places on borrowed ECs.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaPair {
    pub theta1: ThetaEstimate,
    pub theta0: ThetaEstimate,
    pub weights: WeightDiagnostics,
}

impl ThetaPair {
    pub fn point(&self, estimand: Estimand) -> Result<f64> {
        plug_in(
            clip_theta(self.theta1.value, estimand).0,
            clip_theta(self.theta0.value, estimand).0,
            estimand,
        )
    }
}

fn rct_frame(ds: &TrialDataset) -> Vec<f64> {
    ds.s().iter().map(|&s| f64::from(s)).collect()
}

fn arm_propensity(e: f64, arm: u8) -> f64 {
    if arm == 1 {
        e
    } else {
        1.0 - e
    }
}

/// Sample mean of Y in one RCT arm, written in the augmented form with
/// μ̂ₐ ≡ Ȳₐ and ê = nₐ/n_R so its contributions carry the right variance.
pub fn theta_unadj(ds: &TrialDataset, arm: u8) -> Result<ThetaEstimate> {
    let ids: Vec<usize> = (0..ds.n())
        .filter(|&i| ds.is_rct(i) && ds.a()[i] == arm)
        .collect();
    if ids.is_empty() {
        return Err(Error::EmptyArm(arm));
    }
    let n_a = ids.len() as f64;
    let mean = ids.iter().map(|&i| f64::from(ds.y()[i])).sum::<f64>() / n_a;
    let e_a = n_a / ds.n_rct() as f64;
    let per_unit = (0..ds.n())
        .map(|i| {
            if !ds.is_rct(i) {
                0.0
            } else if ds.a()[i] == arm {
                (f64::from(ds.y()[i]) - mean) / e_a + mean
            } else {
                mean
            }
        })
        .collect();
    Ok(ThetaEstimate {
        arm,
        value: mean,
        per_unit,
        frame: rct_frame(ds),
    })
}

/// Covariate-adjusted (augmented) RCT-only estimator of θₐ.
pub fn theta_covadj(ds: &TrialDataset, values: &NuisanceValues, arm: u8) -> ThetaEstimate {
    let mu = if arm == 1 { &values.mu1 } else { &values.mu0_r };
    let per_unit = (0..ds.n())
        .map(|i| {
            if !ds.is_rct(i) {
                return 0.0;
            }
            let ind = if ds.a()[i] == arm { 1.0 } else { 0.0 };
            ind / arm_propensity(values.e[i], arm) * (f64::from(ds.y()[i]) - mu[i]) + mu[i]
        })
        .collect();
    ThetaEstimate::from_contributions(arm, per_unit, rct_frame(ds))
}

fn borrow_values(values: &NuisanceValues) -> Result<&BorrowValues> {
    values.borrow.as_ref().ok_or(Error::NoExternalControls)
}

/// Weight on Y - μ̂₀ for unit i in the borrowing estimators:
/// k (S(1-A) + (1-S) r) / (k (1-e) + c r), with (k, c) = (π, 1-π) for the
/// sampling-score form and (q, 1) for the calibration form.
fn control_weight(s: u8, a: u8, e: f64, r: f64, k: f64, c: f64) -> f64 {
    let num = if s == 1 { f64::from(1 - a) } else { r };
    k * num / (k * (1.0 - e) + c * r)
}

fn sampling_weights(ds: &TrialDataset, values: &NuisanceValues, b: &BorrowValues) -> Vec<f64> {
    (0..ds.n())
        .map(|i| {
            if ds.is_rct(i) || b.in_subset[i] {
                control_weight(
                    ds.s()[i],
                    ds.a()[i],
                    values.e[i],
                    b.r[i],
                    b.pi[i],
                    1.0 - b.pi[i],
                )
            } else {
                0.0
            }
        })
        .collect()
}

fn calibration_weights(
    ds: &TrialDataset,
    values: &NuisanceValues,
    b: &BorrowValues,
    q: &[f64],
) -> Vec<f64> {
    (0..ds.n())
        .map(|i| {
            if ds.is_rct(i) || b.in_subset[i] {
                control_weight(ds.s()[i], ds.a()[i], values.e[i], b.r[i], q[i], 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

fn ec_diagnostics(ds: &TrialDataset, b: &BorrowValues, weights: &[f64]) -> WeightDiagnostics {
    let w: Vec<f64> = (0..ds.n())
        .filter(|&i| !ds.is_rct(i) && b.in_subset[i])
        .map(|i| weights[i])
        .collect();
    WeightDiagnostics::from_weights(w)
}

fn unit_diagnostics(ds: &TrialDataset, b: &BorrowValues) -> WeightDiagnostics {
    let ones = vec![1.0; ds.n()];
    ec_diagnostics(ds, b, &ones)
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().sum::<f64>() > 0.0 {
        Ok(())
    } else {
        Err(Error::ZeroComponentWeight("control"))
    }
}

fn augmented_theta0(ds: &TrialDataset, b: &BorrowValues, weights: &[f64]) -> ThetaEstimate {
    let per_unit = (0..ds.n())
        .map(|i| {
            let s = f64::from(ds.s()[i]);
            weights[i] * (f64::from(ds.y()[i]) - b.mu0_re[i]) + s * b.mu0_re[i]
        })
        .collect();
    ThetaEstimate::from_contributions(0, per_unit, rct_frame(ds))
}

/// Doubly robust borrowing estimator of θ₀ over RCT controls and the
/// borrowed ECs.
pub fn theta0_aipw(ds: &TrialDataset, values: &NuisanceValues) -> Result<ThetaEstimate> {
    let b = borrow_values(values)?;
    let w = sampling_weights(ds, values, b);
    Ok(augmented_theta0(ds, b, &w))
}

pub fn no_borrow_unadj(ds: &TrialDataset) -> Result<ThetaPair> {
    Ok(ThetaPair {
        theta1: theta_unadj(ds, 1)?,
        theta0: theta_unadj(ds, 0)?,
        weights: WeightDiagnostics::none(),
    })
}

pub fn no_borrow_covadj(ds: &TrialDataset, values: &NuisanceValues) -> ThetaPair {
    ThetaPair {
        theta1: theta_covadj(ds, values, 1),
        theta0: theta_covadj(ds, values, 0),
        weights: WeightDiagnostics::none(),
    }
}

pub fn borrow_aipw(ds: &TrialDataset, values: &NuisanceValues) -> Result<ThetaPair> {
    let b = borrow_values(values)?;
    let w = sampling_weights(ds, values, b);
    check_weights(&w)?;
    Ok(ThetaPair {
        theta1: theta_covadj(ds, values, 1),
        theta0: augmented_theta0(ds, b, &w),
        weights: ec_diagnostics(ds, b, &w),
    })
}

fn ht_theta1(ds: &TrialDataset, values: &NuisanceValues) -> ThetaEstimate {
    let per_unit = (0..ds.n())
        .map(|i| {
            if ds.is_rct(i) && ds.a()[i] == 1 {
                f64::from(ds.y()[i]) / values.e[i]
            } else {
                0.0
            }
        })
        .collect();
    ThetaEstimate::from_contributions(1, per_unit, rct_frame(ds))
}

fn weighted_theta0(ds: &TrialDataset, weights: &[f64]) -> ThetaEstimate {
    let per_unit = (0..ds.n())
        .map(|i| weights[i] * f64::from(ds.y()[i]))
        .collect();
    ThetaEstimate::from_contributions(0, per_unit, rct_frame(ds))
}

pub fn borrow_ipw(ds: &TrialDataset, values: &NuisanceValues) -> Result<ThetaPair> {
    let b = borrow_values(values)?;
    let w = sampling_weights(ds, values, b);
    check_weights(&w)?;
    Ok(ThetaPair {
        theta1: ht_theta1(ds, values),
        theta0: weighted_theta0(ds, &w),
        weights: ec_diagnostics(ds, b, &w),
    })
}

/// `q` holds calibration odds for every unit (see
/// [`crate::nuisance::calibration_odds`]).
pub fn borrow_cw(ds: &TrialDataset, values: &NuisanceValues, q: &[f64]) -> Result<ThetaPair> {
    let b = borrow_values(values)?;
    let w = calibration_weights(ds, values, b, q);
    check_weights(&w)?;
    Ok(ThetaPair {
        theta1: ht_theta1(ds, values),
        theta0: weighted_theta0(ds, &w),
        weights: ec_diagnostics(ds, b, &w),
    })
}

pub fn borrow_om(ds: &TrialDataset, values: &NuisanceValues) -> Result<ThetaPair> {
    let b = borrow_values(values)?;
    let frame = rct_frame(ds);
    let mu1 = values.mu1.iter().zip(&frame).map(|(m, s)| m * s).collect();
    let mu0 = b.mu0_re.iter().zip(&frame).map(|(m, s)| m * s).collect();
    Ok(ThetaPair {
        theta1: ThetaEstimate::from_contributions(1, mu1, frame.clone()),
        theta0: ThetaEstimate::from_contributions(0, mu0, frame),
        weights: unit_diagnostics(ds, b),
    })
}

pub fn borrow_acw(ds: &TrialDataset, values: &NuisanceValues, q: &[f64]) -> Result<ThetaPair> {
    let b = borrow_values(values)?;
    let w = calibration_weights(ds, values, b, q);
    check_weights(&w)?;
    Ok(ThetaPair {
        theta1: theta_covadj(ds, values, 1),
        theta0: augmented_theta0(ds, b, &w),
        weights: ec_diagnostics(ds, b, &w),
    })
}

/// Pools RCT units and borrowed ECs as if they came from one study.
/// `pooled_e` is P(A=1|X) fitted on the pooled units; the outcome models
/// are μ̂₁ (treated) and μ̂₀,R+E (all controls).
pub fn borrow_naive(
    ds: &TrialDataset,
    values: &NuisanceValues,
    pooled_e: &[f64],
) -> Result<ThetaPair> {
    let b = borrow_values(values)?;
    let frame: Vec<f64> = (0..ds.n())
        .map(|i| {
            if ds.is_rct(i) || b.in_subset[i] {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let mut c1 = vec![0.0; ds.n()];
    let mut c0 = vec![0.0; ds.n()];
    for i in (0..ds.n()).filter(|&i| frame[i] > 0.0) {
        let y = f64::from(ds.y()[i]);
        let a = f64::from(ds.a()[i]);
        let e = pooled_e[i];
        c1[i] = a * y / e + (1.0 - a / e) * values.mu1[i];
        c0[i] = (1.0 - a) * y / (1.0 - e) + (1.0 - (1.0 - a) / (1.0 - e)) * b.mu0_re[i];
    }
    Ok(ThetaPair {
        theta1: ThetaEstimate::from_contributions(1, c1, frame.clone()),
        theta0: ThetaEstimate::from_contributions(0, c0, frame),
        weights: unit_diagnostics(ds, b),
    })
}

pub fn plug_in(theta1: f64, theta0: f64, estimand: Estimand) -> Result<f64> {
    match estimand {
        Estimand::Rd => Ok(theta1 - theta0),
        Estimand::Rr => {
            if theta0 == 0.0 {
                return Err(Error::Boundary);
            }
            Ok(theta1 / theta0)
        }
        Estimand::Or => {
            if theta0 <= 0.0 || theta0 >= 1.0 || theta1 >= 1.0 {
                return Err(Error::Boundary);
            }
            Ok((theta1 / (1.0 - theta1)) / (theta0 / (1.0 - theta0)))
        }
    }
}

/// Clips θ into [PROB_CLIP, 1 - PROB_CLIP] for the ratio estimands. The
/// flag reports whether clipping changed the value.
pub fn clip_theta(theta: f64, estimand: Estimand) -> (f64, bool) {
    if estimand == Estimand::Rd {
        return (theta, false);
    }
    let c = theta.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    (c, c != theta)
}

/// Point estimate with a normal-theory interval and p-value.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub point: f64,
    /// On the natural scale; ratio intervals use se/point on the log scale.
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_asym: f64,
    /// Centred influence contributions of the estimand (unscaled).
    pub influence: Vec<f64>,
    pub clipped: bool,
}

pub fn z_quantile(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// Two-sided normal p-value for `estimate` against zero with standard error
/// `se`; always in (0, 1].
pub fn two_sided_p(estimate: f64, se: f64) -> f64 {
    if se <= 0.0 || !se.is_finite() {
        return if estimate == 0.0 {
            1.0
        } else {
            f64::MIN_POSITIVE
        };
    }
    let p = 2.0 * Normal::standard().cdf(-(estimate / se).abs());
    p.clamp(f64::MIN_POSITIVE, 1.0)
}

/// Normal interval for the point from a natural-scale standard error:
/// symmetric for RD, symmetric on the log scale for RR and OR.
pub fn interval(point: f64, se: f64, estimand: Estimand, alpha: f64) -> (f64, f64) {
    let z = z_quantile(alpha);
    if estimand.is_ratio() {
        let half = z * se / point;
        (point * (-half).exp(), point * half.exp())
    } else {
        (point - z * se, point + z * se)
    }
}

/// p-value for H0: no effect, on the log scale for ratio estimands.
pub fn null_p_value(point: f64, se: f64, estimand: Estimand) -> f64 {
    if estimand.is_ratio() {
        two_sided_p(point.ln(), se / point)
    } else {
        two_sided_p(point, se)
    }
}

pub fn asymptotic_inference(
    th1: &ThetaEstimate,
    th0: &ThetaEstimate,
    estimand: Estimand,
    alpha: f64,
) -> Result<Inference> {
    if th1.frame != th0.frame {
        return Err(Error::InvalidDataset(
            "θ estimates come from different sampling frames".into(),
        ));
    }
    let (t1, clip1) = clip_theta(th1.value, estimand);
    let (t0, clip0) = clip_theta(th0.value, estimand);
    let point = plug_in(t1, t0, estimand)?;
    let u1 = th1.centered();
    let u0 = th0.centered();
    let influence: Vec<f64> = match estimand {
        Estimand::Rd => u1.iter().zip(&u0).map(|(a, b)| a - b).collect(),
        Estimand::Rr => u1
            .iter()
            .zip(&u0)
            .map(|(a, b)| (a - b * point) / t0)
            .collect(),
        Estimand::Or => {
            let odds0 = t0 / (1.0 - t0);
            let s1 = (1.0 - t1) * (1.0 - t1);
            let s0 = (1.0 - t0) * (1.0 - t0);
            u1.iter()
                .zip(&u0)
                .map(|(a, b)| (a / s1 - b / s0 * point) / odds0)
                .collect()
        }
    };
    let se = influence.iter().map(|v| v * v).sum::<f64>().sqrt() / th1.normalizer();
    let (ci_low, ci_high) = interval(point, se, estimand, alpha);
    Ok(Inference {
        point,
        se,
        ci_low,
        ci_high,
        p_asym: null_p_value(point, se, estimand),
        influence,
        clipped: clip1 || clip0,
    })
}

/// One row of a results table: a (method, estimand) pair on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub method: Method,
    pub estimand: Estimand,
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_asym: f64,
    pub theta1: f64,
    pub theta0: f64,
    pub n_borrowed: usize,
    pub ess: f64,
    /// Threshold used by CSB methods.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub se_method: SeMethod,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub influence: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SeMethod {
    #[default]
    Eif,
    Bootstrap,
}

impl FromStr for SeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "eif" => Ok(SeMethod::Eif),
            "bootstrap" => Ok(SeMethod::Bootstrap),
            other => Err(Error::Config(format!("unknown se method '{other}'"))),
        }
    }
}

impl EffectEstimate {
    pub fn from_pair(
        method: Method,
        estimand: Estimand,
        pair: &ThetaPair,
        alpha: f64,
    ) -> Result<Self> {
        let inf = asymptotic_inference(&pair.theta1, &pair.theta0, estimand, alpha)?;
        let mut warnings = Vec::new();
        if inf.clipped {
            warnings.push("theta clipped to the unit interval".to_string());
        }
        Ok(Self {
            method,
            estimand,
            point: inf.point,
            se: inf.se,
            ci_low: inf.ci_low,
            ci_high: inf.ci_high,
            p_asym: inf.p_asym,
            theta1: pair.theta1.value,
            theta0: pair.theta0.value,
            n_borrowed: pair.weights.n_borrowed,
            ess: pair.weights.ess,
            gamma: None,
            se_method: SeMethod::Eif,
            warnings,
            influence: inf.influence,
        })
    }

    /// Replaces the standard error (e.g. with a bootstrap one) and recomputes
    /// the interval and p-value.
    pub fn with_se(mut self, se: f64, se_method: SeMethod, alpha: f64) -> Self {
        self.se = se;
        self.se_method = se_method;
        let (lo, hi) = interval(self.point, se, self.estimand, alpha);
        self.ci_low = lo;
        self.ci_high = hi;
        self.p_asym = null_p_value(self.point, se, self.estimand);
        self
    }
}
