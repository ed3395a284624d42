//! Pooling of completed-data estimates: Rubin's summaries, the posterior-draw
//! variance, and the ML-imputation variance with eigenvalue shrinkage of the
//! missing-information fraction.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::estimation::ParamEstimate;
use crate::numerics::{
    inverse, inverse_regularized_gamma_q_ln, ln_regularized_gamma_q, ln_upper_incomplete_gamma, normal_quantile,
    pair_eigen, EigenPairs, SpdMatrix,
};

/// Pooled point estimate, mean within-imputation covariance and
/// between-imputation covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MiSummary {
    pub theta_mi: DVector<f64>,
    pub w_bar: SpdMatrix,
    pub b_hat: SpdMatrix,
    pub d: usize,
}

impl MiSummary {
    pub fn k(&self) -> usize {
        self.theta_mi.len()
    }
}

pub fn mi_summaries(estimates: &[ParamEstimate]) -> Result<MiSummary> {
    let d = estimates.len();
    if d < 2 {
        return Err(domain(format!("need at least 2 completed-data estimates, got {d}")));
    }
    let k = estimates[0].dim();
    if let Some(bad) = estimates.iter().find(|e| e.dim() != k) {
        return Err(Error::DimensionMismatch { expected: k, found: bad.dim() });
    }
    let df = d as f64;
    let mut theta = DVector::<f64>::zeros(k);
    let mut w = DMatrix::<f64>::zeros(k, k);
    for e in estimates {
        theta += &e.theta;
        w += e.w.as_matrix();
    }
    theta /= df;
    w /= df;
    let mut b = DMatrix::<f64>::zeros(k, k);
    for e in estimates {
        let dev = &e.theta - &theta;
        b += &dev * dev.transpose();
    }
    b /= df - 1.0;
    Ok(MiSummary { theta_mi: theta, w_bar: SpdMatrix::symmetrized(w), b_hat: SpdMatrix::symmetrized(b), d })
}

fn inflation(d: usize) -> f64 {
    1.0 + 1.0 / d as f64
}

/// `W̄ + (1 + 1/D)·B̂`.
pub fn pd_variance(s: &MiSummary) -> SpdMatrix {
    SpdMatrix::symmetrized(s.w_bar.as_matrix() + s.b_hat.as_matrix() * inflation(s.d))
}

/// `(1 + 1/D)·B̂·V̂⁻¹`.
pub fn pd_gamma_mis(s: &MiSummary) -> Result<DMatrix<f64>> {
    let v = pd_variance(s);
    let v_inv = inverse(v.as_matrix())?;
    Ok(s.b_hat.as_matrix() * inflation(s.d) * v_inv)
}

/// `W̄⁻¹·B̂`; its eigenvalues can exceed one.
pub fn ml_gamma_mis_raw(s: &MiSummary) -> Result<DMatrix<f64>> {
    if s.k() == 1 {
        let w = s.w_bar[(0, 0)];
        if !(w > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: 0, value: w });
        }
        return Ok(DMatrix::from_element(1, 1, s.b_hat[(0, 0)] / w));
    }
    let w_inv = crate::numerics::spd_inverse(&s.w_bar)?;
    Ok(w_inv.as_matrix() * s.b_hat.as_matrix())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShrinkageKind {
    Simple,
    Sheena,
    PosteriorMean,
    PosteriorMedian,
}

impl ShrinkageKind {
    pub fn label(self) -> &'static str {
        match self {
            ShrinkageKind::Simple => "simple",
            ShrinkageKind::Sheena => "sheena",
            ShrinkageKind::PosteriorMean => "mean",
            ShrinkageKind::PosteriorMedian => "median",
        }
    }

    fn uses_lambda_max(self) -> bool {
        matches!(self, ShrinkageKind::Simple | ShrinkageKind::Sheena)
    }
}

impl FromStr for ShrinkageKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(ShrinkageKind::Simple),
            "sheena" => Ok(ShrinkageKind::Sheena),
            "mean" => Ok(ShrinkageKind::PosteriorMean),
            "median" => Ok(ShrinkageKind::PosteriorMedian),
            other => Err(Error::Config(format!("unknown shrinkage kind '{other}'"))),
        }
    }
}

pub const DEFAULT_LAMBDA_MAX: f64 = 0.95;

/// Shrinkage function plus its clamp (ignored by the posterior kinds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkageSpec {
    kind: ShrinkageKind,
    lambda_max: f64,
}

impl Default for ShrinkageSpec {
    fn default() -> Self {
        ShrinkageSpec { kind: ShrinkageKind::PosteriorMean, lambda_max: DEFAULT_LAMBDA_MAX }
    }
}

impl ShrinkageSpec {
    pub fn new(kind: ShrinkageKind, lambda_max: f64) -> Result<Self> {
        if !(lambda_max > 0.0 && lambda_max < 1.0) {
            return Err(domain(format!("lambda_max must lie in (0, 1), got {lambda_max}")));
        }
        Ok(ShrinkageSpec { kind, lambda_max })
    }

    pub fn of(kind: ShrinkageKind) -> Self {
        ShrinkageSpec { kind, lambda_max: DEFAULT_LAMBDA_MAX }
    }

    pub fn kind(&self) -> ShrinkageKind {
        self.kind
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }
}

/// `mean`, `median`, `sheena:0.95`, `simple:0.97`; a bare `sheena` or
/// `simple` takes the default clamp.
impl FromStr for ShrinkageSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, lm) = match s.split_once(':') {
            Some((k, v)) => {
                let lm: f64 = v.parse().map_err(|_| Error::Config(format!("bad lambda_max in '{s}'")))?;
                (k.parse::<ShrinkageKind>()?, Some(lm))
            }
            None => (s.parse::<ShrinkageKind>()?, None),
        };
        if lm.is_some() && !kind.uses_lambda_max() {
            return Err(Error::Config(format!("'{}' takes no lambda_max", kind.label())));
        }
        ShrinkageSpec::new(kind, lm.unwrap_or(DEFAULT_LAMBDA_MAX)).map_err(|e| Error::Config(e.to_string()))
    }
}

impl fmt::Display for ShrinkageSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.kind.uses_lambda_max() {
            write!(f, "{}:{}", self.kind.label(), self.lambda_max)
        } else {
            f.write_str(self.kind.label())
        }
    }
}

const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Shrinks one eigenvalue `λ̂` of `W̄⁻¹B̂` into `[0, 1)`.
///
/// `r` is the 1-based rank of `λ̂` in descending order among the `k_dim`
/// eigenvalues. The posterior kinds summarize `λ = λ̂(D−1)/L`,
/// `L ~ χ²_{D−1}`, truncated to `λ < 1`.
pub fn shrink_eigenvalue(lambda_hat: f64, d: usize, k_dim: usize, r: usize, spec: &ShrinkageSpec) -> Result<f64> {
    if !(lambda_hat >= 0.0) || lambda_hat.is_infinite() {
        return Err(domain(format!("eigenvalue must be finite and non-negative, got {lambda_hat}")));
    }
    if d < 2 {
        return Err(domain(format!("need D >= 2, got {d}")));
    }
    if r < 1 || r > k_dim {
        return Err(domain(format!("rank {r} outside 1..={k_dim}")));
    }
    if lambda_hat == 0.0 {
        return Ok(0.0);
    }
    let dm1 = (d - 1) as f64;
    let out = match spec.kind {
        ShrinkageKind::Simple => lambda_hat.min(spec.lambda_max),
        ShrinkageKind::Sheena => {
            let denom = (d + k_dim + 1) as f64 - 2.0 * r as f64;
            if denom <= 0.0 {
                return Err(domain(format!("Sheena factor undefined for D = {d}, K = {k_dim}, r = {r}")));
            }
            (dm1 / denom * lambda_hat).min(spec.lambda_max)
        }
        ShrinkageKind::PosteriorMean => {
            let a = dm1 / 2.0;
            let z = dm1 * lambda_hat / 2.0;
            let ln_ratio = ln_upper_incomplete_gamma(a - 1.0, z)? - ln_upper_incomplete_gamma(a, z)?;
            lambda_hat * dm1 / 2.0 * ln_ratio.exp()
        }
        ShrinkageKind::PosteriorMedian => {
            let a = dm1 / 2.0;
            let z = dm1 * lambda_hat / 2.0;
            let ln_target = ln_regularized_gamma_q(a, z)? - std::f64::consts::LN_2;
            let zm = inverse_regularized_gamma_q_ln(a, ln_target)?;
            lambda_hat * dm1 / (2.0 * zm)
        }
    };
    Ok(out.min(BELOW_ONE))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InformationFractions {
    pub gamma_mis_raw: DMatrix<f64>,
    pub eigen: EigenPairs,
    pub shrunk_values: Vec<f64>,
    pub gamma_mis_shrunk: DMatrix<f64>,
    pub gamma_obs_shrunk: DMatrix<f64>,
}

/// Shrinks `γ̂ = W̄⁻¹B̂` eigenvalue by eigenvalue and rebuilds `γ̃ = U·Λ̃·U⁻¹`.
pub fn shrink_gamma(s: &MiSummary, spec: &ShrinkageSpec) -> Result<InformationFractions> {
    let k = s.k();
    let eigen = pair_eigen(&s.w_bar, &s.b_hat)?;
    let shrunk_values = eigen
        .values
        .iter()
        .enumerate()
        // Rounding can leave a null direction of B̂ slightly negative.
        .map(|(i, &l)| shrink_eigenvalue(l.max(0.0), s.d, k, i + 1, spec))
        .collect::<Result<Vec<_>>>()?;
    let gamma_mis_shrunk = eigen.reconstruct(&shrunk_values);
    let gamma_obs_shrunk = DMatrix::identity(k, k) - &gamma_mis_shrunk;
    Ok(InformationFractions {
        gamma_mis_raw: ml_gamma_mis_raw(s)?,
        eigen,
        shrunk_values,
        gamma_mis_shrunk,
        gamma_obs_shrunk,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarianceMethod {
    Pd,
    Ml(ShrinkageSpec),
    MlUnshrunken,
}

impl fmt::Display for VarianceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarianceMethod::Pd => f.write_str("pd"),
            VarianceMethod::Ml(spec) => write!(f, "ml:{spec}"),
            VarianceMethod::MlUnshrunken => f.write_str("ml:none"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceFlag {
    Ok,
    /// `W̄ − B̂` not positive definite: the unshrunken estimate is negative
    /// or undefined.
    NegativeOrUndefined,
}

pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub method: VarianceMethod,
    pub theta: DVector<f64>,
    pub v_mi: SpdMatrix,
    /// Observed-data variance; ML paths only.
    pub v_obs: Option<SpdMatrix>,
    pub gamma: InformationFractions,
    pub se: Vec<f64>,
    pub level: f64,
    pub intervals: Vec<(f64, f64)>,
    pub flag: VarianceFlag,
}

#[derive(Serialize)]
struct EigenJson<'a> {
    raw: &'a [f64],
    shrunk: &'a [f64],
}

#[derive(Serialize)]
struct ReportJson<'a> {
    method: String,
    theta: Vec<f64>,
    se: &'a [f64],
    ci_low: Vec<f64>,
    ci_high: Vec<f64>,
    level: f64,
    gamma_mis_eigenvalues: EigenJson<'a>,
    variance_defined: bool,
}

impl VarianceReport {
    fn assemble(
        method: VarianceMethod,
        theta: &DVector<f64>,
        v_mi: SpdMatrix,
        v_obs: Option<SpdMatrix>,
        gamma: InformationFractions,
        flag: VarianceFlag,
    ) -> Result<Self> {
        let se: Vec<f64> = v_mi.diagonal().iter().map(|v| v.sqrt()).collect();
        let intervals = if flag == VarianceFlag::Ok {
            confidence_interval(theta, &v_mi, DEFAULT_LEVEL)?
        } else {
            vec![(f64::NAN, f64::NAN); theta.len()]
        };
        Ok(VarianceReport { method, theta: theta.clone(), v_mi, v_obs, gamma, se, level: DEFAULT_LEVEL, intervals, flag })
    }

    pub fn to_json(&self) -> Result<String> {
        let json = ReportJson {
            method: self.method.to_string(),
            theta: self.theta.iter().copied().collect(),
            se: &self.se,
            ci_low: self.intervals.iter().map(|c| c.0).collect(),
            ci_high: self.intervals.iter().map(|c| c.1).collect(),
            level: self.level,
            gamma_mis_eigenvalues: EigenJson { raw: &self.gamma.eigen.values, shrunk: &self.gamma.shrunk_values },
            variance_defined: self.flag == VarianceFlag::Ok,
        };
        Ok(serde_json::to_string_pretty(&json)?)
    }
}

/// Rubin's rules for posterior-draw imputations.
pub fn pd_report(s: &MiSummary) -> Result<VarianceReport> {
    let v = pd_variance(s);
    let raw = pd_gamma_mis(s)?;
    let scaled_b = SpdMatrix::symmetrized(s.b_hat.as_matrix() * inflation(s.d));
    // V̂⁻¹·(1+1/D)B̂ shares its spectrum with the printed product order.
    let eigen = pair_eigen(&v, &scaled_b)?;
    let k = s.k();
    let gamma = InformationFractions {
        shrunk_values: eigen.values.clone(),
        eigen,
        gamma_obs_shrunk: DMatrix::identity(k, k) - &raw,
        gamma_mis_shrunk: raw.clone(),
        gamma_mis_raw: raw,
    };
    VarianceReport::assemble(VarianceMethod::Pd, &s.theta_mi, v, None, gamma, VarianceFlag::Ok)
}

/// `W̄·γ̃_obs⁻¹ + B̂/D` with `γ̃` from [`shrink_gamma`].
pub fn ml_variance(s: &MiSummary, spec: &ShrinkageSpec) -> Result<VarianceReport> {
    let gamma = shrink_gamma(s, spec)?;
    let inv_obs: Vec<f64> = gamma.shrunk_values.iter().map(|l| 1.0 / (1.0 - l)).collect();
    let v_obs = s.w_bar.as_matrix() * gamma.eigen.reconstruct(&inv_obs);
    let v_mi = &v_obs + s.b_hat.as_matrix() / s.d as f64;
    VarianceReport::assemble(
        VarianceMethod::Ml(*spec),
        &s.theta_mi,
        SpdMatrix::symmetrized(v_mi),
        Some(SpdMatrix::symmetrized(v_obs)),
        gamma,
        VarianceFlag::Ok,
    )
}

/// `W̄(W̄ − B̂)⁻¹W̄ + B̂/D` without shrinkage, flagged when `W̄ − B̂` is not
/// positive definite.
pub fn ml_variance_unshrunken(s: &MiSummary) -> Result<VarianceReport> {
    let k = s.k();
    let diff = SpdMatrix::symmetrized(s.w_bar.as_matrix() - s.b_hat.as_matrix());
    let flag = if diff.is_positive_definite() { VarianceFlag::Ok } else { VarianceFlag::NegativeOrUndefined };
    let v_obs = if k == 1 {
        let w = s.w_bar[(0, 0)];
        DMatrix::from_element(1, 1, w * w / diff[(0, 0)])
    } else {
        match inverse(diff.as_matrix()) {
            Ok(inv) => s.w_bar.as_matrix() * inv * s.w_bar.as_matrix(),
            Err(_) => DMatrix::from_element(k, k, f64::NAN),
        }
    };
    let v_mi = &v_obs + s.b_hat.as_matrix() / s.d as f64;
    let eigen = pair_eigen(&s.w_bar, &s.b_hat)?;
    let raw = ml_gamma_mis_raw(s)?;
    let gamma = InformationFractions {
        shrunk_values: eigen.values.clone(),
        eigen,
        gamma_obs_shrunk: DMatrix::identity(k, k) - &raw,
        gamma_mis_shrunk: raw.clone(),
        gamma_mis_raw: raw,
    };
    VarianceReport::assemble(
        VarianceMethod::MlUnshrunken,
        &s.theta_mi,
        SpdMatrix::symmetrized(v_mi),
        Some(SpdMatrix::symmetrized(v_obs)),
        gamma,
        flag,
    )
}

pub fn variance_report(s: &MiSummary, method: &VarianceMethod) -> Result<VarianceReport> {
    match method {
        VarianceMethod::Pd => pd_report(s),
        VarianceMethod::Ml(spec) => ml_variance(s, spec),
        VarianceMethod::MlUnshrunken => ml_variance_unshrunken(s),
    }
}

/// Normal-quantile intervals `θ_k ± z·sqrt(V_kk)`.
pub fn confidence_interval(theta: &DVector<f64>, v: &SpdMatrix, level: f64) -> Result<Vec<(f64, f64)>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(domain(format!("confidence level must lie in (0, 1), got {level}")));
    }
    if v.dim() != theta.len() {
        return Err(Error::DimensionMismatch { expected: theta.len(), found: v.dim() });
    }
    let z = normal_quantile((1.0 + level) / 2.0);
    theta
        .iter()
        .zip(v.diagonal())
        .map(|(&t, vkk)| {
            if !(vkk > 0.0) {
                return Err(domain(format!("variance must be positive, got {vkk}")));
            }
            let half = z * vkk.sqrt();
            Ok((t - half, t + half))
        })
        .collect()
}
