//! Baseline, covariate and group-size laws, and the density of one
//! nested case-control observation.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_hermite_normal, CovariateRule};

/// Cumulative hazard at which a baseline stops being evaluated; `Ḡ` is still
/// a normal double there.
const MAX_CUMULATIVE_HAZARD: f64 = 700.0;

/// Nodes of the covariate rule used for the mixture survival `Ḡ_θ(t)`.
pub const MIXTURE_NODES: usize = 64;

/// Baseline failure-time law. Both built-ins have scale one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineModel {
    Exponential,
    Weibull { shape: f64 },
}

impl BaselineModel {
    pub fn weibull(shape: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0) {
            return Err(Error::Config(format!("Weibull shape must be positive, got {shape}")));
        }
        Ok(BaselineModel::Weibull { shape })
    }

    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match *self {
            BaselineModel::Exponential => t,
            BaselineModel::Weibull { shape } => t.powf(shape),
        }
    }

    /// `log Ḡ(t)`.
    pub fn log_survival(&self, t: f64) -> f64 {
        -self.cumulative_hazard(t)
    }

    pub fn survival(&self, t: f64) -> f64 {
        self.log_survival(t).exp()
    }

    pub fn hazard(&self, t: f64) -> f64 {
        match *self {
            BaselineModel::Exponential => 1.0,
            BaselineModel::Weibull { shape } => {
                if t <= 0.0 {
                    if shape < 1.0 {
                        f64::INFINITY
                    } else if shape == 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    shape * t.powf(shape - 1.0)
                }
            }
        }
    }

    pub fn density(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        self.hazard(t) * self.survival(t)
    }

    /// `Ḡ⁻¹(u)` for `u ∈ (0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        self.time_at_log_survival(u.ln())
    }

    /// Inverse of `log Ḡ`, kept in log scale so that very small survival
    /// probabilities do not underflow.
    pub fn time_at_log_survival(&self, log_survival: f64) -> f64 {
        let h = (-log_survival).max(0.0);
        match *self {
            BaselineModel::Exponential => h,
            BaselineModel::Weibull { shape } => h.powf(1.0 / shape),
        }
    }

    /// Largest time at which `Ḡ` is evaluated as strictly positive.
    pub fn evaluation_horizon(&self) -> f64 {
        self.time_at_log_survival(-MAX_CUMULATIVE_HAZARD)
    }

    fn canonical(&self) -> String {
        match *self {
            BaselineModel::Exponential => "exponential".to_string(),
            BaselineModel::Weibull { shape } => format!("weibull(shape={shape:e})"),
        }
    }
}

/// Covariate law `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovariateModel {
    /// Standard normal; `radius` caps the declared range of `M_h`.
    StandardNormal { radius: f64 },
    /// Standard normal truncated to `[-bound, bound]`.
    TruncatedNormal { bound: f64 },
    /// Uniform on `[0, 1]`.
    Uniform,
}

impl Default for CovariateModel {
    fn default() -> Self {
        CovariateModel::StandardNormal { radius: 2.0 }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

impl CovariateModel {
    pub fn truncated_normal(bound: f64) -> Result<Self> {
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::Config(format!("truncation bound must be positive, got {bound}")));
        }
        Ok(CovariateModel::TruncatedNormal { bound })
    }

    pub fn standard_normal(radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Config(format!("moment radius must be positive, got {radius}")));
        }
        Ok(CovariateModel::StandardNormal { radius })
    }

    fn truncation_mass(bound: f64) -> f64 {
        let n = std_normal();
        n.cdf(bound) - n.cdf(-bound)
    }

    pub fn density(&self, z: f64) -> f64 {
        match *self {
            CovariateModel::StandardNormal { .. } => std_normal().pdf(z),
            CovariateModel::TruncatedNormal { bound } => {
                if z.abs() > bound {
                    0.0
                } else {
                    std_normal().pdf(z) / Self::truncation_mass(bound)
                }
            }
            CovariateModel::Uniform => {
                if (0.0..=1.0).contains(&z) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            CovariateModel::StandardNormal { .. } | CovariateModel::TruncatedNormal { .. } => 0.0,
            CovariateModel::Uniform => 0.5,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            CovariateModel::StandardNormal { .. } => 1.0,
            CovariateModel::TruncatedNormal { bound } => {
                1.0 - 2.0 * bound * std_normal().pdf(bound) / Self::truncation_mass(bound)
            }
            CovariateModel::Uniform => 1.0 / 12.0,
        }
    }

    /// Radius of the open interval on which `M_h` is declared finite.
    pub fn moment_radius(&self) -> f64 {
        match *self {
            CovariateModel::StandardNormal { radius } => radius,
            CovariateModel::TruncatedNormal { .. } | CovariateModel::Uniform => f64::INFINITY,
        }
    }

    /// `M_h(θ) = ∫ e^{θz} h(z) dz`.
    pub fn exp_moment(&self, theta: f64) -> Result<f64> {
        if theta.abs() >= self.moment_radius() || !theta.is_finite() {
            return Err(Error::Domain(format!(
                "|theta| = {} outside the moment radius {}",
                theta.abs(),
                self.moment_radius()
            )));
        }
        Ok(match *self {
            CovariateModel::StandardNormal { .. } => (0.5 * theta * theta).exp(),
            CovariateModel::TruncatedNormal { bound } => {
                let n = std_normal();
                (0.5 * theta * theta).exp() * (n.cdf(bound - theta) - n.cdf(-bound - theta))
                    / Self::truncation_mass(bound)
            }
            CovariateModel::Uniform => {
                if theta == 0.0 {
                    1.0
                } else {
                    theta.exp_m1() / theta
                }
            }
        })
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            CovariateModel::StandardNormal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            CovariateModel::TruncatedNormal { bound } => (-bound, bound),
            CovariateModel::Uniform => (0.0, 1.0),
        }
    }

    pub fn is_bounded(&self) -> bool {
        let (a, b) = self.support();
        a.is_finite() && b.is_finite()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.support().0 >= 0.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CovariateModel::StandardNormal { .. } => rng.sample(StandardNormal),
            CovariateModel::TruncatedNormal { bound } => {
                let n = std_normal();
                let lo = n.cdf(-bound);
                let p = lo + rng.random::<f64>() * (n.cdf(bound) - lo);
                n.inverse_cdf(p).clamp(-bound, bound)
            }
            CovariateModel::Uniform => rng.random::<f64>(),
        }
    }

    /// Quadrature matched to the support: Gauss–Hermite for the normal law,
    /// Gauss–Legendre otherwise.
    pub fn rule(&self, nodes: usize) -> CovariateRule {
        match *self {
            CovariateModel::StandardNormal { .. } => {
                let (z, w) = gauss_hermite_normal(nodes);
                let h = z.iter().map(|&x| self.density(x)).collect();
                CovariateRule::new(z, w, h)
            }
            CovariateModel::TruncatedNormal { bound } => {
                CovariateRule::legendre(nodes, -bound, bound, |z| self.density(z))
            }
            CovariateModel::Uniform => CovariateRule::legendre(nodes, 0.0, 1.0, |_| 1.0),
        }
    }

    fn canonical(&self) -> String {
        match *self {
            CovariateModel::StandardNormal { radius } => format!("normal(radius={radius:e})"),
            CovariateModel::TruncatedNormal { bound } => format!("truncated_normal(bound={bound:e})"),
            CovariateModel::Uniform => "uniform".to_string(),
        }
    }
}

/// Finite-support law of the group size `η`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSizeDistribution {
    support: Vec<u32>,
    probs: Vec<f64>,
}

impl GroupSizeDistribution {
    pub fn new(pmf: &[(u32, f64)]) -> Result<Self> {
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(pmf.len());
        for &(eta, p) in pmf {
            if eta < 2 {
                return Err(Error::Config(format!("group size {eta} is below 2")));
            }
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::Config(format!("probability {p} for group size {eta} is invalid")));
            }
            if entries.iter().any(|&(e, _)| e == eta) {
                return Err(Error::Config(format!("group size {eta} listed twice")));
            }
            if p > 0.0 {
                entries.push((eta, p));
            }
        }
        if entries.is_empty() {
            return Err(Error::Config("group size distribution has no mass".into()));
        }
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("group size probabilities sum to {total}")));
        }
        entries.sort_by_key(|e| e.0);
        Ok(GroupSizeDistribution {
            support: entries.iter().map(|e| e.0).collect(),
            probs: entries.iter().map(|e| e.1).collect(),
        })
    }

    pub fn degenerate(eta: u32) -> Result<Self> {
        Self::new(&[(eta, 1.0)])
    }

    pub fn uniform(support: &[u32]) -> Result<Self> {
        let p = 1.0 / support.len() as f64;
        let pmf: Vec<(u32, f64)> = support.iter().map(|&e| (e, p)).collect();
        Self::new(&pmf)
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.support.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn pmf(&self, eta: u32) -> f64 {
        self.support
            .iter()
            .position(|&e| e == eta)
            .map_or(0.0, |i| self.probs[i])
    }

    pub fn min(&self) -> u32 {
        self.support[0]
    }

    pub fn max(&self) -> u32 {
        *self.support.last().expect("non-empty support")
    }

    /// `E[f(η)]`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.iter().map(|(e, p)| p * f(e as f64)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|e| e)
    }

    /// Draw by inversion of the cumulative distribution at `u ∈ [0, 1)`.
    pub fn quantile(&self, u: f64) -> u32 {
        let mut acc = 0.0;
        for (e, p) in self.iter() {
            acc += p;
            if u < acc {
                return e;
            }
        }
        self.max()
    }

    fn canonical(&self) -> String {
        let parts: Vec<String> = self.iter().map(|(e, p)| format!("{e}:{p:e}")).collect();
        parts.join(";")
    }
}

/// One stratum record `X = (η, i, r, t, z_r)`. Individuals are labelled
/// `1..=η`; `covariates[k]` belongs to `sampled[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub eta: u32,
    pub failure: u32,
    pub sampled: Vec<u32>,
    pub time: f64,
    pub covariates: Vec<f64>,
}

impl Observation {
    /// Structural checks; `m` is the expected sampled-set size when known.
    pub fn validate(&self, m: Option<usize>) -> Result<()> {
        let bad = |msg: String| Err(Error::Domain(msg));
        if self.sampled.is_empty() {
            return bad("sampled set is empty".into());
        }
        if let Some(m) = m {
            if self.sampled.len() != m {
                return bad(format!("sampled set has {} members, expected {m}", self.sampled.len()));
            }
        }
        if self.sampled.len() != self.covariates.len() {
            return bad("covariates do not match the sampled set".into());
        }
        if !self.sampled.windows(2).all(|w| w[0] < w[1]) {
            return bad("sampled set must be strictly increasing".into());
        }
        if self.sampled[0] < 1 || *self.sampled.last().unwrap() > self.eta {
            return bad(format!("sampled set is not a subset of [1, {}]", self.eta));
        }
        if !self.sampled.contains(&self.failure) {
            return bad(format!("failure {} is not in the sampled set", self.failure));
        }
        if !(self.time.is_finite() && self.time >= 0.0) {
            return bad(format!("failure time {} is not a non-negative number", self.time));
        }
        if self.covariates.iter().any(|z| !z.is_finite()) {
            return bad("covariates must be finite".into());
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.sampled.len()
    }

    pub fn failure_slot(&self) -> usize {
        self.sampled
            .iter()
            .position(|&j| j == self.failure)
            .expect("validated observation contains its failure")
    }

    pub fn failure_covariate(&self) -> f64 {
        self.covariates[self.failure_slot()]
    }
}

/// Full model configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub baseline: BaselineModel,
    pub covariate: CovariateModel,
    pub group_size: GroupSizeDistribution,
    /// Size of the sampled set: the failure plus `m - 1` controls.
    pub m: u32,
    pub theta: f64,
}

impl ModelConfig {
    pub fn canonical_string(&self) -> String {
        format!(
            "baseline={};covariate={};eta={};m={};theta={:e}",
            self.baseline.canonical(),
            self.covariate.canonical(),
            self.group_size.canonical(),
            self.m,
            self.theta
        )
    }

    /// Hex SHA-256 of the canonical configuration string.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `K_{η,m} = 1 / C(η-1, m-1)`: probability of one particular sampled set.
pub fn sampling_weight(eta: u32, m: u32) -> Result<f64> {
    if m < 1 || m > eta {
        return Err(Error::Domain(format!("sampling weight needs 1 <= m <= eta, got m={m}, eta={eta}")));
    }
    let (n, k) = ((eta - 1) as u64, (m - 1) as u64);
    let k = k.min(n - k);
    let mut c = 1.0f64;
    for j in 0..k {
        c = c * (n - j) as f64 / (j + 1) as f64;
    }
    Ok(1.0 / c.round())
}

/// `Ḡ_θ(t; z) = Ḡ(t)^{exp(θz)}`.
pub fn survival_given_covariate(baseline: &BaselineModel, t: f64, z: f64, theta: f64) -> f64 {
    if theta == 0.0 || z == 0.0 {
        return baseline.survival(t);
    }
    ((theta * z).exp() * baseline.log_survival(t)).exp()
}

/// `g_θ(t; z) = e^{θz} g(t) Ḡ(t)^{e^{θz} - 1}`.
fn density_given_covariate(baseline: &BaselineModel, t: f64, z: f64, theta: f64) -> f64 {
    let s = baseline.survival(t);
    if s <= 0.0 {
        return 0.0;
    }
    let rr = (theta * z).exp();
    rr * baseline.density(t) * s.powf(rr - 1.0)
}

/// Mixture survival `Ḡ_θ(t) = ∫ Ḡ(t)^{e^{θz}} h(z) dz`.
pub fn mixture_survival(config: &ModelConfig, t: f64, theta: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time {t} is negative")));
    }
    if theta.abs() >= config.covariate.moment_radius() {
        return Err(Error::Domain(format!(
            "|theta| = {} outside the moment radius {}",
            theta.abs(),
            config.covariate.moment_radius()
        )));
    }
    if theta == 0.0 || t == 0.0 {
        return Ok(config.baseline.survival(t));
    }
    let log_s = config.baseline.log_survival(t);
    let rule = config.covariate.rule(MIXTURE_NODES);
    Ok(rule.expect(|z| ((theta * z).exp() * log_s).exp()))
}

/// Observation density at the configured `θ`.
pub fn observation_density(x: &Observation, config: &ModelConfig) -> Result<f64> {
    x.validate(Some(config.m as usize))?;
    let rho = config.group_size.pmf(x.eta);
    if rho == 0.0 {
        return Ok(0.0);
    }
    let theta = config.theta;
    let mix = mixture_survival(config, x.time, theta)?;
    let k = sampling_weight(x.eta, config.m)?;
    let b = &config.baseline;
    let mut f = k * rho * mix.powi((x.eta - config.m) as i32);
    for (&j, &z) in x.sampled.iter().zip(&x.covariates) {
        f *= config.covariate.density(z);
        if j == x.failure {
            f *= density_given_covariate(b, x.time, z, theta);
        } else {
            f *= survival_given_covariate(b, x.time, z, theta);
        }
    }
    Ok(f)
}

/// Observation density under the null `θ = 0`.
pub fn null_density(x: &Observation, config: &ModelConfig) -> Result<f64> {
    x.validate(Some(config.m as usize))?;
    let rho = config.group_size.pmf(x.eta);
    if rho == 0.0 {
        return Ok(0.0);
    }
    let k = sampling_weight(x.eta, config.m)?;
    let b = &config.baseline;
    let hz: f64 = x.covariates.iter().map(|&z| config.covariate.density(z)).product();
    Ok(k * b.density(x.time) * b.survival(x.time).powi(x.eta as i32 - 1) * hz * rho)
}

/// Which of the sufficient conditions for the information result hold.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// Non-negative covariates, `θ ≥ 0` and `η ≥ m`.
    pub positivity: bool,
    /// Bounded covariates and `η ≥ m`.
    pub boundedness: bool,
    /// `m ≤ η - 4` almost surely.
    pub cohort_size: bool,
    pub eta_at_least_two: bool,
    /// `M_h` finite at the configured `θ`.
    pub exp_moment_finite: bool,
    /// `2 ≤ m ≤ min η`, so the partial likelihood can be fitted.
    pub estimable: bool,
    /// `M_h(θ_ξ) + M_h(-θ_ξ)` at `θ_ξ` equal to half the moment radius
    /// (capped at 1); informational only.
    pub exp_moment_envelope: f64,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn any_condition(&self) -> bool {
        self.positivity || self.boundedness || self.cohort_size
    }

    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let yn = |b: bool| if b { "holds" } else { "fails" };
        writeln!(f, "positivity condition:       {}", yn(self.positivity))?;
        writeln!(f, "boundedness condition:      {}", yn(self.boundedness))?;
        writeln!(f, "cohort size condition:      {}", yn(self.cohort_size))?;
        writeln!(f, "eta >= 2 a.s.:              {}", yn(self.eta_at_least_two))?;
        writeln!(f, "exp moment finite at theta: {}", yn(self.exp_moment_finite))?;
        writeln!(f, "estimable (2 <= m <= eta):  {}", yn(self.estimable))?;
        writeln!(f, "M_h(+-theta_xi) envelope:   {:.6}", self.exp_moment_envelope)?;
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

pub fn validate_config(config: &ModelConfig) -> Result<ValidationReport> {
    if config.m < 1 {
        return Err(Error::Config("m must be at least 1".into()));
    }
    let eta_min = config.group_size.min();
    let m = config.m;
    let eta_ge_m = eta_min >= m;
    let positivity = config.covariate.is_nonnegative() && config.theta >= 0.0 && eta_ge_m;
    let boundedness = config.covariate.is_bounded() && eta_ge_m;
    let cohort_size = m + 4 <= eta_min;
    let eta_at_least_two = eta_min >= 2;
    let exp_moment_finite = config.covariate.exp_moment(config.theta).is_ok();
    let estimable = m >= 2 && eta_ge_m;
    let theta_xi = (0.5 * config.covariate.moment_radius()).min(1.0);
    let exp_moment_envelope = config.covariate.exp_moment(theta_xi).unwrap_or(f64::INFINITY)
        + config.covariate.exp_moment(-theta_xi).unwrap_or(f64::INFINITY);

    let mut warnings = Vec::new();
    if !(positivity || boundedness || cohort_size) {
        warnings.push(
            "none of the positivity, boundedness or cohort-size conditions holds".to_string(),
        );
    }
    if !eta_ge_m {
        warnings.push(format!("smallest group size {eta_min} is below m = {m}"));
    }
    if !exp_moment_finite {
        warnings.push(format!(
            "theta = {} lies outside the declared moment radius {}",
            config.theta,
            config.covariate.moment_radius()
        ));
    }
    if m < 2 {
        warnings.push("m = 1 leaves the partial likelihood constant".to_string());
    }
    Ok(ValidationReport {
        positivity,
        boundedness,
        cohort_size,
        eta_at_least_two,
        exp_moment_finite,
        estimable,
        exp_moment_envelope,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(cov: CovariateModel, pmf: &[(u32, f64)], m: u32, theta: f64) -> ModelConfig {
        ModelConfig {
            baseline: BaselineModel::Exponential,
            covariate: cov,
            group_size: GroupSizeDistribution::new(pmf).unwrap(),
            m,
            theta,
        }
    }

    #[test]
    fn sampling_weight_values() {
        assert_eq!(sampling_weight(5, 2).unwrap(), 0.25);
        assert_eq!(sampling_weight(7, 7).unwrap(), 1.0);
        assert!((sampling_weight(8, 3).unwrap() - 1.0 / 21.0).abs() < 1e-16);
        assert!(sampling_weight(3, 4).is_err());
        assert!(sampling_weight(3, 0).is_err());
    }

    #[test]
    fn exponential_baseline_is_exact() {
        let b = BaselineModel::Exponential;
        for &t in &[0.0, 0.3, 1.0, 7.5] {
            assert_eq!(b.hazard(t), 1.0);
            assert_eq!(b.survival(t), (-t).exp());
        }
        for &u in &[1.0, 0.5, 1e-9] {
            assert_eq!(b.quantile(u), -f64::ln(u));
        }
    }

    #[test]
    fn weibull_quantile_inverts_survival() {
        let b = BaselineModel::weibull(1.7).unwrap();
        assert_eq!(b.survival(0.0), 1.0);
        for &t in &[0.1, 0.9, 2.3] {
            assert!((b.quantile(b.survival(t)) - t).abs() < 1e-12);
            assert!((b.hazard(t) * b.survival(t) - b.density(t)).abs() < 1e-15);
        }
        assert!(BaselineModel::weibull(-1.0).is_err());
    }

    #[test]
    fn survival_given_covariate_cases() {
        let b = BaselineModel::Exponential;
        assert_eq!(survival_given_covariate(&b, 1.3, 2.0, 0.0), b.survival(1.3));
        assert_eq!(survival_given_covariate(&b, 1.3, 0.0, 0.7), b.survival(1.3));
        let v = survival_given_covariate(&b, 1.0, 1.0, 2f64.ln());
        assert!((v - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn mixture_survival_edges() {
        let c = config(CovariateModel::default(), &[(3, 1.0)], 2, 0.0);
        assert_eq!(mixture_survival(&c, 0.7, 0.0).unwrap(), (-0.7f64).exp());
        assert_eq!(mixture_survival(&c, 0.0, 0.9).unwrap(), 1.0);
        assert!(mixture_survival(&c, 1.0, 2.5).is_err());
    }

    #[test]
    fn exp_moments() {
        let n = CovariateModel::default();
        assert_eq!(n.exp_moment(0.0).unwrap(), 1.0);
        assert!(n.exp_moment(2.0).is_err());
        let u = CovariateModel::Uniform;
        assert!((u.exp_moment(1.0).unwrap() - (1f64.exp() - 1.0)).abs() < 1e-15);
        let t = CovariateModel::truncated_normal(3.0).unwrap();
        assert!((t.exp_moment(0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(t.moment_radius().is_infinite());
    }

    #[test]
    fn null_density_special_cases() {
        let c = config(CovariateModel::Uniform, &[(2, 0.4), (3, 0.6)], 2, 0.0);
        let x = Observation {
            eta: 2,
            failure: 2,
            sampled: vec![1, 2],
            time: 0.8,
            covariates: vec![0.3, 0.6],
        };
        let f = null_density(&x, &c).unwrap();
        assert!((f - (-1.6f64).exp() * 0.4).abs() < 1e-15);

        let x3 = Observation {
            eta: 3,
            failure: 1,
            sampled: vec![1, 3],
            time: 0.5,
            covariates: vec![0.2, 0.9],
        };
        let expected = 0.5 * (-0.5f64).exp() * (-1.0f64).exp() * 0.6;
        assert!((null_density(&x3, &c).unwrap() - expected).abs() < 1e-15);
        let x4 = Observation { eta: 4, ..x3 };
        assert_eq!(null_density(&x4, &c).unwrap(), 0.0);
    }

    #[test]
    fn observation_validation() {
        let good = Observation {
            eta: 4,
            failure: 3,
            sampled: vec![1, 3],
            time: 1.0,
            covariates: vec![0.0, 1.0],
        };
        assert!(good.validate(Some(2)).is_ok());
        assert!(good.validate(Some(3)).is_err());
        let mut bad = good.clone();
        bad.failure = 2;
        assert!(bad.validate(None).is_err());
        let mut bad = good.clone();
        bad.sampled = vec![3, 1];
        assert!(bad.validate(None).is_err());
        let mut bad = good.clone();
        bad.sampled = vec![3, 5];
        bad.failure = 3;
        assert!(bad.validate(None).is_err());
        let mut bad = good;
        bad.time = -1.0;
        assert!(bad.validate(None).is_err());
    }

    #[test]
    fn validation_predicates() {
        let normal = CovariateModel::default();
        let r = validate_config(&config(normal, &[(5, 1.0)], 2, 0.0)).unwrap();
        assert!(!r.boundedness && !r.cohort_size && !r.positivity);
        assert!(!r.any_condition());
        assert!(!r.is_clean());

        let trunc = CovariateModel::truncated_normal(3.0).unwrap();
        let r = validate_config(&config(trunc, &[(5, 1.0)], 2, 0.0)).unwrap();
        assert!(r.boundedness);

        let r = validate_config(&config(normal, &[(8, 1.0)], 2, 0.0)).unwrap();
        assert!(r.cohort_size && r.is_clean());

        let r = validate_config(&config(CovariateModel::Uniform, &[(3, 1.0)], 2, 0.5)).unwrap();
        assert!(r.positivity && r.boundedness);
        let r = validate_config(&config(CovariateModel::Uniform, &[(3, 1.0)], 2, -0.5)).unwrap();
        assert!(!r.positivity && r.boundedness);

        assert!(validate_config(&config(normal, &[(5, 1.0)], 0, 0.0)).is_err());
    }

    #[test]
    fn group_size_checks() {
        assert!(GroupSizeDistribution::new(&[(1, 1.0)]).is_err());
        assert!(GroupSizeDistribution::new(&[(3, 0.5)]).is_err());
        assert!(GroupSizeDistribution::new(&[(3, 0.5), (3, 0.5)]).is_err());
        let d = GroupSizeDistribution::new(&[(5, 0.5), (3, 0.5), (9, 0.0)]).unwrap();
        assert_eq!(d.support(), &[3, 5]);
        assert_eq!(d.min(), 3);
        assert_eq!(d.quantile(0.2), 3);
        assert_eq!(d.quantile(0.7), 5);
        assert!((d.mean() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let a = config(CovariateModel::default(), &[(5, 1.0)], 2, 0.0);
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.theta = 0.1;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }
}
