//! Closed-form efficiency bounds at the null.

use crate::error::{Error, Result};
use crate::model::{BaselineModel, GroupSizeDistribution, ModelConfig};
use crate::quadrature::gauss_legendre;

/// Ingredients of the bound formulas.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsInput {
    pub group_size: GroupSizeDistribution,
    pub m: u32,
    pub var_z: f64,
    pub mean_z: f64,
    pub baseline: BaselineModel,
}

impl BoundsInput {
    pub fn from_config(config: &ModelConfig) -> Self {
        BoundsInput {
            group_size: config.group_size.clone(),
            m: config.m,
            var_z: config.covariate.variance(),
            mean_z: config.covariate.mean(),
            baseline: config.baseline,
        }
    }
}

/// `∫₀^∞ s S̄^{η−k} (log S̄)^j dt = (−1)^j j! / (η−k+1)^{j+1}` for any
/// continuous law with density `s` and survival `S̄`.
pub fn log_survival_moment(eta: u32, k: u32, j: u32) -> Result<f64> {
    if k > eta {
        return Err(Error::Domain(format!("need eta >= k, got eta={eta}, k={k}")));
    }
    let base = (eta - k + 1) as f64;
    let factorial: f64 = (1..=j).map(f64::from).product();
    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign * factorial / base.powi(j as i32 + 1))
}

/// `I*^ϱ = Var Z (1 − 1/m) + m Var Z (2 Var(1/η) + E(1/η)²)`.
pub fn effective_information(input: &BoundsInput) -> f64 {
    let g = &input.group_size;
    let m = input.m as f64;
    let mean_inv = g.expect(|e| 1.0 / e);
    let var_inv = g.expect(|e| (1.0 / e - mean_inv).powi(2));
    input.var_z * (1.0 - 1.0 / m) + m * input.var_z * (2.0 * var_inv + mean_inv * mean_inv)
}

/// `Var Z (m − 1)/m`, the information as group sizes grow without bound.
pub fn effective_information_limit(m: u32, var_z: f64) -> f64 {
    if m == 0 {
        return 0.0;
    }
    var_z * (m - 1) as f64 / m as f64
}

/// `(M₀(t), M₁(t)) = (E[η Ḡ(t)^η], E Z · M₀(t))`.
pub fn moment_functionals(t: f64, input: &BoundsInput) -> Result<(f64, f64)> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time {t} is negative")));
    }
    let u = input.baseline.survival(t);
    let m0 = input.group_size.expect(|e| e * u.powf(e));
    Ok((m0, input.mean_z * m0))
}

fn check_times(s: f64, t: f64, input: &BoundsInput) -> Result<()> {
    let horizon = input.baseline.evaluation_horizon();
    if !(s >= 0.0 && t >= 0.0) {
        return Err(Error::Domain(format!("times ({s}, {t}) must be non-negative")));
    }
    if s.max(t) > horizon {
        return Err(Error::Domain(format!(
            "max(s, t) = {} lies beyond the horizon {horizon} where the survival is positive",
            s.max(t)
        )));
    }
    Ok(())
}

const PANEL_NODES: usize = 32;

/// `∫₀^{t} dG / E[η Ḡ^{η+1}]`, computed in `x = −log Ḡ` where it becomes
/// `∫₀^{X} dx / E[η e^{−η x}]`, with composite Gauss–Legendre panels.
fn first_term_integral(t: f64, input: &BoundsInput) -> Result<f64> {
    let end = -input.baseline.log_survival(t);
    if end == 0.0 {
        return Ok(0.0);
    }
    let g = &input.group_size;
    let logs: Vec<(f64, f64)> = g.iter().map(|(e, p)| (e as f64, (p * e as f64).ln())).collect();
    let integrand = |x: f64| {
        let top = logs.iter().map(|(e, l)| l - e * x).fold(f64::NEG_INFINITY, f64::max);
        let lse = top + logs.iter().map(|(e, l)| (l - e * x - top).exp()).sum::<f64>().ln();
        (-lse).exp()
    };
    let panels = ((end * g.max() as f64 / 4.0).ceil() as usize).max(1);
    let width = end / panels as f64;
    let (nodes, weights) = gauss_legendre(PANEL_NODES);
    let mut total = 0.0;
    for p in 0..panels {
        let a = p as f64 * width;
        for (x, w) in nodes.iter().zip(&weights) {
            total += 0.5 * width * w * integrand(a + 0.5 * width * (x + 1.0));
        }
    }
    if !total.is_finite() {
        return Err(Error::Domain(format!("covariance integral overflows at t = {t}")));
    }
    Ok(total)
}

/// `K(s, t) = Ḡ(s)Ḡ(t) ∫₀^{s∧t} dG / E[η Ḡ^{η+1}]`.
pub fn kfunction(s: f64, t: f64, input: &BoundsInput) -> Result<f64> {
    check_times(s, t, input)?;
    let (s, t) = (s.min(t), s.max(t));
    let b = &input.baseline;
    Ok(b.survival(s) * b.survival(t) * first_term_integral(s.min(t), input)?)
}

fn plug_in_term(s: f64, t: f64, input: &BoundsInput, information: f64) -> Result<f64> {
    // Fixed evaluation order keeps the result exactly symmetric.
    let (s, t) = (s.min(t), s.max(t));
    let b = &input.baseline;
    let lead = input.mean_z * input.mean_z * b.log_survival(s) * b.log_survival(t);
    if lead == 0.0 {
        return Ok(0.0);
    }
    if !(information > 0.0) {
        return Err(Error::Domain("plug-in term needs positive information (m >= 2)".into()));
    }
    Ok(b.survival(s) * b.survival(t) * lead / information)
}

/// Breslow covariance `ω(s, t)`; the plug-in term uses the limiting information.
pub fn breslow_covariance_omega(s: f64, t: f64, input: &BoundsInput) -> Result<f64> {
    let k = kfunction(s, t, input)?;
    let info = effective_information_limit(input.m, input.var_z);
    Ok(k + plug_in_term(s, t, input, info)?)
}

/// Survival bound `K*(s, t)`; the plug-in term uses the finite-η information.
pub fn survival_bound_kstar(s: f64, t: f64, input: &BoundsInput) -> Result<f64> {
    let k = kfunction(s, t, input)?;
    Ok(k + plug_in_term(s, t, input, effective_information(input))?)
}
