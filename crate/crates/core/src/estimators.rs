//! Maximum partial likelihood over sampled risk sets and the pooled
//! Breslow-type baseline estimator.

use crate::error::{Error, Result};
use crate::sampler::Dataset;

/// Per-record covariate contrasts `z_k - z_i` against the failure.
fn contrasts(dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    let m = dataset
        .m()
        .ok_or_else(|| Error::Empty("partial likelihood of an empty dataset".into()))?;
    if m < 2 {
        return Err(Error::Degenerate(
            "sampled sets of size one make the partial likelihood constant".into(),
        ));
    }
    Ok(dataset
        .observations()
        .iter()
        .map(|x| {
            let zi = x.failure_covariate();
            x.covariates.iter().map(|z| z - zi).collect()
        })
        .collect())
}

/// `log Σ_k e^{θ d_k}`.
fn log_sum_exp(theta: f64, d: &[f64]) -> f64 {
    let top = d.iter().map(|v| theta * v).fold(f64::NEG_INFINITY, f64::max);
    top + d.iter().map(|v| (theta * v - top).exp()).sum::<f64>().ln()
}

/// Log-likelihood, score and information of one record.
fn record_terms(theta: f64, d: &[f64]) -> (f64, f64, f64) {
    let top = d.iter().map(|v| theta * v).fold(f64::NEG_INFINITY, f64::max);
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for &v in d {
        let w = (theta * v - top).exp();
        s0 += w;
        s1 += w * v;
        s2 += w * v * v;
    }
    let mean = s1 / s0;
    let var = (s2 / s0 - mean * mean).max(0.0);
    (-(top + s0.ln()), -mean, var)
}

fn totals(theta: f64, d: &[Vec<f64>]) -> (f64, f64, f64) {
    d.iter().fold((0.0, 0.0, 0.0), |acc, di| {
        let (l, u, i) = record_terms(theta, di);
        (acc.0 + l, acc.1 + u, acc.2 + i)
    })
}

/// `Σ_j [θ z_{i_j} − log Σ_{k∈r_j} e^{θ z_k}]`.
pub fn partial_loglik(dataset: &Dataset, theta: f64) -> Result<f64> {
    let d = contrasts(dataset)?;
    Ok(d.iter().map(|di| -log_sum_exp(theta, di)).sum())
}

/// Score and observed information of the partial likelihood at `θ`.
pub fn score_and_information(dataset: &Dataset, theta: f64) -> Result<(f64, f64)> {
    let d = contrasts(dataset)?;
    let (_, u, i) = totals(theta, &d);
    Ok((u, i))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpleOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    pub separation_bound: f64,
}

impl Default for MpleOptions {
    fn default() -> Self {
        MpleOptions {
            tolerance: 1e-10,
            max_iterations: 50,
            max_halvings: 30,
            separation_bound: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpleFit {
    pub theta_hat: f64,
    pub standard_error: f64,
    pub iterations: usize,
    pub score: f64,
    /// Observed information of the whole dataset.
    pub information: f64,
}

/// Newton–Raphson from `θ = 0` with step halving.
pub fn fit_mple(dataset: &Dataset, options: &MpleOptions) -> Result<MpleFit> {
    let d = contrasts(dataset)?;
    if d.iter().all(|di| di.iter().all(|&v| v == 0.0)) {
        return Err(Error::Degenerate("covariates are constant within every sampled set".into()));
    }
    // The likelihood is monotone when every failure is the largest (or every
    // one the smallest) covariate of its set.
    if d.iter().all(|di| di.iter().all(|&v| v <= 0.0)) {
        return Err(Error::Separation { theta: f64::INFINITY, iterations: 0 });
    }
    if d.iter().all(|di| di.iter().all(|&v| v >= 0.0)) {
        return Err(Error::Separation { theta: f64::NEG_INFINITY, iterations: 0 });
    }

    let mut theta = 0.0;
    let (mut loglik, mut score, mut info) = totals(theta, &d);
    for iteration in 0..=options.max_iterations {
        if score.abs() < options.tolerance {
            return Ok(MpleFit {
                theta_hat: theta,
                standard_error: info.sqrt().recip(),
                iterations: iteration,
                score,
                information: info,
            });
        }
        if iteration == options.max_iterations {
            break;
        }
        if !(info > 0.0) {
            return Err(Error::Degenerate(format!("zero information at theta = {theta}")));
        }
        let mut step = score / info;
        let mut next = theta + step;
        let mut trial = totals(next, &d);
        let mut halvings = 0;
        // Near the optimum the gain drops below the rounding of the sum.
        let floor = loglik - 64.0 * f64::EPSILON * (1.0 + loglik.abs());
        while trial.0 < floor && halvings < options.max_halvings {
            step *= 0.5;
            next = theta + step;
            trial = totals(next, &d);
            halvings += 1;
        }
        if next.abs() > options.separation_bound {
            return Err(Error::Separation { theta: next, iterations: iteration + 1 });
        }
        let stalled = next == theta;
        theta = next;
        (loglik, score, info) = trial;
        if stalled {
            return Err(Error::NotConverged { iterations: iteration + 1, score });
        }
    }
    Err(Error::NotConverged { iterations: options.max_iterations, score })
}

/// `m / ((m − 1) Var Z)`: asymptotic variance of `√n(θ̂ − θ₀)` at the null.
pub fn mple_asymptotic_variance(m: u32, var_z: f64) -> Result<f64> {
    if m < 2 {
        return Err(Error::Domain("m = 1 carries no partial likelihood information".into()));
    }
    if !(var_z > 0.0) {
        return Err(Error::Domain(format!("covariate variance must be positive, got {var_z}")));
    }
    Ok(m as f64 / ((m - 1) as f64 * var_z))
}

/// Right-continuous step function starting from `initial`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    jump_times: Vec<f64>,
    values: Vec<f64>,
    initial: f64,
}

impl StepFunction {
    pub fn new(jump_times: Vec<f64>, values: Vec<f64>, initial: f64) -> Result<Self> {
        if jump_times.len() != values.len() {
            return Err(Error::Domain("jump times and values differ in length".into()));
        }
        if !jump_times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Domain("jump times must be strictly increasing".into()));
        }
        Ok(StepFunction { jump_times, values, initial })
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.jump_times.partition_point(|&s| s <= t) {
            0 => self.initial,
            k => self.values[k - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreslowFit {
    pub cumulative_hazard: StepFunction,
    pub survival: StepFunction,
    /// Records whose failure time repeats an earlier one.
    pub ties: usize,
}

/// `Λ̂(t) = Σ_{t_j ≤ t} 1 / Σ_{t_l ≥ t_j} (η_l/m) Σ_{k∈r_l} e^{θ̂ z_k}` and
/// `Ĝ = exp(−Λ̂)`.
pub fn breslow(dataset: &Dataset, theta_hat: f64) -> Result<BreslowFit> {
    let obs = dataset.observations();
    if obs.is_empty() {
        return Err(Error::Empty("Breslow estimator of an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..obs.len()).collect();
    order.sort_by(|&a, &b| obs[a].time.total_cmp(&obs[b].time));
    let weight = |j: usize| {
        let x = &obs[j];
        let s: f64 = x.covariates.iter().map(|z| (theta_hat * z).exp()).sum();
        x.eta as f64 / x.m() as f64 * s
    };
    let mut at_risk = vec![0.0; order.len() + 1];
    for pos in (0..order.len()).rev() {
        at_risk[pos] = at_risk[pos + 1] + weight(order[pos]);
    }
    let mut times = Vec::new();
    let mut hazard = Vec::new();
    let mut total = 0.0;
    let mut ties = 0;
    let mut pos = 0;
    while pos < order.len() {
        let t = obs[order[pos]].time;
        let mut end = pos + 1;
        while end < order.len() && obs[order[end]].time == t {
            end += 1;
        }
        ties += end - pos - 1;
        total += (end - pos) as f64 / at_risk[pos];
        times.push(t);
        hazard.push(total);
        pos = end;
    }
    let survival: Vec<f64> = hazard.iter().map(|h| (-h).exp()).collect();
    Ok(BreslowFit {
        cumulative_hazard: StepFunction::new(times.clone(), hazard, 0.0)?,
        survival: StepFunction::new(times, survival, 1.0)?,
        ties,
    })
}
