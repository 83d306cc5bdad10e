//! Exact simulation of nested case-control strata and a goodness-of-fit
//! report for simulated data.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Observation};
use crate::rng::RngStream;

/// An ordered sample of strata together with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    fingerprint: String,
    seed: u64,
    ties: usize,
}

impl Dataset {
    /// Assemble a dataset, checking every record and a common sampled-set size.
    pub fn new(
        observations: Vec<Observation>,
        fingerprint: impl Into<String>,
        seed: u64,
        ties: usize,
    ) -> Result<Self> {
        if let Some(first) = observations.first() {
            let m = first.m();
            for (j, x) in observations.iter().enumerate() {
                x.validate(Some(m))
                    .map_err(|e| Error::Domain(format!("observation {}: {e}", j + 1)))?;
            }
        }
        Ok(Dataset {
            observations,
            fingerprint: fingerprint.into(),
            seed,
            ties,
        })
    }

    /// Dataset without provenance, e.g. for hand-built examples.
    pub fn from_observations(observations: Vec<Observation>) -> Result<Self> {
        Self::new(observations, "", 0, 0)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Sampled-set size shared by all records; `None` when empty.
    pub fn m(&self) -> Option<usize> {
        self.observations.first().map(Observation::m)
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of strata whose first failure was tied between members.
    pub fn ties(&self) -> usize {
        self.ties
    }
}

/// Draw one stratum. The second value flags a tie for the first failure.
fn draw_group<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<(Observation, bool)> {
    let eta = config.group_size.quantile(rng.random::<f64>());
    let m = config.m;
    if m < 1 || eta < m {
        return Err(Error::Config(format!("drawn group size {eta} is smaller than m = {m}")));
    }
    let theta = config.theta;
    let z: Vec<f64> = (0..eta).map(|_| config.covariate.sample(rng)).collect();
    // Cumulative hazard of member j: -log Ḡ(T_j) = -log(U_j) e^{-θ z_j}.
    let mut best = 0usize;
    let mut best_h = f64::INFINITY;
    let mut tied = false;
    for (j, &zj) in z.iter().enumerate() {
        let u = 1.0 - rng.random::<f64>();
        let h = -u.ln() * (-theta * zj).exp();
        if h < best_h {
            best_h = h;
            best = j;
            tied = false;
        } else if h == best_h {
            tied = true;
        }
    }
    let time = config.baseline.time_at_log_survival(-best_h);
    let mut labels: Vec<usize> = index::sample(rng, eta as usize - 1, m as usize - 1)
        .into_iter()
        .map(|k| if k < best { k } else { k + 1 })
        .collect();
    labels.push(best);
    labels.sort_unstable();
    let obs = Observation {
        eta,
        failure: best as u32 + 1,
        sampled: labels.iter().map(|&k| k as u32 + 1).collect(),
        time,
        covariates: labels.iter().map(|&k| z[k]).collect(),
    };
    Ok((obs, tied))
}

/// One stratum followed to its first failure, with `m - 1` controls drawn
/// uniformly from the members still at risk.
pub fn simulate_group(config: &ModelConfig, rng: &mut RngStream) -> Result<Observation> {
    draw_group(config, rng).map(|(obs, _)| obs)
}

/// `n` strata of replication `replication`; group `j` uses stream
/// `(replication, j)` of `seed`.
pub fn simulate_replication(
    config: &ModelConfig,
    n: usize,
    seed: u64,
    replication: u32,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Empty("a dataset needs at least one group".into()));
    }
    if n > u32::MAX as usize {
        return Err(Error::Domain(format!("{n} groups exceed the stream address space")));
    }
    let draws: Vec<(Observation, bool)> = (0..n as u32)
        .into_par_iter()
        .map(|j| draw_group(config, &mut RngStream::for_group(seed, replication, j)))
        .collect::<Result<_>>()?;
    let ties = draws.iter().filter(|d| d.1).count();
    let observations = draws.into_iter().map(|d| d.0).collect();
    Ok(Dataset {
        observations,
        fingerprint: config.fingerprint(),
        seed,
        ties,
    })
}

pub fn simulate_dataset(config: &ModelConfig, n: usize, seed: u64) -> Result<Dataset> {
    simulate_replication(config, n, seed, 0)
}

/// Null-model diagnostics for a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GofReport {
    pub n: usize,
    /// Kolmogorov–Smirnov distance of the failure times from `1 - E[Ḡ^η]`.
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    /// Pearson statistic of the observed group sizes against `ϱ`.
    pub eta_chi_square: f64,
    pub eta_degrees_of_freedom: usize,
    pub eta_p_value: f64,
    /// Count of group sizes outside the support of `ϱ`.
    pub eta_outside_support: usize,
    /// z statistic of the failure covariate mean against `E Z`.
    pub failure_mean_z: f64,
    pub failure_mean_p_value: f64,
    /// z statistic of the control covariate mean against `E Z`.
    pub control_mean_z: f64,
    pub control_mean_p_value: f64,
    /// Studentised statistic of the mean squared deviation against `Var Z`.
    pub second_moment_z: f64,
    pub second_moment_p_value: f64,
    pub ties: usize,
}

impl GofReport {
    pub fn min_p_value(&self) -> f64 {
        [
            self.ks_p_value,
            self.eta_p_value,
            self.failure_mean_p_value,
            self.control_mean_p_value,
            self.second_moment_p_value,
        ]
        .into_iter()
        .fold(1.0, f64::min)
    }

    pub fn passes(&self, level: f64) -> bool {
        self.eta_outside_support == 0 && self.min_p_value() > level
    }
}

/// Asymptotic Kolmogorov distribution tail `P(K > λ)`.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn two_sided_normal_p(z: f64) -> f64 {
    if !z.is_finite() {
        return 0.0;
    }
    2.0 * Normal::new(0.0, 1.0).expect("standard normal").sf(z.abs())
}

fn mean_z(values: &[f64], mean: f64, variance: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let avg = values.iter().sum::<f64>() / n;
    (avg - mean) / (variance / n).sqrt()
}

pub fn goodness_of_fit_check(dataset: &Dataset, config: &ModelConfig) -> Result<GofReport> {
    let obs = dataset.observations();
    if obs.is_empty() {
        return Err(Error::Empty("goodness-of-fit check on an empty dataset".into()));
    }
    let n = obs.len();
    let nf = n as f64;

    let mut times: Vec<f64> = obs.iter().map(|x| x.time).collect();
    times.sort_by(f64::total_cmp);
    let cdf = |t: f64| {
        let u = config.baseline.survival(t);
        1.0 - config.group_size.expect(|e| u.powf(e))
    };
    let mut ks: f64 = 0.0;
    for (j, &t) in times.iter().enumerate() {
        let f = cdf(t);
        ks = ks.max((j as f64 + 1.0) / nf - f).max(f - j as f64 / nf);
    }
    let root = nf.sqrt();
    let ks_p_value = kolmogorov_tail((root + 0.12 + 0.11 / root) * ks);

    let support = config.group_size.support();
    let mut counts = vec![0usize; support.len()];
    let mut eta_outside_support = 0;
    for x in obs {
        match support.iter().position(|&e| e == x.eta) {
            Some(k) => counts[k] += 1,
            None => eta_outside_support += 1,
        }
    }
    let eta_chi_square: f64 = counts
        .iter()
        .zip(config.group_size.probabilities())
        .map(|(&c, &p)| {
            let expected = nf * p;
            (c as f64 - expected).powi(2) / expected
        })
        .sum();
    let df = support.len() - 1;
    let eta_p_value = if eta_outside_support > 0 {
        0.0
    } else if df == 0 {
        1.0
    } else {
        ChiSquared::new(df as f64).expect("positive degrees of freedom").sf(eta_chi_square)
    };

    let mean = config.covariate.mean();
    let var = config.covariate.variance();
    let failure: Vec<f64> = obs.iter().map(Observation::failure_covariate).collect();
    let controls: Vec<f64> = obs
        .iter()
        .flat_map(|x| {
            let slot = x.failure_slot();
            x.covariates
                .iter()
                .enumerate()
                .filter(move |(k, _)| *k != slot)
                .map(|(_, &z)| z)
        })
        .collect();
    let failure_mean_z = mean_z(&failure, mean, var);
    let control_mean_z = mean_z(&controls, mean, var);

    let squares: Vec<f64> = obs
        .iter()
        .flat_map(|x| x.covariates.iter().map(|z| (z - mean).powi(2)))
        .collect();
    let k = squares.len() as f64;
    let avg = squares.iter().sum::<f64>() / k;
    let spread = squares.iter().map(|s| (s - avg).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    let second_moment_z = if spread > 0.0 {
        (avg - var) / (spread / k).sqrt()
    } else {
        0.0
    };

    Ok(GofReport {
        n,
        ks_statistic: ks,
        ks_p_value,
        eta_chi_square,
        eta_degrees_of_freedom: df,
        eta_p_value,
        eta_outside_support,
        failure_mean_z,
        failure_mean_p_value: two_sided_normal_p(failure_mean_z),
        control_mean_z,
        control_mean_p_value: if controls.is_empty() { 1.0 } else { two_sided_normal_p(control_mean_z) },
        second_moment_z,
        second_moment_p_value: two_sided_normal_p(second_moment_z),
        ties: dataset.ties(),
    })
}
