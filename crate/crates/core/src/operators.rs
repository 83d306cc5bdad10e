//! Discretised score operators at the null and checks of their algebra.
//!
//! Everything is stored relative to the natural square-root densities:
//!
//! * a time direction `α` is held as `a = α / g^{1/2}` at the nodes of a
//!   [`TimeGrid`], so `⟨α₁, α₂⟩ = Σ_k w_k a₁ a₂` with `u = Ḡ(t)`;
//! * a covariate direction `β` is held as `b = β / h^{1/2}` at the nodes of
//!   the covariate rule, so `⟨β₁, β₂⟩ = Σ_j p_j b₁ b₂`;
//! * an element `μ` of `L²(σ)` is held as `μ / f₀^{1/2}`.
//!
//! At the null, `f₀` depends on `(i, r)` only through which sampled slot is
//! the failure, so the sum over `(η, i, r)` collapses to one term per `η`
//! with multiplicity weight `η`. Grid points are `(η, t_k, q)` where the
//! tuple `q` lists the covariate node of the failure (slot 0) followed by
//! the `m − 1` controls.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{GroupSizeDistribution, ModelConfig};
use crate::quadrature::{next_id, CovariateRule, TimeGrid};
use crate::rng::RngStream;

/// Largest number of covariate tuples a scheme will allocate.
const MAX_TUPLES: usize = 1 << 22;

/// Admissibility: accepted as is below this, projected up to [`PROJECTION_LIMIT`].
pub const ADMISSIBILITY_TOLERANCE: f64 = 1e-8;
pub const PROJECTION_LIMIT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeOptions {
    pub time_nodes: usize,
    /// Grading exponent `p` in `u = v^p`.
    pub grading: u32,
    pub covariate_nodes: usize,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        SchemeOptions {
            time_nodes: 64,
            grading: 3,
            covariate_nodes: 32,
        }
    }
}

/// Tensor quadrature for `σ` at the null.
#[derive(Debug, Clone)]
pub struct QuadratureScheme {
    id: u64,
    config: ModelConfig,
    time: TimeGrid,
    cov: CovariateRule,
    m: usize,
    etas: Vec<(u32, f64)>,
    tuples: usize,
    /// Covariate node of every slot, `tuples × m`.
    slots: Vec<u32>,
    /// Product of the covariate weights of a tuple.
    tuple_weight: Vec<f64>,
    /// Product of the covariate weights of the other slots, `tuples × m`.
    other_weight: Vec<f64>,
    /// `ϱ(η) η w_k u_k^{η−1}` per `η` and time node.
    time_weight: Vec<Vec<f64>>,
}

impl QuadratureScheme {
    pub fn new(config: &ModelConfig, options: &SchemeOptions) -> Result<Self> {
        if config.theta != 0.0 {
            return Err(Error::Domain(format!(
                "operators are defined at the null, got theta = {}",
                config.theta
            )));
        }
        let m = config.m as usize;
        if m < 1 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if config.group_size.min() < config.m {
            return Err(Error::Domain(format!(
                "group size {} is smaller than m = {m}",
                config.group_size.min()
            )));
        }
        if options.covariate_nodes < 1 {
            return Err(Error::Domain("covariate rule needs at least one node".into()));
        }
        let q = options.covariate_nodes;
        let tuples = (0..m)
            .try_fold(1usize, |acc, _| acc.checked_mul(q))
            .filter(|&t| t <= MAX_TUPLES)
            .ok_or_else(|| {
                Error::Domain(format!("{q}^{m} covariate tuples exceed the grid budget"))
            })?;
        let time = TimeGrid::full(&config.baseline, options.time_nodes, options.grading)?;
        let cov = config.covariate.rule(q);
        let pw = cov.weights();

        let mut slots = vec![0u32; tuples * m];
        let mut tuple_weight = vec![0.0; tuples];
        let mut other_weight = vec![0.0; tuples * m];
        for t in 0..tuples {
            let mut rest = t;
            for s in 0..m {
                slots[t * m + s] = (rest % q) as u32;
                rest /= q;
            }
            let nodes = &slots[t * m..(t + 1) * m];
            tuple_weight[t] = nodes.iter().map(|&j| pw[j as usize]).product();
            for s in 0..m {
                other_weight[t * m + s] = nodes
                    .iter()
                    .enumerate()
                    .filter(|&(s2, _)| s2 != s)
                    .map(|(_, &j)| pw[j as usize])
                    .product();
            }
        }
        let etas: Vec<(u32, f64)> = config.group_size.iter().collect();
        let time_weight = etas
            .iter()
            .map(|&(eta, rho)| {
                time.survival()
                    .iter()
                    .zip(time.weights())
                    .map(|(u, w)| rho * eta as f64 * w * u.powi(eta as i32 - 1))
                    .collect()
            })
            .collect();
        Ok(QuadratureScheme {
            id: next_id(),
            config: config.clone(),
            time,
            cov,
            m,
            etas,
            tuples,
            slots,
            tuple_weight,
            other_weight,
            time_weight,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time
    }

    pub fn covariate_rule(&self) -> &CovariateRule {
        &self.cov
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of grid points of a [`SigmaFunction`].
    pub fn size(&self) -> usize {
        self.etas.len() * self.time.len() * self.tuples
    }

    /// Truncated time grid on `[0, horizon]` for the inverse of `A*A`.
    pub fn horizon_grid(&self, horizon: f64, nodes: usize) -> Result<TimeGrid> {
        TimeGrid::truncated(&self.config.baseline, horizon, nodes)
    }

    fn index(&self, e: usize, k: usize, q: usize) -> usize {
        (e * self.time.len() + k) * self.tuples + q
    }

    fn tuple(&self, q: usize) -> &[u32] {
        &self.slots[q * self.m..(q + 1) * self.m]
    }

    /// Sample `μ / f₀^{1/2}` from a closure of `(η, u, z)`, where `z[0]` is
    /// the failure covariate and `z[1..]` the controls.
    pub fn sigma_from_fn(&self, f: impl Fn(u32, f64, &[f64]) -> f64) -> SigmaFunction {
        let nodes = self.cov.nodes();
        let mut z = vec![0.0; self.m];
        let mut values = vec![0.0; self.size()];
        for (e, &(eta, _)) in self.etas.iter().enumerate() {
            for (k, &u) in self.time.survival().iter().enumerate() {
                for q in 0..self.tuples {
                    for (zs, &j) in z.iter_mut().zip(self.tuple(q)) {
                        *zs = nodes[j as usize];
                    }
                    values[self.index(e, k, q)] = f(eta, u, &z);
                }
            }
        }
        SigmaFunction {
            scheme: self.id,
            values,
        }
    }

    fn check_sigma(&self, mu: &SigmaFunction) -> Result<()> {
        if mu.scheme != self.id {
            return Err(Error::SchemeMismatch);
        }
        Ok(())
    }

    fn check_time(&self, alpha: &TimeFunction) -> Result<()> {
        if alpha.grid != self.time.id() {
            return Err(Error::SchemeMismatch);
        }
        Ok(())
    }

    fn check_cov(&self, beta: &CovariateFunction) -> Result<()> {
        if beta.scheme != self.id {
            return Err(Error::SchemeMismatch);
        }
        Ok(())
    }

    /// Covariate function from `b(z) = β(z) / h^{1/2}(z)`.
    pub fn covariate_from_fn(&self, f: impl Fn(f64) -> f64) -> CovariateFunction {
        CovariateFunction {
            scheme: self.id,
            values: self.cov.nodes().iter().map(|&z| f(z)).collect(),
        }
    }

    /// Covariate function from raw reduced values at the covariate nodes.
    pub fn covariate_from_values(&self, values: Vec<f64>) -> Result<CovariateFunction> {
        if values.len() != self.cov.len() {
            return Err(Error::SchemeMismatch);
        }
        Ok(CovariateFunction {
            scheme: self.id,
            values,
        })
    }
}

/// Element of `L²(ν⁺)` sampled on a time grid, stored as `α / g^{1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFunction {
    grid: u64,
    values: Vec<f64>,
}

impl TimeFunction {
    /// From `a(u, t) = α(t) / g^{1/2}(t)` evaluated at the grid nodes.
    pub fn from_fn(grid: &TimeGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        TimeFunction {
            grid: grid.id(),
            values: grid
                .survival()
                .iter()
                .zip(grid.times())
                .map(|(&u, &t)| f(u, t))
                .collect(),
        }
    }

    pub fn from_values(grid: &TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::SchemeMismatch);
        }
        Ok(TimeFunction {
            grid: grid.id(),
            values,
        })
    }

    pub fn zero(grid: &TimeGrid) -> Self {
        TimeFunction {
            grid: grid.id(),
            values: vec![0.0; grid.len()],
        }
    }

    /// Polynomial `Σ c_j u^j` in the survival scale.
    pub fn polynomial(grid: &TimeGrid, coeffs: &[f64]) -> Self {
        Self::from_fn(grid, |u, _| horner(coeffs, u))
    }

    /// `α / g^{1/2}` at the nodes.
    pub fn reduced(&self) -> &[f64] {
        &self.values
    }

    /// `α(t_k)` itself.
    pub fn values(&self, grid: &TimeGrid) -> Vec<f64> {
        self.values
            .iter()
            .zip(grid.density())
            .map(|(a, g)| a * g.sqrt())
            .collect()
    }

    fn same_grid(&self, other: &TimeFunction) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::SchemeMismatch);
        }
        Ok(())
    }

    /// `x·self + y·other`.
    pub fn combine(&self, x: f64, other: &TimeFunction, y: f64) -> Result<Self> {
        self.same_grid(other)?;
        Ok(TimeFunction {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| x * a + y * b)
                .collect(),
        })
    }
}

fn check_on(grid: &TimeGrid, f: &TimeFunction) -> Result<()> {
    if f.grid != grid.id() {
        return Err(Error::SchemeMismatch);
    }
    Ok(())
}

/// `⟨α₁, α₂⟩_{ν⁺}` (over the grid's time range).
pub fn time_inner(grid: &TimeGrid, a: &TimeFunction, b: &TimeFunction) -> Result<f64> {
    check_on(grid, a)?;
    a.same_grid(b)?;
    Ok(grid
        .weights()
        .iter()
        .zip(a.values.iter().zip(&b.values))
        .map(|(w, (x, y))| w * x * y)
        .sum())
}

pub fn time_norm(grid: &TimeGrid, a: &TimeFunction) -> Result<f64> {
    Ok(time_inner(grid, a, a)?.max(0.0).sqrt())
}

/// Element of `L²(ν)` at the covariate nodes, stored as `β / h^{1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateFunction {
    scheme: u64,
    values: Vec<f64>,
}

impl CovariateFunction {
    pub fn reduced(&self) -> &[f64] {
        &self.values
    }

    pub fn combine(&self, x: f64, other: &CovariateFunction, y: f64) -> Result<Self> {
        if self.scheme != other.scheme {
            return Err(Error::SchemeMismatch);
        }
        Ok(CovariateFunction {
            scheme: self.scheme,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| x * a + y * b)
                .collect(),
        })
    }
}

pub fn covariate_inner(
    scheme: &QuadratureScheme,
    a: &CovariateFunction,
    b: &CovariateFunction,
) -> Result<f64> {
    scheme.check_cov(a)?;
    scheme.check_cov(b)?;
    Ok(scheme
        .cov
        .weights()
        .iter()
        .zip(a.values.iter().zip(&b.values))
        .map(|(w, (x, y))| w * x * y)
        .sum())
}

pub fn covariate_norm(scheme: &QuadratureScheme, a: &CovariateFunction) -> Result<f64> {
    Ok(covariate_inner(scheme, a, a)?.max(0.0).sqrt())
}

/// Element of `L²(σ)` on a scheme's grid, stored as `μ / f₀^{1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaFunction {
    scheme: u64,
    values: Vec<f64>,
}

impl SigmaFunction {
    pub fn reduced(&self) -> &[f64] {
        &self.values
    }

    pub fn combine(&self, x: f64, other: &SigmaFunction, y: f64) -> Result<Self> {
        if self.scheme != other.scheme {
            return Err(Error::SchemeMismatch);
        }
        Ok(SigmaFunction {
            scheme: self.scheme,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| x * a + y * b)
                .collect(),
        })
    }
}

/// `⟨μ₁, μ₂⟩_σ` by weighted grid summation.
pub fn sigma_inner(scheme: &QuadratureScheme, a: &SigmaFunction, b: &SigmaFunction) -> Result<f64> {
    scheme.check_sigma(a)?;
    scheme.check_sigma(b)?;
    let mut total = 0.0;
    for (e, tw) in scheme.time_weight.iter().enumerate() {
        for (k, &w) in tw.iter().enumerate() {
            let start = scheme.index(e, k, 0);
            let block: f64 = scheme
                .tuple_weight
                .iter()
                .zip(&a.values[start..start + scheme.tuples])
                .zip(&b.values[start..start + scheme.tuples])
                .map(|((p, x), y)| p * x * y)
                .sum();
            total += w * block;
        }
    }
    Ok(total)
}

pub fn sigma_norm(scheme: &QuadratureScheme, a: &SigmaFunction) -> Result<f64> {
    Ok(sigma_inner(scheme, a, a)?.max(0.0).sqrt())
}

/// Project onto `⟨α, g^{1/2}⟩ = 0`: unchanged below the admissibility
/// tolerance, projected up to the projection limit, rejected beyond.
pub fn admissible_time(grid: &TimeGrid, alpha: &TimeFunction) -> Result<TimeFunction> {
    check_on(grid, alpha)?;
    if !grid.is_full_line() {
        return Err(Error::Domain(
            "admissibility needs the whole half line, not a truncated grid".into(),
        ));
    }
    let c = grid.integrate(&alpha.values);
    let mass: f64 = grid.weights().iter().sum();
    project(c, alpha.values.clone(), mass).map(|values| TimeFunction {
        grid: alpha.grid,
        values,
    })
}

/// Project onto `⟨β, h^{1/2}⟩ = 0` with the same rule as [`admissible_time`].
pub fn admissible_covariate(
    scheme: &QuadratureScheme,
    beta: &CovariateFunction,
) -> Result<CovariateFunction> {
    scheme.check_cov(beta)?;
    let c = scheme.cov.expect_values(&beta.values);
    let mass: f64 = scheme.cov.weights().iter().sum();
    project(c, beta.values.clone(), mass).map(|values| CovariateFunction {
        scheme: beta.scheme,
        values,
    })
}

fn project(c: f64, mut values: Vec<f64>, mass: f64) -> Result<Vec<f64>> {
    if !c.is_finite() || c.abs() > PROJECTION_LIMIT {
        return Err(Error::NotAdmissible(c));
    }
    if c.abs() > ADMISSIBILITY_TOLERANCE {
        values.iter_mut().for_each(|v| *v -= c / mass);
    }
    Ok(values)
}

/// Parametric score `ρ₀` at the null.
pub fn score_rho0(scheme: &QuadratureScheme) -> SigmaFunction {
    let ez = scheme.config.covariate.mean();
    scheme.sigma_from_fn(|eta, u, z| {
        let lu = u.ln();
        let centred: f64 = z.iter().map(|v| v - ez).sum();
        0.5 * (z[0] + lu * centred + eta as f64 * ez * lu)
    })
}

/// `Aα = (g^{−1/2}α + (η−1) ∫_t^∞ g^{1/2}α / Ḡ) f₀^{1/2}`.
pub fn apply_a(scheme: &QuadratureScheme, alpha: &TimeFunction) -> Result<SigmaFunction> {
    scheme.check_time(alpha)?;
    let alpha = admissible_time(&scheme.time, alpha)?;
    let tail = scheme.time.integral_below(&alpha.values);
    let u = scheme.time.survival();
    let mut values = vec![0.0; scheme.size()];
    for (e, &(eta, _)) in scheme.etas.iter().enumerate() {
        for k in 0..u.len() {
            let v = alpha.values[k] + (eta as f64 - 1.0) * tail[k] / u[k];
            let start = scheme.index(e, k, 0);
            values[start..start + scheme.tuples].fill(v);
        }
    }
    Ok(SigmaFunction {
        scheme: scheme.id,
        values,
    })
}

/// `Bβ = Σ_{j∈r} h^{−1/2}(z_j) β(z_j) f₀^{1/2}`.
pub fn apply_b(scheme: &QuadratureScheme, beta: &CovariateFunction) -> Result<SigmaFunction> {
    let beta = admissible_covariate(scheme, beta)?;
    let per_tuple: Vec<f64> = (0..scheme.tuples)
        .map(|q| scheme.tuple(q).iter().map(|&j| beta.values[j as usize]).sum())
        .collect();
    let mut values = vec![0.0; scheme.size()];
    for block in values.chunks_mut(scheme.tuples) {
        block.copy_from_slice(&per_tuple);
    }
    Ok(SigmaFunction {
        scheme: scheme.id,
        values,
    })
}

/// `A* = A₁* + A₂*`.
pub fn adjoint_a(scheme: &QuadratureScheme, mu: &SigmaFunction) -> Result<TimeFunction> {
    scheme.check_sigma(mu)?;
    let u = scheme.time.survival();
    let n = u.len();
    let mut out = vec![0.0; n];
    for (e, &(eta, rho)) in scheme.etas.iter().enumerate() {
        let ef = eta as f64;
        let marginal: Vec<f64> = (0..n)
            .map(|k| {
                let start = scheme.index(e, k, 0);
                scheme
                    .tuple_weight
                    .iter()
                    .zip(&mu.values[start..start + scheme.tuples])
                    .map(|(p, v)| p * v)
                    .sum()
            })
            .collect();
        let inner: Vec<f64> = (0..n)
            .map(|k| u[k].powi(eta as i32 - 2) * marginal[k])
            .collect();
        let head = scheme.time.integral_above(&inner);
        for k in 0..n {
            out[k] += rho
                * ef
                * (marginal[k] * u[k].powi(eta as i32 - 1) + (ef - 1.0) * head[k]);
        }
    }
    Ok(TimeFunction {
        grid: scheme.time.id(),
        values: out,
    })
}

/// `B*μ = h^{−1/2}(z) Σ_{η,i,r} Σ_{j∈r} ∫∫ f₀^{1/2} μ` over time and the
/// other sampled covariates.
pub fn adjoint_b(scheme: &QuadratureScheme, mu: &SigmaFunction) -> Result<CovariateFunction> {
    scheme.check_sigma(mu)?;
    let mut per_tuple = vec![0.0; scheme.tuples];
    for (e, tw) in scheme.time_weight.iter().enumerate() {
        for (k, &w) in tw.iter().enumerate() {
            let start = scheme.index(e, k, 0);
            for (acc, v) in per_tuple.iter_mut().zip(&mu.values[start..start + scheme.tuples]) {
                *acc += w * v;
            }
        }
    }
    let mut out = vec![0.0; scheme.cov.len()];
    for (q, &t) in per_tuple.iter().enumerate() {
        for (s, &j) in scheme.tuple(q).iter().enumerate() {
            out[j as usize] += scheme.other_weight[q * scheme.m + s] * t;
        }
    }
    Ok(CovariateFunction {
        scheme: scheme.id,
        values: out,
    })
}

/// `Rα = g^{−1/2}α + ∫₀^t g^{1/2}α / Ḡ`. The result lives in `L²(G)` and
/// its reduced values are `Rα` itself.
pub fn apply_r(grid: &TimeGrid, alpha: &TimeFunction) -> Result<TimeFunction> {
    check_on(grid, alpha)?;
    let head = grid.integral_above(&alpha.values);
    Ok(TimeFunction {
        grid: alpha.grid,
        values: alpha
            .values
            .iter()
            .zip(&head)
            .zip(grid.survival())
            .map(|((a, h), u)| a + h / u)
            .collect(),
    })
}

/// The tail form `g^{−1/2}α − ∫_t^∞ g^{1/2}α / Ḡ`, equal to [`apply_r`]
/// for admissible `α`. Needs the whole half line.
pub fn apply_r_tail(grid: &TimeGrid, alpha: &TimeFunction) -> Result<TimeFunction> {
    check_on(grid, alpha)?;
    if !grid.is_full_line() {
        return Err(Error::Domain("the tail form of R needs the whole half line".into()));
    }
    let tail = grid.integral_below(&alpha.values);
    Ok(TimeFunction {
        grid: alpha.grid,
        values: alpha
            .values
            .iter()
            .zip(&tail)
            .zip(grid.survival())
            .map(|((a, t), u)| a - t / u)
            .collect(),
    })
}

/// `φ(u) ± ∫_u^1 …` kernel shared by `A*A` and its inverse:
/// `[Rα·φ − ∫₀^t Rα·φ dG/Ḡ] g^{1/2}`.
fn volterra(grid: &TimeGrid, alpha: &TimeFunction, phi: impl Fn(f64) -> f64) -> Result<TimeFunction> {
    let r = apply_r(grid, alpha)?;
    let u = grid.survival();
    let scaled: Vec<f64> = r.values.iter().zip(u).map(|(v, &x)| v * phi(x)).collect();
    let inner: Vec<f64> = scaled.iter().zip(u).map(|(v, x)| v / x).collect();
    let head = grid.integral_above(&inner);
    Ok(TimeFunction {
        grid: alpha.grid,
        values: scaled.iter().zip(&head).map(|(s, h)| s - h).collect(),
    })
}

/// `A*Aα` in closed form, with `M₀/Ḡ = E[η Ḡ^{η−1}]`. Depends on `α` only
/// over `[0, t]`, so it is also valid on a truncated grid for admissible `α`.
pub fn astar_a(
    grid: &TimeGrid,
    group_size: &GroupSizeDistribution,
    alpha: &TimeFunction,
) -> Result<TimeFunction> {
    volterra(grid, alpha, |u| group_size.expect(|e| e * u.powf(e - 1.0)))
}

/// `(A*A)⁻¹α`: as [`astar_a`] with `M₀/Ḡ` replaced by `Ḡ/M₀`. Only defined
/// on a truncated grid where `M₀` stays away from zero.
pub fn astar_a_inv(
    grid: &TimeGrid,
    group_size: &GroupSizeDistribution,
    alpha: &TimeFunction,
) -> Result<TimeFunction> {
    if grid.is_full_line() {
        return Err(Error::Domain(
            "the inverse of A*A needs a truncated grid with positive survival".into(),
        ));
    }
    volterra(grid, alpha, |u| 1.0 / group_size.expect(|e| e * u.powf(e - 1.0)))
}

/// `α̂ = (EZ/2)(1 + log Ḡ) g^{1/2}`.
pub fn alpha_hat(scheme: &QuadratureScheme) -> TimeFunction {
    let ez = scheme.config.covariate.mean();
    TimeFunction::from_fn(&scheme.time, |u, _| 0.5 * ez * (1.0 + u.ln()))
}

/// `E[(η − m)/(m η)]`.
fn beta_hat_factor(config: &ModelConfig) -> f64 {
    let m = config.m as f64;
    config.group_size.expect(|e| (e - m) / (m * e))
}

/// `β̂ = ½ h^{1/2} E[(η−m)/(mη)] (z − EZ)`.
pub fn beta_hat(scheme: &QuadratureScheme) -> CovariateFunction {
    let c = 0.5 * beta_hat_factor(&scheme.config);
    let ez = scheme.config.covariate.mean();
    scheme.covariate_from_fn(|z| c * (z - ez))
}

/// `A*ρ₀ = (EZ/2) g^{1/2} E[η/(η−1) (η Ḡ^{η−1} − 1)]` in closed form.
pub fn astar_rho0_closed_form(scheme: &QuadratureScheme) -> TimeFunction {
    let ez = scheme.config.covariate.mean();
    let g = &scheme.config.group_size;
    TimeFunction::from_fn(&scheme.time, |u, _| {
        0.5 * ez * g.expect(|e| e / (e - 1.0) * (e * u.powf(e - 1.0) - 1.0))
    })
}

/// `δ̂ = Aα̂ + Bβ̂`, the projection of `ρ₀` on the nuisance tangent space.
pub fn projection(scheme: &QuadratureScheme) -> Result<SigmaFunction> {
    apply_a(scheme, &alpha_hat(scheme))?.combine(1.0, &apply_b(scheme, &beta_hat(scheme))?, 1.0)
}

/// `4 ‖ρ₀ − Aα̂ − Bβ̂‖²_σ`.
pub fn information_by_quadrature(scheme: &QuadratureScheme) -> Result<f64> {
    let residual = score_rho0(scheme).combine(1.0, &projection(scheme)?, -1.0)?;
    Ok(4.0 * sigma_inner(scheme, &residual, &residual)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HellingerCheck {
    /// `‖(f_ε^{1/2} − f₀^{1/2})/ε − ζ‖_σ`.
    pub residual_norm: f64,
    /// `‖ζ‖_σ` with `ζ = τρ₀ + Aα + Bβ`.
    pub zeta_norm: f64,
}

/// Perturb `(θ, g, h)` along `(τ, α, β)` by `ε` and compare the difference
/// quotient of root densities with its first-order limit.
pub fn hellinger_direction_check(
    scheme: &QuadratureScheme,
    tau: f64,
    alpha: &TimeFunction,
    beta: &CovariateFunction,
    eps: f64,
) -> Result<HellingerCheck> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!("step {eps} must be positive")));
    }
    let alpha = admissible_time(&scheme.time, alpha)?;
    let beta = admissible_covariate(scheme, beta)?;
    let a = &alpha.values;
    let b = &beta.values;
    if a.iter().chain(b).any(|v| 1.0 + eps * v <= 0.0) {
        return Err(Error::StepTooLarge(eps));
    }
    let zeta = score_rho0(scheme)
        .combine(tau, &apply_a(scheme, &alpha)?, 1.0)?
        .combine(1.0, &apply_b(scheme, &beta)?, 1.0)?;

    let grid = &scheme.time;
    let u = grid.survival();
    let n = u.len();
    let log_u: Vec<f64> = u.iter().map(|x| x.ln()).collect();
    let sq: Vec<f64> = a.iter().map(|v| v * v).collect();
    let la = grid.integral_below(a);
    let la2 = grid.integral_below(&sq);
    // Normalisers relative to the grid's own total mass.
    let cg: f64 = grid.weights().iter().zip(a).map(|(w, v)| w * (1.0 + eps * v).powi(2)).sum::<f64>()
        / grid.weights().iter().sum::<f64>();
    // log(Ḡ_ε / Ḡ) and log(g_ε / g) at the time nodes.
    let dg: Vec<f64> = (0..n)
        .map(|k| (2.0 * eps * la[k] / u[k] + eps * eps * la2[k] / u[k]).ln_1p() - cg.ln())
        .collect();
    let lg: Vec<f64> = a.iter().map(|v| 2.0 * (eps * v).ln_1p() - cg.ln()).collect();

    let theta = eps * tau;
    let z = scheme.cov.nodes();
    let pw = scheme.cov.weights();
    let ch: f64 =
        pw.iter().zip(b).map(|(w, v)| w * (1.0 + eps * v).powi(2)).sum::<f64>() / pw.iter().sum::<f64>();
    let lh: Vec<f64> = b.iter().map(|v| 2.0 * (eps * v).ln_1p() - ch.ln()).collect();
    let log_mass = pw.iter().sum::<f64>().ln();
    let rr: Vec<f64> = z.iter().map(|v| (theta * v).exp()).collect();
    let rr1: Vec<f64> = z.iter().map(|v| (theta * v).exp_m1()).collect();
    // log(Ḡ_{ε,θ} / Ḡ): mixture over the perturbed covariate law.
    let mix: Vec<f64> = (0..n)
        .map(|k| {
            let terms: Vec<f64> = (0..z.len())
                .filter(|&j| pw[j] > 0.0)
                .map(|j| pw[j].ln() + lh[j] + rr1[j] * log_u[k] + rr[j] * dg[k])
                .collect();
            let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln() - log_mass
        })
        .collect();

    let m = scheme.m;
    let mut residual = vec![0.0; scheme.size()];
    for (e, &(eta, _)) in scheme.etas.iter().enumerate() {
        let free = (eta as usize - m) as f64;
        for k in 0..n {
            for q in 0..scheme.tuples {
                let nodes = scheme.tuple(q);
                let f = nodes[0] as usize;
                let mut log_ratio = lg[k] + theta * z[f] - dg[k] + free * mix[k];
                for &j in nodes {
                    let j = j as usize;
                    log_ratio += rr1[j] * log_u[k] + rr[j] * dg[k] + lh[j];
                }
                let idx = scheme.index(e, k, q);
                residual[idx] = (0.5 * log_ratio).exp_m1() / eps - zeta.values[idx];
            }
        }
    }
    let residual = SigmaFunction {
        scheme: scheme.id,
        values: residual,
    };
    Ok(HellingerCheck {
        residual_norm: sigma_norm(scheme, &residual)?,
        zeta_norm: sigma_norm(scheme, &zeta)?,
    })
}

/// Largest `ε` keeping `1 + ε a` and `1 + ε b` positive, scaled by `fraction`.
pub fn hellinger_step(alpha: &TimeFunction, beta: &CovariateFunction, fraction: f64) -> f64 {
    let worst = alpha
        .values
        .iter()
        .chain(&beta.values)
        .fold(0.0f64, |m, v| m.max(-v));
    if worst > 0.0 {
        fraction / worst
    } else {
        fraction
    }
}

/// Ratio of Hellinger residual norms at `ε/2` and `ε`, with `ε` a quarter
/// of the admissible step.
pub fn hellinger_halving_ratio(
    scheme: &QuadratureScheme,
    tau: f64,
    alpha: &TimeFunction,
    beta: &CovariateFunction,
) -> Result<f64> {
    let eps = hellinger_step(alpha, beta, 0.25);
    let coarse = hellinger_direction_check(scheme, tau, alpha, beta, eps)?;
    let fine = hellinger_direction_check(scheme, tau, alpha, beta, 0.5 * eps)?;
    Ok(fine.residual_norm / coarse.residual_norm)
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Random polynomial `Σ_{j≤4} c_j u^j` centred so that `∫₀¹ a du = 0`
/// exactly, i.e. an admissible time direction on every grid.
pub fn random_time_coefficients<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let mut c: Vec<f64> = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mean: f64 = c.iter().enumerate().map(|(j, v)| v / (j as f64 + 1.0)).sum();
    c[0] -= mean;
    c
}

pub fn random_time_direction<R: Rng + ?Sized>(grid: &TimeGrid, rng: &mut R) -> TimeFunction {
    TimeFunction::polynomial(grid, &random_time_coefficients(rng))
}

/// Random cubic in the covariate, centred on the covariate rule.
pub fn random_covariate_direction<R: Rng + ?Sized>(
    scheme: &QuadratureScheme,
    rng: &mut R,
) -> CovariateFunction {
    let c: Vec<f64> = (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let raw = scheme.covariate_from_fn(|z| horner(&c, z));
    let mean = scheme.cov.expect_values(&raw.values);
    scheme.covariate_from_fn(|z| horner(&c, z) - mean)
}

/// Smooth random element of `L²(σ)`: a low-order polynomial in
/// `(u, z_fail, z_last)` with coefficients depending on `η`.
pub fn random_sigma<R: Rng + ?Sized>(scheme: &QuadratureScheme, rng: &mut R) -> SigmaFunction {
    let coeffs: Vec<[f64; 6]> = scheme
        .etas
        .iter()
        .map(|_| std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let etas: Vec<u32> = scheme.etas.iter().map(|e| e.0).collect();
    scheme.sigma_from_fn(|eta, u, z| {
        let c = &coeffs[etas.iter().position(|&e| e == eta).expect("eta in support")];
        let (zf, zl) = (z[0], z[z.len() - 1]);
        c[0] + c[1] * u + c[2] * zf + c[3] * zl * u + c[4] * zf * zl + c[5] * u * u
    })
}

/// One line of the identity suite.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub residual: f64,
    pub tolerance: f64,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.residual <= self.tolerance
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub directions: usize,
    pub seed: u64,
    /// Survival level `Ḡ(T₀)` of the truncated grid used for `(A*A)⁻¹`.
    pub horizon_survival: f64,
    pub horizon_nodes: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            directions: 20,
            seed: 2024,
            horizon_survival: 0.05,
            horizon_nodes: 64,
        }
    }
}

/// Adjoint identities, orthogonality, normal equations, projection and
/// information checks on random admissible directions.
pub fn identity_suite(scheme: &QuadratureScheme, options: &SuiteOptions) -> Result<Vec<IdentityCheck>> {
    let grid = &scheme.time;
    let config = &scheme.config;
    let mut rng = RngStream::new(options.seed, 0);
    let mut worst = [0.0f64; 9];
    let rho0 = score_rho0(scheme);
    let delta = projection(scheme)?;
    let resid = rho0.combine(1.0, &delta, -1.0)?;
    let horizon = config.baseline.quantile(options.horizon_survival);
    let hgrid = scheme.horizon_grid(horizon, options.horizon_nodes)?;

    for _ in 0..options.directions {
        let alpha = random_time_direction(grid, &mut rng);
        let beta = random_covariate_direction(scheme, &mut rng);
        let mu = random_sigma(scheme, &mut rng);
        let a_alpha = apply_a(scheme, &alpha)?;
        let b_beta = apply_b(scheme, &beta)?;

        let lhs = sigma_inner(scheme, &a_alpha, &mu)?;
        let rhs = time_inner(grid, &alpha, &adjoint_a(scheme, &mu)?)?;
        worst[0] = worst[0].max((lhs - rhs).abs());

        let lhs = sigma_inner(scheme, &b_beta, &mu)?;
        let rhs = covariate_inner(scheme, &beta, &adjoint_b(scheme, &mu)?)?;
        worst[1] = worst[1].max((lhs - rhs).abs());

        let bstar_a = adjoint_b(scheme, &a_alpha)?;
        let sup = bstar_a.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst[2] = worst[2].max(sup);
        worst[2] = worst[2].max(time_norm(grid, &adjoint_a(scheme, &b_beta)?)?);

        let both = a_alpha.combine(1.0, &b_beta, 1.0)?;
        worst[3] = worst[3].max(sigma_inner(scheme, &resid, &both)?.abs());

        let head = apply_r(grid, &alpha)?;
        let tail = apply_r_tail(grid, &alpha)?;
        worst[4] = worst[4].max(time_norm(grid, &head.combine(1.0, &tail, -1.0)?)?);

        let direct = astar_a(grid, &config.group_size, &alpha)?;
        let composed = adjoint_a(scheme, &a_alpha)?;
        let gap = time_norm(grid, &direct.combine(1.0, &composed, -1.0)?)?;
        worst[5] = worst[5].max(gap / time_norm(grid, &direct)?.max(1.0));

        let bb = adjoint_b(scheme, &b_beta)?;
        let gap = covariate_norm(scheme, &bb.combine(1.0, &beta, -(scheme.m as f64))?)?;
        worst[6] = worst[6].max(gap / covariate_norm(scheme, &beta)?.max(1.0));

        let coeffs = random_time_coefficients(&mut rng);
        let local = TimeFunction::polynomial(&hgrid, &coeffs);
        let forward = astar_a(&hgrid, &config.group_size, &local)?;
        let back = astar_a_inv(&hgrid, &config.group_size, &forward)?;
        let gap = time_norm(&hgrid, &back.combine(1.0, &local, -1.0)?)?;
        worst[7] = worst[7].max(gap / time_norm(&hgrid, &local)?);

        let tau: f64 = rng.sample(StandardNormal);
        let ratio = hellinger_halving_ratio(scheme, tau, &alpha, &beta)?;
        worst[8] = worst[8].max((ratio - 0.5).abs());
    }

    let alpha_hat = alpha_hat(scheme);
    let astar_rho = adjoint_a(scheme, &rho0)?;
    let normal_a = time_norm(
        grid,
        &astar_a(grid, &config.group_size, &alpha_hat)?.combine(1.0, &astar_rho, -1.0)?,
    )?;
    let closed_a = time_norm(
        grid,
        &astar_rho.combine(1.0, &astar_rho0_closed_form(scheme), -1.0)?,
    )?;
    let beta_hat = beta_hat(scheme);
    let m = scheme.m as f64;
    let bstar_rho = adjoint_b(scheme, &rho0)?;
    let normal_b = covariate_norm(scheme, &bstar_rho.combine(1.0, &beta_hat, -m)?)?;
    let bb_hat = adjoint_b(scheme, &apply_b(scheme, &beta_hat)?)?;
    let normal_bb = covariate_norm(scheme, &bb_hat.combine(1.0, &beta_hat, -m)?)?;

    let r_hat = apply_r(grid, &astar_rho0_closed_form(scheme))?;
    let ez = config.covariate.mean();
    let m1 = TimeFunction::from_fn(grid, |u, _| {
        0.5 * ez * config.group_size.expect(|e| e * u.powf(e - 1.0))
    });
    let r_gap = time_norm(grid, &r_hat.combine(1.0, &m1, -1.0)?)?;

    let total = sigma_inner(scheme, &rho0, &rho0)?;
    let pyth = (total - sigma_inner(scheme, &resid, &resid)? - sigma_inner(scheme, &delta, &delta)?).abs();
    let info = 4.0 * sigma_inner(scheme, &resid, &resid)?;
    let closed = crate::bounds::effective_information(&crate::bounds::BoundsInput::from_config(config));
    let info_gap = (info - closed).abs() / closed.abs().max(f64::MIN_POSITIVE);
    let ones = scheme.sigma_from_fn(|_, _, _| 1.0);
    let mass = (sigma_inner(scheme, &ones, &ones)? - 1.0).abs();

    let check = |name, residual, tolerance| IdentityCheck { name, residual, tolerance };
    Ok(vec![
        check("density normalisation <f0^1/2, f0^1/2> = 1", mass, 1e-6),
        check("adjoint <A a, mu> = <a, A* mu>", worst[0], 1e-8),
        check("adjoint <B b, mu> = <b, B* mu>", worst[1], 1e-8),
        check("orthogonality B*A = 0 and A*B = 0", worst[2], 1e-8),
        check("projection residual orthogonal to A a + B b", worst[3], 1e-8),
        check("head and tail forms of R agree", worst[4], 1e-8),
        check("A*A closed form = A*(A a)", worst[5], 1e-6),
        check("B*B b = m b", worst[6], 1e-6),
        check("(A*A)^-1 (A*A a) = a on the horizon", worst[7], 1e-6),
        check("A*rho0 matches its closed form", closed_a, 1e-6),
        check("normal equation A*A alpha_hat = A*rho0", normal_a, 1e-6),
        check("normal equation B*rho0 = m beta_hat", normal_b, 1e-6),
        check("B*B beta_hat = m beta_hat", normal_bb, 1e-6),
        check("R(A*rho0) = M1 / (2 G)", r_gap, 1e-6),
        check("Pythagoras |rho0|^2 = |rho0 - d|^2 + |d|^2", pyth, 1e-8),
        check("information by quadrature vs closed form (relative)", info_gap, 1e-6),
        check("Hellinger residual halves with the step: |ratio - 1/2|", worst[8], 0.15),
    ])
}
