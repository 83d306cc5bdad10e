//! Gaussian quadrature rules and the discretisations built on them.
//!
//! Time integrals are carried out in the probability scale `u = Ḡ(t)`, so
//! `∫ F(t) g(t) dt = ∫₀¹ F(Ḡ⁻¹(u)) du`. On the full half line the nodes are
//! graded towards `u = 0` through `u = v^p`, which turns the `log u`
//! singularities of score-type integrands into `v^{p-1} log v` and restores
//! fast convergence of Gauss–Legendre in `v`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::model::BaselineModel;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Fresh identity tag for grids and schemes.
pub(crate) fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

type Rule = (Vec<f64>, Vec<f64>);
type RuleCache = Mutex<HashMap<usize, Rule>>;

fn cached(cache: &'static OnceLock<RuleCache>, n: usize, build: fn(usize) -> Rule) -> Rule {
    let cache = cache.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().expect("rule cache").get(&n) {
        return rule.clone();
    }
    let rule = build(n);
    cache.lock().expect("rule cache").insert(n, rule.clone());
    rule
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    cached(&CACHE, n, build_legendre)
}

fn build_legendre(n: usize) -> Rule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, p_prev) = legendre_pair(n, x);
            dp = nf * (x * p - p_prev) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (p, p_prev) = legendre_pair(n, x);
        if p.abs() > 0.0 {
            dp = nf * (x * p - p_prev) / (x * x - 1.0);
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

/// Gauss–Hermite rule for the standard normal weight: `Σ w_k f(z_k) ≈ ∫ f φ`.
/// Weights sum to one; nodes ascending.
pub fn gauss_hermite_normal(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    cached(&CACHE, n, build_hermite)
}

fn build_hermite(n: usize) -> Rule {
    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..half {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let (p1, p2) = hermite_normalised(n, z, pim4);
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, p2) = hermite_normalised(n, z, pim4);
        if p2 != 0.0 {
            pp = (2.0 * nf).sqrt() * p2;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    // Physicists' rule (weight e^{-x²}) to the standard normal weight.
    let scale = 2.0f64.sqrt();
    let norm = PI.sqrt();
    let mut nodes: Vec<f64> = x.iter().map(|v| v * scale).collect();
    let mut weights: Vec<f64> = w.iter().map(|v| v / norm).collect();
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

fn hermite_normalised(n: usize, z: f64, pim4: f64) -> (f64, f64) {
    let mut p1 = pim4;
    let mut p2 = 0.0;
    for j in 1..=n {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, p2)
}

/// Barycentric weights of Gauss–Legendre nodes (up to a common factor).
fn legendre_barycentric(nodes: &[f64], weights: &[f64]) -> Vec<f64> {
    nodes
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(j, (&x, &w))| {
            let s = ((1.0 - x * x) * w).sqrt();
            if j % 2 == 0 {
                s
            } else {
                -s
            }
        })
        .collect()
}

/// Values of all Lagrange basis polynomials at `y`.
fn lagrange_basis(nodes: &[f64], bary: &[f64], y: f64, out: &mut [f64]) {
    if let Some(j) = nodes.iter().position(|&x| x == y) {
        out.iter_mut().for_each(|o| *o = 0.0);
        out[j] = 1.0;
        return;
    }
    let mut denom = 0.0;
    for ((o, &x), &l) in out.iter_mut().zip(nodes).zip(bary) {
        *o = l / (y - x);
        denom += *o;
    }
    out.iter_mut().for_each(|o| *o /= denom);
}

/// Spectral integration matrix: row `k` integrates the interpolant of the
/// nodal values from `-1` up to node `k`. Exact for polynomials of degree `< n`.
fn left_integration_matrix(nodes: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let bary = legendre_barycentric(nodes, weights);
    let mut mat = vec![0.0; n * n];
    let mut basis = vec![0.0; n];
    for k in 0..n {
        let half = 0.5 * (nodes[k] + 1.0);
        let row = &mut mat[k * n..(k + 1) * n];
        for (&xq, &wq) in nodes.iter().zip(weights) {
            let y = -1.0 + half * (xq + 1.0);
            lagrange_basis(nodes, &bary, y, &mut basis);
            for (r, b) in row.iter_mut().zip(&basis) {
                *r += half * wq * b;
            }
        }
    }
    mat
}

/// Time discretisation in the `u = Ḡ(t)` scale.
///
/// Nodes are stored in ascending `u`, i.e. descending `t`. Weights integrate
/// with respect to `du = dG`, so `Σ w_k f(u_k) ≈ ∫ f(Ḡ(t)) g(t) dt`.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    id: u64,
    u: Vec<f64>,
    weights: Vec<f64>,
    t: Vec<f64>,
    density: Vec<f64>,
    below: Vec<f64>,
    lower: f64,
    horizon: Option<f64>,
}

impl TimeGrid {
    /// Grid on the whole half line `t ∈ [0, ∞)`, graded as `u = v^grading`.
    pub fn full(baseline: &BaselineModel, nodes: usize, grading: u32) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::Domain("time grid needs at least two nodes".into()));
        }
        if grading < 1 {
            return Err(Error::Domain("grading exponent must be at least 1".into()));
        }
        let p = grading as f64;
        let (s, w) = gauss_legendre(nodes);
        let left = left_integration_matrix(&s, &w);
        let v: Vec<f64> = s.iter().map(|x| 0.5 * (x + 1.0)).collect();
        let jac: Vec<f64> = v.iter().map(|x| 0.5 * p * x.powf(p - 1.0)).collect();
        let u: Vec<f64> = v.iter().map(|x| x.powf(p)).collect();
        Ok(Self::assemble(baseline, u, &w, &jac, left, 0.0, None))
    }

    /// Grid on `[0, T₀]`, i.e. `u ∈ [Ḡ(T₀), 1]`, ungraded.
    pub fn truncated(baseline: &BaselineModel, horizon: f64, nodes: usize) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::Domain("time grid needs at least two nodes".into()));
        }
        if !(horizon > 0.0) || horizon > baseline.evaluation_horizon() {
            return Err(Error::Domain(format!(
                "horizon {horizon} outside (0, {}] where the baseline survival is positive",
                baseline.evaluation_horizon()
            )));
        }
        let lower = baseline.survival(horizon);
        let (s, w) = gauss_legendre(nodes);
        let left = left_integration_matrix(&s, &w);
        let half = 0.5 * (1.0 - lower);
        let u: Vec<f64> = s.iter().map(|x| lower + half * (x + 1.0)).collect();
        let jac = vec![half; nodes];
        Ok(Self::assemble(baseline, u, &w, &jac, left, lower, Some(horizon)))
    }

    fn assemble(
        baseline: &BaselineModel,
        u: Vec<f64>,
        w: &[f64],
        jac: &[f64],
        mut left: Vec<f64>,
        lower: f64,
        horizon: Option<f64>,
    ) -> Self {
        let n = u.len();
        for row in left.chunks_mut(n) {
            for (r, j) in row.iter_mut().zip(jac) {
                *r *= j;
            }
        }
        let weights: Vec<f64> = w.iter().zip(jac).map(|(a, b)| a * b).collect();
        let t: Vec<f64> = u.iter().map(|&x| baseline.quantile(x)).collect();
        let density = t.iter().map(|&x| baseline.density(x)).collect();
        TimeGrid {
            id: next_id(),
            u,
            weights,
            t,
            density,
            below: left,
            lower,
            horizon,
        }
    }

    /// Identity tag; functions sampled on this grid carry it.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Survival values `u_k = Ḡ(t_k)`, ascending.
    pub fn survival(&self) -> &[f64] {
        &self.u
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Time nodes `t_k = Ḡ⁻¹(u_k)`, descending.
    pub fn times(&self) -> &[f64] {
        &self.t
    }

    /// Baseline density `g(t_k)` at the nodes.
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Lower end of the `u` range: 0 on the full line, `Ḡ(T₀)` on a horizon grid.
    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn horizon(&self) -> Option<f64> {
        self.horizon
    }

    pub fn is_full_line(&self) -> bool {
        self.horizon.is_none()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// `∫_{lower}^{u_k} f du` for every node. On the full line this is the
    /// tail integral `∫_{t_k}^∞ f dG`.
    pub fn integral_below(&self, values: &[f64]) -> Vec<f64> {
        let n = self.len();
        self.below
            .chunks(n)
            .map(|row| row.iter().zip(values).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `∫_{u_k}^{1} f du` for every node, i.e. the head integral `∫_0^{t_k} f dG`.
    pub fn integral_above(&self, values: &[f64]) -> Vec<f64> {
        let total = self.integrate(values);
        self.integral_below(values)
            .into_iter()
            .map(|b| total - b)
            .collect()
    }
}

/// Quadrature for `∫ f(z) h(z) dz` over the covariate law.
#[derive(Debug, Clone)]
pub struct CovariateRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    density: Vec<f64>,
}

impl CovariateRule {
    pub(crate) fn new(nodes: Vec<f64>, weights: Vec<f64>, density: Vec<f64>) -> Self {
        CovariateRule {
            nodes,
            weights,
            density,
        }
    }

    /// Gauss–Legendre on `[a, b]` with probability weights `w_k h(z_k)`.
    pub(crate) fn legendre(n: usize, a: f64, b: f64, h: impl Fn(f64) -> f64) -> Self {
        let (s, w) = gauss_legendre(n);
        let half = 0.5 * (b - a);
        let nodes: Vec<f64> = s.iter().map(|x| a + half * (x + 1.0)).collect();
        let density: Vec<f64> = nodes.iter().map(|&z| h(z)).collect();
        let weights = w
            .iter()
            .zip(&density)
            .map(|(wi, hi)| wi * half * hi)
            .collect();
        CovariateRule::new(nodes, weights, density)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Probability weights: `Σ w_k f(z_k) ≈ ∫ f h dz`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `h(z_k)` at the nodes.
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ_k w_k v_k` for values already sampled at the nodes.
    pub fn expect_values(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(10);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        let x18: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((x18 - 2.0 / 19.0).abs() < 1e-14);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn hermite_reproduces_normal_moments() {
        let (z, w) = gauss_hermite_normal(32);
        let m0: f64 = w.iter().sum();
        let m2: f64 = z.iter().zip(&w).map(|(z, w)| w * z * z).sum();
        let m4: f64 = z.iter().zip(&w).map(|(z, w)| w * z.powi(4)).sum();
        let m1: f64 = z.iter().zip(&w).map(|(z, w)| w * z).sum();
        assert!((m0 - 1.0).abs() < 1e-13);
        assert!(m1.abs() < 1e-13);
        assert!((m2 - 1.0).abs() < 1e-12);
        assert!((m4 - 3.0).abs() < 1e-11);
        assert!(z.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn odd_order_rules_have_zero_node() {
        let (x, _) = gauss_legendre(7);
        assert_eq!(x[3], 0.0);
        let (z, w) = gauss_hermite_normal(7);
        assert!(z[3].abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn cumulative_integrals_are_exact_for_polynomials() {
        let grid = TimeGrid::full(&BaselineModel::Exponential, 16, 1).unwrap();
        let f: Vec<f64> = grid.survival().iter().map(|u| 3.0 * u * u).collect();
        let below = grid.integral_below(&f);
        let above = grid.integral_above(&f);
        for ((u, b), a) in grid.survival().iter().zip(&below).zip(&above) {
            assert!((b - u.powi(3)).abs() < 1e-14);
            assert!((a - (1.0 - u.powi(3))).abs() < 1e-14);
        }
    }

    #[test]
    fn graded_grid_handles_log_singularity() {
        let grid = TimeGrid::full(&BaselineModel::Exponential, 64, 3).unwrap();
        let f: Vec<f64> = grid.survival().iter().map(|u| u.ln()).collect();
        assert!((grid.integrate(&f) + 1.0).abs() < 1e-10);
    }

    #[test]
    fn horizon_grid_spans_survival_range() {
        let b = BaselineModel::Exponential;
        let grid = TimeGrid::truncated(&b, 2.0, 20).unwrap();
        assert!((grid.lower() - (-2.0f64).exp()).abs() < 1e-15);
        let ones = vec![1.0; grid.len()];
        assert!((grid.integrate(&ones) - (1.0 - grid.lower())).abs() < 1e-14);
        assert!(grid.times().iter().all(|&t| t <= 2.0 && t >= 0.0));
        assert!(TimeGrid::truncated(&b, 1e6, 20).is_err());
    }
}
