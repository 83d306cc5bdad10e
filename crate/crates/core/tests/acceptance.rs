//! End-to-end acceptance criteria. Runs as a plain binary so that every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use nccox::bounds::{effective_information, log_survival_moment, survival_bound_kstar, BoundsInput};
use nccox::estimators::MpleOptions;
use nccox::experiment::{emit_report, run_mc_experiment, ExperimentSpec, McReport};
use nccox::model::{BaselineModel, CovariateModel, ModelConfig};
use nccox::operators::*;
use nccox::rng::RngStream;
use rand::Rng;
use rand_distr::StandardNormal;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn reference_config() -> ModelConfig {
    let third = 1.0 / 3.0;
    config(BaselineModel::Exponential, normal(), &[(3, third), (4, third), (5, third)], 2, 0.0)
}

fn calibration_spec() -> ExperimentSpec {
    ExperimentSpec {
        config: config(BaselineModel::Exponential, normal(), &[(5, 1.0)], 2, 0.0),
        n: 1000,
        replications: 400,
        seed: 7,
        grid: vec![(1.0, 1.0)],
        allow_warnings: true,
        options: MpleOptions::default(),
    }
}

fn quadrature_matches_closed_form() -> Verdict {
    let c = reference_config();
    let start = Instant::now();
    let quad = single_threaded(|| {
        let scheme = QuadratureScheme::new(&c, &SchemeOptions::default()).unwrap();
        information_by_quadrature(&scheme).unwrap()
    });
    let elapsed = start.elapsed();
    let closed = effective_information(&BoundsInput::from_config(&c));
    let err = rel_err(quad, closed);
    check(
        err <= 1e-6 && elapsed < Duration::from_secs(60),
        format!("quadrature {quad:.12} vs closed form {closed:.12}, rel err {err:.2e}, {elapsed:.2?}"),
    )
}

fn full_cohort_reduces_to_variance() -> Verdict {
    let mut worst_quad = 0.0f64;
    let mut worst_closed = 0.0f64;
    for cov in [normal(), CovariateModel::Uniform, CovariateModel::truncated_normal(1.0).unwrap()] {
        for eta in [3u32, 4] {
            let c = config(BaselineModel::Exponential, cov, &[(eta, 1.0)], eta, 0.0);
            let closed = effective_information(&BoundsInput::from_config(&c));
            worst_closed = worst_closed.max(rel_err(closed, cov.variance()));
            if eta == 3 {
                let options = SchemeOptions { covariate_nodes: 24, ..SchemeOptions::default() };
                let scheme = QuadratureScheme::new(&c, &options).unwrap();
                let quad = information_by_quadrature(&scheme).unwrap();
                worst_quad = worst_quad.max(rel_err(quad, cov.variance()));
            }
        }
    }
    // Exact up to the rounding of the arithmetic itself.
    check(
        worst_closed <= 4.0 * f64::EPSILON && worst_quad <= 1e-6,
        format!("closed form worst rel err {worst_closed:.2e}, quadrature worst rel err {worst_quad:.2e}"),
    )
}

fn limit_efficiency() -> Verdict {
    let values: Vec<f64> = [5u32, 10, 20, 50]
        .iter()
        .map(|&eta| {
            let c = config(BaselineModel::Exponential, normal(), &[(eta, 1.0)], 2, 0.0);
            1.0 / effective_information(&BoundsInput::from_config(&c))
        })
        .collect();
    let formula_gap = [5u32, 10, 20, 50]
        .iter()
        .zip(&values)
        .map(|(&eta, v)| rel_err(*v, 1.0 / (0.5 + 2.0 / (eta * eta) as f64)))
        .fold(0.0, f64::max);
    let monotone = values.windows(2).all(|w| w[0] < w[1]) && values.iter().all(|&v| v < 2.0);
    let last = (2.0 - values[3]) / 2.0;
    check(
        monotone && last <= 0.002 && formula_gap < 1e-14,
        format!("1/I = {values:.4?}, gap to 2 at eta=50: {:.3}%", 100.0 * last),
    )
}

fn moment_identity_matches_quadrature() -> Verdict {
    let mut worst = 0.0f64;
    for b in [BaselineModel::Exponential, weibull(1.5)] {
        for eta in 1..=8u32 {
            for k in 1..=eta.min(3) {
                for j in 0..=3u32 {
                    let oracle = integrate_to_infinity(
                        |t| {
                            let ls = b.log_survival(t);
                            b.density(t) * (ls * (eta - k) as f64).exp() * ls.powi(j as i32)
                        },
                        0.0,
                        1e-13,
                    );
                    let closed = log_survival_moment(eta, k, j).unwrap();
                    worst = worst.max((closed - oracle).abs());
                }
            }
        }
    }
    check(worst <= 1e-8, format!("worst absolute gap {worst:.2e} over 2 baselines"))
}

fn identity_suite_passes() -> Verdict {
    let uniform = config(weibull(1.5), CovariateModel::Uniform, &[(3, 0.5), (6, 0.5)], 2, 0.0);
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for c in [reference_config(), uniform] {
        let scheme = QuadratureScheme::new(&c, &SchemeOptions::default()).unwrap();
        for chk in identity_suite(&scheme, &SuiteOptions::default()).unwrap() {
            worst = worst.max(chk.residual / chk.tolerance);
            if !chk.passed() {
                failures.push(format!("{} ({:.2e})", chk.name, chk.residual));
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        failures.is_empty() && elapsed < Duration::from_secs(300),
        format!(
            "2 configs x 20 directions, worst residual/tolerance {worst:.2e}, {elapsed:.2?}{}",
            if failures.is_empty() { String::new() } else { format!(", failed: {}", failures.join("; ")) }
        ),
    )
}

fn mple_calibration(report: &McReport) -> Verdict {
    let s = &report.summary;
    let (mean, nvar) = (s.rows.mean_theta_hat, s.rows.n_var_theta_hat);
    let ok = mean.abs() < 0.02
        && (1.8..=2.2).contains(&nvar)
        && s.sigma2_mple == 2.0
        && (s.inv_information - 1.0 / 0.58).abs() < 1e-12
        && s.inv_information < nvar;
    check(
        ok,
        format!(
            "mean theta_hat {mean:+.4}, n Var {nvar:.4}, sigma2_MPLE {:.4}, 1/I {:.4}, {} of {} fits ok",
            s.sigma2_mple, s.inv_information, s.rows.successful, report.replications
        ),
    )
}

fn breslow_calibration() -> Verdict {
    let spec = ExperimentSpec {
        config: config(BaselineModel::Exponential, normal(), &[(2, 1.0)], 2, 0.0),
        n: 2000,
        replications: 300,
        ..calibration_spec()
    };
    let oracle = (-2.0f64).exp() * (2.0f64.exp() - 1.0) / 4.0;
    let kstar = survival_bound_kstar(1.0, 1.0, &BoundsInput::from_config(&spec.config)).unwrap();
    let report = run_mc_experiment(&spec).unwrap();
    let empirical = report.covariance[0].empirical;
    let ratio = empirical / oracle;
    check(
        (0.85..=1.15).contains(&ratio) && rel_err(kstar, oracle) < 1e-10,
        format!("empirical {empirical:.4} vs K*(1,1) {oracle:.4} (library {kstar:.4}), ratio {ratio:.3}"),
    )
}

fn hellinger_first_order() -> Verdict {
    let scheme = QuadratureScheme::new(&reference_config(), &SchemeOptions::default()).unwrap();
    let mut rng = RngStream::new(8, 0);
    let ratios: Vec<f64> = (0..10)
        .map(|_| {
            let alpha = random_time_direction(scheme.time_grid(), &mut rng);
            let beta = random_covariate_direction(&scheme, &mut rng);
            let tau: f64 = rng.sample(StandardNormal);
            hellinger_halving_ratio(&scheme, tau, &alpha, &beta).unwrap()
        })
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
    check(
        lo >= 0.35 && hi <= 0.65,
        format!("10 directions, halving ratios in [{lo:.4}, {hi:.4}]"),
    )
}

fn mc_is_deterministic(first: &McReport) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    emit_report(first, &a).unwrap();
    let wide = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let second = wide.install(|| run_mc_experiment(&calibration_spec()).unwrap());
    emit_report(&second, &b).unwrap();
    let same = ["mc.csv", "summary.txt"]
        .iter()
        .all(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap());
    check(same, format!("two runs of seed {} byte-identical: {same}", first.seed))
}

fn main() -> ExitCode {
    let report = run_mc_experiment(&calibration_spec()).unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("quadrature information matches the closed form", Box::new(quadrature_matches_closed_form)),
        ("full cohort gives Var(Z)", Box::new(full_cohort_reduces_to_variance)),
        ("inverse information rises to sigma2_MPLE", Box::new(limit_efficiency)),
        ("log-survival moment identity", Box::new(moment_identity_matches_quadrature)),
        ("operator identity suite", Box::new(identity_suite_passes)),
        ("MPLE calibration", Box::new(|| mple_calibration(&report))),
        ("Breslow calibration", Box::new(breslow_calibration)),
        ("Hellinger first-order check", Box::new(hellinger_first_order)),
        ("mc determinism", Box::new(|| mc_is_deterministic(&report))),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let (status, detail) = match run() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{status} criterion {}: {name}: {detail}", k + 1);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
