//! Monte Carlo calibration runs and their report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::bounds::{
    breslow_covariance_omega, effective_information, effective_information_limit,
    survival_bound_kstar, BoundsInput,
};
use crate::error::{Error, Result};
use crate::estimators::{breslow, fit_mple, mple_asymptotic_variance, MpleOptions};
use crate::io::{format_float, write_text};
use crate::model::{validate_config, ModelConfig};
use crate::sampler::simulate_replication;

/// Share of separated replications above which a report is flagged.
pub const SEPARATION_FLAG_SHARE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub config: ModelConfig,
    /// Groups per replication.
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    /// `(s, t)` pairs at which Breslow covariances are reported.
    pub grid: Vec<(f64, f64)>,
    /// Run even when the configuration raises validation warnings.
    pub allow_warnings: bool,
    pub options: MpleOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Ok,
    Separation,
    NotConverged,
    Degenerate,
}

impl FitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FitStatus::Ok => "ok",
            FitStatus::Separation => "separation",
            FitStatus::NotConverged => "not_converged",
            FitStatus::Degenerate => "degenerate",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ok" => FitStatus::Ok,
            "separation" => FitStatus::Separation,
            "not_converged" => FitStatus::NotConverged,
            "degenerate" => FitStatus::Degenerate,
            _ => return None,
        })
    }
}

/// One replication: the fit and the Breslow survival at the grid times.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRow {
    pub replication: usize,
    pub status: FitStatus,
    pub theta_hat: f64,
    pub std_error: f64,
    pub iterations: usize,
    pub survival: Vec<f64>,
}

/// Aggregates recomputable from the replication rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowSummary {
    pub successful: usize,
    pub separations: usize,
    pub not_converged: usize,
    pub degenerate: usize,
    pub mean_theta_hat: f64,
    /// `n · Var(θ̂)` over successful replications.
    pub n_var_theta_hat: f64,
    pub mean_std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSummary {
    pub rows: RowSummary,
    pub separation_flagged: bool,
    /// `σ²_MPLE = m / ((m − 1) Var Z)`.
    pub sigma2_mple: f64,
    /// `1 / I*^ϱ`.
    pub inv_information: f64,
    /// `1 / I*` for unbounded group sizes.
    pub inv_information_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceRow {
    pub s: f64,
    pub t: f64,
    /// `n · Cov(Ĝ(s), Ĝ(t))` over successful replications.
    pub empirical: f64,
    pub kstar: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub seed: u64,
    pub fingerprint: String,
    pub n: usize,
    pub replications: usize,
    /// Distinct times of the covariance grid, ascending.
    pub grid_times: Vec<f64>,
    pub rows: Vec<ReplicationRow>,
    pub summary: McSummary,
    pub covariance: Vec<CovarianceRow>,
}

fn mean_and_var(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        f64::NAN
    };
    (mean, var)
}

pub fn summarize_rows(rows: &[ReplicationRow], n: usize) -> RowSummary {
    let count = |s| rows.iter().filter(|r| r.status == s).count();
    let ok: Vec<&ReplicationRow> = rows.iter().filter(|r| r.status == FitStatus::Ok).collect();
    let thetas: Vec<f64> = ok.iter().map(|r| r.theta_hat).collect();
    let (mean, var) = mean_and_var(&thetas);
    let ses: Vec<f64> = ok.iter().map(|r| r.std_error).collect();
    RowSummary {
        successful: ok.len(),
        separations: count(FitStatus::Separation),
        not_converged: count(FitStatus::NotConverged),
        degenerate: count(FitStatus::Degenerate),
        mean_theta_hat: mean,
        n_var_theta_hat: n as f64 * var,
        mean_std_error: mean_and_var(&ses).0,
    }
}

/// `n · Cov(Ĝ(s), Ĝ(t))` for each grid pair over successful rows.
pub fn empirical_covariances(
    rows: &[ReplicationRow],
    grid_times: &[f64],
    grid: &[(f64, f64)],
    n: usize,
) -> Vec<f64> {
    let ok: Vec<&ReplicationRow> = rows.iter().filter(|r| r.status == FitStatus::Ok).collect();
    let column = |x: f64| {
        let k = grid_times.iter().position(|&g| g == x).expect("grid time listed");
        ok.iter().map(|r| r.survival[k]).collect::<Vec<f64>>()
    };
    grid.iter()
        .map(|&(s, t)| {
            let (a, b) = (column(s), column(t));
            if a.len() < 2 {
                return f64::NAN;
            }
            let k = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / k, b.iter().sum::<f64>() / k);
            let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (k - 1.0);
            n as f64 * cov
        })
        .collect()
}

fn grid_times(grid: &[(f64, f64)]) -> Vec<f64> {
    let mut times: Vec<f64> = grid.iter().flat_map(|&(s, t)| [s, t]).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

fn run_replication(spec: &ExperimentSpec, times: &[f64], replication: usize) -> Result<ReplicationRow> {
    let data = simulate_replication(&spec.config, spec.n, spec.seed, replication as u32)?;
    let (status, fit) = match fit_mple(&data, &spec.options) {
        Ok(fit) => (FitStatus::Ok, Some(fit)),
        Err(Error::Separation { .. }) => (FitStatus::Separation, None),
        Err(Error::NotConverged { .. }) => (FitStatus::NotConverged, None),
        Err(Error::Degenerate(_)) => (FitStatus::Degenerate, None),
        Err(e) => return Err(e),
    };
    let Some(fit) = fit else {
        return Ok(ReplicationRow {
            replication,
            status,
            theta_hat: f64::NAN,
            std_error: f64::NAN,
            iterations: 0,
            survival: vec![f64::NAN; times.len()],
        });
    };
    let estimate = breslow(&data, fit.theta_hat)?;
    Ok(ReplicationRow {
        replication,
        status,
        theta_hat: fit.theta_hat,
        std_error: fit.standard_error,
        iterations: fit.iterations,
        survival: times.iter().map(|&t| estimate.survival.eval(t)).collect(),
    })
}

/// Simulate, fit and estimate the baseline in every replication, then
/// aggregate against the bounds.
pub fn run_mc_experiment(spec: &ExperimentSpec) -> Result<McReport> {
    if spec.n == 0 || spec.replications == 0 {
        return Err(Error::Config("n and replications must be at least 1".into()));
    }
    if spec.replications > u32::MAX as usize {
        return Err(Error::Config("too many replications for the stream address space".into()));
    }
    let report = validate_config(&spec.config)?;
    if !report.is_clean() && !spec.allow_warnings {
        return Err(Error::Config(format!(
            "configuration raises warnings ({}); acknowledge them to run",
            report.warnings.join("; ")
        )));
    }
    if !report.estimable {
        return Err(Error::Config("estimation needs 2 <= m <= min eta".into()));
    }
    let input = BoundsInput::from_config(&spec.config);
    let horizon = spec.config.baseline.evaluation_horizon();
    if spec.grid.iter().any(|&(s, t)| !(s >= 0.0 && t >= 0.0 && s <= horizon && t <= horizon)) {
        return Err(Error::Config(format!("grid times must lie in [0, {horizon}]")));
    }
    let times = grid_times(&spec.grid);

    let rows: Vec<ReplicationRow> = (0..spec.replications)
        .into_par_iter()
        .map(|r| run_replication(spec, &times, r))
        .collect::<Result<_>>()?;

    let summary_rows = summarize_rows(&rows, spec.n);
    let sigma2_mple = mple_asymptotic_variance(spec.config.m, input.var_z)?;
    let summary = McSummary {
        rows: summary_rows,
        separation_flagged: summary_rows.separations as f64
            > SEPARATION_FLAG_SHARE * spec.replications as f64,
        sigma2_mple,
        inv_information: 1.0 / effective_information(&input),
        inv_information_limit: 1.0 / effective_information_limit(spec.config.m, input.var_z),
    };
    let empirical = empirical_covariances(&rows, &times, &spec.grid, spec.n);
    let covariance = spec
        .grid
        .iter()
        .zip(empirical)
        .map(|(&(s, t), empirical)| {
            Ok(CovarianceRow {
                s,
                t,
                empirical,
                kstar: survival_bound_kstar(s, t, &input)?,
                omega: breslow_covariance_omega(s, t, &input)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(McReport {
        seed: spec.seed,
        fingerprint: spec.config.fingerprint(),
        n: spec.n,
        replications: spec.replications,
        grid_times: times,
        rows,
        summary,
        covariance,
    })
}

const ROW_HEADER: &str = "replication,status,theta_hat,std_error,iterations";
const SUMMARY_HEADER: &str = "statistic,value";
const COVARIANCE_HEADER: &str = "s,t,empirical_cov,kstar,omega";

/// Replication rows, a summary block and a covariance block, separated by
/// blank lines.
pub fn report_csv(report: &McReport) -> Result<String> {
    if report.rows.is_empty() {
        return Err(Error::Empty("report has no replications".into()));
    }
    let f = format_float;
    let mut out = String::new();
    let _ = writeln!(out, "# seed={}", report.seed);
    let _ = writeln!(out, "# fingerprint={}", report.fingerprint);
    let _ = writeln!(out, "# n={}", report.n);
    let _ = writeln!(out, "# replications={}", report.replications);
    out.push_str(ROW_HEADER);
    for t in &report.grid_times {
        let _ = write!(out, ",survival@{}", f(*t));
    }
    out.push('\n');
    for r in &report.rows {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            r.replication,
            r.status.as_str(),
            f(r.theta_hat),
            f(r.std_error),
            r.iterations
        );
        for v in &r.survival {
            let _ = write!(out, ",{}", f(*v));
        }
        out.push('\n');
    }
    let s = &report.summary;
    out.push('\n');
    let _ = writeln!(out, "{SUMMARY_HEADER}");
    for (k, v) in summary_entries(s) {
        let _ = writeln!(out, "{k},{v}");
    }
    out.push('\n');
    let _ = writeln!(out, "{COVARIANCE_HEADER}");
    for c in &report.covariance {
        let _ = writeln!(out, "{},{},{},{},{}", f(c.s), f(c.t), f(c.empirical), f(c.kstar), f(c.omega));
    }
    Ok(out)
}

fn summary_entries(s: &McSummary) -> [(&'static str, String); 11] {
    let f = format_float;
    [
        ("successful", s.rows.successful.to_string()),
        ("separations", s.rows.separations.to_string()),
        ("not_converged", s.rows.not_converged.to_string()),
        ("degenerate", s.rows.degenerate.to_string()),
        ("separation_flagged", u8::from(s.separation_flagged).to_string()),
        ("mean_theta_hat", f(s.rows.mean_theta_hat)),
        ("n_var_theta_hat", f(s.rows.n_var_theta_hat)),
        ("mean_std_error", f(s.rows.mean_std_error)),
        ("sigma2_mple", f(s.sigma2_mple)),
        ("inv_information", f(s.inv_information)),
        ("inv_information_limit", f(s.inv_information_limit)),
    ]
}

/// Human-readable comparison of the empirical variance with the bounds.
pub fn report_text(report: &McReport) -> Result<String> {
    if report.rows.is_empty() {
        return Err(Error::Empty("report has no replications".into()));
    }
    let s = &report.summary;
    let mut out = String::new();
    let _ = writeln!(out, "Monte Carlo run: n = {}, replications = {}, seed = {}", report.n, report.replications, report.seed);
    let _ = writeln!(
        out,
        "fits: {} ok, {} separated, {} not converged, {} degenerate{}",
        s.rows.successful,
        s.rows.separations,
        s.rows.not_converged,
        s.rows.degenerate,
        if s.separation_flagged { "  [separation share above 1%]" } else { "" }
    );
    let _ = writeln!(out, "mean theta_hat                  {:>12.6}", s.rows.mean_theta_hat);
    let _ = writeln!(out);
    let _ = writeln!(out, "variance of sqrt(n)(theta_hat - theta0)");
    let _ = writeln!(out, "  empirical n Var(theta_hat)    {:>12.6}", s.rows.n_var_theta_hat);
    let _ = writeln!(out, "  sigma^2_MPLE                  {:>12.6}", s.sigma2_mple);
    let _ = writeln!(out, "  1 / I* (finite eta bound)     {:>12.6}", s.inv_information);
    let _ = writeln!(out, "  1 / I* (limit)                {:>12.6}", s.inv_information_limit);
    if !report.covariance.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "Breslow survival covariance n Cov(G(s), G(t))");
        let _ = writeln!(out, "  {:>10} {:>10} {:>12} {:>12} {:>12}", "s", "t", "empirical", "K*", "omega");
        for c in &report.covariance {
            let _ = writeln!(
                out,
                "  {:>10.4} {:>10.4} {:>12.6} {:>12.6} {:>12.6}",
                c.s, c.t, c.empirical, c.kstar, c.omega
            );
        }
    }
    Ok(out)
}

/// Write `mc.csv` and `summary.txt` into `dir`.
pub fn emit_report(report: &McReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let csv = report_csv(report)?;
    let text = report_text(report)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("mc.csv");
    let text_path = dir.join("summary.txt");
    write_text(&csv_path, &csv)?;
    write_text(&text_path, &text)?;
    Ok((csv_path, text_path))
}

fn parse_f64(line: usize, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("cannot read a number from {s:?}")))
}

fn parse_usize(line: usize, s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("cannot read a count from {s:?}")))
}

/// Inverse of [`report_csv`].
pub fn parse_mc_csv(text: &str) -> Result<McReport> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim()));
    let mut meta = std::collections::HashMap::new();
    let (header_line, header) = loop {
        let (line, l) = lines.next().ok_or_else(|| Error::parse(0, "missing replication header"))?;
        if let Some(m) = l.strip_prefix('#') {
            if let Some((k, v)) = m.split_once('=') {
                meta.insert(k.trim().to_string(), (line, v.trim().to_string()));
            }
        } else if !l.is_empty() {
            break (line, l);
        }
    };
    let rest = header
        .strip_prefix(ROW_HEADER)
        .ok_or_else(|| Error::parse(header_line, "unexpected replication header"))?;
    let grid_times: Vec<f64> = rest
        .split(',')
        .skip(1)
        .map(|c| {
            c.strip_prefix("survival@")
                .ok_or_else(|| Error::parse(header_line, format!("unexpected column {c:?}")))
                .and_then(|v| parse_f64(header_line, v))
        })
        .collect::<Result<_>>()?;
    if !rest.is_empty() && !rest.starts_with(',') {
        return Err(Error::parse(header_line, "unexpected replication header"));
    }

    let mut rows = Vec::new();
    for (line, l) in lines.by_ref() {
        if l.is_empty() {
            break;
        }
        let fields: Vec<&str> = l.split(',').collect();
        if fields.len() != 5 + grid_times.len() {
            return Err(Error::parse(line, "wrong number of fields"));
        }
        rows.push(ReplicationRow {
            replication: parse_usize(line, fields[0])?,
            status: FitStatus::parse(fields[1])
                .ok_or_else(|| Error::parse(line, format!("unknown status {:?}", fields[1])))?,
            theta_hat: parse_f64(line, fields[2])?,
            std_error: parse_f64(line, fields[3])?,
            iterations: parse_usize(line, fields[4])?,
            survival: fields[5..].iter().map(|v| parse_f64(line, v)).collect::<Result<_>>()?,
        });
    }
    if rows.is_empty() {
        return Err(Error::parse(header_line, "report has no replications"));
    }

    let mut block = |name: &str| -> Result<Vec<(usize, Vec<String>)>> {
        let (line, l) = lines
            .by_ref()
            .find(|(_, l)| !l.is_empty())
            .ok_or_else(|| Error::parse(0, format!("missing {name} block")))?;
        if l != name {
            return Err(Error::parse(line, format!("expected {name:?}")));
        }
        let mut out = Vec::new();
        for (line, l) in lines.by_ref() {
            if l.is_empty() {
                break;
            }
            out.push((line, l.split(',').map(str::to_string).collect()));
        }
        Ok(out)
    };
    let summary_block = block(SUMMARY_HEADER)?;
    let covariance_block = block(COVARIANCE_HEADER)?;

    let value = |key: &str| -> Result<f64> {
        summary_block
            .iter()
            .find(|(_, f)| f.first().map(String::as_str) == Some(key))
            .ok_or_else(|| Error::parse(0, format!("summary lacks {key}")))
            .and_then(|(line, f)| match f.as_slice() {
                [_, v] => parse_f64(*line, v),
                _ => Err(Error::parse(*line, "summary rows have two fields")),
            })
    };
    let count = |key: &str| -> Result<usize> {
        let v = value(key)?;
        if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
            Ok(v as usize)
        } else {
            Err(Error::parse(0, format!("summary {key} is not a count")))
        }
    };
    let summary = McSummary {
        rows: RowSummary {
            successful: count("successful")?,
            separations: count("separations")?,
            not_converged: count("not_converged")?,
            degenerate: count("degenerate")?,
            mean_theta_hat: value("mean_theta_hat")?,
            n_var_theta_hat: value("n_var_theta_hat")?,
            mean_std_error: value("mean_std_error")?,
        },
        separation_flagged: value("separation_flagged")? != 0.0,
        sigma2_mple: value("sigma2_mple")?,
        inv_information: value("inv_information")?,
        inv_information_limit: value("inv_information_limit")?,
    };
    let covariance = covariance_block
        .iter()
        .map(|(line, f)| {
            if f.len() != 5 {
                return Err(Error::parse(*line, "covariance rows have five fields"));
            }
            Ok(CovarianceRow {
                s: parse_f64(*line, &f[0])?,
                t: parse_f64(*line, &f[1])?,
                empirical: parse_f64(*line, &f[2])?,
                kstar: parse_f64(*line, &f[3])?,
                omega: parse_f64(*line, &f[4])?,
            })
        })
        .collect::<Result<_>>()?;

    let get = |key: &str| -> Result<(usize, String)> {
        meta.get(key)
            .cloned()
            .ok_or_else(|| Error::parse(0, format!("missing {key} metadata")))
    };
    let (line, seed) = get("seed")?;
    let seed = seed
        .parse()
        .map_err(|_| Error::parse(line, "seed is not an unsigned integer"))?;
    let (line, n) = get("n")?;
    let n = parse_usize(line, &n)?;
    let (line, replications) = get("replications")?;
    let replications = parse_usize(line, &replications)?;
    Ok(McReport {
        seed,
        fingerprint: get("fingerprint")?.1,
        n,
        replications,
        grid_times,
        rows,
        summary,
        covariance,
    })
}
