//! Text formats: the model configuration file and the dataset file.
//!
//! A configuration is a flat TOML document:
//!
//! ```toml
//! baseline = "weibull"       # or "exponential"
//! weibull_shape = 1.5
//! covariate = "normal"       # or "truncated_normal", "uniform"
//! moment_radius = 2.0        # normal only
//! truncation = 3.0           # truncated_normal only
//! eta = [[3, 0.5], [5, 0.5]]
//! m = 2
//! theta = 0.0
//! ```
//!
//! A dataset file starts with `#` metadata lines, then the header
//! `eta,i,r,t,z_r`, then one record per line. `r` lists the sampled labels
//! separated by `;` and `z_r` lists `label:value` pairs separated by `;`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{BaselineModel, CovariateModel, GroupSizeDistribution, ModelConfig, Observation};
use crate::sampler::Dataset;

pub const DATASET_HEADER: &str = "eta,i,r,t,z_r";

/// Floats are written with 17 significant digits, which round-trips `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    baseline: String,
    weibull_shape: Option<f64>,
    covariate: String,
    moment_radius: Option<f64>,
    truncation: Option<f64>,
    eta: Vec<(u32, f64)>,
    m: u32,
    #[serde(default)]
    theta: f64,
}

pub fn parse_config(text: &str) -> Result<ModelConfig> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    let baseline = match raw.baseline.as_str() {
        "exponential" => {
            if raw.weibull_shape.is_some() {
                return Err(Error::Config("weibull_shape given for an exponential baseline".into()));
            }
            BaselineModel::Exponential
        }
        "weibull" => {
            let shape = raw
                .weibull_shape
                .ok_or_else(|| Error::Config("weibull baseline needs weibull_shape".into()))?;
            BaselineModel::weibull(shape)?
        }
        other => return Err(Error::Config(format!("unknown baseline {other:?}"))),
    };
    let covariate = match raw.covariate.as_str() {
        "normal" => {
            if raw.truncation.is_some() {
                return Err(Error::Config("truncation given for an untruncated normal".into()));
            }
            CovariateModel::standard_normal(raw.moment_radius.unwrap_or(2.0))?
        }
        "truncated_normal" => {
            let c = raw
                .truncation
                .ok_or_else(|| Error::Config("truncated_normal needs truncation".into()))?;
            CovariateModel::truncated_normal(c)?
        }
        "uniform" => CovariateModel::Uniform,
        other => return Err(Error::Config(format!("unknown covariate law {other:?}"))),
    };
    if !matches!(covariate, CovariateModel::StandardNormal { .. }) && raw.moment_radius.is_some() {
        return Err(Error::Config("moment_radius applies only to the normal law".into()));
    }
    if !raw.theta.is_finite() {
        return Err(Error::Config("theta must be finite".into()));
    }
    Ok(ModelConfig {
        baseline,
        covariate,
        group_size: GroupSizeDistribution::new(&raw.eta)?,
        m: raw.m,
        theta: raw.theta,
    })
}

pub fn read_config(path: &Path) -> Result<ModelConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

pub fn serialize_dataset(dataset: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# seed={}", dataset.seed());
    let _ = writeln!(out, "# fingerprint={}", dataset.fingerprint());
    let _ = writeln!(out, "# ties={}", dataset.ties());
    out.push_str(DATASET_HEADER);
    out.push('\n');
    for x in dataset.observations() {
        let r: Vec<String> = x.sampled.iter().map(u32::to_string).collect();
        let z: Vec<String> = x
            .sampled
            .iter()
            .zip(&x.covariates)
            .map(|(j, v)| format!("{j}:{}", format_float(*v)))
            .collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            x.eta,
            x.failure,
            r.join(";"),
            format_float(x.time),
            z.join(";")
        );
    }
    out
}

fn parse_number<T: std::str::FromStr>(line: usize, field: &str, what: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("cannot read {what} from {field:?}")))
}

fn parse_record(line: usize, text: &str) -> Result<Observation> {
    let fields: Vec<&str> = text.split(',').collect();
    if fields.len() != 5 {
        return Err(Error::parse(line, format!("expected 5 fields, found {}", fields.len())));
    }
    let eta: u32 = parse_number(line, fields[0], "eta")?;
    let failure: u32 = parse_number(line, fields[1], "i")?;
    let sampled: Vec<u32> = fields[2]
        .split(';')
        .map(|s| parse_number(line, s, "r"))
        .collect::<Result<_>>()?;
    let time: f64 = parse_number(line, fields[3], "t")?;
    let mut covariates = vec![None; sampled.len()];
    for pair in fields[4].split(';') {
        let (label, value) = pair
            .split_once(':')
            .ok_or_else(|| Error::parse(line, format!("z_r entry {pair:?} is not label:value")))?;
        let label: u32 = parse_number(line, label, "z_r label")?;
        let value: f64 = parse_number(line, value, "z_r value")?;
        let slot = sampled
            .iter()
            .position(|&j| j == label)
            .ok_or_else(|| Error::parse(line, format!("z_r label {label} is not in r")))?;
        if covariates[slot].replace(value).is_some() {
            return Err(Error::parse(line, format!("z_r label {label} repeated")));
        }
    }
    let covariates = covariates
        .into_iter()
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| Error::parse(line, "z_r does not cover r"))?;
    let obs = Observation {
        eta,
        failure,
        sampled,
        time,
        covariates,
    };
    obs.validate(None).map_err(|e| Error::parse(line, e.to_string()))?;
    Ok(obs)
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut seed = None;
    let mut fingerprint = None;
    let mut ties = 0usize;
    let mut header_seen = false;
    let mut observations = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(meta) = trimmed.strip_prefix('#') {
            if header_seen {
                return Err(Error::parse(line, "metadata after the header"));
            }
            let Some((key, value)) = meta.split_once('=') else {
                continue;
            };
            match key.trim() {
                "seed" => seed = Some(parse_number::<u64>(line, value, "seed")?),
                "fingerprint" => fingerprint = Some(value.trim().to_string()),
                "ties" => ties = parse_number(line, value, "ties")?,
                _ => {}
            }
            continue;
        }
        if !header_seen {
            if trimmed != DATASET_HEADER {
                return Err(Error::parse(line, format!("expected header {DATASET_HEADER:?}")));
            }
            header_seen = true;
            continue;
        }
        observations.push(parse_record(line, trimmed)?);
    }
    if !header_seen {
        return Err(Error::parse(0, "missing header line"));
    }
    if let Some(first) = observations.first() {
        let m = first.m();
        if let Some(j) = observations.iter().position(|x| x.m() != m) {
            return Err(Error::parse(0, format!("record {} has a sampled set of a different size", j + 1)));
        }
    }
    Dataset::new(
        observations,
        fingerprint.ok_or_else(|| Error::parse(0, "missing fingerprint metadata"))?,
        seed.ok_or_else(|| Error::parse(0, "missing seed metadata"))?,
        ties,
    )
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parse `s:t` pairs separated by commas, e.g. `"0.5:0.5,0.5:1"`.
pub fn parse_grid(text: &str) -> Result<Vec<(f64, f64)>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|pair| {
            let (s, t) = pair
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("grid entry {pair:?} is not s:t")))?;
            let read = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite() && *x >= 0.0)
                    .ok_or_else(|| Error::Config(format!("grid time {v:?} is not a finite non-negative number")))
            };
            Ok((read(s)?, read(t)?))
        })
        .collect()
}
