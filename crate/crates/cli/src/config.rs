//! Run configuration: parsing, validation and the canonical echo written into
//! every output file.

use std::path::PathBuf;

use pinning_core::correlations::{CorrelationModel, CorrelationSpec};
use pinning_core::partition::Boundary;
use pinning_core::renewal::{LawSpec, RenewalLaw};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub start: f64,
    pub stop: f64,
    pub num: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

/// A grid is a scalar, an explicit list, or `{start, stop, num, spacing}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Single(f64),
    Values(Vec<f64>),
    Range(RangeSpec),
}

impl Grid {
    pub fn values(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let v = match self {
            Grid::Single(x) => vec![*x],
            Grid::Values(v) => v.clone(),
            Grid::Range(r) => {
                if r.num == 0 {
                    return Err(CliError::config(format!("{name}.num must be positive")));
                }
                let (a, b) = match r.spacing {
                    Spacing::Linear => (r.start, r.stop),
                    Spacing::Log => {
                        if !(r.start > 0.0 && r.stop > 0.0) {
                            return Err(CliError::config(format!(
                                "{name}: log spacing needs positive start and stop"
                            )));
                        }
                        (r.start.ln(), r.stop.ln())
                    }
                };
                (0..r.num)
                    .map(|i| {
                        let t = if r.num == 1 { 0.0 } else { i as f64 / (r.num - 1) as f64 };
                        let x = a + (b - a) * t;
                        match r.spacing {
                            Spacing::Linear => x,
                            Spacing::Log => x.exp(),
                        }
                    })
                    .collect()
            }
        };
        if v.is_empty() {
            return Err(CliError::config(format!("{name} grid is empty")));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CliError::config(format!("{name} grid has a non-finite value")));
        }
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Identity,
    Jensen,
}

/// Paths of side outputs. Not part of the echoed configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// JSON spectral reports (`pressure`).
    pub report: Option<PathBuf>,
    /// Coordinate-format matrix of a single `(β, F)` point (`pressure`).
    pub matrix: Option<PathBuf>,
    /// Per-replica `log Z` values (`quenched`).
    pub replicas: Option<PathBuf>,
    /// Disorder metadata JSON (`sample`).
    pub metadata: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Boundary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<Check>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Grid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Grid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Grid>,
    #[serde(rename = "F", default, skip_serializing_if = "Option::is_none")]
    pub tilt: Option<Grid>,
    pub law: LawSpec,
    pub correlation: CorrelationSpec,
    #[serde(default, skip_serializing)]
    pub output: OutputConfig,
}

/// Marker on the first line of every CSV output; files carrying it can be
/// passed back as `--config`.
pub const HEADER_MARK: &str = "# pinning ";
const ECHO_MARK: &str = "# config:";

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let body = if text.starts_with(HEADER_MARK) {
            extract_echo(text)?
        } else if text.starts_with('{') {
            extract_report_config(text)?
        } else {
            text.to_string()
        };
        toml::from_str(&body).map_err(|e| CliError::config(format!("malformed config: {e}")))
    }

    /// Canonical TOML form; reparsing it yields the same value.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn law(&self) -> Result<RenewalLaw, CliError> {
        RenewalLaw::from_spec(&self.law).map_err(|e| CliError::config(format!("law: {e}")))
    }

    pub fn model(&self) -> Result<CorrelationModel, CliError> {
        CorrelationModel::from_spec(&self.correlation)
            .map_err(|e| CliError::config(format!("correlation: {e}")))
    }

    pub fn grid(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let g = match name {
            "beta" => &self.beta,
            "h" => &self.h,
            "delta" => &self.delta,
            "F" => &self.tilt,
            _ => unreachable!("unknown grid {name}"),
        };
        g.as_ref()
            .ok_or_else(|| CliError::config(format!("missing field `{name}`")))?
            .values(name)
    }

    pub fn nonnegative_grid(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let v = self.grid(name)?;
        if v.iter().any(|x| *x < 0.0) {
            return Err(CliError::config(format!("{name} values must be nonnegative")));
        }
        Ok(v)
    }

    /// Truncation level: the configured `q`, or the model's range.
    pub fn q(&self, model: &CorrelationModel) -> Result<usize, CliError> {
        self.q.or(model.range()).ok_or_else(|| {
            CliError::config("missing field `q` (required for infinite-range correlations)")
        })
    }

    pub fn require<T: Copy>(&self, value: Option<T>, name: &str) -> Result<T, CliError> {
        value.ok_or_else(|| CliError::config(format!("missing field `{name}`")))
    }

    pub fn header(&self, command: &str) -> String {
        let mut out = format!(
            "{HEADER_MARK}{} {command}\n# config-sha256: {}\n{ECHO_MARK}\n",
            env!("CARGO_PKG_VERSION"),
            self.hash()
        );
        for line in self.canonical().lines() {
            if line.is_empty() {
                out.push_str("#\n");
            } else {
                out.push_str("# ");
                out.push_str(line);
                out.push('\n');
            }
        }
        out
    }
}

/// JSON reports carry the canonical TOML under `config`.
fn extract_report_config(text: &str) -> Result<String, CliError> {
    let v: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| CliError::config(format!("malformed report: {e}")))?;
    v.get("config")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| CliError::config("report has no `config` string"))
}

fn extract_echo(text: &str) -> Result<String, CliError> {
    let mut lines = text.lines().skip_while(|l| *l != ECHO_MARK);
    if lines.next().is_none() {
        return Err(CliError::config("output file has no echoed configuration"));
    }
    let mut body = String::new();
    for line in lines {
        if line == "#" {
            body.push('\n');
        } else if let Some(rest) = line.strip_prefix("# ") {
            body.push_str(rest);
            body.push('\n');
        } else {
            break;
        }
    }
    Ok(body)
}
