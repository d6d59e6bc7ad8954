//! Correlation sequences `ρ_n = Cov(ω_0, ω_n)`, their tail functionals and
//! exact sampling of stationary Gaussian sequences.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{Kernel, PowerSeries};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationKind {
    Zero,
    Finite,
    /// `ρ_n = C ϱ^n`
    Exponential,
    /// `ρ_n = σ n^{-s}`
    Power,
}

/// Model description as it appears in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationSpec {
    pub kind: CorrelationKind,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    /// Lag → correlation. Keys are decimal integers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<BTreeMap<String, f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SummabilityFlags {
    /// `Σ |ρ_n| < ∞`
    pub abs_summable: bool,
    /// `Σ n |ρ_n| < ∞`
    pub n_weighted_summable: bool,
    /// `|ρ_n|` decays at least exponentially
    pub exponential: bool,
}

#[derive(Clone, Debug)]
enum Form {
    Zero,
    // lags[d-1] = ρ_d, last entry nonzero
    Finite(Vec<f64>),
    Exponential {
        c: f64,
        r: f64,
    },
    Power {
        sigma: f64,
        s: f64,
        tail: Arc<PowerSeries>,
        weighted: Arc<PowerSeries>,
    },
}

#[derive(Clone, Debug)]
pub struct CorrelationModel {
    spec: CorrelationSpec,
    form: Form,
}

impl CorrelationModel {
    pub fn from_spec(spec: &CorrelationSpec) -> Result<Self> {
        let form = match spec.kind {
            CorrelationKind::Zero => Form::Zero,
            CorrelationKind::Finite => {
                let table = spec
                    .table
                    .as_ref()
                    .ok_or_else(|| Error::param("table", "required for the finite model"))?;
                finite_form(table)?
            }
            CorrelationKind::Exponential => {
                let c = spec
                    .c
                    .ok_or_else(|| Error::param("C", "required for the exponential model"))?;
                let r = spec
                    .rho
                    .ok_or_else(|| Error::param("rho", "required for the exponential model"))?;
                if !(c > 0.0) || !c.is_finite() {
                    return Err(Error::param("C", format!("must be positive, got {c}")));
                }
                if !(r > 0.0 && r < 1.0) {
                    return Err(Error::param("rho", format!("must lie in (0, 1), got {r}")));
                }
                Form::Exponential { c, r }
            }
            CorrelationKind::Power => {
                let sigma = spec
                    .sigma
                    .ok_or_else(|| Error::param("sigma", "required for the power model"))?;
                let s = spec
                    .s
                    .ok_or_else(|| Error::param("s", "required for the power model"))?;
                if !sigma.is_finite() {
                    return Err(Error::param("sigma", "must be finite"));
                }
                if !(s > 1.0) || !s.is_finite() {
                    return Err(Error::param(
                        "s",
                        format!("must exceed 1 for an absolutely summable model, got {s}"),
                    ));
                }
                Form::Power {
                    sigma,
                    s,
                    tail: Arc::new(PowerSeries::new(s, 0)),
                    weighted: Arc::new(PowerSeries::new(s - 1.0, 0)),
                }
            }
        };
        Ok(CorrelationModel {
            spec: spec.clone(),
            form,
        })
    }

    pub fn zero() -> Self {
        CorrelationModel {
            spec: CorrelationSpec {
                kind: CorrelationKind::Zero,
                c: None,
                rho: None,
                sigma: None,
                s: None,
                table: None,
            },
            form: Form::Zero,
        }
    }

    /// Finite-range model with `ρ_d = lags[d-1]`.
    pub fn finite(lags: &[f64]) -> Result<Self> {
        let table = lags
            .iter()
            .enumerate()
            .map(|(i, r)| ((i + 1).to_string(), *r))
            .collect();
        Self::from_spec(&CorrelationSpec {
            kind: CorrelationKind::Finite,
            c: None,
            rho: None,
            sigma: None,
            s: None,
            table: Some(table),
        })
    }

    pub fn exponential(c: f64, r: f64) -> Result<Self> {
        Self::from_spec(&CorrelationSpec {
            kind: CorrelationKind::Exponential,
            c: Some(c),
            rho: Some(r),
            sigma: None,
            s: None,
            table: None,
        })
    }

    pub fn power(sigma: f64, s: f64) -> Result<Self> {
        Self::from_spec(&CorrelationSpec {
            kind: CorrelationKind::Power,
            c: None,
            rho: None,
            sigma: Some(sigma),
            s: Some(s),
            table: None,
        })
    }

    pub fn spec(&self) -> &CorrelationSpec {
        &self.spec
    }

    pub fn kind(&self) -> CorrelationKind {
        self.spec.kind
    }

    /// `ρ_n`, with `ρ_0 = 1`.
    pub fn rho(&self, n: u64) -> f64 {
        if n == 0 {
            return 1.0;
        }
        match &self.form {
            Form::Zero => 0.0,
            Form::Finite(lags) => lags.get(n as usize - 1).copied().unwrap_or(0.0),
            Form::Exponential { c, r } => c * r.powf(n as f64),
            Form::Power { sigma, s, .. } => sigma * (n as f64).powf(-s),
        }
    }

    /// Largest lag with nonzero correlation; `None` for infinite range.
    pub fn range(&self) -> Option<usize> {
        match &self.form {
            Form::Zero => Some(0),
            Form::Finite(lags) => Some(lags.len()),
            _ => None,
        }
    }

    pub fn flags(&self) -> SummabilityFlags {
        match &self.form {
            Form::Power { s, sigma, .. } => SummabilityFlags {
                abs_summable: true,
                n_weighted_summable: *s > 2.0 || *sigma == 0.0,
                exponential: *sigma == 0.0,
            },
            _ => SummabilityFlags {
                abs_summable: true,
                n_weighted_summable: true,
                exponential: true,
            },
        }
    }

    /// `t(n) = Σ_{k≥n} |ρ_k|` over lags `k ≥ 1`.
    pub fn tail_abs_sum(&self, n: u64) -> f64 {
        let n = n.max(1);
        match &self.form {
            Form::Zero => 0.0,
            Form::Finite(lags) => lags.iter().skip(n as usize - 1).map(|r| r.abs()).sum(),
            Form::Exponential { c, r } => c.abs() * r.powf(n as f64) / (1.0 - r),
            Form::Power { sigma, tail, .. } => sigma.abs() * tail.sum_from(n, Kernel::One).unwrap(),
        }
    }

    /// `Σ_{k≥1} k |ρ_k|`, or `None` when infinite.
    pub fn weighted_abs_sum(&self) -> Option<f64> {
        match &self.form {
            Form::Zero => Some(0.0),
            Form::Finite(lags) => Some(
                lags.iter()
                    .enumerate()
                    .map(|(i, r)| (i + 1) as f64 * r.abs())
                    .sum(),
            ),
            Form::Exponential { c, r } => Some(c.abs() * r / ((1.0 - r) * (1.0 - r))),
            Form::Power {
                sigma, weighted, ..
            } => {
                if *sigma == 0.0 {
                    Some(0.0)
                } else {
                    weighted.sum_from(1, Kernel::One).map(|v| sigma.abs() * v)
                }
            }
        }
    }

    /// `Δ_n = Σ_{k=1}^n t(k) = Σ_{j≤n} j|ρ_j| + n·t(n+1)`.
    pub fn delta_correction(&self, n: u64) -> f64 {
        let head: f64 = match &self.form {
            Form::Finite(lags) => lags
                .iter()
                .take(n as usize)
                .enumerate()
                .map(|(i, r)| (i + 1) as f64 * r.abs())
                .sum(),
            Form::Zero => 0.0,
            _ => (1..=n).map(|j| j as f64 * self.rho(j).abs()).sum(),
        };
        head + n as f64 * self.tail_abs_sum(n + 1)
    }

    /// Finite-range model agreeing on lags `1..=q`, zero beyond.
    pub fn truncate(&self, q: usize) -> CorrelationModel {
        if let Some(range) = self.range() {
            if q >= range {
                return self.clone();
            }
        }
        let lags: Vec<f64> = (1..=q as u64).map(|d| self.rho(d)).collect();
        if lags.iter().all(|&r| r == 0.0) {
            return CorrelationModel::zero();
        }
        CorrelationModel::finite(&lags).expect("finite lags form a valid model")
    }

    /// Checks that the `n × n` Toeplitz matrix `[ρ_{|i−j|}]` is positive
    /// semidefinite using the Levinson–Durbin recursion.
    pub fn validate_covariance(&self, n: usize) -> CovarianceVerdict {
        let r: Vec<f64> = (0..n as u64).map(|k| self.rho(k)).collect();
        levinson_check(&r)
    }
}

fn finite_form(table: &BTreeMap<String, f64>) -> Result<Form> {
    let mut pairs = Vec::with_capacity(table.len());
    for (key, &r) in table {
        let d: usize = key
            .trim()
            .parse()
            .map_err(|_| Error::param("table", format!("lag `{key}` is not a positive integer")))?;
        if d == 0 {
            return Err(Error::param("table", "lag 0 is fixed to 1 and must not be given"));
        }
        if !r.is_finite() {
            return Err(Error::param("table", format!("correlation at lag {d} is not finite")));
        }
        pairs.push((d, r));
    }
    let range = pairs
        .iter()
        .filter(|p| p.1 != 0.0)
        .map(|p| p.0)
        .max()
        .unwrap_or(0);
    if range == 0 {
        return Ok(Form::Zero);
    }
    if range > 1 << 20 {
        return Err(Error::param("table", "largest lag must be at most 2^20"));
    }
    let mut lags = vec![0.0; range];
    for (d, r) in pairs {
        if d <= range {
            lags[d - 1] = r;
        }
    }
    Ok(Form::Finite(lags))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum CovarianceVerdict {
    /// Positive semidefinite. `singular_at` records the first leading minor
    /// found numerically singular, after which the recursion stops.
    Pass {
        log_det: f64,
        singular_at: Option<usize>,
    },
    Fail { minor: usize, determinant: f64 },
}

impl CovarianceVerdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, CovarianceVerdict::Pass { .. })
    }
}

const PIVOT_FLOOR: f64 = 1e-12;

fn levinson_check(r: &[f64]) -> CovarianceVerdict {
    let n = r.len();
    if n == 0 {
        return CovarianceVerdict::Pass {
            log_det: 0.0,
            singular_at: None,
        };
    }
    let mut err = r[0];
    let mut log_det = err.ln();
    let mut a: Vec<f64> = Vec::with_capacity(n);
    let mut prev = Vec::with_capacity(n);
    for k in 1..n {
        let mut num = r[k];
        for j in 1..k {
            num -= a[j - 1] * r[k - j];
        }
        let kappa = num / err;
        prev.clear();
        prev.extend_from_slice(&a);
        for j in 1..k {
            a[j - 1] = prev[j - 1] - kappa * prev[k - j - 1];
        }
        a.push(kappa);
        let next = err * (1.0 - kappa * kappa);
        if next < -PIVOT_FLOOR {
            return CovarianceVerdict::Fail {
                minor: k + 1,
                determinant: log_det.exp() * next,
            };
        }
        if next <= PIVOT_FLOOR {
            return CovarianceVerdict::Pass {
                log_det: f64::NEG_INFINITY,
                singular_at: Some(k + 1),
            };
        }
        err = next;
        log_det += err.ln();
    }
    CovarianceVerdict::Pass {
        log_det,
        singular_at: None,
    }
}

const CLIP_FLOOR: f64 = -1e-12;
const ERROR_FLOOR: f64 = -1e-8;
const MAX_EMBEDDING: usize = 1 << 24;
const MAX_DOUBLINGS: u32 = 6;

/// Sampling metadata recorded next to every generated sequence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleMetadata {
    pub n: usize,
    pub seed: u64,
    pub embedding_size: usize,
    pub min_eigenvalue: f64,
    pub clipped_mass: f64,
}

/// Circulant-embedding sampler for a fixed model and length.
#[derive(Clone)]
pub struct GaussianSampler {
    n: usize,
    m: usize,
    scale: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    min_eigenvalue: f64,
    clipped_mass: f64,
}

impl std::fmt::Debug for GaussianSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaussianSampler")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("min_eigenvalue", &self.min_eigenvalue)
            .field("clipped_mass", &self.clipped_mass)
            .finish()
    }
}

impl GaussianSampler {
    pub fn new(model: &CorrelationModel, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "sample length must be positive"));
        }
        let mut m = (2 * (n - 1)).max(1).next_power_of_two();
        let cap = (m << MAX_DOUBLINGS).min(MAX_EMBEDDING).max(m);
        let mut planner = FftPlanner::<f64>::new();
        loop {
            let fft = planner.plan_fft_forward(m);
            let mut row: Vec<Complex<f64>> = (0..m)
                .map(|k| Complex::new(model.rho(k.min(m - k) as u64), 0.0))
                .collect();
            fft.process(&mut row);
            let min = row.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
            if min >= CLIP_FLOOR || 2 * m > cap {
                if min < ERROR_FLOOR {
                    if n <= 4096 {
                        if let CovarianceVerdict::Fail { minor, determinant } =
                            model.validate_covariance(n)
                        {
                            return Err(Error::NotPositiveDefinite { minor, determinant });
                        }
                    }
                    return Err(Error::NegativeEmbedding {
                        size: m,
                        min_eigenvalue: min,
                    });
                }
                let clipped_mass = row.iter().map(|z| (-z.re).max(0.0)).sum();
                let scale = row
                    .iter()
                    .map(|z| (z.re.max(0.0) / m as f64).sqrt())
                    .collect();
                return Ok(GaussianSampler {
                    n,
                    m,
                    scale,
                    fft,
                    min_eigenvalue: min,
                    clipped_mass,
                });
            }
            m *= 2;
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn embedding_size(&self) -> usize {
        self.m
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = self
            .scale
            .iter()
            .map(|&s| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                Complex::new(s * a, s * b)
            })
            .collect();
        self.fft.process(&mut buf);
        buf.iter().take(self.n).map(|z| z.re).collect()
    }

    pub fn metadata(&self, seed: u64) -> SampleMetadata {
        SampleMetadata {
            n: self.n,
            seed,
            embedding_size: self.m,
            min_eigenvalue: self.min_eigenvalue,
            clipped_mass: self.clipped_mass,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSample {
    pub values: Vec<f64>,
    pub metadata: SampleMetadata,
}

impl GaussianSample {
    /// Writes the values as consecutive little-endian `f64`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()
    }
}

/// Random stream for replica `index` of a run with master seed `seed`.
pub fn replica_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `ω_1..ω_n` with covariance `ρ_{|i−j|}`.
pub fn sample_gaussian(model: &CorrelationModel, n: usize, seed: u64) -> Result<GaussianSample> {
    let sampler = GaussianSampler::new(model, n)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok(GaussianSample {
        values: sampler.sample(&mut rng),
        metadata: sampler.metadata(seed),
    })
}
