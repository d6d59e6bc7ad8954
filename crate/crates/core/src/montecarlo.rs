//! Quenched free energies by replication, and simulation checks of the
//! annealed identity `𝔼 Z^ω = Z^a` and of Jensen's inequality.
//!
//! Replica `i` draws its disorder from the ChaCha20 stream `i` of the master
//! seed, and results are reduced in replica order, so estimates do not depend
//! on the number of worker threads.

use rayon::prelude::*;
use serde::Serialize;

use crate::correlations::{replica_rng, CorrelationModel, GaussianSampler};
use crate::error::{Error, Result};
use crate::partition::{annealed_logz_bracket, annealed_logz_dp, Boundary, QuenchedKernel};
use crate::renewal::RenewalLaw;
use crate::series::log_sum_exp;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MCEstimate {
    /// Sample mean of `(1/n) log Z^ω`.
    pub mean: f64,
    /// Sample standard deviation over `√replicas`.
    pub std_error: f64,
    pub replicas: usize,
    pub seed: u64,
    pub n: usize,
    /// `(1/n) log` of the sample mean of `Z^ω`.
    pub log_mean_z: f64,
}

/// `log Z^ω` for each replica, in replica order.
#[allow(clippy::too_many_arguments)]
pub fn replica_log_partitions(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    h: f64,
    n: usize,
    replicas: usize,
    seed: u64,
    boundary: Boundary,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::param("n", "system size must be positive"));
    }
    let sampler = GaussianSampler::new(model, n)?;
    let kernel = QuenchedKernel::new(law, n);
    Ok((0..replicas as u64)
        .into_par_iter()
        .map(|i| {
            let omega = sampler.sample(&mut replica_rng(seed, i));
            kernel.log_partition(&omega, beta, h, boundary)
        })
        .collect())
}

fn mean_and_error(xs: &[f64]) -> (f64, f64) {
    if xs.iter().all(|x| *x == xs[0]) {
        return (xs[0], 0.0);
    }
    let r = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / r;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

fn check_replicas(replicas: usize) -> Result<()> {
    if replicas < 2 {
        return Err(Error::param("replicas", "at least two replicas are needed"));
    }
    Ok(())
}

fn estimate(logs: &[f64], n: usize, seed: u64) -> MCEstimate {
    let per_site: Vec<f64> = logs.iter().map(|l| l / n as f64).collect();
    let (mean, std_error) = mean_and_error(&per_site);
    let r = logs.len();
    MCEstimate {
        mean,
        std_error,
        replicas: r,
        seed,
        n,
        log_mean_z: (log_sum_exp(logs.iter().copied()) - (r as f64).ln()) / n as f64,
    }
}

/// Pinned finite-volume quenched free energy `(1/n) 𝔼 log Z^ω_{n,β,h}`.
pub fn quenched_free_energy_mc(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    h: f64,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<MCEstimate> {
    check_replicas(replicas)?;
    let logs = replica_log_partitions(law, model, beta, h, n, replicas, seed, Boundary::Pinned)?;
    Ok(estimate(&logs, n, seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IdentityCheck {
    /// Sample mean of `Z^ω / Z^a`.
    pub mc_mean: f64,
    pub std_error: f64,
    /// Exact `log Z^a` from the pattern recursion.
    pub exact_log_z: f64,
    /// `log` of the sample mean of `Z^ω`.
    pub log_mean_z: f64,
    pub z_score: f64,
    pub replicas: usize,
}

pub const IDENTITY_MAX_N: usize = 400;
pub const IDENTITY_MAX_BETA: f64 = 0.5;

/// Compares the replica mean of `Z^ω` with the exact annealed `Z^a`.
pub fn annealed_identity_check(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    h: f64,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<IdentityCheck> {
    check_replicas(replicas)?;
    if n > IDENTITY_MAX_N {
        return Err(Error::param("n", format!("identity check is limited to n ≤ {IDENTITY_MAX_N}")));
    }
    if !(0.0..=IDENTITY_MAX_BETA).contains(&beta) {
        return Err(Error::param(
            "beta",
            format!("identity check is limited to 0 ≤ β ≤ {IDENTITY_MAX_BETA}"),
        ));
    }
    let exact = annealed_logz_dp(law, model, beta, h, n, Boundary::Pinned)?.ln();
    let logs = replica_log_partitions(law, model, beta, h, n, replicas, seed, Boundary::Pinned)?;
    let ratios: Vec<f64> = logs.iter().map(|l| (l - exact).exp()).collect();
    let (mc_mean, std_error) = mean_and_error(&ratios);
    let z_score = if std_error > 0.0 {
        (mc_mean - 1.0) / std_error
    } else if (mc_mean - 1.0).abs() <= 1e-10 {
        0.0
    } else {
        f64::INFINITY.copysign(mc_mean - 1.0)
    };
    Ok(IdentityCheck {
        mc_mean,
        std_error,
        exact_log_z: exact,
        log_mean_z: log_sum_exp(logs.iter().copied()) - (logs.len() as f64).ln(),
        z_score,
        replicas,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JensenGap {
    pub quenched: MCEstimate,
    /// `(1/n) log Z^a`, exact for finite range.
    pub annealed: f64,
    /// Half-width of the truncation bracket on `annealed` (zero for finite range).
    pub annealed_width: f64,
    /// `annealed − quenched.mean`.
    pub gap: f64,
}

impl JensenGap {
    /// `gap ≥ −4σ`, allowing for the annealed truncation bracket.
    pub fn consistent(&self) -> bool {
        self.gap + self.annealed_width >= -4.0 * self.quenched.std_error
    }

    /// `gap > 4σ` even at the low end of the annealed bracket.
    pub fn strictly_positive(&self) -> bool {
        self.gap - self.annealed_width > 4.0 * self.quenched.std_error
    }
}

/// Truncation level used for the annealed value of infinite-range models.
pub const JENSEN_ANNEALED_Q: usize = 16;

pub fn jensen_gap(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    h: f64,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<JensenGap> {
    let quenched = quenched_free_energy_mc(law, model, beta, h, n, replicas, seed)?;
    let b = annealed_logz_bracket(law, model, beta, h, n, JENSEN_ANNEALED_Q, Boundary::Pinned)?;
    let annealed = b.value / n as f64;
    Ok(JensenGap {
        quenched,
        annealed,
        annealed_width: 0.5 * (b.upper - b.lower) / n as f64,
        gap: annealed - quenched.mean,
    })
}
