//! One function per subcommand. Each validates its inputs, returns the plan
//! on a dry run, and otherwise computes the primary output.

use std::path::Path;

use pinning_core::correlations::{sample_gaussian, CovarianceVerdict};
use pinning_core::critical::{
    critical_curve, exponent_fit, small_beta_check, FreeEnergySolver, FIT_SOLVER_TOLERANCE,
};
use pinning_core::montecarlo::{
    annealed_identity_check, jensen_gap, quenched_free_energy_mc, replica_log_partitions,
    IdentityCheck, JensenGap, MCEstimate,
};
use pinning_core::partition::{annealed_logz_grid, Boundary};
use pinning_core::pattern::MAX_PATTERN_BITS;
use pinning_core::renewal::MeanGap;
use pinning_core::transfer::{gurevich_pressure, PotentialSpec, PressureEstimate, TransferMatrix};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Check, RunConfig};
use crate::CliError;

pub enum Outcome {
    /// Dry run: the execution plan.
    Plan(String),
    /// Primary output, and an optional message for stdout when the primary
    /// output goes to a file.
    Done { data: Vec<u8>, notice: Option<String> },
}

impl Outcome {
    fn text(s: String) -> Self {
        Outcome::Done {
            data: s.into_bytes(),
            notice: None,
        }
    }
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn csv(cfg: &RunConfig, command: &str, extra: &[String], columns: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut out = cfg.header(command);
    for line in extra {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn plan(cfg: &RunConfig, command: &str, lines: &[String]) -> Outcome {
    let mut out = format!(
        "dry run: {command}\nconfig-sha256: {}\nlaw: {:?}\ncorrelation: {:?}\n",
        cfg.hash(),
        cfg.law.kind,
        cfg.correlation.kind
    );
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    Outcome::Plan(out)
}

fn check_q(q: usize) -> Result<(), CliError> {
    if q > MAX_PATTERN_BITS {
        return Err(CliError::config(format!("q = {q} exceeds the limit of {MAX_PATTERN_BITS}")));
    }
    Ok(())
}

fn write_side(path: &Path, data: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, data).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct SpectralReport {
    q: usize,
    beta: f64,
    #[serde(rename = "F")]
    tilt: f64,
    #[serde(rename = "logLambda")]
    log_lambda: f64,
    bracket: [f64; 2],
    residual: f64,
    iterations: usize,
}

pub fn pressure(cfg: &RunConfig, dry_run: bool) -> Result<Outcome, CliError> {
    let law = cfg.law()?;
    let model = cfg.model()?;
    let betas = cfg.nonnegative_grid("beta")?;
    let tilts = if cfg.tilt.is_some() { cfg.nonnegative_grid("F")? } else { vec![0.0] };
    let q = cfg.q(&model)?;
    check_q(q)?;
    if !model.flags().abs_summable {
        return Err(CliError::config("correlation: pressure needs Σ|ρ_n| < ∞"));
    }
    let points: Vec<(f64, f64)> = betas
        .iter()
        .flat_map(|&b| tilts.iter().map(move |&f| (b, f)))
        .collect();
    if cfg.output.matrix.is_some() && points.len() != 1 {
        return Err(CliError::config("output.matrix needs a single (beta, F) point"));
    }
    if dry_run {
        return Ok(plan(
            cfg,
            "pressure",
            &[format!(
                "q: {q}\npoints: {} beta × {} F = {}",
                betas.len(),
                tilts.len(),
                points.len()
            )],
        ));
    }
    let est: Vec<PressureEstimate> = points
        .par_iter()
        .map(|&(b, f)| gurevich_pressure(&law, &model, b, f, q))
        .collect::<Result<_, _>>()?;
    if let Some(path) = &cfg.output.report {
        let reports: Vec<SpectralReport> = est
            .iter()
            .map(|p| SpectralReport {
                q: p.q,
                beta: p.beta,
                tilt: p.tilt,
                log_lambda: p.value,
                bracket: [p.lower, p.upper],
                residual: p.residual,
                iterations: p.iterations,
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&reports).expect("reports serialize");
        text.push('\n');
        write_side(path, text.as_bytes())?;
    }
    if let Some(path) = &cfg.output.matrix {
        let (b, f) = points[0];
        let qe = model.range().map_or(q, |r| r.min(q));
        let m = TransferMatrix::build(&PotentialSpec::truncated(&law, &model, b, qe).with_tilt(f))?;
        let mut buf = Vec::new();
        m.write_coordinate(&mut buf).expect("writing to memory");
        write_side(path, &buf)?;
    }
    let rows = est
        .iter()
        .map(|p| {
            vec![
                num(p.beta),
                num(p.tilt),
                p.q.to_string(),
                num(p.value),
                num(p.lower),
                num(p.upper),
            ]
        })
        .collect();
    Ok(Outcome::text(csv(
        cfg,
        "pressure",
        &[],
        &["beta", "F", "q", "logLambda", "lo", "hi"],
        rows,
    )))
}

pub fn critical_curve_cmd(cfg: &RunConfig, dry_run: bool) -> Result<Outcome, CliError> {
    let law = cfg.law()?;
    let model = cfg.model()?;
    let betas = cfg.nonnegative_grid("beta")?;
    let q = cfg.q(&model)?;
    check_q(q)?;
    if dry_run {
        return Ok(plan(cfg, "critical-curve", &[format!("q: {q}\npoints: {}", betas.len())]));
    }
    let pts: Vec<_> = betas
        .par_iter()
        .map(|&b| critical_curve(&law, &model, b, q))
        .collect::<Result<_, _>>()?;
    let rows = pts
        .iter()
        .map(|c| vec![num(c.beta), num(c.h_c), num(c.lower), num(c.upper)])
        .collect();
    Ok(Outcome::text(csv(
        cfg,
        "critical-curve",
        &[],
        &["beta", "h_c", "lo", "hi"],
        rows,
    )))
}

pub fn free_energy(cfg: &RunConfig, dry_run: bool) -> Result<Outcome, CliError> {
    let law = cfg.law()?;
    let model = cfg.model()?;
    let betas = cfg.nonnegative_grid("beta")?;
    let q = cfg.q(&model)?;
    check_q(q)?;
    let (offsets, by_delta) = match (&cfg.delta, &cfg.h) {
        (Some(_), None) => (cfg.grid("delta")?, true),
        (None, Some(_)) => (cfg.grid("h")?, false),
        _ => return Err(CliError::config("free-energy needs exactly one of `delta` and `h`")),
    };
    let tol = cfg.tol.unwrap_or(FIT_SOLVER_TOLERANCE);
    if !(tol >= 1e-12) {
        return Err(CliError::config("tol must be at least 1e-12"));
    }
    if dry_run {
        return Ok(plan(
            cfg,
            "free-energy",
            &[format!(
                "q: {q}\npoints: {} beta × {} {} = {}",
                betas.len(),
                offsets.len(),
                if by_delta { "delta" } else { "h" },
                betas.len() * offsets.len()
            )],
        ));
    }
    let solvers: Vec<FreeEnergySolver> = betas
        .par_iter()
        .map(|&b| FreeEnergySolver::new(&law, &model, b, q))
        .collect::<Result<_, _>>()?;
    let tasks: Vec<(usize, f64)> = (0..betas.len())
        .flat_map(|i| offsets.iter().map(move |&x| (i, x)))
        .collect();
    let pts: Vec<_> = tasks
        .par_iter()
        .map(|&(i, x)| {
            let s = &solvers[i];
            let h = if by_delta { s.h_c() + x } else { x };
            s.solve(h, tol)
        })
        .collect::<Result<_, _>>()?;
    let rows = pts
        .iter()
        .map(|p| vec![num(p.beta), num(p.delta), num(p.free_energy)])
        .collect();
    Ok(Outcome::text(csv(
        cfg,
        "free-energy",
        &[],
        &["beta", "delta", "F"],
        rows,
    )))
}

pub fn exponent(cfg: &RunConfig, dry_run: bool) -> Result<Outcome, CliError> {
    let law = cfg.law()?;
    let model = cfg.model()?;
    let betas = cfg.nonnegative_grid("beta")?;
    let deltas = cfg.grid("delta")?;
    if deltas.len() < 2 || deltas.iter().any(|d| *d <= 0.0) {
        return Err(CliError::config("delta needs at least two positive values"));
    }
    let q = cfg.q.unwrap_or(1);
    check_q(q)?;
    if dry_run {
        return Ok(plan(
            cfg,
            "exponent",
            &[format!(
                "starting q: {q} (raised until 2β²t(q+1) ≤ δ_min/100)\nfits: {} × {} delta points",
                betas.len(),
                deltas.len()
            )],
        ));
    }
    let fits: Vec<_> = betas
        .par_iter()
        .map(|&b| exponent_fit(&law, &model, b, q, &deltas))
        .collect::<Result<_, _>>()?;
    let rows = fits
        .iter()
        .map(|f| vec![num(f.beta), num(f.slope), num(f.residual)])
        .collect();
    let used: Vec<String> = fits.iter().map(|f| f.q.to_string()).collect();
    Ok(Outcome::text(csv(
        cfg,
        "exponent",
        &[format!("q-used: {}", used.join(" "))],
        &["beta", "slope", "residual"],
        rows,
    )))
}

pub fn asympt(cfg: &RunConfig, dry_run: bool) -> Result<Outcome, CliError> {
    let law = cfg.law()?;
    let model = cfg.model()?;
    let betas = cfg.grid("beta")?;
    if betas.iter().any(|b| *b <= 0.0) {
        return Err(CliError::config("beta values must be positive"));
    }
    let q = cfg.q(&model)?;
    check_q(q)?;
    let n_max = cfg.n_max.unwrap_or(40);
    if dry_run {
        return Ok(plan(
            cfg,
            "asympt",
            &[format!("q: {q}\nn_max: {n_max}\npoints: {}", betas.len())],
        ));
    }
    let t = small_beta_check(&law, &model, &betas, q, n_max)?;
    let rows = t
        .rows
        .iter()
        .map(|r| vec![num(r.beta), num(r.ratio), num(r.target)])
        .collect();
    Ok(Outcome::text(csv(
        cfg,
        "asympt",
        &[
            format!("target-terms: {}", t.target.n_max),
            format!("series-tail-bound: {}", num(t.target.tail_bound)),
        ],
        &["beta", "ratio", "target"],
        rows,
    )))
}

#[derive(Serialize)]
struct QuenchedRow {
    beta: f64,
    h: f64,
    estimate: MCEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    identity: Option<IdentityCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    jensen: Option<JensenGap>,
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    program: &'static str,
    version: &'static str,
    command: &'a str,
    config_sha256: String,
    config: String,
    results: T,
}

fn report<T: Serialize>(cfg: &RunConfig, command: &str, results: T) -> String {
    let r = Report {
        program: "pinning",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_sha256: cfg.hash(),
        config: cfg.canonical(),
        results,
    };
    let mut s = serde_json::to_string_pretty(&r).expect("report serializes");
    s.push('\n');
    s
}

pub fn quenched(cfg: &RunConfig, dry_run: bool) -> Result<Outcome, CliError> {
    let law = cfg.law()?;
    let model = cfg.model()?;
    let betas = cfg.nonnegative_grid("beta")?;
    let hs = cfg.grid("h")?;
    let n = cfg.require(cfg.n, "n")?;
    let replicas = cfg.require(cfg.replicas, "replicas")?;
    let seed = cfg
        .seed
        .ok_or_else(|| CliError::config("missing field `seed` (or pass --seed)"))?;
    let checks = cfg.checks.clone().unwrap_or_default();
    if let CovarianceVerdict::Fail { minor, determinant } = model.validate_covariance(n.min(4096)) {
        return Err(CliError::config(format!(
            "correlation: covariance is not positive semidefinite (leading minor {minor}, determinant {determinant:e})"
        )));
    }
    if dry_run {
        return Ok(plan(
            cfg,
            "quenched",
            &[format!(
                "n: {n}\nreplicas: {replicas}\nseed: {seed}\npoints: {} beta × {} h\nchecks: {checks:?}",
                betas.len(),
                hs.len()
            )],
        ));
    }
    let mut rows = Vec::new();
    let mut dump = Vec::new();
    for &beta in &betas {
        for &h in &hs {
            let estimate = quenched_free_energy_mc(&law, &model, beta, h, n, replicas, seed)?;
            let identity = if checks.contains(&Check::Identity) {
                Some(annealed_identity_check(&law, &model, beta, h, n, replicas, seed)?)
            } else {
                None
            };
            let jensen = if checks.contains(&Check::Jensen) {
                Some(jensen_gap(&law, &model, beta, h, n, replicas, seed)?)
            } else {
                None
            };
            if cfg.output.replicas.is_some() {
                let logs =
                    replica_log_partitions(&law, &model, beta, h, n, replicas, seed, Boundary::Pinned)?;
                for (i, l) in logs.iter().enumerate() {
                    dump.push(vec![num(beta), num(h), i.to_string(), num(*l)]);
                }
            }
            rows.push(QuenchedRow {
                beta,
                h,
                estimate,
                identity,
                jensen,
            });
        }
    }
    if let Some(path) = &cfg.output.replicas {
        let text = csv(cfg, "quenched-replicas", &[], &["beta", "h", "replica", "logZ"], dump);
        write_side(path, text.as_bytes())?;
    }
    Ok(Outcome::text(report(cfg, "quenched", rows)))
}

pub fn partition(cfg: &RunConfig, dry_run: bool) -> Result<Outcome, CliError> {
    let law = cfg.law()?;
    let model = cfg.model()?;
    let betas = cfg.nonnegative_grid("beta")?;
    let hs = cfg.grid("h")?;
    let n = cfg.require(cfg.n, "n")?;
    let q = cfg.q(&model)?;
    check_q(q)?;
    let boundary = cfg.boundary.unwrap_or_default();
    if dry_run {
        return Ok(plan(
            cfg,
            "partition",
            &[format!(
                "q: {q}\nn: {n}\nboundary: {boundary:?}\npoints: {} beta × {} h",
                betas.len(),
                hs.len()
            )],
        ));
    }
    let rows: Vec<_> = betas
        .par_iter()
        .map(|&b| annealed_logz_grid(&law, &model, &[b], &hs, n, q, boundary))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .map(|r| {
            vec![
                num(r.beta),
                num(r.h),
                r.n.to_string(),
                num(r.log_z),
                num(r.lower),
                num(r.upper),
            ]
        })
        .collect();
    Ok(Outcome::text(csv(
        cfg,
        "partition",
        &[],
        &["beta", "h", "n", "logZ", "lower", "upper"],
        rows,
    )))
}

pub fn sample(cfg: &RunConfig, dry_run: bool, out: Option<&Path>) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    cfg.law()?;
    let n = cfg.require(cfg.n, "n")?;
    let seed = cfg
        .seed
        .ok_or_else(|| CliError::config("missing field `seed` (or pass --seed)"))?;
    if out.is_none() {
        return Err(CliError::config("sample writes binary data and needs --out"));
    }
    if dry_run {
        return Ok(plan(cfg, "sample", &[format!("n: {n}\nseed: {seed}")]));
    }
    let s = sample_gaussian(&model, n, seed)?;
    let mut data = Vec::with_capacity(8 * n);
    s.write_binary(&mut data).expect("writing to memory");
    let meta = report(cfg, "sample", &s.metadata);
    let notice = match &cfg.output.metadata {
        Some(path) => {
            write_side(path, meta.as_bytes())?;
            None
        }
        None => Some(meta),
    };
    Ok(Outcome::Done { data, notice })
}

pub fn validate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let law = cfg.law()?;
    let model = cfg.model()?;
    for name in ["beta", "h", "delta", "F"] {
        let present = match name {
            "beta" => cfg.beta.is_some(),
            "h" => cfg.h.is_some(),
            "delta" => cfg.delta.is_some(),
            _ => cfg.tilt.is_some(),
        };
        if present {
            cfg.grid(name)?;
        }
    }
    if let Some(q) = cfg.q {
        check_q(q)?;
    }
    let mean = match law.mean() {
        MeanGap::Finite(m) => num(m),
        MeanGap::Infinite => "infinite".into(),
    };
    let flags = model.flags();
    let mut out = format!(
        "config ok\nconfig-sha256: {}\nlaw: {:?}, mean gap {mean}\ncorrelation: {:?}, abs-summable {}, n-weighted-summable {}, exponential {}\n",
        cfg.hash(),
        law.kind(),
        model.kind(),
        flags.abs_summable,
        flags.n_weighted_summable,
        flags.exponential
    );
    if let Some(n) = cfg.n {
        let verdict = match model.validate_covariance(n.min(4096)) {
            CovarianceVerdict::Pass { .. } => "positive semidefinite".to_string(),
            CovarianceVerdict::Fail { minor, determinant } => {
                format!("not positive semidefinite (leading minor {minor}, determinant {determinant:e})")
            }
        };
        out.push_str(&format!("covariance at n = {}: {verdict}\n", n.min(4096)));
    }
    Ok(Outcome::text(out))
}
