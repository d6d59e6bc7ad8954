//! Annealed critical curve, annealed free energy and exponent fits.
//!
//! With `P(F)` the pressure of `φ_β − P_G(φ_β) − F·π_0`, the annealed critical
//! point is `h_c = −β²/2 − P_G(φ_β)` and, for `δ = h − h_c > 0`, the annealed
//! free energy is the unique root of `P(F) = −δ`.

use serde::Serialize;

use crate::correlations::CorrelationModel;
use crate::error::{Error, Result};
use crate::pattern::MAX_PATTERN_BITS;
use crate::renewal::{renewal_mass, MeanGap, RenewalLaw};
use crate::transfer::{
    effective_q, gibbs_summary, gurevich_pressure, spectral, spectral_with_guess, truncation_width,
    PotentialSpec, SpectralResult, TransferMatrix,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CriticalPoint {
    pub beta: f64,
    pub h_c: f64,
    pub lower: f64,
    pub upper: f64,
    pub q: usize,
    pub log_lambda: f64,
}

impl CriticalPoint {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

fn require_weighted(model: &CorrelationModel) -> Result<()> {
    if model.flags().n_weighted_summable {
        Ok(())
    } else {
        Err(Error::Unsupported(
            "the annealed critical curve needs Σ n|ρ_n| < ∞".into(),
        ))
    }
}

/// `h_c = −β²/2 − log λ_β` of the model truncated at `q`, bracketed for the
/// untruncated model.
pub fn critical_curve(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    q: usize,
) -> Result<CriticalPoint> {
    require_weighted(model)?;
    let p = gurevich_pressure(law, model, beta, 0.0, q)?;
    let base = -0.5 * beta * beta;
    Ok(CriticalPoint {
        beta,
        h_c: base - p.value,
        lower: base - p.upper,
        upper: base - p.lower,
        q: p.q,
        log_lambda: p.value,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FreeEnergyPoint {
    pub beta: f64,
    pub h: f64,
    pub delta: f64,
    pub free_energy: f64,
    /// Relative width of the final root bracket (zero for closed-form exits).
    pub tolerance: f64,
    /// `|P(F) + δ|` at the returned root.
    pub residual: f64,
    pub q: usize,
    pub solves: usize,
}

const MAX_ROOT_STEPS: usize = 200;

/// Reusable solver for one `(β, q)`: the untilted pressure is computed once.
#[derive(Clone, Debug)]
pub struct FreeEnergySolver {
    beta: f64,
    q: usize,
    matrix: TransferMatrix,
    base: SpectralResult,
}

impl FreeEnergySolver {
    pub fn new(law: &RenewalLaw, model: &CorrelationModel, beta: f64, q: usize) -> Result<Self> {
        require_weighted(model)?;
        let q = effective_q(model, q);
        let matrix = TransferMatrix::build(&PotentialSpec::truncated(law, model, beta, q))?;
        let base = spectral(&matrix)?;
        Ok(FreeEnergySolver {
            beta,
            q,
            matrix,
            base,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Critical point of the truncated model.
    pub fn h_c(&self) -> f64 {
        -0.5 * self.beta * self.beta - self.base.log_lambda
    }

    /// `P(φ_{β,F})` with its spectral data and the Gibbs mean gap (the
    /// negated derivative in `F`).
    fn tilted(&self, f: f64, guess: Option<&SpectralResult>) -> Result<(f64, SpectralResult)> {
        let m = self.matrix.retilt(f, self.base.log_lambda);
        let s = spectral_with_guess(&m, guess.or(Some(&self.base)))?;
        Ok((s.log_lambda, s))
    }

    /// `P(φ_{β,F})`, the pressure of the tilted, recentred potential.
    pub fn pressure(&self, f: f64) -> Result<f64> {
        Ok(self.tilted(f, None)?.0)
    }

    fn mean_gap(&self, f: f64, s: &SpectralResult) -> f64 {
        let m = self.matrix.retilt(f, self.base.log_lambda);
        match gibbs_summary(&m, s, 0).mean {
            MeanGap::Finite(v) => v,
            MeanGap::Infinite => f64::INFINITY,
        }
    }

    pub fn solve(&self, h: f64, tol: f64) -> Result<FreeEnergyPoint> {
        self.solve_from(h, tol, None)
    }

    /// As [`solve`](Self::solve), evaluating `guess` first to narrow the bracket.
    pub fn solve_from(&self, h: f64, tol: f64, guess: Option<f64>) -> Result<FreeEnergyPoint> {
        if !(tol >= 1e-12) {
            return Err(Error::param("tol", "relative tolerance must be at least 1e-12"));
        }
        let delta = h - self.h_c();
        let point = |f: f64, tolerance: f64, residual: f64, solves: usize| FreeEnergyPoint {
            beta: self.beta,
            h,
            delta,
            free_energy: f,
            tolerance,
            residual,
            q: self.q,
            solves,
        };
        if delta <= 0.0 {
            return Ok(point(0.0, 0.0, 0.0, 0));
        }
        // P(F) ≤ P(0) − F = −F, so the root lies in (0, δ]
        let (p_hi, s_hi) = self.tilted(delta, None)?;
        let g_hi = p_hi + delta;
        let mut solves = 1;
        if g_hi >= 0.0 {
            return Ok(point(delta, 0.0, g_hi.abs(), solves));
        }
        let (mut lo, mut hi) = (0.0, delta);
        let mut f = delta;
        let mut g = g_hi;
        let mut s = s_hi;
        if let Some(x) = guess.filter(|x| *x > 0.0 && *x < delta) {
            let (p, sx) = self.tilted(x, Some(&s))?;
            solves += 1;
            if p + delta > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            f = x;
            g = p + delta;
            s = sx;
        }
        for _ in 0..MAX_ROOT_STEPS {
            // Newton in ln F: P is close to −c F^γ near the root
            let slope = self.mean_gap(f, &s);
            let newton = f * (g / (slope * f)).exp();
            let next = if newton > lo && newton < hi && newton.is_finite() {
                newton
            } else if lo > 0.0 {
                (lo * hi).sqrt()
            } else {
                0.5 * hi
            };
            let (p, s_next) = self.tilted(next, Some(&s))?;
            solves += 1;
            let g_next = p + delta;
            let step = (next - f).abs();
            if g_next > 0.0 {
                lo = next;
            } else {
                hi = next;
            }
            f = next;
            g = g_next;
            s = s_next;
            if g == 0.0 || step <= tol * f || hi - lo <= tol * f {
                let width = ((hi - lo) / f).min(step / f);
                return Ok(point(f, width, g.abs(), solves));
            }
        }
        Err(Error::NoConvergence {
            iterations: MAX_ROOT_STEPS,
            residual: (hi - lo) / hi,
        })
    }
}

pub fn annealed_free_energy(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    h: f64,
    q: usize,
    tol: f64,
) -> Result<FreeEnergyPoint> {
    FreeEnergySolver::new(law, model, beta, q)?.solve(h, tol)
}

/// Log–log least-squares fit of `F` against `δ` above the critical point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExponentFit {
    pub beta: f64,
    pub q: usize,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log–log fit.
    pub residual: f64,
    /// `2β²t(q+1) / δ_min`.
    pub bracket_ratio: f64,
    pub points: Vec<FreeEnergyPoint>,
}

impl ExponentFit {
    /// `F/δ` at the smallest `δ`, the finite-mean limit candidate.
    pub fn ratio_limit(&self) -> f64 {
        let p = self
            .points
            .iter()
            .min_by(|a, b| a.delta.total_cmp(&b.delta))
            .expect("fit has points");
        p.free_energy / p.delta
    }

    /// Geometric mean of `F/δ^exponent` over the grid.
    pub fn prefactor(&self, exponent: f64) -> f64 {
        let s: f64 = self
            .points
            .iter()
            .map(|p| p.free_energy.ln() - exponent * p.delta.ln())
            .sum();
        (s / self.points.len() as f64).exp()
    }
}

pub const FIT_SOLVER_TOLERANCE: f64 = 1e-12;

/// Smallest `q' ≥ q` with `2β²t(q'+1) ≤ δ_min/100`, capped at the pattern limit.
pub fn validity_q(model: &CorrelationModel, beta: f64, q: usize, delta_min: f64) -> Option<usize> {
    (q..=MAX_PATTERN_BITS).find(|&k| 2.0 * truncation_width(model, beta, k) <= delta_min / 100.0)
}

/// Fit with `q` raised until the truncation bracket is negligible on the grid.
pub fn exponent_fit(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    q: usize,
    delta_grid: &[f64],
) -> Result<ExponentFit> {
    let dmin = check_grid(delta_grid)?;
    let q = validity_q(model, beta, q, dmin).ok_or_else(|| {
        Error::TooLarge(format!(
            "no q ≤ {MAX_PATTERN_BITS} brings 2β²t(q+1) below δ_min/100 = {:e}",
            dmin / 100.0
        ))
    })?;
    fit_exponent_at(law, model, beta, q, delta_grid)
}

/// Fit at exactly the given `q`; validity of the grid is reported, not enforced.
pub fn fit_exponent_at(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    q: usize,
    delta_grid: &[f64],
) -> Result<ExponentFit> {
    let dmin = check_grid(delta_grid)?;
    let solver = FreeEnergySolver::new(law, model, beta, q)?;
    let hc = solver.h_c();
    let mut points: Vec<FreeEnergyPoint> = Vec::with_capacity(delta_grid.len());
    let slope_hint = law.alpha().map_or(1.0, |a| (1.0 / a).max(1.0));
    for &d in delta_grid {
        let guess = points
            .last()
            .map(|p| p.free_energy * (d / p.delta).powf(slope_hint));
        let p = solver.solve_from(hc + d, FIT_SOLVER_TOLERANCE, guess)?;
        if !(p.free_energy > 0.0) {
            return Err(Error::Numerical(format!(
                "free energy vanished at δ = {d:e}; δ is below the solver's resolution"
            )));
        }
        points.push(p);
    }
    let xs: Vec<f64> = points.iter().map(|p| p.delta.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.free_energy.ln()).collect();
    let (slope, intercept, residual) = least_squares(&xs, &ys);
    Ok(ExponentFit {
        beta,
        q: solver.q(),
        slope,
        intercept,
        residual,
        bracket_ratio: 2.0 * truncation_width(model, beta, solver.q()) / dmin,
        points,
    })
}

fn check_grid(grid: &[f64]) -> Result<f64> {
    if grid.len() < 2 || grid.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(Error::param("delta_grid", "need at least two positive δ values"));
    }
    Ok(grid.iter().copied().fold(f64::INFINITY, f64::min))
}

/// `(slope, intercept, rms residual)` of the ordinary least-squares line.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    (slope, intercept, (ss / n).sqrt())
}

/// `1 + 2Σ_{n≤N} ρ_n P(n ∈ τ)` and a bound on the omitted tail.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AsymptoticTarget {
    pub value: f64,
    pub tail_bound: f64,
    pub n_max: usize,
}

pub fn asymptotic_target(law: &RenewalLaw, model: &CorrelationModel, n_max: usize) -> AsymptoticTarget {
    let n_max = model.range().map_or(n_max, |r| r.min(n_max));
    let u = renewal_mass(law, n_max);
    let s: f64 = (1..=n_max).map(|n| model.rho(n as u64) * u.get(n)).sum();
    AsymptoticTarget {
        value: 1.0 + 2.0 * s,
        tail_bound: 2.0 * model.tail_abs_sum(n_max as u64 + 1),
        n_max,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SmallBetaRow {
    pub beta: f64,
    pub ratio: f64,
    /// Half-width of the truncation bracket on the ratio.
    pub ratio_bracket: f64,
    pub target: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmallBetaTable {
    pub target: AsymptoticTarget,
    pub rows: Vec<SmallBetaRow>,
}

impl SmallBetaTable {
    pub fn errors_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].error < w[0].error)
    }
}

/// Ratios `h_c(β)/(−β²/2)` along the grid against the small-β target.
pub fn small_beta_check(
    law: &RenewalLaw,
    model: &CorrelationModel,
    betas: &[f64],
    q: usize,
    n_max: usize,
) -> Result<SmallBetaTable> {
    if betas.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::param("beta_grid", "β values must be positive"));
    }
    let target = asymptotic_target(law, model, n_max);
    let rows = betas
        .iter()
        .map(|&beta| {
            let c = critical_curve(law, model, beta, q)?;
            let scale = 0.5 * beta * beta;
            let ratio = -c.h_c / scale;
            Ok(SmallBetaRow {
                beta,
                ratio,
                ratio_bracket: 0.5 * c.width() / scale,
                target: target.value,
                error: (ratio - target.value).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SmallBetaTable { target, rows })
}

/// Terms of the ρ-series used by [`upper_bound_finite_mean`] at most.
pub const UPPER_BOUND_TERMS: usize = 4096;

/// `−β²/2 (1 + 2Σ ρ_n P(n ∈ τ))`, valid when the mean gap is finite. The
/// truncated series is inflated by `β² t(N+1)` so the value stays an upper
/// bound.
pub fn upper_bound_finite_mean(law: &RenewalLaw, model: &CorrelationModel, beta: f64) -> Result<f64> {
    if law.mean().is_infinite() {
        return Err(Error::Unsupported("the renewal upper bound needs a finite mean gap".into()));
    }
    let n = model.range().unwrap_or_else(|| {
        (1..=UPPER_BOUND_TERMS)
            .find(|&k| model.tail_abs_sum(k as u64 + 1) <= 1e-17)
            .unwrap_or(UPPER_BOUND_TERMS)
    });
    let t = asymptotic_target(law, model, n);
    Ok(-0.5 * beta * beta * t.value + 0.5 * beta * beta * t.tail_bound)
}
