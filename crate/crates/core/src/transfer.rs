//! Truncated transfer operator on occupation patterns.
//!
//! For a model of range `q` the operator acts on functions of the pattern
//! `w ∈ {0,1}^q` seen from the current renewal point. A gap `l` leads from
//! `w` to `w' = next(w, l)` with weight `K(l)·exp(β²Σ_d ρ_d w'_d − F l − c)`,
//! where `c` is the pressure offset; all gaps `l > q` lead to the empty
//! pattern and are aggregated into a single tail entry.
//!
//! Matrix-vector products never form the matrix: both `M v` and `u M` are
//! evaluated in `O(2^q)` by exploiting the shift structure of `next`.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::correlations::CorrelationModel;
use crate::error::{Error, Result};
use crate::partition::LogWeight;
use crate::pattern::{next_pattern, pattern_energies, MAX_PATTERN_BITS};
use crate::renewal::{MeanGap, RenewalLaw};
use crate::series::{log_add_exp, LogSumExp};

/// Potential `β²G + log K∘π_0 − F·π_0 − offset` of a finite-range model.
#[derive(Clone, Debug)]
pub struct PotentialSpec {
    pub law: RenewalLaw,
    pub model: CorrelationModel,
    pub beta: f64,
    pub tilt: f64,
    pub pressure_offset: f64,
}

impl PotentialSpec {
    pub fn new(law: &RenewalLaw, model: &CorrelationModel, beta: f64) -> Self {
        PotentialSpec {
            law: law.clone(),
            model: model.clone(),
            beta,
            tilt: 0.0,
            pressure_offset: 0.0,
        }
    }

    /// Same potential with the model truncated at `q`.
    pub fn truncated(law: &RenewalLaw, model: &CorrelationModel, beta: f64, q: usize) -> Self {
        Self::new(law, &model.truncate(q), beta)
    }

    pub fn with_tilt(mut self, tilt: f64) -> Self {
        self.tilt = tilt;
        self
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.pressure_offset = offset;
        self
    }
}

/// Finite truncation of the transfer operator, restricted to the closed
/// class of patterns that recur.
#[derive(Clone, Debug)]
pub struct TransferMatrix {
    q: usize,
    beta: f64,
    tilt: f64,
    offset: f64,
    law: RenewalLaw,
    // gap_log[l-1] = ln K(l) − F l − offset
    gap_log: Vec<f64>,
    tail_log: f64,
    energy: Arc<Vec<f64>>,
    energy_max: f64,
    energy_lin: Arc<Vec<f64>>,
    states: Arc<Vec<u32>>,
    member: Arc<Vec<bool>>,
}

impl TransferMatrix {
    pub fn build(spec: &PotentialSpec) -> Result<Self> {
        let q = spec.model.range().ok_or_else(|| {
            Error::Unsupported("the transfer matrix needs a finite-range (truncated) model".into())
        })?;
        if q > MAX_PATTERN_BITS {
            return Err(Error::TooLarge(format!(
                "{q} pattern bits exceed the limit of {MAX_PATTERN_BITS}"
            )));
        }
        if !(spec.beta >= 0.0) || !(spec.tilt >= 0.0) || !spec.pressure_offset.is_finite() {
            return Err(Error::param("beta/F", "β and F must be nonnegative and finite"));
        }
        let law = &spec.law;
        let energy = pattern_energies(&spec.model, spec.beta, q);
        let energy_max = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let energy_lin: Vec<f64> = energy.iter().map(|e| (e - energy_max).exp()).collect();

        let gap_ok: Vec<bool> = (1..=q as u64).map(|l| law.mass(l) > 0.0).collect();
        let tail_ok = law.max_support().map_or(true, |m| m > q as u64);
        let start = if tail_ok {
            0
        } else {
            let g = law.min_support() as usize;
            let mut w = 0;
            for _ in 0..=q / g {
                w = next_pattern(w, g, q);
            }
            w
        };
        let (states, member) = closed_class(q, start, &gap_ok, tail_ok);

        let mut m = TransferMatrix {
            q,
            beta: spec.beta,
            tilt: 0.0,
            offset: 0.0,
            law: law.clone(),
            gap_log: Vec::new(),
            tail_log: f64::NEG_INFINITY,
            energy: Arc::new(energy),
            energy_max,
            energy_lin: Arc::new(energy_lin),
            states: Arc::new(states),
            member: Arc::new(member),
        };
        m.set_tilt(spec.tilt, spec.pressure_offset);
        Ok(m)
    }

    /// Same matrix with a different tilt and offset; pattern data is shared.
    pub fn retilt(&self, tilt: f64, offset: f64) -> TransferMatrix {
        let mut m = self.clone();
        m.set_tilt(tilt, offset);
        m
    }

    fn set_tilt(&mut self, tilt: f64, offset: f64) {
        self.tilt = tilt;
        self.offset = offset;
        self.gap_log = (1..=self.q as u64)
            .map(|l| self.law.log_mass(l) - tilt * l as f64 - offset)
            .collect();
        self.tail_log = self.law.log_tilted_tail(self.q as u64, tilt) - offset;
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn tilt(&self) -> f64 {
        self.tilt
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Number of patterns in the closed class.
    pub fn dimension(&self) -> usize {
        self.states.len()
    }

    /// Closed-class patterns in increasing order.
    pub fn states(&self) -> &[u32] {
        &self.states
    }

    pub fn contains(&self, w: usize) -> bool {
        self.member.get(w).copied().unwrap_or(false)
    }

    /// Entry `M(from, to)`, aggregated over all gaps realizing the move.
    pub fn entry(&self, from: usize, to: usize) -> LogWeight {
        let mut acc = LogSumExp::new();
        for l in 1..=self.q {
            if next_pattern(from, l, self.q) == to {
                acc.push(self.gap_log[l - 1] + self.energy[to]);
            }
        }
        if to == 0 {
            acc.push(self.tail_log + self.energy[0]);
        }
        LogWeight::from_log(acc.value())
    }

    /// Nonzero entries of row `from` as `(to, ln M(from, to))`.
    pub fn row(&self, from: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(self.q + 1);
        for l in 1..=self.q {
            let v = self.gap_log[l - 1];
            if v > f64::NEG_INFINITY {
                let to = next_pattern(from, l, self.q);
                out.push((to, v + self.energy[to]));
            }
        }
        if self.tail_log > f64::NEG_INFINITY {
            out.push((0, self.tail_log + self.energy[0]));
        }
        out
    }

    /// Writes the closed-class matrix in Matrix Market coordinate format.
    /// Row and column `i` (1-based) correspond to `states()[i-1]`.
    pub fn write_coordinate<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let index: std::collections::HashMap<usize, usize> = self
            .states
            .iter()
            .enumerate()
            .map(|(i, &w)| (w as usize, i + 1))
            .collect();
        let mut entries = Vec::new();
        for (i, &w) in self.states.iter().enumerate() {
            for (to, lv) in self.row(w as usize) {
                entries.push((i + 1, index[&to], lv.exp()));
            }
        }
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(
            out,
            "% q={} beta={:e} F={:e} offset={:e}",
            self.q, self.beta, self.tilt, self.offset
        )?;
        let patterns: Vec<String> = self.states.iter().map(|w| w.to_string()).collect();
        writeln!(out, "% patterns {}", patterns.join(" "))?;
        writeln!(out, "{} {} {}", self.states.len(), self.states.len(), entries.len())?;
        for (i, j, v) in entries {
            writeln!(out, "{i} {j} {v:.17e}")?;
        }
        out.flush()
    }

    fn log_span(&self) -> f64 {
        let finite = self
            .gap_log
            .iter()
            .copied()
            .chain(std::iter::once(self.tail_log))
            .filter(|v| v.is_finite());
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in finite {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let emin = self.energy.iter().copied().fold(f64::INFINITY, f64::min);
        (hi - lo) + (self.energy_max - emin)
    }

    fn gap_shift(&self) -> f64 {
        self.gap_log
            .iter()
            .copied()
            .chain(std::iter::once(self.tail_log))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn closed_class(q: usize, start: usize, gap_ok: &[bool], tail_ok: bool) -> (Vec<u32>, Vec<bool>) {
    let size = 1usize << q;
    let mut member = vec![false; size];
    let mut queue = VecDeque::new();
    member[start] = true;
    queue.push_back(start);
    while let Some(w) = queue.pop_front() {
        for l in 1..=q {
            if gap_ok[l - 1] {
                let to = next_pattern(w, l, q);
                if !member[to] {
                    member[to] = true;
                    queue.push_back(to);
                }
            }
        }
        if tail_ok && !member[0] {
            member[0] = true;
            queue.push_back(0);
        }
    }
    let states = (0..size).filter(|&w| member[w]).map(|w| w as u32).collect();
    (states, member)
}

trait Domain {
    const ZERO: f64;
    fn add(a: f64, b: f64) -> f64;
    fn mul(a: f64, b: f64) -> f64;
    fn div(a: f64, b: f64) -> f64;
    fn ln(x: f64) -> f64;
    fn from_ln(x: f64) -> f64;
}

struct Linear;
struct LogDomain;

impl Domain for Linear {
    const ZERO: f64 = 0.0;
    #[inline(always)]
    fn add(a: f64, b: f64) -> f64 {
        a + b
    }
    #[inline(always)]
    fn mul(a: f64, b: f64) -> f64 {
        a * b
    }
    #[inline(always)]
    fn div(a: f64, b: f64) -> f64 {
        a / b
    }
    fn ln(x: f64) -> f64 {
        x.ln()
    }
    fn from_ln(x: f64) -> f64 {
        x.exp()
    }
}

impl Domain for LogDomain {
    const ZERO: f64 = f64::NEG_INFINITY;
    #[inline(always)]
    fn add(a: f64, b: f64) -> f64 {
        log_add_exp(a, b)
    }
    #[inline(always)]
    fn mul(a: f64, b: f64) -> f64 {
        a + b
    }
    #[inline(always)]
    fn div(a: f64, b: f64) -> f64 {
        a - b
    }
    fn ln(x: f64) -> f64 {
        x
    }
    fn from_ln(x: f64) -> f64 {
        x
    }
}

/// Operator coefficients expressed in one domain.
struct Coefficients<'a> {
    q: usize,
    gap: Vec<f64>,
    tail: f64,
    energy: &'a [f64],
}

/// `out = M v`. `g` has length `2^q`, `r` length `2^{q−1}`.
fn apply_right<D: Domain>(c: &Coefficients, v: &[f64], g: &mut [f64], r: &mut [f64], out: &mut [f64]) {
    let q = c.q;
    let size = 1usize << q;
    for w in 0..size {
        g[w] = D::mul(c.energy[w], v[w]);
    }
    let t = D::mul(c.tail, g[0]);
    if q == 0 {
        out[0] = t;
        return;
    }
    let half = size >> 1;
    r[0] = D::mul(c.gap[q - 1], g[1 << (q - 1)]);
    for l in (1..q).rev() {
        let lo = 1usize << (q - l - 1);
        let hb = 1usize << (l - 1);
        let cl = c.gap[l - 1];
        for x in lo..2 * lo {
            r[x] = D::add(D::mul(cl, g[(x << l) | hb]), r[x - lo]);
        }
        for x in 0..lo {
            r[x] = D::add(D::mul(cl, g[(x << l) | hb]), r[x]);
        }
    }
    let mask = half - 1;
    for w in 0..size {
        out[w] = D::add(r[w & mask], t);
    }
}

/// `out = u M`. `fold` has length `2^q`.
fn apply_left<D: Domain>(c: &Coefficients, u: &[f64], fold: &mut [f64], out: &mut [f64]) {
    let q = c.q;
    let size = 1usize << q;
    if q == 0 {
        out[0] = D::mul(D::mul(c.tail, c.energy[0]), u[0]);
        return;
    }
    // level l occupies fold[size - 2^{q-l+1} .. size - 2^{q-l}]
    let half = size >> 1;
    for x in 0..half {
        fold[x] = D::add(u[x], u[x + half]);
    }
    let mut start = 0;
    let mut len = half;
    for l in 1..=q {
        let hb = 1usize << (l - 1);
        let cl = c.gap[l - 1];
        for x in 0..len {
            let w = (x << l) | hb;
            out[w] = D::mul(D::mul(cl, c.energy[w]), fold[start + x]);
        }
        if l < q {
            let h = len / 2;
            let next = start + len;
            for x in 0..h {
                fold[next + x] = D::add(fold[start + x], fold[start + x + h]);
            }
            start = next;
            len = h;
        }
    }
    out[0] = D::mul(D::mul(c.tail, c.energy[0]), fold[start]);
}

/// Perron data of a [`TransferMatrix`].
#[derive(Clone, Debug, Serialize)]
pub struct SpectralResult {
    pub log_lambda: f64,
    /// Collatz–Wielandt bounds on `ln λ` certified by the final iterates.
    pub log_lambda_bounds: (f64, f64),
    /// `‖Mv − λv‖∞ / (λ‖v‖∞)` for the right vector.
    pub residual: f64,
    /// Same quantity for the left vector.
    pub left_residual: f64,
    pub iterations: usize,
    pub log_domain: bool,
    #[serde(skip)]
    log_right: Vec<f64>,
    #[serde(skip)]
    log_left: Vec<f64>,
}

impl SpectralResult {
    pub fn lambda(&self) -> f64 {
        self.log_lambda.exp()
    }

    /// `ln v_right(w)`; vectors satisfy `Σ v_left = 1` and `⟨v_left, v_right⟩ = 1`.
    pub fn log_right(&self, w: usize) -> f64 {
        self.log_right[w]
    }

    pub fn log_left(&self, w: usize) -> f64 {
        self.log_left[w]
    }

    pub fn right(&self, w: usize) -> f64 {
        self.log_right[w].exp()
    }

    pub fn left(&self, w: usize) -> f64 {
        self.log_left[w].exp()
    }
}

pub const SPECTRAL_TOLERANCE: f64 = 1e-13;
pub const MAX_ITERATIONS: usize = 100_000;
// beyond this many nats between the smallest and largest entry the
// iteration runs in the log domain
const LINEAR_SPAN_LIMIT: f64 = 600.0;

pub fn spectral(matrix: &TransferMatrix) -> Result<SpectralResult> {
    spectral_with_guess(matrix, None)
}

/// Power iteration started from the eigenvectors of `guess` when given.
pub fn spectral_with_guess(
    matrix: &TransferMatrix,
    guess: Option<&SpectralResult>,
) -> Result<SpectralResult> {
    let guess = guess.filter(|g| g.log_right.len() == 1 << matrix.q);
    if matrix.log_span() <= LINEAR_SPAN_LIMIT {
        match iterate::<Linear>(matrix, guess) {
            Err(Error::Numerical(_)) => {}
            other => return other,
        }
    }
    iterate::<LogDomain>(matrix, guess)
}

fn iterate<D: Domain>(matrix: &TransferMatrix, guess: Option<&SpectralResult>) -> Result<SpectralResult> {
    let q = matrix.q;
    let size = 1usize << q;
    let gshift = matrix.gap_shift();
    let log_energy: Vec<f64>;
    let energy: &[f64] = if std::any::type_name::<D>() == std::any::type_name::<Linear>() {
        &matrix.energy_lin
    } else {
        log_energy = matrix.energy.iter().map(|e| e - matrix.energy_max).collect();
        &log_energy
    };
    let coeff = Coefficients {
        q,
        gap: matrix.gap_log.iter().map(|g| D::from_ln(g - gshift)).collect(),
        tail: D::from_ln(matrix.tail_log - gshift),
        energy,
    };
    let states = &matrix.states;
    let one = D::from_ln(0.0);

    let mut v = vec![one; size];
    let mut u = vec![D::ZERO; size];
    for &w in states.iter() {
        u[w as usize] = one;
    }
    if let Some(g) = guess {
        for &w in states.iter() {
            let w = w as usize;
            v[w] = D::from_ln(g.log_right[w]);
            u[w] = D::from_ln(g.log_left[w]);
        }
    }
    normalize::<D>(&mut v, states);
    normalize::<D>(&mut u, states);

    let mut y = vec![D::ZERO; size];
    let mut z = vec![D::ZERO; size];
    let mut g = vec![D::ZERO; size];
    let mut r = vec![D::ZERO; (size / 2).max(1)];
    let mut last = (f64::INFINITY, f64::INFINITY);
    for it in 1..=MAX_ITERATIONS {
        apply_right::<D>(&coeff, &v, &mut g, &mut r, &mut y);
        apply_left::<D>(&coeff, &u, &mut g, &mut z);
        let (rlo, rhi) = ratio_bounds::<D>(&y, &v, states)?;
        let (llo, lhi) = ratio_bounds::<D>(&z, &u, states)?;
        let res_r = (0.5 * (rhi - rlo)).exp_m1();
        let res_l = (0.5 * (lhi - llo)).exp_m1();
        last = (res_r, res_l);
        if res_r <= SPECTRAL_TOLERANCE && res_l <= SPECTRAL_TOLERANCE {
            let lo = rlo.max(llo);
            let hi = rhi.min(lhi).max(lo);
            let shift = gshift + matrix.energy_max;
            let mut log_right = vec![f64::NEG_INFINITY; size];
            let mut log_left = vec![f64::NEG_INFINITY; size];
            for &w in states.iter() {
                let w = w as usize;
                log_right[w] = D::ln(v[w]);
                log_left[w] = D::ln(u[w]);
            }
            normalize_pair(&mut log_right, &mut log_left, states);
            return Ok(SpectralResult {
                log_lambda: 0.5 * (lo + hi) + shift,
                log_lambda_bounds: (lo + shift, hi + shift),
                residual: res_r,
                left_residual: res_l,
                iterations: it,
                log_domain: D::ZERO == f64::NEG_INFINITY,
                log_right,
                log_left,
            });
        }
        std::mem::swap(&mut v, &mut y);
        std::mem::swap(&mut u, &mut z);
        normalize::<D>(&mut v, states);
        normalize::<D>(&mut u, states);
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
        residual: last.0.max(last.1),
    })
}

fn normalize<D: Domain>(v: &mut [f64], states: &[u32]) {
    let mut m = D::ZERO;
    for &w in states {
        let x = v[w as usize];
        if x > m {
            m = x;
        }
    }
    for &w in states {
        let x = &mut v[w as usize];
        *x = D::div(*x, m);
    }
}

/// Natural-log Collatz–Wielandt bounds `min, max` of `y/v` over the class.
fn ratio_bounds<D: Domain>(y: &[f64], v: &[f64], states: &[u32]) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &w in states {
        let w = w as usize;
        let r = D::div(y[w], v[w]);
        if r < lo {
            lo = r;
        }
        if r > hi {
            hi = r;
        }
    }
    let (lo, hi) = (D::ln(lo), D::ln(hi));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Numerical("eigenvector underflow".into()));
    }
    Ok((lo, hi))
}

fn normalize_pair(log_right: &mut [f64], log_left: &mut [f64], states: &[u32]) {
    let mut total = LogSumExp::new();
    for &w in states {
        total.push(log_left[w as usize]);
    }
    let t = total.value();
    let mut dot = LogSumExp::new();
    for &w in states {
        let w = w as usize;
        log_left[w] -= t;
        dot.push(log_left[w] + log_right[w]);
    }
    let d = dot.value();
    for &w in states {
        log_right[w as usize] -= d;
    }
}

/// Log Perron root of the truncated system with a rigorous bracket for the
/// untruncated pressure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PressureEstimate {
    pub beta: f64,
    pub tilt: f64,
    pub q: usize,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Effective truncation level: never beyond the model's own range.
pub(crate) fn effective_q(model: &CorrelationModel, q: usize) -> usize {
    model.range().map_or(q, |r| r.min(q))
}

/// `β² t(q+1)`, or zero when the truncation is exact.
pub(crate) fn truncation_width(model: &CorrelationModel, beta: f64, q: usize) -> f64 {
    if model.range().is_some_and(|r| r <= q) {
        0.0
    } else {
        beta * beta * model.tail_abs_sum(q as u64 + 1)
    }
}

pub fn gurevich_pressure(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    tilt: f64,
    q: usize,
) -> Result<PressureEstimate> {
    if !model.flags().abs_summable {
        return Err(Error::Unsupported("model is not absolutely summable".into()));
    }
    let q = effective_q(model, q);
    let spec = PotentialSpec::truncated(law, model, beta, q).with_tilt(tilt);
    let matrix = TransferMatrix::build(&spec)?;
    let s = spectral(&matrix)?;
    let width = truncation_width(model, beta, q);
    Ok(PressureEstimate {
        beta,
        tilt,
        q,
        value: s.log_lambda,
        lower: s.log_lambda - width,
        upper: s.log_lambda + width,
        residual: s.residual.max(s.left_residual),
        iterations: s.iterations,
    })
}

/// Gibbs gap law `m([n])` and the contact-fraction data derived from it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GibbsSummary {
    /// `m([n])` for `n = 1..=n_max` (index `n−1`).
    pub marginal: Vec<f64>,
    /// `m([n]) = tail_constant · K(n) e^{-F n}` for every `n > q`.
    pub tail_constant: f64,
    /// `Σ_{n > n_max} m([n])`.
    pub tail_mass: f64,
    #[serde(skip)]
    pub mean: MeanGap,
}

impl GibbsSummary {
    /// `1 / mean`, zero when the mean is infinite.
    pub fn contact_fraction(&self) -> f64 {
        match self.mean {
            MeanGap::Finite(m) => 1.0 / m,
            MeanGap::Infinite => 0.0,
        }
    }
}

/// Gap marginal of the Gibbs measure built from `matrix` and its Perron data.
pub fn gibbs_summary(matrix: &TransferMatrix, s: &SpectralResult, n_max: usize) -> GibbsSummary {
    let q = matrix.q;
    let size = 1usize << q;
    let coeff = Coefficients {
        q,
        gap: matrix.gap_log.clone(),
        tail: matrix.tail_log,
        energy: &matrix.energy,
    };
    let mut fold = vec![f64::NEG_INFINITY; size];
    let mut z = vec![f64::NEG_INFINITY; size];
    apply_left::<LogDomain>(&coeff, &s.log_left, &mut fold, &mut z);
    let mut per_gap = vec![LogSumExp::new(); q + 1];
    for &w in matrix.states.iter() {
        let w = w as usize;
        if w != 0 {
            let n = w.trailing_zeros() as usize + 1;
            per_gap[n].push(z[w] + s.log_right[w]);
        }
    }
    let short: Vec<f64> = (1..=q)
        .map(|n| (per_gap[n].value() - s.log_lambda).exp())
        .collect();
    let log_c = -matrix.offset + s.log_right[0] - s.log_lambda;
    let c = if matrix.contains(0) { log_c.exp() } else { 0.0 };
    let law = &matrix.law;
    let f = matrix.tilt;
    let marginal: Vec<f64> = (1..=n_max)
        .map(|n| {
            if n <= q {
                short[n - 1]
            } else {
                c * (law.log_mass(n as u64) - f * n as f64).exp()
            }
        })
        .collect();
    let tail_mass = short.iter().skip(n_max).sum::<f64>()
        + c * law.tilted_tail(q.max(n_max) as u64, f);
    let short_mean: f64 = short.iter().enumerate().map(|(i, m)| (i + 1) as f64 * m).sum();
    let mean = if c == 0.0 {
        MeanGap::Finite(short_mean)
    } else {
        match law.tilted_moment_tail(q as u64, f) {
            MeanGap::Finite(t) => MeanGap::Finite(short_mean + c * t),
            MeanGap::Infinite => MeanGap::Infinite,
        }
    };
    GibbsSummary {
        marginal,
        tail_constant: c,
        tail_mass,
        mean,
    }
}

/// Row sums of the induced stochastic kernel `Q(w,w') = M(w,w') v(w') / (λ v(w))`,
/// one per closed-class pattern.
pub fn induced_row_sums(matrix: &TransferMatrix, s: &SpectralResult) -> Vec<f64> {
    let q = matrix.q;
    let size = 1usize << q;
    let coeff = Coefficients {
        q,
        gap: matrix.gap_log.clone(),
        tail: matrix.tail_log,
        energy: &matrix.energy,
    };
    let mut g = vec![f64::NEG_INFINITY; size];
    let mut r = vec![f64::NEG_INFINITY; (size / 2).max(1)];
    let mut y = vec![f64::NEG_INFINITY; size];
    apply_right::<LogDomain>(&coeff, &s.log_right, &mut g, &mut r, &mut y);
    matrix
        .states
        .iter()
        .map(|&w| (y[w as usize] - s.log_lambda - s.log_right[w as usize]).exp())
        .collect()
}

fn untilted(law: &RenewalLaw, model: &CorrelationModel, beta: f64, q: usize) -> Result<(TransferMatrix, SpectralResult)> {
    let q = effective_q(model, q);
    let matrix = TransferMatrix::build(&PotentialSpec::truncated(law, model, beta, q))?;
    let s = spectral(&matrix)?;
    Ok((matrix, s))
}

pub fn gibbs_gap_marginal(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    q: usize,
    n_max: usize,
) -> Result<GibbsSummary> {
    let (matrix, s) = untilted(law, model, beta, q)?;
    Ok(gibbs_summary(&matrix, &s, n_max))
}

/// Mean gap under the Gibbs measure and the contact fraction `1/mean`.
pub fn mean_gap_gibbs(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    q: usize,
) -> Result<(MeanGap, f64)> {
    let g = gibbs_gap_marginal(law, model, beta, q, 0)?;
    Ok((g.mean, g.contact_fraction()))
}

/// Right eigenvector at the empty pattern, the state reached after any gap
/// longer than `q`.
pub fn rpf_eigenfunction_limit(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    q: usize,
) -> Result<f64> {
    let (matrix, s) = untilted(law, model, beta, q)?;
    if !matrix.contains(0) {
        return Err(Error::Unsupported(
            "the empty pattern is not recurrent for this law (no gaps beyond q)".into(),
        ));
    }
    Ok(s.right(0))
}

/// Periodic-orbit sum estimate of the pressure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PeriodicOrbitEstimate {
    /// `(1/n) ln 𝐙_n` over enumerated words (all coordinates ≤ M).
    pub value: f64,
    /// Same with the bound on omitted words added to `𝐙_n`.
    pub value_upper: f64,
    /// Upper bound on the contribution of words with a coordinate > M.
    pub omitted_bound: f64,
    /// `value − 6β² Σ k|ρ_k| / n`, a rigorous lower bound on the pressure.
    pub lower_bound: f64,
    pub words: u64,
}

pub const PERIODIC_WORD_BUDGET: u64 = 20_000_000;

/// `𝐙_n(φ, a)`: sum of `e^{φ_n}` over period-`n` words starting with `a`.
pub fn periodic_orbit_pressure(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    tilt: f64,
    n: usize,
    a: u64,
    cap: u64,
) -> Result<PeriodicOrbitEstimate> {
    let q = model.range().ok_or_else(|| {
        Error::Unsupported("periodic orbit sums need a finite-range model".into())
    })?;
    if n == 0 || a == 0 || cap == 0 {
        return Err(Error::param("n/a/M", "period, first symbol and cap must be positive"));
    }
    let words = (cap as f64).powi(n as i32 - 1);
    if words > PERIODIC_WORD_BUDGET as f64 {
        return Err(Error::TooLarge(format!(
            "{cap}^{} = {words:e} words exceed the budget of {PERIODIC_WORD_BUDGET}",
            n - 1
        )));
    }
    let b2 = beta * beta;
    let coupling: Vec<f64> = (0..=q as u64).map(|d| b2 * model.rho(d)).collect();
    let logk: Vec<f64> = (0..=cap.max(a) as u64).map(|l| law.log_mass(l) - tilt * l as f64).collect();
    let symbols: Vec<u64> = (1..=cap).filter(|&l| logk[l as usize] > f64::NEG_INFINITY).collect();

    let mut acc = LogSumExp::new();
    let mut count = 0u64;
    if logk[a as usize] > f64::NEG_INFINITY {
        let base = symbols.len() as u64;
        let total = base.pow(n as u32 - 1);
        let mut word = vec![a; n];
        for code in 0..total {
            let mut c = code;
            for slot in word.iter_mut().skip(1) {
                *slot = symbols[(c % base) as usize];
                c /= base;
            }
            acc.push(word_potential(&word, &logk, &coupling, q));
            count += 1;
        }
    }
    let log_z = acc.value();

    let big_a: f64 = (1..=q as u64).map(|d| model.rho(d).abs()).sum();
    let s_all = law.tilted_tail(0, tilt);
    let s_rest = law.tilted_tail(cap, tilt);
    let s_cap = s_all - s_rest;
    // S_all^{n-1} − S_cap^{n-1} = s_rest · Σ_j S_all^j S_cap^{n-2-j}
    let mut diff = 0.0;
    for j in 0..n.saturating_sub(1) {
        diff += s_all.powi(j as i32) * s_cap.powi((n - 2 - j) as i32);
    }
    diff *= s_rest;
    let omitted = (n as f64 * b2 * big_a + logk[a as usize]).exp() * diff;
    let delta_inf = model.weighted_abs_sum().unwrap_or(f64::INFINITY);
    let value = log_z / n as f64;
    Ok(PeriodicOrbitEstimate {
        value,
        value_upper: log_add_exp(log_z, omitted.ln()) / n as f64,
        omitted_bound: omitted,
        lower_bound: value - 6.0 * b2 * delta_inf / n as f64,
        words: count,
    })
}

/// `φ_n` of the periodic point repeating `word`.
fn word_potential(word: &[u64], logk: &[f64], coupling: &[f64], q: usize) -> f64 {
    let n = word.len();
    let mut total = 0.0;
    for i in 0..n {
        total += logk[word[i] as usize];
        let mut dist = 0u64;
        let mut k = i;
        loop {
            dist += word[k];
            if dist as usize > q {
                break;
            }
            total += coupling[dist as usize];
            k = (k + 1) % n;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deterministic() -> (RenewalLaw, CorrelationModel) {
        (
            RenewalLaw::finite(&[(1, 1.0)]).unwrap(),
            CorrelationModel::finite(&[0.5, 0.25]).unwrap(),
        )
    }

    fn dense(m: &TransferMatrix) -> Vec<Vec<f64>> {
        let size = 1 << m.q();
        (0..size)
            .map(|i| (0..size).map(|j| m.entry(i, j).value()).collect())
            .collect()
    }

    #[test]
    fn iid_is_one_by_one() {
        let law = RenewalLaw::zeta(0.5).unwrap();
        let m = TransferMatrix::build(&PotentialSpec::new(&law, &CorrelationModel::zero(), 1.0)).unwrap();
        assert_eq!(m.dimension(), 1);
        assert!((m.entry(0, 0).value() - 1.0).abs() < 1e-14);
        let s = spectral(&m).unwrap();
        assert!(s.log_lambda.abs() < 1e-14);
        assert!((s.right(0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn deterministic_single_state() {
        let (law, model) = deterministic();
        let m = TransferMatrix::build(&PotentialSpec::new(&law, &model, 1.0)).unwrap();
        assert_eq!(m.states(), &[0b11]);
        assert!((m.entry(3, 3).ln() - 0.75).abs() < 1e-15);
        let s = spectral(&m).unwrap();
        assert!((s.log_lambda - 0.75).abs() < 1e-15);
        let p = gurevich_pressure(&law, &model, 1.0, 0.0, 2).unwrap();
        assert!((p.value - 0.75).abs() < 1e-15);
        assert_eq!(p.lower, p.upper);
    }

    #[test]
    fn structured_products_match_dense() {
        let law = RenewalLaw::geometric(0.4).unwrap();
        let model = CorrelationModel::finite(&[0.3, -0.2, 0.1]).unwrap();
        let m = TransferMatrix::build(&PotentialSpec::new(&law, &model, 0.9).with_tilt(0.2)).unwrap();
        let d = dense(&m);
        let size = 8;
        let v: Vec<f64> = (0..size).map(|i| 1.0 + 0.1 * i as f64).collect();
        let coeff = Coefficients {
            q: 3,
            gap: m.gap_log.iter().map(|g| g.exp()).collect(),
            tail: m.tail_log.exp(),
            energy: &m.energy.iter().map(|e| e.exp()).collect::<Vec<_>>(),
        };
        let (mut g, mut r, mut y) = (vec![0.0; size], vec![0.0; 4], vec![0.0; size]);
        apply_right::<Linear>(&coeff, &v, &mut g, &mut r, &mut y);
        for i in 0..size {
            let want: f64 = (0..size).map(|j| d[i][j] * v[j]).sum();
            assert!((y[i] - want).abs() < 1e-14 * want);
        }
        let mut z = vec![0.0; size];
        apply_left::<Linear>(&coeff, &v, &mut g, &mut z);
        for j in 0..size {
            let want: f64 = (0..size).map(|i| v[i] * d[i][j]).sum();
            assert!((z[j] - want).abs() < 1e-14 * want.max(1e-300));
        }
    }

    #[test]
    fn log_domain_agrees_with_linear() {
        let law = RenewalLaw::zeta(0.7).unwrap();
        let model = CorrelationModel::finite(&[0.4, 0.2, -0.1, 0.05]).unwrap();
        let m = TransferMatrix::build(&PotentialSpec::new(&law, &model, 1.2).with_tilt(0.05)).unwrap();
        let a = iterate::<Linear>(&m, None).unwrap();
        let b = iterate::<LogDomain>(&m, None).unwrap();
        assert!((a.log_lambda - b.log_lambda).abs() < 1e-12);
        for &w in m.states() {
            assert!((a.log_right(w as usize) - b.log_right(w as usize)).abs() < 1e-10);
        }
    }

    #[test]
    fn large_tilt_uses_log_domain() {
        let law = RenewalLaw::geometric(0.5).unwrap();
        let model = CorrelationModel::finite(&[0.2; 10]).unwrap();
        let m = TransferMatrix::build(&PotentialSpec::new(&law, &model, 1.0).with_tilt(80.0)).unwrap();
        let s = spectral(&m).unwrap();
        assert!(s.log_domain);
        // gap 1 dominates: λ ≈ K(1) e^{-F + β² Σρ}
        let approx = 0.5f64.ln() - 80.0 + 2.0;
        assert!((s.log_lambda - approx).abs() < 1e-6);
    }

    #[test]
    fn gibbs_iid_is_renewal() {
        let law = RenewalLaw::geometric(0.5).unwrap();
        let g = gibbs_gap_marginal(&law, &CorrelationModel::zero(), 1.0, 4, 10).unwrap();
        for n in 1..=10 {
            assert!((g.marginal[n - 1] - law.mass(n as u64)).abs() < 1e-14);
        }
        assert!((g.mean.finite().unwrap() - 2.0).abs() < 1e-12);
        assert!((g.contact_fraction() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gibbs_deterministic() {
        let (law, model) = deterministic();
        let g = gibbs_gap_marginal(&law, &model, 1.0, 2, 3).unwrap();
        assert!((g.marginal[0] - 1.0).abs() < 1e-14);
        assert_eq!(g.marginal[1], 0.0);
        assert_eq!(g.mean, MeanGap::Finite(1.0));
        let (mean, c) = mean_gap_gibbs(&law, &model, 1.0, 2).unwrap();
        assert_eq!((mean.finite().unwrap(), c), (1.0, 1.0));
    }

    #[test]
    fn heavy_tail_mean_is_infinite() {
        let law = RenewalLaw::zeta(0.5).unwrap();
        let model = CorrelationModel::exponential(0.5, 0.5).unwrap();
        let (mean, c) = mean_gap_gibbs(&law, &model, 1.0, 6).unwrap();
        assert!(mean.is_infinite());
        assert_eq!(c, 0.0);
    }

    #[test]
    fn eigenfunction_limit_iid() {
        let law = RenewalLaw::zeta(0.5).unwrap();
        let h = rpf_eigenfunction_limit(&law, &CorrelationModel::zero(), 0.8, 5).unwrap();
        assert!((h - 1.0).abs() < 1e-14);
    }

    #[test]
    fn periodic_deterministic() {
        let (law, model) = deterministic();
        for n in 1..=6 {
            let p = periodic_orbit_pressure(&law, &model, 1.0, 0.0, n, 1, 5).unwrap();
            assert!((p.value - 0.75).abs() < 1e-14, "n={n} value={}", p.value);
        }
    }

    #[test]
    fn periodic_iid_brackets_log_k1() {
        let law = RenewalLaw::zeta(0.5).unwrap();
        for n in 1..=4 {
            let p = periodic_orbit_pressure(&law, &CorrelationModel::zero(), 1.0, 0.0, n, 1, 60).unwrap();
            let target = law.mass(1).ln() / n as f64;
            assert!(p.value <= target + 1e-14);
            assert!(p.value_upper >= target - 1e-14);
        }
        let refuse = periodic_orbit_pressure(&law, &CorrelationModel::zero(), 1.0, 0.0, 6, 1, 200);
        assert!(matches!(refuse, Err(Error::TooLarge(_))));
    }

    #[test]
    fn coordinate_export() {
        let law = RenewalLaw::geometric(0.5).unwrap();
        let model = CorrelationModel::finite(&[0.3]).unwrap();
        let m = TransferMatrix::build(&PotentialSpec::new(&law, &model, 1.0)).unwrap();
        let mut buf = Vec::new();
        m.write_coordinate(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general"));
        assert!(text.lines().any(|l| l == "2 2 4"));
    }
}
