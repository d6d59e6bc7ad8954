//! Exact finite-volume partition functions in the log domain.
//!
//! Annealed weights of a renewal configuration `0 < t_1 < … < t_k` are
//! `Π K(t_i − t_{i−1}) · exp((h + β²/2)k + β² Σ_{i<j} ρ_{t_j − t_i})`.
//! By default the origin `t_0 = 0` does not take part in the pair sum; see
//! [`Origin`] for the alternatives.

use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};

use crate::correlations::CorrelationModel;
use crate::error::{Error, Result};
use crate::pattern::{past_pattern, pattern_energies, MAX_PATTERN_BITS};
use crate::renewal::RenewalLaw;
use crate::series::{log_add_exp, LogSumExp};

/// Nonnegative scalar stored as its logarithm; `-∞` encodes zero.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogWeight(f64);

impl LogWeight {
    pub const ZERO: LogWeight = LogWeight(f64::NEG_INFINITY);
    pub const ONE: LogWeight = LogWeight(0.0);

    pub fn from_log(x: f64) -> Self {
        LogWeight(x)
    }

    pub fn from_value(v: f64) -> Self {
        LogWeight(v.ln())
    }

    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0.exp()
    }
}

impl Add for LogWeight {
    type Output = LogWeight;
    fn add(self, rhs: LogWeight) -> LogWeight {
        LogWeight(log_add_exp(self.0, rhs.0))
    }
}

impl Mul for LogWeight {
    type Output = LogWeight;
    fn mul(self, rhs: LogWeight) -> LogWeight {
        LogWeight(self.0 + rhs.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// `n` is a renewal point.
    #[default]
    Pinned,
    /// The last stretch after the final renewal point is weighted by the
    /// gap-law tail.
    Free,
}

/// Treatment of the origin and of renewal points before it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin<'a> {
    /// The origin does not interact (pair sum over `1 ≤ k < l ≤ n`).
    Excluded,
    /// The origin interacts with later points (pair sum over `0 ≤ k < l`).
    Included,
    /// The origin interacts, and so do past points at the given backward
    /// gaps.
    Past(&'a [u64]),
}

pub const MAX_BRUTEFORCE_N: usize = 24;

/// Sum over all renewal configurations by explicit enumeration.
pub fn annealed_logz_bruteforce(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    h: f64,
    n: usize,
    boundary: Boundary,
) -> Result<LogWeight> {
    annealed_logz_bruteforce_with(law, model, beta, h, n, boundary, Origin::Excluded)
}

pub fn annealed_logz_bruteforce_with(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    h: f64,
    n: usize,
    boundary: Boundary,
    origin: Origin<'_>,
) -> Result<LogWeight> {
    if n > MAX_BRUTEFORCE_N {
        return Err(Error::TooLarge(format!(
            "enumeration visits 2^n configurations; n = {n} exceeds {MAX_BRUTEFORCE_N}"
        )));
    }
    if n == 0 {
        return Err(Error::param("n", "system size must be positive"));
    }
    let mut prior: Vec<i64> = Vec::new();
    match origin {
        Origin::Excluded => {}
        Origin::Included => prior.push(0),
        Origin::Past(gaps) => {
            prior.push(0);
            let mut pos = 0i64;
            for &g in gaps {
                pos -= g as i64;
                prior.push(pos);
            }
        }
    }
    let depth = prior.iter().map(|p| -p).max().unwrap_or(0) as usize;
    let b2 = beta * beta;
    let mut e = Enumerator {
        n,
        pinned: boundary == Boundary::Pinned,
        a: h + 0.5 * b2,
        logk: (0..=n as u64).map(|l| law.log_mass(l)).collect(),
        logtail: log_tails(law, n),
        coupling: (0..=(n + depth) as u64).map(|d| b2 * model.rho(d)).collect(),
        points: prior,
        acc: LogSumExp::new(),
    };
    e.visit(0, 0.0);
    Ok(LogWeight(e.acc.value()))
}

struct Enumerator {
    n: usize,
    pinned: bool,
    a: f64,
    logk: Vec<f64>,
    logtail: Vec<f64>,
    coupling: Vec<f64>,
    points: Vec<i64>,
    acc: LogSumExp,
}

impl Enumerator {
    fn visit(&mut self, last: usize, w: f64) {
        if !self.pinned {
            self.acc.push(w + self.logtail[self.n - last]);
        }
        for p in last + 1..=self.n {
            let lk = self.logk[p - last];
            if lk == f64::NEG_INFINITY {
                continue;
            }
            let mut e = w + lk + self.a;
            for &pt in &self.points {
                e += self.coupling[(p as i64 - pt) as usize];
            }
            if p == self.n && self.pinned {
                self.acc.push(e);
            } else {
                self.points.push(p as i64);
                self.visit(p, e);
                self.points.pop();
            }
        }
    }
}

fn log_tails(law: &RenewalLaw, n: usize) -> Vec<f64> {
    (0..=n as u64)
        .map(|r| if r == 0 { 0.0 } else { law.tail(r).ln() })
        .collect()
}

/// Pattern DP for a finite-range model; cost `O(n·2^q + n²)`.
pub fn annealed_logz_dp(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    h: f64,
    n: usize,
    boundary: Boundary,
) -> Result<LogWeight> {
    annealed_logz_dp_with(law, model, beta, h, n, boundary, Origin::Excluded)
}

pub fn annealed_logz_dp_with(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    h: f64,
    n: usize,
    boundary: Boundary,
    origin: Origin<'_>,
) -> Result<LogWeight> {
    let q = model.range().ok_or_else(|| {
        Error::Unsupported(
            "the pattern DP needs a finite-range model; truncate it or use the bracketed variant"
                .into(),
        )
    })?;
    if q > MAX_PATTERN_BITS {
        return Err(Error::TooLarge(format!(
            "correlation range {q} exceeds {MAX_PATTERN_BITS} pattern bits"
        )));
    }
    if n == 0 {
        return Err(Error::param("n", "system size must be positive"));
    }
    let a = h + 0.5 * beta * beta;
    let energy = pattern_energies(model, beta, q);
    let logk: Vec<f64> = (0..=n as u64).map(|l| law.log_mass(l)).collect();
    let size = 1usize << q;
    let fold_len = size.max(2) - 1;
    let slots = q + 1;
    let mut ring = vec![f64::NEG_INFINITY; slots * fold_len];
    let mut totals = vec![f64::NEG_INFINITY; n + 1];
    let mut cur = vec![f64::NEG_INFINITY; size];

    let excluded = origin == Origin::Excluded;
    totals[0] = 0.0;
    if !excluded {
        let start = match origin {
            Origin::Past(gaps) => past_pattern(gaps, q),
            _ => 0,
        };
        cur[start] = 0.0;
        fold_into(&cur, &mut ring[..fold_len], q);
    }

    for j in 1..=n {
        cur.fill(f64::NEG_INFINITY);
        for l in 1..=q.min(j) {
            let i = j - l;
            if i == 0 && excluded {
                continue;
            }
            let lk = logk[l];
            if lk == f64::NEG_INFINITY {
                continue;
            }
            let slot = &ring[(i % slots) * fold_len..(i % slots + 1) * fold_len];
            let level = &slot[fold_offset(q, l)..fold_offset(q, l) + (size >> l)];
            let high = 1usize << (l - 1);
            for (x, &u) in level.iter().enumerate() {
                let w = (x << l) | high;
                cur[w] = lk + a + energy[w] + u;
            }
        }
        let mut acc = LogSumExp::new();
        if j > q {
            let first = usize::from(excluded);
            for i in first..j - q {
                acc.push(totals[i] + logk[j - i]);
            }
        }
        if excluded {
            acc.push(logk[j]);
        }
        cur[0] = acc.value() + a;
        let slot = &mut ring[(j % slots) * fold_len..(j % slots + 1) * fold_len];
        totals[j] = fold_into(&cur, slot, q);
    }

    let out = match boundary {
        Boundary::Pinned => totals[n],
        Boundary::Free => {
            let logtail = log_tails(law, n);
            let mut acc = LogSumExp::new();
            for i in 0..=n {
                acc.push(totals[i] + logtail[n - i]);
            }
            acc.value()
        }
    };
    Ok(LogWeight(out))
}

// Level l (1..=q) of the fold holds 2^{q−l} partial sums over the top l bits.
fn fold_offset(q: usize, l: usize) -> usize {
    (1usize << q) - (1usize << (q + 1 - l))
}

/// Writes all fold levels of `layer` into `out` and returns the total.
fn fold_into(layer: &[f64], out: &mut [f64], q: usize) -> f64 {
    if q == 0 {
        return layer[0];
    }
    let half = layer.len() / 2;
    for x in 0..half {
        out[x] = log_add_exp(layer[x], layer[x + half]);
    }
    let mut start = 0;
    let mut len = half;
    while len > 1 {
        let h = len / 2;
        let next = start + len;
        for x in 0..h {
            out[next + x] = log_add_exp(out[start + x], out[start + x + h]);
        }
        start = next;
        len = h;
    }
    out[start]
}

/// Partition function with a supplied past; the origin interacts.
pub fn past_logz(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    h: f64,
    n: usize,
    past: &[u64],
    boundary: Boundary,
) -> Result<LogWeight> {
    annealed_logz_dp_with(law, model, beta, h, n, boundary, Origin::Past(past))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogZBracket {
    /// `log Z` of the model truncated at `q`.
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub q: usize,
}

/// `log Z` of the truncated model with the bound `|log Z − log Z^{[q]}| ≤ nβ²t(q+1)`.
pub fn annealed_logz_bracket(
    law: &RenewalLaw,
    model: &CorrelationModel,
    beta: f64,
    h: f64,
    n: usize,
    q: usize,
    boundary: Boundary,
) -> Result<LogZBracket> {
    let q = model.range().map_or(q, |r| r.min(q));
    let truncated = model.truncate(q);
    let value = annealed_logz_dp(law, &truncated, beta, h, n, boundary)?.ln();
    let width = if model.range().is_some_and(|r| r <= q) {
        0.0
    } else {
        n as f64 * beta * beta * model.tail_abs_sum(q as u64 + 1)
    };
    Ok(LogZBracket {
        value,
        lower: value - width,
        upper: value + width,
        q,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogZRow {
    pub beta: f64,
    pub h: f64,
    pub n: usize,
    pub log_z: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Bracketed `log Z` over a `(β, h)` grid, `β` outermost.
pub fn annealed_logz_grid(
    law: &RenewalLaw,
    model: &CorrelationModel,
    betas: &[f64],
    hs: &[f64],
    n: usize,
    q: usize,
    boundary: Boundary,
) -> Result<Vec<LogZRow>> {
    let mut rows = Vec::with_capacity(betas.len() * hs.len());
    for &beta in betas {
        for &h in hs {
            let b = annealed_logz_bracket(law, model, beta, h, n, q, boundary)?;
            rows.push(LogZRow {
                beta,
                h,
                n,
                log_z: b.value,
                lower: b.lower,
                upper: b.upper,
            });
        }
    }
    Ok(rows)
}

/// Precomputed gap-law logarithms for repeated quenched evaluations at a
/// fixed size.
#[derive(Clone, Debug)]
pub struct QuenchedKernel {
    n: usize,
    logk: Vec<f64>,
    logtail: Vec<f64>,
}

impl QuenchedKernel {
    pub fn new(law: &RenewalLaw, n: usize) -> Self {
        QuenchedKernel {
            n,
            logk: (0..=n as u64).map(|l| law.log_mass(l)).collect(),
            logtail: log_tails(law, n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `log Z^ω`; `omega[k−1]` is the disorder at site `k`.
    pub fn log_partition(&self, omega: &[f64], beta: f64, h: f64, boundary: Boundary) -> f64 {
        let n = self.n;
        let mut lz = vec![f64::NEG_INFINITY; n + 1];
        lz[0] = 0.0;
        for k in 1..=n {
            let mut m = f64::NEG_INFINITY;
            for j in 0..k {
                let v = lz[j] + self.logk[k - j];
                if v > m {
                    m = v;
                }
            }
            if m == f64::NEG_INFINITY {
                continue;
            }
            let mut s = 0.0;
            for j in 0..k {
                s += (lz[j] + self.logk[k - j] - m).exp();
            }
            lz[k] = beta * omega[k - 1] + h + m + s.ln();
        }
        match boundary {
            Boundary::Pinned => lz[n],
            Boundary::Free => {
                let mut acc = LogSumExp::new();
                for j in 0..=n {
                    acc.push(lz[j] + self.logtail[n - j]);
                }
                acc.value()
            }
        }
    }
}

/// `log Z^ω_{n,β,h}` by the `O(n²)` renewal recursion.
pub fn quenched_logz(
    law: &RenewalLaw,
    omega: &[f64],
    beta: f64,
    h: f64,
    n: usize,
    boundary: Boundary,
) -> Result<LogWeight> {
    if omega.len() < n {
        return Err(Error::param(
            "omega",
            format!("disorder has length {} but n = {n}", omega.len()),
        ));
    }
    if n == 0 {
        return Err(Error::param("n", "system size must be positive"));
    }
    Ok(LogWeight(
        QuenchedKernel::new(law, n).log_partition(omega, beta, h, boundary),
    ))
}
