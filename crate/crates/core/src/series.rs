//! Sums of the form `Σ_{l≥m} l^{-s} (ln(l+1))^{-k} κ(l)`.
//!
//! The first terms are summed directly; the remainder from `DIRECT_TERMS`
//! onwards is the Euler–Maclaurin expansion `∫ f + f/2 − f'/12`, with the
//! integral evaluated by Gauss–Legendre panels after the substitution
//! `x = M·e^t`.

pub(crate) const DIRECT_TERMS: usize = 4096;

const GL_NODES: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_WEIGHTS: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_4,
    0.219_086_362_515_982_0,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];
const PANEL: f64 = 0.125;
// exp(-46) ~ 1e-20: integrand decay beyond which panels are dropped
const DECAY_CUTOFF: f64 = 46.0;

/// Multiplier applied to each term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Kernel {
    One,
    /// `e^{-F l}`
    Decay(f64),
    /// `1 − e^{-F l}`, evaluated without cancellation
    Defect(f64),
}

impl Kernel {
    fn normalized(self) -> Kernel {
        match self {
            Kernel::Decay(f) if f == 0.0 => Kernel::One,
            k => k,
        }
    }

    #[inline]
    fn eval(self, x: f64) -> f64 {
        match self {
            Kernel::One => 1.0,
            Kernel::Decay(f) => (-f * x).exp(),
            Kernel::Defect(f) => -(-f * x).exp_m1(),
        }
    }

    fn deriv(self, x: f64) -> f64 {
        match self {
            Kernel::One => 0.0,
            Kernel::Decay(f) => -f * (-f * x).exp(),
            Kernel::Defect(f) => f * (-f * x).exp(),
        }
    }
}

/// Integrates `g` over `[0, t_max]` with 10-point Gauss–Legendre panels.
pub(crate) fn integrate<G: Fn(f64) -> f64>(g: G, t_max: f64) -> f64 {
    if t_max <= 0.0 {
        return 0.0;
    }
    let panels = (t_max / PANEL).ceil().max(1.0) as usize;
    let width = t_max / panels as f64;
    let half = 0.5 * width;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * width;
        let mut acc = 0.0;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
            acc += w * (g(mid - half * x) + g(mid + half * x));
        }
        total += acc * half;
    }
    total
}

#[derive(Clone, Debug)]
pub(crate) struct PowerSeries {
    s: f64,
    k: i32,
    terms: Vec<f64>,
    suffix: Vec<f64>,
}

impl PowerSeries {
    pub(crate) fn new(s: f64, k: i32) -> Self {
        let mut terms = vec![0.0; DIRECT_TERMS];
        for (l, t) in terms.iter_mut().enumerate().skip(1) {
            *t = weight(s, k, l as f64);
        }
        let mut suffix = vec![0.0; DIRECT_TERMS + 1];
        for l in (1..DIRECT_TERMS).rev() {
            suffix[l] = suffix[l + 1] + terms[l];
        }
        PowerSeries {
            s,
            k,
            terms,
            suffix,
        }
    }

    pub(crate) fn term(&self, l: u64) -> f64 {
        if l == 0 {
            0.0
        } else if (l as usize) < DIRECT_TERMS {
            self.terms[l as usize]
        } else {
            weight(self.s, self.k, l as f64)
        }
    }

    pub(crate) fn log_term(&self, l: u64) -> f64 {
        if l == 0 {
            return f64::NEG_INFINITY;
        }
        let x = l as f64;
        let mut v = -self.s * x.ln();
        if self.k != 0 {
            v -= self.k as f64 * x.ln_1p().ln();
        }
        v
    }

    pub(crate) fn converges(&self, kernel: Kernel) -> bool {
        match kernel.normalized() {
            Kernel::Decay(f) => f > 0.0,
            Kernel::Defect(f) if f == 0.0 => true,
            _ => self.s > 1.0 || (self.s == 1.0 && self.k > 1),
        }
    }

    /// `Σ_{l≥m} w(l) κ(l)`, or `None` when the series diverges.
    pub(crate) fn sum_from(&self, m: u64, kernel: Kernel) -> Option<f64> {
        let kernel = kernel.normalized();
        if !self.converges(kernel) {
            return None;
        }
        if let Kernel::Defect(f) = kernel {
            if f == 0.0 {
                return Some(0.0);
            }
        }
        let m = m.max(1);
        if (m as usize) >= DIRECT_TERMS {
            return Some(self.remainder(m as f64, kernel));
        }
        let head = match kernel {
            Kernel::One => self.suffix[m as usize],
            Kernel::Decay(f) => {
                let mut acc = 0.0;
                for l in m as usize..DIRECT_TERMS {
                    let e = f * l as f64;
                    if e > 745.0 {
                        break;
                    }
                    acc += self.terms[l] * (-e).exp();
                }
                acc
            }
            Kernel::Defect(f) => {
                let mut acc = 0.0;
                for l in m as usize..DIRECT_TERMS {
                    acc += self.terms[l] * -(-f * l as f64).exp_m1();
                }
                acc
            }
        };
        Some(head + self.remainder(DIRECT_TERMS as f64, kernel))
    }

    fn dlog_weight(&self, x: f64) -> f64 {
        let mut d = -self.s / x;
        if self.k != 0 {
            d -= self.k as f64 / ((x + 1.0) * x.ln_1p());
        }
        d
    }

    fn remainder(&self, m: f64, kernel: Kernel) -> f64 {
        let w = weight(self.s, self.k, m);
        let f0 = w * kernel.eval(m);
        let f1 = w * (self.dlog_weight(m) * kernel.eval(m) + kernel.deriv(m));
        self.integral(m, kernel) + 0.5 * f0 - f1 / 12.0
    }

    fn integral(&self, m: f64, kernel: Kernel) -> f64 {
        let (s, k) = (self.s, self.k);
        if s == 1.0 && kernel == Kernel::One {
            // ∫ dx / (x ln(x)^k) in closed form, plus the ln(x+1) correction
            let lm = m.ln();
            let kf = k as f64;
            let closed = lm.powf(1.0 - kf) / (kf - 1.0);
            let corr = integrate(
                |t| (m * t.exp()).ln_1p().powi(-k) - (lm + t).powi(-k),
                DECAY_CUTOFF,
            );
            return closed + corr;
        }
        let mut t_max = f64::INFINITY;
        if s > 1.0 {
            t_max = DECAY_CUTOFF / (s - 1.0);
        }
        if let Kernel::Decay(f) = kernel {
            let t_decay = (50.0 / (f * m)).ln().max(0.0) + 1.0;
            t_max = t_max.min(t_decay);
        }
        let scale = m.powf(1.0 - s);
        integrate(
            |t| {
                let x = m * t.exp();
                let mut g = ((1.0 - s) * t).exp() * kernel.eval(x);
                if k != 0 {
                    g *= x.ln_1p().powi(-k);
                }
                g
            },
            t_max,
        ) * scale
    }
}

#[inline]
fn weight(s: f64, k: i32, x: f64) -> f64 {
    let mut w = x.powf(-s);
    if k != 0 {
        w *= x.ln_1p().powi(-k);
    }
    w
}

/// `ln(e^a + e^b)` with max-shift.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Streaming log-sum-exp that rescales only when the running maximum moves.
#[derive(Clone, Copy, Debug)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl LogSumExp {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = LogSumExp::new();
    for v in values {
        acc.push(v);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_values() {
        // reference values computed with mpmath at 30 digits
        let z15 = PowerSeries::new(1.5, 0).sum_from(1, Kernel::One).unwrap();
        assert!((z15 - 2.612_375_348_685_488_3).abs() < 1e-13);
        let z13 = PowerSeries::new(1.3, 0).sum_from(1, Kernel::One).unwrap();
        assert!((z13 - 3.931_949_211_809_543_7).abs() < 1e-12);
        let z3 = PowerSeries::new(3.0, 0).sum_from(1, Kernel::One).unwrap();
        assert!((z3 - 1.202_056_903_159_594_3).abs() < 1e-14);
    }

    #[test]
    fn hurwitz_tail() {
        let t = PowerSeries::new(2.5, 0).sum_from(5, Kernel::One).unwrap();
        assert!((t - 0.069_310_532_044_321_88).abs() < 1e-15);
        let far = PowerSeries::new(2.5, 0).sum_from(10_000, Kernel::One).unwrap();
        let approx = 10_000f64.powf(-1.5) / 1.5;
        assert!((far / approx - 1.0).abs() < 1e-3);
    }

    #[test]
    fn tilted_and_defect() {
        let p = PowerSeries::new(1.5, 0);
        let v = p.sum_from(1, Kernel::Decay(1e-3)).unwrap();
        assert!((v - 2.501_735_774_927_474_8).abs() < 1e-13);
        let d = PowerSeries::new(1.3, 0).sum_from(1, Kernel::Defect(1e-9)).unwrap();
        assert!((d / 8.633_202_055_360_951e-3 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_corrected() {
        let v = PowerSeries::new(2.0, 1).sum_from(1, Kernel::One).unwrap();
        assert!((v - 1.882_039_745_882_350_8).abs() < 1e-13);
        let borderline = PowerSeries::new(1.0, 3).sum_from(1, Kernel::One).unwrap();
        assert!((borderline - 3.753_237_562_092_348_1).abs() < 1e-12);
        assert!(PowerSeries::new(1.0, 1).sum_from(1, Kernel::One).is_none());
    }

    #[test]
    fn log_sum_exp_matches_direct() {
        let xs = [-1.0, 0.5, 2.0, -700.0, f64::NEG_INFINITY];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(xs) - direct).abs() < 1e-15);
        assert_eq!(log_sum_exp([]), f64::NEG_INFINITY);
        assert!((log_add_exp(1.0, 1.0) - (1.0 + 2f64.ln())).abs() < 1e-15);
    }
}
