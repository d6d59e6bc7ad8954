//! Interarrival laws `K(n)`, the renewal mass function `P(n ∈ τ)` and the
//! homogeneous (disorder-free) free energy.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{Kernel, LogSumExp, PowerSeries};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LawKind {
    /// `K(n) = n^{-(1+α)} / ζ(1+α)`
    Zeta,
    /// `K(n) = (1−p) p^{n−1}`
    Geometric,
    /// Explicit table of masses on a finite set of gaps.
    Finite,
    /// `K(n) ∝ n^{-(1+α)} (ln(n+1))^{-k}`
    LogCorrected,
}

/// Law description as it appears in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawSpec {
    pub kind: LawKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Gap → mass. Keys are decimal integers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<BTreeMap<String, f64>>,
    /// Power `k` of the logarithmic correction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_power: Option<u32>,
}

/// A mean (or other first moment) that may be infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MeanGap {
    Finite(f64),
    Infinite,
}

impl MeanGap {
    pub fn finite(self) -> Option<f64> {
        match self {
            MeanGap::Finite(v) => Some(v),
            MeanGap::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, MeanGap::Infinite)
    }
}

#[derive(Clone, Debug)]
enum Family {
    Power {
        alpha: f64,
        norm: f64,
        mass: Arc<PowerSeries>,
        moment: Arc<PowerSeries>,
    },
    Geometric {
        p: f64,
    },
    Finite {
        // masses[l-1] = K(l)
        masses: Vec<f64>,
    },
}

/// A recurrent renewal law on the positive integers.
#[derive(Clone, Debug)]
pub struct RenewalLaw {
    spec: LawSpec,
    family: Family,
}

impl RenewalLaw {
    pub fn from_spec(spec: &LawSpec) -> Result<Self> {
        let family = match spec.kind {
            LawKind::Zeta => {
                let alpha = spec
                    .alpha
                    .ok_or_else(|| Error::param("alpha", "required for the zeta law"))?;
                power_family(alpha, 0)?
            }
            LawKind::LogCorrected => {
                let alpha = spec
                    .alpha
                    .ok_or_else(|| Error::param("alpha", "required for the log-corrected law"))?;
                let k = spec.log_power.unwrap_or(1);
                if k > 64 {
                    return Err(Error::param("log_power", "must be at most 64"));
                }
                power_family(alpha, k as i32)?
            }
            LawKind::Geometric => {
                let p = spec
                    .p
                    .ok_or_else(|| Error::param("p", "required for the geometric law"))?;
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::param("p", format!("must lie in [0, 1), got {p}")));
                }
                Family::Geometric { p }
            }
            LawKind::Finite => {
                let table = spec
                    .table
                    .as_ref()
                    .ok_or_else(|| Error::param("table", "required for the finite law"))?;
                Family::Finite {
                    masses: finite_masses(table)?,
                }
            }
        };
        Ok(RenewalLaw {
            spec: spec.clone(),
            family,
        })
    }

    pub fn zeta(alpha: f64) -> Result<Self> {
        Self::from_spec(&LawSpec {
            kind: LawKind::Zeta,
            alpha: Some(alpha),
            p: None,
            table: None,
            log_power: None,
        })
    }

    pub fn log_corrected(alpha: f64, k: u32) -> Result<Self> {
        Self::from_spec(&LawSpec {
            kind: LawKind::LogCorrected,
            alpha: Some(alpha),
            p: None,
            table: None,
            log_power: Some(k),
        })
    }

    pub fn geometric(p: f64) -> Result<Self> {
        Self::from_spec(&LawSpec {
            kind: LawKind::Geometric,
            alpha: None,
            p: Some(p),
            table: None,
            log_power: None,
        })
    }

    /// Finite-support law from `(gap, mass)` pairs.
    pub fn finite(entries: &[(u64, f64)]) -> Result<Self> {
        let table = entries
            .iter()
            .map(|(l, m)| (l.to_string(), *m))
            .collect::<BTreeMap<_, _>>();
        Self::from_spec(&LawSpec {
            kind: LawKind::Finite,
            alpha: None,
            p: None,
            table: Some(table),
            log_power: None,
        })
    }

    pub fn spec(&self) -> &LawSpec {
        &self.spec
    }

    pub fn kind(&self) -> LawKind {
        self.spec.kind
    }

    /// Tail exponent for power laws.
    pub fn alpha(&self) -> Option<f64> {
        match self.family {
            Family::Power { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    /// Largest gap with positive mass, if the support is finite.
    pub fn max_support(&self) -> Option<u64> {
        match &self.family {
            Family::Finite { masses } => Some(masses.len() as u64),
            Family::Geometric { p } if *p == 0.0 => Some(1),
            _ => None,
        }
    }

    /// Smallest gap with positive mass.
    pub fn min_support(&self) -> u64 {
        match &self.family {
            Family::Finite { masses } => masses.iter().position(|&m| m > 0.0).unwrap() as u64 + 1,
            _ => 1,
        }
    }

    /// `K(n)`; zero for `n = 0` and outside the support.
    pub fn mass(&self, n: u64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        match &self.family {
            Family::Power { norm, mass, .. } => mass.term(n) / norm,
            Family::Geometric { p } => {
                if n == 1 {
                    1.0 - p
                } else {
                    (1.0 - p) * p.powf((n - 1) as f64)
                }
            }
            Family::Finite { masses } => masses.get(n as usize - 1).copied().unwrap_or(0.0),
        }
    }

    /// `ln K(n)`, `-∞` outside the support.
    pub fn log_mass(&self, n: u64) -> f64 {
        if n == 0 {
            return f64::NEG_INFINITY;
        }
        match &self.family {
            Family::Power { norm, mass, .. } => mass.log_term(n) - norm.ln(),
            Family::Geometric { p } => {
                if n == 1 {
                    (-p).ln_1p()
                } else {
                    (-p).ln_1p() + (n - 1) as f64 * p.ln()
                }
            }
            Family::Finite { .. } => self.mass(n).ln(),
        }
    }

    /// `Σ_{l>r} K(l)`.
    pub fn tail(&self, r: u64) -> f64 {
        self.tilted_tail(r, 0.0)
    }

    /// `Σ_{l>r} K(l) e^{-F l}`.
    pub fn tilted_tail(&self, r: u64, f: f64) -> f64 {
        match &self.family {
            Family::Power { norm, mass, .. } => {
                mass.sum_from(r + 1, Kernel::Decay(f)).unwrap() / norm
            }
            Family::Geometric { p } => {
                let x = (-f).exp();
                let y = p * x;
                (1.0 - p) * x * y.powf(r as f64) / (1.0 - y)
            }
            Family::Finite { masses } => masses
                .iter()
                .enumerate()
                .skip(r as usize)
                .map(|(i, m)| m * (-f * (i + 1) as f64).exp())
                .sum(),
        }
    }

    /// `ln Σ_{l>r} K(l) e^{-F l}`, accurate even when the sum underflows.
    pub fn log_tilted_tail(&self, r: u64, f: f64) -> f64 {
        let t = self.tilted_tail(r, f);
        if t > 1e-280 || f == 0.0 {
            return t.ln();
        }
        let mut acc = LogSumExp::new();
        let last = self.max_support().unwrap_or(u64::MAX);
        let mut l = r + 1;
        while l <= last {
            acc.push(self.log_mass(l) - f * l as f64);
            if acc.value() > f64::NEG_INFINITY && (l - r) as f64 * f > 800.0 {
                break;
            }
            l += 1;
        }
        acc.value()
    }

    /// `Σ_{l>r} l K(l) e^{-F l}`.
    pub fn tilted_moment_tail(&self, r: u64, f: f64) -> MeanGap {
        match &self.family {
            Family::Power { norm, moment, .. } => match moment.sum_from(r + 1, Kernel::Decay(f)) {
                Some(v) => MeanGap::Finite(v / norm),
                None => MeanGap::Infinite,
            },
            Family::Geometric { p } => {
                let x = (-f).exp();
                let y = p * x;
                let rf = r as f64;
                MeanGap::Finite(
                    (1.0 - p) * x * y.powf(rf) * ((rf + 1.0) - rf * y) / ((1.0 - y) * (1.0 - y)),
                )
            }
            Family::Finite { masses } => MeanGap::Finite(
                masses
                    .iter()
                    .enumerate()
                    .skip(r as usize)
                    .map(|(i, m)| (i + 1) as f64 * m * (-f * (i + 1) as f64).exp())
                    .sum(),
            ),
        }
    }

    /// `Σ_{l≥1} K(l)(1 − e^{-F l})`, free of cancellation for small `F`.
    pub fn defect(&self, f: f64) -> f64 {
        if f == 0.0 {
            return 0.0;
        }
        match &self.family {
            Family::Power { norm, mass, .. } => mass.sum_from(1, Kernel::Defect(f)).unwrap() / norm,
            Family::Geometric { p } => -(-f).exp_m1() / (1.0 - p * (-f).exp()),
            Family::Finite { masses } => masses
                .iter()
                .enumerate()
                .map(|(i, m)| -m * (-f * (i + 1) as f64).exp_m1())
                .sum(),
        }
    }

    /// `m = Σ n K(n)`.
    pub fn mean(&self) -> MeanGap {
        self.tilted_moment_tail(0, 0.0)
    }
}

fn power_family(alpha: f64, k: i32) -> Result<Family> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::param(
            "alpha",
            format!("must be positive and finite for a normalizable power law, got {alpha}"),
        ));
    }
    let mass = PowerSeries::new(1.0 + alpha, k);
    let norm = mass.sum_from(1, Kernel::One).unwrap();
    let moment = PowerSeries::new(alpha, k);
    Ok(Family::Power {
        alpha,
        norm,
        mass: Arc::new(mass),
        moment: Arc::new(moment),
    })
}

fn finite_masses(table: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
    let mut pairs = Vec::with_capacity(table.len());
    for (key, &m) in table {
        let l: u64 = key
            .trim()
            .parse()
            .map_err(|_| Error::param("table", format!("gap `{key}` is not a positive integer")))?;
        if l == 0 {
            return Err(Error::param("table", "gaps must be at least 1"));
        }
        if !(m >= 0.0) || !m.is_finite() {
            return Err(Error::param("table", format!("mass at gap {l} must be nonnegative")));
        }
        pairs.push((l, m));
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::param(
            "table",
            format!("masses must sum to 1 (recurrent renewal), got {total}"),
        ));
    }
    let max = pairs.iter().filter(|p| p.1 > 0.0).map(|p| p.0).max().unwrap_or(0);
    if max > 1 << 20 {
        return Err(Error::param("table", "largest gap must be at most 2^20"));
    }
    let mut masses = vec![0.0; max as usize];
    for (l, m) in pairs {
        if l <= max {
            masses[l as usize - 1] = m / total;
        }
    }
    Ok(masses)
}

/// `u(n) = P(n ∈ τ)` for `n = 0..=n_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenewalMassTable {
    u: Vec<f64>,
}

impl RenewalMassTable {
    pub fn get(&self, n: usize) -> f64 {
        self.u[n]
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    pub fn n_max(&self) -> usize {
        self.u.len() - 1
    }
}

/// Renewal recursion `u(n) = Σ_{k=1}^n K(k) u(n−k)`, `u(0) = 1`.
pub fn renewal_mass(law: &RenewalLaw, n_max: usize) -> RenewalMassTable {
    let k: Vec<f64> = (0..=n_max as u64).map(|l| law.mass(l)).collect();
    let mut u = vec![0.0; n_max + 1];
    u[0] = 1.0;
    for n in 1..=n_max {
        let mut acc = 0.0;
        for j in 1..=n {
            acc += k[j] * u[n - j];
        }
        u[n] = acc;
    }
    RenewalMassTable { u }
}

/// Free energy of the homogeneous model at pinning reward `h`.
///
/// Solves `Σ K(n)(1 − e^{-F n}) = 1 − e^{-h}` by bisection on `[0, h]`.
pub fn homogeneous_free_energy(law: &RenewalLaw, h: f64) -> f64 {
    if h <= 0.0 {
        return 0.0;
    }
    let target = -(-h).exp_m1();
    let (mut lo, mut hi) = (0.0_f64, h);
    if law.defect(hi) <= target {
        return hi;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if law.defect(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_mass_at_one() {
        let law = RenewalLaw::zeta(0.5).unwrap();
        assert!((law.mass(1) - 0.382_793_383_999_426_56).abs() < 1e-14);
        assert!((law.log_mass(7) - law.mass(7).ln()).abs() < 1e-13);
    }

    #[test]
    fn geometric_and_finite_masses() {
        let g = RenewalLaw::geometric(0.5).unwrap();
        assert_eq!(g.mass(3), 0.125);
        let f = RenewalLaw::finite(&[(1, 1.0)]).unwrap();
        assert_eq!(f.mass(2), 0.0);
        assert_eq!(f.log_mass(2), f64::NEG_INFINITY);
    }

    #[test]
    fn invalid_parameters() {
        assert!(RenewalLaw::zeta(0.0).unwrap_err().is_config());
        assert!(RenewalLaw::zeta(-1.0).is_err());
        assert!(RenewalLaw::geometric(1.0).is_err());
        assert!(RenewalLaw::finite(&[(1, 0.5)]).is_err());
        assert!(RenewalLaw::finite(&[(0, 1.0)]).is_err());
    }

    #[test]
    fn means() {
        assert_eq!(RenewalLaw::finite(&[(1, 1.0)]).unwrap().mean(), MeanGap::Finite(1.0));
        let g = RenewalLaw::geometric(0.5).unwrap().mean().finite().unwrap();
        assert!((g - 2.0).abs() < 1e-14);
        assert!(RenewalLaw::zeta(0.5).unwrap().mean().is_infinite());
        assert!(RenewalLaw::zeta(1.0).unwrap().mean().is_infinite());
        // m = ζ(1.5) / ζ(2.5)
        let z = RenewalLaw::zeta(1.5).unwrap().mean().finite().unwrap();
        assert!((z - 2.612_375_348_685_488 / 1.341_487_257_250_917).abs() < 1e-12);
        assert!(RenewalLaw::log_corrected(1.0, 1).unwrap().mean().is_infinite());
        assert!(RenewalLaw::log_corrected(1.0, 3).unwrap().mean().finite().is_some());
    }

    #[test]
    fn renewal_mass_examples() {
        let u = renewal_mass(&RenewalLaw::geometric(0.5).unwrap(), 30);
        assert_eq!(u.get(0), 1.0);
        assert!(u.values()[1..].iter().all(|&x| (x - 0.5).abs() < 1e-15));
        let d = renewal_mass(&RenewalLaw::finite(&[(1, 1.0)]).unwrap(), 10);
        assert!(d.values().iter().all(|&x| x == 1.0));
        let z = RenewalLaw::zeta(0.5).unwrap();
        assert_eq!(renewal_mass(&z, 5).get(1), z.mass(1));
    }

    #[test]
    fn homogeneous_examples() {
        let g = RenewalLaw::geometric(0.5).unwrap();
        assert_eq!(homogeneous_free_energy(&g, 0.0), 0.0);
        assert_eq!(homogeneous_free_energy(&g, -1.0), 0.0);
        let f = homogeneous_free_energy(&g, 2f64.ln());
        assert!((f - 1.5f64.ln()).abs() < 1e-12 * f);
        let d = RenewalLaw::finite(&[(1, 1.0)]).unwrap();
        assert!((homogeneous_free_energy(&d, 0.3) - 0.3).abs() < 1e-13);
    }

    #[test]
    fn tilted_tails_match_direct_sums() {
        for law in [
            RenewalLaw::geometric(0.3).unwrap(),
            RenewalLaw::finite(&[(1, 0.2), (3, 0.5), (4, 0.3)]).unwrap(),
        ] {
            for &f in &[0.0, 0.1, 1.0] {
                for r in 0..5u64 {
                    let direct: f64 = (r + 1..2000).map(|l| law.mass(l) * (-f * l as f64).exp()).sum();
                    assert!((law.tilted_tail(r, f) - direct).abs() < 1e-14);
                    let m: f64 = (r + 1..2000)
                        .map(|l| l as f64 * law.mass(l) * (-f * l as f64).exp())
                        .sum();
                    assert!((law.tilted_moment_tail(r, f).finite().unwrap() - m).abs() < 1e-12);
                }
            }
        }
    }
}
