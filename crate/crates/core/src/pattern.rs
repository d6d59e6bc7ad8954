//! Occupation patterns of the `q` sites preceding a renewal point.
//!
//! Bit `d−1` of a pattern is set when the site at distance `d` before the
//! current renewal point is itself a renewal point.

use crate::correlations::CorrelationModel;

pub const MAX_PATTERN_BITS: usize = 20;

/// Pattern seen from a new renewal point reached by a gap `l` from `w`.
#[inline]
pub fn next_pattern(w: usize, l: usize, q: usize) -> usize {
    if l > q {
        0
    } else {
        ((w << l) | (1 << (l - 1))) & ((1 << q) - 1)
    }
}

/// `β² Σ_d ρ_d w_d` for every pattern `w` in `0..2^q`.
pub fn pattern_energies(model: &CorrelationModel, beta: f64, q: usize) -> Vec<f64> {
    let b2 = beta * beta;
    let lag: Vec<f64> = (1..=q as u64).map(|d| b2 * model.rho(d)).collect();
    let mut e = vec![0.0; 1 << q];
    for w in 1..(1usize << q) {
        let low = w.trailing_zeros() as usize;
        e[w] = e[w & (w - 1)] + lag[low];
    }
    e
}

/// Pattern induced at the origin by past renewal points at the given
/// backward gaps (first gap is the distance from the origin to the
/// nearest past point).
pub fn past_pattern(gaps: &[u64], q: usize) -> usize {
    let mut w = 0usize;
    let mut dist = 0u64;
    for &g in gaps {
        dist += g;
        if dist as usize > q || g == 0 {
            break;
        }
        w |= 1 << (dist - 1);
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifts_and_sets() {
        assert_eq!(next_pattern(0b01, 1, 2), 0b11);
        assert_eq!(next_pattern(0b01, 2, 2), 0b10);
        assert_eq!(next_pattern(0b11, 3, 2), 0);
        assert_eq!(next_pattern(0, 1, 0), 0);
    }

    #[test]
    fn energies_sum_lags() {
        let m = CorrelationModel::finite(&[0.5, 0.25, -0.1]).unwrap();
        let e = pattern_energies(&m, 2.0, 3);
        assert!((e[0b101] - 4.0 * (0.5 - 0.1)).abs() < 1e-15);
        assert_eq!(e[0], 0.0);
    }

    #[test]
    fn past_patterns() {
        assert_eq!(past_pattern(&[1, 2], 3), 0b101);
        assert_eq!(past_pattern(&[4], 3), 0);
        assert_eq!(past_pattern(&[], 3), 0);
    }
}
