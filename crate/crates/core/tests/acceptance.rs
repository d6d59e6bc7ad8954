//! Acceptance suite. Each test checks one numbered criterion and writes a
//! single `PASS`/`FAIL` line to stderr (bypassing output capture, so the
//! lines appear in the normal `cargo test` log).

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use pinning_core::correlations::CorrelationModel;
use pinning_core::critical::{
    critical_curve, exponent_fit, fit_exponent_at, small_beta_check, ExponentFit, FreeEnergySolver,
};
use pinning_core::montecarlo::{annealed_identity_check, jensen_gap};
use pinning_core::partition::{
    annealed_logz_bruteforce, annealed_logz_bruteforce_with, annealed_logz_dp,
    annealed_logz_dp_with, past_logz, Boundary, Origin,
};
use pinning_core::renewal::{homogeneous_free_energy, RenewalLaw};
use pinning_core::transfer::{
    gibbs_gap_marginal, gurevich_pressure, mean_gap_gibbs, spectral, PotentialSpec, TransferMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, ok: bool, detail: String) {
    let status = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "acceptance criterion {id:2} [{status}] {name}: {detail}"
    );
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
}

fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (k - 1) as f64))
        .collect()
}

fn deterministic() -> (RenewalLaw, CorrelationModel) {
    (
        RenewalLaw::finite(&[(1, 1.0)]).unwrap(),
        CorrelationModel::finite(&[0.5, 0.25]).unwrap(),
    )
}

fn random_law(rng: &mut ChaCha8Rng) -> RenewalLaw {
    match rng.random_range(0..4) {
        0 => RenewalLaw::zeta(rng.random_range(0.2..1.5)).unwrap(),
        1 => RenewalLaw::geometric(rng.random_range(0.05..0.9)).unwrap(),
        2 => RenewalLaw::log_corrected(rng.random_range(0.3..1.2), rng.random_range(1..3)).unwrap(),
        _ => {
            let k = rng.random_range(1..6);
            let entries: Vec<(u64, f64)> = (0..k)
                .map(|_| (rng.random_range(1..9), rng.random_range(0.1..1.0)))
                .collect();
            let total: f64 = entries.iter().map(|e| e.1).sum();
            let mut merged = std::collections::BTreeMap::new();
            for (l, w) in entries {
                *merged.entry(l).or_insert(0.0) += w / total;
            }
            RenewalLaw::finite(&merged.into_iter().collect::<Vec<_>>()).unwrap()
        }
    }
}

#[test]
fn criterion_01_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x01);
    let mut worst: f64 = 0.0;
    let cases = 240;
    for _ in 0..cases {
        let law = random_law(&mut rng);
        let q = rng.random_range(0..=6);
        let rho: Vec<f64> = (0..q).map(|_| rng.random_range(-0.6..0.6)).collect();
        let model = CorrelationModel::finite(&rho).unwrap();
        let beta = rng.random_range(0.0..1.5);
        let h = rng.random_range(-1.0..1.0);
        let n = rng.random_range(1..=14);
        let boundary = if rng.random_bool(0.5) { Boundary::Pinned } else { Boundary::Free };
        let bf = annealed_logz_bruteforce(&law, &model, beta, h, n, boundary).unwrap().ln();
        let dp = annealed_logz_dp(&law, &model, beta, h, n, boundary).unwrap().ln();
        let err = if bf == f64::NEG_INFINITY && dp == f64::NEG_INFINITY {
            0.0
        } else {
            // relative error on Z is the absolute error on log Z
            (dp - bf).abs()
        };
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "pattern DP equals brute force",
        worst <= 1e-10 && secs < 60.0,
        format!("{cases} cases, worst relative error {worst:.2e}, {secs:.1}s"),
    );
}

#[test]
fn criterion_02_iid_reduction() {
    let zero = CorrelationModel::zero();
    let mut worst_hc: f64 = 0.0;
    let mut worst_f: f64 = 0.0;
    for law in [RenewalLaw::zeta(0.5).unwrap(), RenewalLaw::geometric(0.3).unwrap()] {
        for beta in [0.25, 0.5, 1.0, 2.0] {
            let c = critical_curve(&law, &zero, beta, 6).unwrap();
            worst_hc = worst_hc.max((c.h_c + 0.5 * beta * beta).abs());
            let solver = FreeEnergySolver::new(&law, &zero, beta, 6).unwrap();
            for i in 0..20 {
                let h = -0.5 * beta * beta - 0.1 + 0.6 * i as f64 / 19.0;
                let f = solver.solve(h, 1e-12).unwrap().free_energy;
                let want = homogeneous_free_energy(&law, h + 0.5 * beta * beta);
                worst_f = worst_f.max((f - want).abs());
            }
        }
    }
    report(
        2,
        "i.i.d. reduction",
        worst_hc <= 1e-12 && worst_f <= 1e-9,
        format!("max |h_c + β²/2| = {worst_hc:.2e}, max |F − F_hom| = {worst_f:.2e}"),
    );
}

#[test]
fn criterion_03_deterministic_gap() {
    let (law, model) = deterministic();
    let p = gurevich_pressure(&law, &model, 1.0, 0.0, 2).unwrap();
    let c = critical_curve(&law, &model, 1.0, 2).unwrap();
    let solver = FreeEnergySolver::new(&law, &model, 1.0, 2).unwrap();
    let mut worst_f: f64 = 0.0;
    for d in log_grid(-8.0, 0.0, 9) {
        let f = solver.solve(c.h_c + d, 1e-12).unwrap().free_energy;
        worst_f = worst_f.max((f - d).abs());
    }
    let e_p = (p.value - 0.75).abs();
    let e_h = (c.h_c + 1.25).abs();
    report(
        3,
        "deterministic-gap closed forms",
        e_p <= 1e-12 && e_h <= 1e-12 && worst_f <= 1e-12,
        format!("|P−0.75| = {e_p:.1e}, |h_c+1.25| = {e_h:.1e}, max |F−δ| = {worst_f:.1e}"),
    );
}

fn superadditivity_fixtures() -> Vec<(RenewalLaw, CorrelationModel, f64)> {
    vec![
        (
            RenewalLaw::zeta(0.5).unwrap(),
            CorrelationModel::exponential(0.5, 0.5).unwrap(),
            1.0,
        ),
        (
            RenewalLaw::geometric(0.4).unwrap(),
            CorrelationModel::finite(&[0.3, -0.2, 0.1]).unwrap(),
            1.2,
        ),
        (
            RenewalLaw::zeta(0.8).unwrap(),
            CorrelationModel::power(0.5, 2.5).unwrap(),
            0.8,
        ),
        (
            RenewalLaw::log_corrected(0.6, 1).unwrap(),
            CorrelationModel::finite(&[-0.4, 0.2]).unwrap(),
            1.0,
        ),
        (
            RenewalLaw::finite(&[(1, 0.5), (2, 0.3), (3, 0.2)]).unwrap(),
            CorrelationModel::exponential(1.0, 0.3).unwrap(),
            1.5,
        ),
    ]
}

#[test]
fn criterion_04_superadditivity() {
    let start = Instant::now();
    let mut checks = 0;
    let mut min_slack = f64::INFINITY;
    for (law, model, beta) in superadditivity_fixtures() {
        let z: Vec<f64> = (0..=24)
            .map(|n| {
                if n == 0 {
                    0.0
                } else {
                    annealed_logz_bruteforce(&law, &model, beta, 0.1, n, Boundary::Pinned)
                        .unwrap()
                        .ln()
                }
            })
            .collect();
        for n in 1..=12 {
            for m in 1..=12 {
                let slack = z[n + m] - (z[n] + z[m] - beta * beta * model.delta_correction(m as u64));
                min_slack = min_slack.min(slack);
                checks += 1;
            }
        }
    }
    report(
        4,
        "superadditivity with Δ correction",
        min_slack >= 0.0,
        format!(
            "{checks} (n, m) pairs over 5 fixtures, minimum slack {min_slack:.3e}, {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_05_past_bracket() {
    let fixtures = [
        (
            RenewalLaw::zeta(0.5).unwrap(),
            CorrelationModel::exponential(0.5, 0.5).unwrap().truncate(6),
            1.0,
        ),
        (
            RenewalLaw::geometric(0.4).unwrap(),
            CorrelationModel::finite(&[0.3, -0.2, 0.1]).unwrap(),
            1.2,
        ),
        (
            RenewalLaw::finite(&[(1, 0.5), (2, 0.3), (3, 0.2)]).unwrap(),
            CorrelationModel::finite(&[-0.4, 0.2, 0.1, -0.05]).unwrap(),
            1.5,
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x05);
    let mut violations = 0;
    let mut oracle_err: f64 = 0.0;
    let mut total = 0;
    for (law, model, beta) in &fixtures {
        let w = beta * beta * model.weighted_abs_sum().unwrap();
        for _ in 0..50 {
            let len = rng.random_range(1..=6);
            let past: Vec<u64> = (0..len).map(|_| rng.random_range(1..=5)).collect();
            let n = rng.random_range(1..=14);
            let h = rng.random_range(-0.5..0.5);
            let zp = past_logz(law, model, *beta, h, n, &past, Boundary::Pinned).unwrap().ln();
            let zp_bf = annealed_logz_bruteforce_with(
                law,
                model,
                *beta,
                h,
                n,
                Boundary::Pinned,
                Origin::Past(&past),
            )
            .unwrap()
            .ln();
            oracle_err = oracle_err.max((zp - zp_bf).abs());
            let z = annealed_logz_dp_with(law, model, *beta, h, n, Boundary::Pinned, Origin::Included)
                .unwrap()
                .ln();
            if !(zp - w <= z + 1e-12 && z <= zp + w + 1e-12) {
                violations += 1;
            }
            total += 1;
        }
    }
    report(
        5,
        "past bracket e^{-β²Σn|ρ|}𝒵 ≤ Z ≤ e^{β²Σn|ρ|}𝒵",
        violations == 0 && oracle_err <= 1e-10,
        format!("{total} random pasts, {violations} violations, past DP vs enumeration {oracle_err:.1e}"),
    );
}

#[test]
fn criterion_06_pressure_monotonicity() {
    let fixtures = [
        (
            RenewalLaw::zeta(0.5).unwrap(),
            CorrelationModel::exponential(0.5, 0.5).unwrap(),
            1.0,
            10,
        ),
        (
            RenewalLaw::geometric(0.5).unwrap(),
            CorrelationModel::finite(&[0.3, -0.2, 0.1]).unwrap(),
            1.2,
            3,
        ),
        (
            RenewalLaw::zeta(1.5).unwrap(),
            CorrelationModel::power(0.4, 3.0).unwrap(),
            0.7,
            10,
        ),
    ];
    let grid = [0.0, 0.001, 0.01, 0.05, 0.1, 0.3, 1.0, 3.0];
    let mut ok = true;
    let mut worst_zero: f64 = 0.0;
    let mut min_gap = f64::INFINITY;
    for (law, model, beta, q) in &fixtures {
        let p: Vec<f64> = grid
            .iter()
            .map(|&f| gurevich_pressure(law, model, *beta, f, *q).unwrap().value)
            .collect();
        ok &= p.windows(2).all(|w| w[1] < w[0]);
        for (i, &f1) in grid.iter().enumerate() {
            for (j, &f12) in grid.iter().enumerate().skip(i) {
                let f2 = f12 - f1;
                // P(F₁ + F₂) ≤ P(F₁) − F₂, compared within the eigenvalue accuracy
                let slack = p[i] - f2 - p[j];
                min_gap = min_gap.min(slack);
                ok &= slack >= -1e-12;
            }
        }
        let m = TransferMatrix::build(&PotentialSpec::truncated(law, model, *beta, *q)).unwrap();
        let base = spectral(&m).unwrap();
        let recentred = spectral(&m.retilt(0.0, base.log_lambda)).unwrap();
        worst_zero = worst_zero.max(recentred.log_lambda.abs());
    }
    ok &= worst_zero <= 1e-12;
    report(
        6,
        "pressure monotone in F, tilt bound, null pressure",
        ok,
        format!("3 fixtures × 8 tilts, min slack of tilt bound {min_gap:.2e}, |P(φ_β,0)| ≤ {worst_zero:.1e}"),
    );
}

#[test]
fn criterion_07_homogeneous_exponent() {
    let start = Instant::now();
    let grid = log_grid(-4.0, -2.0, 9);
    let zero = CorrelationModel::zero();
    let mut ok = true;
    let mut detail = Vec::new();
    for alpha in [0.3, 0.5, 0.8] {
        let law = RenewalLaw::zeta(alpha).unwrap();
        let fit = exponent_fit(&law, &zero, 1.0, 0, &grid).unwrap();
        ok &= (fit.slope - 1.0 / alpha).abs() <= 0.05;
        detail.push(format!("α={alpha}: slope {:.4} (target {:.4})", fit.slope, 1.0 / alpha));
    }
    let geo = RenewalLaw::geometric(0.5).unwrap();
    let fit = exponent_fit(&geo, &zero, 1.0, 0, &grid).unwrap();
    let ratio = fit.ratio_limit();
    ok &= (fit.slope - 1.0).abs() <= 0.05 && (ratio / 0.5 - 1.0).abs() <= 0.01;
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 300.0;
    detail.push(format!("geometric: slope {:.4}, F/δ {:.5} vs 1/m = 0.5", fit.slope, ratio));
    report(7, "homogeneous exponent", ok, format!("{}, {secs:.1}s", detail.join("; ")));
}

fn correlated_fixture() -> (RenewalLaw, CorrelationModel) {
    (
        RenewalLaw::zeta(0.5).unwrap(),
        CorrelationModel::exponential(0.5, 0.5).unwrap(),
    )
}

fn exponent_grid() -> Vec<f64> {
    log_grid(-4.0, -2.0, 7)
}

/// The auto-q fit is shared by criteria 8 and 13.
fn correlated_fit() -> &'static (ExponentFit, f64) {
    static FIT: OnceLock<(ExponentFit, f64)> = OnceLock::new();
    FIT.get_or_init(|| {
        let (law, model) = correlated_fixture();
        let start = Instant::now();
        let fit = exponent_fit(&law, &model, 1.0, 1, &exponent_grid()).unwrap();
        (fit, start.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_08_correlated_exponent() {
    let (_, model) = correlated_fixture();
    let (fit, secs) = correlated_fit();
    let width = 2.0 * model.tail_abs_sum(fit.q as u64 + 1);
    let valid = width <= 1e-4 / 100.0;
    report(
        8,
        "correlated annealed exponent",
        (fit.slope - 2.0).abs() <= 0.05 && valid && *secs < 600.0,
        format!(
            "q = {}, 2β²t(q+1) = {width:.2e}, slope {:.4}, rms residual {:.1e}, {secs:.1}s",
            fit.q, fit.slope, fit.residual
        ),
    );
}

#[test]
fn criterion_09_finite_mean_constant() {
    let law = RenewalLaw::geometric(0.5).unwrap();
    let model = CorrelationModel::exponential(0.5, 0.5).unwrap();
    // 2β²t(q+1) ≤ δ/100 at δ = 1e-5 would need q = 24; q is fixed instead
    let q = 14;
    let solver = FreeEnergySolver::new(&law, &model, 1.0, q).unwrap();
    let (_, contact) = mean_gap_gibbs(&law, &model, 1.0, q).unwrap();
    let d = 1e-5;
    let f = solver.solve(solver.h_c() + d, 1e-12).unwrap().free_energy;
    let rel = (f / d) / contact - 1.0;
    let mut below = true;
    for d in log_grid(-6.0, 0.0, 13) {
        below &= solver.solve(solver.h_c() + d, 1e-12).unwrap().free_energy <= d;
    }
    report(
        9,
        "finite-mean constant and F ≤ δ",
        rel.abs() <= 0.01 && below,
        format!("q = {q}, F/δ = {:.6}, 1/mean = {contact:.6}, relative difference {rel:.2e}", f / d),
    );
}

#[test]
fn criterion_10_small_beta() {
    let (law, model) = correlated_fixture();
    let t = small_beta_check(&law, &model, &[0.4, 0.2, 0.1, 0.05], 16, 40).unwrap();
    let last = t.rows.last().unwrap();
    let errors: Vec<String> = t.rows.iter().map(|r| format!("{:.2e}", r.error)).collect();
    let (dlaw, dmodel) = deterministic();
    let d = small_beta_check(&dlaw, &dmodel, &[0.4, 0.2, 0.1, 0.05], 2, 10).unwrap();
    let exact = d.rows.iter().map(|r| r.error).fold(0.0, f64::max);
    report(
        10,
        "small-β asymptotics",
        t.errors_decreasing()
            && last.error <= 1e-2
            && t.target.tail_bound <= 1e-6
            && exact <= 1e-12,
        format!(
            "errors along β = 0.4..0.05: [{}], series tail {:.1e}, deterministic-gap max error {exact:.1e}",
            errors.join(", "),
            t.target.tail_bound
        ),
    );
}

#[test]
fn criterion_11_gibbs_tail() {
    let fixtures = [
        (RenewalLaw::zeta(0.5).unwrap(), CorrelationModel::exponential(0.5, 0.5).unwrap(), 1.0, 8),
        (RenewalLaw::geometric(0.5).unwrap(), CorrelationModel::finite(&[0.3, -0.2, 0.1]).unwrap(), 1.2, 6),
        (RenewalLaw::log_corrected(0.7, 2).unwrap(), CorrelationModel::power(0.4, 3.0).unwrap(), 0.9, 10),
        (RenewalLaw::zeta(1.5).unwrap(), CorrelationModel::finite(&[-0.4, 0.2]).unwrap(), 1.5, 4),
    ];
    let mut worst: f64 = 0.0;
    let mut worst_norm: f64 = 0.0;
    for (law, model, beta, q) in &fixtures {
        let g = gibbs_gap_marginal(law, model, *beta, *q, q + 200).unwrap();
        let q = model.range().map_or(*q, |r| r.min(*q));
        for n in q + 1..=q + 200 {
            let ratio = g.marginal[n - 1] / law.mass(n as u64);
            worst = worst.max((ratio / g.tail_constant - 1.0).abs());
        }
        let total: f64 = g.marginal.iter().sum::<f64>() + g.tail_mass;
        worst_norm = worst_norm.max((total - 1.0).abs());
    }
    report(
        11,
        "Gibbs marginal tail m([n]) = c·K(n)",
        worst <= 1e-12 && worst_norm <= 1e-12,
        format!("4 fixtures, max relative spread {worst:.1e}, |Σm − 1| ≤ {worst_norm:.1e}"),
    );
}

#[test]
fn criterion_12_monte_carlo() {
    let start = Instant::now();
    let law = RenewalLaw::zeta(0.5).unwrap();
    let model = CorrelationModel::finite(&[0.3, 0.1]).unwrap();
    let id = annealed_identity_check(&law, &model, 0.3, 0.0, 200, 10_000, 2024).unwrap();
    let single = CorrelationModel::finite(&[0.5]).unwrap();
    let mut consistent = true;
    let mut gaps = Vec::new();
    let mut strict = false;
    for beta in [0.0, 0.5, 1.0] {
        let j = jensen_gap(&law, &single, beta, 0.0, 500, 400, 7).unwrap();
        consistent &= j.consistent();
        if beta == 1.0 {
            strict = j.strictly_positive();
        }
        gaps.push(format!("β={beta}: {:.4}±{:.4}", j.gap, j.quenched.std_error));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        12,
        "Monte Carlo annealed identity and Jensen gap",
        id.z_score.abs() <= 4.0 && consistent && strict && secs < 300.0,
        format!(
            "z = {:.3} ({} replicas), Jensen gaps [{}], {secs:.1}s",
            id.z_score,
            id.replicas,
            gaps.join(", ")
        ),
    );
}

#[test]
fn criterion_13_constant_stability() {
    let (law, model) = correlated_fixture();
    let (fit, _) = correlated_fit();
    let lower = fit_exponent_at(&law, &model, 1.0, fit.q - 2, &exponent_grid()).unwrap();
    let a = lower.prefactor(2.0);
    let b = fit.prefactor(2.0);
    let rel = (b / a - 1.0).abs();
    report(
        13,
        "fitted constant stable under q → q+2",
        rel <= 0.02,
        format!("c(q={}) = {a:.6}, c(q={}) = {b:.6}, relative change {rel:.1e}", lower.q, fit.q),
    );
}
