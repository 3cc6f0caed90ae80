//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.
//!
//! Run with `cargo test -p mdiqkd --test acceptance -- --nocapture`.

use mdiqkd::analytics::{self, rate_breakdown};
use mdiqkd::model::{build_basis, expected_parity, BasisKind, ExpectedParity, Parity};
use mdiqkd::saturation::{self, closed_form_max, optimize_pulse_spacing};
use mdiqkd::simulator::{run_session, simulate_deadtime_timeline};
use mdiqkd::stats::binomial_z;
use mdiqkd::twophoton::{network_output, sample_categories, Party, PhotonState};
use mdiqkd::{Encoding, PhaseModel, ProtocolConfig};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, Discrete, DiscreteCDF};

const TAU_D: f64 = 20e-9;
const Z_MAX: f64 = 3.0;
/// Two-sided tail probability of a 3-sigma normal deviation.
const P_MIN: f64 = 0.0027;

/// Exact two-sided binomial p-value of observing `k` in `n` trials.
fn binomial_p_value(k: u64, n: u64, p: f64) -> f64 {
    let b = Binomial::new(p, n).unwrap();
    let lower = b.cdf(k);
    let upper = 1.0 - b.cdf(k) + b.pmf(k);
    (2.0 * lower.min(upper)).min(1.0)
}

fn report(id: u32, title: &str, pass: bool, detail: &str) {
    println!(
        "criterion {id:>2} {:<4} {title}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id} failed: {detail}");
}

fn calibration_config(n: usize, enc: Encoding, sigma: f64) -> ProtocolConfig {
    let mut c = ProtocolConfig::reference(n, enc);
    c.detector.dark_count = 0.0;
    c.noise.beta_sq = 1.0;
    c.noise.sigma = sigma;
    c
}

#[test]
fn criterion_01_sigma_calibration() {
    const TOL: f64 = 0.001;
    let space = rate_breakdown(&calibration_config(2, Encoding::Space, 0.325))
        .unwrap()
        .eps_x;
    let mut time_cfg = calibration_config(2, Encoding::Time, 0.175);
    time_cfg.noise.phase_model = PhaseModel::TimeWhite;
    let time = rate_breakdown(&time_cfg).unwrap().eps_x;
    let pass = (space - 0.050).abs() <= TOL && (time - 0.015).abs() <= TOL;
    report(
        1,
        "sigma calibration",
        pass,
        &format!("eps_x space {space:.5} (target 0.050), time {time:.5} (target 0.015), tol {TOL}"),
    );
}

#[test]
fn criterion_02_sifting_advantage() {
    const TOL: f64 = 1e-12;
    let mut cfg = ProtocolConfig::reference(2, Encoding::Space);
    cfg.detector.dark_count = 0.0;
    let base = rate_breakdown(&cfg).unwrap().r_p_z;
    let mut worst: f64 = 0.0;
    for n in 2..=16 {
        let r = rate_breakdown(&cfg.with_dimension(n)).unwrap().r_p_z;
        let nf = n as f64;
        let want = 2.0 * (nf - 1.0) / nf;
        worst = worst.max((r / base - want).abs());
    }
    report(
        2,
        "sifting advantage",
        worst <= TOL,
        &format!("max |R_p(N)/R_p(2) - 2(N-1)/N| over N=2..16 = {worst:.2e}, tol {TOL:.0e}"),
    );
}

#[test]
fn criterion_03_distinguishability_floor() {
    const TOL: f64 = 1e-12;
    const ROUNDS: u64 = 1_000_000;
    let floor_cfg = |n: usize| {
        let mut c = ProtocolConfig::reference(n, Encoding::Space);
        c.detector.dark_count = 0.0;
        c.noise.sigma = 0.0;
        c.noise.beta_sq = 0.85;
        c
    };
    let mut worst: f64 = 0.0;
    for n in [2, 3, 4, 8] {
        worst = worst.max((rate_breakdown(&floor_cfg(n)).unwrap().eps_x - 0.075).abs());
    }
    // Monte Carlo needs a real X basis, so N = 3 is checked analytically only.
    let mut zs = Vec::new();
    for n in [2, 4, 8] {
        let mut c = floor_cfg(n);
        c.channel.detector_efficiency = 1.0;
        let s = run_session(&c, ROUNDS, Some(0.5), 300 + n as u64).unwrap();
        zs.push((n, binomial_z(s.wrong_x, s.sifted_x, 0.075).unwrap(), s.eps_x_hat.unwrap().value));
    }
    let mc_ok = zs.iter().all(|(_, z, _)| z.abs() <= Z_MAX);
    let detail = format!(
        "analytic max |eps_x - 0.075| = {worst:.1e} (tol {TOL:.0e}); MC {}",
        zs.iter()
            .map(|(n, z, e)| format!("N={n} eps {e:.5} z {z:+.2}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    report(3, "distinguishability floor", worst <= TOL && mc_ok, &detail);
}

#[test]
fn criterion_04_saturation_closed_forms() {
    let mut lines = Vec::new();
    let mut pass = true;
    for enc in [Encoding::Space, Encoding::Time] {
        for (p_s, tol) in [(0.01, 0.005), (0.2, 0.05)] {
            let mut worst: f64 = 0.0;
            for n in [2, 4, 8, 16] {
                let opt = optimize_pulse_spacing(n, p_s, TAU_D, 1e-18, enc).unwrap();
                let numeric = opt.n_raw / TAU_D;
                let closed = closed_form_max(n, p_s, TAU_D, enc).unwrap();
                worst = worst.max((closed / numeric - 1.0).abs());
            }
            pass &= worst <= tol + 1e-12;
            lines.push(format!("{enc} P_s={p_s}: max rel dev {:.6}% (tol {}%)", worst * 100.0, tol * 100.0));
        }
    }
    report(4, "saturation closed forms", pass, &lines.join("; "));
}

#[test]
fn criterion_05_optimal_dimension() {
    let mut pass = true;
    let mut lines = Vec::new();
    for (ratio, target) in [(100.0, 22usize), (20.0, 6)] {
        for enc in [Encoding::Space, Encoding::Time] {
            let mut cfg = ProtocolConfig::reference(2, enc);
            cfg.channel.detector_efficiency = 0.2;
            cfg.detector.dead_time_s = TAU_D;
            cfg.timing.min_pulse_sep_s = TAU_D / ratio;
            cfg.timing.pulse_sep_s = TAU_D / ratio;
            let sweep = saturation::dimension_sweep(&cfg, 80).unwrap();
            let best = saturation::best_dimension(&sweep).unwrap();
            if enc == Encoding::Space {
                pass &= best.abs_diff(target) <= 2;
            }
            lines.push(format!("{enc} tau/T={ratio}: argmax N = {best}"));
        }
    }
    // The time-encoding argmax is printed but not checked.
    report(
        5,
        "optimal dimension",
        pass,
        &format!("{} (space targets 22 and 6, +-2)", lines.join("; ")),
    );
}

fn random_state(n: usize, party: Party, rng: &mut ChaCha8Rng) -> PhotonState {
    let mut v: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
    PhotonState::new(v, party).unwrap()
}

#[test]
fn criterion_06_oracle_normalization_and_parity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_mass: f64 = 0.0;
    for n in 2..=8 {
        for _ in 0..100 {
            let a = random_state(n, Party::Alice, &mut rng);
            let b = random_state(n, Party::Bob, &mut rng);
            for indist in [true, false] {
                let d = network_output(&a, &b, indist).unwrap();
                worst_mass = worst_mass.max((d.total() - 1.0).abs());
            }
        }
    }
    let mut forbidden: f64 = 0.0;
    let mut checked = 0;
    for n in 2..=8 {
        let x = build_basis(n, BasisKind::X).unwrap();
        for ia in 0..n {
            for ib in 0..n {
                let a = PhotonState::from_basis(&x, ia, Party::Alice);
                let b = PhotonState::from_basis(&x, ib, Party::Bob);
                let d = network_output(&a, &b, true).unwrap();
                for i in 0..n {
                    for j in (i + 1)..n {
                        let bad = match expected_parity(x.state(ia), x.state(ib), i, j) {
                            ExpectedParity::Plus => Parity::Minus,
                            ExpectedParity::Minus => Parity::Plus,
                            ExpectedParity::Indeterminate => continue,
                        };
                        forbidden = forbidden.max(d.cross_bin(i, j, bad));
                        checked += 1;
                    }
                }
            }
        }
    }
    let pass = worst_mass <= 1e-9 && forbidden <= 1e-12;
    report(
        6,
        "oracle normalization and parity",
        pass,
        &format!(
            "max |mass - 1| = {worst_mass:.1e} (tol 1e-9); max forbidden-parity mass {forbidden:.1e} over {checked} determinate subspaces"
        ),
    );
}

#[test]
fn criterion_07_oracle_vs_analytics() {
    const TRIALS: u64 = 1_000_000;
    let mut worst: f64 = 0.0;
    let mut fails = Vec::new();
    let mut seed = 700;
    for n in [2, 4, 8] {
        let x = build_basis(n, BasisKind::X).unwrap();
        let a = PhotonState::from_basis(&x, 0, Party::Alice);
        let b = PhotonState::from_basis(&x, n - 1, Party::Bob);
        for (sigma, model) in [(0.175, PhaseModel::TimeWhite), (0.325, PhaseModel::SpaceHomogeneous)] {
            for beta_sq in [0.85, 1.0] {
                let noise = mdiqkd::NoiseParams {
                    sigma,
                    beta_sq,
                    phase_model: model,
                };
                seed += 1;
                let s = sample_categories(&a, &b, &noise, TRIALS, seed).unwrap();
                let f_n = analytics::dephasing_factor(n, sigma, model).unwrap();
                let xo = analytics::x_outcome_probs(n, beta_sq, f_n).unwrap();
                for (z, what) in [
                    (s.correct.z_score(xo.p_good), "P_good"),
                    (s.wrong.z_score(xo.p_bad), "P_bad"),
                ] {
                    worst = worst.max(z.abs());
                    if z.abs() > Z_MAX {
                        fails.push(format!("N={n} sigma={sigma} beta2={beta_sq} {what} z={z:.2}"));
                    }
                }
            }
        }
    }
    report(
        7,
        "oracle vs analytics",
        fails.is_empty(),
        &format!("24 comparisons, max |z| = {worst:.2} (limit {Z_MAX}) {}", fails.join("; ")),
    );
}

#[test]
fn criterion_08_monte_carlo_vs_analytics() {
    const ROUNDS: u64 = 1_000_000;
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    let mut undefined = Vec::new();
    let mut fails = Vec::new();
    let mut exact = Vec::new();
    let mut seed = 800;
    for enc in [Encoding::Space, Encoding::Time] {
        for n in [2, 4, 8] {
            for d in [0.0, 100.0] {
                let cfg = ProtocolConfig::reference(n, enc).with_distance(d);
                seed += 1;
                let s = run_session(&cfg, ROUNDS, Some(0.5), seed).unwrap();
                let rb = rate_breakdown(&cfg).unwrap();
                let checks = [
                    ("eps_x", s.wrong_x, s.sifted_x, rb.eps_x),
                    ("eps_z", s.wrong_z, s.sifted_z, rb.eps_z),
                    ("sifted_z", s.sifted_z, s.z_rounds, rb.r_p_z),
                ];
                for (what, k, trials, p) in checks {
                    let label = format!("{enc} N={n} d={d}");
                    if trials == 0 {
                        undefined.push(format!("{label} {what}"));
                        continue;
                    }
                    let z = binomial_z(k, trials, p).unwrap();
                    compared += 1;
                    worst = worst.max(z.abs());
                    if z.abs() > Z_MAX {
                        let pv = binomial_p_value(k, trials, p);
                        let line = format!(
                            "{label} {what} {k}/{trials} vs {p:.3e} z={z:.2} exact p={pv:.3}"
                        );
                        if pv >= P_MIN {
                            exact.push(line);
                        } else {
                            fails.push(line);
                        }
                    }
                }
            }
        }
    }
    let mut detail = format!("{compared} comparisons, max |z| = {worst:.2} (limit {Z_MAX})");
    if !undefined.is_empty() {
        detail.push_str(&format!(
            "; undefined for lack of sifted rounds: {}",
            undefined.join(", ")
        ));
    }
    if !exact.is_empty() {
        detail.push_str(&format!(
            "; low-count cells within exact binomial 3-sigma tail (p >= {P_MIN}): {}",
            exact.join("; ")
        ));
    }
    if !fails.is_empty() {
        detail.push_str(&format!("; failing: {}", fails.join("; ")));
    }
    report(8, "Monte Carlo vs analytics", fails.is_empty(), &detail);
}

fn log_slope(cfg: &ProtocolConfig, d0: f64, d1: f64) -> f64 {
    let rate = |d: f64| {
        saturation::rate_with_deadtime(&cfg.with_distance(d))
            .unwrap()
            .raw_rate
            .log10()
    };
    (rate(d1) - rate(d0)) / (d1 - d0)
}

#[test]
fn criterion_09_three_regimes() {
    const TOL: f64 = 0.10;
    let alpha = mdiqkd::model::DEFAULT_LOSS_DB_PER_KM;
    let mut pass = true;
    let mut lines = Vec::new();

    // Saturated: space encoding at short distance, optimum pulse spacing inside the range.
    let sat_cfg = ProtocolConfig::reference(2, Encoding::Space);
    let s_sat = log_slope(&sat_cfg, 0.0, 20.0);
    let want_sat = -alpha / 10.0;
    pass &= (s_sat / want_sat - 1.0).abs() <= TOL;
    lines.push(format!("saturated slope {s_sat:.5} vs {want_sat:.5}"));

    // Unsaturated: pulse spacing pinned at the minimum, P_s well above P_dc.
    let mut unsat_worst: f64 = 0.0;
    for enc in [Encoding::Space, Encoding::Time] {
        for n in [2, 3, 4, 8] {
            let cfg = ProtocolConfig::reference(n, enc);
            let s = log_slope(&cfg, 100.0, 150.0);
            unsat_worst = unsat_worst.max((s / (-2.0 * alpha / 10.0) - 1.0).abs());
        }
    }
    pass &= unsat_worst <= TOL;
    lines.push(format!(
        "unsaturated slope max rel dev {:.2}% vs {:.3}",
        unsat_worst * 100.0,
        -2.0 * alpha / 10.0
    ));

    // Secret rate: non-increasing in distance and zero beyond a finite cutoff.
    for enc in [Encoding::Space, Encoding::Time] {
        for n in [2, 3, 4, 8] {
            let cfg = ProtocolConfig::reference(n, enc);
            let mut prev = f64::INFINITY;
            let mut cutoff = None;
            let mut monotone = true;
            for step in 0..=600 {
                let d = step as f64;
                let c = cfg.with_distance(d);
                let rb = rate_breakdown(&c).unwrap();
                let sat = saturation::rate_with_deadtime(&c).unwrap();
                let r = sat.raw_rate * rb.r / rb.r_p_z;
                monotone &= r <= prev * (1.0 + 1e-12);
                prev = r;
                if r == 0.0 && cutoff.is_none() {
                    cutoff = Some(d);
                }
            }
            pass &= monotone && cutoff.is_some();
            lines.push(format!(
                "{enc} N={n} r=0 from {}",
                cutoff.map_or("never".into(), |d| format!("{d} km"))
            ));
        }
    }
    report(9, "three-regime shape", pass, &lines.join("; "));
}

#[test]
fn criterion_10_deadtime_timeline() {
    const TOL: f64 = 0.10;
    const PULSES: u64 = 1_000_000;
    let n = 4;
    let p_s = 0.2;
    let p_hit = saturation::hit_prob(n, p_s, Encoding::Space).unwrap();
    let mut cfg = ProtocolConfig::ideal(n, Encoding::Space);
    cfg.channel.detector_efficiency = p_s;
    cfg.detector.dead_time_s = TAU_D;
    cfg.timing.pulse_sep_s = TAU_D * p_hit;
    cfg.timing.min_pulse_sep_s = cfg.timing.pulse_sep_s;
    let predicted =
        saturation::raw_bits_per_deadtime(n, p_s, TAU_D, cfg.timing.pulse_sep_s, Encoding::Space)
            .unwrap();
    let t = simulate_deadtime_timeline(&cfg, PULSES, 10).unwrap();
    let dev = t.raw_coincidences_per_deadtime / predicted - 1.0;
    let pass = dev.abs() <= TOL && t.deadtime_windows >= 1e4;
    report(
        10,
        "dead-time timeline",
        pass,
        &format!(
            "N_raw measured {:.4} vs predicted {predicted:.4} ({:+.2}%, tol {}%) over {:.0} windows",
            t.raw_coincidences_per_deadtime,
            dev * 100.0,
            TOL * 100.0,
            t.deadtime_windows
        ),
    );
}
