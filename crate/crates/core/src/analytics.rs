//! Closed-form event probabilities, QBERs and key rates without dead time.
//!
//! All per-use rates are per pulse pair with both parties already in the
//! relevant basis; the basis-choice factor `P_b²` is left out (efficient
//! basis choice, `P_b → 1`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PhaseModel, ProtocolConfig};

/// `P_s = η · 10^(-α₀ d / 10)`.
pub fn survival_prob(efficiency: f64, loss_db_per_km: f64, distance_km: f64) -> Result<f64> {
    if !(efficiency > 0.0 && efficiency <= 1.0) {
        return Err(Error::domain(format!("efficiency {efficiency} outside (0, 1]")));
    }
    if !(loss_db_per_km >= 0.0) || !(distance_km >= 0.0) {
        return Err(Error::domain(format!(
            "negative loss ({loss_db_per_km} dB/km) or distance ({distance_km} km)"
        )));
    }
    Ok(efficiency * 10f64.powf(-loss_db_per_km * distance_km / 10.0))
}

/// Binary entropy in bits, `H(0) = H(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("binary entropy argument {x} outside [0, 1]")));
    }
    let term = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    Ok(term(x) + term(1.0 - x))
}

/// Sum over bin pairs `i < j` of the mean interference visibility
/// `<cos(θ_i^A - θ_j^A - θ_i^B + θ_j^B)>`.
pub fn dephasing_factor(dimension: usize, sigma: f64, model: PhaseModel) -> Result<f64> {
    if dimension < 2 {
        return Err(Error::InvalidDimension(dimension));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::domain(format!("sigma {sigma}")));
    }
    let n = dimension as f64;
    let s2 = sigma * sigma;
    let pairs = n * (n - 1.0) / 2.0;
    if s2 == 0.0 {
        return Ok(pairs);
    }
    Ok(match model {
        PhaseModel::SpaceHomogeneous => pairs * (-s2).exp(),
        PhaseModel::TimeWhite => {
            // [N(1 - e^{-σ²}) + e^{-Nσ²} - 1] / [2 sinh(σ²/2)]²
            let num = -n * (-s2).exp_m1() + (-n * s2).exp_m1();
            let den = 2.0 * (s2 / 2.0).sinh();
            num / (den * den)
        }
        PhaseModel::TimeDrift => (1..dimension)
            .map(|k| {
                let k = k as f64;
                (n - k) * (-k * k * s2).exp()
            })
            .sum(),
    })
}

/// Two-photon X-basis outcome probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XOutcomeProbs {
    pub f_n: f64,
    /// Correct-parity cross-bin coincidence.
    pub p_good: f64,
    /// Wrong-parity cross-bin coincidence.
    pub p_bad: f64,
    /// `(1 + |β|²)/N`, kept in the form used by the dark-count cross terms.
    pub p_double: f64,
}

pub fn x_outcome_probs(dimension: usize, beta_sq: f64, f_n: f64) -> Result<XOutcomeProbs> {
    if dimension < 2 {
        return Err(Error::InvalidDimension(dimension));
    }
    if !(0.0..=1.0).contains(&beta_sq) {
        return Err(Error::domain(format!("|beta|^2 = {beta_sq}")));
    }
    let n = dimension as f64;
    let max_f = n * (n - 1.0) / 2.0;
    if !(f_n >= 0.0 && f_n <= max_f * (1.0 + 1e-12)) {
        return Err(Error::domain(format!("f_N = {f_n} outside [0, {max_f}]")));
    }
    let base = n * (n - 1.0);
    let shift = 2.0 * beta_sq * f_n;
    Ok(XOutcomeProbs {
        f_n,
        p_good: (base + shift) / (2.0 * n * n),
        p_bad: (base - shift) / (2.0 * n * n),
        p_double: (1.0 + beta_sq) / n,
    })
}

/// Z-basis key-producing events per pulse pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZEventProbs {
    /// No photon arrives, two dark counts.
    pub p_rand0: f64,
    /// One photon and one dark count.
    pub p_rand1: f64,
    /// Both photons detected in different bins.
    pub p_correct2: f64,
    /// Bunched photons plus a dark count in another bin.
    pub p_wrong2: f64,
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} = {p} outside [0, 1]")))
    }
}

pub fn z_event_probs(dimension: usize, p_s: f64, p_dc: f64) -> Result<ZEventProbs> {
    if dimension < 2 {
        return Err(Error::InvalidDimension(dimension));
    }
    check_prob("P_s", p_s)?;
    check_prob("P_dc", p_dc)?;
    let n = dimension as f64;
    let frac = (n - 1.0) / n;
    let quiet = (1.0 - p_dc).powi(2 * dimension as i32 - 2);
    Ok(ZEventProbs {
        p_rand0: 4.0 * frac * (1.0 - p_s).powi(2) * p_dc * p_dc * quiet,
        p_rand1: 4.0 * frac * p_s * (1.0 - p_s) * p_dc * quiet,
        p_correct2: frac * p_s * p_s * quiet,
        p_wrong2: 2.0 * frac * p_s * p_s * p_dc * quiet,
    })
}

/// Returns `(ε_z, R_p)`; a random bit counts as half an error.
pub fn qber_z(probs: &ZEventProbs) -> Result<(f64, f64)> {
    let random = probs.p_rand0 + probs.p_rand1;
    let rate = random + probs.p_correct2 + probs.p_wrong2;
    if rate <= 0.0 {
        return Err(Error::UndefinedQber("Z-basis key"));
    }
    Ok(((0.5 * random + probs.p_wrong2) / rate, rate))
}

/// Correct- and wrong-parity X-basis coincidences per pulse pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XEventProbs {
    pub correct: f64,
    pub wrong: f64,
}

pub fn x_event_probs(
    dimension: usize,
    p_s: f64,
    p_dc: f64,
    outcomes: &XOutcomeProbs,
) -> Result<XEventProbs> {
    if dimension < 2 {
        return Err(Error::InvalidDimension(dimension));
    }
    check_prob("P_s", p_s)?;
    check_prob("P_dc", p_dc)?;
    let n = dimension as f64;
    let quiet = (1.0 - p_dc).powi(2 * dimension as i32 - 2);
    let none = (1.0 - p_s).powi(2) * n * (n - 1.0) * p_dc * p_dc * quiet;
    let one = 2.0 * p_s * (1.0 - p_s) * (n - 1.0) * p_dc * quiet;
    let two = p_s * p_s * quiet;
    let cross = (n - 1.0) * p_dc * outcomes.p_double;
    Ok(XEventProbs {
        correct: none + one + two * (outcomes.p_good + cross),
        wrong: none + one + two * (outcomes.p_bad + cross),
    })
}

/// Returns `(ε_x, R_p,x)`.
pub fn qber_x(correct: f64, wrong: f64) -> Result<(f64, f64)> {
    if !(correct >= 0.0 && wrong >= 0.0) {
        return Err(Error::domain(format!("negative X totals ({correct}, {wrong})")));
    }
    let total = correct + wrong;
    if total <= 0.0 {
        return Err(Error::UndefinedQber("X-basis coincidence"));
    }
    Ok((wrong / total, total))
}

/// `r = max(0, R [1 - H(ε_x) - f H(ε_z)])`.
pub fn secret_rate(raw_rate: f64, eps_x: f64, eps_z: f64, inefficiency: f64) -> Result<f64> {
    if !(raw_rate >= 0.0) {
        return Err(Error::domain(format!("raw rate {raw_rate} < 0")));
    }
    if !(inefficiency >= 1.0) {
        return Err(Error::domain(format!("inefficiency {inefficiency} < 1")));
    }
    let frac = 1.0 - binary_entropy(eps_x)? - inefficiency * binary_entropy(eps_z)?;
    Ok((raw_rate * frac).max(0.0))
}

/// Intermediate closed-form probabilities behind a [`RateBreakdown`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventComponents {
    pub z: ZEventProbs,
    pub x_outcomes: XOutcomeProbs,
    pub x_events: XEventProbs,
}

/// Standard errors of an empirical [`RateBreakdown`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateUncertainty {
    pub eps_x: f64,
    pub eps_z: f64,
    pub r_p_z: f64,
    pub r_p_x: f64,
}

/// QBERs and per-use rates of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBreakdown {
    pub p_s: f64,
    pub f_n: f64,
    pub eps_x: f64,
    pub eps_z: f64,
    /// Sifted Z-basis key bits per pulse pair.
    pub r_p_z: f64,
    /// X-basis coincidences per pulse pair.
    pub r_p_x: f64,
    /// Secret bits per pulse pair, clamped at zero.
    pub r: f64,
    /// Present for closed-form results.
    pub components: Option<EventComponents>,
    /// Present for Monte Carlo estimates.
    pub uncertainty: Option<RateUncertainty>,
}

/// Dead-time-free rates for `config`.
pub fn rate_breakdown(config: &ProtocolConfig) -> Result<RateBreakdown> {
    config.validate()?;
    let n = config.dimension;
    let p_s = config.survival_prob()?;
    let p_dc = config.detector.dark_count;
    let f_n = dephasing_factor(n, config.noise.sigma, config.noise.phase_model)?;
    let x_outcomes = x_outcome_probs(n, config.noise.beta_sq, f_n)?;
    let z = z_event_probs(n, p_s, p_dc)?;
    let (eps_z, r_p_z) = qber_z(&z)?;
    let x_events = x_event_probs(n, p_s, p_dc, &x_outcomes)?;
    let (eps_x, r_p_x) = qber_x(x_events.correct, x_events.wrong)?;
    let r = secret_rate(r_p_z, eps_x, eps_z, config.ec_inefficiency)?;
    Ok(RateBreakdown {
        p_s,
        f_n,
        eps_x,
        eps_z,
        r_p_z,
        r_p_x,
        r,
        components: Some(EventComponents {
            z,
            x_outcomes,
            x_events,
        }),
        uncertainty: None,
    })
}

/// Largest X-basis QBER that still leaves a key, the root of
/// `1 - H(ε_x) - f H(ε_z) = 0` in `[0, 1/2]`. Returns 0 when no key is
/// possible at any `ε_x`.
pub fn zero_key_eps_x(eps_z: f64, inefficiency: f64) -> Result<f64> {
    let budget = 1.0 - inefficiency * binary_entropy(eps_z)?;
    if budget <= 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if binary_entropy(mid)? < budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// QBER at which `1 - 2 H(ε) = 0` (about 11%): the largest common error
/// rate in both bases that still leaves a key with `f = 1`.
pub fn entropy_threshold() -> f64 {
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 2.0 * binary_entropy(mid).unwrap() < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
