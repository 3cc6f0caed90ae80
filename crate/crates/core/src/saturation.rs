//! Detector dead-time (saturation) model.
//!
//! Dead time is non-paralyzable: after a click a detector stays dark for
//! `τ_d` whatever arrives meanwhile. With `n` pulses per dead time and a
//! per-pulse hit probability `P_hit`, a detector is alive with probability
//! `1 / (1 + n P_hit)` and the raw bits per dead time are
//! `n (N-1)/N P_s² P_alive²`, maximal at `n = 1/P_hit`.
//!
//! In the time encoding `n` counts qudit trains (`τ_d / (N T_p)`), the
//! per-train hit probability of each of the two detectors is `N` times the
//! per-pulse space value (≈ `P_s`), and the raw bits carry an extra factor
//! 1/2 because a detector cannot click twice within one train.

use serde::{Deserialize, Serialize};

use crate::analytics;
use crate::error::{Error, Result};
use crate::model::{Encoding, ProtocolConfig};

/// Per-detector hit probability per pulse (space) or per qudit train (time).
pub fn hit_prob(dimension: usize, p_s: f64, encoding: Encoding) -> Result<f64> {
    if dimension < 2 {
        return Err(Error::InvalidDimension(dimension));
    }
    if !(0.0..=1.0).contains(&p_s) {
        return Err(Error::domain(format!("P_s = {p_s} outside [0, 1]")));
    }
    let n = dimension as f64;
    let per_pulse =
        (2.0 * p_s * (1.0 - p_s) + p_s * p_s * (2.0 * n - 1.0) / n) / (2.0 * n);
    Ok(match encoding {
        Encoding::Space => per_pulse,
        Encoding::Time => n * per_pulse,
    })
}

/// `1 / (1 + n P_hit)`.
pub fn alive_prob(p_hit: f64, pulses_per_deadtime: f64) -> f64 {
    if p_hit <= 0.0 {
        return 1.0;
    }
    1.0 / (1.0 + pulses_per_deadtime * p_hit)
}

/// Number of independent detector exposures per dead time: pulses for the
/// space encoding, qudit trains for the time encoding.
pub fn exposures_per_deadtime(
    dimension: usize,
    dead_time_s: f64,
    pulse_sep_s: f64,
    encoding: Encoding,
) -> f64 {
    match encoding {
        Encoding::Space => dead_time_s / pulse_sep_s,
        Encoding::Time => dead_time_s / (dimension as f64 * pulse_sep_s),
    }
}

fn encoding_factor(encoding: Encoding) -> f64 {
    match encoding {
        Encoding::Space => 1.0,
        Encoding::Time => 0.5,
    }
}

/// Average raw bits exchanged during one dead time.
pub fn raw_bits_per_deadtime(
    dimension: usize,
    p_s: f64,
    dead_time_s: f64,
    pulse_sep_s: f64,
    encoding: Encoding,
) -> Result<f64> {
    if !(pulse_sep_s > 0.0) {
        return Err(Error::domain(format!("pulse separation {pulse_sep_s} s")));
    }
    if !(dead_time_s >= 0.0) {
        return Err(Error::domain(format!("dead time {dead_time_s} s")));
    }
    let p_hit = hit_prob(dimension, p_s, encoding)?;
    let n = dimension as f64;
    let m = exposures_per_deadtime(dimension, dead_time_s, pulse_sep_s, encoding);
    let alive = alive_prob(p_hit, m);
    Ok(encoding_factor(encoding) * m * (n - 1.0) / n * p_s * p_s * alive * alive)
}

/// Small-`P_s` maximum of the raw bits per second under saturation:
/// `P_s (N-1) / (4 τ_d)` (space) or `P_s (N-1) / (8 τ_d N)` (time).
pub fn closed_form_max(
    dimension: usize,
    p_s: f64,
    dead_time_s: f64,
    encoding: Encoding,
) -> Result<f64> {
    if !(dead_time_s > 0.0) {
        return Err(Error::domain("closed-form saturation maximum needs a positive dead time"));
    }
    let n = dimension as f64;
    Ok(match encoding {
        Encoding::Space => p_s * (n - 1.0) / (4.0 * dead_time_s),
        Encoding::Time => p_s * (n - 1.0) / (8.0 * dead_time_s * n),
    })
}

/// Best pulse separation found by [`optimize_pulse_spacing`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpacing {
    pub pulse_sep_s: f64,
    /// Raw bits per dead time at `pulse_sep_s`.
    pub n_raw: f64,
    /// The unconstrained optimum lies below the minimum separation.
    pub constrained: bool,
}

const GOLDEN_TOL: f64 = 1e-9;
const SEARCH_SPAN: f64 = 1e3;

/// Maximizes [`raw_bits_per_deadtime`] over `T_p ≥ T̃_p` by golden-section
/// search in `ln T_p` on `[T̃_p, 10³ τ_d]`.
pub fn optimize_pulse_spacing(
    dimension: usize,
    p_s: f64,
    dead_time_s: f64,
    min_pulse_sep_s: f64,
    encoding: Encoding,
) -> Result<PulseSpacing> {
    if !(min_pulse_sep_s > 0.0) {
        return Err(Error::domain(format!("minimum pulse separation {min_pulse_sep_s} s")));
    }
    let objective =
        |t: f64| raw_bits_per_deadtime(dimension, p_s, dead_time_s, t, encoding);
    let boundary = objective(min_pulse_sep_s)?;
    if hit_prob(dimension, p_s, encoding)? == 0.0 || dead_time_s == 0.0 {
        return Ok(PulseSpacing {
            pulse_sep_s: min_pulse_sep_s,
            n_raw: boundary,
            constrained: false,
        });
    }
    let lo0 = min_pulse_sep_s.ln();
    let hi0 = (dead_time_s * SEARCH_SPAN).ln();
    if hi0 <= lo0 {
        return Ok(PulseSpacing {
            pulse_sep_s: min_pulse_sep_s,
            n_raw: boundary,
            constrained: true,
        });
    }

    let f = |x: f64| objective(x.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo0, hi0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while (b - a) > GOLDEN_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let x = 0.5 * (a + b);
    let interior = f(x)?;
    if x - lo0 < 1e3 * GOLDEN_TOL || boundary >= interior {
        Ok(PulseSpacing {
            pulse_sep_s: min_pulse_sep_s,
            n_raw: boundary,
            constrained: true,
        })
    } else {
        Ok(PulseSpacing {
            pulse_sep_s: x.exp(),
            n_raw: interior,
            constrained: false,
        })
    }
}

/// Dead-time-limited operating point of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationResult {
    pub p_hit: f64,
    pub p_alive: f64,
    /// Raw bits per dead time at the chosen pulse separation.
    pub n_raw: f64,
    pub optimal_pulse_sep_s: f64,
    pub constrained: bool,
    /// Raw key rate `R` in bits/s.
    pub raw_rate: f64,
    /// `R / n_det`.
    pub raw_rate_per_detector: f64,
    pub n_det: usize,
}

/// Raw key rate with detector dead time.
///
/// `R = (N_raw^(M) / τ_d) · R_p / R_p^ideal`, where `R_p` is the
/// dead-time-free Z-basis rate from [`analytics`] and
/// `R_p^ideal = (N-1)/N P_s²` is the part of it already contained in
/// `N_raw`. This equals `R_p P_alive² / T_p` (space) and
/// `R_p P_alive² / (2 N T_p)` (time), and falls back to `R_p / T_p`
/// (space) or `R_p / (N T_p)` (time) when `τ_d = 0`.
pub fn rate_with_deadtime(config: &ProtocolConfig) -> Result<SaturationResult> {
    let rb = analytics::rate_breakdown(config)?;
    rate_with_deadtime_from(config, rb.p_s, rb.r_p_z)
}

pub(crate) fn rate_with_deadtime_from(
    config: &ProtocolConfig,
    p_s: f64,
    r_p: f64,
) -> Result<SaturationResult> {
    let n = config.dimension;
    let enc = config.encoding;
    let tau = config.detector.dead_time_s;
    let n_det = enc.detector_count(n);
    let p_hit = hit_prob(n, p_s, enc)?;
    let slots = match enc {
        Encoding::Space => 1.0,
        Encoding::Time => n as f64,
    };

    if tau == 0.0 {
        let period = config.timing.pulse_sep_s.max(config.timing.min_pulse_sep_s) * slots;
        let raw_rate = r_p / period;
        return Ok(SaturationResult {
            p_hit,
            p_alive: 1.0,
            n_raw: 0.0,
            optimal_pulse_sep_s: period / slots,
            constrained: false,
            raw_rate,
            raw_rate_per_detector: raw_rate / n_det as f64,
            n_det,
        });
    }

    let opt = optimize_pulse_spacing(n, p_s, tau, config.timing.min_pulse_sep_s, enc)?;
    let m = exposures_per_deadtime(n, tau, opt.pulse_sep_s, enc);
    let p_alive = alive_prob(p_hit, m);
    let raw_rate =
        encoding_factor(enc) * r_p * p_alive * p_alive / (slots * opt.pulse_sep_s);
    Ok(SaturationResult {
        p_hit,
        p_alive,
        n_raw: opt.n_raw,
        optimal_pulse_sep_s: opt.pulse_sep_s,
        constrained: opt.constrained,
        raw_rate,
        raw_rate_per_detector: raw_rate / n_det as f64,
        n_det,
    })
}

/// `N_opt = 2 + P_s τ_d / T̃_p`, as a real number.
pub fn optimal_dimension(p_s: f64, dead_time_s: f64, min_pulse_sep_s: f64) -> f64 {
    if dead_time_s <= 0.0 {
        return 2.0;
    }
    2.0 + p_s * dead_time_s / min_pulse_sep_s
}

/// `R_det` for every dimension in `2..=max_dimension`, all other parameters
/// taken from `config`.
pub fn dimension_sweep(
    config: &ProtocolConfig,
    max_dimension: usize,
) -> Result<Vec<(usize, SaturationResult)>> {
    (2..=max_dimension)
        .map(|n| rate_with_deadtime(&config.with_dimension(n)).map(|r| (n, r)))
        .collect()
}

/// Dimension with the largest per-detector raw rate in a sweep.
pub fn best_dimension(sweep: &[(usize, SaturationResult)]) -> Option<usize> {
    sweep
        .iter()
        .max_by(|a, b| {
            a.1.raw_rate_per_detector
                .total_cmp(&b.1.raw_rate_per_detector)
        })
        .map(|(n, _)| *n)
}
