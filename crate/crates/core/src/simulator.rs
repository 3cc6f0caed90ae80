//! Event-level Monte Carlo of the protocol and of a detector dead-time
//! timeline.
//!
//! Key-bit convention in the Z basis: for an announced coincidence in bins
//! `{i, j}` Alice's bit is 0 when her index is `min(i, j)`, Bob's bit is 0
//! when his index is `max(i, j)`. A party whose index is not among the
//! announced bins guesses a uniformly random bit.
//!
//! X rounds contribute to the error estimate only when the X basis is real
//! (dimension a power of two); otherwise the parity prediction is not
//! deterministic and they are counted but not sifted.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{self, RateBreakdown, RateUncertainty};
use crate::error::{Error, Result};
use crate::model::{
    build_basis, classify_event, expected_parity, BasisKind, BasisSet, Classification,
    DetectionEvent, DetectionMode, Encoding, ProtocolConfig,
};
use crate::stats::Estimate;
use crate::twophoton::{joint_outcomes, sample_phases, Party, PhotonState, DEFAULT_WORKERS};

/// Everything that happened in one protocol round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub alice_basis: BasisKind,
    pub bob_basis: BasisKind,
    pub alice_index: usize,
    pub bob_index: usize,
    pub event: DetectionEvent,
    pub sifted: bool,
    pub key_bit_alice: Option<u8>,
    pub key_bit_bob: Option<u8>,
    /// Parity error of a sifted X round.
    pub error_flag: Option<bool>,
}

/// Precomputed per-configuration state for drawing rounds.
#[derive(Debug, Clone)]
pub struct RoundSampler {
    config: ProtocolConfig,
    p_s: f64,
    z: BasisSet,
    x: BasisSet,
}

/// Photon-only part of a round, before dark counts.
struct PhotonOutcome {
    modes: Vec<DetectionMode>,
    bunched: bool,
}

impl RoundSampler {
    pub fn new(config: &ProtocolConfig) -> Result<Self> {
        config.validate()?;
        Ok(RoundSampler {
            config: *config,
            p_s: config.survival_prob()?,
            z: build_basis(config.dimension, BasisKind::Z)?,
            x: build_basis(config.dimension, BasisKind::X)?,
        })
    }

    pub fn survival_prob(&self) -> f64 {
        self.p_s
    }

    /// Whether X rounds can be checked against a deterministic parity.
    pub fn x_estimation_enabled(&self) -> bool {
        self.x.real
    }

    fn basis(&self, kind: BasisKind) -> &BasisSet {
        match kind {
            BasisKind::Z => &self.z,
            BasisKind::X => &self.x,
        }
    }

    fn photons<R: Rng + ?Sized>(
        &self,
        alice: &PhotonState,
        bob: &PhotonState,
        rng: &mut R,
    ) -> PhotonOutcome {
        let n = self.config.dimension;
        let a_alive = rng.random::<f64>() < self.p_s;
        let b_alive = rng.random::<f64>() < self.p_s;
        match (a_alive, b_alive) {
            (true, true) => {
                let noise = &self.config.noise;
                let (a, b) = if noise.sigma > 0.0 {
                    let pa = sample_phases(noise.phase_model, n, noise.sigma, rng);
                    let pb = sample_phases(noise.phase_model, n, noise.sigma, rng);
                    (alice.with_phases(&pa), bob.with_phases(&pb))
                } else {
                    (alice.clone(), bob.clone())
                };
                let indist = rng.random::<f64>() < noise.beta_sq;
                let joint = joint_outcomes(&a, &b, indist);
                let total: f64 = joint.iter().map(|t| t.2).sum();
                let mut u = rng.random::<f64>() * total;
                let mut pick = joint[joint.len() - 1];
                for t in &joint {
                    if u < t.2 {
                        pick = *t;
                        break;
                    }
                    u -= t.2;
                }
                let (m, k, _) = pick;
                if m == k {
                    PhotonOutcome {
                        modes: vec![DetectionMode::from_index(m)],
                        bunched: true,
                    }
                } else {
                    PhotonOutcome {
                        modes: vec![DetectionMode::from_index(m), DetectionMode::from_index(k)],
                        bunched: false,
                    }
                }
            }
            (true, false) | (false, true) => {
                let state = if a_alive { alice } else { bob };
                let mut u = rng.random::<f64>();
                let amps = state.amplitudes();
                let mut bin = n - 1;
                for (k, a) in amps.iter().enumerate() {
                    let p = a.norm_sqr();
                    if u < p {
                        bin = k;
                        break;
                    }
                    u -= p;
                }
                let port = u8::from(rng.random::<bool>());
                PhotonOutcome {
                    modes: vec![DetectionMode::new(bin, port)],
                    bunched: false,
                }
            }
            (false, false) => PhotonOutcome {
                modes: Vec::new(),
                bunched: false,
            },
        }
    }

    fn dark_clicks<R: Rng + ?Sized>(&self, modes: &mut Vec<DetectionMode>, rng: &mut R) {
        let p_dc = self.config.detector.dark_count;
        if p_dc > 0.0 {
            for idx in 0..2 * self.config.dimension {
                if rng.random::<f64>() < p_dc {
                    modes.push(DetectionMode::from_index(idx));
                }
            }
        }
    }

    /// Draws one full round: bases, states, photon transport, dark counts,
    /// Charlie's classification and sifting.
    pub fn run_round<R: Rng + ?Sized>(&self, rng: &mut R) -> RoundRecord {
        let n = self.config.dimension;
        let pick_basis = |rng: &mut R| {
            if rng.random::<f64>() < self.config.basis_prob {
                BasisKind::Z
            } else {
                BasisKind::X
            }
        };
        let alice_basis = pick_basis(rng);
        let bob_basis = pick_basis(rng);
        let alice_index = rng.random_range(0..n);
        let bob_index = rng.random_range(0..n);
        let alice = PhotonState::from_basis(self.basis(alice_basis), alice_index, Party::Alice);
        let bob = PhotonState::from_basis(self.basis(bob_basis), bob_index, Party::Bob);

        let photons = self.photons(&alice, &bob, rng);
        let mut clicked = photons.modes.clone();
        self.dark_clicks(&mut clicked, rng);
        clicked.sort_unstable();
        clicked.dedup();
        let mut classification = classify_event(&clicked);
        if classification == Classification::NoEvent
            && photons.bunched
            && clicked.as_slice() == photons.modes.as_slice()
        {
            classification = Classification::Bunched;
        }

        let mut record = RoundRecord {
            alice_basis,
            bob_basis,
            alice_index,
            bob_index,
            event: DetectionEvent {
                clicked,
                classification,
            },
            sifted: false,
            key_bit_alice: None,
            key_bit_bob: None,
            error_flag: None,
        };

        let Classification::ValidCoincidence { low, high, parity } = classification else {
            return record;
        };
        match (alice_basis, bob_basis) {
            (BasisKind::Z, BasisKind::Z) => {
                let bit = |index: usize, zero_at: usize, rng: &mut R| {
                    if index == low || index == high {
                        u8::from(index != zero_at)
                    } else {
                        u8::from(rng.random::<bool>())
                    }
                };
                record.key_bit_alice = Some(bit(alice_index, low, rng));
                record.key_bit_bob = Some(bit(bob_index, high, rng));
                record.sifted = true;
            }
            (BasisKind::X, BasisKind::X) if self.x.real => {
                let expected = expected_parity(
                    self.x.state(alice_index),
                    self.x.state(bob_index),
                    low,
                    high,
                );
                if let Some(ok) = expected.matches(parity) {
                    record.sifted = true;
                    record.error_flag = Some(!ok);
                }
            }
            _ => {}
        }
        record
    }
}

/// Draws a single round. Builds the bases on every call; use
/// [`RoundSampler`] for repeated rounds.
pub fn run_round<R: Rng + ?Sized>(config: &ProtocolConfig, rng: &mut R) -> Result<RoundRecord> {
    Ok(RoundSampler::new(config)?.run_round(rng))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Tally {
    rounds: u64,
    z_rounds: u64,
    x_rounds: u64,
    coincidences: u64,
    sifted_z: u64,
    sifted_x: u64,
    wrong_z: u64,
    wrong_x: u64,
}

impl Tally {
    fn add(&mut self, r: &RoundRecord) {
        self.rounds += 1;
        match (r.alice_basis, r.bob_basis) {
            (BasisKind::Z, BasisKind::Z) => self.z_rounds += 1,
            (BasisKind::X, BasisKind::X) => self.x_rounds += 1,
            _ => {}
        }
        if r.event.classification.is_valid() {
            self.coincidences += 1;
        }
        if r.sifted {
            match r.alice_basis {
                BasisKind::Z => {
                    self.sifted_z += 1;
                    if r.key_bit_alice != r.key_bit_bob {
                        self.wrong_z += 1;
                    }
                }
                BasisKind::X => {
                    self.sifted_x += 1;
                    if r.error_flag == Some(true) {
                        self.wrong_x += 1;
                    }
                }
            }
        }
    }

    fn merge(&mut self, o: &Tally) {
        self.rounds += o.rounds;
        self.z_rounds += o.z_rounds;
        self.x_rounds += o.x_rounds;
        self.coincidences += o.coincidences;
        self.sifted_z += o.sifted_z;
        self.sifted_x += o.sifted_x;
        self.wrong_z += o.wrong_z;
        self.wrong_x += o.wrong_x;
    }
}

/// Aggregate outcome of a simulated session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub rounds_total: u64,
    /// Rounds in which both parties chose Z.
    pub z_rounds: u64,
    /// Rounds in which both parties chose X.
    pub x_rounds: u64,
    /// Valid coincidences in any basis combination.
    pub coincidences: u64,
    pub sifted_z: u64,
    pub sifted_x: u64,
    pub wrong_z: u64,
    pub wrong_x: u64,
    pub eps_z_hat: Option<Estimate>,
    pub eps_x_hat: Option<Estimate>,
    pub x_estimation_enabled: bool,
    /// A basis had no sifted rounds, so its QBER is undefined.
    pub insufficient_statistics: bool,
    /// Threshold on `ε̂_x` that was applied.
    pub abort_threshold: f64,
    pub aborted: bool,
    /// `floor(sifted_z [1 - H(ε̂_x) - f H(ε̂_z)])`, at least zero.
    pub key_length: u64,
}

impl SessionStats {
    /// Sifted Z bits per Z-Z round, the empirical `R_p`.
    pub fn sifted_z_fraction(&self) -> Option<Estimate> {
        Estimate::binomial(self.sifted_z, self.z_rounds)
    }

    pub fn sifted_x_fraction(&self) -> Option<Estimate> {
        Estimate::binomial(self.sifted_x, self.x_rounds)
    }
}

/// Runs `rounds` rounds split over [`DEFAULT_WORKERS`] random streams.
///
/// The session aborts when `ε̂_x` exceeds `abort_threshold`. Without a
/// threshold it aborts when `ε̂_x` leaves no key given `ε̂_z`, see
/// [`analytics::zero_key_eps_x`].
pub fn run_session(
    config: &ProtocolConfig,
    rounds: u64,
    abort_threshold: Option<f64>,
    seed: u64,
) -> Result<SessionStats> {
    run_session_with_workers(config, rounds, abort_threshold, seed, DEFAULT_WORKERS)
}

/// As [`run_session`]; results are reproducible for a fixed seed and worker
/// count regardless of thread scheduling.
pub fn run_session_with_workers(
    config: &ProtocolConfig,
    rounds: u64,
    abort_threshold: Option<f64>,
    seed: u64,
    workers: usize,
) -> Result<SessionStats> {
    if rounds == 0 {
        return Err(Error::domain("need at least one round"));
    }
    if workers == 0 {
        return Err(Error::domain("need at least one worker"));
    }
    let sampler = RoundSampler::new(config)?;
    let w = workers as u64;
    let tallies: Vec<Tally> = (0..w)
        .into_par_iter()
        .map(|k| {
            let count = rounds / w + u64::from(k < rounds % w);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            let mut t = Tally::default();
            for _ in 0..count {
                t.add(&sampler.run_round(&mut rng));
            }
            t
        })
        .collect();
    let mut t = Tally::default();
    tallies.iter().for_each(|p| t.merge(p));

    let eps_z_hat = Estimate::binomial(t.wrong_z, t.sifted_z);
    let eps_x_hat = Estimate::binomial(t.wrong_x, t.sifted_x);
    let threshold = match (abort_threshold, eps_z_hat) {
        (Some(t), _) => t,
        (None, Some(ez)) => analytics::zero_key_eps_x(ez.value, config.ec_inefficiency)?,
        (None, None) => 0.5,
    };
    let aborted = eps_x_hat.is_some_and(|e| e.value > threshold);
    let key_length = match (eps_x_hat, eps_z_hat) {
        (Some(ex), Some(ez)) => {
            let frac = 1.0
                - analytics::binary_entropy(ex.value)?
                - config.ec_inefficiency * analytics::binary_entropy(ez.value)?;
            (t.sifted_z as f64 * frac).max(0.0).floor() as u64
        }
        _ => 0,
    };
    Ok(SessionStats {
        rounds_total: t.rounds,
        z_rounds: t.z_rounds,
        x_rounds: t.x_rounds,
        coincidences: t.coincidences,
        sifted_z: t.sifted_z,
        sifted_x: t.sifted_x,
        wrong_z: t.wrong_z,
        wrong_x: t.wrong_x,
        eps_z_hat,
        eps_x_hat,
        x_estimation_enabled: sampler.x_estimation_enabled(),
        insufficient_statistics: eps_z_hat.is_none() || eps_x_hat.is_none(),
        abort_threshold: threshold,
        aborted,
        key_length,
    })
}

/// Empirical counterpart of [`analytics::rate_breakdown`].
pub fn estimate_rates(stats: &SessionStats, config: &ProtocolConfig) -> Result<RateBreakdown> {
    if stats.aborted {
        return Err(Error::InsufficientStatistics(
            "session aborted: X-basis QBER above threshold".into(),
        ));
    }
    let (Some(ex), Some(ez)) = (stats.eps_x_hat, stats.eps_z_hat) else {
        let reason = if stats.x_estimation_enabled {
            "no sifted rounds in one basis".to_string()
        } else {
            format!(
                "X-basis error estimation unavailable for N = {} (no real X basis)",
                config.dimension
            )
        };
        return Err(Error::InsufficientStatistics(reason));
    };
    let (Some(rz), Some(rx)) = (stats.sifted_z_fraction(), stats.sifted_x_fraction()) else {
        return Err(Error::InsufficientStatistics("no rounds in one basis".into()));
    };
    let f_n = analytics::dephasing_factor(
        config.dimension,
        config.noise.sigma,
        config.noise.phase_model,
    )?;
    Ok(RateBreakdown {
        p_s: config.survival_prob()?,
        f_n,
        eps_x: ex.value,
        eps_z: ez.value,
        r_p_z: rz.value,
        r_p_x: rx.value,
        r: analytics::secret_rate(rz.value, ex.value, ez.value, config.ec_inefficiency)?,
        components: None,
        uncertainty: Some(RateUncertainty {
            eps_x: ex.std_err,
            eps_z: ez.std_err,
            r_p_z: rz.std_err,
            r_p_x: rx.std_err,
        }),
    })
}

/// Result of a dead-time timeline simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineStats {
    /// Qudits (pulse pairs) sent.
    pub pulses_sent: u64,
    /// Elapsed time slots of length `T_p`.
    pub slots: u64,
    /// Slots a detector stays dark after a click, `floor(τ_d / T_p)`.
    pub dead_slots: u64,
    /// Fraction of slots each detector spent dark.
    pub detector_dead_fraction: Vec<f64>,
    pub coincidences: u64,
    /// Elapsed time in units of `τ_d`.
    pub deadtime_windows: f64,
    /// Measured `N_raw`.
    pub raw_coincidences_per_deadtime: f64,
}

/// Slot-by-slot simulation of Z-basis key rounds with non-paralyzable
/// detector dead time: a detector that clicks is dark for the next
/// `floor(τ_d / T_p)` slots, and clicks arriving meanwhile are lost without
/// extending the dead period. Only registered clicks are classified.
pub fn simulate_deadtime_timeline(
    config: &ProtocolConfig,
    total_pulses: u64,
    seed: u64,
) -> Result<TimelineStats> {
    let sampler = RoundSampler::new(config)?;
    let tau = config.detector.dead_time_s;
    if !(tau > 0.0) {
        return Err(Error::domain("timeline simulation needs a positive dead time"));
    }
    if total_pulses == 0 {
        return Err(Error::domain("need at least one pulse"));
    }
    let n = config.dimension;
    let enc = config.encoding;
    let t_p = config.timing.pulse_sep_s;
    let dead_slots = (tau / t_p).floor() as u64;
    let slots_per_qudit = match enc {
        Encoding::Space => 1,
        Encoding::Time => n as u64,
    };
    let total_slots = total_pulses * slots_per_qudit;
    let n_det = enc.detector_count(n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ready_at = vec![0u64; n_det];
    let mut dead_total = vec![0u64; n_det];
    let mut coincidences = 0u64;
    let z = &sampler.z;

    for q in 0..total_pulses {
        let t0 = q * slots_per_qudit;
        let a = PhotonState::from_basis(z, rng.random_range(0..n), Party::Alice);
        let b = PhotonState::from_basis(z, rng.random_range(0..n), Party::Bob);
        let mut modes = sampler.photons(&a, &b, &mut rng).modes;
        sampler.dark_clicks(&mut modes, &mut rng);
        modes.sort_unstable();
        modes.dedup();
        // Sorted by bin, hence by slot in the time encoding.
        let mut registered = Vec::with_capacity(modes.len());
        for m in modes {
            let det = m.detector(enc);
            let t = match enc {
                Encoding::Space => t0,
                Encoding::Time => t0 + m.bin as u64,
            };
            if t >= ready_at[det] {
                ready_at[det] = t + 1 + dead_slots;
                dead_total[det] += dead_slots.min(total_slots - t - 1);
                registered.push(m);
            }
        }
        if classify_event(&registered).is_valid() {
            coincidences += 1;
        }
    }

    let windows = total_slots as f64 * t_p / tau;
    Ok(TimelineStats {
        pulses_sent: total_pulses,
        slots: total_slots,
        dead_slots,
        detector_dead_fraction: dead_total
            .iter()
            .map(|&d| d as f64 / total_slots as f64)
            .collect(),
        coincidences,
        deadtime_windows: windows,
        raw_coincidences_per_deadtime: coincidences as f64 / windows,
    })
}
