//! Domain types, basis construction and classification of Charlie's
//! announcements.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical degree of freedom carrying the qudit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// N spatial paths, one beam splitter and two detectors per path.
    Space,
    /// N time slots through a single beam splitter with two detectors.
    Time,
}

impl Encoding {
    /// Number of single-photon detectors Charlie operates.
    pub fn detector_count(self, dimension: usize) -> usize {
        match self {
            Encoding::Space => 2 * dimension,
            Encoding::Time => 2,
        }
    }

    /// Phase-noise model conventionally paired with this encoding.
    pub fn default_phase_model(self) -> PhaseModel {
        match self {
            Encoding::Space => PhaseModel::SpaceHomogeneous,
            Encoding::Time => PhaseModel::TimeWhite,
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Encoding::Space => "space",
            Encoding::Time => "time",
        })
    }
}

/// Statistics of the random channel phases `θ_i` picked up by each bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseModel {
    /// Every relative phase `θ_i - θ_j` has variance `σ²`.
    #[serde(alias = "space")]
    SpaceHomogeneous,
    /// White noise between consecutive slots: variance `|i-j| σ²`.
    #[serde(alias = "white")]
    TimeWhite,
    /// Slowly drifting interferometer: variance `|i-j|² σ²`.
    #[serde(alias = "drift")]
    TimeDrift,
}

impl std::str::FromStr for Encoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "space" => Ok(Encoding::Space),
            "time" => Ok(Encoding::Time),
            other => Err(Error::Usage(format!(
                "unknown encoding '{other}' (expected space or time)"
            ))),
        }
    }
}

impl std::str::FromStr for PhaseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "space" | "space-homogeneous" => Ok(PhaseModel::SpaceHomogeneous),
            "time-white" | "white" => Ok(PhaseModel::TimeWhite),
            "time-drift" | "drift" => Ok(PhaseModel::TimeDrift),
            other => Err(Error::Usage(format!(
                "unknown phase model '{other}' (expected space, time-white or time-drift)"
            ))),
        }
    }
}

impl fmt::Display for PhaseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhaseModel::SpaceHomogeneous => "space",
            PhaseModel::TimeWhite => "time-white",
            PhaseModel::TimeDrift => "time-drift",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Distance from each party to Charlie, in km.
    pub distance_km: f64,
    /// Fiber attenuation in dB/km.
    pub loss_db_per_km: f64,
    /// Detector efficiency η.
    pub detector_efficiency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Phase-noise scale σ in radians.
    pub sigma: f64,
    /// Mode overlap |β|² between Alice's and Bob's photons.
    pub beta_sq: f64,
    pub phase_model: PhaseModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Dark-count probability per detector per gate.
    pub dark_count: f64,
    /// Non-paralyzable dead time in seconds.
    pub dead_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingParams {
    /// Operating pulse separation `T_p` in seconds.
    pub pulse_sep_s: f64,
    /// Shortest pulse separation the sources support, `T̃_p`.
    pub min_pulse_sep_s: f64,
}

impl TimingParams {
    /// Pulses sent per dead time, `n = τ_d / T_p`.
    pub fn pulses_per_deadtime(&self, dead_time_s: f64) -> f64 {
        dead_time_s / self.pulse_sep_s
    }
}

/// Full parameter set of one protocol configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub dimension: usize,
    pub encoding: Encoding,
    /// Probability `P_b` of choosing the Z basis.
    pub basis_prob: f64,
    pub channel: ChannelParams,
    pub noise: NoiseParams,
    pub detector: DetectorParams,
    pub timing: TimingParams,
    /// Error-correction inefficiency `f ≥ 1`.
    pub ec_inefficiency: f64,
}

/// Loss coefficient used when none is given (standard telecom fiber).
pub const DEFAULT_LOSS_DB_PER_KM: f64 = 0.2;

impl ProtocolConfig {
    /// Reference operating point: P_dc = 1e-6, f = 1, |β|² = 0.85,
    /// η = 0.145, σ = 0.325 (space) or 0.175 (time), τ_d = 20 ns,
    /// T̃_p = 200 ps, at zero distance.
    pub fn reference(dimension: usize, encoding: Encoding) -> Self {
        let sigma = match encoding {
            Encoding::Space => 0.325,
            Encoding::Time => 0.175,
        };
        ProtocolConfig {
            dimension,
            encoding,
            basis_prob: 0.5,
            channel: ChannelParams {
                distance_km: 0.0,
                loss_db_per_km: DEFAULT_LOSS_DB_PER_KM,
                detector_efficiency: 0.145,
            },
            noise: NoiseParams {
                sigma,
                beta_sq: 0.85,
                phase_model: encoding.default_phase_model(),
            },
            detector: DetectorParams {
                dark_count: 1e-6,
                dead_time_s: 20e-9,
            },
            timing: TimingParams {
                pulse_sep_s: 200e-12,
                min_pulse_sep_s: 200e-12,
            },
            ec_inefficiency: 1.0,
        }
    }

    /// Lossless, noiseless, dark-count-free configuration.
    pub fn ideal(dimension: usize, encoding: Encoding) -> Self {
        let mut cfg = Self::reference(dimension, encoding);
        cfg.channel.detector_efficiency = 1.0;
        cfg.channel.loss_db_per_km = 0.0;
        cfg.noise.sigma = 0.0;
        cfg.noise.beta_sq = 1.0;
        cfg.detector.dark_count = 0.0;
        cfg
    }

    pub fn with_distance(mut self, km: f64) -> Self {
        self.channel.distance_km = km;
        self
    }

    pub fn with_dimension(mut self, n: usize) -> Self {
        self.dimension = n;
        self
    }

    /// Single-photon detection probability `P_s = η 10^{-α₀ d / 10}`.
    pub fn survival_prob(&self) -> Result<f64> {
        crate::analytics::survival_prob(
            self.channel.detector_efficiency,
            self.channel.loss_db_per_km,
            self.channel.distance_km,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 {
            return Err(Error::InvalidDimension(self.dimension));
        }
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(self.basis_prob > 0.0 && self.basis_prob < 1.0) {
            return Err(Error::domain(format!(
                "basis probability {} outside (0, 1)",
                self.basis_prob
            )));
        }
        let ch = &self.channel;
        if !(ch.distance_km >= 0.0 && ch.distance_km.is_finite()) {
            return Err(Error::domain(format!("distance {} km", ch.distance_km)));
        }
        if !(ch.loss_db_per_km >= 0.0 && ch.loss_db_per_km.is_finite()) {
            return Err(Error::domain(format!("loss {} dB/km", ch.loss_db_per_km)));
        }
        if !(ch.detector_efficiency > 0.0 && ch.detector_efficiency <= 1.0) {
            return Err(Error::domain(format!(
                "detector efficiency {} outside (0, 1]",
                ch.detector_efficiency
            )));
        }
        if !(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite()) {
            return Err(Error::domain(format!("sigma {}", self.noise.sigma)));
        }
        if !in_unit(self.noise.beta_sq) {
            return Err(Error::domain(format!("|beta|^2 = {}", self.noise.beta_sq)));
        }
        let det = &self.detector;
        if !(det.dark_count >= 0.0 && det.dark_count < 1.0) {
            return Err(Error::domain(format!("dark count {}", det.dark_count)));
        }
        if !(det.dead_time_s >= 0.0 && det.dead_time_s.is_finite()) {
            return Err(Error::domain(format!("dead time {} s", det.dead_time_s)));
        }
        let t = &self.timing;
        if !(t.min_pulse_sep_s > 0.0 && t.pulse_sep_s >= t.min_pulse_sep_s) {
            return Err(Error::domain(format!(
                "pulse separation {} s must be >= minimum {} s > 0",
                t.pulse_sep_s, t.min_pulse_sep_s
            )));
        }
        if !(self.ec_inefficiency >= 1.0) {
            return Err(Error::domain(format!(
                "error-correction inefficiency {} < 1",
                self.ec_inefficiency
            )));
        }
        Ok(())
    }
}

/// Which of the two mutually unbiased bases a state belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BasisKind {
    Z,
    X,
}

/// One orthonormal basis of the N-dimensional qudit space.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    pub kind: BasisKind,
    /// Rows are the basis states.
    pub vectors: Vec<Vec<Complex64>>,
    /// All amplitudes are real `±1/√N`.
    pub real: bool,
}

impl BasisSet {
    pub fn dimension(&self) -> usize {
        self.vectors.len()
    }

    pub fn state(&self, index: usize) -> &[Complex64] {
        &self.vectors[index]
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (a, ra) in self.vectors.iter().enumerate() {
            for (b, rb) in self.vectors.iter().enumerate() {
                let dot: Complex64 = ra.iter().zip(rb).map(|(x, y)| x.conj() * y).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).norm());
            }
        }
        worst
    }
}

/// Builds the computational (Z) basis or the superposition (X) basis.
///
/// For powers of two the X basis is the Sylvester-Hadamard basis with real
/// weights `±1/√N`. Other dimensions have no such basis in general; they get
/// the Fourier basis `exp(2πi jk/N)/√N` with `real = false`.
pub fn build_basis(dimension: usize, kind: BasisKind) -> Result<BasisSet> {
    if dimension < 2 {
        return Err(Error::InvalidDimension(dimension));
    }
    let n = dimension;
    let vectors = match kind {
        BasisKind::Z => (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| Complex64::new(if r == c { 1.0 } else { 0.0 }, 0.0))
                    .collect()
            })
            .collect(),
        BasisKind::X if n.is_power_of_two() => {
            let scale = 1.0 / (n as f64).sqrt();
            sylvester_signs(n)
                .into_iter()
                .map(|row| {
                    row.into_iter()
                        .map(|s| Complex64::new(s as f64 * scale, 0.0))
                        .collect()
                })
                .collect()
        }
        BasisKind::X => {
            let scale = 1.0 / (n as f64).sqrt();
            (0..n)
                .map(|j| {
                    (0..n)
                        .map(|k| {
                            let angle = 2.0 * PI * ((j * k) % n) as f64 / n as f64;
                            Complex64::from_polar(scale, angle)
                        })
                        .collect()
                })
                .collect()
        }
    };
    let real = match kind {
        BasisKind::Z => false,
        BasisKind::X => n.is_power_of_two(),
    };
    Ok(BasisSet {
        kind,
        vectors,
        real,
    })
}

fn sylvester_signs(n: usize) -> Vec<Vec<i8>> {
    let mut h = vec![vec![1i8]];
    while h.len() < n {
        let m = h.len();
        let mut next = vec![vec![0i8; 2 * m]; 2 * m];
        for r in 0..m {
            for c in 0..m {
                let s = h[r][c];
                next[r][c] = s;
                next[r][c + m] = s;
                next[r + m][c] = s;
                next[r + m][c + m] = -s;
            }
        }
        h = next;
    }
    h
}

/// One of the 2N detection modes.
///
/// In the space encoding `bin` is the beam-splitter index and `port` one of
/// its two detectors (detector number `2·bin + port + 1`). In the time
/// encoding `bin` is the time slot and `port` selects one of the two shared
/// detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DetectionMode {
    pub bin: usize,
    pub port: u8,
}

impl DetectionMode {
    pub fn new(bin: usize, port: u8) -> Self {
        debug_assert!(port < 2);
        DetectionMode { bin, port }
    }

    /// Dense index in `0..2N`.
    pub fn index(self) -> usize {
        2 * self.bin + self.port as usize
    }

    pub fn from_index(index: usize) -> Self {
        DetectionMode {
            bin: index / 2,
            port: (index % 2) as u8,
        }
    }

    /// 1-based detector label of the space-encoding layout.
    pub fn detector_number(self) -> usize {
        self.index() + 1
    }

    pub fn from_detector_number(number: usize) -> Option<Self> {
        number.checked_sub(1).map(Self::from_index)
    }

    /// Physical detector that registers this mode.
    pub fn detector(self, encoding: Encoding) -> usize {
        match encoding {
            Encoding::Space => self.index(),
            Encoding::Time => self.port as usize,
        }
    }
}

/// Sign of the Bell state selected by a coincidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    Plus,
    Minus,
}

/// What Charlie's detectors reported in one gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    /// Two clicks in different bins `low < high`.
    ValidCoincidence {
        low: usize,
        high: usize,
        parity: Parity,
    },
    /// Both photons left through the same mode (known to the simulator only).
    Bunched,
    /// Both ports of one bin clicked.
    SameBinCoincidence,
    /// Zero or one click.
    NoEvent,
    /// Three or more clicks.
    Multiclick,
}

impl Classification {
    pub fn is_valid(&self) -> bool {
        matches!(self, Classification::ValidCoincidence { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionEvent {
    /// Sorted, duplicate-free clicked modes.
    pub clicked: Vec<DetectionMode>,
    pub classification: Classification,
}

/// Classifies a click pattern. Duplicate modes are counted once since a mode
/// clicks at most once per gate.
pub fn classify_event(clicked: &[DetectionMode]) -> Classification {
    let mut modes: Vec<DetectionMode> = clicked.to_vec();
    modes.sort_unstable();
    modes.dedup();
    match modes.as_slice() {
        [] | [_] => Classification::NoEvent,
        [a, b] if a.bin == b.bin => Classification::SameBinCoincidence,
        [a, b] => Classification::ValidCoincidence {
            low: a.bin,
            high: b.bin,
            parity: if a.port == b.port {
                Parity::Plus
            } else {
                Parity::Minus
            },
        },
        _ => Classification::Multiclick,
    }
}

/// Parity predicted for ideal interference, or `Indeterminate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExpectedParity {
    Plus,
    Minus,
    Indeterminate,
}

impl ExpectedParity {
    pub fn matches(self, parity: Parity) -> Option<bool> {
        match self {
            ExpectedParity::Plus => Some(parity == Parity::Plus),
            ExpectedParity::Minus => Some(parity == Parity::Minus),
            ExpectedParity::Indeterminate => None,
        }
    }
}

const PARITY_TOL: f64 = 1e-9;

/// Parity of the only coincidence allowed in subspace `{i, j}` when Alice
/// sends `alice` and Bob sends `bob` and the photons interfere perfectly.
///
/// The two paths to a cross-bin coincidence (Alice in `i` with Bob in `j`,
/// and the swap) interfere with relative phase
/// `a_i a_j* b_i* b_j`; `+1` allows only equal ports, `-1` only opposite ports.
pub fn expected_parity(
    alice: &[Complex64],
    bob: &[Complex64],
    i: usize,
    j: usize,
) -> ExpectedParity {
    if i == j {
        return ExpectedParity::Indeterminate;
    }
    let phi = alice[i] * alice[j].conj() * bob[i].conj() * bob[j];
    let norm = phi.norm();
    if norm < 1e-300 {
        return ExpectedParity::Indeterminate;
    }
    let phase = phi / norm;
    if (phase - 1.0).norm() < PARITY_TOL {
        ExpectedParity::Plus
    } else if (phase + 1.0).norm() < PARITY_TOL {
        ExpectedParity::Minus
    } else {
        ExpectedParity::Indeterminate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signs(basis: &BasisSet) -> Vec<Vec<i8>> {
        basis
            .vectors
            .iter()
            .map(|r| r.iter().map(|c| if c.re > 0.0 { 1 } else { -1 }).collect())
            .collect()
    }

    #[test]
    fn four_dim_x_basis_matches_hadamard_rows() {
        let b = build_basis(4, BasisKind::X).unwrap();
        assert!(b.real);
        let mut got = signs(&b);
        got.sort();
        let mut want = vec![
            vec![1, 1, 1, 1],
            vec![1, -1, -1, 1],
            vec![1, 1, -1, -1],
            vec![1, -1, 1, -1],
        ];
        want.sort();
        assert_eq!(got, want);
        for row in &b.vectors {
            for c in row {
                assert!((c.norm() - 0.5).abs() < 1e-15);
                assert_eq!(c.im, 0.0);
            }
        }
    }

    #[test]
    fn z_basis_is_identity() {
        let b = build_basis(2, BasisKind::Z).unwrap();
        assert_eq!(b.vectors[0], vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        assert_eq!(b.vectors[1], vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]);
    }

    #[test]
    fn three_dim_x_basis_is_fourier() {
        let b = build_basis(3, BasisKind::X).unwrap();
        assert!(!b.real);
        assert!(b.orthonormality_error() < 1e-12);
        let omega = Complex64::from_polar(1.0, 2.0 * PI / 3.0);
        let s = 1.0 / 3f64.sqrt();
        assert!((b.vectors[1][1] - omega * s).norm() < 1e-15);
        assert!((b.vectors[2][1] - omega * omega * s).norm() < 1e-15);
    }

    #[test]
    fn dimension_below_two_rejected() {
        assert_eq!(build_basis(1, BasisKind::X), Err(Error::InvalidDimension(1)));
        assert_eq!(build_basis(0, BasisKind::Z), Err(Error::InvalidDimension(0)));
    }

    #[test]
    fn bases_orthonormal_up_to_64() {
        for n in 2..=64 {
            for kind in [BasisKind::Z, BasisKind::X] {
                let b = build_basis(n, kind).unwrap();
                assert!(b.orthonormality_error() < 1e-12, "N={n} {kind:?}");
            }
        }
    }

    fn det(n: usize) -> DetectionMode {
        DetectionMode::from_detector_number(n).unwrap()
    }

    #[test]
    fn detector_numbering_parity_rule() {
        assert_eq!(
            classify_event(&[det(1), det(7)]),
            Classification::ValidCoincidence { low: 0, high: 3, parity: Parity::Plus }
        );
        assert_eq!(
            classify_event(&[det(2), det(8)]),
            Classification::ValidCoincidence { low: 0, high: 3, parity: Parity::Plus }
        );
        assert_eq!(
            classify_event(&[det(1), det(8)]),
            Classification::ValidCoincidence { low: 0, high: 3, parity: Parity::Minus }
        );
        assert_eq!(
            classify_event(&[det(7), det(2)]),
            Classification::ValidCoincidence { low: 0, high: 3, parity: Parity::Minus }
        );
        assert_eq!(classify_event(&[det(1), det(2)]), Classification::SameBinCoincidence);
    }

    #[test]
    fn click_counts_outside_two() {
        assert_eq!(classify_event(&[]), Classification::NoEvent);
        assert_eq!(classify_event(&[det(3)]), Classification::NoEvent);
        assert_eq!(classify_event(&[det(3), det(3)]), Classification::NoEvent);
        assert_eq!(
            classify_event(&[det(1), det(3), det(5)]),
            Classification::Multiclick
        );
    }

    #[test]
    fn parity_examples() {
        let x2 = build_basis(2, BasisKind::X).unwrap();
        assert_eq!(expected_parity(x2.state(0), x2.state(0), 0, 1), ExpectedParity::Plus);
        assert_eq!(expected_parity(x2.state(0), x2.state(1), 0, 1), ExpectedParity::Minus);

        let a = [1.0, -1.0, -1.0, 1.0].map(|s| Complex64::new(s * 0.5, 0.0));
        let b = [1.0, 1.0, -1.0, -1.0].map(|s| Complex64::new(s * 0.5, 0.0));
        assert_eq!(expected_parity(&a, &b, 0, 3), ExpectedParity::Minus);
    }

    #[test]
    fn parity_zero_amplitude_is_indeterminate() {
        let z = build_basis(3, BasisKind::Z).unwrap();
        let x = build_basis(4, BasisKind::X).unwrap();
        assert_eq!(
            expected_parity(z.state(0), z.state(1), 0, 1),
            ExpectedParity::Indeterminate
        );
        assert_eq!(
            expected_parity(x.state(0), x.state(1), 2, 2),
            ExpectedParity::Indeterminate
        );
    }

    #[test]
    fn real_bases_never_indeterminate_and_symmetric() {
        for n in [2, 4, 8, 16] {
            let x = build_basis(n, BasisKind::X).unwrap();
            for a in 0..n {
                for b in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            if i == j {
                                continue;
                            }
                            let p = expected_parity(x.state(a), x.state(b), i, j);
                            assert_ne!(p, ExpectedParity::Indeterminate);
                            assert_eq!(p, expected_parity(x.state(b), x.state(a), i, j));
                            assert_eq!(p, expected_parity(x.state(a), x.state(b), j, i));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reference_config_validates() {
        for enc in [Encoding::Space, Encoding::Time] {
            ProtocolConfig::reference(4, enc).validate().unwrap();
            ProtocolConfig::ideal(4, enc).validate().unwrap();
        }
        let mut bad = ProtocolConfig::reference(4, Encoding::Space);
        bad.basis_prob = 1.0;
        assert!(bad.validate().is_err());
        assert_eq!(
            ProtocolConfig::reference(1, Encoding::Space).validate(),
            Err(Error::InvalidDimension(1))
        );
    }
}
