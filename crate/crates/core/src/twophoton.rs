//! Brute-force two-photon interference at Charlie's beam splitters.
//!
//! Each bin `k` has one 50:50 beam splitter with output modes `(k, 0)` and
//! `(k, 1)`. Alice's bin amplitude `a_k` maps to `((k,0) + (k,1))/√2`, Bob's
//! `b_k` to `((k,0) - (k,1))/√2`. The same math covers both encodings: in the
//! time encoding `k` is a slot at the single beam splitter.
//!
//! Indistinguishable photons are symmetrized (bosonic amplitudes add);
//! distinguishable photons route independently.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    expected_parity, BasisSet, DetectionMode, ExpectedParity, NoiseParams, Parity, PhaseModel,
};
use crate::stats::{Estimate, Moments};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Party {
    Alice,
    Bob,
}

impl Party {
    /// Sign picked up at output port `port`.
    fn port_sign(self, port: u8) -> f64 {
        match (self, port) {
            (Party::Bob, 1) => -1.0,
            _ => 1.0,
        }
    }
}

const NORM_TOL: f64 = 1e-9;

/// A single-photon qudit entering Charlie's network.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonState {
    amplitudes: Vec<Complex64>,
    pub party: Party,
}

impl PhotonState {
    pub fn new(amplitudes: Vec<Complex64>, party: Party) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::domain(format!("state norm² {norm} != 1")));
        }
        Ok(PhotonState { amplitudes, party })
    }

    pub fn from_basis(basis: &BasisSet, index: usize, party: Party) -> Self {
        PhotonState {
            amplitudes: basis.state(index).to_vec(),
            party,
        }
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn dimension(&self) -> usize {
        self.amplitudes.len()
    }

    /// Applies `|k> → e^{iθ_k}|k>`.
    pub fn with_phases(&self, phases: &[f64]) -> Self {
        PhotonState {
            amplitudes: self
                .amplitudes
                .iter()
                .zip(phases)
                .map(|(a, &t)| a * Complex64::from_polar(1.0, t))
                .collect(),
            party: self.party,
        }
    }

    fn mode_amplitude(&self, mode: usize) -> Complex64 {
        let m = DetectionMode::from_index(mode);
        self.amplitudes[m.bin] * (self.party.port_sign(m.port) * std::f64::consts::FRAC_1_SQRT_2)
    }

    fn check_norm(&self) -> Result<()> {
        let norm: f64 = self.amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            Err(Error::domain(format!("state norm² {norm} != 1")))
        } else {
            Ok(())
        }
    }
}

/// Probability of every unordered pair of output modes `(m, n)`, `m ≤ n`,
/// as a flat list. `m == n` means both photons left through one mode.
pub fn joint_outcomes(
    alice: &PhotonState,
    bob: &PhotonState,
    indistinguishable: bool,
) -> Vec<(usize, usize, f64)> {
    let modes = 2 * alice.dimension();
    let ua: Vec<Complex64> = (0..modes).map(|m| alice.mode_amplitude(m)).collect();
    let ub: Vec<Complex64> = (0..modes).map(|m| bob.mode_amplitude(m)).collect();
    let mut out = Vec::with_capacity(modes * (modes + 1) / 2);
    for m in 0..modes {
        for n in m..modes {
            let p = match (indistinguishable, m == n) {
                (true, true) => 2.0 * (ua[m] * ub[m]).norm_sqr(),
                (true, false) => (ua[m] * ub[n] + ua[n] * ub[m]).norm_sqr(),
                (false, true) => ua[m].norm_sqr() * ub[m].norm_sqr(),
                (false, false) => {
                    ua[m].norm_sqr() * ub[n].norm_sqr() + ua[n].norm_sqr() * ub[m].norm_sqr()
                }
            };
            out.push((m, n, p));
        }
    }
    out
}

/// Output distribution of both photons over Charlie's 2N modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    dimension: usize,
    /// `[plus, minus]` mass for each bin pair `i < j`, row-major.
    cross: Vec<[f64; 2]>,
    /// Both photons in one mode, per mode index.
    bunched: Vec<f64>,
    /// Both ports of one bin, per bin.
    same_bin: Vec<f64>,
}

fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

impl OutcomeDistribution {
    fn zeros(dimension: usize) -> Self {
        OutcomeDistribution {
            dimension,
            cross: vec![[0.0; 2]; dimension * (dimension - 1) / 2],
            bunched: vec![0.0; 2 * dimension],
            same_bin: vec![0.0; dimension],
        }
    }

    fn from_joint(dimension: usize, joint: &[(usize, usize, f64)]) -> Self {
        let mut d = Self::zeros(dimension);
        for &(m, n, p) in joint {
            let (a, b) = (DetectionMode::from_index(m), DetectionMode::from_index(n));
            if m == n {
                d.bunched[m] += p;
            } else if a.bin == b.bin {
                d.same_bin[a.bin] += p;
            } else {
                let k = if a.port == b.port { 0 } else { 1 };
                d.cross[pair_index(dimension, a.bin, b.bin)][k] += p;
            }
        }
        d
    }

    fn accumulate(&mut self, other: &Self, weight: f64) {
        for (x, y) in self.cross.iter_mut().zip(&other.cross) {
            x[0] += weight * y[0];
            x[1] += weight * y[1];
        }
        for (x, y) in self.bunched.iter_mut().zip(&other.bunched) {
            *x += weight * y;
        }
        for (x, y) in self.same_bin.iter_mut().zip(&other.same_bin) {
            *x += weight * y;
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Mass of a coincidence between bins `i` and `j` with the given parity.
    pub fn cross_bin(&self, i: usize, j: usize, parity: Parity) -> f64 {
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let k = match parity {
            Parity::Plus => 0,
            Parity::Minus => 1,
        };
        self.cross[pair_index(self.dimension, lo, hi)][k]
    }

    pub fn bunched(&self, mode: DetectionMode) -> f64 {
        self.bunched[mode.index()]
    }

    pub fn same_bin(&self, bin: usize) -> f64 {
        self.same_bin[bin]
    }

    pub fn total_cross(&self) -> f64 {
        self.cross.iter().map(|c| c[0] + c[1]).sum()
    }

    pub fn total_bunched(&self) -> f64 {
        self.bunched.iter().sum()
    }

    pub fn total_same_bin(&self) -> f64 {
        self.same_bin.iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.total_cross() + self.total_bunched() + self.total_same_bin()
    }

    /// Splits the cross-bin mass by whether its parity agrees with the
    /// ideal prediction for the reference (phase-free) input states.
    pub fn parity_split(&self, alice: &[Complex64], bob: &[Complex64]) -> ParitySplit {
        let n = self.dimension;
        let mut split = ParitySplit::default();
        for i in 0..n {
            for j in (i + 1)..n {
                let [plus, minus] = self.cross[pair_index(n, i, j)];
                match expected_parity(alice, bob, i, j) {
                    ExpectedParity::Plus => {
                        split.correct += plus;
                        split.wrong += minus;
                    }
                    ExpectedParity::Minus => {
                        split.correct += minus;
                        split.wrong += plus;
                    }
                    ExpectedParity::Indeterminate => split.indeterminate += plus + minus,
                }
            }
        }
        split
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ParitySplit {
    pub correct: f64,
    pub wrong: f64,
    /// Cross-bin mass in subspaces without a deterministic parity.
    pub indeterminate: f64,
}

/// Exact two-photon output distribution.
pub fn network_output(
    alice: &PhotonState,
    bob: &PhotonState,
    indistinguishable: bool,
) -> Result<OutcomeDistribution> {
    alice.check_norm()?;
    bob.check_norm()?;
    if alice.dimension() != bob.dimension() {
        return Err(Error::domain("Alice and Bob use different dimensions"));
    }
    if alice.dimension() < 2 {
        return Err(Error::InvalidDimension(alice.dimension()));
    }
    let joint = joint_outcomes(alice, bob, indistinguishable);
    Ok(OutcomeDistribution::from_joint(alice.dimension(), &joint))
}

/// Draws one party's channel phases `θ_0..θ_{N-1}`.
///
/// Space: independent per-bin phases of variance `σ²/2`, so every relative
/// phase has variance `σ²`. Time (white): a random walk with per-slot
/// variance `σ²`. Time (drift): `θ_k = k δ` with `δ ~ N(0, σ²)`.
pub fn sample_phases<R: Rng + ?Sized>(
    model: PhaseModel,
    dimension: usize,
    sigma: f64,
    rng: &mut R,
) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; dimension];
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    match model {
        PhaseModel::SpaceHomogeneous => {
            let s = sigma * std::f64::consts::FRAC_1_SQRT_2;
            (0..dimension).map(|_| s * std_normal.sample(rng)).collect()
        }
        PhaseModel::TimeWhite => {
            let mut theta = 0.0;
            (0..dimension)
                .map(|k| {
                    if k > 0 {
                        theta += sigma * std_normal.sample(rng);
                    }
                    theta
                })
                .collect()
        }
        PhaseModel::TimeDrift => {
            let delta = sigma * std_normal.sample(rng);
            (0..dimension).map(|k| k as f64 * delta).collect()
        }
    }
}

/// Fixed number of random streams; results depend on the seed only.
pub const DEFAULT_WORKERS: usize = 8;

/// Phase- and distinguishability-averaged output distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledOutcomes {
    pub trials: u64,
    pub mean: OutcomeDistribution,
    /// Correct-parity cross-bin mass.
    pub correct: Estimate,
    /// Wrong-parity cross-bin mass.
    pub wrong: Estimate,
    pub bunched: Estimate,
    pub same_bin: Estimate,
    /// Per-trial `wrong / (correct + wrong)`.
    pub wrong_fraction: Estimate,
}

#[derive(Clone)]
struct OracleAccumulator {
    sum: OutcomeDistribution,
    correct: Moments,
    wrong: Moments,
    bunched: Moments,
    same_bin: Moments,
    wrong_fraction: Moments,
}

/// Monte Carlo average of [`network_output`] over Gaussian channel phases
/// and a Bernoulli(|β|²) indistinguishability flag.
pub fn sample_categories(
    alice: &PhotonState,
    bob: &PhotonState,
    noise: &NoiseParams,
    trials: u64,
    seed: u64,
) -> Result<SampledOutcomes> {
    sample_categories_with_workers(alice, bob, noise, trials, seed, DEFAULT_WORKERS)
}

pub fn sample_categories_with_workers(
    alice: &PhotonState,
    bob: &PhotonState,
    noise: &NoiseParams,
    trials: u64,
    seed: u64,
    workers: usize,
) -> Result<SampledOutcomes> {
    if trials == 0 {
        return Err(Error::domain("need at least one trial"));
    }
    if workers == 0 {
        return Err(Error::domain("need at least one worker"));
    }
    // Validates inputs once.
    network_output(alice, bob, true)?;
    let n = alice.dimension();
    let workers = workers as u64;

    let parts: Vec<OracleAccumulator> = (0..workers)
        .into_par_iter()
        .map(|w| {
            let count = trials / workers + u64::from(w < trials % workers);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(w);
            let mut acc = OracleAccumulator {
                sum: OutcomeDistribution::zeros(n),
                correct: Moments::default(),
                wrong: Moments::default(),
                bunched: Moments::default(),
                same_bin: Moments::default(),
                wrong_fraction: Moments::default(),
            };
            for _ in 0..count {
                let pa = sample_phases(noise.phase_model, n, noise.sigma, &mut rng);
                let pb = sample_phases(noise.phase_model, n, noise.sigma, &mut rng);
                let indist = rng.random::<f64>() < noise.beta_sq;
                let joint =
                    joint_outcomes(&alice.with_phases(&pa), &bob.with_phases(&pb), indist);
                let dist = OutcomeDistribution::from_joint(n, &joint);
                let split = dist.parity_split(alice.amplitudes(), bob.amplitudes());
                acc.correct.push(split.correct);
                acc.wrong.push(split.wrong);
                acc.bunched.push(dist.total_bunched());
                acc.same_bin.push(dist.total_same_bin());
                let decided = split.correct + split.wrong;
                if decided > 0.0 {
                    acc.wrong_fraction.push(split.wrong / decided);
                }
                acc.sum.accumulate(&dist, 1.0);
            }
            acc
        })
        .collect();

    let mut total = OracleAccumulator {
        sum: OutcomeDistribution::zeros(n),
        correct: Moments::default(),
        wrong: Moments::default(),
        bunched: Moments::default(),
        same_bin: Moments::default(),
        wrong_fraction: Moments::default(),
    };
    for p in &parts {
        total.sum.accumulate(&p.sum, 1.0);
        total.correct.merge(&p.correct);
        total.wrong.merge(&p.wrong);
        total.bunched.merge(&p.bunched);
        total.same_bin.merge(&p.same_bin);
        total.wrong_fraction.merge(&p.wrong_fraction);
    }
    let mut mean = OutcomeDistribution::zeros(n);
    mean.accumulate(&total.sum, 1.0 / trials as f64);
    Ok(SampledOutcomes {
        trials,
        mean,
        correct: total.correct.estimate(),
        wrong: total.wrong.estimate(),
        bunched: total.bunched.estimate(),
        same_bin: total.same_bin.estimate(),
        wrong_fraction: total.wrong_fraction.estimate(),
    })
}
