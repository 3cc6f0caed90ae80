//! Batch front-end: rate sweeps, dead-time optimization, Monte Carlo runs and
//! two-photon oracle queries, emitted as CSV tables or a single JSON object.
//!
//! Settings are resolved with the precedence command-line flag > config file
//! > built-in default. The config file is flat TOML whose keys are the flag
//! names with dashes replaced by underscores; unknown keys are rejected.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analytics;
use crate::error::{Error, Result};
use crate::model::{
    build_basis, BasisKind, DetectionMode, Encoding, NoiseParams, Parity, PhaseModel,
    ProtocolConfig, DEFAULT_LOSS_DB_PER_KM,
};
use crate::saturation;
use crate::simulator::{self, SessionStats};
use crate::stats::{binomial_z, Estimate};
use crate::twophoton::{network_output, sample_categories, Party, PhotonState};

pub const DEFAULT_DIMENSION: usize = 4;
pub const DEFAULT_ROUNDS: u64 = 1_000_000;
pub const DEFAULT_TRIALS: u64 = 100_000;
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "mdiqkd",
    version,
    about = "Rates, dead-time optimization and Monte Carlo for high-dimensional MDI-QKD"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form rate table, optionally swept over one parameter.
    Rates(Settings),
    /// Optimal pulse separation, saturation maxima and the optimal dimension.
    Optimize(Settings),
    /// Monte Carlo session compared against the closed forms.
    Simulate(Settings),
    /// Two-photon output distribution for a pair of basis states.
    Oracle(Settings),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    /// One pretty-printed JSON object.
    Object,
}

/// Every setting, as given on the command line or in a config file.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Flat TOML file with default values for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Qudit dimension N.
    #[arg(long)]
    pub dimension: Option<usize>,
    /// space or time.
    #[arg(long)]
    pub encoding: Option<Encoding>,
    /// space, time-white or time-drift (default follows the encoding).
    #[arg(long)]
    pub phase_model: Option<PhaseModel>,
    /// Distance from each party to Charlie, km.
    #[arg(long)]
    pub distance_km: Option<f64>,
    /// Fiber loss, dB/km.
    #[arg(long)]
    pub alpha_db_per_km: Option<f64>,
    /// Detector efficiency.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Dark-count probability per detector per gate.
    #[arg(long)]
    pub pdc: Option<f64>,
    /// Phase-noise scale, rad.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Photon indistinguishability |β|².
    #[arg(long)]
    pub beta_sq: Option<f64>,
    /// Detector dead time, s.
    #[arg(long)]
    pub dead_time_s: Option<f64>,
    /// Shortest supported pulse separation, s.
    #[arg(long)]
    pub min_pulse_sep_s: Option<f64>,
    /// Operating pulse separation, s (defaults to the minimum).
    #[arg(long)]
    pub pulse_sep_s: Option<f64>,
    /// Probability of choosing the Z basis.
    #[arg(long)]
    pub basis_prob: Option<f64>,
    /// Error-correction inefficiency f.
    #[arg(long)]
    pub ec_inefficiency: Option<f64>,

    /// Monte Carlo rounds.
    #[arg(long)]
    pub rounds: Option<u64>,
    /// Oracle phase samples.
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Abort when the estimated X-basis QBER exceeds this value (default:
    /// the QBER at which no key is left).
    #[arg(long)]
    pub abort_threshold: Option<f64>,
    /// Sweep as var:start:stop:steps:lin|log, var one of distance, dimension,
    /// pulse_sep, sigma.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Largest dimension in the optimizer's table.
    #[arg(long)]
    pub max_dimension: Option<usize>,
    /// Alice's oracle input as basis:index, e.g. x:0.
    #[arg(long)]
    pub alice_state: Option<String>,
    /// Bob's oracle input as basis:index, e.g. z:2.
    #[arg(long)]
    pub bob_state: Option<String>,

    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Write the table here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl Settings {
    /// Fills every unset field from `fallback`.
    pub fn or(self, fallback: Settings) -> Settings {
        Settings {
            config: self.config.or(fallback.config),
            dimension: self.dimension.or(fallback.dimension),
            encoding: self.encoding.or(fallback.encoding),
            phase_model: self.phase_model.or(fallback.phase_model),
            distance_km: self.distance_km.or(fallback.distance_km),
            alpha_db_per_km: self.alpha_db_per_km.or(fallback.alpha_db_per_km),
            eta: self.eta.or(fallback.eta),
            pdc: self.pdc.or(fallback.pdc),
            sigma: self.sigma.or(fallback.sigma),
            beta_sq: self.beta_sq.or(fallback.beta_sq),
            dead_time_s: self.dead_time_s.or(fallback.dead_time_s),
            min_pulse_sep_s: self.min_pulse_sep_s.or(fallback.min_pulse_sep_s),
            pulse_sep_s: self.pulse_sep_s.or(fallback.pulse_sep_s),
            basis_prob: self.basis_prob.or(fallback.basis_prob),
            ec_inefficiency: self.ec_inefficiency.or(fallback.ec_inefficiency),
            rounds: self.rounds.or(fallback.rounds),
            trials: self.trials.or(fallback.trials),
            seed: self.seed.or(fallback.seed),
            abort_threshold: self.abort_threshold.or(fallback.abort_threshold),
            sweep: self.sweep.or(fallback.sweep),
            max_dimension: self.max_dimension.or(fallback.max_dimension),
            alice_state: self.alice_state.or(fallback.alice_state),
            bob_state: self.bob_state.or(fallback.bob_state),
            format: self.format.or(fallback.format),
            output: self.output.or(fallback.output),
        }
    }

    pub fn from_toml(text: &str) -> Result<Settings> {
        toml::from_str(text).map_err(|e| Error::Usage(format!("config file: {e}")))
    }

    /// Merges in the config file named by `--config`, if any.
    pub fn with_config_file(self) -> Result<Settings> {
        match &self.config {
            None => Ok(self),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::Usage(format!("cannot read config {}: {e}", path.display()))
                })?;
                let file = Settings::from_toml(&text)?;
                Ok(self.or(file))
            }
        }
    }

    /// Protocol configuration from these settings over the reference
    /// operating point. The second value is true when the fiber loss was
    /// not given and the default was used.
    pub fn protocol_config(&self) -> Result<(ProtocolConfig, bool)> {
        let n = self.dimension.unwrap_or(DEFAULT_DIMENSION);
        let enc = self.encoding.unwrap_or(Encoding::Space);
        let mut cfg = ProtocolConfig::reference(n, enc);
        if let Some(m) = self.phase_model {
            cfg.noise.phase_model = m;
        }
        if let Some(d) = self.distance_km {
            cfg.channel.distance_km = d;
        }
        cfg.channel.loss_db_per_km = self.alpha_db_per_km.unwrap_or(DEFAULT_LOSS_DB_PER_KM);
        if let Some(x) = self.eta {
            cfg.channel.detector_efficiency = x;
        }
        if let Some(x) = self.pdc {
            cfg.detector.dark_count = x;
        }
        if let Some(x) = self.sigma {
            cfg.noise.sigma = x;
        }
        if let Some(x) = self.beta_sq {
            cfg.noise.beta_sq = x;
        }
        if let Some(x) = self.dead_time_s {
            cfg.detector.dead_time_s = x;
        }
        if let Some(x) = self.min_pulse_sep_s {
            cfg.timing.min_pulse_sep_s = x;
        }
        cfg.timing.pulse_sep_s = self.pulse_sep_s.unwrap_or(cfg.timing.min_pulse_sep_s);
        if let Some(x) = self.basis_prob {
            cfg.basis_prob = x;
        }
        if let Some(x) = self.ec_inefficiency {
            cfg.ec_inefficiency = x;
        }
        cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok((cfg, self.alpha_db_per_km.is_none()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Distance,
    Dimension,
    /// Sets both the operating and the minimum pulse separation.
    PulseSep,
    Sigma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Lin,
    Log,
}

/// One-parameter sweep `var:start:stop:steps:lin|log`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
    pub scale: Scale,
}

impl FromStr for SweepSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let usage = |msg: String| Error::Usage(format!("sweep '{s}': {msg}"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 5 {
            return Err(usage("expected var:start:stop:steps:lin|log".into()));
        }
        let variable = match parts[0] {
            "distance" | "distance_km" => SweepVariable::Distance,
            "dimension" => SweepVariable::Dimension,
            "pulse_sep" | "pulse_sep_s" => SweepVariable::PulseSep,
            "sigma" => SweepVariable::Sigma,
            v => {
                return Err(usage(format!(
                    "unknown variable '{v}' (distance, dimension, pulse_sep, sigma)"
                )))
            }
        };
        let num = |t: &str| {
            t.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| usage(format!("'{t}' is not a finite number")))
        };
        let start = num(parts[1])?;
        let stop = num(parts[2])?;
        let steps: usize = parts[3]
            .parse()
            .map_err(|_| usage(format!("'{}' is not a step count", parts[3])))?;
        let scale = match parts[4] {
            "lin" | "linear" => Scale::Lin,
            "log" => Scale::Log,
            other => return Err(usage(format!("unknown scale '{other}' (lin or log)"))),
        };
        let spec = SweepSpec {
            variable,
            start,
            stop,
            steps,
            scale,
        };
        spec.check().map_err(|e| usage(e.to_string()))?;
        Ok(spec)
    }
}

impl fmt::Display for SweepSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let var = match self.variable {
            SweepVariable::Distance => "distance",
            SweepVariable::Dimension => "dimension",
            SweepVariable::PulseSep => "pulse_sep",
            SweepVariable::Sigma => "sigma",
        };
        let scale = match self.scale {
            Scale::Lin => "lin",
            Scale::Log => "log",
        };
        write!(f, "{var}:{}:{}:{}:{scale}", self.start, self.stop, self.steps)
    }
}

impl SweepSpec {
    fn check(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Usage("need at least 2 steps".into()));
        }
        if !(self.start < self.stop) {
            return Err(Error::Usage("start must be below stop".into()));
        }
        if self.scale == Scale::Log && !(self.start > 0.0) {
            return Err(Error::Usage("log scale needs a positive range".into()));
        }
        let floor = match self.variable {
            SweepVariable::Distance | SweepVariable::Sigma => 0.0,
            SweepVariable::Dimension => 2.0,
            SweepVariable::PulseSep => f64::MIN_POSITIVE,
        };
        if self.start < floor {
            return Err(Error::Usage(format!("start must be at least {floor}")));
        }
        Ok(())
    }

    /// Sweep points; dimension points are rounded and deduplicated.
    pub fn values(&self) -> Vec<f64> {
        let last = (self.steps - 1) as f64;
        let mut v: Vec<f64> = (0..self.steps)
            .map(|k| {
                let t = k as f64 / last;
                match self.scale {
                    Scale::Lin => self.start + t * (self.stop - self.start),
                    Scale::Log => self.start * (self.stop / self.start).powf(t),
                }
            })
            .collect();
        if self.variable == SweepVariable::Dimension {
            v.iter_mut().for_each(|x| *x = x.round());
            v.dedup();
        }
        v
    }

    pub fn apply(&self, config: &ProtocolConfig, value: f64) -> ProtocolConfig {
        let mut c = *config;
        match self.variable {
            SweepVariable::Distance => c.channel.distance_km = value,
            SweepVariable::Dimension => c.dimension = value as usize,
            SweepVariable::PulseSep => {
                c.timing.pulse_sep_s = value;
                c.timing.min_pulse_sep_s = value;
            }
            SweepVariable::Sigma => c.noise.sigma = value,
        }
        c
    }
}

/// One row of the rate table. Field order is the CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub distance_km: f64,
    pub dimension: usize,
    pub encoding: Encoding,
    pub p_s: f64,
    pub f_n: f64,
    pub eps_x: f64,
    pub eps_z: f64,
    pub r_p_bits_per_use: f64,
    pub raw_rate_bits_per_s: f64,
    pub raw_rate_per_detector_bits_per_s: f64,
    pub secret_rate_bits_per_s: f64,
}

/// Closed-form rates of a single configuration.
pub fn rate_row(config: &ProtocolConfig) -> Result<RateRow> {
    let rb = analytics::rate_breakdown(config)?;
    let sat = saturation::rate_with_deadtime_from(config, rb.p_s, rb.r_p_z)?;
    let secret = if rb.r_p_z > 0.0 {
        sat.raw_rate * rb.r / rb.r_p_z
    } else {
        0.0
    };
    Ok(RateRow {
        distance_km: config.channel.distance_km,
        dimension: config.dimension,
        encoding: config.encoding,
        p_s: rb.p_s,
        f_n: rb.f_n,
        eps_x: rb.eps_x,
        eps_z: rb.eps_z,
        r_p_bits_per_use: rb.r_p_z,
        raw_rate_bits_per_s: sat.raw_rate,
        raw_rate_per_detector_bits_per_s: sat.raw_rate_per_detector,
        secret_rate_bits_per_s: secret,
    })
}

/// Rate table over a sweep, or a single row without one.
pub fn cmd_rates(config: &ProtocolConfig, sweep: Option<&SweepSpec>) -> Result<Vec<RateRow>> {
    match sweep {
        None => Ok(vec![rate_row(config)?]),
        Some(s) => s
            .values()
            .into_iter()
            .map(|v| rate_row(&s.apply(config, v)))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionRow {
    pub dimension: usize,
    pub optimal_pulse_sep_s: f64,
    pub constrained: bool,
    pub raw_bits_per_deadtime: f64,
    pub raw_rate_bits_per_s: f64,
    pub raw_rate_per_detector_bits_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub dimension: usize,
    pub encoding: Encoding,
    pub p_s: f64,
    pub dead_time_s: f64,
    pub min_pulse_sep_s: f64,
    /// False when the dead time is zero.
    pub saturation_active: bool,
    pub optimal_pulse_sep_s: f64,
    pub constrained: bool,
    /// Numerically maximized raw bits per dead time, divided by `τ_d`.
    pub numeric_max_bits_per_s: Option<f64>,
    /// Small-`P_s` closed form of the same maximum.
    pub closed_form_max_bits_per_s: Option<f64>,
    pub n_opt: f64,
    pub n_opt_rounded: usize,
    /// Dimension with the largest per-detector rate in `table`.
    pub best_dimension: Option<usize>,
    pub table: Vec<DimensionRow>,
}

pub fn cmd_optimize(config: &ProtocolConfig, max_dimension: Option<usize>) -> Result<OptimizeReport> {
    config.validate()?;
    let p_s = config.survival_prob()?;
    let tau = config.detector.dead_time_s;
    let min_sep = config.timing.min_pulse_sep_s;
    let active = tau > 0.0;
    let n_opt = saturation::optimal_dimension(p_s, tau, min_sep);
    let n_opt_rounded = (n_opt.round() as usize).max(2);
    let max_n = max_dimension.unwrap_or((2 * n_opt_rounded).clamp(16, 256));
    if max_n < 2 {
        return Err(Error::Usage(format!("max dimension {max_n} < 2")));
    }

    let sat = saturation::rate_with_deadtime(config)?;
    let (numeric, closed) = if active {
        (
            Some(sat.n_raw / tau),
            Some(saturation::closed_form_max(
                config.dimension,
                p_s,
                tau,
                config.encoding,
            )?),
        )
    } else {
        (None, None)
    };
    let sweep = saturation::dimension_sweep(config, max_n)?;
    let best = saturation::best_dimension(&sweep);
    let table = sweep
        .iter()
        .map(|(n, r)| DimensionRow {
            dimension: *n,
            optimal_pulse_sep_s: r.optimal_pulse_sep_s,
            constrained: r.constrained,
            raw_bits_per_deadtime: r.n_raw,
            raw_rate_bits_per_s: r.raw_rate,
            raw_rate_per_detector_bits_per_s: r.raw_rate_per_detector,
        })
        .collect();
    Ok(OptimizeReport {
        dimension: config.dimension,
        encoding: config.encoding,
        p_s,
        dead_time_s: tau,
        min_pulse_sep_s: min_sep,
        saturation_active: active,
        optimal_pulse_sep_s: sat.optimal_pulse_sep_s,
        constrained: sat.constrained,
        numeric_max_bits_per_s: numeric,
        closed_form_max_bits_per_s: closed,
        n_opt,
        n_opt_rounded,
        best_dimension: best,
        table,
    })
}

/// A simulated proportion next to its closed-form prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub quantity: String,
    pub successes: u64,
    pub trials: u64,
    pub simulated: Option<f64>,
    pub std_err: Option<f64>,
    pub analytic: f64,
    /// Deviation in units of the predicted binomial standard deviation.
    pub z_score: Option<f64>,
}

impl Comparison {
    pub fn new(quantity: &str, successes: u64, trials: u64, analytic: f64) -> Self {
        let est = Estimate::binomial(successes, trials);
        Comparison {
            quantity: quantity.to_string(),
            successes,
            trials,
            simulated: est.map(|e| e.value),
            std_err: est.map(|e| e.std_err),
            analytic,
            z_score: binomial_z(successes, trials, analytic),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub seed: u64,
    pub stats: SessionStats,
    pub comparisons: Vec<Comparison>,
}

/// Runs a session and lines up each estimate with its closed form.
pub fn cmd_simulate(
    config: &ProtocolConfig,
    rounds: u64,
    seed: u64,
    abort_threshold: Option<f64>,
) -> Result<SimulateReport> {
    let stats = simulator::run_session(config, rounds, abort_threshold, seed)?;
    let rb = analytics::rate_breakdown(config)?;
    let mut comparisons = vec![
        Comparison::new("eps_z", stats.wrong_z, stats.sifted_z, rb.eps_z),
        Comparison::new("sifted_z_fraction", stats.sifted_z, stats.z_rounds, rb.r_p_z),
    ];
    if stats.x_estimation_enabled {
        comparisons.push(Comparison::new("eps_x", stats.wrong_x, stats.sifted_x, rb.eps_x));
        comparisons.push(Comparison::new(
            "sifted_x_fraction",
            stats.sifted_x,
            stats.x_rounds,
            rb.r_p_x,
        ));
    }
    Ok(SimulateReport {
        seed,
        stats,
        comparisons,
    })
}

/// Oracle input `basis:index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpec {
    pub basis: BasisKind,
    pub index: usize,
}

impl FromStr for StateSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let usage = || Error::Usage(format!("state '{s}': expected x:<index> or z:<index>"));
        let (b, i) = s.split_once(':').ok_or_else(usage)?;
        let basis = match b.to_ascii_lowercase().as_str() {
            "x" => BasisKind::X,
            "z" => BasisKind::Z,
            _ => return Err(usage()),
        };
        let index = i.parse().map_err(|_| usage())?;
        Ok(StateSpec { basis, index })
    }
}

impl fmt::Display for StateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = match self.basis {
            BasisKind::Z => "z",
            BasisKind::X => "x",
        };
        write!(f, "{b}:{}", self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleCategory {
    CrossPlus,
    CrossMinus,
    Bunched,
    SameBin,
}

/// One output category. `port` is set for bunched rows only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub category: OracleCategory,
    pub low_bin: usize,
    pub high_bin: usize,
    pub port: Option<u8>,
    /// Phase-free mass, mixed over distinguishability.
    pub exact: f64,
    /// Phase-averaged Monte Carlo mass.
    pub sampled: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParityComparison {
    pub p_good: f64,
    pub p_bad: f64,
    pub correct: Estimate,
    pub wrong: Estimate,
    pub z_good: f64,
    pub z_bad: f64,
}

/// Bunched mass of the oracle next to `(1 + |β|²) / N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleClickDiagnostic {
    pub oracle_bunched: f64,
    pub p_double: f64,
    /// `p_double / oracle_bunched`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub dimension: usize,
    pub alice: StateSpec,
    pub bob: StateSpec,
    pub noise: NoiseParams,
    pub trials: u64,
    pub seed: u64,
    pub rows: Vec<OracleRow>,
    pub parity: Option<ParityComparison>,
    pub double_click: DoubleClickDiagnostic,
}

pub fn cmd_oracle(
    dimension: usize,
    alice: StateSpec,
    bob: StateSpec,
    noise: &NoiseParams,
    trials: u64,
    seed: u64,
) -> Result<OracleReport> {
    for s in [alice, bob] {
        if s.index >= dimension {
            return Err(Error::Usage(format!("state {s} outside dimension {dimension}")));
        }
    }
    let basis = |k| build_basis(dimension, k);
    let (ba, bb) = (basis(alice.basis)?, basis(bob.basis)?);
    let a = PhotonState::from_basis(&ba, alice.index, Party::Alice);
    let b = PhotonState::from_basis(&bb, bob.index, Party::Bob);
    let ind = network_output(&a, &b, true)?;
    let dis = network_output(&a, &b, false)?;
    let w = noise.beta_sq;
    let mix = |x: f64, y: f64| w * x + (1.0 - w) * y;
    let sampled = if trials > 0 {
        Some(sample_categories(&a, &b, noise, trials, seed)?)
    } else {
        None
    };

    let mut rows = Vec::new();
    for i in 0..dimension {
        for j in (i + 1)..dimension {
            for (cat, parity) in [
                (OracleCategory::CrossPlus, Parity::Plus),
                (OracleCategory::CrossMinus, Parity::Minus),
            ] {
                rows.push(OracleRow {
                    category: cat,
                    low_bin: i,
                    high_bin: j,
                    port: None,
                    exact: mix(ind.cross_bin(i, j, parity), dis.cross_bin(i, j, parity)),
                    sampled: sampled.as_ref().map(|s| s.mean.cross_bin(i, j, parity)),
                });
            }
        }
    }
    for bin in 0..dimension {
        for port in 0..2u8 {
            let m = DetectionMode::new(bin, port);
            rows.push(OracleRow {
                category: OracleCategory::Bunched,
                low_bin: bin,
                high_bin: bin,
                port: Some(port),
                exact: mix(ind.bunched(m), dis.bunched(m)),
                sampled: sampled.as_ref().map(|s| s.mean.bunched(m)),
            });
        }
        rows.push(OracleRow {
            category: OracleCategory::SameBin,
            low_bin: bin,
            high_bin: bin,
            port: None,
            exact: mix(ind.same_bin(bin), dis.same_bin(bin)),
            sampled: sampled.as_ref().map(|s| s.mean.same_bin(bin)),
        });
    }

    let parity = match &sampled {
        Some(s) if alice.basis == BasisKind::X && bob.basis == BasisKind::X && ba.real => {
            let f_n = analytics::dephasing_factor(dimension, noise.sigma, noise.phase_model)?;
            let x = analytics::x_outcome_probs(dimension, noise.beta_sq, f_n)?;
            Some(ParityComparison {
                p_good: x.p_good,
                p_bad: x.p_bad,
                correct: s.correct,
                wrong: s.wrong,
                z_good: s.correct.z_score(x.p_good),
                z_bad: s.wrong.z_score(x.p_bad),
            })
        }
        _ => None,
    };

    let oracle_bunched = match &sampled {
        Some(s) => s.bunched.value,
        None => mix(ind.total_bunched(), dis.total_bunched()),
    };
    let p_double = (1.0 + noise.beta_sq) / dimension as f64;
    Ok(OracleReport {
        dimension,
        alice,
        bob,
        noise: *noise,
        trials,
        seed,
        rows,
        parity,
        double_click: DoubleClickDiagnostic {
            oracle_bunched,
            p_double,
            ratio: (oracle_bunched > 0.0).then(|| p_double / oracle_bunched),
        },
    })
}

/// Serializes rows as CSV with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Usage(format!("csv output: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Usage(format!("csv output: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Usage(format!("csv output: {e}")))
}

/// Parses CSV emitted by [`to_csv`].
pub fn from_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Usage(format!("csv input: {e}")))
}

fn to_object<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Usage(format!("object output: {e}")))?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    alpha_db_per_km: f64,
    alpha_defaulted: bool,
    config: &'a ProtocolConfig,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize)]
struct RatesBody<'a> {
    sweep: Option<String>,
    rows: &'a [RateRow],
}

struct Wrapper<'a> {
    config: &'a ProtocolConfig,
    alpha_defaulted: bool,
}

impl Wrapper<'_> {
    fn object<T: Serialize>(&self, body: T) -> Result<String> {
        to_object(&Wrapped {
            alpha_db_per_km: self.config.channel.loss_db_per_km,
            alpha_defaulted: self.alpha_defaulted,
            config: self.config,
            body,
        })
    }
}

/// Primary output plus human-readable notes for standard error.
struct Rendered {
    body: String,
    notes: Vec<String>,
    status: Result<()>,
}

fn render(command: &Command, settings: &Settings) -> Result<Rendered> {
    let (config, alpha_defaulted) = settings.protocol_config()?;
    let format = settings.format.unwrap_or(OutputFormat::Csv);
    let seed = settings.seed.unwrap_or(DEFAULT_SEED);
    let mut notes = Vec::new();
    if alpha_defaulted {
        notes.push(format!(
            "note: fiber loss not given, using alpha = {DEFAULT_LOSS_DB_PER_KM} dB/km"
        ));
    }
    let wrap = Wrapper {
        config: &config,
        alpha_defaulted,
    };
    let mut status = Ok(());

    let body = match command {
        Command::Rates(_) => {
            let sweep = settings.sweep.as_deref().map(SweepSpec::from_str).transpose()?;
            let rows = cmd_rates(&config, sweep.as_ref())?;
            match format {
                OutputFormat::Csv => to_csv(&rows)?,
                OutputFormat::Object => wrap.object(RatesBody {
                    sweep: sweep.map(|s| s.to_string()),
                    rows: &rows,
                })?,
            }
        }
        Command::Optimize(_) => {
            let report = cmd_optimize(&config, settings.max_dimension)?;
            match format {
                OutputFormat::Csv => {
                    notes.extend(optimize_notes(&report));
                    to_csv(&report.table)?
                }
                OutputFormat::Object => wrap.object(&report)?,
            }
        }
        Command::Simulate(_) => {
            let rounds = settings.rounds.unwrap_or(DEFAULT_ROUNDS);
            let report = cmd_simulate(&config, rounds, seed, settings.abort_threshold)?;
            let s = &report.stats;
            if s.insufficient_statistics {
                let why = if s.x_estimation_enabled {
                    "a basis has no sifted rounds".to_string()
                } else {
                    format!("no real X basis for N = {}", config.dimension)
                };
                status = Err(Error::InsufficientStatistics(why));
            }
            match format {
                OutputFormat::Csv => {
                    notes.push(format!(
                        "rounds {} z_rounds {} x_rounds {} coincidences {} sifted_z {} sifted_x {} key_length {} abort_threshold {:.6} aborted {}",
                        s.rounds_total, s.z_rounds, s.x_rounds, s.coincidences,
                        s.sifted_z, s.sifted_x, s.key_length, s.abort_threshold, s.aborted
                    ));
                    to_csv(&report.comparisons)?
                }
                OutputFormat::Object => wrap.object(&report)?,
            }
        }
        Command::Oracle(_) => {
            let parse = |s: &Option<String>| {
                s.as_deref().unwrap_or("x:0").parse::<StateSpec>()
            };
            let report = cmd_oracle(
                config.dimension,
                parse(&settings.alice_state)?,
                parse(&settings.bob_state)?,
                &config.noise,
                settings.trials.unwrap_or(DEFAULT_TRIALS),
                seed,
            )?;
            match format {
                OutputFormat::Csv => {
                    notes.extend(oracle_notes(&report));
                    to_csv(&report.rows)?
                }
                OutputFormat::Object => wrap.object(&report)?,
            }
        }
    };
    Ok(Rendered {
        body,
        notes,
        status,
    })
}

fn optimize_notes(r: &OptimizeReport) -> Vec<String> {
    let mut v = Vec::new();
    if r.saturation_active {
        v.push(format!(
            "optimal pulse separation {:e} s{}",
            r.optimal_pulse_sep_s,
            if r.constrained { " (at the minimum)" } else { "" }
        ));
        if let (Some(num), Some(cf)) = (r.numeric_max_bits_per_s, r.closed_form_max_bits_per_s) {
            v.push(format!("raw rate maximum {num:e} bits/s, closed form {cf:e} bits/s"));
        }
    } else {
        v.push("dead time is zero: saturation inactive".to_string());
    }
    v.push(format!("N_opt = {:.3} (rounded {})", r.n_opt, r.n_opt_rounded));
    if let Some(n) = r.best_dimension {
        v.push(format!("best dimension in table: {n}"));
    }
    v
}

fn oracle_notes(r: &OracleReport) -> Vec<String> {
    let mut v = Vec::new();
    if let Some(p) = &r.parity {
        v.push(format!(
            "correct parity {:.6} ± {:.2e} vs P_good {:.6} (z = {:.2}); wrong parity {:.6} ± {:.2e} vs P_bad {:.6} (z = {:.2})",
            p.correct.value, p.correct.std_err, p.p_good, p.z_good,
            p.wrong.value, p.wrong.std_err, p.p_bad, p.z_bad
        ));
    }
    let d = &r.double_click;
    v.push(format!(
        "double-click diagnostic: oracle bunched mass {:.6}, (1+|beta|^2)/N = {:.6}, ratio {}",
        d.oracle_bunched,
        d.p_double,
        d.ratio.map_or("undefined".to_string(), |x| format!("{x:.4}"))
    ));
    v
}

fn emit(settings: &Settings, body: &str, stdout: &mut dyn Write) -> Result<()> {
    match &settings.output {
        Some(path) => std::fs::write(path, body)
            .map_err(|e| Error::Usage(format!("cannot write {}: {e}", path.display()))),
        None => stdout
            .write_all(body.as_bytes())
            .map_err(|e| Error::Usage(format!("cannot write output: {e}"))),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 usage or config error, 2 numerical
/// domain error, 3 insufficient statistics.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                1
            } else {
                let _ = write!(stdout, "{e}");
                0
            };
            return code;
        }
    };
    let settings = match &cli.command {
        Command::Rates(s) | Command::Optimize(s) | Command::Simulate(s) | Command::Oracle(s) => {
            s.clone()
        }
    };
    let result = settings.with_config_file().and_then(|settings| {
        let r = render(&cli.command, &settings)?;
        for n in &r.notes {
            let _ = writeln!(stderr, "{n}");
        }
        emit(&settings, &r.body, stdout)?;
        r.status
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut full = vec!["mdiqkd"];
        full.extend_from_slice(args);
        let code = run(full, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn sweep_parsing() {
        let s: SweepSpec = "distance:0:200:5:lin".parse().unwrap();
        assert_eq!(s.values(), vec![0.0, 50.0, 100.0, 150.0, 200.0]);
        let s: SweepSpec = "pulse_sep:1e-10:1e-8:3:log".parse().unwrap();
        let v = s.values();
        assert!((v[1] - 1e-9).abs() < 1e-22);
        let s: SweepSpec = "dimension:2:4:5:lin".parse().unwrap();
        assert_eq!(s.values(), vec![2.0, 3.0, 4.0]);
        for bad in [
            "distance:0:200:1:lin",
            "distance:10:0:5:lin",
            "distance:0:10:5:log",
            "speed:0:1:2:lin",
            "distance:0:1:2",
            "dimension:1:4:3:lin",
            "sigma:0:nan:3:lin",
        ] {
            assert!(matches!(bad.parse::<SweepSpec>(), Err(Error::Usage(_))), "{bad}");
        }
        let s: SweepSpec = "sigma:0:0.5:6:lin".parse().unwrap();
        assert_eq!(s.to_string().parse::<SweepSpec>().unwrap(), s);
    }

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let file = Settings::from_toml("dimension = 8\nsigma = 0.1\nencoding = \"time\"\n").unwrap();
        let flags = Settings {
            sigma: Some(0.2),
            ..Settings::default()
        };
        let merged = flags.or(file);
        let (cfg, defaulted) = merged.protocol_config().unwrap();
        assert_eq!(cfg.dimension, 8);
        assert_eq!(cfg.encoding, Encoding::Time);
        assert_eq!(cfg.noise.sigma, 0.2);
        assert_eq!(cfg.noise.phase_model, PhaseModel::TimeWhite);
        assert_eq!(cfg.noise.beta_sq, 0.85);
        assert!(defaulted);
    }

    #[test]
    fn unknown_config_key_rejected() {
        assert!(matches!(
            Settings::from_toml("dimensions = 4\n"),
            Err(Error::Usage(_))
        ));
        assert!(matches!(Settings::from_toml("config = \"x\"\n"), Err(Error::Usage(_))));
        let s = Settings::from_toml("phase_model = \"time-drift\"\nformat = \"object\"\n").unwrap();
        assert_eq!(s.phase_model, Some(PhaseModel::TimeDrift));
        assert_eq!(s.format, Some(OutputFormat::Object));
    }

    #[test]
    fn rates_csv_header_and_round_trip() {
        let (code, out, err) = run_capture(&["rates", "--sweep", "distance:0:150:4:lin"]);
        assert_eq!(code, 0, "{err}");
        assert!(err.contains("alpha"));
        let header = out.lines().next().unwrap();
        assert_eq!(
            header,
            "distance_km,dimension,encoding,p_s,f_n,eps_x,eps_z,r_p_bits_per_use,\
             raw_rate_bits_per_s,raw_rate_per_detector_bits_per_s,secret_rate_bits_per_s"
        );
        let rows: Vec<RateRow> = from_csv(&out).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(to_csv(&rows).unwrap(), out);
    }

    #[test]
    fn alpha_given_suppresses_note() {
        let (code, _, err) = run_capture(&["rates", "--alpha-db-per-km", "0.2"]);
        assert_eq!(code, 0);
        assert!(!err.contains("alpha"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run_capture(&["rates", "--bogus"]).0, 1);
        assert_eq!(run_capture(&["rates", "--sweep", "distance:5:1:3:lin"]).0, 1);
        assert_eq!(run_capture(&["rates", "--eta", "2"]).0, 1);
        assert_eq!(run_capture(&["rates", "--dimension", "1"]).0, 1);
        assert_eq!(run_capture(&["oracle", "--alice-state", "x:9"]).0, 1);
        // Probability underflow leaves no key events at all.
        assert_eq!(
            run_capture(&["rates", "--distance-km", "20000", "--pdc", "0"]).0,
            2
        );
        assert_eq!(
            run_capture(&["simulate", "--dimension", "3", "--rounds", "2000"]).0,
            3
        );
        assert_eq!(run_capture(&["--help"]).0, 0);
    }

    #[test]
    fn optimize_report() {
        let mut cfg = ProtocolConfig::ideal(4, Encoding::Space);
        cfg.channel.detector_efficiency = 0.2;
        cfg.timing.min_pulse_sep_s = 200e-12;
        cfg.timing.pulse_sep_s = 200e-12;
        let r = cmd_optimize(&cfg, Some(40)).unwrap();
        assert!(r.saturation_active);
        assert!((r.n_opt - 22.0).abs() < 1e-9);
        assert!(r.best_dimension.unwrap().abs_diff(22) <= 2);
        cfg.detector.dead_time_s = 0.0;
        let r = cmd_optimize(&cfg, None).unwrap();
        assert!(!r.saturation_active);
        assert_eq!(r.n_opt_rounded, 2);
        assert!(r.numeric_max_bits_per_s.is_none());
    }

    #[test]
    fn simulate_is_deterministic() {
        let args = ["simulate", "--rounds", "20000", "--seed", "5", "--dimension", "2"];
        let a = run_capture(&args);
        let b = run_capture(&args);
        assert_eq!(a.0, 0, "{}", a.2);
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_simulation_matches_exactly() {
        let cfg = ProtocolConfig::ideal(4, Encoding::Space);
        let r = cmd_simulate(&cfg, 50_000, 3, None).unwrap();
        for c in &r.comparisons {
            if c.quantity.starts_with("eps") {
                assert_eq!(c.z_score, Some(0.0), "{c:?}");
            } else {
                assert!(c.z_score.unwrap().abs() < 4.0, "{c:?}");
            }
        }
    }

    #[test]
    fn oracle_hom_and_diagnostic() {
        let noise = NoiseParams {
            sigma: 0.0,
            beta_sq: 1.0,
            phase_model: PhaseModel::SpaceHomogeneous,
        };
        let z0 = StateSpec {
            basis: BasisKind::Z,
            index: 0,
        };
        let r = cmd_oracle(2, z0, z0, &noise, 0, 1).unwrap();
        let bunched: f64 = r
            .rows
            .iter()
            .filter(|x| x.category == OracleCategory::Bunched)
            .map(|x| x.exact)
            .sum();
        assert!((bunched - 1.0).abs() < 1e-12);
        let x0: StateSpec = "x:0".parse().unwrap();
        let r = cmd_oracle(2, x0, x0, &noise, 1000, 1).unwrap();
        assert!((r.double_click.ratio.unwrap() - 2.0).abs() < 1e-9);
        assert!(r.parity.is_some());
        let total: f64 = r.rows.iter().map(|x| x.exact).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_csv_round_trip() {
        let (code, out, err) = run_capture(&["oracle", "--dimension", "4", "--trials", "2000"]);
        assert_eq!(code, 0, "{err}");
        assert!(err.contains("double-click diagnostic"));
        let rows: Vec<OracleRow> = from_csv(&out).unwrap();
        assert_eq!(to_csv(&rows).unwrap(), out);
    }

    #[test]
    fn object_format_is_json() {
        let (code, out, _) = run_capture(&["optimize", "--format", "object", "--eta", "0.2"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!(v["table"].is_array());
        assert_eq!(v["alpha_defaulted"], serde_json::Value::Bool(true));
    }
}
