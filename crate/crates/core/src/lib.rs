//! Closed-form rate engine and event-level simulator for high-dimensional
//! measurement-device-independent QKD on two-dimensional subspaces.
//!
//! Alice and Bob each send a qudit (N spatial paths or N time slots) to an
//! untrusted relay, Charlie, who interferes the two photons on 50:50 beam
//! splitters and announces coincidence clicks. Every announced coincidence
//! projects the pair onto a two-dimensional subspace `{i, j}`, so the key is
//! distilled exactly as in qubit mdi-QKD while the sifting efficiency grows
//! as `2(N-1)/N`.
//!
//! The crate is organized by capability:
//!
//! - [`model`]: configuration types, Z/X bases, detection modes and the
//!   classification of Charlie's announcements (including the Bell-parity rule).
//! - [`analytics`]: closed-form event probabilities, QBERs and secret key rates.
//! - [`saturation`]: detector dead-time model, pulse-spacing optimization and
//!   the optimal dimension.
//! - [`twophoton`]: brute-force two-photon interference oracle.
//! - [`simulator`]: Monte Carlo of the full protocol and of a dead-time timeline.
//! - [`cli`]: table generation behind the `mdiqkd` binary.

pub mod analytics;
pub mod cli;
mod error;
pub mod stats;
pub mod model;
pub mod saturation;
pub mod simulator;
pub mod twophoton;

pub use error::{Error, Result};
pub use model::{
    BasisKind, BasisSet, ChannelParams, DetectorParams, Encoding, NoiseParams, PhaseModel,
    ProtocolConfig, TimingParams,
};
