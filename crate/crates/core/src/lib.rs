//! Link-level Monte Carlo simulation of downlink cell-free massive MIMO-OFDM
//! with oscillator phase noise and nonlinear power amplifiers.
//!
//! The pipeline per channel realization is
//! geometry and large-scale fading ([`channel`]) → RZF precoding
//! ([`precoding`]) → OFDM, phase noise and PA ([`transmit`]) → Monte Carlo
//! Bussgang statistics and effective SINR ([`bussgang`]). [`experiment`]
//! runs that over a grid of hardware scenarios and precoding modes, and
//! [`output`] writes the result bundle.

pub mod bussgang;
pub mod channel;
pub mod config;
pub mod error;
pub mod experiment;
pub mod oracle;
pub mod output;
pub mod precoding;
pub mod rng;
pub mod transmit;

pub use bussgang::{
    effective_sinr, estimate_bussgang_stats, estimate_projected_stats, spectral_efficiency, BussgangStats,
    ProjectedStats, TrialStreams,
};
pub use channel::{ChannelRealization, NetworkDrop};
pub use config::{Config, Dims, ResolvedConfig, PRESET_NAMES};
pub use error::{Error, Result};
pub use experiment::{
    run_experiment, run_experiment_with, CdfSeries, CellResult, ExperimentResult, ScenarioId, ScenarioSpec,
    SeSample,
};
pub use num_complex::Complex64;
pub use precoding::{compute_precoders, Mode, PrecoderSet};
pub use rng::RandomStreams;
pub use transmit::{PaCoefficients, PhaseSource, TransmitChain};
