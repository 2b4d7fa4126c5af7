//! Scenario configuration, derived constants and the built-in presets.
//!
//! The on-disk format is TOML with four tables:
//!
//! ```toml
//! [system]       # dimensions, radio constants, powers
//! [channel]      # clustered delay/angle profile
//! [impairments]  # phase noise and PA parameters
//! [simulation]   # seed, drop/trial counts, scenario grid
//! ```
//!
//! All powers are kept in watts once the configuration is resolved; dB and
//! dBm only appear in the file and in reports.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ScenarioId;
use crate::precoding::Mode;

/// Thermal noise density at room temperature.
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

/// Array dimensions shared by every stage of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub aps: usize,
    pub ues: usize,
    pub antennas: usize,
    pub subcarriers: usize,
    pub taps: usize,
}

impl Dims {
    /// Total transmit antennas, `L * N`.
    #[inline]
    pub fn total_antennas(&self) -> usize {
        self.aps * self.antennas
    }

    #[inline]
    pub fn cp_len(&self) -> usize {
        self.taps - 1
    }

    /// Samples per OFDM symbol including the cyclic prefix.
    #[inline]
    pub fn symbol_len(&self) -> usize {
        self.subcarriers + self.cp_len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub num_aps: usize,
    pub num_ues: usize,
    pub antennas_per_ap: usize,
    pub subcarriers: usize,
    pub taps: usize,
    pub subcarrier_spacing_hz: f64,
    pub carrier_freq_ghz: f64,
    pub area_side_m: f64,
    pub ap_ue_height_diff_m: f64,
    pub noise_figure_db: f64,
    pub rho_max_w: f64,
    /// RZF regularization as a multiple of the noise power.
    pub rzf_lambda_noise_multiple: f64,
    /// Absolute RZF regularization in watts; overrides the multiple when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rzf_lambda_w: Option<f64>,
    pub n_coh: usize,
    pub shadow_std_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModelConfig {
    pub clusters: usize,
    /// Delay decay constant of the cluster power profile, in taps.
    pub sv_decay_taps: f64,
    /// Total width of the angular window around the line-of-sight direction.
    pub angular_neighborhood_deg: f64,
    pub subrays: usize,
    /// Standard deviation of the sub-ray angles around each cluster angle.
    pub subray_spread_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpairmentConfig {
    pub pn_enabled: bool,
    pub pn_correlation: f64,
    pub pn_innovation_rate_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pn_correlation_per_ap: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pn_innovation_rate_per_ap: Option<Vec<f64>>,
    pub pa_enabled: bool,
    /// `[re, im]`
    pub pa_b1_norm: Complex64,
    /// `[re, im]`
    pub pa_b2_norm: Complex64,
    pub pa_backoff_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub drops: usize,
    pub realizations_per_drop: usize,
    pub trials: usize,
    #[serde(default)]
    pub block_diag_distortion: bool,
    pub scenarios: Vec<ScenarioId>,
    pub modes: Vec<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SystemConfig,
    pub channel: ChannelModelConfig,
    pub impairments: ImpairmentConfig,
    pub simulation: SimulationConfig,
}

/// Receiver noise power in both units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisePower {
    pub watts: f64,
    pub dbm: f64,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Thermal noise over `bandwidth_hz` raised by the receiver noise figure.
pub fn noise_power(bandwidth_hz: f64, noise_figure_db: f64) -> Result<NoisePower> {
    if !(bandwidth_hz > 0.0 && bandwidth_hz.is_finite()) {
        return Err(Error::config("bandwidth_hz", "must be positive and finite"));
    }
    if !noise_figure_db.is_finite() {
        return Err(Error::config("noise_figure_db", "must be finite"));
    }
    let dbm = THERMAL_NOISE_DBM_PER_HZ + 10.0 * bandwidth_hz.log10() + noise_figure_db;
    Ok(NoisePower {
        watts: dbm_to_watts(dbm),
        dbm,
    })
}

/// Innovation variance of the AR(1) phase process, `2 pi beta T_s` (rad^2).
pub fn phase_innovation_variance(innovation_rate_hz: f64, sample_period_s: f64) -> f64 {
    2.0 * std::f64::consts::PI * innovation_rate_hz * sample_period_s
}

/// Fully resolved system constants. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    pub dims: Dims,
    pub subcarrier_spacing_hz: f64,
    pub bandwidth_hz: f64,
    pub sample_period_s: f64,
    pub carrier_freq_ghz: f64,
    pub area_side_m: f64,
    pub ap_ue_height_diff_m: f64,
    pub noise_figure_db: f64,
    pub noise_power_w: f64,
    pub noise_power_dbm: f64,
    pub rho_max_w: f64,
    pub rzf_lambda_w: f64,
    pub n_coh: usize,
    pub t_coh_s: f64,
    pub shadow_std_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseNoiseParams {
    pub correlation: f64,
    /// Variance of the AR(1) innovation, rad^2.
    pub innovation_variance: f64,
}

impl PhaseNoiseParams {
    /// Marginal variance of the stationary process.
    pub fn stationary_variance(&self) -> f64 {
        self.innovation_variance / (1.0 - self.correlation * self.correlation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaModel {
    pub b1_norm: Complex64,
    pub b2_norm: Complex64,
    pub backoff_db: f64,
    pub backoff_linear: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpairmentParams {
    pub pn_enabled: bool,
    /// One entry per AP.
    pub phase_noise: Vec<PhaseNoiseParams>,
    pub pa_enabled: bool,
    pub pa: PaModel,
}

impl ImpairmentParams {
    /// Ideal hardware on `aps` access points.
    pub fn ideal(aps: usize) -> Self {
        Self {
            pn_enabled: false,
            phase_noise: vec![
                PhaseNoiseParams {
                    correlation: 0.0,
                    innovation_variance: 0.0,
                };
                aps
            ],
            pa_enabled: false,
            pa: PaModel {
                b1_norm: Complex64::new(1.0, 0.0),
                b2_norm: Complex64::new(0.0, 0.0),
                backoff_db: 0.0,
                backoff_linear: 1.0,
            },
        }
    }
}

fn check(cond: bool, field: &'static str, reason: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::config(field, reason))
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

impl SystemConfig {
    pub fn resolve(&self) -> Result<SystemParams> {
        check(self.num_aps >= 1, "num_aps", "must be at least 1")?;
        check(self.num_ues >= 1, "num_ues", "must be at least 1")?;
        check(self.antennas_per_ap >= 1, "antennas_per_ap", "must be at least 1")?;
        check(self.taps >= 1, "taps", "must be at least 1")?;
        check(
            self.subcarriers >= self.taps,
            "subcarriers",
            &format!(
                "must satisfy M >= R (got M = {}, R = {})",
                self.subcarriers, self.taps
            ),
        )?;
        check(
            positive(self.subcarrier_spacing_hz),
            "subcarrier_spacing_hz",
            "must be positive",
        )?;
        check(positive(self.carrier_freq_ghz), "carrier_freq_ghz", "must be positive")?;
        check(positive(self.area_side_m), "area_side_m", "must be positive")?;
        check(
            self.ap_ue_height_diff_m >= 0.0 && self.ap_ue_height_diff_m.is_finite(),
            "ap_ue_height_diff_m",
            "must be non-negative",
        )?;
        check(positive(self.rho_max_w), "rho_max_w", "must be positive")?;
        check(
            self.shadow_std_db >= 0.0 && self.shadow_std_db.is_finite(),
            "shadow_std_db",
            "must be non-negative",
        )?;
        check(self.n_coh >= 1, "n_coh", "must be at least 1")?;

        let bandwidth_hz = self.subcarriers as f64 * self.subcarrier_spacing_hz;
        let sample_period_s = 1.0 / bandwidth_hz;
        let noise = noise_power(bandwidth_hz, self.noise_figure_db)?;
        let rzf_lambda_w = match self.rzf_lambda_w {
            Some(v) => v,
            None => self.rzf_lambda_noise_multiple * noise.watts,
        };
        check(positive(rzf_lambda_w), "rzf_lambda", "must be positive")?;
        check(positive(noise.watts), "noise_power_w", "must be positive")?;

        let dims = Dims {
            aps: self.num_aps,
            ues: self.num_ues,
            antennas: self.antennas_per_ap,
            subcarriers: self.subcarriers,
            taps: self.taps,
        };
        Ok(SystemParams {
            dims,
            subcarrier_spacing_hz: self.subcarrier_spacing_hz,
            bandwidth_hz,
            sample_period_s,
            carrier_freq_ghz: self.carrier_freq_ghz,
            area_side_m: self.area_side_m,
            ap_ue_height_diff_m: self.ap_ue_height_diff_m,
            noise_figure_db: self.noise_figure_db,
            noise_power_w: noise.watts,
            noise_power_dbm: noise.dbm,
            rho_max_w: self.rho_max_w,
            rzf_lambda_w,
            n_coh: self.n_coh,
            t_coh_s: self.n_coh as f64 * dims.symbol_len() as f64 * sample_period_s,
            shadow_std_db: self.shadow_std_db,
        })
    }
}

fn per_ap(
    shared: f64,
    overrides: &Option<Vec<f64>>,
    aps: usize,
    field: &'static str,
) -> Result<Vec<f64>> {
    match overrides {
        None => Ok(vec![shared; aps]),
        Some(v) if v.len() == aps => Ok(v.clone()),
        Some(v) => Err(Error::config(
            field,
            format!("has {} entries but there are {aps} APs", v.len()),
        )),
    }
}

impl ImpairmentConfig {
    pub fn resolve(&self, aps: usize, sample_period_s: f64) -> Result<ImpairmentParams> {
        let correlations = per_ap(
            self.pn_correlation,
            &self.pn_correlation_per_ap,
            aps,
            "pn_correlation_per_ap",
        )?;
        let rates = per_ap(
            self.pn_innovation_rate_hz,
            &self.pn_innovation_rate_per_ap,
            aps,
            "pn_innovation_rate_per_ap",
        )?;
        if self.pn_enabled {
            for &c in &correlations {
                check(c > 0.0 && c < 1.0, "pn_correlation", "must lie in (0, 1)")?;
            }
            for &b in &rates {
                check(
                    b >= 0.0 && b.is_finite(),
                    "pn_innovation_rate_hz",
                    "must be non-negative",
                )?;
            }
        }
        let phase_noise = correlations
            .iter()
            .zip(&rates)
            .map(|(&correlation, &rate)| PhaseNoiseParams {
                correlation,
                innovation_variance: phase_innovation_variance(rate, sample_period_s),
            })
            .collect();

        let backoff_linear = db_to_linear(self.pa_backoff_db);
        if self.pa_enabled {
            check(
                backoff_linear >= 1.0 && backoff_linear.is_finite(),
                "pa_backoff_db",
                "must give a linear backoff >= 1",
            )?;
            check(
                self.pa_b1_norm.is_finite() && self.pa_b2_norm.is_finite(),
                "pa_b1_norm",
                "PA coefficients must be finite",
            )?;
        }
        Ok(ImpairmentParams {
            pn_enabled: self.pn_enabled,
            phase_noise,
            pa_enabled: self.pa_enabled,
            pa: PaModel {
                b1_norm: self.pa_b1_norm,
                b2_norm: self.pa_b2_norm,
                backoff_db: self.pa_backoff_db,
                backoff_linear,
            },
        })
    }
}

impl ChannelModelConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.clusters >= 1, "clusters", "must be at least 1")?;
        check(positive(self.sv_decay_taps), "sv_decay_taps", "must be positive")?;
        check(
            self.angular_neighborhood_deg >= 0.0 && self.angular_neighborhood_deg <= 360.0,
            "angular_neighborhood_deg",
            "must lie in [0, 360]",
        )?;
        check(self.subrays >= 1, "subrays", "must be at least 1")?;
        check(
            self.subray_spread_deg >= 0.0 && self.subray_spread_deg.is_finite(),
            "subray_spread_deg",
            "must be non-negative",
        )
    }
}

impl SimulationConfig {
    pub fn validate(&self, dims: &Dims) -> Result<()> {
        check(self.drops >= 1, "drops", "must be at least 1")?;
        check(
            self.realizations_per_drop >= 1,
            "realizations_per_drop",
            "must be at least 1",
        )?;
        check(
            self.trials >= dims.ues,
            "trials",
            &format!(
                "must be at least the number of UEs ({}) so the symbol covariance is invertible",
                dims.ues
            ),
        )?;
        check(!self.scenarios.is_empty(), "scenarios", "must not be empty")?;
        check(!self.modes.is_empty(), "modes", "must not be empty")?;
        for (i, s) in self.scenarios.iter().enumerate() {
            check(
                !self.scenarios[..i].contains(s),
                "scenarios",
                &format!("lists `{}` more than once", s.as_str()),
            )?;
        }
        for (i, m) in self.modes.iter().enumerate() {
            check(
                !self.modes[..i].contains(m),
                "modes",
                &format!("lists `{}` more than once", m.as_str()),
            )?;
        }
        Ok(())
    }
}

/// A validated configuration together with everything derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub config: Config,
    pub system: SystemParams,
    pub impairments: ImpairmentParams,
}

/// Resolves the system and impairment blocks together.
pub fn derive_constants(
    system: &SystemConfig,
    impairments: &ImpairmentConfig,
) -> Result<(SystemParams, ImpairmentParams)> {
    let sys = system.resolve()?;
    let imp = impairments.resolve(sys.dims.aps, sys.sample_period_s)?;
    Ok((sys, imp))
}

pub const PRESET_NAMES: &[&str] = &["paper-sec4", "desk"];

impl Config {
    /// Full-scale reference configuration: 16 four-antenna APs serving 10
    /// UEs over 256 subcarriers at 15 kHz spacing.
    pub fn reference() -> Self {
        Config {
            system: SystemConfig {
                num_aps: 16,
                num_ues: 10,
                antennas_per_ap: 4,
                subcarriers: 256,
                taps: 6,
                subcarrier_spacing_hz: 15e3,
                carrier_freq_ghz: 7.5,
                area_side_m: 500.0,
                ap_ue_height_diff_m: 10.0,
                noise_figure_db: 7.0,
                rho_max_w: 2.0,
                rzf_lambda_noise_multiple: 10.0,
                rzf_lambda_w: None,
                n_coh: 50,
                shadow_std_db: 8.2,
            },
            channel: ChannelModelConfig {
                clusters: 5,
                sv_decay_taps: 2.0,
                angular_neighborhood_deg: 40.0,
                subrays: 100,
                subray_spread_deg: 5.0,
            },
            impairments: ImpairmentConfig {
                pn_enabled: true,
                pn_correlation: 0.99,
                pn_innovation_rate_hz: 1e3,
                pn_correlation_per_ap: None,
                pn_innovation_rate_per_ap: None,
                pa_enabled: true,
                pa_b1_norm: Complex64::new(1.0, 0.0),
                pa_b2_norm: Complex64::new(-1.0 / 3.0, 0.0),
                pa_backoff_db: 7.0,
            },
            simulation: SimulationConfig {
                seed: 1,
                drops: 20,
                realizations_per_drop: 1,
                trials: 2000,
                block_diag_distortion: false,
                scenarios: ScenarioId::ALL.to_vec(),
                modes: vec![Mode::Centralized, Mode::Distributed],
            },
        }
    }

    /// The reference configuration reduced to 64 subcarriers. The subcarrier
    /// spacing is raised to 60 kHz so bandwidth, sample period, noise power
    /// and phase-noise statistics are unchanged.
    pub fn desk() -> Self {
        let mut cfg = Self::reference();
        cfg.system.subcarriers = 64;
        cfg.system.subcarrier_spacing_hz = 60e3;
        cfg
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper-sec4" => Some(Self::reference()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let (system, impairments) = derive_constants(&self.system, &self.impairments)?;
        self.channel.validate()?;
        self.simulation.validate(&system.dims)?;
        Ok(ResolvedConfig {
            config: self.clone(),
            system,
            impairments,
        })
    }
}
