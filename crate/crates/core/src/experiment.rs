//! Scenario/mode grid over random drops, SE aggregation and paired
//! comparisons between grid cells.
//!
//! Every cell draws geometry, channels, data symbols and phase-noise
//! trajectories from the same labelled substreams, so two cells differ only
//! in the hardware model or precoder. Differences between cells are then
//! paired comparisons, and their standard errors are estimated by resampling
//! whole drops.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bussgang::{estimate_projected_stats, spectral_efficiency, TrialStreams};
use crate::channel::NetworkDrop;
use crate::config::{ImpairmentConfig, ImpairmentParams, ResolvedConfig, SimulationConfig};
use crate::error::{Error, Result};
use crate::precoding::{compute_precoders, Mode, PrecoderSet};
use crate::rng::{Purpose, RandomStreams};
use crate::transmit::{PaCoefficients, PhaseSource, TransmitChain};
use rand::Rng;

/// Hardware scenario of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    Perfect,
    PnPa,
    PnOnly,
    PaOnly,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 4] = [
        ScenarioId::Perfect,
        ScenarioId::PnPa,
        ScenarioId::PnOnly,
        ScenarioId::PaOnly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioId::Perfect => "perfect",
            ScenarioId::PnPa => "pn_pa",
            ScenarioId::PnOnly => "pn_only",
            ScenarioId::PaOnly => "pa_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.as_str() == s)
    }

    pub fn phase_noise(&self) -> bool {
        matches!(self, ScenarioId::PnPa | ScenarioId::PnOnly)
    }

    pub fn amplifier(&self) -> bool {
        matches!(self, ScenarioId::PnPa | ScenarioId::PaOnly)
    }

    /// Resolves `cfg` with the impairment switches forced to this scenario.
    pub fn impairments(&self, cfg: &ImpairmentConfig, aps: usize, sample_period_s: f64) -> Result<ImpairmentParams> {
        let mut cfg = cfg.clone();
        cfg.pn_enabled = self.phase_noise();
        cfg.pa_enabled = self.amplifier();
        cfg.resolve(aps, sample_period_s)
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One cell of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioSpec {
    pub scenario: ScenarioId,
    pub mode: Mode,
    pub drops: usize,
    pub realizations_per_drop: usize,
    pub trials: usize,
    pub block_diag_distortion: bool,
}

impl ScenarioSpec {
    /// Cells in scenario-major order.
    pub fn grid(sim: &SimulationConfig) -> Vec<Self> {
        sim.scenarios
            .iter()
            .flat_map(|&scenario| {
                sim.modes.iter().map(move |&mode| ScenarioSpec {
                    scenario,
                    mode,
                    drops: sim.drops,
                    realizations_per_drop: sim.realizations_per_drop,
                    trials: sim.trials,
                    block_diag_distortion: sim.block_diag_distortion,
                })
            })
            .collect()
    }

    pub fn label(&self) -> String {
        format!("{}_{}", self.scenario, self.mode)
    }
}

/// SINR and SE of one UE on one subcarrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeSample {
    pub drop: u64,
    pub realization: u32,
    pub ue: u32,
    pub subcarrier: u32,
    pub sinr: f64,
    pub se_bits: f64,
}

impl SeSample {
    pub fn sinr_db(&self) -> f64 {
        10.0 * self.sinr.log10()
    }
}

#[derive(Debug, Clone)]
pub struct DropResult {
    pub drop: u64,
    /// Ordered by realization, UE, subcarrier.
    pub samples: Vec<SeSample>,
    /// UEs whose precoder came out as zero, summed over subcarriers and
    /// realizations.
    pub degenerate_precoders: usize,
}

/// Wires the scenario's hardware model around a set of precoders.
pub fn scenario_chain<'a>(
    imp: &'a ImpairmentParams,
    precoders: &'a PrecoderSet,
    pa: Option<&'a PaCoefficients>,
) -> Result<TransmitChain<'a>> {
    let phase = if imp.pn_enabled {
        PhaseSource::Ar1(&imp.phase_noise)
    } else {
        PhaseSource::Off
    };
    TransmitChain::new(precoders, phase, if imp.pa_enabled { pa } else { None })
}

/// Runs every channel realization of one drop for one grid cell.
pub fn run_drop(resolved: &ResolvedConfig, spec: &ScenarioSpec, drop: u64, streams: &RandomStreams) -> Result<DropResult> {
    let sys = &resolved.system;
    let d = sys.dims;
    let imp = spec
        .scenario
        .impairments(&resolved.config.impairments, d.aps, sys.sample_period_s)?;
    let network = NetworkDrop::generate(sys, &resolved.config.channel, streams, drop).map_err(|e| e.in_drop(drop, 0))?;
    let mut samples = Vec::with_capacity(spec.realizations_per_drop * d.ues * d.subcarriers);
    let mut degenerate = 0;
    for r in 0..spec.realizations_per_drop as u32 {
        let annotate = |e: Error| e.in_drop(drop, r as u64);
        let channel = network.realization(streams, r).map_err(annotate)?;
        let precoders = compute_precoders(spec.mode, &channel, sys.rzf_lambda_w, sys.rho_max_w).map_err(annotate)?;
        degenerate += precoders.degenerate;
        let pa = imp.pa_enabled.then(|| PaCoefficients::for_precoders(&imp.pa, &precoders));
        let chain = scenario_chain(&imp, &precoders, pa.as_ref()).map_err(annotate)?;
        let ts = TrialStreams::new(*streams, drop, r);
        let stats = estimate_projected_stats(&chain, &channel, spec.trials, &ts, spec.block_diag_distortion)
            .map_err(annotate)?;
        let sinr = stats.effective_sinr(sys.noise_power_w).map_err(annotate)?;
        for k in 0..d.ues {
            for m in 0..d.subcarriers {
                let g = sinr[k * d.subcarriers + m];
                samples.push(SeSample {
                    drop,
                    realization: r,
                    ue: k as u32,
                    subcarrier: m as u32,
                    sinr: g,
                    se_bits: spectral_efficiency(g).map_err(annotate)?,
                });
            }
        }
    }
    Ok(DropResult {
        drop,
        samples,
        degenerate_precoders: degenerate,
    })
}

/// All samples of one grid cell, in drop order.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub spec: ScenarioSpec,
    pub drops: Vec<DropResult>,
}

impl CellResult {
    pub fn samples(&self) -> impl Iterator<Item = &SeSample> {
        self.drops.iter().flat_map(|d| d.samples.iter())
    }

    pub fn sample_count(&self) -> usize {
        self.drops.iter().map(|d| d.samples.len()).sum()
    }

    pub fn degenerate_precoders(&self) -> usize {
        self.drops.iter().map(|d| d.degenerate_precoders).sum()
    }

    fn se_by_drop(&self) -> Vec<Vec<f64>> {
        self.drops
            .iter()
            .map(|d| d.samples.iter().map(|s| s.se_bits).collect())
            .collect()
    }
}

/// Runs all drops of one cell. Drops are processed in parallel and collected
/// in order.
pub fn run_cell(resolved: &ResolvedConfig, spec: &ScenarioSpec, streams: &RandomStreams) -> Result<CellResult> {
    let drops = (0..spec.drops as u64)
        .into_par_iter()
        .map(|drop| run_drop(resolved, spec, drop, streams))
        .collect::<Result<Vec<_>>>()?;
    Ok(CellResult { spec: *spec, drops })
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Aggregation("percentile of an empty sample".into()));
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

fn sorted_copy(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn median_of(values: impl IntoIterator<Item = f64>) -> Result<f64> {
    percentile(&sorted_copy(values), 0.5)
}

/// Empirical SE distribution of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfSeries {
    pub scenario: ScenarioId,
    pub mode: Mode,
    pub sorted_se: Vec<f64>,
    pub median: f64,
    pub p10: f64,
    pub mean: f64,
}

impl CdfSeries {
    pub fn from_values(scenario: ScenarioId, mode: Mode, values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let sorted_se = sorted_copy(values);
        if sorted_se.is_empty() {
            return Err(Error::Aggregation(format!("no samples for {scenario}_{mode}")));
        }
        if sorted_se.iter().any(|v| !v.is_finite()) {
            return Err(Error::Aggregation(format!("non-finite SE sample in {scenario}_{mode}")));
        }
        Ok(Self {
            scenario,
            mode,
            median: percentile(&sorted_se, 0.5)?,
            p10: percentile(&sorted_se, 0.1)?,
            mean: sorted_se.iter().sum::<f64>() / sorted_se.len() as f64,
            sorted_se,
        })
    }

    pub fn len(&self) -> usize {
        self.sorted_se.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_se.is_empty()
    }

    /// `(x_(i), i / n)` for `i = 1..=n`.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.sorted_se.len() as f64;
        self.sorted_se
            .iter()
            .enumerate()
            .map(move |(i, &x)| (x, (i + 1) as f64 / n))
    }
}

pub fn aggregate_cdf(cell: &CellResult) -> Result<CdfSeries> {
    CdfSeries::from_values(cell.spec.scenario, cell.spec.mode, cell.samples().map(|s| s.se_bits))
}

pub const BOOTSTRAP_REPLICATES: usize = 400;

/// Point estimate and drop-bootstrap standard error of a linear combination
/// of cell medians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MedianContrast {
    pub estimate: f64,
    pub std_error: f64,
}

impl MedianContrast {
    /// Estimate divided by its standard error.
    pub fn z_score(&self) -> f64 {
        self.estimate / self.std_error
    }
}

/// `sum_i weight_i * median(cell_i)` with drops resampled jointly across
/// all cells, which keeps the pairing intact.
pub fn paired_median_contrast<R: Rng + ?Sized>(
    terms: &[(&CellResult, f64)],
    replicates: usize,
    rng: &mut R,
) -> Result<MedianContrast> {
    let Some((first, _)) = terms.first() else {
        return Err(Error::Aggregation("empty contrast".into()));
    };
    let drops: Vec<u64> = first.drops.iter().map(|d| d.drop).collect();
    if drops.is_empty() {
        return Err(Error::Aggregation("contrast over a cell without drops".into()));
    }
    for (cell, _) in terms {
        if cell.drops.iter().map(|d| d.drop).ne(drops.iter().copied()) {
            return Err(Error::Aggregation(format!(
                "cell {} does not share the drops of {}",
                cell.spec.label(),
                first.spec.label()
            )));
        }
    }
    let by_drop: Vec<Vec<Vec<f64>>> = terms.iter().map(|(c, _)| c.se_by_drop()).collect();
    let contrast = |picks: &[usize]| -> Result<f64> {
        let mut total = 0.0;
        for ((_, w), cell) in terms.iter().zip(&by_drop) {
            total += w * median_of(picks.iter().flat_map(|&p| cell[p].iter().copied()))?;
        }
        Ok(total)
    };
    let identity: Vec<usize> = (0..drops.len()).collect();
    let estimate = contrast(&identity)?;
    let mut picks = vec![0; drops.len()];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..replicates {
        picks.iter_mut().for_each(|p| *p = rng.random_range(0..drops.len()));
        let v = contrast(&picks)?;
        sum += v;
        sum_sq += v * v;
    }
    let n = replicates as f64;
    let var = if replicates > 1 {
        ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(MedianContrast {
        estimate,
        std_error: var.sqrt(),
    })
}

#[derive(Debug)]
pub struct CellOutcome {
    pub spec: ScenarioSpec,
    pub result: Result<CellResult>,
}

/// Results of the whole grid. Failed cells keep their error; the others are
/// unaffected.
#[derive(Debug)]
pub struct ExperimentResult {
    pub seed: u64,
    pub outcomes: Vec<CellOutcome>,
}

impl ExperimentResult {
    pub fn cell(&self, scenario: ScenarioId, mode: Mode) -> Option<&CellResult> {
        self.outcomes
            .iter()
            .find(|o| o.spec.scenario == scenario && o.spec.mode == mode)
            .and_then(|o| o.result.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = (&ScenarioSpec, &Error)> {
        self.outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().err().map(|e| (&o.spec, e)))
    }

    pub fn is_complete(&self) -> bool {
        self.failures().next().is_none()
    }

    /// Paired median contrast under a bootstrap stream that depends only on
    /// the master seed and `tag`.
    pub fn contrast(&self, terms: &[(ScenarioId, Mode, f64)], tag: u32) -> Result<MedianContrast> {
        let cells = terms
            .iter()
            .map(|&(s, m, w)| {
                self.cell(s, m)
                    .map(|c| (c, w))
                    .ok_or_else(|| Error::Aggregation(format!("cell {s}_{m} is not available")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rng = RandomStreams::new(self.seed).labelled(Purpose::Bootstrap, 0, tag, 0);
        paired_median_contrast(&cells, BOOTSTRAP_REPLICATES, &mut rng)
    }

    /// `median(a) - median(b)`.
    pub fn median_gap(&self, a: (ScenarioId, Mode), b: (ScenarioId, Mode), tag: u32) -> Result<MedianContrast> {
        self.contrast(&[(a.0, a.1, 1.0), (b.0, b.1, -1.0)], tag)
    }
}

/// Runs the grid cell by cell, calling `on_cell` as each finishes.
pub fn run_experiment_with(resolved: &ResolvedConfig, mut on_cell: impl FnMut(&CellOutcome)) -> ExperimentResult {
    let sim = &resolved.config.simulation;
    let streams = RandomStreams::new(sim.seed);
    let mut outcomes = Vec::new();
    for spec in ScenarioSpec::grid(sim) {
        let outcome = CellOutcome {
            spec,
            result: run_cell(resolved, &spec, &streams),
        };
        on_cell(&outcome);
        outcomes.push(outcome);
    }
    ExperimentResult {
        seed: sim.seed,
        outcomes,
    }
}

pub fn run_experiment(resolved: &ResolvedConfig) -> ExperimentResult {
    run_experiment_with(resolved, |_| {})
}
