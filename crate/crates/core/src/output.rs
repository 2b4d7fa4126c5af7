//! On-disk result bundle.
//!
//! ```text
//! <out>/summary.json
//! <out>/<scenario>_<mode>/samples.csv   drop,scenario,mode,ue,subcarrier,sinr_db,se_bits
//! <out>/<scenario>_<mode>/cdf.csv       se_bits,cdf
//! ```
//!
//! Floats are written in shortest round-trip form. With a timestamp, each CSV
//! starts with a `# generated_unix=<secs>` line; without one the files are a
//! pure function of the configuration.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::experiment::{aggregate_cdf, CellResult, ExperimentResult, MedianContrast, ScenarioId};
use crate::precoding::Mode;

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub scenario: ScenarioId,
    pub mode: Mode,
    /// `ok` or `failed`
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub samples: usize,
    pub median_se: Option<f64>,
    pub p10_se: Option<f64>,
    pub mean_se: Option<f64>,
    pub degenerate_precoders: usize,
}

/// Paired comparison of cell medians.
#[derive(Debug, Clone, Serialize)]
pub struct ContrastSummary {
    /// Human-readable definition, e.g. `perfect_distributed - pn_only_distributed`.
    pub contrast: String,
    pub estimate: f64,
    pub paired_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub drops: usize,
    pub realizations_per_drop: usize,
    pub trials: usize,
    pub block_diag_distortion: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_unix: Option<u64>,
    pub cells: Vec<CellSummary>,
    pub median_gaps: Vec<ContrastSummary>,
    /// Impairment loss in distributed minus impairment loss in centralized.
    pub gap_differences: Vec<ContrastSummary>,
}

fn cell_name(s: ScenarioId, m: Mode) -> String {
    format!("{s}_{m}")
}

fn push_contrast(out: &mut Vec<ContrastSummary>, name: String, c: Result<MedianContrast>) {
    if let Ok(c) = c {
        out.push(ContrastSummary {
            contrast: name,
            estimate: c.estimate,
            paired_se: c.std_error,
        });
    }
}

/// Medians of every cell plus all pairwise scenario gaps within a mode, mode
/// gaps within a scenario, and the mode difference of each impairment loss.
pub fn summarize(result: &ExperimentResult, config: &Config, generated_unix: Option<u64>) -> Summary {
    let sim = &config.simulation;
    let cells = result
        .outcomes
        .iter()
        .map(|o| {
            let (status, error, samples, stats, degenerate) = match &o.result {
                Ok(cell) => {
                    let cdf = aggregate_cdf(cell).ok();
                    (
                        "ok",
                        None,
                        cell.sample_count(),
                        cdf.map(|c| (c.median, c.p10, c.mean)),
                        cell.degenerate_precoders(),
                    )
                }
                Err(e) => ("failed", Some(e.to_string()), 0, None, 0),
            };
            CellSummary {
                scenario: o.spec.scenario,
                mode: o.spec.mode,
                status,
                error,
                samples,
                median_se: stats.map(|s| s.0),
                p10_se: stats.map(|s| s.1),
                mean_se: stats.map(|s| s.2),
                degenerate_precoders: degenerate,
            }
        })
        .collect();

    let mut tag = 0;
    let mut next_tag = || {
        tag += 1;
        tag
    };
    let mut median_gaps = Vec::new();
    for &mode in &sim.modes {
        for (i, &a) in sim.scenarios.iter().enumerate() {
            for &b in &sim.scenarios[i + 1..] {
                let c = result.median_gap((a, mode), (b, mode), next_tag());
                push_contrast(&mut median_gaps, format!("{} - {}", cell_name(a, mode), cell_name(b, mode)), c);
            }
        }
    }
    for &s in &sim.scenarios {
        for (i, &a) in sim.modes.iter().enumerate() {
            for &b in &sim.modes[i + 1..] {
                let c = result.median_gap((s, a), (s, b), next_tag());
                push_contrast(&mut median_gaps, format!("{} - {}", cell_name(s, a), cell_name(s, b)), c);
            }
        }
    }
    let mut gap_differences = Vec::new();
    let (p, cen, dis) = (ScenarioId::Perfect, Mode::Centralized, Mode::Distributed);
    for &s in sim.scenarios.iter().filter(|&&s| s != p) {
        let c = result.contrast(&[(p, dis, 1.0), (s, dis, -1.0), (p, cen, -1.0), (s, cen, 1.0)], next_tag());
        push_contrast(
            &mut gap_differences,
            format!(
                "({} - {}) - ({} - {})",
                cell_name(p, dis),
                cell_name(s, dis),
                cell_name(p, cen),
                cell_name(s, cen)
            ),
            c,
        );
    }

    Summary {
        seed: sim.seed,
        drops: sim.drops,
        realizations_per_drop: sim.realizations_per_drop,
        trials: sim.trials,
        block_diag_distortion: sim.block_diag_distortion,
        generated_unix,
        cells,
        median_gaps,
        gap_differences,
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn header(w: &mut impl Write, generated_unix: Option<u64>) -> std::io::Result<()> {
    if let Some(t) = generated_unix {
        writeln!(w, "# generated_unix={t}")?;
    }
    Ok(())
}

/// Per-sample table of one cell.
pub fn write_samples_csv(w: &mut impl Write, cell: &CellResult, generated_unix: Option<u64>) -> std::io::Result<()> {
    header(w, generated_unix)?;
    writeln!(w, "drop,scenario,mode,ue,subcarrier,sinr_db,se_bits")?;
    let (s, m) = (cell.spec.scenario, cell.spec.mode);
    for x in cell.samples() {
        writeln!(w, "{},{s},{m},{},{},{:?},{:?}", x.drop, x.ue, x.subcarrier, x.sinr_db(), x.se_bits)?;
    }
    Ok(())
}

pub fn write_cdf_csv(w: &mut impl Write, cell: &CellResult, generated_unix: Option<u64>) -> Result<()> {
    let cdf = aggregate_cdf(cell)?;
    let io = |e| Error::Aggregation(format!("writing CDF: {e}"));
    header(w, generated_unix).map_err(io)?;
    writeln!(w, "se_bits,cdf").map_err(io)?;
    for (x, f) in cdf.points() {
        writeln!(w, "{x:?},{f:?}").map_err(io)?;
    }
    Ok(())
}

/// Writes the whole bundle under `out`, creating directories as needed.
/// Failed cells get no subdirectory.
pub fn write_bundle(out: &Path, result: &ExperimentResult, summary: &Summary) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for outcome in &result.outcomes {
        let Ok(cell) = &outcome.result else { continue };
        let dir = out.join(outcome.spec.label());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

        let path = dir.join("samples.csv");
        let mut w = create(&path)?;
        write_samples_csv(&mut w, cell, summary.generated_unix)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))?;

        let path = dir.join("cdf.csv");
        let mut w = create(&path)?;
        write_cdf_csv(&mut w, cell, summary.generated_unix)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let path = out.join("summary.json");
    let text = serde_json::to_string_pretty(summary).map_err(|e| Error::Aggregation(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}
