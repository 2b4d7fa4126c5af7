//! Self-contained checks against closed forms and brute-force simulation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::bussgang::{estimate_bussgang_stats, TrialStreams};
use crate::channel::ChannelRealization;
use crate::config::{Dims, PaModel, PhaseNoiseParams};
use crate::error::{Error, Result};
use crate::precoding::{Mode, PrecoderSet};
use crate::rng::{complex_gaussian, Purpose, RandomStreams};
use crate::transmit::{fill_phase_trajectory, propagate_and_receive, PaCoefficients, PhaseSource, TransmitChain};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub name: &'static str,
    pub measured: f64,
    pub expected: f64,
    /// Absolute tolerance on `measured - expected`.
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleReport {
    fn new(name: &'static str, measured: f64, expected: f64, tolerance: f64) -> Self {
        Self {
            name,
            measured,
            expected,
            tolerance,
            passed: (measured - expected).abs() <= tolerance,
        }
    }
}

/// Bussgang gain of `b1 x + b2 |x|^2 x` for circular Gaussian `x` after AGC
/// scaling: `b1_norm + 2 b2_norm / backoff`.
pub fn gaussian_bussgang_gain(model: &PaModel) -> Complex64 {
    model.b1_norm + 2.0 * model.b2_norm / model.backoff_linear
}

pub fn reference_pa() -> PaModel {
    PaModel {
        b1_norm: Complex64::new(1.0, 0.0),
        b2_norm: Complex64::new(-1.0 / 3.0, 0.0),
        backoff_db: 7.0,
        backoff_linear: 10f64.powf(0.7),
    }
}

const SCALAR_SUBCARRIERS: usize = 64;

fn scalar_precoders(amplitude: f64) -> Result<PrecoderSet> {
    let d = Dims { aps: 1, ues: 1, antennas: 1, subcarriers: SCALAR_SUBCARRIERS, taps: 1 };
    let mats = vec![DMatrix::from_element(1, 1, Complex64::new(amplitude, 0.0)); SCALAR_SUBCARRIERS];
    PrecoderSet::from_matrices(Mode::Centralized, d, &mats)
}

/// Normalized gain estimated through the full Monte Carlo estimator from
/// about `samples` Gaussian PA input samples, averaged over subcarriers.
pub fn estimated_scalar_gain(model: &PaModel, samples: usize, streams: RandomStreams, tag: u64) -> Result<Complex64> {
    let amplitude = 0.3;
    let w = scalar_precoders(amplitude)?;
    let pa = PaCoefficients::for_precoders(model, &w);
    let chain = TransmitChain::new(&w, PhaseSource::Off, Some(&pa))?;
    let trials = samples.div_ceil(SCALAR_SUBCARRIERS).max(1);
    let stats = estimate_bussgang_stats(&chain, trials, &TrialStreams::new(streams, tag, 0))?;
    Ok(stats.gain.iter().map(|g| g[(0, 0)]).sum::<Complex64>() / (amplitude * SCALAR_SUBCARRIERS as f64))
}

/// Scalar PA gain at `samples` input samples against the closed form, with a
/// relative tolerance of 1%.
pub fn bussgang_gain_oracle(seed: u64, samples: usize) -> Result<OracleReport> {
    let model = reference_pa();
    let expected = gaussian_bussgang_gain(&model).re;
    let g = estimated_scalar_gain(&model, samples, RandomStreams::new(seed), 0)?;
    Ok(OracleReport::new("bussgang_gain", g.re, expected, 0.01 * expected))
}

/// Log-log slope of the RMS gain error against the sample count.
pub fn bussgang_error_slope_oracle(seed: u64) -> Result<OracleReport> {
    let model = reference_pa();
    let expected = gaussian_bussgang_gain(&model);
    let streams = RandomStreams::new(seed);
    let reps = 40;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, samples) in [1usize << 10, 1 << 12, 1 << 14, 1 << 16].into_iter().enumerate() {
        let mut sq = 0.0;
        for r in 0..reps {
            let g = estimated_scalar_gain(&model, samples, streams, 1 + (i * reps + r) as u64)?;
            sq += (g - expected).norm_sqr();
        }
        xs.push((samples as f64).ln());
        ys.push((sq / reps as f64).sqrt().ln());
    }
    Ok(OracleReport::new("bussgang_error_slope", fit_slope(&xs, &ys), -0.5, 0.1))
}

pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Random precoders with i.i.d. `CN(0, variance)` entries.
pub fn random_precoders(dims: Dims, variance: f64, streams: &RandomStreams, tag: u32) -> Result<PrecoderSet> {
    let mut rng = streams.labelled(Purpose::Oracle, 0, tag, 0);
    let mats: Vec<_> = (0..dims.subcarriers)
        .map(|_| DMatrix::from_fn(dims.total_antennas(), dims.ues, |_, _| complex_gaussian(&mut rng, variance)))
        .collect();
    PrecoderSet::from_matrices(Mode::Centralized, dims, &mats)
}

/// Channel with i.i.d. `CN(0, 1 / R)` taps.
pub fn random_channel(dims: Dims, streams: &RandomStreams, tag: u32) -> Result<ChannelRealization> {
    let mut rng = streams.labelled(Purpose::Oracle, 1, tag, 0);
    let var = 1.0 / dims.taps as f64;
    let taps = (0..dims.ues * dims.aps * dims.taps * dims.antennas)
        .map(|_| complex_gaussian(&mut rng, var))
        .collect();
    ChannelRealization::from_taps(dims, taps)
}

/// Largest deviation of the time-domain received signal from the
/// per-subcarrier model `h_k^T W s`, relative to the largest model value,
/// for an impairment-free, noise-free random instance.
pub fn circular_convolution_error(dims: Dims, seed: u64) -> Result<f64> {
    let streams = RandomStreams::new(seed);
    let w = random_precoders(dims, 1.0, &streams, 0)?;
    let ch = random_channel(dims, &streams, 0)?;
    let chain = TransmitChain::new(&w, PhaseSource::Off, None)?;
    let mut ws = chain.workspace();
    let mut rng = streams.labelled(Purpose::Oracle, 2, 0, 0);
    let symbols: Vec<_> = (0..dims.subcarriers * dims.ues).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
    chain.transmit(&symbols, &mut rng, &mut ws);
    let rx = propagate_and_receive::<crate::rng::StreamRng>(&ws.frame, &ch, None)?;
    let (mut max_err, mut max_ref) = (0.0f64, 0.0f64);
    for m in 0..dims.subcarriers {
        for k in 0..dims.ues {
            let model: Complex64 = (0..dims.ues)
                .map(|i| {
                    ch.freq_ue(m, k).iter().zip(w.column(m, i)).map(|(h, x)| h * x).sum::<Complex64>()
                        * symbols[m * dims.ues + i]
                })
                .sum();
            max_err = max_err.max((rx.freq_ue(k)[m] - model).norm());
            max_ref = max_ref.max(model.norm());
        }
    }
    Ok(max_err / max_ref)
}

pub fn circular_convolution_oracle(seed: u64) -> Result<OracleReport> {
    let dims = Dims { aps: 2, ues: 2, antennas: 2, subcarriers: 8, taps: 3 };
    Ok(OracleReport::new("circular_convolution", circular_convolution_error(dims, seed)?, 0.0, 1e-10))
}

/// Sample variance and lag-1 autocorrelation of `trajectories` independent
/// stationary AR(1) paths of length `len`.
pub fn phase_noise_moments(params: &PhaseNoiseParams, trajectories: usize, len: usize, seed: u64) -> (f64, f64) {
    let streams = RandomStreams::new(seed);
    let mut path = vec![0.0; len];
    let (mut sq, mut lag, mut lag_norm) = (0.0, 0.0, 0.0);
    for t in 0..trajectories {
        fill_phase_trajectory(params, &mut path, &mut streams.labelled(Purpose::Oracle, 3, 0, t as u64));
        sq += path.iter().map(|p| p * p).sum::<f64>();
        for i in 1..len {
            lag += path[i] * path[i - 1];
            lag_norm += path[i - 1] * path[i - 1];
        }
    }
    (sq / (trajectories * len) as f64, lag / lag_norm)
}

/// Stationary variance (5% relative) and lag-1 autocorrelation (0.005
/// absolute) over one million samples.
pub fn phase_noise_oracles(params: &PhaseNoiseParams, seed: u64) -> [OracleReport; 2] {
    let (var, rho) = phase_noise_moments(params, 1000, 1000, seed);
    let expected = params.stationary_variance();
    [
        OracleReport::new("phase_noise_variance", var, expected, 0.05 * expected),
        OracleReport::new("phase_noise_lag1", rho, params.correlation, 0.005),
    ]
}

/// Per-`(k, m)` SINR `[k * M + m]` measured directly from received samples:
/// the least-squares projection of `y_k[m]` on `s_k[m]` is the desired part,
/// everything else (interference, distortion, noise) is the residual.
pub fn brute_force_sinr(
    chain: &TransmitChain<'_>,
    channel: &ChannelRealization,
    noise_var: f64,
    trials: usize,
    ts: &TrialStreams,
) -> Result<Vec<f64>> {
    let d = channel.dims();
    let (kk, mm) = (d.ues, d.subcarriers);
    let mut ys = vec![ZERO; kk * mm];
    let mut yy = vec![0.0; kk * mm];
    let mut ss = vec![0.0; kk * mm];
    let mut ws = chain.workspace();
    let mut symbols = vec![ZERO; mm * kk];
    for t in 0..trials as u64 {
        let mut srng = ts.streams.labelled(Purpose::Symbols, ts.drop, ts.realization, t);
        let mut prng = ts.streams.labelled(Purpose::PhaseNoise, ts.drop, ts.realization, t);
        let mut nrng = ts.streams.labelled(Purpose::ReceiverNoise, ts.drop, ts.realization, t);
        symbols.iter_mut().for_each(|s| *s = complex_gaussian(&mut srng, 1.0));
        chain.transmit(&symbols, &mut prng, &mut ws);
        let rx = propagate_and_receive(&ws.frame, channel, Some((noise_var, &mut nrng)))?;
        for k in 0..kk {
            let y = rx.freq_ue(k);
            for m in 0..mm {
                let s = symbols[m * kk + k];
                let i = k * mm + m;
                ys[i] += y[m] * s.conj();
                yy[i] += y[m].norm_sqr();
                ss[i] += s.norm_sqr();
            }
        }
    }
    (0..kk * mm)
        .map(|i| {
            let desired = ys[i].norm_sqr() / ss[i];
            let residual = yy[i] - desired;
            if !(residual > 0.0) {
                return Err(Error::Numerical(format!("non-positive residual power at index {i}")));
            }
            Ok(desired / residual)
        })
        .collect()
}

/// The quick analytic suite: Gaussian Bussgang gain and error slope,
/// circular convolution and phase-noise stationarity.
pub fn run_analytic_suite(seed: u64, phase_noise: &PhaseNoiseParams) -> Result<Vec<OracleReport>> {
    let mut out = vec![
        bussgang_gain_oracle(seed, 1_000_000)?,
        bussgang_error_slope_oracle(seed)?,
        circular_convolution_oracle(seed)?,
    ];
    out.extend(phase_noise_oracles(phase_noise, seed));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_gain() {
        let g = gaussian_bussgang_gain(&reference_pa());
        assert!((g.re - 0.866983).abs() < 1e-6);
        assert_eq!(g.im, 0.0);
    }

    #[test]
    fn slope_fit() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 0.5, 0.0, -0.5];
        assert!((fit_slope(&x, &y) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn circular_convolution_holds() {
        assert!(circular_convolution_oracle(3).unwrap().passed);
    }

    #[test]
    fn report_tolerance() {
        assert!(OracleReport::new("x", 1.0, 1.05, 0.06).passed);
        assert!(!OracleReport::new("x", 1.0, 1.05, 0.04).passed);
    }

    #[test]
    fn linear_brute_force_matches_closed_form() {
        let dims = Dims { aps: 1, ues: 2, antennas: 2, subcarriers: 8, taps: 2 };
        let streams = RandomStreams::new(4);
        let ch = random_channel(dims, &streams, 0).unwrap();
        let w = crate::precoding::compute_precoders(Mode::Centralized, &ch, 0.05, 1.0).unwrap();
        let chain = TransmitChain::new(&w, PhaseSource::Off, None).unwrap();
        let sinr = brute_force_sinr(&chain, &ch, 0.01, 20_000, &TrialStreams::new(streams, 0, 0)).unwrap();
        for k in 0..2 {
            for m in 0..8 {
                let g = |i: usize| -> Complex64 { ch.freq_ue(m, k).iter().zip(w.column(m, i)).map(|(a, b)| a * b).sum() };
                let closed = g(k).norm_sqr() / (g(1 - k).norm_sqr() + 0.01);
                let got = sinr[k * 8 + m];
                assert!((got / closed - 1.0).abs() < 0.05, "{got} vs {closed}");
                assert!(closed > 0.5, "{closed}");
            }
        }
    }
}
