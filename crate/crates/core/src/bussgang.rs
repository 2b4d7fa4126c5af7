//! Monte Carlo Bussgang decomposition of the distorted transmit signal and
//! the resulting effective SINR and spectral efficiency.
//!
//! For every subcarrier the frequency-domain transmit vector is split as
//! `x_check[m] = B[m] s[m] + eta[m]` with `eta` uncorrelated with the data.
//! The gain is estimated by least squares over the trials,
//!
//! ```text
//! B = (1/T sum x s^H) (1/T sum s s^H)^{-1}
//! C = 1/T sum x x^H - B (1/T sum s s^H) B^H
//! ```
//!
//! which converges to `E{x s^H}` since `E{s s^H} = I`, leaves the sample
//! residual exactly orthogonal to the data, and reproduces `B = W`, `C = 0`
//! for a linear chain at any trial count.
//!
//! [`estimate_bussgang_stats`] accumulates the full `LN x LN` covariance.
//! [`estimate_projected_stats`] accumulates only the channel projections
//! `h_k^T x_check`, which is all the SINR needs, and is what the experiment
//! runner uses at scale.
//!
//! Trials are processed in fixed-size chunks and merged in chunk order, so the
//! result does not depend on the number of worker threads.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::ChannelRealization;
use crate::config::Dims;
use crate::error::{Error, Result};
use crate::rng::{complex_gaussian, Purpose, RandomStreams};
use crate::transmit::TransmitChain;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Trials per work unit. Part of the reduction order, so changing it changes
/// results in the last bits.
pub const TRIAL_CHUNK: usize = 32;
const CHUNKS_PER_BATCH: usize = 16;

/// Addresses the per-trial substreams for one channel realization.
#[derive(Debug, Clone, Copy)]
pub struct TrialStreams {
    pub streams: RandomStreams,
    pub drop: u64,
    pub realization: u32,
}

impl TrialStreams {
    pub fn new(streams: RandomStreams, drop: u64, realization: u32) -> Self {
        Self {
            streams,
            drop,
            realization,
        }
    }
}

trait Accumulator: Send {
    fn add(&mut self, symbols: &[Complex64], tx_freq: &[Complex64]);
    fn merge(&mut self, other: Self);
}

fn run_trials<A, F>(chain: &TransmitChain<'_>, trials: usize, ts: &TrialStreams, make: F) -> Result<A>
where
    A: Accumulator,
    F: Fn() -> A + Sync,
{
    if trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    let d = chain.precoders.dims();
    let chunks = trials.div_ceil(TRIAL_CHUNK);
    let run_chunk = |c: usize| -> Result<A> {
        let mut acc = make();
        let mut ws = chain.workspace();
        let mut symbols = vec![ZERO; d.subcarriers * d.ues];
        let mut tx_freq = vec![ZERO; d.subcarriers * d.total_antennas()];
        for t in c * TRIAL_CHUNK..((c + 1) * TRIAL_CHUNK).min(trials) {
            let mut srng = ts.streams.labelled(Purpose::Symbols, ts.drop, ts.realization, t as u64);
            let mut prng = ts.streams.labelled(Purpose::PhaseNoise, ts.drop, ts.realization, t as u64);
            symbols.iter_mut().for_each(|s| *s = complex_gaussian(&mut srng, 1.0));
            chain.transmit(&symbols, &mut prng, &mut ws);
            chain.frequency_output(&mut ws, &mut tx_freq);
            if tx_freq.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite transmit signal in trial {t}")));
            }
            acc.add(&symbols, &tx_freq);
        }
        Ok(acc)
    };

    let mut total: Option<A> = None;
    for batch_start in (0..chunks).step_by(CHUNKS_PER_BATCH) {
        let batch_end = (batch_start + CHUNKS_PER_BATCH).min(chunks);
        let parts = (batch_start..batch_end)
            .into_par_iter()
            .map(run_chunk)
            .collect::<Result<Vec<_>>>()?;
        for part in parts {
            match total.as_mut() {
                Some(t) => t.merge(part),
                None => total = Some(part),
            }
        }
    }
    Ok(total.expect("at least one chunk"))
}

fn add_assign(dst: &mut [Complex64], src: &[Complex64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// `K x K` sample covariance of the symbols at each subcarrier, column-major.
fn add_symbol_gram(ss: &mut [Complex64], symbols: &[Complex64], d: &Dims) {
    let k2 = d.ues * d.ues;
    for m in 0..d.subcarriers {
        let s = &symbols[m * d.ues..(m + 1) * d.ues];
        let out = &mut ss[m * k2..(m + 1) * k2];
        for j in 0..d.ues {
            let sj = s[j].conj();
            for i in 0..d.ues {
                out[j * d.ues + i] += s[i] * sj;
            }
        }
    }
}

fn inverse_gram(ss: &[Complex64], ues: usize, trials: usize, m: usize) -> Result<DMatrix<Complex64>> {
    let s = DMatrix::from_column_slice(ues, ues, ss) / Complex64::from(trials as f64);
    s.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numerical(format!("symbol covariance at subcarrier {m} is singular")))
}

struct FullMoments {
    dims: Dims,
    ss: Vec<Complex64>,
    xs: Vec<Complex64>,
    xx: Vec<Complex64>,
}

impl FullMoments {
    fn new(d: Dims) -> Self {
        let ln = d.total_antennas();
        Self {
            dims: d,
            ss: vec![ZERO; d.subcarriers * d.ues * d.ues],
            xs: vec![ZERO; d.subcarriers * ln * d.ues],
            xx: vec![ZERO; d.subcarriers * ln * ln],
        }
    }
}

impl Accumulator for FullMoments {
    fn add(&mut self, symbols: &[Complex64], tx_freq: &[Complex64]) {
        let d = self.dims;
        let ln = d.total_antennas();
        add_symbol_gram(&mut self.ss, symbols, &d);
        for m in 0..d.subcarriers {
            let s = &symbols[m * d.ues..(m + 1) * d.ues];
            let x = &tx_freq[m * ln..(m + 1) * ln];
            let xs = &mut self.xs[m * ln * d.ues..(m + 1) * ln * d.ues];
            for (k, sk) in s.iter().enumerate() {
                let sk = sk.conj();
                for (o, xi) in xs[k * ln..(k + 1) * ln].iter_mut().zip(x) {
                    *o += xi * sk;
                }
            }
            let xx = &mut self.xx[m * ln * ln..(m + 1) * ln * ln];
            for (j, xj) in x.iter().enumerate() {
                let xj = xj.conj();
                for (o, xi) in xx[j * ln..(j + 1) * ln].iter_mut().zip(x) {
                    *o += xi * xj;
                }
            }
        }
    }

    fn merge(&mut self, other: Self) {
        add_assign(&mut self.ss, &other.ss);
        add_assign(&mut self.xs, &other.xs);
        add_assign(&mut self.xx, &other.xx);
    }
}

/// Bussgang gain and distortion covariance for every subcarrier.
#[derive(Debug, Clone)]
pub struct BussgangStats {
    pub dims: Dims,
    pub trial_count: usize,
    /// `B[m]`, `L N x K`
    pub gain: Vec<DMatrix<Complex64>>,
    /// `C_eta_eta[m]`, `L N x L N`
    pub distortion: Vec<DMatrix<Complex64>>,
}

impl BussgangStats {
    /// `b_k[m]`
    pub fn gain_column(&self, m: usize, ue: usize) -> nalgebra::DVector<Complex64> {
        self.gain[m].column(ue).into_owned()
    }

    /// Copy with every off-diagonal AP block of the covariance set to zero.
    pub fn block_diagonal(&self) -> Self {
        let n = self.dims.antennas;
        let distortion = self
            .distortion
            .iter()
            .map(|c| DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| if i / n == j / n { c[(i, j)] } else { ZERO }))
            .collect();
        Self {
            dims: self.dims,
            trial_count: self.trial_count,
            gain: self.gain.clone(),
            distortion,
        }
    }
}

/// Full per-subcarrier Bussgang statistics of `chain` over `trials` random
/// symbol/phase draws. The channel plays no part.
pub fn estimate_bussgang_stats(chain: &TransmitChain<'_>, trials: usize, ts: &TrialStreams) -> Result<BussgangStats> {
    let d = chain.precoders.dims();
    if trials < d.ues {
        return Err(Error::config("trials", format!("must be at least K = {}", d.ues)));
    }
    let acc = run_trials(chain, trials, ts, || FullMoments::new(d))?;
    let ln = d.total_antennas();
    let t = Complex64::from(trials as f64);
    let mut gain = Vec::with_capacity(d.subcarriers);
    let mut distortion = Vec::with_capacity(d.subcarriers);
    for m in 0..d.subcarriers {
        let k2 = d.ues * d.ues;
        let sinv = inverse_gram(&acc.ss[m * k2..(m + 1) * k2], d.ues, trials, m)?;
        let xs = DMatrix::from_column_slice(ln, d.ues, &acc.xs[m * ln * d.ues..(m + 1) * ln * d.ues]) / t;
        let xx = DMatrix::from_column_slice(ln, ln, &acc.xx[m * ln * ln..(m + 1) * ln * ln]) / t;
        let b = &xs * &sinv;
        let c = xx - &b * xs.adjoint();
        let c = (&c + c.adjoint()) * Complex64::from(0.5);
        gain.push(b);
        distortion.push(c);
    }
    Ok(BussgangStats {
        dims: d,
        trial_count: trials,
        gain,
        distortion,
    })
}

struct ProjectedMoments<'c> {
    dims: Dims,
    channel: &'c ChannelRealization,
    per_ap: bool,
    ss: Vec<Complex64>,
    /// `[m][i * K + k] = sum z_k s_i^*` (column-major `K x K`)
    zs: Vec<Complex64>,
    /// `[m][k]`
    zz: Vec<f64>,
    /// `[m][(k * L + l) * K + i]`
    zls: Vec<Complex64>,
    /// `[m][k * L + l]`
    zlz: Vec<f64>,
    z_local: Vec<Complex64>,
}

impl<'c> ProjectedMoments<'c> {
    fn new(d: Dims, channel: &'c ChannelRealization, per_ap: bool) -> Self {
        let per_ap_len = if per_ap { d.subcarriers * d.ues * d.aps } else { 0 };
        Self {
            dims: d,
            channel,
            per_ap,
            ss: vec![ZERO; d.subcarriers * d.ues * d.ues],
            zs: vec![ZERO; d.subcarriers * d.ues * d.ues],
            zz: vec![0.0; d.subcarriers * d.ues],
            zls: vec![ZERO; per_ap_len * d.ues],
            zlz: vec![0.0; per_ap_len],
            z_local: vec![ZERO; d.aps],
        }
    }
}

impl Accumulator for ProjectedMoments<'_> {
    fn add(&mut self, symbols: &[Complex64], tx_freq: &[Complex64]) {
        let d = self.dims;
        let (ln, n_ant, kk) = (d.total_antennas(), d.antennas, d.ues);
        add_symbol_gram(&mut self.ss, symbols, &d);
        for m in 0..d.subcarriers {
            let s = &symbols[m * kk..(m + 1) * kk];
            let x = &tx_freq[m * ln..(m + 1) * ln];
            for k in 0..kk {
                let h = self.channel.freq_ue(m, k);
                let z = if self.per_ap {
                    let mut total = ZERO;
                    for l in 0..d.aps {
                        let zl: Complex64 = h[l * n_ant..(l + 1) * n_ant]
                            .iter()
                            .zip(&x[l * n_ant..(l + 1) * n_ant])
                            .map(|(a, b)| a * b)
                            .sum();
                        self.z_local[l] = zl;
                        total += zl;
                    }
                    total
                } else {
                    h.iter().zip(x).map(|(a, b)| a * b).sum()
                };
                self.zz[m * kk + k] += z.norm_sqr();
                let zs = &mut self.zs[m * kk * kk..(m + 1) * kk * kk];
                for (i, si) in s.iter().enumerate() {
                    zs[i * kk + k] += z * si.conj();
                }
                if self.per_ap {
                    for l in 0..d.aps {
                        let zl = self.z_local[l];
                        let idx = (m * kk + k) * d.aps + l;
                        self.zlz[idx] += zl.norm_sqr();
                        for (i, si) in s.iter().enumerate() {
                            self.zls[idx * kk + i] += zl * si.conj();
                        }
                    }
                }
            }
        }
    }

    fn merge(&mut self, other: Self) {
        add_assign(&mut self.ss, &other.ss);
        add_assign(&mut self.zs, &other.zs);
        add_assign(&mut self.zls, &other.zls);
        for (a, b) in self.zz.iter_mut().zip(&other.zz) {
            *a += b;
        }
        for (a, b) in self.zlz.iter_mut().zip(&other.zlz) {
            *a += b;
        }
    }
}

/// Channel-projected Bussgang statistics: `h_k^T b_i` and `h_k^T C h_k^*`
/// for every `(m, k, i)`.
#[derive(Debug, Clone)]
pub struct ProjectedStats {
    pub dims: Dims,
    pub trial_count: usize,
    /// `[(m * K + k) * K + i] = h_k^T[m] b_i[m]`
    pub gains: Vec<Complex64>,
    /// `[m * K + k] = h_k^T[m] C[m] h_k^*[m]`
    pub distortion: Vec<f64>,
}

impl ProjectedStats {
    pub fn gain(&self, m: usize, ue: usize, other: usize) -> Complex64 {
        self.gains[(m * self.dims.ues + ue) * self.dims.ues + other]
    }

    pub fn distortion_power(&self, m: usize, ue: usize) -> f64 {
        self.distortion[m * self.dims.ues + ue]
    }

    /// Projects full statistics onto a channel realization.
    pub fn from_full(channel: &ChannelRealization, stats: &BussgangStats) -> Result<Self> {
        let d = stats.dims;
        if channel.dims() != d {
            return Err(Error::Dimension(format!(
                "channel dims {:?} differ from statistics dims {d:?}",
                channel.dims()
            )));
        }
        let mut gains = Vec::with_capacity(d.subcarriers * d.ues * d.ues);
        let mut distortion = Vec::with_capacity(d.subcarriers * d.ues);
        for m in 0..d.subcarriers {
            let h = channel.freq_matrix(m);
            let g = h.transpose() * &stats.gain[m];
            let hc = h.map(|z| z.conj());
            let q = h.transpose() * &stats.distortion[m] * &hc;
            for k in 0..d.ues {
                for i in 0..d.ues {
                    gains.push(g[(k, i)]);
                }
            }
            for k in 0..d.ues {
                distortion.push(q[(k, k)].re);
            }
        }
        Ok(Self {
            dims: d,
            trial_count: stats.trial_count,
            gains,
            distortion,
        })
    }

    /// Effective SINR `[k * M + m]` given receiver noise power `noise_var`.
    pub fn effective_sinr(&self, noise_var: f64) -> Result<Vec<f64>> {
        let d = self.dims;
        let mut out = vec![0.0; d.ues * d.subcarriers];
        let mut second = vec![0.0; d.ues];
        for m in 0..d.subcarriers {
            for k in 0..d.ues {
                for (i, s) in second.iter_mut().enumerate() {
                    *s = self.gain(m, k, i).norm_sqr();
                }
                out[k * d.subcarriers + m] =
                    sinr_from_moments(self.gain(m, k, k), &second, self.distortion_power(m, k), noise_var)
                        .map_err(|e| Error::Numerical(format!("UE {k}, subcarrier {m}: {e}")))?;
            }
        }
        Ok(out)
    }
}

/// SINR from first and second moments of the effective gains:
///
/// ```text
/// |E{g_kk}|^2 / (sum_i E{|g_ki|^2} - |E{g_kk}|^2 + q + sigma^2)
/// ```
///
/// With the channel known, `g_ki = h_k^T b_i` is deterministic and the
/// variance term vanishes.
pub fn sinr_from_moments(desired_mean: Complex64, second_moments: &[f64], distortion: f64, noise_var: f64) -> Result<f64> {
    if distortion < -1e-9 * noise_var {
        return Err(Error::Numerical(format!(
            "distortion quadratic form {distortion:e} is negative beyond estimation tolerance"
        )));
    }
    let desired = desired_mean.norm_sqr();
    let total: f64 = second_moments.iter().sum();
    let interference = (total - desired).max(0.0);
    let sinr = desired / (interference + distortion.max(0.0) + noise_var);
    if !sinr.is_finite() {
        return Err(Error::Numerical(format!("non-finite SINR ({sinr})")));
    }
    Ok(sinr)
}

/// Estimates the projected statistics of `chain` against `channel`. With
/// `block_diag` the distortion covariance is restricted to its per-AP blocks.
pub fn estimate_projected_stats(
    chain: &TransmitChain<'_>,
    channel: &ChannelRealization,
    trials: usize,
    ts: &TrialStreams,
    block_diag: bool,
) -> Result<ProjectedStats> {
    let d = chain.precoders.dims();
    if channel.dims() != d {
        return Err(Error::Dimension("channel and precoders disagree on dimensions".into()));
    }
    if trials < d.ues {
        return Err(Error::config("trials", format!("must be at least K = {}", d.ues)));
    }
    let acc = run_trials(chain, trials, ts, || ProjectedMoments::new(d, channel, block_diag))?;
    let kk = d.ues;
    let t = trials as f64;
    let mut gains = Vec::with_capacity(d.subcarriers * kk * kk);
    let mut distortion = Vec::with_capacity(d.subcarriers * kk);
    for m in 0..d.subcarriers {
        let sinv = inverse_gram(&acc.ss[m * kk * kk..(m + 1) * kk * kk], kk, trials, m)?;
        let zs = DMatrix::from_column_slice(kk, kk, &acc.zs[m * kk * kk..(m + 1) * kk * kk]) / Complex64::from(t);
        let g = &zs * &sinv;
        for k in 0..kk {
            for i in 0..kk {
                gains.push(g[(k, i)]);
            }
        }
        if block_diag {
            for k in 0..kk {
                let mut q = 0.0;
                for l in 0..d.aps {
                    let idx = (m * kk + k) * d.aps + l;
                    let c = nalgebra::DVector::from_column_slice(&acc.zls[idx * kk..(idx + 1) * kk]) / Complex64::from(t);
                    let explained = (c.adjoint() * &sinv.transpose() * &c)[(0, 0)].re;
                    q += acc.zlz[idx] / t - explained;
                }
                distortion.push(q);
            }
        } else {
            let explained = &g * zs.adjoint();
            for k in 0..kk {
                distortion.push(acc.zz[m * kk + k] / t - explained[(k, k)].re);
            }
        }
    }
    Ok(ProjectedStats {
        dims: d,
        trial_count: trials,
        gains,
        distortion,
    })
}

/// Effective SINR `[k * M + m]` of every UE on every subcarrier.
pub fn effective_sinr(channel: &ChannelRealization, stats: &BussgangStats, noise_var: f64) -> Result<Vec<f64>> {
    ProjectedStats::from_full(channel, stats)?.effective_sinr(noise_var)
}

/// `log2(1 + sinr)` in bits per complex symbol.
pub fn spectral_efficiency(sinr: f64) -> Result<f64> {
    if !(sinr >= 0.0) {
        return Err(Error::Numerical(format!("SINR must be non-negative, got {sinr}")));
    }
    Ok((1.0 + sinr).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PhaseNoiseParams;
    use crate::precoding::{Mode, PrecoderSet};
    use crate::transmit::{PaCoefficients, PhaseSource};
    use crate::config::PaModel;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn dims(aps: usize, ues: usize, antennas: usize, subcarriers: usize, taps: usize) -> Dims {
        Dims { aps, ues, antennas, subcarriers, taps }
    }

    fn random_precoders(d: Dims, seed: u64) -> PrecoderSet {
        let mut r = RandomStreams::new(seed).labelled(Purpose::Oracle, 0, 0, 0);
        let mats: Vec<_> = (0..d.subcarriers)
            .map(|_| DMatrix::from_fn(d.total_antennas(), d.ues, |_, _| complex_gaussian(&mut r, 0.2)))
            .collect();
        PrecoderSet::from_matrices(Mode::Centralized, d, &mats).unwrap()
    }

    fn random_channel(d: Dims, seed: u64) -> ChannelRealization {
        let mut r = RandomStreams::new(seed).labelled(Purpose::Oracle, 1, 0, 0);
        let taps = (0..d.ues * d.aps * d.taps * d.antennas).map(|_| complex_gaussian(&mut r, 1.0)).collect();
        ChannelRealization::from_taps(d, taps).unwrap()
    }

    fn ts(seed: u64) -> TrialStreams {
        TrialStreams::new(RandomStreams::new(seed), 0, 0)
    }

    fn reference_pa() -> PaModel {
        PaModel {
            b1_norm: c(1.0, 0.0),
            b2_norm: c(-1.0 / 3.0, 0.0),
            backoff_db: 7.0,
            backoff_linear: 10f64.powf(0.7),
        }
    }

    #[test]
    fn linear_chain_recovers_precoders_exactly() {
        let d = dims(2, 2, 2, 8, 3);
        let w = random_precoders(d, 1);
        let chain = TransmitChain::new(&w, PhaseSource::Off, None).unwrap();
        let stats = estimate_bussgang_stats(&chain, 50, &ts(2)).unwrap();
        for m in 0..d.subcarriers {
            let wm = w.matrix(m);
            assert!((&stats.gain[m] - &wm).norm() <= 1e-12 * wm.norm());
            assert!(stats.distortion[m].norm() <= 1e-12 * wm.norm_squared());
        }
    }

    #[test]
    fn constant_phase_rotates_gain() {
        let d = dims(1, 2, 2, 8, 2);
        let w = random_precoders(d, 3);
        let theta = 1.1;
        let chain = TransmitChain::new(&w, PhaseSource::Constant(theta), None).unwrap();
        let stats = estimate_bussgang_stats(&chain, 40, &ts(4)).unwrap();
        let rot = Complex64::from_polar(1.0, theta);
        for m in 0..d.subcarriers {
            let expected = w.matrix(m) * rot;
            assert!((&stats.gain[m] - &expected).norm() <= 1e-10 * expected.norm());
        }
    }

    #[test]
    fn scalar_pa_gain_matches_gaussian_closed_form() {
        let d = dims(1, 1, 1, 64, 1);
        let mats = vec![DMatrix::from_element(1, 1, c(0.3, 0.0)); 64];
        let w = PrecoderSet::from_matrices(Mode::Centralized, d, &mats).unwrap();
        let pa = PaCoefficients::for_precoders(&reference_pa(), &w);
        let chain = TransmitChain::new(&w, PhaseSource::Off, Some(&pa)).unwrap();
        let trials = 1_000_000 / 64;
        let stats = estimate_bussgang_stats(&chain, trials, &ts(5)).unwrap();
        let mean: Complex64 = stats.gain.iter().map(|g| g[(0, 0)] / c(0.3, 0.0)).sum::<Complex64>() / 64.0;
        let expected = 1.0 - 2.0 / (3.0 * 10f64.powf(0.7));
        assert!((mean.re / expected - 1.0).abs() < 0.01, "{mean}");
        assert!(mean.im.abs() < 0.01);
    }

    #[test]
    fn distortion_covariance_is_psd() {
        let d = dims(2, 2, 2, 8, 3);
        let w = random_precoders(d, 6);
        let pa = PaCoefficients::for_precoders(&reference_pa(), &w);
        let pn = [PhaseNoiseParams { correlation: 0.99, innovation_variance: 1.6e-3 }; 2];
        let chain = TransmitChain::new(&w, PhaseSource::Ar1(&pn), Some(&pa)).unwrap();
        let stats = estimate_bussgang_stats(&chain, 500, &ts(7)).unwrap();
        for cmat in &stats.distortion {
            assert!((cmat - cmat.adjoint()).norm() < 1e-14 * cmat.norm());
            let tr = cmat.trace().re;
            let eig = nalgebra::SymmetricEigen::new(cmat.clone());
            assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-9 * tr));
        }
    }

    #[test]
    fn projected_and_full_statistics_agree() {
        let d = dims(2, 2, 2, 8, 3);
        let w = random_precoders(d, 8);
        let ch = random_channel(d, 9);
        let pa = PaCoefficients::for_precoders(&reference_pa(), &w);
        let pn = [PhaseNoiseParams { correlation: 0.99, innovation_variance: 1.6e-3 }; 2];
        let chain = TransmitChain::new(&w, PhaseSource::Ar1(&pn), Some(&pa)).unwrap();
        let full = estimate_bussgang_stats(&chain, 300, &ts(10)).unwrap();
        for block in [false, true] {
            let reference = if block { full.block_diagonal() } else { full.clone() };
            let a = ProjectedStats::from_full(&ch, &reference).unwrap();
            let b = estimate_projected_stats(&chain, &ch, 300, &ts(10), block).unwrap();
            for (x, y) in a.gains.iter().zip(&b.gains) {
                assert!((x - y).norm() <= 1e-10 * x.norm().max(1e-12));
            }
            for (x, y) in a.distortion.iter().zip(&b.distortion) {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-12), "{x} {y}");
            }
        }
    }

    #[test]
    fn result_does_not_depend_on_thread_count() {
        let d = dims(2, 2, 2, 8, 3);
        let w = random_precoders(d, 11);
        let ch = random_channel(d, 12);
        let pn = [PhaseNoiseParams { correlation: 0.99, innovation_variance: 1.6e-3 }; 2];
        let chain = TransmitChain::new(&w, PhaseSource::Ar1(&pn), None).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_projected_stats(&chain, &ch, 777, &ts(13), false).unwrap())
        };
        let a = run(1);
        let b = run(5);
        assert_eq!(a.gains, b.gains);
        assert_eq!(a.distortion, b.distortion);
    }

    #[test]
    fn residual_is_uncorrelated_with_held_out_symbols() {
        let d = dims(1, 2, 2, 8, 2);
        let w = random_precoders(d, 14);
        let pa = PaCoefficients::for_precoders(&reference_pa(), &w);
        let pn = [PhaseNoiseParams { correlation: 0.99, innovation_variance: 1.6e-3 }];
        let chain = TransmitChain::new(&w, PhaseSource::Ar1(&pn), Some(&pa)).unwrap();
        let trials = 2000;
        let stats = estimate_bussgang_stats(&chain, trials, &ts(15)).unwrap();
        // Held-out trials from an independent stream family.
        let held = TrialStreams::new(RandomStreams::new(16), 1, 0);
        let mut ws = chain.workspace();
        let ln = d.total_antennas();
        let mut symbols = vec![ZERO; d.subcarriers * d.ues];
        let mut x = vec![ZERO; d.subcarriers * ln];
        let mut acc = vec![DMatrix::<Complex64>::zeros(ln, d.ues); d.subcarriers];
        for t in 0..trials {
            let mut sr = held.streams.labelled(Purpose::Symbols, held.drop, 0, t as u64);
            let mut pr = held.streams.labelled(Purpose::PhaseNoise, held.drop, 0, t as u64);
            symbols.iter_mut().for_each(|s| *s = complex_gaussian(&mut sr, 1.0));
            chain.transmit(&symbols, &mut pr, &mut ws);
            chain.frequency_output(&mut ws, &mut x);
            for m in 0..d.subcarriers {
                let s = nalgebra::DVector::from_column_slice(&symbols[m * d.ues..(m + 1) * d.ues]);
                let xv = nalgebra::DVector::from_column_slice(&x[m * ln..(m + 1) * ln]);
                let eta = xv - &stats.gain[m] * &s;
                acc[m] += eta * s.adjoint();
            }
        }
        for m in 0..d.subcarriers {
            let mean = &acc[m] / Complex64::from(trials as f64);
            let bound = 5.0 / (trials as f64).sqrt() * stats.gain[m].norm();
            assert!(mean.norm() <= bound, "m={m}: {} > {bound}", mean.norm());
        }
    }

    #[test]
    fn scalar_awgn_sinr() {
        let d = dims(1, 1, 1, 1, 1);
        let stats = ProjectedStats { dims: d, trial_count: 1, gains: vec![c(2f64.sqrt(), 0.0)], distortion: vec![0.0] };
        let g = stats.effective_sinr(1.0).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-12);
        assert!((spectral_efficiency(g[0]).unwrap() - 3f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn isotropic_distortion_adds_scaled_channel_norm() {
        let d = dims(2, 2, 2, 4, 1);
        let ch = random_channel(d, 17);
        let w = random_precoders(d, 18);
        let cval = 0.37;
        let stats = BussgangStats {
            dims: d,
            trial_count: 1,
            gain: (0..d.subcarriers).map(|m| w.matrix(m)).collect(),
            distortion: vec![DMatrix::identity(4, 4) * Complex64::from(cval); d.subcarriers],
        };
        let p = ProjectedStats::from_full(&ch, &stats).unwrap();
        for m in 0..d.subcarriers {
            for k in 0..d.ues {
                let hn: f64 = ch.freq_ue(m, k).iter().map(|z| z.norm_sqr()).sum();
                assert!((p.distortion_power(m, k) - cval * hn).abs() < 1e-12 * hn);
            }
        }
    }

    #[test]
    fn impairment_free_sinr_matches_closed_form() {
        let d = dims(2, 3, 2, 8, 3);
        let w = random_precoders(d, 19);
        let ch = random_channel(d, 20);
        let chain = TransmitChain::new(&w, PhaseSource::Off, None).unwrap();
        let sigma2 = 0.05;
        let sinr = estimate_projected_stats(&chain, &ch, 64, &ts(21), false).unwrap().effective_sinr(sigma2).unwrap();
        for m in 0..d.subcarriers {
            for k in 0..d.ues {
                let g = |i: usize| -> Complex64 { ch.freq_ue(m, k).iter().zip(w.column(m, i)).map(|(a, b)| a * b).sum() };
                let interf: f64 = (0..d.ues).filter(|&i| i != k).map(|i| g(i).norm_sqr()).sum();
                let closed = g(k).norm_sqr() / (interf + sigma2);
                let got = sinr[k * d.subcarriers + m];
                assert!((got / closed - 1.0).abs() < 1e-6, "{got} vs {closed}");
            }
        }
    }

    #[test]
    fn sinr_strictly_decreases_with_noise() {
        let d = dims(2, 2, 2, 8, 3);
        let w = random_precoders(d, 22);
        let ch = random_channel(d, 23);
        let pa = PaCoefficients::for_precoders(&reference_pa(), &w);
        let chain = TransmitChain::new(&w, PhaseSource::Off, Some(&pa)).unwrap();
        let stats = estimate_projected_stats(&chain, &ch, 200, &ts(24), false).unwrap();
        let lo = stats.effective_sinr(0.01).unwrap();
        let hi = stats.effective_sinr(0.02).unwrap();
        assert!(lo.iter().zip(&hi).all(|(a, b)| a > b));
    }

    #[test]
    fn negative_distortion_is_an_error() {
        assert!(sinr_from_moments(c(1.0, 0.0), &[1.0], -1e-3, 1.0).is_err());
        assert!(sinr_from_moments(c(1.0, 0.0), &[1.0], -1e-12, 1.0).is_ok());
    }

    #[test]
    fn spectral_efficiency_values() {
        assert_eq!(spectral_efficiency(0.0).unwrap(), 0.0);
        assert!((spectral_efficiency(1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((spectral_efficiency(3.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(spectral_efficiency(-0.1).is_err());
        assert!(spectral_efficiency(f64::NAN).is_err());
    }

    #[test]
    fn zero_trials_is_a_config_error() {
        let d = dims(1, 1, 1, 4, 1);
        let w = random_precoders(d, 25);
        let chain = TransmitChain::new(&w, PhaseSource::Off, None).unwrap();
        assert!(estimate_bussgang_stats(&chain, 0, &ts(0)).unwrap_err().is_validation());
    }
}
