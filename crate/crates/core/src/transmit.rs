//! Time-domain transmit and receive chain for one OFDM symbol.
//!
//! ```text
//! x_bar_l[m] --IDFT+CP--> x_l[q] --e^{j psi_l[q]}--> x'_l[q] --PA--> x_check_l[q]
//!            --FIR channel + noise--> y_k[q] --DFT--> y_bar_k[m]
//! ```
//!
//! Transforms use the unitary `1/sqrt(M)` convention in both directions. The
//! symbol is simulated at the sample rate; samples run over
//! `q = -(R-1), ..., M-1` and are stored with the cyclic prefix first.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};

use crate::channel::ChannelRealization;
use crate::config::{PaModel, PhaseNoiseParams};
use crate::error::{Error, Result};
use crate::precoding::PrecoderSet;
use crate::rng::{complex_gaussian, real_gaussian};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Unitary OFDM modulator/demodulator for a fixed size.
#[derive(Clone)]
pub struct Ofdm {
    subcarriers: usize,
    cp: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl std::fmt::Debug for Ofdm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ofdm")
            .field("subcarriers", &self.subcarriers)
            .field("cp", &self.cp)
            .finish()
    }
}

impl Ofdm {
    pub fn new(subcarriers: usize, cp: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            subcarriers,
            cp,
            forward: planner.plan_fft_forward(subcarriers),
            inverse: planner.plan_fft_inverse(subcarriers),
            scale: 1.0 / (subcarriers as f64).sqrt(),
        }
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn cp(&self) -> usize {
        self.cp
    }

    pub fn symbol_len(&self) -> usize {
        self.subcarriers + self.cp
    }

    pub fn scratch_len(&self) -> usize {
        self.forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len())
    }

    /// Writes `M + cp` time samples for `freq` into `out`; `out[..cp]` is the
    /// prefix.
    pub fn modulate_into(&self, freq: &[Complex64], out: &mut [Complex64], scratch: &mut [Complex64]) {
        let (m, cp) = (self.subcarriers, self.cp);
        debug_assert_eq!(freq.len(), m);
        debug_assert_eq!(out.len(), m + cp);
        let body = &mut out[cp..];
        body.copy_from_slice(freq);
        self.inverse.process_with_scratch(body, scratch);
        for v in body.iter_mut() {
            *v *= self.scale;
        }
        out.copy_within(m..m + cp, 0);
    }

    /// In-place unitary forward transform of `M` samples.
    pub fn demodulate_in_place(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.subcarriers);
        self.forward.process_with_scratch(buf, scratch);
        for v in buf.iter_mut() {
            *v *= self.scale;
        }
    }

    pub fn modulate(&self, freq: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.symbol_len()];
        let mut scratch = vec![ZERO; self.scratch_len()];
        self.modulate_into(freq, &mut out, &mut scratch);
        out
    }

    pub fn demodulate(&self, time: &[Complex64]) -> Vec<Complex64> {
        let mut buf = time.to_vec();
        let mut scratch = vec![ZERO; self.scratch_len()];
        self.demodulate_in_place(&mut buf, &mut scratch);
        buf
    }
}

/// `x[q] = M^{-1/2} sum_m x_bar[m] e^{j 2 pi q m / M}` for `q = -cp..M-1`.
pub fn ofdm_modulate(freq: &[Complex64], cp: usize) -> Result<Vec<Complex64>> {
    if cp >= freq.len().max(1) {
        return Err(Error::Dimension(format!(
            "cyclic prefix {cp} must be shorter than {} subcarriers",
            freq.len()
        )));
    }
    Ok(Ofdm::new(freq.len(), cp).modulate(freq))
}

/// `y_bar[m] = M^{-1/2} sum_q y[q] e^{-j 2 pi q m / M}`.
pub fn ofdm_demodulate(time: &[Complex64]) -> Vec<Complex64> {
    Ofdm::new(time.len(), 0).demodulate(time)
}

/// Phase samples `psi_l[q]` of one AP over one OFDM symbol, CP included.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrajectory {
    pub values: Vec<f64>,
}

fn check_phase_params(p: &PhaseNoiseParams) -> Result<()> {
    if p.innovation_variance == 0.0 {
        return Ok(());
    }
    if !(p.correlation >= 0.0 && p.correlation < 1.0) || !(p.innovation_variance > 0.0) {
        return Err(Error::config(
            "pn_correlation",
            format!("{} does not give a stationary AR(1) process", p.correlation),
        ));
    }
    Ok(())
}

/// AR(1) recursion `psi[q] = a psi[q-1] + phi[q]`, started from the
/// stationary distribution.
pub fn fill_phase_trajectory<R: Rng + ?Sized>(params: &PhaseNoiseParams, out: &mut [f64], rng: &mut R) {
    if params.innovation_variance == 0.0 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let innov_std = params.innovation_variance.sqrt();
    let mut psi = real_gaussian(rng, params.stationary_variance().sqrt());
    for (q, v) in out.iter_mut().enumerate() {
        if q > 0 {
            psi = params.correlation * psi + real_gaussian(rng, innov_std);
        }
        *v = psi;
    }
}

pub fn sample_phase_trajectory<R: Rng + ?Sized>(
    params: &PhaseNoiseParams,
    len: usize,
    rng: &mut R,
) -> Result<PhaseTrajectory> {
    check_phase_params(params)?;
    let mut values = vec![0.0; len];
    fill_phase_trajectory(params, &mut values, rng);
    Ok(PhaseTrajectory { values })
}

/// `x'[q] = e^{j psi[q]} x[q]`
pub fn apply_phase_noise(samples: &mut [Complex64], phases: &[f64]) {
    debug_assert_eq!(samples.len(), phases.len());
    for (x, &p) in samples.iter_mut().zip(phases) {
        *x *= Complex64::from_polar(1.0, p);
    }
}

/// `x_check = b1 x' + b2 |x'|^2 x'`
#[inline]
pub fn pa_apply(samples: &mut [Complex64], b1: Complex64, b2: Complex64) {
    for x in samples.iter_mut() {
        *x *= b1 + b2 * x.norm_sqr();
    }
}

/// Average power at each PA input, `(1/M) sum_m sum_k |w_{kl,n}[m]|^2`,
/// indexed `[l * N + n]`. Unit-power symbols and unit-modulus phase rotation
/// make this exact.
pub fn estimate_pa_input_power(precoders: &PrecoderSet) -> Vec<f64> {
    let d = precoders.dims();
    let mut power = vec![0.0; d.total_antennas()];
    for m in 0..d.subcarriers {
        for k in 0..d.ues {
            for (p, w) in power.iter_mut().zip(precoders.column(m, k)) {
                *p += w.norm_sqr();
            }
        }
    }
    power.iter_mut().for_each(|p| *p /= d.subcarriers as f64);
    power
}

/// AGC scaling of the normalized polynomial:
/// `b1 = b1_norm`, `b2 = b2_norm / (backoff * P_in)`.
pub fn pa_scale_coefficients(
    b1_norm: Complex64,
    b2_norm: Complex64,
    backoff_db: f64,
    input_power_w: f64,
) -> Result<(Complex64, Complex64)> {
    if !(input_power_w > 0.0 && input_power_w.is_finite()) {
        return Err(Error::Numerical(format!(
            "PA input power must be positive, got {input_power_w}"
        )));
    }
    let backoff = 10f64.powf(backoff_db / 10.0);
    Ok((b1_norm, b2_norm / (backoff * input_power_w)))
}

/// Resolved PA coefficients for every transmit antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct PaCoefficients {
    pub b1: Complex64,
    /// `[l * N + n]`, W^-1
    pub b2: Vec<Complex64>,
    pub input_power_w: Vec<f64>,
}

impl PaCoefficients {
    /// Coefficients for `precoders`. Antennas that carry no signal get a
    /// linear PA since their input is identically zero.
    pub fn for_precoders(model: &PaModel, precoders: &PrecoderSet) -> Self {
        let input_power_w = estimate_pa_input_power(precoders);
        let b2 = input_power_w
            .iter()
            .map(|&p| match pa_scale_coefficients(model.b1_norm, model.b2_norm, model.backoff_db, p) {
                Ok((_, b2)) => b2,
                Err(_) => ZERO,
            })
            .collect();
        Self {
            b1: model.b1_norm,
            b2,
            input_power_w,
        }
    }
}

/// Source of the per-AP phase rotation.
#[derive(Debug, Clone, Copy)]
pub enum PhaseSource<'a> {
    Off,
    /// Independent AR(1) process per AP.
    Ar1(&'a [PhaseNoiseParams]),
    /// The same fixed phase on every sample of every AP.
    Constant(f64),
}

/// Processing stage of a [`TimeDomainFrame`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Clean,
    PhaseRotated,
    Amplified,
}

/// Time samples of all transmit antennas for one OFDM symbol.
#[derive(Debug, Clone)]
pub struct TimeDomainFrame {
    pub stage: Stage,
    aps: usize,
    antennas: usize,
    subcarriers: usize,
    cp: usize,
    /// `[(l * N + n) * (M + cp) + cp + q]`
    samples: Vec<Complex64>,
}

impl TimeDomainFrame {
    pub fn zeros(aps: usize, antennas: usize, subcarriers: usize, cp: usize) -> Self {
        Self {
            stage: Stage::Clean,
            aps,
            antennas,
            subcarriers,
            cp,
            samples: vec![ZERO; aps * antennas * (subcarriers + cp)],
        }
    }

    pub fn cp(&self) -> usize {
        self.cp
    }

    pub fn symbol_len(&self) -> usize {
        self.subcarriers + self.cp
    }

    /// Full stream of antenna `n` at AP `l`, prefix first.
    pub fn stream(&self, ap: usize, antenna: usize) -> &[Complex64] {
        let len = self.symbol_len();
        let start = (ap * self.antennas + antenna) * len;
        &self.samples[start..start + len]
    }

    pub fn stream_mut(&mut self, ap: usize, antenna: usize) -> &mut [Complex64] {
        let len = self.symbol_len();
        let start = (ap * self.antennas + antenna) * len;
        &mut self.samples[start..start + len]
    }

    /// Sample at time index `q in -cp..M`.
    pub fn at(&self, ap: usize, antenna: usize, q: isize) -> Complex64 {
        self.stream(ap, antenna)[(q + self.cp as isize) as usize]
    }
}

/// Reusable buffers for [`TransmitChain`].
#[derive(Debug, Clone)]
pub struct TxWorkspace {
    pub frame: TimeDomainFrame,
    xbar: Vec<Complex64>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
    phases: Vec<f64>,
}

/// The transmitter side of the link for fixed precoders and impairments.
#[derive(Debug, Clone)]
pub struct TransmitChain<'a> {
    pub precoders: &'a PrecoderSet,
    pub phase: PhaseSource<'a>,
    pub pa: Option<&'a PaCoefficients>,
    ofdm: Ofdm,
}

impl<'a> TransmitChain<'a> {
    pub fn new(precoders: &'a PrecoderSet, phase: PhaseSource<'a>, pa: Option<&'a PaCoefficients>) -> Result<Self> {
        let d = precoders.dims();
        if let PhaseSource::Ar1(params) = phase {
            if params.len() != d.aps {
                return Err(Error::Dimension(format!(
                    "{} phase-noise parameter sets for {} APs",
                    params.len(),
                    d.aps
                )));
            }
            params.iter().try_for_each(check_phase_params)?;
        }
        if let Some(pa) = pa {
            if pa.b2.len() != d.total_antennas() {
                return Err(Error::Dimension(format!(
                    "{} PA coefficients for {} antennas",
                    pa.b2.len(),
                    d.total_antennas()
                )));
            }
        }
        Ok(Self {
            precoders,
            phase,
            pa,
            ofdm: Ofdm::new(d.subcarriers, d.cp_len()),
        })
    }

    pub fn workspace(&self) -> TxWorkspace {
        let d = self.precoders.dims();
        TxWorkspace {
            frame: TimeDomainFrame::zeros(d.aps, d.antennas, d.subcarriers, d.cp_len()),
            xbar: vec![ZERO; d.subcarriers * d.total_antennas()],
            buf: vec![ZERO; d.subcarriers],
            scratch: vec![ZERO; self.ofdm.scratch_len()],
            phases: vec![0.0; d.symbol_len()],
        }
    }

    /// Runs precoding, OFDM modulation, phase rotation and the PA for the
    /// symbols `s[m * K + k]`, leaving `x_check` in `ws.frame`.
    pub fn transmit<R: Rng + ?Sized>(&self, symbols: &[Complex64], phase_rng: &mut R, ws: &mut TxWorkspace) {
        let d = self.precoders.dims();
        let ln = d.total_antennas();
        debug_assert_eq!(symbols.len(), d.subcarriers * d.ues);

        ws.xbar.iter_mut().for_each(|v| *v = ZERO);
        for m in 0..d.subcarriers {
            let out = &mut ws.xbar[m * ln..(m + 1) * ln];
            for k in 0..d.ues {
                let s = symbols[m * d.ues + k];
                for (o, w) in out.iter_mut().zip(self.precoders.column(m, k)) {
                    *o += w * s;
                }
            }
        }
        for j in 0..ln {
            for m in 0..d.subcarriers {
                ws.buf[m] = ws.xbar[m * ln + j];
            }
            let (l, n) = (j / d.antennas, j % d.antennas);
            self.ofdm
                .modulate_into(&ws.buf, ws.frame.stream_mut(l, n), &mut ws.scratch);
        }
        ws.frame.stage = Stage::Clean;

        match self.phase {
            PhaseSource::Off => {}
            PhaseSource::Constant(theta) => {
                ws.phases.iter_mut().for_each(|p| *p = theta);
                for l in 0..d.aps {
                    for n in 0..d.antennas {
                        apply_phase_noise(ws.frame.stream_mut(l, n), &ws.phases);
                    }
                }
                ws.frame.stage = Stage::PhaseRotated;
            }
            PhaseSource::Ar1(params) => {
                for (l, p) in params.iter().enumerate() {
                    fill_phase_trajectory(p, &mut ws.phases, phase_rng);
                    for n in 0..d.antennas {
                        apply_phase_noise(ws.frame.stream_mut(l, n), &ws.phases);
                    }
                }
                ws.frame.stage = Stage::PhaseRotated;
            }
        }

        if let Some(pa) = self.pa {
            for l in 0..d.aps {
                for n in 0..d.antennas {
                    pa_apply(ws.frame.stream_mut(l, n), pa.b1, pa.b2[l * d.antennas + n]);
                }
            }
            ws.frame.stage = Stage::Amplified;
        }
    }

    /// DFT of the frame body (prefix dropped), written as `out[m * LN + j]`.
    pub fn frequency_output(&self, ws: &mut TxWorkspace, out: &mut [Complex64]) {
        let d = self.precoders.dims();
        let ln = d.total_antennas();
        let cp = d.cp_len();
        for j in 0..ln {
            let (l, n) = (j / d.antennas, j % d.antennas);
            ws.buf.copy_from_slice(&ws.frame.stream(l, n)[cp..]);
            self.ofdm.demodulate_in_place(&mut ws.buf, &mut ws.scratch);
            for m in 0..d.subcarriers {
                out[m * ln + j] = ws.buf[m];
            }
        }
    }
}

/// Received samples and their DFT for every UE.
#[derive(Debug, Clone)]
pub struct ReceivedFrame {
    pub ues: usize,
    pub subcarriers: usize,
    /// `[k * M + q]`
    pub time: Vec<Complex64>,
    /// `[k * M + m]`
    pub freq: Vec<Complex64>,
    pub noise_var: f64,
}

impl ReceivedFrame {
    pub fn time_ue(&self, ue: usize) -> &[Complex64] {
        &self.time[ue * self.subcarriers..(ue + 1) * self.subcarriers]
    }

    pub fn freq_ue(&self, ue: usize) -> &[Complex64] {
        &self.freq[ue * self.subcarriers..(ue + 1) * self.subcarriers]
    }
}

/// `y_k[q] = sum_r h_k^T[r] x_check[q - r] + n_k[q]` for `q = 0..M-1`,
/// followed by the unitary DFT. Noise is added only when `noise` is given.
pub fn propagate_and_receive<R: Rng + ?Sized>(
    frame: &TimeDomainFrame,
    channel: &ChannelRealization,
    noise: Option<(f64, &mut R)>,
) -> Result<ReceivedFrame> {
    let d = channel.dims();
    if frame.aps != d.aps || frame.antennas != d.antennas || frame.subcarriers != d.subcarriers {
        return Err(Error::Dimension(format!(
            "frame is {}x{}x{}, channel expects {}x{}x{}",
            frame.aps, frame.antennas, frame.subcarriers, d.aps, d.antennas, d.subcarriers
        )));
    }
    if d.taps > frame.cp + 1 {
        return Err(Error::Dimension(format!(
            "{} channel taps need a prefix of at least {}, frame has {}",
            d.taps,
            d.taps - 1,
            frame.cp
        )));
    }
    let m_total = d.subcarriers;
    let mut time = vec![ZERO; d.ues * m_total];
    for k in 0..d.ues {
        let y = &mut time[k * m_total..(k + 1) * m_total];
        for l in 0..d.aps {
            for r in 0..d.taps {
                let h = channel.tap(k, l, r);
                for (n, &hn) in h.iter().enumerate() {
                    let x = frame.stream(l, n);
                    let offset = frame.cp - r;
                    for (q, yq) in y.iter_mut().enumerate() {
                        *yq += hn * x[offset + q];
                    }
                }
            }
        }
    }
    let noise_var = match noise {
        Some((var, rng)) => {
            time.iter_mut().for_each(|y| *y += complex_gaussian(rng, var));
            var
        }
        None => 0.0,
    };
    let ofdm = Ofdm::new(m_total, 0);
    let mut scratch = vec![ZERO; ofdm.scratch_len()];
    let mut freq = time.clone();
    for chunk in freq.chunks_mut(m_total) {
        ofdm.demodulate_in_place(chunk, &mut scratch);
    }
    Ok(ReceivedFrame {
        ues: d.ues,
        subcarriers: m_total,
        time,
        freq,
        noise_var,
    })
}
