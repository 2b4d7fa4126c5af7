//! Regularized zero-forcing precoding per subcarrier.
//!
//! The received signal is modelled as `h^T x`, so the RZF solve is carried out
//! on the conjugate channel `g = h*`:
//!
//! ```text
//! w_bar_k = (sum_i g_i g_i^H + lambda I)^{-1} g_k
//! ```
//!
//! which makes `h_k^T w_k = g_k^H w_k` the coherent beamforming gain.
//! Centralized operation stacks all `L` APs and scales every UE's precoder so
//! the strongest per-AP block has norm `sqrt(rho_max / K)`. Distributed
//! operation solves the `N x N` local problem at each AP and normalizes each
//! per-AP block to that norm.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::config::Dims;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Centralized,
    Distributed,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Centralized, Mode::Distributed];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Centralized => "centralized",
            Mode::Distributed => "distributed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Precoding vectors for every subcarrier, UE and AP.
#[derive(Debug, Clone)]
pub struct PrecoderSet {
    pub mode: Mode,
    dims: Dims,
    /// `[((m * K + k) * L + l) * N + n]`
    w: Vec<Complex64>,
    /// `(ue, subcarrier)` or `(ue, ap, subcarrier)` entries set to zero because
    /// the channel they would normalize was zero.
    pub degenerate: usize,
}

impl PrecoderSet {
    /// Builds a set from per-subcarrier `L N x K` matrices.
    pub fn from_matrices(mode: Mode, dims: Dims, mats: &[DMatrix<Complex64>]) -> Result<Self> {
        let ln = dims.total_antennas();
        if mats.len() != dims.subcarriers || mats.iter().any(|w| w.nrows() != ln || w.ncols() != dims.ues) {
            return Err(Error::Dimension(format!(
                "expected {} precoder matrices of size {ln}x{}",
                dims.subcarriers, dims.ues
            )));
        }
        let mut w = Vec::with_capacity(dims.subcarriers * dims.ues * ln);
        for m in mats {
            w.extend_from_slice(m.as_slice());
        }
        Ok(Self {
            mode,
            dims,
            w,
            degenerate: 0,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Stacked `w_k[m]`, length `L N`.
    pub fn column(&self, m: usize, ue: usize) -> &[Complex64] {
        let ln = self.dims.total_antennas();
        let start = (m * self.dims.ues + ue) * ln;
        &self.w[start..start + ln]
    }

    /// `w_kl[m]`, length `N`.
    pub fn local(&self, m: usize, ue: usize, ap: usize) -> &[Complex64] {
        let n = self.dims.antennas;
        &self.column(m, ue)[ap * n..(ap + 1) * n]
    }

    /// `W[m]`, `L N x K`, column-major slice.
    pub fn matrix_slice(&self, m: usize) -> &[Complex64] {
        let len = self.dims.total_antennas() * self.dims.ues;
        &self.w[m * len..(m + 1) * len]
    }

    pub fn matrix(&self, m: usize) -> DMatrix<Complex64> {
        DMatrix::from_column_slice(self.dims.total_antennas(), self.dims.ues, self.matrix_slice(m))
    }

    /// `sum_k ||w_kl[m]||^2`
    pub fn ap_power(&self, ap: usize, m: usize) -> f64 {
        (0..self.dims.ues)
            .map(|k| norm_sqr(self.local(m, k, ap)))
            .sum()
    }

    /// Per-AP transmit power per subcarrier, `[l][m]`.
    pub fn power_profile(&self) -> Vec<Vec<f64>> {
        (0..self.dims.aps)
            .map(|l| (0..self.dims.subcarriers).map(|m| self.ap_power(l, m)).collect())
            .collect()
    }
}

fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn regularized_solve(channels: &DMatrix<Complex64>, lambda: f64) -> Option<DMatrix<Complex64>> {
    let g = channels.map(|z| z.conj());
    let rows = g.nrows();
    let mut gram = &g * g.adjoint();
    for i in 0..rows {
        gram[(i, i)] += Complex64::from(lambda);
    }
    gram.cholesky().map(|chol| chol.solve(&g))
}

/// Centralized RZF for one subcarrier.
///
/// `channels` is `L N x K` with column `k` the stacked channel of UE `k`.
/// Returns the scaled precoders and the number of UEs whose unnormalized
/// precoder was zero.
pub fn centralized_rzf_subcarrier(
    channels: &DMatrix<Complex64>,
    aps: usize,
    lambda: f64,
    rho_max: f64,
) -> Result<(DMatrix<Complex64>, usize)> {
    if !(lambda > 0.0) {
        return Err(Error::config("rzf_lambda", "must be positive"));
    }
    let (ln, ues) = channels.shape();
    if aps == 0 || ln % aps != 0 {
        return Err(Error::Dimension(format!("{ln} stacked antennas do not split over {aps} APs")));
    }
    let n = ln / aps;
    let mut w = regularized_solve(channels, lambda)
        .ok_or_else(|| Error::Numerical("regularized Gram matrix is not positive definite".into()))?;
    let target = (rho_max / ues as f64).sqrt();
    let mut degenerate = 0;
    for k in 0..ues {
        let mut col = w.column_mut(k);
        let omega = (0..aps)
            .map(|l| col.rows(l * n, n).norm())
            .fold(0.0f64, f64::max);
        if omega > 0.0 {
            col.scale_mut(target / omega);
        } else {
            col.fill(Complex64::new(0.0, 0.0));
            degenerate += 1;
        }
    }
    Ok((w, degenerate))
}

/// Local RZF at one AP for one subcarrier. `local` is `N x K`; `total_ues`
/// sets the equal power share.
pub fn local_rzf_subcarrier(
    local: &DMatrix<Complex64>,
    lambda: f64,
    rho_max: f64,
    total_ues: usize,
) -> Result<(DMatrix<Complex64>, usize)> {
    if !(lambda > 0.0) {
        return Err(Error::config("rzf_lambda", "must be positive"));
    }
    let mut w = regularized_solve(local, lambda)
        .ok_or_else(|| Error::Numerical("local regularized Gram matrix is not positive definite".into()))?;
    let target = (rho_max / total_ues as f64).sqrt();
    let mut degenerate = 0;
    for k in 0..local.ncols() {
        let mut col = w.column_mut(k);
        let norm = col.norm();
        if norm > 0.0 && local.column(k).iter().any(|z| z.norm_sqr() > 0.0) {
            col.scale_mut(target / norm);
        } else {
            col.fill(Complex64::new(0.0, 0.0));
            degenerate += 1;
        }
    }
    Ok((w, degenerate))
}

pub fn rzf_centralized(channel: &ChannelRealization, lambda: f64, rho_max: f64) -> Result<PrecoderSet> {
    let d = channel.dims();
    let per_m = (0..d.subcarriers)
        .into_par_iter()
        .map(|m| {
            centralized_rzf_subcarrier(&channel.freq_matrix(m), d.aps, lambda, rho_max)
                .map_err(|e| Error::Numerical(format!("subcarrier {m}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let degenerate = per_m.iter().map(|(_, c)| c).sum();
    let mats: Vec<_> = per_m.into_iter().map(|(w, _)| w).collect();
    let mut set = PrecoderSet::from_matrices(Mode::Centralized, d, &mats)?;
    set.degenerate = degenerate;
    Ok(set)
}

pub fn rzf_distributed(channel: &ChannelRealization, lambda: f64, rho_max: f64) -> Result<PrecoderSet> {
    let d = channel.dims();
    let n = d.antennas;
    let per_m = (0..d.subcarriers)
        .into_par_iter()
        .map(|m| {
            let mut stacked = DMatrix::<Complex64>::zeros(d.total_antennas(), d.ues);
            let mut degenerate = 0;
            for l in 0..d.aps {
                let (w, c) = local_rzf_subcarrier(&channel.local_matrix(m, l), lambda, rho_max, d.ues)
                    .map_err(|e| Error::Numerical(format!("subcarrier {m}, AP {l}: {e}")))?;
                stacked.rows_mut(l * n, n).copy_from(&w);
                degenerate += c;
            }
            Ok((stacked, degenerate))
        })
        .collect::<Result<Vec<_>>>()?;
    let degenerate = per_m.iter().map(|(_, c)| c).sum();
    let mats: Vec<_> = per_m.into_iter().map(|(w, _)| w).collect();
    let mut set = PrecoderSet::from_matrices(Mode::Distributed, d, &mats)?;
    set.degenerate = degenerate;
    Ok(set)
}

pub fn compute_precoders(mode: Mode, channel: &ChannelRealization, lambda: f64, rho_max: f64) -> Result<PrecoderSet> {
    match mode {
        Mode::Centralized => rzf_centralized(channel, lambda, rho_max),
        Mode::Distributed => rzf_distributed(channel, lambda, rho_max),
    }
}
