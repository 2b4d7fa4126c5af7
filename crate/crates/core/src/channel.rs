//! Network drops and correlated Rayleigh multipath channels.
//!
//! A drop places APs and UEs uniformly in a square, applies the urban-microcell
//! path loss with log-normal shadowing, and builds per-tap spatial correlation
//! matrices from a small number of angular clusters. Each cluster lands on one
//! delay tap, carries an exponentially decaying power weight and spreads its
//! power over a bundle of sub-rays seen through a half-wavelength ULA.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::config::{ChannelModelConfig, Dims, SystemParams};
use crate::error::{Error, Result};
use crate::rng::{complex_gaussian, real_gaussian, Purpose, RandomStreams};

/// Urban microcell street-canyon path gain in dB (negative for loss).
pub fn path_loss_db(distance_3d_m: f64, carrier_freq_ghz: f64, shadow_sample_db: f64) -> Result<f64> {
    if !(distance_3d_m > 0.0) {
        return Err(Error::Geometry(format!(
            "distance must be positive, got {distance_3d_m} m"
        )));
    }
    Ok(-32.4 - 20.0 * carrier_freq_ghz.log10() - 31.9 * distance_3d_m.log10() + shadow_sample_db)
}

/// AP and UE placement for one drop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropGeometry {
    pub ap_positions: Vec<[f64; 2]>,
    pub ue_positions: Vec<[f64; 2]>,
    pub height_diff_m: f64,
    pub area_side_m: f64,
    /// `[l * K + k]`
    distances_3d: Vec<f64>,
}

impl DropGeometry {
    pub fn new(
        ap_positions: Vec<[f64; 2]>,
        ue_positions: Vec<[f64; 2]>,
        area_side_m: f64,
        height_diff_m: f64,
    ) -> Result<Self> {
        let inside = |p: &[f64; 2]| (0.0..=area_side_m).contains(&p[0]) && (0.0..=area_side_m).contains(&p[1]);
        if let Some(p) = ap_positions.iter().chain(&ue_positions).find(|p| !inside(p)) {
            return Err(Error::Geometry(format!(
                "position ({}, {}) lies outside the {area_side_m} m square",
                p[0], p[1]
            )));
        }
        let mut distances_3d = Vec::with_capacity(ap_positions.len() * ue_positions.len());
        for a in &ap_positions {
            for u in &ue_positions {
                let dx = u[0] - a[0];
                let dy = u[1] - a[1];
                distances_3d.push((dx * dx + dy * dy + height_diff_m * height_diff_m).sqrt());
            }
        }
        Ok(Self {
            ap_positions,
            ue_positions,
            height_diff_m,
            area_side_m,
            distances_3d,
        })
    }

    pub fn random<R: Rng + ?Sized>(sys: &SystemParams, rng: &mut R) -> Result<Self> {
        let side = sys.area_side_m;
        let point = |rng: &mut R| [rng.random::<f64>() * side, rng.random::<f64>() * side];
        let aps = (0..sys.dims.aps).map(|_| point(rng)).collect();
        let ues = (0..sys.dims.ues).map(|_| point(rng)).collect();
        Self::new(aps, ues, side, sys.ap_ue_height_diff_m)
    }

    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn num_ues(&self) -> usize {
        self.ue_positions.len()
    }

    pub fn distance_3d(&self, ap: usize, ue: usize) -> f64 {
        self.distances_3d[ap * self.num_ues() + ue]
    }

    /// Azimuth and elevation (rad) of the line of sight from `ap` towards `ue`.
    /// Elevation is negative since the AP sits above the UE.
    pub fn los_angles(&self, ap: usize, ue: usize) -> (f64, f64) {
        let a = self.ap_positions[ap];
        let u = self.ue_positions[ue];
        let dx = u[0] - a[0];
        let dy = u[1] - a[1];
        let horizontal = (dx * dx + dy * dy).sqrt();
        (dy.atan2(dx), (-self.height_diff_m).atan2(horizontal))
    }
}

/// Path gain in dB for every `(ue, ap)` pair, `[k * L + l]`, shadowing drawn
/// i.i.d. per pair.
pub fn large_scale_gains_db<R: Rng + ?Sized>(
    geometry: &DropGeometry,
    sys: &SystemParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (aps, ues) = (geometry.num_aps(), geometry.num_ues());
    let mut gains = Vec::with_capacity(aps * ues);
    for k in 0..ues {
        for l in 0..aps {
            let shadow = real_gaussian(rng, sys.shadow_std_db);
            gains.push(path_loss_db(geometry.distance_3d(l, k), sys.carrier_freq_ghz, shadow)?);
        }
    }
    Ok(gains)
}

/// Half-wavelength ULA response, `exp(j pi n sin(az) cos(el))`.
pub fn ula_steering(antennas: usize, azimuth: f64, elevation: f64) -> DVector<Complex64> {
    let phase = PI * azimuth.sin() * elevation.cos();
    DVector::from_iterator(antennas, (0..antennas).map(|n| Complex64::from_polar(1.0, phase * n as f64)))
}

/// One multipath cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cluster {
    pub tap: usize,
    pub azimuth: f64,
    pub elevation: f64,
    pub weight: f64,
}

/// Mean of `a a^H` over `subrays` sub-rays with Gaussian angular spread
/// around the cluster direction. Unit diagonal, so the trace is `antennas`.
pub fn cluster_signature<R: Rng + ?Sized>(
    antennas: usize,
    azimuth: f64,
    elevation: f64,
    subrays: usize,
    spread_rad: f64,
    rng: &mut R,
) -> DMatrix<Complex64> {
    if spread_rad == 0.0 {
        let a = ula_steering(antennas, azimuth, elevation);
        return &a * a.adjoint();
    }
    let mut acc = DMatrix::<Complex64>::zeros(antennas, antennas);
    for _ in 0..subrays {
        let az = azimuth + real_gaussian(rng, spread_rad);
        let el = elevation + real_gaussian(rng, spread_rad);
        let a = ula_steering(antennas, az, el);
        acc += &a * a.adjoint();
    }
    acc / Complex64::from(subrays as f64)
}

/// Per-tap correlation matrices from a cluster list, scaled so that the sum
/// of traces over taps equals `antennas * path_gain`.
pub fn correlation_from_clusters<R: Rng + ?Sized>(
    antennas: usize,
    taps: usize,
    clusters: &[Cluster],
    path_gain: f64,
    subrays: usize,
    spread_rad: f64,
    rng: &mut R,
) -> Result<Vec<DMatrix<Complex64>>> {
    let total: f64 = clusters.iter().map(|c| c.weight).sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("cluster weights sum to zero".into()));
    }
    let mut out = vec![DMatrix::<Complex64>::zeros(antennas, antennas); taps];
    for c in clusters {
        if c.tap >= taps {
            return Err(Error::Dimension(format!("cluster tap {} >= R = {taps}", c.tap)));
        }
        let sig = cluster_signature(antennas, c.azimuth, c.elevation, subrays, spread_rad, rng);
        out[c.tap] += sig * Complex64::from(c.weight * path_gain / total);
    }
    Ok(out)
}

/// Random clusters around a line-of-sight direction: uniform tap, uniform
/// angles within the configured window, weight `exp(-tap / decay)`.
pub fn draw_clusters<R: Rng + ?Sized>(
    cfg: &ChannelModelConfig,
    taps: usize,
    los_azimuth: f64,
    los_elevation: f64,
    rng: &mut R,
) -> Vec<Cluster> {
    let half_width = 0.5 * cfg.angular_neighborhood_deg.to_radians();
    (0..cfg.clusters)
        .map(|_| {
            let tap = rng.random_range(0..taps);
            let az = los_azimuth + half_width * (2.0 * rng.random::<f64>() - 1.0);
            let el = los_elevation + half_width * (2.0 * rng.random::<f64>() - 1.0);
            Cluster {
                tap,
                azimuth: az,
                elevation: el,
                weight: (-(tap as f64) / cfg.sv_decay_taps).exp(),
            }
        })
        .collect()
}

/// Correlation matrices `R_kl[r]` for every `(ue, ap, tap)`.
#[derive(Debug, Clone)]
pub struct SpatialCorrelation {
    dims: Dims,
    /// `[(k * L + l) * R + r]`
    mats: Vec<DMatrix<Complex64>>,
    /// Linear path gain, `[k * L + l]`.
    path_gains: Vec<f64>,
}

impl SpatialCorrelation {
    pub fn from_parts(dims: Dims, mats: Vec<DMatrix<Complex64>>, path_gains: Vec<f64>) -> Result<Self> {
        let pairs = dims.ues * dims.aps;
        if mats.len() != pairs * dims.taps || path_gains.len() != pairs {
            return Err(Error::Dimension(format!(
                "expected {} matrices and {pairs} gains, got {} and {}",
                pairs * dims.taps,
                mats.len(),
                path_gains.len()
            )));
        }
        if let Some(m) = mats.iter().find(|m| m.nrows() != dims.antennas || m.ncols() != dims.antennas) {
            return Err(Error::Dimension(format!(
                "correlation matrix is {}x{}, expected {n}x{n}",
                m.nrows(),
                m.ncols(),
                n = dims.antennas
            )));
        }
        Ok(Self { dims, mats, path_gains })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn get(&self, ue: usize, ap: usize, tap: usize) -> &DMatrix<Complex64> {
        &self.mats[(ue * self.dims.aps + ap) * self.dims.taps + tap]
    }

    pub fn path_gain(&self, ue: usize, ap: usize) -> f64 {
        self.path_gains[ue * self.dims.aps + ap]
    }

    /// `sum_r trace(R_kl[r])`
    pub fn total_trace(&self, ue: usize, ap: usize) -> f64 {
        (0..self.dims.taps).map(|r| self.get(ue, ap, r).trace().re).sum()
    }

    /// Hermitian square roots of all correlation matrices.
    pub fn factors(&self) -> Result<CorrelationFactors> {
        let d = self.dims;
        let mats = self
            .mats
            .par_iter()
            .enumerate()
            .map(|(idx, m)| {
                hermitian_sqrt(m).map_err(|e| {
                    let r = idx % d.taps;
                    let pair = idx / d.taps;
                    Error::Numerical(format!(
                        "correlation of UE {}, AP {}, tap {r}: {e}",
                        pair / d.aps,
                        pair % d.aps
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CorrelationFactors { dims: d, mats })
    }
}

/// PSD square root through the Hermitian eigendecomposition. Eigenvalues
/// within 1e-12 of the largest are treated as zero; anything more negative
/// fails.
pub fn hermitian_sqrt(m: &DMatrix<Complex64>) -> std::result::Result<DMatrix<Complex64>, String> {
    let n = m.nrows();
    let trace = m.trace().re;
    if trace == 0.0 && m.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
        return Ok(DMatrix::zeros(n, n));
    }
    let herm = (m + m.adjoint()) * Complex64::from(0.5);
    let eig = SymmetricEigen::new(herm);
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let floor = 1e-12 * trace.abs().max(max);
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -floor {
            return Err(format!("not positive semi-definite (eigenvalue {lambda:e})"));
        }
        let s = if lambda <= floor { 0.0 } else { lambda.sqrt() };
        scaled.column_mut(j).scale_mut(s);
    }
    Ok(&scaled * eig.eigenvectors.adjoint())
}

#[derive(Debug, Clone)]
pub struct CorrelationFactors {
    dims: Dims,
    mats: Vec<DMatrix<Complex64>>,
}

/// Correlation matrices for every pair of one drop. Each pair draws its
/// clusters from its own substream.
pub fn generate_spatial_correlation(
    geometry: &DropGeometry,
    gains_db: &[f64],
    sys: &SystemParams,
    cfg: &ChannelModelConfig,
    streams: &RandomStreams,
    drop: u64,
) -> Result<SpatialCorrelation> {
    let d = sys.dims;
    let spread = cfg.subray_spread_deg.to_radians();
    let per_pair = (0..d.ues * d.aps)
        .into_par_iter()
        .map(|pair| {
            let (k, l) = (pair / d.aps, pair % d.aps);
            let mut rng = streams.labelled(Purpose::Clusters, drop, 0, pair as u64);
            let (az, el) = geometry.los_angles(l, k);
            let clusters = draw_clusters(cfg, d.taps, az, el, &mut rng);
            let gain = 10f64.powf(gains_db[pair] / 10.0);
            correlation_from_clusters(d.antennas, d.taps, &clusters, gain, cfg.subrays, spread, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let path_gains = gains_db.iter().map(|g| 10f64.powf(g / 10.0)).collect();
    SpatialCorrelation::from_parts(d, per_pair.into_iter().flatten().collect(), path_gains)
}

/// Draws every tap as `R^{1/2} z` with `z ~ CN(0, I)`, independently over
/// `(ue, ap, tap)`. Output layout `[((k * L + l) * R + r) * N + n]`.
pub fn sample_channel_taps<R: Rng + ?Sized>(factors: &CorrelationFactors, rng: &mut R) -> Vec<Complex64> {
    let d = factors.dims;
    let mut taps = Vec::with_capacity(d.ues * d.aps * d.taps * d.antennas);
    let mut z = DVector::<Complex64>::zeros(d.antennas);
    for f in &factors.mats {
        for zi in z.iter_mut() {
            *zi = complex_gaussian(rng, 1.0);
        }
        let h = f * &z;
        taps.extend(h.iter());
    }
    taps
}

/// `sum_r h[r] exp(-j 2 pi r m / M)` for a scalar tap sequence.
pub fn frequency_response(taps: &[Complex64], subcarriers: usize) -> Result<Vec<Complex64>> {
    if taps.len() > subcarriers {
        return Err(Error::Dimension(format!(
            "{} taps exceed {subcarriers} subcarriers",
            taps.len()
        )));
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); subcarriers];
    buf[..taps.len()].copy_from_slice(taps);
    FftPlanner::new().plan_fft_forward(subcarriers).process(&mut buf);
    Ok(buf)
}

/// Time-domain taps and per-subcarrier responses of one channel realization.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    dims: Dims,
    /// `[((k * L + l) * R + r) * N + n]`
    taps: Vec<Complex64>,
    /// `[((m * K + k) * L + l) * N + n]`, so `freq_ue(m, k)` is the stacked
    /// `L N` vector.
    freq: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn from_taps(dims: Dims, taps: Vec<Complex64>) -> Result<Self> {
        let expected = dims.ues * dims.aps * dims.taps * dims.antennas;
        if taps.len() != expected {
            return Err(Error::Dimension(format!(
                "expected {expected} tap coefficients, got {}",
                taps.len()
            )));
        }
        if dims.subcarriers < dims.taps {
            return Err(Error::config("subcarriers", "must satisfy M >= R"));
        }
        let (m_total, n_ant) = (dims.subcarriers, dims.antennas);
        let fft = FftPlanner::new().plan_fft_forward(m_total);
        let mut freq = vec![Complex64::new(0.0, 0.0); m_total * dims.ues * dims.aps * n_ant];
        let mut buf = vec![Complex64::new(0.0, 0.0); m_total];
        for k in 0..dims.ues {
            for l in 0..dims.aps {
                for n in 0..n_ant {
                    buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
                    for r in 0..dims.taps {
                        buf[r] = taps[((k * dims.aps + l) * dims.taps + r) * n_ant + n];
                    }
                    fft.process(&mut buf);
                    for (m, v) in buf.iter().enumerate() {
                        freq[((m * dims.ues + k) * dims.aps + l) * n_ant + n] = *v;
                    }
                }
            }
        }
        Ok(Self { dims, taps, freq })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// `h_kl[r]`, length `N`.
    pub fn tap(&self, ue: usize, ap: usize, r: usize) -> &[Complex64] {
        let d = self.dims;
        let start = ((ue * d.aps + ap) * d.taps + r) * d.antennas;
        &self.taps[start..start + d.antennas]
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    /// Stacked `h_k[m]`, length `L N`.
    pub fn freq_ue(&self, m: usize, ue: usize) -> &[Complex64] {
        let ln = self.dims.total_antennas();
        let start = (m * self.dims.ues + ue) * ln;
        &self.freq[start..start + ln]
    }

    /// Local `h_kl[m]`, length `N`.
    pub fn freq_local(&self, m: usize, ue: usize, ap: usize) -> &[Complex64] {
        let n = self.dims.antennas;
        &self.freq_ue(m, ue)[ap * n..(ap + 1) * n]
    }

    /// `L N x K` matrix whose column `k` is `h_k[m]`.
    pub fn freq_matrix(&self, m: usize) -> DMatrix<Complex64> {
        let ln = self.dims.total_antennas();
        let start = m * self.dims.ues * ln;
        DMatrix::from_column_slice(ln, self.dims.ues, &self.freq[start..start + self.dims.ues * ln])
    }

    /// `N x K` local channel matrix at AP `ap`.
    pub fn local_matrix(&self, m: usize, ap: usize) -> DMatrix<Complex64> {
        let d = self.dims;
        DMatrix::from_fn(d.antennas, d.ues, |n, k| self.freq_local(m, k, ap)[n])
    }
}

/// Everything random about one drop that is shared across channel
/// realizations.
#[derive(Debug, Clone)]
pub struct NetworkDrop {
    pub index: u64,
    pub geometry: DropGeometry,
    /// `[k * L + l]`
    pub gains_db: Vec<f64>,
    pub correlation: SpatialCorrelation,
    factors: CorrelationFactors,
}

impl NetworkDrop {
    pub fn generate(sys: &SystemParams, cfg: &ChannelModelConfig, streams: &RandomStreams, index: u64) -> Result<Self> {
        let geometry = DropGeometry::random(sys, &mut streams.labelled(Purpose::Geometry, index, 0, 0))?;
        let gains_db = large_scale_gains_db(&geometry, sys, &mut streams.labelled(Purpose::Shadowing, index, 0, 0))?;
        let correlation = generate_spatial_correlation(&geometry, &gains_db, sys, cfg, streams, index)?;
        let factors = correlation.factors()?;
        Ok(Self {
            index,
            geometry,
            gains_db,
            correlation,
            factors,
        })
    }

    pub fn realization(&self, streams: &RandomStreams, realization: u32) -> Result<ChannelRealization> {
        let mut rng = streams.labelled(Purpose::Taps, self.index, realization, 0);
        ChannelRealization::from_taps(self.correlation.dims(), sample_channel_taps(&self.factors, &mut rng))
    }

    pub fn export(&self) -> DropExport {
        let d = self.correlation.dims();
        DropExport {
            drop: self.index,
            ap_positions_m: self.geometry.ap_positions.clone(),
            ue_positions_m: self.geometry.ue_positions.clone(),
            height_diff_m: self.geometry.height_diff_m,
            path_gain_db: (0..d.ues).map(|k| self.gains_db[k * d.aps..(k + 1) * d.aps].to_vec()).collect(),
            correlation_traces: (0..d.ues)
                .map(|k| {
                    (0..d.aps)
                        .map(|l| (0..d.taps).map(|r| self.correlation.get(k, l, r).trace().re).collect())
                        .collect()
                })
                .collect(),
        }
    }
}

/// Debug dump of a drop.
///
/// `path_gain_db[k][l]` and `correlation_traces[k][l][r]` (linear power).
#[derive(Debug, Clone, Serialize)]
pub struct DropExport {
    pub drop: u64,
    pub ap_positions_m: Vec<[f64; 2]>,
    pub ue_positions_m: Vec<[f64; 2]>,
    pub height_diff_m: f64,
    pub path_gain_db: Vec<Vec<f64>>,
    pub correlation_traces: Vec<Vec<Vec<f64>>>,
}
