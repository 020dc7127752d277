//! Delay-and-sum and MVDR (Capon) beamforming of RF frames onto a spherical grid.
//!
//! Both beamformers work on the analytic signal of each channel. For a grid
//! bin with Cartesian centre `p` the round-trip delay to element `m` is
//! `tau_m = (|p - tx| + |p - rx_m|) / c`; echoes are read half a pulse later,
//! at the centre of the tone burst, so a target sitting on the bin centre is
//! sampled where its envelope is flat.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::geometry::spherical_to_cartesian;
use crate::grid::SphericalGrid;
use crate::linalg::{inner, quadratic_form, Cholesky};
use crate::scene::{ArrayGeometry, RfFrame};

/// Row-major complex matrix `[rows x cols]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Non-negative intensity on a [`SphericalGrid`], laid out `[phi, r, theta]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalVolume {
    pub values: Vec<f64>,
    pub grid: SphericalGrid,
}

impl SphericalVolume {
    pub fn zeros(grid: SphericalGrid) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn get(&self, phi: usize, r: usize, theta: usize) -> f64 {
        self.values[self.grid.index(phi, r, theta)]
    }

    pub fn set(&mut self, phi: usize, r: usize, theta: usize, v: f64) {
        let i = self.grid.index(phi, r, theta);
        self.values[i] = v;
    }

    /// `(phi, r, theta)` of the largest value; ties resolve to the lowest index.
    pub fn argmax(&self) -> (usize, usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        self.grid.unravel(best)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Analytic signal per channel via the FFT Hilbert transform. The real part
/// is the input itself.
pub fn analytic_signal(frame: &RfFrame) -> Result<ComplexMatrix> {
    let n = frame.len();
    if n < 4 {
        return Err(Error::config("rf.samples", "need at least 4 time samples"));
    }
    let nfft = n.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);
    let mut data = Vec::with_capacity(frame.channels * n);
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    for m in 0..frame.channels {
        let ch = frame.channel(m);
        for (b, &x) in buf.iter_mut().zip(ch) {
            *b = Complex64::new(x, 0.0);
        }
        for b in buf.iter_mut().skip(n) {
            *b = Complex64::new(0.0, 0.0);
        }
        fwd.process(&mut buf);
        // keep DC and Nyquist, double positive frequencies, drop negative ones
        for (k, b) in buf.iter_mut().enumerate() {
            if k == 0 || k == nfft / 2 {
                continue;
            } else if k < nfft / 2 {
                *b *= 2.0;
            } else {
                *b = Complex64::new(0.0, 0.0);
            }
        }
        inv.process(&mut buf);
        let scale = 1.0 / nfft as f64;
        data.extend(
            buf.iter()
                .zip(ch)
                .map(|(b, &x)| Complex64::new(x, b.im * scale)),
        );
    }
    Ok(ComplexMatrix {
        rows: frame.channels,
        cols: n,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvdrParams {
    pub loading_factor: f64,
    /// Absolute loading used when the sample covariance has zero trace.
    pub loading_floor: f64,
    /// Fast-time snapshots per range bin.
    pub snapshots: usize,
    pub condition_limit: f64,
    /// Replace the covariance by the identity; weights reduce to `a / (a^H a)`.
    pub identity_covariance: bool,
}

impl Default for MvdrParams {
    fn default() -> Self {
        Self {
            loading_factor: 1e-2,
            loading_floor: 1e-12,
            snapshots: 16,
            condition_limit: 1e12,
            identity_covariance: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamformConfig {
    /// Tone-burst length used by the transmitter; echoes are read at its centre.
    pub pulse_cycles: usize,
    /// Linear interpolation between samples instead of nearest-sample delays (DAS only).
    pub interpolate: bool,
    pub mvdr: MvdrParams,
}

impl Default for BeamformConfig {
    fn default() -> Self {
        Self {
            pulse_cycles: 8,
            interpolate: false,
            mvdr: MvdrParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Das,
    Mvdr,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "das" => Ok(Method::Das),
            "mvdr" => Ok(Method::Mvdr),
            other => Err(Error::config("method", format!("unknown beamformer {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Das => "das",
            Method::Mvdr => "mvdr",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformOutput {
    pub volume: SphericalVolume,
    /// Cells zeroed because their covariance could not be inverted.
    pub singular_cells: usize,
}

fn check_inputs(frame: &RfFrame, array: &ArrayGeometry, grid: &SphericalGrid) -> Result<()> {
    array.validate()?;
    grid.validate()?;
    if frame.channels != array.channels() {
        return Err(Error::Shape {
            op: "beamform",
            axis: "channels",
            expected: array.channels(),
            found: frame.channels,
        });
    }
    Ok(())
}

/// Fractional sample index at which element `m` sees the burst centre of an
/// echo from bin centre `p`.
fn echo_sample(array: &ArrayGeometry, p: crate::geometry::Point3, m: usize, half_pulse: f64) -> f64 {
    (array.round_trip(p, m) + half_pulse) * array.sample_rate
}

pub fn das_beamform(
    frame: &RfFrame,
    array: &ArrayGeometry,
    grid: &SphericalGrid,
    cfg: &BeamformConfig,
) -> Result<SphericalVolume> {
    check_inputs(frame, array, grid)?;
    let analytic = analytic_signal(frame)?;
    Ok(das_from_analytic(&analytic, array, grid, cfg))
}

pub fn das_from_analytic(
    analytic: &ComplexMatrix,
    array: &ArrayGeometry,
    grid: &SphericalGrid,
    cfg: &BeamformConfig,
) -> SphericalVolume {
    let half_pulse = cfg.pulse_cycles as f64 / array.carrier_freq / 2.0;
    let n = analytic.cols;
    let m_count = analytic.rows;
    let nr = grid.r_bins();
    let beams: Vec<(usize, usize)> = (0..grid.phi_bins)
        .flat_map(|i| (0..grid.theta_bins).map(move |j| (i, j)))
        .collect();
    let columns: Vec<Vec<f64>> = beams
        .par_iter()
        .map(|&(i, j)| {
            (0..nr)
                .map(|k| {
                    let p = spherical_to_cartesian(grid.bin_center(i, k, j));
                    let mut acc = Complex64::new(0.0, 0.0);
                    for m in 0..m_count {
                        let s = echo_sample(array, p, m, half_pulse);
                        let row = analytic.row(m);
                        if cfg.interpolate {
                            let lo = s.floor();
                            let frac = s - lo;
                            let lo = lo as usize;
                            if lo + 1 >= n {
                                return 0.0;
                            }
                            acc += row[lo] * (1.0 - frac) + row[lo + 1] * frac;
                        } else {
                            let idx = s.round() as usize;
                            if idx >= n {
                                return 0.0;
                            }
                            acc += row[idx];
                        }
                    }
                    acc.norm() / m_count as f64
                })
                .collect()
        })
        .collect();
    let mut vol = SphericalVolume::zeros(*grid);
    for (&(i, j), col) in beams.iter().zip(&columns) {
        for (k, &v) in col.iter().enumerate() {
            vol.set(i, k, j, v);
        }
    }
    vol
}

/// Loaded sample covariance of `M` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    /// Row-major `M x M`, including the diagonal loading.
    pub matrix: Vec<Complex64>,
    pub channels: usize,
    pub loading: f64,
}

/// `R = (1/K) sum_k x_k x_k^H + delta I` with
/// `delta = loading_factor * trace(S) / M`.
///
/// `snapshots` is row-major `[M x K]`. When the sample covariance has zero
/// trace and `loading_factor > 0`, `delta` falls back to `floor`.
pub fn estimate_covariance(
    snapshots: &ComplexMatrix,
    loading_factor: f64,
    floor: f64,
) -> Result<CovarianceEstimate> {
    let m = snapshots.rows;
    let k = snapshots.cols;
    if k == 0 || m == 0 {
        return Err(Error::Empty("estimate_covariance"));
    }
    if !(loading_factor >= 0.0) {
        return Err(Error::config("loading_factor", "must be non-negative"));
    }
    let mut r = vec![Complex64::new(0.0, 0.0); m * m];
    let inv_k = 1.0 / k as f64;
    for i in 0..m {
        let xi = snapshots.row(i);
        for j in 0..=i {
            let xj = snapshots.row(j);
            let s: Complex64 = xi.iter().zip(xj).map(|(a, b)| a * b.conj()).sum::<Complex64>() * inv_k;
            r[i * m + j] = s;
            r[j * m + i] = s.conj();
        }
        r[i * m + i].im = 0.0;
    }
    let trace: f64 = (0..m).map(|i| r[i * m + i].re).sum();
    let loading = if loading_factor > 0.0 {
        let d = loading_factor * trace / m as f64;
        if d > 0.0 {
            d.max(floor)
        } else {
            floor
        }
    } else {
        0.0
    };
    if trace == 0.0 && loading == 0.0 {
        return Err(Error::SingularCovariance {
            bin: "all-zero snapshots without loading".into(),
            condition: f64::INFINITY,
        });
    }
    for i in 0..m {
        r[i * m + i].re += loading;
    }
    Ok(CovarianceEstimate {
        matrix: r,
        channels: m,
        loading,
    })
}

fn mvdr_weights_with_limit(
    cov: &CovarianceEstimate,
    steering: &[Complex64],
    condition_limit: f64,
) -> std::result::Result<Vec<Complex64>, f64> {
    let chol = Cholesky::factor(&cov.matrix, cov.channels).map_err(|_| f64::INFINITY)?;
    let cond = chol.condition_estimate();
    if cond > condition_limit {
        return Err(cond);
    }
    let y = chol.solve(steering);
    let denom = inner(steering, &y);
    if !(denom.norm() > 0.0) {
        return Err(f64::INFINITY);
    }
    Ok(y.into_iter().map(|v| v / denom.conj()).collect())
}

/// `w = R^-1 a / (a^H R^-1 a)`, so that `w^H a = 1`.
pub fn mvdr_weights(cov: &CovarianceEstimate, steering: &[Complex64]) -> Result<Vec<Complex64>> {
    mvdr_weights_checked(cov, steering, MvdrParams::default().condition_limit)
}

pub fn mvdr_weights_checked(
    cov: &CovarianceEstimate,
    steering: &[Complex64],
    condition_limit: f64,
) -> Result<Vec<Complex64>> {
    if steering.len() != cov.channels {
        return Err(Error::Shape {
            op: "mvdr_weights",
            axis: "channels",
            expected: cov.channels,
            found: steering.len(),
        });
    }
    if !(steering.iter().map(|a| a.norm_sqr()).sum::<f64>() > 0.0) {
        return Err(Error::config("steering", "steering vector must be non-zero"));
    }
    mvdr_weights_with_limit(cov, steering, condition_limit).map_err(|condition| {
        Error::SingularCovariance {
            bin: "requested steering".into(),
            condition,
        }
    })
}

/// Narrowband MVDR on fast-time snapshots around each range bin.
///
/// Per cell, every channel is aligned to its nearest-sample echo delay and
/// `snapshots` consecutive samples are taken around it. The steering vector
/// carries the residual carrier phase of that rounding,
/// `a_m = exp(j 2 pi f0 (n_m / fs - tau_m))`. The stored value is the RMS
/// beam output `sqrt(w^H S w)` for the unloaded sample covariance `S`, in
/// the same units as the DAS envelope.
pub fn mvdr_beamform(
    frame: &RfFrame,
    array: &ArrayGeometry,
    grid: &SphericalGrid,
    cfg: &BeamformConfig,
) -> Result<BeamformOutput> {
    check_inputs(frame, array, grid)?;
    let analytic = analytic_signal(frame)?;
    mvdr_from_analytic(&analytic, array, grid, cfg)
}

pub fn mvdr_from_analytic(
    analytic: &ComplexMatrix,
    array: &ArrayGeometry,
    grid: &SphericalGrid,
    cfg: &BeamformConfig,
) -> Result<BeamformOutput> {
    let p = cfg.mvdr;
    if p.snapshots == 0 {
        return Err(Error::config("mvdr.snapshots", "must be at least 1"));
    }
    let half_pulse = cfg.pulse_cycles as f64 / array.carrier_freq / 2.0;
    let n = analytic.cols;
    let m_count = analytic.rows;
    let nr = grid.r_bins();
    let k = p.snapshots;
    let before = k / 2;
    let beams: Vec<(usize, usize)> = (0..grid.phi_bins)
        .flat_map(|i| (0..grid.theta_bins).map(move |j| (i, j)))
        .collect();
    let w0 = 2.0 * PI * array.carrier_freq;
    let fs = array.sample_rate;
    let columns: Vec<(Vec<f64>, usize)> = beams
        .par_iter()
        .map(|&(i, j)| {
            let mut singular = 0;
            let mut snaps = ComplexMatrix {
                rows: m_count,
                cols: k,
                data: vec![Complex64::new(0.0, 0.0); m_count * k],
            };
            let mut steering = vec![Complex64::new(0.0, 0.0); m_count];
            let mut col = vec![0.0; nr];
            'cells: for (r, out) in col.iter_mut().enumerate() {
                let pt = spherical_to_cartesian(grid.bin_center(i, r, j));
                for m in 0..m_count {
                    let tau = array.round_trip(pt, m);
                    let idx = ((tau + half_pulse) * fs).round() as usize;
                    if idx < before || idx - before + k > n {
                        continue 'cells;
                    }
                    let src = &analytic.row(m)[idx - before..idx - before + k];
                    snaps.data[m * k..(m + 1) * k].copy_from_slice(src);
                    steering[m] = Complex64::from_polar(1.0, w0 * (idx as f64 / fs - tau));
                }
                let sample = match estimate_covariance(&snaps, 0.0, 0.0) {
                    Ok(s) => s,
                    // no energy in any channel
                    Err(_) => continue,
                };
                let weights = if p.identity_covariance {
                    let norm: f64 = steering.iter().map(|a| a.norm_sqr()).sum();
                    steering.iter().map(|a| a / norm).collect::<Vec<_>>()
                } else {
                    let mut loaded = sample.clone();
                    let trace: f64 = (0..m_count).map(|q| loaded.matrix[q * m_count + q].re).sum();
                    let delta = (p.loading_factor * trace / m_count as f64).max(p.loading_floor);
                    for q in 0..m_count {
                        loaded.matrix[q * m_count + q].re += delta;
                    }
                    loaded.loading = delta;
                    match mvdr_weights_with_limit(&loaded, &steering, p.condition_limit) {
                        Ok(w) => w,
                        Err(_) => {
                            singular += 1;
                            continue;
                        }
                    }
                };
                *out = quadratic_form(&sample.matrix, &weights).max(0.0).sqrt();
            }
            (col, singular)
        })
        .collect();
    let mut vol = SphericalVolume::zeros(*grid);
    let mut singular_cells = 0;
    for (&(i, j), (col, s)) in beams.iter().zip(&columns) {
        singular_cells += s;
        for (r, &v) in col.iter().enumerate() {
            vol.set(i, r, j, v);
        }
    }
    Ok(BeamformOutput {
        volume: vol,
        singular_cells,
    })
}

pub fn beamform(
    method: Method,
    frame: &RfFrame,
    array: &ArrayGeometry,
    grid: &SphericalGrid,
    cfg: &BeamformConfig,
) -> Result<BeamformOutput> {
    match method {
        Method::Das => Ok(BeamformOutput {
            volume: das_beamform(frame, array, grid, cfg)?,
            singular_cells: 0,
        }),
        Method::Mvdr => mvdr_beamform(frame, array, grid, cfg),
    }
}
