//! CA-CFAR gating, linear range compensation and spherical-to-Cartesian
//! resampling of beamformed volumes.

use rayon::prelude::*;

use crate::beamform::SphericalVolume;
use crate::error::{Error, Result};
use crate::geometry::{cartesian_to_spherical, RigidTransform};
use crate::grid::VoxelGrid;

/// Intensity on a [`VoxelGrid`], row-major `[H x D x W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub values: Vec<f64>,
    pub grid: VoxelGrid,
}

impl Volume {
    pub fn zeros(grid: VoxelGrid) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn get(&self, h: usize, d: usize, w: usize) -> f64 {
        self.values[self.grid.index(h, d, w)]
    }

    /// Values rounded to f32, the precision volumes are stored at.
    pub fn quantized(&self) -> Volume {
        Volume {
            values: self.values.iter().map(|&x| x as f32 as f64).collect(),
            grid: self.grid,
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn argmax(&self) -> (usize, usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        self.grid.unravel(best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfarParams {
    /// Training cells on each side of the cell under test.
    pub training_cells: usize,
    /// Guard cells on each side of the cell under test.
    pub guard_cells: usize,
    pub design_pfa: f64,
}

impl Default for CfarParams {
    fn default() -> Self {
        Self {
            training_cells: 8,
            guard_cells: 2,
            design_pfa: 1e-3,
        }
    }
}

impl CfarParams {
    pub fn validate(&self) -> Result<()> {
        if self.training_cells < 1 {
            return Err(Error::config("cfar.training_cells", "must be at least 1"));
        }
        if !(self.design_pfa > 0.0 && self.design_pfa < 1.0) {
            return Err(Error::config("cfar.design_pfa", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn min_range_bins(&self) -> usize {
        2 * (self.training_cells + self.guard_cells) + 1
    }
}

/// Threshold multiplier for `n` averaged square-law training cells:
/// `alpha = n (pfa^(-1/n) - 1)`.
pub fn ca_cfar_alpha(n: usize, pfa: f64) -> f64 {
    let n = n as f64;
    n * (pfa.powf(-1.0 / n) - 1.0)
}

/// Detection flags along one range profile.
///
/// Interior cells average `2T` training cells split around the guard band.
/// Where one side runs off the profile the window moves entirely to the
/// other side (up to `2T` cells) and `alpha` is recomputed for the cells
/// actually used.
pub fn ca_cfar_profile(profile: &[f64], p: &CfarParams) -> Vec<bool> {
    let n = profile.len();
    let (t, g) = (p.training_cells, p.guard_cells);
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in profile.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let sum = |lo: usize, hi: usize| prefix[hi] - prefix[lo]; // [lo, hi)
    let full_alpha = ca_cfar_alpha(2 * t, p.design_pfa);
    (0..n)
        .map(|k| {
            let left_ok = k >= g + t;
            let right_ok = k + g + t < n;
            let (total, count) = match (left_ok, right_ok) {
                (true, true) => (sum(k - g - t, k - g) + sum(k + g + 1, k + g + t + 1), 2 * t),
                (false, true) => {
                    let lo = k + g + 1;
                    let hi = (lo + 2 * t).min(n);
                    (sum(lo, hi), hi - lo)
                }
                (true, false) => {
                    let hi = k - g;
                    let lo = hi.saturating_sub(2 * t);
                    (sum(lo, hi), hi - lo)
                }
                (false, false) => {
                    let left = if k > g { sum(0, k - g) } else { 0.0 };
                    let right = if k + g + 1 < n { sum(k + g + 1, n) } else { 0.0 };
                    let cnt = k.saturating_sub(g) + n.saturating_sub(k + g + 1);
                    (left + right, cnt)
                }
            };
            if count == 0 {
                return false;
            }
            let alpha = if count == 2 * t {
                full_alpha
            } else {
                ca_cfar_alpha(count, p.design_pfa)
            };
            profile[k] > alpha * total / count as f64
        })
        .collect()
}

fn check_cfar(v: &SphericalVolume, p: &CfarParams) -> Result<()> {
    p.validate()?;
    let nr = v.grid.r_bins();
    if nr < p.min_range_bins() {
        return Err(Error::config(
            "cfar",
            format!(
                "need at least {} range bins for {} training and {} guard cells, grid has {nr}",
                p.min_range_bins(),
                p.training_cells,
                p.guard_cells
            ),
        ));
    }
    Ok(())
}

/// Per-cell detections along range. With `square_law` the test runs on
/// `v^2`, which is what the `alpha` calibration assumes for envelope data.
pub fn ca_cfar_detect(v: &SphericalVolume, p: &CfarParams, square_law: bool) -> Result<Vec<bool>> {
    check_cfar(v, p)?;
    let g = v.grid;
    let nr = g.r_bins();
    let mut mask = vec![false; v.values.len()];
    let beams: Vec<(usize, usize)> = (0..g.phi_bins)
        .flat_map(|i| (0..g.theta_bins).map(move |j| (i, j)))
        .collect();
    let flags: Vec<Vec<bool>> = beams
        .par_iter()
        .map(|&(i, j)| {
            let profile: Vec<f64> = (0..nr)
                .map(|k| {
                    let x = v.get(i, k, j);
                    if square_law {
                        x * x
                    } else {
                        x
                    }
                })
                .collect();
            ca_cfar_profile(&profile, p)
        })
        .collect();
    for (&(i, j), f) in beams.iter().zip(&flags) {
        for (k, &hit) in f.iter().enumerate() {
            mask[g.index(i, k, j)] = hit;
        }
    }
    Ok(mask)
}

fn apply_mask(v: &SphericalVolume, mask: &[bool]) -> SphericalVolume {
    SphericalVolume {
        values: v
            .values
            .iter()
            .zip(mask)
            .map(|(&x, &keep)| if keep { x } else { 0.0 })
            .collect(),
        grid: v.grid,
    }
}

/// Cell-averaging CFAR along range: cells at or below threshold are zeroed,
/// detections keep their original value.
pub fn ca_cfar(v: &SphericalVolume, p: &CfarParams) -> Result<SphericalVolume> {
    let mask = ca_cfar_detect(v, p, false)?;
    Ok(apply_mask(v, &mask))
}

/// CFAR on envelope data: detection on `v^2`, surviving cells keep `v`.
pub fn ca_cfar_envelope(v: &SphericalVolume, p: &CfarParams) -> Result<SphericalVolume> {
    let mask = ca_cfar_detect(v, p, true)?;
    Ok(apply_mask(v, &mask))
}

/// Gain `r_center(k) / r_center(last)`, linear in range and 1 at the farthest bin.
pub fn range_compensate(v: &SphericalVolume) -> SphericalVolume {
    let g = v.grid;
    let nr = g.r_bins();
    let far = g.r_center(nr - 1);
    let gains: Vec<f64> = (0..nr).map(|k| g.r_center(k) / far).collect();
    let mut out = v.clone();
    for (idx, x) in out.values.iter_mut().enumerate() {
        let (_, k, _) = g.unravel(idx);
        *x *= gains[k];
    }
    out
}

fn lerp_index(f: f64, n: usize) -> (usize, usize, f64) {
    let f = f.clamp(0.0, (n - 1) as f64);
    let lo = f.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    (lo, hi, f - lo as f64)
}

/// Trilinear resampling of a sensor-frame spherical volume onto a world
/// voxel grid. Voxels whose centre falls outside the spherical field of
/// view are 0; between the outermost bin centres and the grid edge the
/// nearest edge value is used.
pub fn resample_to_cartesian(
    v: &SphericalVolume,
    out: &VoxelGrid,
    sensor_to_world: &RigidTransform,
) -> Result<Volume> {
    v.grid.validate()?;
    out.validate()?;
    let world_to_sensor = sensor_to_world.invert();
    let sg = v.grid;
    let [np, nr, nt] = sg.shape();
    let (h, d, w) = out.dims;
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|ih| {
            let mut row = vec![0.0; d * w];
            for id in 0..d {
                for iw in 0..w {
                    let p = world_to_sensor.apply(out.voxel_center(ih, id, iw));
                    if p.z < 0.0 {
                        continue;
                    }
                    let s = cartesian_to_spherical(p);
                    if !sg.contains(s) {
                        continue;
                    }
                    let (fp, fr, ft) = sg.fractional_index(s);
                    let (p0, p1, up) = lerp_index(fp, np);
                    let (r0, r1, ur) = lerp_index(fr, nr);
                    let (t0, t1, ut) = lerp_index(ft, nt);
                    let at = |a, b, c| v.values[sg.index(a, b, c)];
                    let c00 = at(p0, r0, t0) * (1.0 - ut) + at(p0, r0, t1) * ut;
                    let c01 = at(p0, r1, t0) * (1.0 - ut) + at(p0, r1, t1) * ut;
                    let c10 = at(p1, r0, t0) * (1.0 - ut) + at(p1, r0, t1) * ut;
                    let c11 = at(p1, r1, t0) * (1.0 - ut) + at(p1, r1, t1) * ut;
                    let c0 = c00 * (1.0 - ur) + c01 * ur;
                    let c1 = c10 * (1.0 - ur) + c11 * ur;
                    row[id * w + iw] = c0 * (1.0 - up) + c1 * up;
                }
            }
            row
        })
        .collect();
    Ok(Volume {
        values: rows.concat(),
        grid: *out,
    })
}

/// Voxelwise maximum of two volumes on the same grid.
pub fn merge_volumes(a: &Volume, b: &Volume) -> Result<Volume> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch { op: "merge_volumes" });
    }
    Ok(Volume {
        values: a.values.iter().zip(&b.values).map(|(x, y)| x.max(*y)).collect(),
        grid: a.grid,
    })
}
