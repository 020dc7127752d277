//! Sampling lattices: the spherical beamforming grid and the Cartesian voxel grid.

use crate::error::{Error, Result};
use crate::geometry::{Point3, SphericalCoord};

/// Bins are cell-centred: bin `k` of the range axis spans
/// `[r_min + k r_step, r_min + (k + 1) r_step)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalGrid {
    pub r_min: f64,
    pub r_max: f64,
    pub r_step: f64,
    pub theta_bounds: (f64, f64),
    pub theta_bins: usize,
    pub phi_bounds: (f64, f64),
    pub phi_bins: usize,
}

impl Default for SphericalGrid {
    /// 0-12 m in 0.125 m steps, azimuth [-90, 90] deg in 64 bins,
    /// elevation [-10, 30] deg in 64 bins.
    fn default() -> Self {
        Self {
            r_min: 0.0,
            r_max: 12.0,
            r_step: 0.125,
            theta_bounds: ((-90f64).to_radians(), 90f64.to_radians()),
            theta_bins: 64,
            phi_bounds: ((-10f64).to_radians(), 30f64.to_radians()),
            phi_bins: 64,
        }
    }
}

impl SphericalGrid {
    /// Same angular and range extent with different bin counts.
    pub fn with_bins(&self, phi_bins: usize, r_bins: usize, theta_bins: usize) -> Self {
        Self {
            r_step: (self.r_max - self.r_min) / r_bins as f64,
            theta_bins,
            phi_bins,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_step > 0.0) || !(self.r_max > self.r_min) || self.r_min < 0.0 {
            return Err(Error::config("grid.range", "need 0 <= r_min < r_max and r_step > 0"));
        }
        let bins = (self.r_max - self.r_min) / self.r_step;
        if (bins - bins.round()).abs() > 1e-9 * bins.max(1.0) {
            return Err(Error::config(
                "grid.r_step",
                format!("range span is not an integer number of steps ({bins})"),
            ));
        }
        if self.theta_bins == 0 || self.phi_bins == 0 {
            return Err(Error::config("grid.bins", "bin counts must be positive"));
        }
        if !(self.theta_bounds.1 > self.theta_bounds.0) || !(self.phi_bounds.1 > self.phi_bounds.0)
        {
            return Err(Error::config("grid.bounds", "angular bounds must be increasing"));
        }
        Ok(())
    }

    pub fn r_bins(&self) -> usize {
        ((self.r_max - self.r_min) / self.r_step).round() as usize
    }

    /// `[phi, r, theta]`
    pub fn shape(&self) -> [usize; 3] {
        [self.phi_bins, self.r_bins(), self.theta_bins]
    }

    pub fn len(&self) -> usize {
        self.phi_bins * self.r_bins() * self.theta_bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta_step(&self) -> f64 {
        (self.theta_bounds.1 - self.theta_bounds.0) / self.theta_bins as f64
    }

    pub fn phi_step(&self) -> f64 {
        (self.phi_bounds.1 - self.phi_bounds.0) / self.phi_bins as f64
    }

    pub fn r_center(&self, k: usize) -> f64 {
        self.r_min + (k as f64 + 0.5) * self.r_step
    }

    pub fn theta_center(&self, j: usize) -> f64 {
        self.theta_bounds.0 + (j as f64 + 0.5) * self.theta_step()
    }

    pub fn phi_center(&self, i: usize) -> f64 {
        self.phi_bounds.0 + (i as f64 + 0.5) * self.phi_step()
    }

    pub fn bin_center(&self, phi: usize, r: usize, theta: usize) -> SphericalCoord {
        SphericalCoord::new(self.r_center(r), self.theta_center(theta), self.phi_center(phi))
    }

    pub fn index(&self, phi: usize, r: usize, theta: usize) -> usize {
        (phi * self.r_bins() + r) * self.theta_bins + theta
    }

    pub fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let nt = self.theta_bins;
        let nr = self.r_bins();
        (idx / (nr * nt), (idx / nt) % nr, idx % nt)
    }

    pub fn contains(&self, c: SphericalCoord) -> bool {
        c.r >= self.r_min
            && c.r <= self.r_max
            && c.theta >= self.theta_bounds.0
            && c.theta <= self.theta_bounds.1
            && c.phi >= self.phi_bounds.0
            && c.phi <= self.phi_bounds.1
    }

    /// Continuous bin coordinates `(phi, r, theta)` where integer values are bin centres.
    pub fn fractional_index(&self, c: SphericalCoord) -> (f64, f64, f64) {
        (
            (c.phi - self.phi_bounds.0) / self.phi_step() - 0.5,
            (c.r - self.r_min) / self.r_step - 0.5,
            (c.theta - self.theta_bounds.0) / self.theta_step() - 0.5,
        )
    }
}

/// Cartesian voxel lattice with dims ordered `(height, depth, width)`,
/// i.e. `(y, z, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGrid {
    pub x_bounds: (f64, f64),
    pub y_bounds: (f64, f64),
    pub z_bounds: (f64, f64),
    pub dims: (usize, usize, usize),
}

impl Default for VoxelGrid {
    /// 64 x 96 x 64 over y in [-2, 6], z in [0, 12], x in [-12, 12].
    fn default() -> Self {
        Self {
            x_bounds: (-12.0, 12.0),
            y_bounds: (-2.0, 6.0),
            z_bounds: (0.0, 12.0),
            dims: (64, 96, 64),
        }
    }
}

impl VoxelGrid {
    pub fn with_dims(&self, h: usize, d: usize, w: usize) -> Self {
        Self {
            dims: (h, d, w),
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, d, w) = self.dims;
        if h == 0 || d == 0 || w == 0 {
            return Err(Error::config("voxel_grid.dims", "dims must be positive"));
        }
        for (name, (lo, hi)) in [
            ("voxel_grid.x_bounds", self.x_bounds),
            ("voxel_grid.y_bounds", self.y_bounds),
            ("voxel_grid.z_bounds", self.z_bounds),
        ] {
            if !(hi > lo) {
                return Err(Error::config(name, "min must be below max"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_size(&self) -> Point3 {
        Point3::new(
            (self.x_bounds.1 - self.x_bounds.0) / self.dims.2 as f64,
            (self.y_bounds.1 - self.y_bounds.0) / self.dims.0 as f64,
            (self.z_bounds.1 - self.z_bounds.0) / self.dims.1 as f64,
        )
    }

    pub fn voxel_center(&self, h: usize, d: usize, w: usize) -> Point3 {
        let s = self.voxel_size();
        Point3::new(
            self.x_bounds.0 + (w as f64 + 0.5) * s.x,
            self.y_bounds.0 + (h as f64 + 0.5) * s.y,
            self.z_bounds.0 + (d as f64 + 0.5) * s.z,
        )
    }

    pub fn index(&self, h: usize, d: usize, w: usize) -> usize {
        (h * self.dims.1 + d) * self.dims.2 + w
    }

    pub fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let (_, d, w) = self.dims;
        (idx / (d * w), (idx / w) % d, idx % w)
    }

    /// Voxel holding `p`, if inside the grid extent.
    pub fn locate(&self, p: Point3) -> Option<(usize, usize, usize)> {
        let s = self.voxel_size();
        let fw = (p.x - self.x_bounds.0) / s.x;
        let fh = (p.y - self.y_bounds.0) / s.y;
        let fd = (p.z - self.z_bounds.0) / s.z;
        let (h, d, w) = self.dims;
        if fw < 0.0 || fh < 0.0 || fd < 0.0 {
            return None;
        }
        let (iw, ih, id) = (fw as usize, fh as usize, fd as usize);
        (ih < h && id < d && iw < w).then_some((ih, id, iw))
    }

    /// The six bounds in `(y, z, x)` order, matching `dims`.
    pub fn bounds_hdw(&self) -> [f64; 6] {
        [
            self.y_bounds.0,
            self.y_bounds.1,
            self.z_bounds.0,
            self.z_bounds.1,
            self.x_bounds.0,
            self.x_bounds.1,
        ]
    }

    pub fn from_bounds_hdw(b: [f64; 6], dims: (usize, usize, usize)) -> Self {
        Self {
            y_bounds: (b[0], b[1]),
            z_bounds: (b[2], b[3]),
            x_bounds: (b[4], b[5]),
            dims,
        }
    }
}
