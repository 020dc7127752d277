//! Pipeline configuration as a TOML document of flat `[section]` tables.
//! Angles are in degrees.

use std::fmt::Write as _;
use std::path::Path;

use crate::annotate::{AnnotateParams, GroundParams};
use crate::beamform::{BeamformConfig, Method, MvdrParams};
use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform};
use crate::grid::{SphericalGrid, VoxelGrid};
use crate::processing::CfarParams;
use crate::scene::{ArrayGeometry, LidarParams, SceneParams};
use crate::unet::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensor {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Heading as listed in the calibration table.
    pub theta_deg: f64,
    /// Upward tilt of the boresight.
    pub phi_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub frames: usize,

    pub r_min: f64,
    pub r_max: f64,
    pub r_step: f64,
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
    pub theta_bins: usize,
    pub phi_min_deg: f64,
    pub phi_max_deg: f64,
    pub phi_bins: usize,

    pub x_bounds: (f64, f64),
    pub y_bounds: (f64, f64),
    pub z_bounds: (f64, f64),
    pub dims: (usize, usize, usize),

    pub array_cols: usize,
    pub array_rows: usize,
    pub carrier_freq: f64,
    pub sample_rate: f64,
    pub sound_speed: f64,

    pub method: Method,
    pub pulse_cycles: usize,
    pub interpolate: bool,
    pub loading_factor: f64,
    pub snapshots: usize,

    pub cfar: bool,
    pub cfar_params: CfarParams,
    pub range_compensation: bool,
    /// Threshold the volume to points and keep only clustered, non-ground voxels.
    pub point_stage: bool,
    /// Fraction of the frame peak above which a voxel becomes a point.
    pub point_threshold: f64,

    pub annotation: AnnotateParams,

    /// Added to each table heading to obtain the yaw about +y.
    pub heading_offset_deg: f64,
    pub left: Sensor,
    pub right: Sensor,

    pub scene: SceneParams,
    pub lidar: LidarParams,
    pub noise_std: f64,

    pub train: TrainConfig,
    pub train_fraction: f64,
    pub filter_empty: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let g = SphericalGrid::default();
        let v = VoxelGrid::default();
        let bf = BeamformConfig::default();
        Self {
            seed: 0,
            frames: 8,
            r_min: g.r_min,
            r_max: g.r_max,
            r_step: g.r_step,
            theta_min_deg: -90.0,
            theta_max_deg: 90.0,
            theta_bins: g.theta_bins,
            phi_min_deg: -10.0,
            phi_max_deg: 30.0,
            phi_bins: g.phi_bins,
            x_bounds: v.x_bounds,
            y_bounds: v.y_bounds,
            z_bounds: v.z_bounds,
            dims: v.dims,
            array_cols: 8,
            array_rows: 4,
            carrier_freq: 40_000.0,
            sample_rate: 1.0e6,
            sound_speed: 343.0,
            method: Method::Das,
            pulse_cycles: bf.pulse_cycles,
            interpolate: bf.interpolate,
            loading_factor: bf.mvdr.loading_factor,
            snapshots: bf.mvdr.snapshots,
            cfar: true,
            cfar_params: CfarParams::default(),
            range_compensation: true,
            point_stage: false,
            point_threshold: 0.1,
            annotation: AnnotateParams::new(),
            heading_offset_deg: 90.0,
            left: Sensor { x: -0.8, y: -1.5, z: 2.5, theta_deg: -135.0, phi_deg: 5.0 },
            right: Sensor { x: 0.8, y: -1.5, z: 2.5, theta_deg: -45.0, phi_deg: 5.0 },
            scene: SceneParams::default(),
            lidar: LidarParams::default(),
            noise_std: 1e-4,
            train: TrainConfig::default(),
            train_fraction: 0.8,
            filter_empty: true,
        }
    }
}

/// Mutable view of one scalar setting.
enum Field<'a> {
    F64(&'a mut f64),
    Usize(&'a mut usize),
    U64(&'a mut u64),
    Bool(&'a mut bool),
    Method(&'a mut Method),
    OptSteps(&'a mut Option<usize>),
}

impl Field<'_> {
    fn render(&self) -> String {
        match self {
            Field::F64(v) => format!("{v:?}"),
            Field::Usize(v) => v.to_string(),
            // TOML integers are signed 64-bit
            Field::U64(v) if **v > i64::MAX as u64 => format!("\"{v}\""),
            Field::U64(v) => v.to_string(),
            Field::Bool(v) => v.to_string(),
            Field::Method(v) => format!("\"{v}\""),
            Field::OptSteps(v) => v.map_or("\"none\"".to_string(), |n| n.to_string()),
        }
    }

    fn set(&mut self, raw: &str) -> std::result::Result<(), String> {
        let bad = |what: &str| format!("expected {what}, found {raw:?}");
        match self {
            Field::F64(v) => **v = raw.parse().map_err(|_| bad("a number"))?,
            Field::Usize(v) => **v = raw.parse().map_err(|_| bad("a non-negative integer"))?,
            Field::U64(v) => **v = raw.parse().map_err(|_| bad("a non-negative integer"))?,
            Field::Bool(v) => **v = raw.parse().map_err(|_| bad("true or false"))?,
            Field::Method(v) => **v = raw.parse().map_err(|_| bad("das or mvdr"))?,
            Field::OptSteps(v) => {
                **v = if raw == "none" { None } else { Some(raw.parse().map_err(|_| bad("an integer or none"))?) }
            }
        }
        Ok(())
    }
}

impl PipelineConfig {
    /// Small grids for tests and quick runs: a 16 x 32 x 16 spherical grid,
    /// a 16 x 24 x 16 voxel grid and a short training schedule.
    pub fn reduced() -> Self {
        let mut c = Self { theta_bins: 16, phi_bins: 16, r_step: 0.375, dims: (16, 24, 16), ..Self::default() };
        c.train.max_epochs = 4;
        c.train.drop_period = 2;
        c
    }

    fn fields(&mut self) -> Vec<(&'static str, &'static str, Field<'_>)> {
        use Field::*;
        let a = &mut self.annotation;
        let s = &mut self.scene;
        let t = &mut self.train;
        vec![
            ("run", "seed", U64(&mut self.seed)),
            ("run", "frames", Usize(&mut self.frames)),
            ("spherical", "r_min", F64(&mut self.r_min)),
            ("spherical", "r_max", F64(&mut self.r_max)),
            ("spherical", "r_step", F64(&mut self.r_step)),
            ("spherical", "theta_min_deg", F64(&mut self.theta_min_deg)),
            ("spherical", "theta_max_deg", F64(&mut self.theta_max_deg)),
            ("spherical", "theta_bins", Usize(&mut self.theta_bins)),
            ("spherical", "phi_min_deg", F64(&mut self.phi_min_deg)),
            ("spherical", "phi_max_deg", F64(&mut self.phi_max_deg)),
            ("spherical", "phi_bins", Usize(&mut self.phi_bins)),
            ("volume", "x_min", F64(&mut self.x_bounds.0)),
            ("volume", "x_max", F64(&mut self.x_bounds.1)),
            ("volume", "y_min", F64(&mut self.y_bounds.0)),
            ("volume", "y_max", F64(&mut self.y_bounds.1)),
            ("volume", "z_min", F64(&mut self.z_bounds.0)),
            ("volume", "z_max", F64(&mut self.z_bounds.1)),
            ("volume", "height", Usize(&mut self.dims.0)),
            ("volume", "depth", Usize(&mut self.dims.1)),
            ("volume", "width", Usize(&mut self.dims.2)),
            ("array", "cols", Usize(&mut self.array_cols)),
            ("array", "rows", Usize(&mut self.array_rows)),
            ("array", "carrier_freq", F64(&mut self.carrier_freq)),
            ("array", "sample_rate", F64(&mut self.sample_rate)),
            ("array", "sound_speed", F64(&mut self.sound_speed)),
            ("beamform", "method", Method(&mut self.method)),
            ("beamform", "pulse_cycles", Usize(&mut self.pulse_cycles)),
            ("beamform", "interpolate", Bool(&mut self.interpolate)),
            ("beamform", "loading_factor", F64(&mut self.loading_factor)),
            ("beamform", "snapshots", Usize(&mut self.snapshots)),
            ("processing", "cfar", Bool(&mut self.cfar)),
            ("processing", "cfar_training_cells", Usize(&mut self.cfar_params.training_cells)),
            ("processing", "cfar_guard_cells", Usize(&mut self.cfar_params.guard_cells)),
            ("processing", "cfar_design_pfa", F64(&mut self.cfar_params.design_pfa)),
            ("processing", "range_compensation", Bool(&mut self.range_compensation)),
            ("processing", "point_stage", Bool(&mut self.point_stage)),
            ("processing", "point_threshold", F64(&mut self.point_threshold)),
            ("annotation", "roi_x_min", F64(&mut a.roi.x_bounds.0)),
            ("annotation", "roi_x_max", F64(&mut a.roi.x_bounds.1)),
            ("annotation", "roi_y_min", F64(&mut a.roi.y_bounds.0)),
            ("annotation", "roi_y_max", F64(&mut a.roi.y_bounds.1)),
            ("annotation", "roi_z_min", F64(&mut a.roi.z_bounds.0)),
            ("annotation", "roi_z_max", F64(&mut a.roi.z_bounds.1)),
            ("annotation", "ground_distance", F64(&mut a.ground.distance)),
            ("annotation", "ground_iterations", Usize(&mut a.ground.iterations)),
            ("annotation", "ground_max_tilt_deg", F64(&mut a.ground.max_tilt_deg)),
            ("annotation", "ground_min_inlier_fraction", F64(&mut a.ground.min_inlier_fraction)),
            ("annotation", "ego_radius", F64(&mut a.ego_radius)),
            ("annotation", "cluster_threshold", F64(&mut a.cluster.threshold)),
            ("annotation", "cluster_min_points", Usize(&mut a.cluster.min_points)),
            ("annotation", "l_min", F64(&mut a.rules.l_bounds.0)),
            ("annotation", "l_max", F64(&mut a.rules.l_bounds.1)),
            ("annotation", "w_min", F64(&mut a.rules.w_bounds.0)),
            ("annotation", "w_max", F64(&mut a.rules.w_bounds.1)),
            ("annotation", "h_min", F64(&mut a.rules.h_bounds.0)),
            ("annotation", "h_max", F64(&mut a.rules.h_bounds.1)),
            ("annotation", "lw_ratio_min", F64(&mut a.rules.lw_ratio_bounds.0)),
            ("annotation", "lw_ratio_max", F64(&mut a.rules.lw_ratio_bounds.1)),
            ("annotation", "lh_ratio_min", F64(&mut a.rules.lh_ratio_min)),
            ("extrinsics", "heading_offset_deg", F64(&mut self.heading_offset_deg)),
            ("extrinsics", "left_x", F64(&mut self.left.x)),
            ("extrinsics", "left_y", F64(&mut self.left.y)),
            ("extrinsics", "left_z", F64(&mut self.left.z)),
            ("extrinsics", "left_theta_deg", F64(&mut self.left.theta_deg)),
            ("extrinsics", "left_phi_deg", F64(&mut self.left.phi_deg)),
            ("extrinsics", "right_x", F64(&mut self.right.x)),
            ("extrinsics", "right_y", F64(&mut self.right.y)),
            ("extrinsics", "right_z", F64(&mut self.right.z)),
            ("extrinsics", "right_theta_deg", F64(&mut self.right.theta_deg)),
            ("extrinsics", "right_phi_deg", F64(&mut self.right.phi_deg)),
            ("scene", "min_boxes", Usize(&mut s.min_boxes)),
            ("scene", "max_boxes", Usize(&mut s.max_boxes)),
            ("scene", "empty_probability", F64(&mut s.empty_probability)),
            ("scene", "ground_height", F64(&mut s.ground_height)),
            ("scene", "max_range", F64(&mut s.max_range)),
            ("scene", "length_min", F64(&mut s.length_range.0)),
            ("scene", "length_max", F64(&mut s.length_range.1)),
            ("scene", "width_min", F64(&mut s.width_range.0)),
            ("scene", "width_max", F64(&mut s.width_range.1)),
            ("scene", "height_min", F64(&mut s.height_range.0)),
            ("scene", "height_max", F64(&mut s.height_range.1)),
            ("scene", "yaw_range_deg", F64(&mut s.yaw_range_deg)),
            ("scene", "x_min", F64(&mut s.x_range.0)),
            ("scene", "x_max", F64(&mut s.x_range.1)),
            ("scene", "z_min", F64(&mut s.z_range.0)),
            ("scene", "z_max", F64(&mut s.z_range.1)),
            ("scene", "min_gap", F64(&mut s.min_gap)),
            ("scene", "scatterers_per_box", Usize(&mut s.scatterers_per_box)),
            ("scene", "ground_scatterers", Usize(&mut s.ground_scatterers)),
            ("scene", "clutter_scatterers", Usize(&mut s.clutter_scatterers)),
            ("scene", "noise_std", F64(&mut self.noise_std)),
            ("scene", "lidar_points_per_box", Usize(&mut self.lidar.points_per_box)),
            ("scene", "lidar_ground_points", Usize(&mut self.lidar.ground_points)),
            ("scene", "lidar_jitter", F64(&mut self.lidar.jitter)),
            ("train", "max_epochs", Usize(&mut t.max_epochs)),
            ("train", "batch_size", Usize(&mut t.batch_size)),
            ("train", "initial_lr", F64(&mut t.initial_lr)),
            ("train", "drop_period", Usize(&mut t.drop_period)),
            ("train", "drop_factor", F64(&mut t.drop_factor)),
            ("train", "shuffle", Bool(&mut t.shuffle)),
            ("train", "smooth", F64(&mut t.smooth)),
            ("train", "max_steps", OptSteps(&mut t.max_steps)),
            ("train", "base_channels", Usize(&mut t.model.base_channels)),
            ("train", "bottleneck_channels", Usize(&mut t.model.bottleneck_channels)),
            ("train", "train_fraction", F64(&mut self.train_fraction)),
            ("train", "filter_empty", Bool(&mut self.filter_empty)),
        ]
    }

    /// Every setting, grouped by section in a fixed order.
    pub fn dump(&self) -> String {
        let mut copy = self.clone();
        let mut out = String::new();
        let mut section = "";
        for (sec, key, f) in copy.fields() {
            if sec != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{sec}]");
                section = sec;
            }
            let _ = writeln!(out, "{key} = {}", f.render());
        }
        out
    }

    /// Overrides defaults with the settings in `text`; unknown keys are errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map_or(0, |s| text[..s.start].lines().count().max(1));
            err(line, e.message().to_string())
        })?;
        let mut cfg = PipelineConfig::default();
        for (section, table) in &doc {
            let toml::Value::Table(table) = table else {
                return Err(err(line_of(text, "", section), format!("{section}: settings belong in a [section]")));
            };
            for (key, value) in table {
                let line = line_of(text, section, key);
                let raw = match value {
                    toml::Value::String(s) => s.clone(),
                    toml::Value::Integer(i) => i.to_string(),
                    toml::Value::Float(f) => format!("{f:?}"),
                    toml::Value::Boolean(b) => b.to_string(),
                    _ => return Err(err(line, format!("{section}.{key}: expected a scalar"))),
                };
                let mut fields = cfg.fields();
                let field = fields
                    .iter_mut()
                    .find(|(s, k, _)| s == section && k == key)
                    .ok_or_else(|| err(line, format!("unknown setting {section}.{key}")))?;
                field.2.set(&raw).map_err(|m| err(line, format!("{section}.{key}: {m}")))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn spherical_grid(&self) -> SphericalGrid {
        SphericalGrid {
            r_min: self.r_min,
            r_max: self.r_max,
            r_step: self.r_step,
            theta_bounds: (self.theta_min_deg.to_radians(), self.theta_max_deg.to_radians()),
            theta_bins: self.theta_bins,
            phi_bounds: (self.phi_min_deg.to_radians(), self.phi_max_deg.to_radians()),
            phi_bins: self.phi_bins,
        }
    }

    pub fn voxel_grid(&self) -> VoxelGrid {
        VoxelGrid { x_bounds: self.x_bounds, y_bounds: self.y_bounds, z_bounds: self.z_bounds, dims: self.dims }
    }

    pub fn array(&self) -> ArrayGeometry {
        ArrayGeometry::planar(self.array_cols, self.array_rows, self.carrier_freq, self.sample_rate, self.sound_speed)
    }

    pub fn beamform_config(&self) -> BeamformConfig {
        BeamformConfig {
            pulse_cycles: self.pulse_cycles,
            interpolate: self.interpolate,
            mvdr: MvdrParams { loading_factor: self.loading_factor, snapshots: self.snapshots, ..MvdrParams::default() },
        }
    }

    /// Sensor-to-LiDAR transform: yaw `theta + heading_offset`, then a pitch
    /// that raises the boresight by `phi`.
    pub fn sensor_transform(&self, s: &Sensor) -> RigidTransform {
        RigidTransform::from_yaw_pitch(
            Point3::new(s.x, s.y, s.z),
            (s.theta_deg + self.heading_offset_deg).to_radians(),
            -s.phi_deg.to_radians(),
        )
    }

    pub fn sensors(&self) -> [(&'static str, RigidTransform); 2] {
        [("left", self.sensor_transform(&self.left)), ("right", self.sensor_transform(&self.right))]
    }

    pub fn annotate_params(&self) -> AnnotateParams {
        AnnotateParams { ground: GroundParams { seed: self.seed, ..self.annotation.ground }, ..self.annotation }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train }
    }

    pub fn validate(&self) -> Result<()> {
        self.spherical_grid().validate()?;
        self.voxel_grid().validate()?;
        self.array().validate()?;
        if self.pulse_cycles == 0 {
            return Err(Error::config("beamform.pulse_cycles", "must be at least 1"));
        }
        if !(self.loading_factor >= 0.0) {
            return Err(Error::config("beamform.loading_factor", "must be non-negative"));
        }
        if self.snapshots == 0 {
            return Err(Error::config("beamform.snapshots", "must be at least 1"));
        }
        if self.cfar {
            self.cfar_params.validate()?;
            let need = self.cfar_params.min_range_bins();
            if self.spherical_grid().r_bins() < need {
                return Err(Error::config(
                    "spherical.r_step",
                    format!("CFAR needs at least {need} range bins, grid has {}", self.spherical_grid().r_bins()),
                ));
            }
        }
        if !(self.point_threshold > 0.0 && self.point_threshold < 1.0) {
            return Err(Error::config("processing.point_threshold", "must lie in (0, 1)"));
        }
        self.annotation.validate()?;
        let s = &self.scene;
        if s.min_boxes > s.max_boxes {
            return Err(Error::config("scene.min_boxes", "exceeds scene.max_boxes"));
        }
        if !(0.0..=1.0).contains(&s.empty_probability) {
            return Err(Error::config("scene.empty_probability", "must lie in [0, 1]"));
        }
        for (name, (lo, hi)) in [
            ("scene.length", s.length_range),
            ("scene.width", s.width_range),
            ("scene.height", s.height_range),
            ("scene.x", s.x_range),
            ("scene.z", s.z_range),
        ] {
            if !(lo <= hi) {
                return Err(Error::config(name, "min exceeds max"));
            }
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("scene.noise_std", "must be non-negative"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train.train_fraction", "must lie in (0, 1)"));
        }
        self.train.validate()
    }
}

/// 1-based line of `key = ...` inside `[section]`, 0 when not found.
fn line_of(text: &str, section: &str, key: &str) -> usize {
    let mut current = "";
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|r| r.split(']').next()) {
            current = name.trim();
        } else if current == section && line.split('=').next().is_some_and(|k| k.trim() == key) {
            return n + 1;
        }
    }
    0
}
