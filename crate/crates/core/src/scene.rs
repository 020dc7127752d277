//! Deterministic synthetic world: scatterer scenes, receive-array RF frames
//! and LiDAR-style point clouds.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{point_in_box, OrientedBox, Point3, RigidTransform};
use crate::rng::stream;

pub type PointCloud = Vec<Point3>;

/// Receive array plus a single transmitter, all in the sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub element_positions: Vec<Point3>,
    pub tx_position: Point3,
    pub carrier_freq: f64,
    pub sample_rate: f64,
    pub sound_speed: f64,
}

impl Default for ArrayGeometry {
    /// 32 receivers on an 8 x 4 half-wavelength grid in the `xy` plane with
    /// a collocated transmitter at the array centre.
    fn default() -> Self {
        Self::planar(8, 4, 40_000.0, 1.0e6, 343.0)
    }
}

impl ArrayGeometry {
    pub fn planar(cols: usize, rows: usize, carrier_freq: f64, sample_rate: f64, sound_speed: f64) -> Self {
        let pitch = sound_speed / carrier_freq / 2.0;
        let mut element_positions = Vec::with_capacity(cols * rows);
        for r in 0..rows {
            for c in 0..cols {
                element_positions.push(Point3::new(
                    (c as f64 - (cols as f64 - 1.0) / 2.0) * pitch,
                    (r as f64 - (rows as f64 - 1.0) / 2.0) * pitch,
                    0.0,
                ));
            }
        }
        Self {
            element_positions,
            tx_position: Point3::ORIGIN,
            carrier_freq,
            sample_rate,
            sound_speed,
        }
    }

    pub fn channels(&self) -> usize {
        self.element_positions.len()
    }

    pub fn wavelength(&self) -> f64 {
        self.sound_speed / self.carrier_freq
    }

    pub fn validate(&self) -> Result<()> {
        if self.element_positions.len() < 2 {
            return Err(Error::config("array.elements", "need at least 2 elements"));
        }
        if !(self.sample_rate > 2.0 * self.carrier_freq) {
            return Err(Error::config(
                "array.sample_rate",
                "sample rate must exceed twice the carrier",
            ));
        }
        if !(self.sound_speed > 0.0) || !(self.carrier_freq > 0.0) {
            return Err(Error::config("array", "sound speed and carrier must be positive"));
        }
        Ok(())
    }

    /// Two-way travel time transmitter -> `p` -> element `m`.
    pub fn round_trip(&self, p: Point3, m: usize) -> f64 {
        (p.distance(self.tx_position) + p.distance(self.element_positions[m])) / self.sound_speed
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub position: Point3,
    pub reflectivity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBox {
    pub bbox: OrientedBox,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scatterers: Vec<Scatterer>,
    pub boxes: Vec<LabeledBox>,
    pub ground_height: f64,
    pub max_range: f64,
    pub seed: u64,
}

impl Scene {
    pub fn empty(seed: u64) -> Self {
        Self {
            scatterers: Vec::new(),
            boxes: Vec::new(),
            ground_height: -1.8,
            max_range: 12.0,
            seed,
        }
    }

    /// Copy of the scene with scatterers re-expressed in a sensor frame.
    pub fn in_sensor_frame(&self, sensor_to_world: &RigidTransform) -> Scene {
        let world_to_sensor = sensor_to_world.invert();
        Scene {
            scatterers: self
                .scatterers
                .iter()
                .map(|s| Scatterer {
                    position: world_to_sensor.apply(s.position),
                    reflectivity: s.reflectivity,
                })
                .collect(),
            ..self.clone()
        }
    }
}

/// Multi-channel receive waveforms, row-major `[channels x time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RfFrame {
    pub samples: Vec<f64>,
    pub channels: usize,
    pub sample_rate: f64,
    pub ping_time: f64,
}

impl RfFrame {
    pub fn zeros(channels: usize, len: usize, sample_rate: f64) -> Self {
        Self {
            samples: vec![0.0; channels * len],
            channels,
            sample_rate,
            ping_time: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        if self.channels == 0 {
            0
        } else {
            self.samples.len() / self.channels
        }
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        let n = self.len();
        &self.samples[m * n..(m + 1) * n]
    }

    pub fn channel_mut(&mut self, m: usize) -> &mut [f64] {
        let n = self.len();
        &mut self.samples[m * n..(m + 1) * n]
    }

    pub fn scaled(&self, c: f64) -> RfFrame {
        RfFrame {
            samples: self.samples.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfSynthesis {
    pub frame: RfFrame,
    /// Scatterers dropped for lying on or behind the array plane or beyond `max_range`.
    pub excluded: usize,
}

/// Number of samples needed to record echoes out to `max_range`.
pub fn record_length(array: &ArrayGeometry, max_range: f64, pulse_cycles: usize) -> usize {
    let aperture = array
        .element_positions
        .iter()
        .map(|p| p.distance(array.tx_position))
        .fold(0.0, f64::max);
    let duration = (2.0 * max_range + aperture) / array.sound_speed
        + pulse_cycles as f64 / array.carrier_freq
        + 1e-3;
    (duration * array.sample_rate).ceil() as usize
}

/// Rectangular-windowed cosine tone burst per scatterer and channel with
/// spherical spreading `1 / (r_tx r_rx)`, plus white Gaussian noise.
pub fn synthesize_rx_waveforms(
    scene: &Scene,
    array: &ArrayGeometry,
    pulse_cycles: usize,
    noise_std: f64,
) -> Result<RfSynthesis> {
    array.validate()?;
    if pulse_cycles == 0 {
        return Err(Error::config("pulse_cycles", "must be at least 1"));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::config("noise_std", "must be non-negative"));
    }
    let len = record_length(array, scene.max_range, pulse_cycles);
    let mut frame = RfFrame::zeros(array.channels(), len, array.sample_rate);
    let fs = array.sample_rate;
    let f0 = array.carrier_freq;
    let burst = pulse_cycles as f64 / f0;
    let mut excluded = 0;
    for s in &scene.scatterers {
        let p = s.position;
        if p.z <= 0.0 || p.norm() > scene.max_range || !p.is_finite() {
            excluded += 1;
            continue;
        }
        let r_tx = p.distance(array.tx_position);
        for (m, rx) in array.element_positions.iter().enumerate() {
            let r_rx = p.distance(*rx);
            let tau = (r_tx + r_rx) / array.sound_speed;
            let amp = s.reflectivity / (r_tx * r_rx);
            let first = (tau * fs).ceil() as usize;
            let last = (((tau + burst) * fs).ceil() as usize).min(len);
            let row = frame.channel_mut(m);
            for (n, v) in row.iter_mut().enumerate().take(last).skip(first) {
                let t = n as f64 / fs - tau;
                *v += amp * (2.0 * PI * f0 * t).cos();
            }
        }
    }
    if noise_std > 0.0 {
        let mut rng = stream(scene.seed, "rf-noise");
        let normal = Normal::new(0.0, noise_std).expect("finite std");
        for v in frame.samples.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(RfSynthesis { frame, excluded })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarParams {
    pub points_per_box: usize,
    pub ground_points: usize,
    /// Half-width of the uniform jitter, applied per box-local axis.
    pub jitter: f64,
    pub ground_x: (f64, f64),
    pub ground_z: (f64, f64),
}

impl Default for LidarParams {
    fn default() -> Self {
        Self {
            points_per_box: 600,
            ground_points: 3000,
            jitter: 0.02,
            ground_x: (-12.0, 12.0),
            ground_z: (0.0, 12.0),
        }
    }
}

fn sample_box_surface<R: Rng>(b: &OrientedBox, jitter: f64, rng: &mut R) -> Point3 {
    let (hw, hh, hl) = (b.w / 2.0, b.h / 2.0, b.l / 2.0);
    // face pairs weighted by area: x faces (h*l), y faces (w*l), z faces (w*h)
    let areas = [b.h * b.l, b.w * b.l, b.w * b.h];
    let total: f64 = areas.iter().sum();
    let pick = rng.random::<f64>() * total;
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let u = rng.random::<f64>() * 2.0 - 1.0;
    let v = rng.random::<f64>() * 2.0 - 1.0;
    let local = if pick < areas[0] {
        Point3::new(sign * hw, u * hh, v * hl)
    } else if pick < areas[0] + areas[1] {
        Point3::new(u * hw, sign * hh, v * hl)
    } else {
        Point3::new(u * hw, v * hh, sign * hl)
    };
    let j = Point3::new(
        rng.random_range(-jitter..=jitter),
        rng.random_range(-jitter..=jitter),
        rng.random_range(-jitter..=jitter),
    );
    b.from_local(local + j)
}

/// Box surfaces and a flat ground patch, seeded by `scene.seed`.
pub fn synthesize_lidar_cloud(scene: &Scene, params: &LidarParams) -> PointCloud {
    let mut rng = stream(scene.seed, "lidar");
    let mut cloud = Vec::with_capacity(scene.boxes.len() * params.points_per_box + params.ground_points);
    for b in &scene.boxes {
        for _ in 0..params.points_per_box {
            cloud.push(sample_box_surface(&b.bbox, params.jitter, &mut rng));
        }
    }
    let mut placed = 0;
    while placed < params.ground_points {
        let x = rng.random_range(params.ground_x.0..=params.ground_x.1);
        let z = rng.random_range(params.ground_z.0..=params.ground_z.1);
        let dy = if params.jitter > 0.0 {
            rng.random_range(-params.jitter..=params.jitter)
        } else {
            0.0
        };
        let p = Point3::new(x, scene.ground_height + dy, z);
        placed += 1;
        // LiDAR returns stop at the vehicle, so no ground under a box.
        if scene.boxes.iter().any(|b| point_in_box(Point3::new(x, b.bbox.cy, z), &b.bbox)) {
            continue;
        }
        cloud.push(p);
    }
    cloud
}

/// Parameters for random road-like scenes in the LiDAR frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub min_boxes: usize,
    pub max_boxes: usize,
    /// Probability that a scene has no vehicles at all.
    pub empty_probability: f64,
    pub ground_height: f64,
    pub max_range: f64,
    pub length_range: (f64, f64),
    pub width_range: (f64, f64),
    pub height_range: (f64, f64),
    pub yaw_range_deg: f64,
    pub x_range: (f64, f64),
    pub z_range: (f64, f64),
    pub min_gap: f64,
    pub scatterers_per_box: usize,
    pub ground_scatterers: usize,
    pub clutter_scatterers: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            min_boxes: 1,
            max_boxes: 3,
            empty_probability: 0.0,
            ground_height: -1.8,
            max_range: 12.0,
            length_range: (3.6, 4.8),
            width_range: (1.6, 2.0),
            height_range: (1.4, 1.7),
            yaw_range_deg: 30.0,
            x_range: (-6.0, 6.0),
            z_range: (4.0, 10.5),
            min_gap: 1.2,
            scatterers_per_box: 48,
            ground_scatterers: 24,
            clutter_scatterers: 4,
        }
    }
}

fn footprint_radius(b: &OrientedBox) -> f64 {
    (b.l * b.l + b.w * b.w).sqrt() / 2.0
}

/// Random scene: vehicles sitting on the ground plus ground and clutter scatterers.
pub fn random_scene(params: &SceneParams, seed: u64) -> Scene {
    let mut rng = stream(seed, "scene");
    let mut boxes: Vec<LabeledBox> = Vec::new();
    let empty = rng.random::<f64>() < params.empty_probability;
    if !empty {
        let target = rng.random_range(params.min_boxes..=params.max_boxes.max(params.min_boxes));
        let mut attempts = 0;
        while boxes.len() < target && attempts < 200 {
            attempts += 1;
            let l = rng.random_range(params.length_range.0..=params.length_range.1);
            let w = rng.random_range(params.width_range.0..=params.width_range.1);
            let h = rng.random_range(params.height_range.0..=params.height_range.1);
            let yaw = rng
                .random_range(-params.yaw_range_deg..=params.yaw_range_deg)
                .to_radians();
            let cx = rng.random_range(params.x_range.0..=params.x_range.1);
            let cz = rng.random_range(params.z_range.0..=params.z_range.1);
            let b = OrientedBox::new(
                Point3::new(cx, params.ground_height + h / 2.0, cz),
                l,
                w,
                h,
                yaw,
            );
            let clear = boxes.iter().all(|o| {
                let d = ((o.bbox.cx - cx).powi(2) + (o.bbox.cz - cz).powi(2)).sqrt();
                d > footprint_radius(&o.bbox) + footprint_radius(&b) + params.min_gap
            });
            if clear {
                boxes.push(LabeledBox {
                    bbox: b,
                    class: "vehicle".to_string(),
                });
            }
        }
    }
    let mut scatterers = Vec::new();
    for b in &boxes {
        for _ in 0..params.scatterers_per_box {
            scatterers.push(Scatterer {
                position: sample_box_surface(&b.bbox, 0.0, &mut rng),
                reflectivity: rng.random_range(0.5..=1.0),
            });
        }
    }
    for _ in 0..params.ground_scatterers {
        scatterers.push(Scatterer {
            position: Point3::new(
                rng.random_range(params.x_range.0..=params.x_range.1),
                params.ground_height,
                rng.random_range(1.0..=params.max_range - 1.0),
            ),
            reflectivity: rng.random_range(0.02..=0.1),
        });
    }
    for _ in 0..params.clutter_scatterers {
        scatterers.push(Scatterer {
            position: Point3::new(
                rng.random_range(params.x_range.0..=params.x_range.1),
                params.ground_height + rng.random_range(0.0..=1.0),
                rng.random_range(2.0..=params.max_range - 1.0),
            ),
            reflectivity: rng.random_range(0.1..=0.4),
        });
    }
    Scene {
        scatterers,
        boxes,
        ground_height: params.ground_height,
        max_range: params.max_range,
        seed,
    }
}

pub fn cloud_to_csv(cloud: &[Point3]) -> String {
    let mut s = String::with_capacity(cloud.len() * 32 + 8);
    s.push_str("x,y,z\n");
    for p in cloud {
        let _ = writeln!(s, "{:.6},{:.6},{:.6}", p.x, p.y, p.z);
    }
    s
}

pub fn write_cloud(path: &Path, cloud: &[Point3]) -> Result<()> {
    std::fs::write(path, cloud_to_csv(cloud))?;
    Ok(())
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line.trim() == "x,y,z" {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let vals: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|e| parse_err(e.to_string())))
            .collect::<Result<_>>()?;
        if vals.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", vals.len())));
        }
        out.push(Point3::new(vals[0], vals[1], vals[2]));
    }
    Ok(out)
}
