//! Per-frame flow from a random scene to a training frame: two-sensor RF
//! synthesis, beamforming, CFAR, range compensation, Cartesian resampling and
//! merge on the ultrasound side, crop/ground/ego/cluster/box/mask on the
//! LiDAR side.

use rand::RngCore;
use rayon::prelude::*;

use crate::annotate::{annotate_frame, euclidean_cluster_indices, remove_ground};
use crate::beamform::{beamform, SphericalVolume};
use crate::config::PipelineConfig;
use crate::dataset::{boxes_to_mask, filter_empty, split, DatasetSplit, Frame, OccupancyMask};
use crate::error::Result;
use crate::eval::{run_ablation, AblationConfig, AblationRow};
use crate::geometry::{OrientedBox, Point3, RigidTransform};
use crate::processing::{ca_cfar_envelope, merge_volumes, range_compensate, resample_to_cartesian, Volume};
use crate::rng::stream;
use crate::scene::{random_scene, synthesize_lidar_cloud, synthesize_rx_waveforms, PointCloud, RfFrame, Scene};

pub fn frame_id(index: usize) -> String {
    format!("frame{index:05}")
}

pub fn frame_seed(seed: u64, index: usize) -> u64 {
    stream(seed, &format!("frame-{index}")).next_u64()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedFrame {
    pub id: String,
    pub scene: Scene,
    /// Left then right sensor.
    pub rf: [RfFrame; 2],
    pub cloud: PointCloud,
}

pub fn simulate_frame(cfg: &PipelineConfig, index: usize) -> Result<SimulatedFrame> {
    let scene = random_scene(&cfg.scene, frame_seed(cfg.seed, index));
    let array = cfg.array();
    let mut rf = Vec::with_capacity(2);
    for (name, t) in cfg.sensors() {
        let mut local = scene.in_sensor_frame(&t);
        local.seed = stream(scene.seed, name).next_u64();
        rf.push(synthesize_rx_waveforms(&local, &array, cfg.pulse_cycles, cfg.noise_std)?.frame);
    }
    let cloud = synthesize_lidar_cloud(&scene, &cfg.lidar);
    let [left, right]: [RfFrame; 2] = rf.try_into().expect("two sensors");
    Ok(SimulatedFrame { id: frame_id(index), scene, rf: [left, right], cloud })
}

pub fn beamform_rf(cfg: &PipelineConfig, rf: &RfFrame) -> Result<SphericalVolume> {
    Ok(beamform(cfg.method, rf, &cfg.array(), &cfg.spherical_grid(), &cfg.beamform_config())?.volume)
}

/// Ultrasound intensity volume from the two sensors' spherical volumes.
pub fn process_volumes(cfg: &PipelineConfig, spherical: &[SphericalVolume; 2]) -> Result<Volume> {
    let grid = cfg.voxel_grid();
    let mut merged: Option<Volume> = None;
    for (v, (_, t)) in spherical.iter().zip(cfg.sensors()) {
        let mut v = if cfg.cfar { ca_cfar_envelope(v, &cfg.cfar_params)? } else { v.clone() };
        if cfg.range_compensation {
            v = range_compensate(&v);
        }
        let cart = resample_to_cartesian(&v, &grid, &t)?;
        merged = Some(match merged {
            None => cart,
            Some(m) => merge_volumes(&m, &cart)?,
        });
    }
    let mut vol = merged.expect("two sensors");
    if cfg.point_stage {
        vol = point_stage(cfg, &vol);
    }
    Ok(vol.quantized())
}

/// Keeps voxels above `point_threshold * peak` that survive ground and ego
/// removal and belong to a cluster; zeroes the rest.
pub fn point_stage(cfg: &PipelineConfig, vol: &Volume) -> Volume {
    let peak = vol.max();
    let mut out = Volume::zeros(vol.grid);
    if !(peak > 0.0) {
        return out;
    }
    let thr = cfg.point_threshold * peak;
    let (idx, points): (Vec<usize>, Vec<Point3>) = vol
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > thr)
        .map(|(i, _)| {
            let (h, d, w) = vol.grid.unravel(i);
            (i, vol.grid.voxel_center(h, d, w))
        })
        .unzip();
    let params = cfg.annotate_params();
    let plane = remove_ground(&points, &params.ground).plane;
    let (idx, cloud): (Vec<usize>, Vec<Point3>) = idx
        .into_iter()
        .zip(points)
        .filter(|(_, p)| plane.is_none_or(|pl| pl.distance(*p) > params.ground.distance))
        .filter(|(_, p)| (p.x * p.x + p.z * p.z).sqrt() >= params.ego_radius)
        .unzip();
    for group in euclidean_cluster_indices(&cloud, &params.cluster) {
        for k in group {
            out.values[idx[k]] = vol.values[idx[k]];
        }
    }
    out
}

/// Boxes from the LiDAR cloud and their occupancy mask on the voxel grid.
pub fn annotate_cloud(cfg: &PipelineConfig, cloud: &[Point3]) -> (Vec<OrientedBox>, OccupancyMask) {
    let boxes = annotate_frame(cloud, &cfg.annotate_params());
    let mask = boxes_to_mask(&boxes, &cfg.voxel_grid(), &RigidTransform::IDENTITY);
    (boxes, mask)
}

/// Annotated boxes plus the training frame for scene `index`.
pub fn build_frame(cfg: &PipelineConfig, index: usize) -> Result<(Frame, Vec<OrientedBox>)> {
    let sim = simulate_frame(cfg, index)?;
    let sph = [beamform_rf(cfg, &sim.rf[0])?, beamform_rf(cfg, &sim.rf[1])?];
    let intensity = process_volumes(cfg, &sph)?;
    let (boxes, mask) = annotate_cloud(cfg, &sim.cloud);
    Ok((Frame::new(sim.id, intensity, mask)?, boxes))
}

/// All `cfg.frames` frames in index order.
pub fn build_dataset(cfg: &PipelineConfig) -> Result<Vec<Frame>> {
    cfg.validate()?;
    (0..cfg.frames)
        .into_par_iter()
        .map(|i| build_frame(cfg, i).map(|(f, _)| f))
        .collect()
}

/// Optional empty-frame filtering followed by the seeded split.
pub fn prepare_split(cfg: &PipelineConfig, frames: Vec<Frame>, filter: bool) -> Result<DatasetSplit<Frame>> {
    let frames = if filter { filter_empty(frames) } else { frames };
    split(frames, cfg.train_fraction, cfg.seed)
}

/// The 2 x 2 {filtering, CFAR} grid on datasets built from `cfg`.
pub fn ablation(cfg: &PipelineConfig) -> Result<Vec<AblationRow>> {
    let with_cfar = build_dataset(&PipelineConfig { cfar: true, ..cfg.clone() });
    let without = build_dataset(&PipelineConfig { cfar: false, ..cfg.clone() });
    let build = |c: &AblationConfig| {
        let frames = if c.cfar { with_cfar.as_ref() } else { without.as_ref() };
        let frames = frames.map_err(|e| crate::Error::Format(format!("dataset build failed: {e}")))?;
        prepare_split(cfg, frames.clone(), c.filter_empty)
    };
    Ok(run_ablation(&AblationConfig::grid(), &cfg.train_config(), build))
}
