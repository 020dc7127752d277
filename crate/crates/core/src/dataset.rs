//! Occupancy masks, frame pairing, empty-frame filtering, train/val split
//! and the on-disk dataset layout.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::cvol;
use crate::error::{Error, Result};
use crate::geometry::{point_in_box, OrientedBox, RigidTransform};
use crate::grid::VoxelGrid;
use crate::processing::Volume;
use crate::rng::stream;

/// Voxel labels, 0 = background and 1 = object, row-major `[H x D x W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMask {
    pub labels: Vec<u8>,
    pub grid: VoxelGrid,
}

impl OccupancyMask {
    pub fn zeros(grid: VoxelGrid) -> Self {
        Self {
            labels: vec![0; grid.len()],
            grid,
        }
    }

    pub fn object_voxels(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.grid.len() {
            return Err(Error::Shape {
                op: "OccupancyMask",
                axis: "voxels",
                expected: self.grid.len(),
                found: self.labels.len(),
            });
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l > 1) {
            return Err(Error::Format(format!("mask label {bad} outside {{0, 1}}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: String,
    pub intensity: Volume,
    pub mask: OccupancyMask,
}

impl Frame {
    pub fn new(id: impl Into<String>, intensity: Volume, mask: OccupancyMask) -> Result<Self> {
        if intensity.grid != mask.grid {
            return Err(Error::GridMismatch { op: "Frame::new" });
        }
        Ok(Self {
            id: id.into(),
            intensity,
            mask,
        })
    }
}

/// Label every voxel whose centre, mapped back into the annotation frame,
/// lies inside any box.
pub fn boxes_to_mask(boxes: &[OrientedBox], grid: &VoxelGrid, lidar_to_grid: &RigidTransform) -> OccupancyMask {
    let to_lidar = lidar_to_grid.invert();
    let (h, d, w) = grid.dims;
    let mut mask = OccupancyMask::zeros(*grid);
    if boxes.is_empty() {
        return mask;
    }
    mask.labels.par_chunks_mut(d * w).enumerate().for_each(|(ih, row)| {
        for id in 0..d {
            for iw in 0..w {
                let p = to_lidar.apply(grid.voxel_center(ih, id, iw));
                if boxes.iter().any(|b| point_in_box(p, b)) {
                    row[id * w + iw] = 1;
                }
            }
        }
    });
    debug_assert_eq!(mask.labels.len(), h * d * w);
    mask
}

/// Frames with at least one object voxel.
pub fn filter_empty(frames: Vec<Frame>) -> Vec<Frame> {
    frames.into_iter().filter(|f| f.mask.object_voxels() > 0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub seed: u64,
}

/// Number of training items: `floor(fraction * n)`.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    (train_fraction * n as f64).floor() as usize
}

/// Seeded shuffle, then the first `floor(fraction * n)` items train.
pub fn split<T>(mut items: Vec<T>, train_fraction: f64, seed: u64) -> Result<DatasetSplit<T>> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config("train.train_fraction", "must lie in (0, 1)"));
    }
    let n_train = train_count(items.len(), train_fraction);
    items.shuffle(&mut stream(seed, "split"));
    let val = items.split_off(n_train);
    Ok(DatasetSplit {
        train: items,
        val,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub frame_id: String,
    pub intensity_path: PathBuf,
    pub mask_path: PathBuf,
}

pub fn manifest_to_string(entries: &[ManifestEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        s.push_str(&format!(
            "{},{},{}\n",
            e.frame_id,
            e.intensity_path.display(),
            e.mask_path.display()
        ));
    }
    s
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected frame_id,intensity_path,mask_path, found {} fields", f.len()),
                });
            }
            Ok(ManifestEntry {
                frame_id: f[0].to_string(),
                intensity_path: PathBuf::from(f[1]),
                mask_path: PathBuf::from(f[2]),
            })
        })
        .collect()
}

pub const MANIFEST_NAME: &str = "manifest.csv";

pub fn write_mask(path: &Path, m: &OccupancyMask) -> Result<()> {
    std::fs::write(path, cvol::encode_labels(&m.labels, &m.grid)?)?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<OccupancyMask> {
    let (labels, grid) = cvol::decode_labels(&std::fs::read(path)?)?;
    let m = OccupancyMask { labels, grid };
    m.validate()?;
    Ok(m)
}

/// Writes `<id>.intensity.cvol`, `<id>.mask.cvol` per frame and a manifest
/// with paths relative to `dir`.
pub fn write_dataset(dir: &Path, frames: &[Frame]) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(frames.len());
    for f in frames {
        let e = ManifestEntry {
            frame_id: f.id.clone(),
            intensity_path: PathBuf::from(format!("{}.intensity.cvol", f.id)),
            mask_path: PathBuf::from(format!("{}.mask.cvol", f.id)),
        };
        cvol::write_volume(&dir.join(&e.intensity_path), &f.intensity)?;
        write_mask(&dir.join(&e.mask_path), &f.mask)?;
        entries.push(e);
    }
    std::fs::write(dir.join(MANIFEST_NAME), manifest_to_string(&entries))?;
    Ok(entries)
}

/// Reads every frame listed in `dir/manifest.csv`.
pub fn read_dataset(dir: &Path) -> Result<Vec<Frame>> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path)?;
    parse_manifest(&text, &path)?
        .into_iter()
        .map(|e| {
            let intensity = cvol::read_volume(&dir.join(&e.intensity_path))?;
            let mask = read_mask(&dir.join(&e.mask_path))?;
            Frame::new(e.frame_id, intensity, mask)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;

    fn frame(id: &str, objects: usize) -> Frame {
        let g = VoxelGrid::default().with_dims(2, 2, 2);
        let mut mask = OccupancyMask::zeros(g);
        mask.labels[..objects].iter_mut().for_each(|l| *l = 1);
        Frame::new(id, Volume::zeros(g), mask).unwrap()
    }

    #[test]
    fn empty_frames_are_dropped() {
        let frames: Vec<Frame> = (0..10).map(|i| frame(&format!("f{i}"), if i % 5 < 2 { 0 } else { 1 + i % 3 })).collect();
        let kept = filter_empty(frames);
        assert_eq!(kept.len(), 6);
        assert!(kept.iter().all(|f| f.mask.object_voxels() > 0));
        assert_eq!(filter_empty(vec![frame("a", 1)]).len(), 1);
        assert!(filter_empty(vec![frame("a", 0)]).is_empty());
    }

    #[test]
    fn split_counts() {
        let s = split((0..1586).collect::<Vec<_>>(), 0.8, 7).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (1268, 318));
        let s = split((0..10).collect::<Vec<_>>(), 0.8, 7).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (8, 2));
        assert_eq!(s, split((0..10).collect::<Vec<_>>(), 0.8, 7).unwrap());
        assert!(split(vec![1, 2], 1.0, 0).is_err());
        assert!(split(vec![1, 2], 0.0, 0).is_err());
    }

    #[test]
    fn mask_for_known_box() {
        // 4 x 4 x 4 voxels of 1 m over y in [0, 4], z in [0, 4], x in [0, 4]
        let g = VoxelGrid {
            x_bounds: (0.0, 4.0),
            y_bounds: (0.0, 4.0),
            z_bounds: (0.0, 4.0),
            dims: (4, 4, 4),
        };
        // covers centres 0.5 and 1.5 along x and z, 0.5 along y
        let b = OrientedBox::new(Point3::new(1.0, 0.5, 1.0), 2.2, 2.2, 0.5, 0.0);
        let m = boxes_to_mask(&[b], &g, &RigidTransform::IDENTITY);
        for h in 0..4 {
            for d in 0..4 {
                for w in 0..4 {
                    let want = (h == 0 && d < 2 && w < 2) as u8;
                    assert_eq!(m.labels[g.index(h, d, w)], want, "{h} {d} {w}");
                }
            }
        }
        assert_eq!(boxes_to_mask(&[], &g, &RigidTransform::IDENTITY).object_voxels(), 0);
        let far = OrientedBox::new(Point3::new(50.0, 0.0, 0.0), 2.0, 2.0, 2.0, 0.0);
        assert_eq!(boxes_to_mask(&[far], &g, &RigidTransform::IDENTITY).object_voxels(), 0);
    }

    #[test]
    fn frame_grid_mismatch() {
        let g = VoxelGrid::default().with_dims(2, 2, 2);
        let err = Frame::new("x", Volume::zeros(g), OccupancyMask::zeros(g.with_dims(2, 2, 3))).unwrap_err();
        assert!(matches!(err, Error::GridMismatch { .. }));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = frame("scene_0001_L", 3);
        f.intensity.values[5] = 0.25;
        let entries = write_dataset(dir.path(), &[f.clone(), frame("scene_0002_R", 1)]).unwrap();
        assert_eq!(entries.len(), 2);
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "scene_0001_L,scene_0001_L.intensity.cvol,scene_0001_L.mask.cvol"
        );
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back[0], f);
        assert_eq!(back.len(), 2);
    }
}
