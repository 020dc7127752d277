use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sonovox_core::beamform::SphericalVolume;
use sonovox_core::cvol;
use sonovox_core::dataset::{boxes_to_mask, split, OccupancyMask};
use sonovox_core::geometry::{point_in_box, OrientedBox, Point3, RigidTransform};
use sonovox_core::grid::{SphericalGrid, VoxelGrid};
use sonovox_core::processing::Volume;
use sonovox_core::scene::RfFrame;
use sonovox_core::Error;

fn mask_oracle(boxes: &[OrientedBox], g: &VoxelGrid, lidar_to_grid: &RigidTransform) -> Vec<u8> {
    let inv = lidar_to_grid.invert();
    let (h, d, w) = g.dims;
    let mut out = Vec::new();
    for ih in 0..h {
        for id in 0..d {
            for iw in 0..w {
                let p = inv.apply(g.voxel_center(ih, id, iw));
                out.push(boxes.iter().any(|b| point_in_box(p, b)) as u8);
            }
        }
    }
    out
}

#[test]
fn mask_matches_point_in_box_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let g = VoxelGrid::default().with_dims(rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=16));
        let t = RigidTransform::from_yaw_pitch(
            Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.2..0.2),
        );
        let boxes: Vec<OrientedBox> = (0..rng.random_range(0..4))
            .map(|_| {
                OrientedBox::new(
                    Point3::new(rng.random_range(-10.0..10.0), rng.random_range(-2.0..5.0), rng.random_range(0.0..12.0)),
                    rng.random_range(0.5..6.0),
                    rng.random_range(0.5..3.0),
                    rng.random_range(0.5..3.0),
                    rng.random_range(-3.2..3.2),
                )
            })
            .collect();
        assert_eq!(boxes_to_mask(&boxes, &g, &t).labels, mask_oracle(&boxes, &g, &t));
    }
}

#[test]
fn split_partitions_items() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let n = rng.random_range(0..300);
        let seed = rng.random::<u64>();
        let s = split((0..n).collect::<Vec<_>>(), 0.8, seed).unwrap();
        assert_eq!(s.train.len(), (0.8 * n as f64).floor() as usize);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn full_size_volume_file_length() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.cvol");
    cvol::write_volume(&path, &Volume::zeros(VoxelGrid::default())).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 64 + 64 * 96 * 64 * 4);
}

#[test]
fn corrupted_magic_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.cvol");
    cvol::write_volume(&path, &Volume::zeros(VoxelGrid::default().with_dims(2, 2, 2))).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[1] = 0;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(cvol::read_volume(&path), Err(Error::BadMagic { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn volume_round_trip(vals in proptest::collection::vec(any::<f32>(), 2 * 3 * 5)) {
        let g = VoxelGrid::default().with_dims(2, 3, 5);
        let v = Volume { values: vals.iter().map(|&x| x as f64).collect(), grid: g };
        let back = cvol::decode_volume(&cvol::encode_volume(&v).unwrap()).unwrap();
        prop_assert_eq!(back.grid, g);
        for (a, b) in back.values.iter().zip(&v.values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn mask_round_trip(labels in proptest::collection::vec(0u8..=1, 4 * 2 * 3)) {
        let g = VoxelGrid::default().with_dims(4, 2, 3);
        let m = OccupancyMask { labels, grid: g };
        let (l, g2) = cvol::decode_labels(&cvol::encode_labels(&m.labels, &m.grid).unwrap()).unwrap();
        prop_assert_eq!(l, m.labels);
        prop_assert_eq!(g2, g);
    }

    #[test]
    fn spherical_round_trip(vals in proptest::collection::vec(any::<f64>(), 2 * 96 * 3)) {
        let g = SphericalGrid::default().with_bins(2, 96, 3);
        let v = SphericalVolume { values: vals, grid: g };
        let back = cvol::decode_spherical(&cvol::encode_spherical(&v).unwrap()).unwrap();
        prop_assert_eq!(back.grid, g);
        for (a, b) in back.values.iter().zip(&v.values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rf_round_trip(vals in proptest::collection::vec(any::<f64>(), 3 * 7), fs in 1.0..1e7f64) {
        let f = RfFrame { samples: vals, channels: 3, sample_rate: fs, ping_time: 0.25 };
        let back = cvol::decode_rf(&cvol::encode_rf(&f).unwrap()).unwrap();
        prop_assert_eq!(back.channels, 3);
        prop_assert_eq!(back.sample_rate.to_bits(), fs.to_bits());
        for (a, b) in back.samples.iter().zip(&f.samples) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
