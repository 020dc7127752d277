use approx::assert_relative_eq;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sonovox_core::beamform::{
    analytic_signal, das_beamform, estimate_covariance, mvdr_beamform, mvdr_weights, BeamformConfig,
    ComplexMatrix, MvdrParams, SphericalVolume,
};
use sonovox_core::geometry::{spherical_to_cartesian, Point3};
use sonovox_core::grid::SphericalGrid;
use sonovox_core::scene::{synthesize_rx_waveforms, ArrayGeometry, RfFrame, Scatterer, Scene};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn reduced_grid() -> SphericalGrid {
    SphericalGrid::default().with_bins(16, 32, 16)
}

fn scene_at(points: &[(Point3, f64)]) -> Scene {
    Scene {
        scatterers: points
            .iter()
            .map(|&(position, reflectivity)| Scatterer {
                position,
                reflectivity,
            })
            .collect(),
        ..Scene::empty(17)
    }
}

#[test]
fn analytic_envelope_of_cosine_is_flat() {
    let fs = 400_000.0;
    let f0 = 40_000.0;
    let n = 4000;
    let samples: Vec<f64> = (0..n)
        .map(|i| 0.7 * (2.0 * std::f64::consts::PI * f0 * i as f64 / fs).cos())
        .collect();
    let frame = RfFrame {
        samples: samples.clone(),
        channels: 1,
        sample_rate: fs,
        ping_time: 0.0,
    };
    let a = analytic_signal(&frame).unwrap();
    for i in n / 10..9 * n / 10 {
        assert!((a.data[i].norm() - 0.7).abs() / 0.7 < 0.01, "sample {i}");
    }
    for (z, x) in a.data.iter().zip(&samples) {
        assert!((z.re - x).abs() < 1e-9);
    }
    let scaled = analytic_signal(&frame.scaled(3.0)).unwrap();
    for (z, s) in a.data.iter().zip(&scaled.data) {
        assert!((s.norm() - 3.0 * z.norm()).abs() < 1e-9);
    }
    let zero = analytic_signal(&RfFrame::zeros(2, 64, fs)).unwrap();
    assert!(zero.data.iter().all(|z| z.norm() == 0.0));
}

#[test]
fn analytic_signal_rejects_short_frames() {
    assert!(analytic_signal(&RfFrame::zeros(1, 3, 1e5)).is_err());
}

#[test]
fn das_of_zero_frame_is_zero() {
    let arr = ArrayGeometry::default();
    let grid = reduced_grid();
    let frame = synthesize_rx_waveforms(&Scene::empty(0), &arr, 8, 0.0).unwrap().frame;
    let v = das_beamform(&frame, &arr, &grid, &BeamformConfig::default()).unwrap();
    assert_eq!(v.values.len(), 16 * 32 * 16);
    assert!(v.values.iter().all(|&x| x == 0.0));
}

#[test]
fn channel_mismatch_is_an_error() {
    let arr = ArrayGeometry::default();
    let frame = RfFrame::zeros(4, 1000, arr.sample_rate);
    assert!(das_beamform(&frame, &arr, &reduced_grid(), &BeamformConfig::default()).is_err());
}

/// Literal per-bin, per-channel delay-and-sum over the analytic signal.
fn das_oracle(frame: &RfFrame, arr: &ArrayGeometry, grid: &SphericalGrid, cfg: &BeamformConfig) -> SphericalVolume {
    let a: ComplexMatrix = analytic_signal(frame).unwrap();
    let mut out = SphericalVolume::zeros(*grid);
    let half = cfg.pulse_cycles as f64 / arr.carrier_freq / 2.0;
    for i in 0..grid.phi_bins {
        for j in 0..grid.theta_bins {
            for k in 0..grid.r_bins() {
                let p = spherical_to_cartesian(grid.bin_center(i, k, j));
                let mut sum = c(0.0, 0.0);
                let mut inside = true;
                for m in 0..arr.channels() {
                    let d_tx = ((p.x - arr.tx_position.x).powi(2)
                        + (p.y - arr.tx_position.y).powi(2)
                        + (p.z - arr.tx_position.z).powi(2))
                    .sqrt();
                    let e = arr.element_positions[m];
                    let d_rx = ((p.x - e.x).powi(2) + (p.y - e.y).powi(2) + (p.z - e.z).powi(2)).sqrt();
                    let t = (d_tx + d_rx) / arr.sound_speed + half;
                    let idx = (t * arr.sample_rate).round() as usize;
                    if idx >= a.cols {
                        inside = false;
                        break;
                    }
                    sum += a.data[m * a.cols + idx];
                }
                if inside {
                    out.set(i, k, j, sum.norm() / arr.channels() as f64);
                }
            }
        }
    }
    out
}

#[test]
fn das_matches_triple_loop_oracle() {
    let arr = ArrayGeometry::planar(2, 2, 40_000.0, 200_000.0, 343.0);
    let grid = SphericalGrid::default().with_bins(2, 16, 4);
    let cfg = BeamformConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let len = rng.random_range(1500..4000);
        let frame = RfFrame {
            samples: (0..4 * len).map(|_| StandardNormal.sample(&mut rng)).collect(),
            channels: 4,
            sample_rate: arr.sample_rate,
            ping_time: 0.0,
        };
        let got = das_beamform(&frame, &arr, &grid, &cfg).unwrap();
        let want = das_oracle(&frame, &arr, &grid, &cfg);
        for (g, w) in got.values.iter().zip(&want.values) {
            assert!((g - w).abs() < 1e-9);
        }
    }
}

#[test]
fn das_scales_linearly() {
    let arr = ArrayGeometry::planar(4, 2, 40_000.0, 400_000.0, 343.0);
    let grid = SphericalGrid::default().with_bins(4, 16, 8);
    let frame = synthesize_rx_waveforms(&scene_at(&[(Point3::new(0.5, 0.2, 4.0), 1.0)]), &arr, 8, 0.01)
        .unwrap()
        .frame;
    let cfg = BeamformConfig::default();
    let a = das_beamform(&frame, &arr, &grid, &cfg).unwrap();
    let b = das_beamform(&frame.scaled(2.5), &arr, &grid, &cfg).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert_relative_eq!(2.5 * x, *y, max_relative = 1e-12, epsilon = 1e-18);
    }
}

fn within_one_bin(got: (usize, usize, usize), want: (usize, usize, usize)) -> bool {
    got.0.abs_diff(want.0) <= 1 && got.1.abs_diff(want.1) <= 1 && got.2.abs_diff(want.2) <= 1
}

#[test]
fn single_scatterer_localizes_for_both_beamformers() {
    let arr = ArrayGeometry::default();
    let grid = reduced_grid();
    let cfg = BeamformConfig::default();
    for (i, k, j) in [(8, 10, 8), (3, 20, 12), (14, 5, 2)] {
        let p = spherical_to_cartesian(grid.bin_center(i, k, j));
        let frame = synthesize_rx_waveforms(&scene_at(&[(p, 1.0)]), &arr, 8, 0.0).unwrap().frame;
        let das = das_beamform(&frame, &arr, &grid, &cfg).unwrap();
        assert!(within_one_bin(das.argmax(), (i, k, j)), "das {:?} vs {:?}", das.argmax(), (i, k, j));
        let mvdr = mvdr_beamform(&frame, &arr, &grid, &cfg).unwrap();
        assert!(
            within_one_bin(mvdr.volume.argmax(), (i, k, j)),
            "mvdr {:?} vs {:?}",
            mvdr.volume.argmax(),
            (i, k, j)
        );
    }
}

#[test]
fn covariance_of_zero_snapshots() {
    let snaps = ComplexMatrix {
        rows: 3,
        cols: 5,
        data: vec![c(0.0, 0.0); 15],
    };
    let r = estimate_covariance(&snaps, 1e-2, 1e-12).unwrap();
    assert_eq!(r.loading, 1e-12);
    for i in 0..3 {
        for j in 0..3 {
            let want = if i == j { 1e-12 } else { 0.0 };
            assert_eq!(r.matrix[i * 3 + j], c(want, 0.0));
        }
    }
    assert!(estimate_covariance(&snaps, 0.0, 1e-12).is_err());
}

#[test]
fn covariance_of_one_snapshot_is_outer_product() {
    let x = [c(1.0, 2.0), c(-0.5, 0.25), c(0.0, -1.0)];
    let snaps = ComplexMatrix {
        rows: 3,
        cols: 1,
        data: x.to_vec(),
    };
    let r = estimate_covariance(&snaps, 0.0, 1e-12).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((r.matrix[i * 3 + j] - x[i] * x[j].conj()).norm() < 1e-15);
        }
    }
}

fn random_snapshots(rng: &mut ChaCha8Rng, m: usize, k: usize) -> ComplexMatrix {
    ComplexMatrix {
        rows: m,
        cols: k,
        data: (0..m * k)
            .map(|_| c(StandardNormal.sample(rng), StandardNormal.sample(rng)))
            .collect(),
    }
}

#[test]
fn loaded_covariance_is_positive_definite() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..20 {
        let m = 2 + trial % 7;
        // fewer snapshots than channels: rank deficient before loading
        let snaps = random_snapshots(&mut rng, m, 1 + trial % 3);
        let r = estimate_covariance(&snaps, 1e-2, 1e-12).unwrap();
        let mat = nalgebra::DMatrix::from_fn(m, m, |i, j| {
            let z = r.matrix[i * m + j];
            nalgebra::Complex::new(z.re, z.im)
        });
        for i in 0..m {
            for j in 0..m {
                assert!((mat[(i, j)] - mat[(j, i)].conj()).norm() < 1e-10);
            }
        }
        let eig = mat.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e > 0.0), "{eig:?}");
    }
}

#[test]
fn identity_covariance_gives_matched_filter() {
    let a = [c(1.0, 0.0), c(0.0, 1.0), c(-0.6, 0.8)];
    let cov = sonovox_core::beamform::CovarianceEstimate {
        matrix: vec![
            c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0),
            c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0),
            c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0),
        ],
        channels: 3,
        loading: 0.0,
    };
    let w = mvdr_weights(&cov, &a).unwrap();
    for (wi, ai) in w.iter().zip(&a) {
        assert!((wi - ai / 3.0).norm() < 1e-15);
    }
}

#[test]
fn two_by_two_mvdr_matches_hand_inverse() {
    // R = [[2, i], [-i, 3]], det = 5, R^-1 = (1/5) [[3, -i], [i, 2]]
    // a = (1, 1): R^-1 a = (1/5) (3 - i, 2 + i), a^H R^-1 a = 1
    // w = (0.6 - 0.2i, 0.4 + 0.2i)
    let cov = sonovox_core::beamform::CovarianceEstimate {
        matrix: vec![c(2.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(3.0, 0.0)],
        channels: 2,
        loading: 0.0,
    };
    let w = mvdr_weights(&cov, &[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
    assert!((w[0] - c(0.6, -0.2)).norm() < 1e-14);
    assert!((w[1] - c(0.4, 0.2)).norm() < 1e-14);
}

#[test]
fn mvdr_weights_are_distortionless() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let m = rng.random_range(2..=8);
        let k = rng.random_range(1..=12);
        let snaps = random_snapshots(&mut rng, m, k);
        let r = estimate_covariance(&snaps, 1e-2, 1e-12).unwrap();
        let a: Vec<Complex64> = (0..m).map(|_| c(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))).collect();
        let w = mvdr_weights(&r, &a).unwrap();
        let resp: Complex64 = w.iter().zip(&a).map(|(wi, ai)| wi.conj() * ai).sum();
        assert!((resp - 1.0).norm() < 1e-10, "{resp}");
    }
}

#[test]
fn mvdr_rejects_singular_and_bad_steering() {
    let cov = sonovox_core::beamform::CovarianceEstimate {
        matrix: vec![c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)],
        channels: 2,
        loading: 0.0,
    };
    assert!(matches!(
        mvdr_weights(&cov, &[c(1.0, 0.0), c(0.0, 1.0)]),
        Err(sonovox_core::Error::SingularCovariance { .. })
    ));
    let ok = sonovox_core::beamform::CovarianceEstimate {
        matrix: vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
        channels: 2,
        loading: 0.0,
    };
    assert!(mvdr_weights(&ok, &[c(0.0, 0.0), c(0.0, 0.0)]).is_err());
    assert!(mvdr_weights(&ok, &[c(1.0, 0.0)]).is_err());
}

#[test]
fn mvdr_of_zero_frame_is_near_zero() {
    let arr = ArrayGeometry::planar(4, 2, 40_000.0, 200_000.0, 343.0);
    let grid = SphericalGrid::default().with_bins(4, 16, 4);
    let frame = RfFrame::zeros(8, 20_000, arr.sample_rate);
    let out = mvdr_beamform(&frame, &arr, &grid, &BeamformConfig::default()).unwrap();
    assert_eq!(out.singular_cells, 0);
    assert!(out.volume.values.iter().all(|&v| v * v <= 1e-12));
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn identity_mvdr_tracks_das() {
    let arr = ArrayGeometry::default();
    let grid = reduced_grid();
    let pts = [
        (spherical_to_cartesian(grid.bin_center(6, 12, 7)), 1.0),
        (spherical_to_cartesian(grid.bin_center(10, 20, 3)), 0.6),
    ];
    let frame = synthesize_rx_waveforms(&scene_at(&pts), &arr, 8, 0.0).unwrap().frame;
    let das = das_beamform(&frame, &arr, &grid, &BeamformConfig::default()).unwrap();
    let cfg = BeamformConfig {
        mvdr: MvdrParams {
            identity_covariance: true,
            ..MvdrParams::default()
        },
        ..BeamformConfig::default()
    };
    let mvdr = mvdr_beamform(&frame, &arr, &grid, &cfg).unwrap();
    let r = pearson(&das.values, &mvdr.volume.values);
    assert!(r > 0.999, "r={r}");
}

fn local_maxima_along_theta(v: &SphericalVolume, phi: usize, r: usize) -> usize {
    let row: Vec<f64> = (0..v.grid.theta_bins).map(|j| v.get(phi, r, j)).collect();
    let peak = row.iter().copied().fold(0.0, f64::max);
    (1..row.len() - 1)
        .filter(|&j| row[j] > row[j - 1] && row[j] > row[j + 1] && row[j] > 0.25 * peak)
        .count()
}

#[test]
fn mvdr_separates_close_scatterers() {
    // Two equal scatterers two azimuth bins apart in one range bin. The
    // aperture is four wavelengths wide, so DAS merges them into one lobe.
    // Tone bursts from a common range are fully coherent and MVDR cannot
    // split them; a small range offset puts the second burst edge inside the
    // snapshot window and the covariance becomes rank two.
    let arr = ArrayGeometry::default();
    let grid = SphericalGrid::default().with_bins(8, 32, 64);
    let (i, k) = (2, 16);
    let mut results = Vec::new();
    for offset in [0.0, 0.01715] {
        for loading in [1e-2, 1e-3] {
            let a = grid.bin_center(i, k, 30);
            let mut b = grid.bin_center(i, k, 32);
            b.r += offset;
            let pts = [(spherical_to_cartesian(a), 1.0), (spherical_to_cartesian(b), 1.0)];
            let frame = synthesize_rx_waveforms(&Scene { seed: 3, ..scene_at(&pts) }, &arr, 8, 1e-4)
                .unwrap()
                .frame;
            let cfg = BeamformConfig {
                mvdr: MvdrParams {
                    loading_factor: loading,
                    ..MvdrParams::default()
                },
                ..BeamformConfig::default()
            };
            let das = das_beamform(&frame, &arr, &grid, &cfg).unwrap();
            let mvdr = mvdr_beamform(&frame, &arr, &grid, &cfg).unwrap();
            let d = local_maxima_along_theta(&das, i, k);
            let m = local_maxima_along_theta(&mvdr.volume, i, k);
            let row = |v: &SphericalVolume| (26..37).map(|j| format!("{:.3}", v.get(i, k, j))).collect::<Vec<_>>().join(" ");
            eprintln!("offset {offset} loading {loading:e}: DAS maxima {d}, MVDR maxima {m}");
            eprintln!("  das  {}", row(&das));
            eprintln!("  mvdr {}", row(&mvdr.volume));
            results.push((d, m));
        }
    }
    assert!(results.iter().any(|&(d, m)| d == 1 && m >= 2), "{results:?}");
}
