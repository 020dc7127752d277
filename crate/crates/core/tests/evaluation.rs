use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sonovox_core::dataset::{DatasetSplit, Frame, OccupancyMask};
use sonovox_core::eval::{
    ablation_to_csv, class_metrics, confusion, evaluate_predictions, per_class_metrics, run_ablation, AblationConfig,
    ClassCounts, ABLATION_CSV_HEADER,
};
use sonovox_core::grid::VoxelGrid;
use sonovox_core::processing::Volume;
use sonovox_core::unet::{TrainConfig, UNetConfig};
use sonovox_core::Error;

fn random_mask(rng: &mut ChaCha8Rng, n: usize, p: f64) -> OccupancyMask {
    let grid = VoxelGrid::default().with_dims(n, n, n);
    let labels = (0..grid.len()).map(|_| u8::from(rng.random::<f64>() < p)).collect();
    OccupancyMask { labels, grid }
}

/// Counts with `tp` true positives whose recall and precision round to the given rates.
fn counts_for(recall: f64, precision: f64, tp: u64, total: u64) -> ClassCounts {
    let fn_ = (tp as f64 * (1.0 / recall - 1.0)).round() as u64;
    let fp = (tp as f64 * (1.0 / precision - 1.0)).round() as u64;
    ClassCounts { tp, fp, fn_, tn: total - tp - fp - fn_ }
}

#[test]
fn object_row_metric_identity() {
    let m = class_metrics(&counts_for(0.6269, 0.7264, 1_000_000, 100_000_000));
    assert!((m.recall - 0.6269).abs() < 1e-6 && (m.precision - 0.7264).abs() < 1e-6);
    assert!((m.f1 - 0.6730).abs() < 5e-4, "{}", m.f1);
    assert!((m.iou - 0.5072).abs() < 5e-4, "{}", m.iou);
}

#[test]
fn background_row_metric_identity() {
    let m = class_metrics(&counts_for(0.9963, 0.9941, 90_000_000, 100_000_000));
    assert!((m.f1 - 0.9952).abs() < 5e-4, "{}", m.f1);
    assert!((m.iou - 0.9905).abs() < 5e-4, "{}", m.iou);
}

#[test]
fn confusion_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let pred = random_mask(&mut rng, 8, 0.3);
        let gt = random_mask(&mut rng, 8, 0.2);
        let c = confusion(&pred, &gt).unwrap();
        for class in 0..2u8 {
            let mut k = ClassCounts::default();
            for h in 0..8 {
                for d in 0..8 {
                    for w in 0..8 {
                        let i = (h * 8 + d) * 8 + w;
                        let (p, g) = (pred.labels[i] == class, gt.labels[i] == class);
                        if p && g {
                            k.tp += 1;
                        } else if p {
                            k.fp += 1;
                        } else if g {
                            k.fn_ += 1;
                        } else {
                            k.tn += 1;
                        }
                    }
                }
            }
            assert_eq!(c.classes[class as usize], k);
            assert_eq!(k.total(), 512);
        }
        // relabeling both masks swaps the class rows
        let flip = |m: &OccupancyMask| OccupancyMask { labels: m.labels.iter().map(|v| 1 - v).collect(), grid: m.grid };
        let s = confusion(&flip(&pred), &flip(&gt)).unwrap();
        assert_eq!(s.classes[0], c.classes[1]);
        assert_eq!(s.classes[1], c.classes[0]);
    }
}

#[test]
fn metrics_match_formulas_and_ordering() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let k = ClassCounts {
            tp: rng.random_range(1..10_000),
            fp: rng.random_range(0..10_000),
            fn_: rng.random_range(0..10_000),
            tn: rng.random_range(0..10_000),
        };
        let m = class_metrics(&k);
        let (tp, fp, fn_) = (k.tp as f64, k.fp as f64, k.fn_ as f64);
        assert!((m.recall - tp / (tp + fn_)).abs() < 1e-12);
        assert!((m.precision - tp / (tp + fp)).abs() < 1e-12);
        let f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
        assert!((m.f1 - f1).abs() < 1e-12);
        assert!((m.iou - m.f1 / (2.0 - m.f1)).abs() < 1e-12);
        assert!(m.iou <= m.f1 + 1e-15 && m.f1 <= m.precision.max(m.recall) + 1e-15);
        assert!(!m.undefined);
    }
}

fn frame(id: &str, mask: OccupancyMask) -> Frame {
    Frame::new(id.to_string(), Volume::zeros(mask.grid), mask).unwrap()
}

#[test]
fn micro_average_over_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gt = [random_mask(&mut rng, 4, 0.4), random_mask(&mut rng, 4, 0.4)];
    let pred = [random_mask(&mut rng, 4, 0.4), random_mask(&mut rng, 4, 0.4)];
    let frames: Vec<Frame> = gt.iter().enumerate().map(|(i, m)| frame(&format!("f{i}"), m.clone())).collect();
    let preds: Vec<Vec<u8>> = pred.iter().map(|m| m.labels.clone()).collect();

    let one = evaluate_predictions(&frames[..1], &preds[..1]).unwrap();
    assert_eq!(one.metrics(), per_class_metrics(&confusion(&pred[0], &gt[0]).unwrap()));

    let tripled: Vec<Frame> = (0..3).map(|_| frames[0].clone()).collect();
    let tp = vec![preds[0].clone(); 3];
    assert_eq!(evaluate_predictions(&tripled, &tp).unwrap().metrics(), one.metrics());

    let both = evaluate_predictions(&frames, &preds).unwrap();
    let mut sum = [ClassCounts::default(); 2];
    for (p, g) in pred.iter().zip(&gt) {
        for (&a, &b) in p.labels.iter().zip(&g.labels) {
            for (k, s) in sum.iter_mut().enumerate() {
                let (pk, gk) = (a as usize == k, b as usize == k);
                s.tp += (pk && gk) as u64;
                s.fp += (pk && !gk) as u64;
                s.fn_ += (!pk && gk) as u64;
                s.tn += (!pk && !gk) as u64;
            }
        }
    }
    assert_eq!(both.total.classes, sum);
    let csv = both.to_csv();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    assert!(csv.lines().last().unwrap().starts_with("all,object,"));

    assert!(matches!(evaluate_predictions(&[], &[]), Err(Error::Empty(_))));
}

#[test]
fn ablation_rows_survive_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = VoxelGrid::default().with_dims(4, 4, 4);
    let make = |rng: &mut ChaCha8Rng, i: usize| {
        let mut m = OccupancyMask::zeros(grid);
        let mut v = Volume::zeros(grid);
        for k in 0..grid.len() {
            let on = rng.random::<f64>() < 0.3;
            m.labels[k] = on as u8;
            v.values[k] = if on { 1.0 } else { 0.1 };
        }
        Frame::new(format!("a{i}"), v, m).unwrap()
    };
    let frames: Vec<Frame> = (0..3).map(|i| make(&mut rng, i)).collect();
    let cfg = TrainConfig {
        max_epochs: 1,
        model: UNetConfig { base_channels: 2, bottleneck_channels: 4, ..UNetConfig::default() },
        ..TrainConfig::default()
    };
    let build = |c: &AblationConfig| {
        if !c.cfar {
            return Err(Error::Empty("synthetic failure"));
        }
        Ok(DatasetSplit { train: frames[..2].to_vec(), val: frames[2..].to_vec(), seed: 0 })
    };
    let rows = run_ablation(&AblationConfig::grid(), &cfg, build);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().filter(|r| r.result.is_ok()).count(), 2);
    let csv = ablation_to_csv(&rows);
    assert_eq!(csv.lines().next().unwrap(), ABLATION_CSV_HEADER);
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(csv, ablation_to_csv(&run_ablation(&AblationConfig::grid(), &cfg, build)));
}
