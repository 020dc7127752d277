use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sonovox_core::annotate::{
    annotate_frame, euclidean_cluster_indices, fit_oriented_box, normalize_yaw_half_turn, rule_filter,
    AnnotateParams, ClusterParams, FilterRules,
};
use sonovox_core::geometry::{box_iou_3d, point_in_box, OrientedBox, Point3};
use sonovox_core::scene::{random_scene, synthesize_lidar_cloud, LabeledBox, LidarParams, Scene, SceneParams};

/// Breadth-first search over the full pairwise-distance graph.
fn bfs_clusters(cloud: &[Point3], threshold: f64, min_points: usize) -> Vec<Vec<usize>> {
    let n = cloud.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut queue = std::collections::VecDeque::from([s]);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            for j in 0..n {
                if !seen[j] && cloud[i].distance(cloud[j]) <= threshold {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        comp.sort_unstable();
        if comp.len() >= min_points {
            out.push(comp);
        }
    }
    out
}

fn arb_cloud() -> impl Strategy<Value = Vec<Point3>> {
    proptest::collection::vec((-4.0..4.0f64, -1.0..1.0f64, -4.0..4.0f64), 0..200)
        .prop_map(|v| v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect())
}

fn arb_box() -> impl Strategy<Value = OrientedBox> {
    (0.05..10.0f64, 0.05..4.0f64, 0.05..4.0f64, -3.2..3.2f64)
        .prop_map(|(l, w, h, yaw)| OrientedBox::new(Point3::ORIGIN, l, w, h, yaw))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clustering_matches_bfs(cloud in arb_cloud(), threshold in 0.2..1.5f64, min_points in 1usize..6) {
        let params = ClusterParams { threshold, min_points };
        prop_assert_eq!(euclidean_cluster_indices(&cloud, &params), bfs_clusters(&cloud, threshold, min_points));
    }

    #[test]
    fn rule_filter_is_a_pure_predicate(boxes in proptest::collection::vec(arb_box(), 0..40)) {
        let rules = FilterRules::default();
        let once = rule_filter(&boxes, &rules);
        prop_assert_eq!(rule_filter(&once, &rules), once.clone());
        // order-preserving subsequence of the input
        let mut it = boxes.iter();
        for b in &once {
            prop_assert!(it.any(|x| x == b));
        }
    }

    #[test]
    fn fitted_box_contains_cluster(cloud in arb_cloud().prop_filter("non-empty", |c| !c.is_empty())) {
        let b = fit_oriented_box(&cloud).inflated(0.01);
        for &p in &cloud {
            prop_assert!(point_in_box(p, &b), "{:?} outside {:?}", p, b);
        }
    }

    #[test]
    fn adding_interior_point_keeps_memberships(cloud in arb_cloud(), pick in 0usize..200) {
        let params = ClusterParams::default();
        let before = euclidean_cluster_indices(&cloud, &params);
        prop_assume!(!before.is_empty());
        let c = &before[pick % before.len()];
        let mut grown = cloud.clone();
        grown.push(cloud[c[0]] + Point3::new(0.01, 0.0, 0.0));
        let after = euclidean_cluster_indices(&grown, &params);
        for old in &before {
            prop_assert!(after.iter().any(|new| old.iter().all(|i| new.contains(i))));
        }
    }
}

fn box_blob(truth: &OrientedBox, n: usize, seed: u64) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            truth.from_local(Point3::new(
                rng.random_range(-truth.w / 2.0..=truth.w / 2.0),
                rng.random_range(-truth.h / 2.0..=truth.h / 2.0),
                rng.random_range(-truth.l / 2.0..=truth.l / 2.0),
            ))
        })
        .collect()
}

#[test]
fn rotated_blob_recovers_yaw() {
    for deg in [30.0f64, -30.0, 60.0, 89.0] {
        let truth = OrientedBox::new(Point3::new(-2.0, 0.75, 7.0), 4.0, 1.8, 1.5, deg.to_radians());
        let b = fit_oriented_box(&box_blob(&truth, 3000, 11));
        let err = normalize_yaw_half_turn(b.yaw - truth.yaw).abs().to_degrees();
        assert!(err < 3.0, "truth {deg} fitted {}", b.yaw.to_degrees());
        assert!((b.l - 4.0).abs() / 4.0 < 0.05 && (b.w - 1.8).abs() / 1.8 < 0.05 && (b.h - 1.5).abs() / 1.5 < 0.05);
    }
}

fn two_vehicle_scene() -> Scene {
    let mut s = Scene::empty(21);
    for (cx, cz, yaw) in [(-3.0, 6.0, 10.0f64), (3.5, 8.5, -20.0)] {
        s.boxes.push(LabeledBox {
            bbox: OrientedBox::new(Point3::new(cx, -1.8 + 0.8, cz), 4.2, 1.8, 1.6, yaw.to_radians()),
            class: "vehicle".into(),
        });
    }
    s
}

#[test]
fn scene_with_two_vehicles_yields_two_matching_boxes() {
    let scene = two_vehicle_scene();
    let cloud = synthesize_lidar_cloud(&scene, &LidarParams::default());
    let boxes = annotate_frame(&cloud, &AnnotateParams::new());
    assert_eq!(boxes.len(), 2, "{boxes:?}");
    for t in &scene.boxes {
        let best = boxes.iter().map(|b| box_iou_3d(b, &t.bbox)).fold(0.0, f64::max);
        assert!(best > 0.5, "best IoU {best}");
    }
}

#[test]
fn random_scenes_produce_one_box_per_vehicle() {
    let params = SceneParams::default();
    for seed in 0..10 {
        let scene = random_scene(&params, seed);
        let cloud = synthesize_lidar_cloud(&scene, &LidarParams::default());
        let boxes = annotate_frame(&cloud, &AnnotateParams::new());
        assert_eq!(boxes.len(), scene.boxes.len(), "seed {seed}");
    }
}

#[test]
fn ground_only_and_empty_frames_have_no_boxes() {
    let cloud = synthesize_lidar_cloud(&Scene::empty(3), &LidarParams::default());
    assert!(!cloud.is_empty());
    assert!(annotate_frame(&cloud, &AnnotateParams::new()).is_empty());
    assert!(annotate_frame(&[], &AnnotateParams::new()).is_empty());
}
