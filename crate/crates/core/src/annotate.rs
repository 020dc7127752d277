//! Rule-based ground truth from LiDAR-style point clouds: ROI crop, ground
//! and ego removal, Euclidean clustering, oriented-box fitting and
//! size/ratio filtering.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Point3};
use crate::rng::stream;
use crate::scene::{LabeledBox, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiSpec {
    pub x_bounds: (f64, f64),
    pub y_bounds: (f64, f64),
    pub z_bounds: (f64, f64),
}

impl Default for RoiSpec {
    fn default() -> Self {
        Self {
            x_bounds: (-12.0, 12.0),
            y_bounds: (-2.0, 6.0),
            z_bounds: (0.0, 12.0),
        }
    }
}

impl RoiSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("roi.x", self.x_bounds), ("roi.y", self.y_bounds), ("roi.z", self.z_bounds)] {
            if !(lo < hi) {
                return Err(Error::config(name, "min must be below max"));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: Point3) -> bool {
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        within(p.x, self.x_bounds) && within(p.y, self.y_bounds) && within(p.z, self.z_bounds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterRules {
    pub l_bounds: (f64, f64),
    pub w_bounds: (f64, f64),
    pub h_bounds: (f64, f64),
    pub lw_ratio_bounds: (f64, f64),
    pub lh_ratio_min: f64,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            l_bounds: (0.2, 8.0),
            w_bounds: (0.5, 3.0),
            h_bounds: (0.5, 3.0),
            lw_ratio_bounds: (0.5, 5.0),
            lh_ratio_min: 0.4,
        }
    }
}

impl FilterRules {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("filter.l", self.l_bounds),
            ("filter.w", self.w_bounds),
            ("filter.h", self.h_bounds),
            ("filter.lw_ratio", self.lw_ratio_bounds),
        ] {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::config(name, "need 0 < min <= max"));
            }
        }
        if !(self.lh_ratio_min > 0.0) {
            return Err(Error::config("filter.lh_ratio_min", "must be positive"));
        }
        Ok(())
    }

    pub fn accepts(&self, b: &OrientedBox) -> bool {
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        within(b.l, self.l_bounds)
            && within(b.w, self.w_bounds)
            && within(b.h, self.h_bounds)
            && within(b.l / b.w, self.lw_ratio_bounds)
            && b.l / b.h >= self.lh_ratio_min
    }
}

/// Points inside the ROI, bounds inclusive.
pub fn crop_roi(cloud: &[Point3], roi: &RoiSpec) -> PointCloud {
    cloud.iter().copied().filter(|&p| roi.contains(p)).collect()
}

/// Plane `normal . p + offset = 0` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Point3,
    pub offset: f64,
}

impl Plane {
    pub fn distance(&self, p: Point3) -> f64 {
        (self.normal.dot(p) + self.offset).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundParams {
    pub distance: f64,
    pub iterations: usize,
    pub max_tilt_deg: f64,
    pub min_inlier_fraction: f64,
    pub seed: u64,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self {
            distance: 0.3,
            iterations: 200,
            max_tilt_deg: 30.0,
            min_inlier_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundRemoval {
    pub cloud: PointCloud,
    /// `None` when no qualifying plane was found; the cloud is then unchanged.
    pub plane: Option<Plane>,
}

impl GroundRemoval {
    pub fn no_plane(&self) -> bool {
        self.plane.is_none()
    }
}

fn plane_through(a: Point3, b: Point3, c: Point3) -> Option<Plane> {
    let n = (b - a).cross(c - a);
    let len = n.norm();
    if !(len > 1e-12) {
        return None;
    }
    let mut n = n * (1.0 / len);
    if n.y < 0.0 {
        n = -n;
    }
    Some(Plane {
        normal: n,
        offset: -n.dot(a),
    })
}

/// Least-squares `y = a x + b z + c` over the inliers.
fn refit_plane(points: &[Point3]) -> Option<Plane> {
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for p in points {
        let row = [p.x, p.z, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += row[i] * row[j];
            }
            rhs[i] += row[i] * p.y;
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if !(d.abs() > 1e-12) {
        return None;
    }
    let mut coef = [0.0; 3];
    for (k, c) in coef.iter_mut().enumerate() {
        let mut mk = m;
        for i in 0..3 {
            mk[i][k] = rhs[i];
        }
        *c = det(&mk) / d;
    }
    // y - a x - b z - c = 0
    let n = Point3::new(-coef[0], 1.0, -coef[1]);
    let len = n.norm();
    Some(Plane {
        normal: n * (1.0 / len),
        offset: -coef[2] / len,
    })
}

/// RANSAC ground plane with normal within `max_tilt_deg` of +y, refit by
/// least squares on its inliers, then removal of points within `distance`.
pub fn remove_ground(cloud: &[Point3], params: &GroundParams) -> GroundRemoval {
    let unchanged = || GroundRemoval {
        cloud: cloud.to_vec(),
        plane: None,
    };
    let n = cloud.len();
    if n < 3 {
        return unchanged();
    }
    let mut rng = stream(params.seed, "ransac");
    let cos_limit = params.max_tilt_deg.to_radians().cos();
    let mut best: Option<(usize, Plane)> = None;
    for _ in 0..params.iterations {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let k = rng.random_range(0..n);
        if i == j || j == k || i == k {
            continue;
        }
        let Some(plane) = plane_through(cloud[i], cloud[j], cloud[k]) else {
            continue;
        };
        if plane.normal.y < cos_limit {
            continue;
        }
        let count = cloud.iter().filter(|&&p| plane.distance(p) <= params.distance).count();
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, plane));
        }
    }
    let Some((count, plane)) = best else {
        return unchanged();
    };
    if (count as f64) < params.min_inlier_fraction * n as f64 {
        return unchanged();
    }
    let inliers: Vec<Point3> = cloud.iter().copied().filter(|&p| plane.distance(p) <= params.distance).collect();
    let plane = match refit_plane(&inliers) {
        Some(p) if p.normal.y >= cos_limit => p,
        _ => plane,
    };
    GroundRemoval {
        cloud: cloud.iter().copied().filter(|&p| plane.distance(p) > params.distance).collect(),
        plane: Some(plane),
    }
}

/// Drops points whose horizontal distance from the origin is below `radius`.
pub fn remove_ego(cloud: &[Point3], radius: f64) -> PointCloud {
    cloud
        .iter()
        .copied()
        .filter(|p| (p.x * p.x + p.z * p.z).sqrt() >= radius)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    pub threshold: f64,
    pub min_points: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            threshold: 0.7,
            min_points: 5,
        }
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Connected components of the `distance <= threshold` graph, as sorted
/// point indices. Components smaller than `min_points` are dropped and the
/// rest are ordered by their first index.
pub fn euclidean_cluster_indices(cloud: &[Point3], params: &ClusterParams) -> Vec<Vec<usize>> {
    let n = cloud.len();
    if n == 0 {
        return Vec::new();
    }
    let t = params.threshold;
    let t2 = t * t;
    let cell = |p: Point3| {
        (
            (p.x / t).floor() as i64,
            (p.y / t).floor() as i64,
            (p.z / t).floor() as i64,
        )
    };
    let mut buckets: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, &p) in cloud.iter().enumerate() {
        buckets.entry(cell(p)).or_default().push(i);
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for (i, &p) in cloud.iter().enumerate() {
        let (cx, cy, cz) = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(list) = buckets.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &j in list {
                        if j <= i {
                            continue;
                        }
                        let d = cloud[j] - p;
                        if d.dot(d) <= t2 {
                            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                            if a != b {
                                parent[a.max(b)] = a.min(b);
                            }
                        }
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = Vec::new();
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        let g = groups.entry(r).or_default();
        if g.is_empty() {
            order.push(r);
        }
        g.push(i);
    }
    order
        .into_iter()
        .filter_map(|r| groups.remove(&r))
        .filter(|g| g.len() >= params.min_points)
        .collect()
}

pub fn euclidean_cluster(cloud: &[Point3], params: &ClusterParams) -> Vec<PointCloud> {
    euclidean_cluster_indices(cloud, params)
        .into_iter()
        .map(|g| g.into_iter().map(|i| cloud[i]).collect())
        .collect()
}

fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Normalise a yaw to (-pi/2, pi/2].
pub fn normalize_yaw_half_turn(yaw: f64) -> f64 {
    use std::f64::consts::PI;
    let mut y = yaw.rem_euclid(PI);
    if y > PI / 2.0 {
        y -= PI;
    }
    y
}

/// Smallest extent any fitted box is allowed to have.
pub const MIN_EXTENT: f64 = 0.01;

/// Minimum-area enclosing rectangle of the (x, z) footprint for yaw, l and
/// w (l >= w), vertical extent for h and cy.
pub fn fit_oriented_box(cluster: &[Point3]) -> OrientedBox {
    assert!(!cluster.is_empty(), "fit_oriented_box needs at least one point");
    let (ymin, ymax) = cluster
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
    let hull = convex_hull(cluster.iter().map(|p| (p.x, p.z)).collect());

    // direction (ux, uz) of the rectangle's first edge and its extents
    let mut best = (f64::INFINITY, (0.0, 1.0), (0.0, 0.0), (0.0, 0.0));
    let edges = if hull.len() < 2 { 1 } else { hull.len() };
    for e in 0..edges {
        let dir = if hull.len() < 2 {
            (0.0, 1.0)
        } else {
            let (a, b) = (hull[e], hull[(e + 1) % hull.len()]);
            let (dx, dz) = (b.0 - a.0, b.1 - a.1);
            let len = (dx * dx + dz * dz).sqrt();
            (dx / len, dz / len)
        };
        let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, z) in &hull {
            let u = x * dir.0 + z * dir.1;
            let v = -x * dir.1 + z * dir.0;
            u0 = u0.min(u);
            u1 = u1.max(u);
            v0 = v0.min(v);
            v1 = v1.max(v);
        }
        let area = (u1 - u0) * (v1 - v0);
        if area < best.0 - 1e-12 {
            best = (area, dir, (u0, u1), (v0, v1));
        }
    }
    let (_, dir, (u0, u1), (v0, v1)) = best;
    let (um, vm) = ((u0 + u1) / 2.0, (v0 + v1) / 2.0);
    let cx = um * dir.0 - vm * dir.1;
    let cz = um * dir.1 + vm * dir.0;
    let (du, dv) = (u1 - u0, v1 - v0);
    // long axis direction in (x, z)
    let (l, w, long) = if du >= dv {
        (du, dv, dir)
    } else {
        (dv, du, (-dir.1, dir.0))
    };
    // box local +z maps to (sin yaw, cos yaw) in (x, z)
    let yaw = normalize_yaw_half_turn(long.0.atan2(long.1));
    OrientedBox::new(
        Point3::new(cx, (ymin + ymax) / 2.0, cz),
        l.max(MIN_EXTENT),
        w.max(MIN_EXTENT),
        (ymax - ymin).max(MIN_EXTENT),
        yaw,
    )
}

/// Boxes passing every size and ratio rule, in input order.
pub fn rule_filter(boxes: &[OrientedBox], rules: &FilterRules) -> Vec<OrientedBox> {
    boxes.iter().copied().filter(|b| rules.accepts(b)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnnotateParams {
    pub roi: RoiSpec,
    pub ground: GroundParams,
    pub ego_radius: f64,
    pub cluster: ClusterParams,
    pub rules: FilterRules,
}

impl AnnotateParams {
    pub fn new() -> Self {
        Self {
            ego_radius: 2.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.roi.validate()?;
        self.rules.validate()?;
        if !(self.ground.distance > 0.0) {
            return Err(Error::config("annotation.ground_distance", "must be positive"));
        }
        if !(self.cluster.threshold > 0.0) {
            return Err(Error::config("annotation.cluster_threshold", "must be positive"));
        }
        if self.ego_radius < 0.0 {
            return Err(Error::config("annotation.ego_radius", "must be non-negative"));
        }
        Ok(())
    }
}

/// Crop, ground and ego removal, clustering, box fitting and filtering.
pub fn annotate_frame(cloud: &[Point3], params: &AnnotateParams) -> Vec<OrientedBox> {
    let cropped = crop_roi(cloud, &params.roi);
    let ground = remove_ground(&cropped, &params.ground);
    let rest = remove_ego(&ground.cloud, params.ego_radius);
    let fitted: Vec<OrientedBox> = euclidean_cluster(&rest, &params.cluster)
        .iter()
        .map(|c| fit_oriented_box(c))
        .collect();
    rule_filter(&fitted, &params.rules)
}

pub const BOX_CSV_HEADER: &str = "frame_id,cx,cy,cz,l,w,h,yaw_deg,class";

#[derive(Debug, Clone, PartialEq)]
pub struct BoxRecord {
    pub frame_id: String,
    pub labeled: LabeledBox,
}

pub fn boxes_to_csv(records: &[BoxRecord]) -> String {
    let mut s = String::new();
    s.push_str(BOX_CSV_HEADER);
    s.push('\n');
    for r in records {
        let b = &r.labeled.bbox;
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            r.frame_id,
            b.cx,
            b.cy,
            b.cz,
            b.l,
            b.w,
            b.h,
            b.yaw.to_degrees(),
            r.labeled.class
        );
    }
    s
}

pub fn write_boxes(path: &Path, records: &[BoxRecord]) -> Result<()> {
    std::fs::write(path, boxes_to_csv(records))?;
    Ok(())
}

pub fn read_boxes(path: &Path) -> Result<Vec<BoxRecord>> {
    let text = std::fs::read_to_string(path)?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == BOX_CSV_HEADER) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(parse_err(i + 1, format!("expected 9 fields, found {}", fields.len())));
        }
        let mut nums = [0.0; 7];
        for (k, v) in nums.iter_mut().enumerate() {
            *v = fields[k + 1]
                .trim()
                .parse()
                .map_err(|e| parse_err(i + 1, format!("field {}: {e}", k + 2)))?;
        }
        out.push(BoxRecord {
            frame_id: fields[0].trim().to_string(),
            labeled: LabeledBox {
                bbox: OrientedBox::new(
                    Point3::new(nums[0], nums[1], nums[2]),
                    nums[3],
                    nums[4],
                    nums[5],
                    nums[6].to_radians(),
                ),
                class: fields[8].trim().to_string(),
            },
        });
    }
    Ok(out)
}
