//! Coordinate conventions and rigid geometry shared by every stage.
//!
//! Axes: `x` right, `y` up, `z` forward. Azimuth is measured from `+z`
//! toward `+x`, elevation from the `xz`-plane toward `+y`, so boresight
//! `(theta, phi) = (0, 0)` is `+z`. Yaw is a right-handed rotation about
//! `+y` (turns `+z` toward `+x`); pitch is a right-handed rotation about
//! `+x` (turns `+z` toward `-y`).

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Point3) -> Point3 {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Point3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

/// `(r, theta, phi)` with azimuth `theta` and elevation `phi` in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
}

impl SphericalCoord {
    pub const fn new(r: f64, theta: f64, phi: f64) -> Self {
        Self { r, theta, phi }
    }

    pub fn from_degrees(r: f64, theta_deg: f64, phi_deg: f64) -> Self {
        Self::new(r, theta_deg.to_radians(), phi_deg.to_radians())
    }
}

pub fn spherical_to_cartesian(c: SphericalCoord) -> Point3 {
    let (st, ct) = c.theta.sin_cos();
    let (sp, cp) = c.phi.sin_cos();
    Point3::new(c.r * cp * st, c.r * sp, c.r * cp * ct)
}

/// Inverse of [`spherical_to_cartesian`]; the origin maps to `r = 0` with zero angles.
pub fn cartesian_to_spherical(p: Point3) -> SphericalCoord {
    let r = p.norm();
    if r == 0.0 {
        return SphericalCoord::new(0.0, 0.0, 0.0);
    }
    let theta = p.x.atan2(p.z);
    let phi = (p.y / r).clamp(-1.0, 1.0).asin();
    SphericalCoord::new(r, theta, phi)
}

/// Row-major 3x3 rotation matrix.
pub type Mat3 = [[f64; 3]; 3];

const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(m: &Mat3, p: Point3) -> Point3 {
    Point3::new(
        m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
        m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
        m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z,
    )
}

fn transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = m[j][i];
        }
    }
    t
}

pub fn yaw_matrix(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

pub fn pitch_matrix(pitch: f64) -> Mat3 {
    let (s, c) = pitch.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

/// Proper rigid motion `p -> R p + t`.
///
/// Built from yaw and pitch (yaw applied first), but stored as a full
/// rotation matrix so that composition and inversion stay closed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Point3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: IDENTITY3,
        translation: Point3::ORIGIN,
    };

    pub fn from_yaw_pitch(translation: Point3, yaw: f64, pitch: f64) -> Self {
        Self {
            rotation: mat_mul(&pitch_matrix(pitch), &yaw_matrix(yaw)),
            translation,
        }
    }

    pub fn translation(t: Point3) -> Self {
        Self {
            rotation: IDENTITY3,
            translation: t,
        }
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        mat_vec(&self.rotation, p) + self.translation
    }

    /// Rotation only, for direction vectors.
    pub fn rotate(&self, v: Point3) -> Point3 {
        mat_vec(&self.rotation, v)
    }

    /// `compose(a, b).apply(p) == a.apply(b.apply(p))`.
    pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: mat_mul(&a.rotation, &b.rotation),
            translation: a.apply(b.translation),
        }
    }

    pub fn then(&self, next: &RigidTransform) -> RigidTransform {
        RigidTransform::compose(next, self)
    }

    pub fn invert(&self) -> RigidTransform {
        let rt = transpose(&self.rotation);
        RigidTransform {
            rotation: rt,
            translation: -mat_vec(&rt, self.translation),
        }
    }

    pub fn max_abs_diff(&self, o: &RigidTransform) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.rotation[i][j] - o.rotation[i][j]).abs());
            }
        }
        let t = self.translation - o.translation;
        d.max(t.x.abs()).max(t.y.abs()).max(t.z.abs())
    }
}

pub fn apply_transform(t: &RigidTransform, p: Point3) -> Point3 {
    t.apply(p)
}

/// Box with center, extents and yaw about `+y`.
///
/// In the box frame `w` runs along local `x`, `h` along `y` and `l` along
/// local `z`, so a yaw of zero means the long side points forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

impl OrientedBox {
    pub fn new(center: Point3, l: f64, w: f64, h: f64, yaw: f64) -> Self {
        Self {
            cx: center.x,
            cy: center.y,
            cz: center.z,
            l,
            w,
            h,
            yaw,
        }
    }

    pub fn center(&self) -> Point3 {
        Point3::new(self.cx, self.cy, self.cz)
    }

    pub fn is_valid(&self) -> bool {
        self.l > 0.0
            && self.w > 0.0
            && self.h > 0.0
            && [self.cx, self.cy, self.cz, self.yaw]
                .iter()
                .all(|v| v.is_finite())
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    /// Point expressed in the box frame as `(lateral, vertical, longitudinal)`.
    pub fn to_local(&self, p: Point3) -> Point3 {
        let d = p - self.center();
        let (s, c) = self.yaw.sin_cos();
        Point3::new(c * d.x - s * d.z, d.y, s * d.x + c * d.z)
    }

    pub fn from_local(&self, q: Point3) -> Point3 {
        let (s, c) = self.yaw.sin_cos();
        Point3::new(c * q.x + s * q.z, q.y, -s * q.x + c * q.z) + self.center()
    }

    pub fn inflated(&self, margin: f64) -> OrientedBox {
        OrientedBox {
            l: self.l + 2.0 * margin,
            w: self.w + 2.0 * margin,
            h: self.h + 2.0 * margin,
            ..*self
        }
    }

    /// Footprint corners in the `(x, z)` ground plane, counter-clockwise
    /// when viewed with `x` to the right and `z` up.
    pub fn footprint(&self) -> [(f64, f64); 4] {
        let hw = self.w / 2.0;
        let hl = self.l / 2.0;
        [(-hw, -hl), (hw, -hl), (hw, hl), (-hw, hl)].map(|(lx, lz)| {
            let p = self.from_local(Point3::new(lx, 0.0, lz));
            (p.x, p.z)
        })
    }
}

pub fn point_in_box(p: Point3, b: &OrientedBox) -> bool {
    let q = b.to_local(p);
    q.x.abs() <= b.w / 2.0 && q.y.abs() <= b.h / 2.0 && q.z.abs() <= b.l / 2.0
}

pub fn box_corners(b: &OrientedBox) -> [Point3; 8] {
    let mut out = [Point3::ORIGIN; 8];
    let mut i = 0;
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                out[i] = b.from_local(Point3::new(
                    sx * b.w / 2.0,
                    sy * b.h / 2.0,
                    sz * b.l / 2.0,
                ));
                i += 1;
            }
        }
    }
    out
}

fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        s += x0 * y1 - x1 * y0;
    }
    s.abs() / 2.0
}

/// Sutherland-Hodgman clip of `subject` by a convex counter-clockwise `clip`.
fn clip_convex(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let side = |p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(intersect(prev, cur, sp, sc));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                out.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    out
}

fn intersect(p: (f64, f64), q: (f64, f64), sp: f64, sq: f64) -> (f64, f64) {
    let t = sp / (sp - sq);
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

fn ccw(mut poly: [(f64, f64); 4]) -> [(f64, f64); 4] {
    let signed: f64 = (0..4)
        .map(|i| {
            let (x0, y0) = poly[i];
            let (x1, y1) = poly[(i + 1) % 4];
            x0 * y1 - x1 * y0
        })
        .sum();
    if signed < 0.0 {
        poly.reverse();
    }
    poly
}

/// Volumetric IoU of two yaw-only boxes: footprint polygon overlap times
/// vertical overlap.
pub fn box_iou_3d(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let fa = ccw(a.footprint());
    let fb = ccw(b.footprint());
    let area = polygon_area(&clip_convex(&fa, &fb));
    let y_lo = (a.cy - a.h / 2.0).max(b.cy - b.h / 2.0);
    let y_hi = (a.cy + a.h / 2.0).min(b.cy + b.h / 2.0);
    let inter = area * (y_hi - y_lo).max(0.0);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: Point3, b: Point3, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn spherical_boresight_and_side() {
        let p = spherical_to_cartesian(SphericalCoord::new(1.0, 0.0, 0.0));
        assert!(close(p, Point3::new(0.0, 0.0, 1.0), 1e-15));
        let p = spherical_to_cartesian(SphericalCoord::new(12.0, FRAC_PI_2, 0.0));
        assert!(close(p, Point3::new(12.0, 0.0, 0.0), 1e-12));
    }

    #[test]
    fn spherical_matches_high_precision_values() {
        // mpmath at 30 digits
        let p = spherical_to_cartesian(SphericalCoord::from_degrees(2.0, 30.0, 10.0));
        assert!((p.x - 0.984_807_753_012_208_06).abs() < 1e-14);
        assert!((p.y - 0.347_296_355_333_860_70).abs() < 1e-14);
        assert!((p.z - 1.705_737_063_904_886_42).abs() < 1e-14);
        let back = cartesian_to_spherical(p);
        assert!((back.r - 2.0).abs() < 1e-14);
        assert!((back.theta - 30f64.to_radians()).abs() < 1e-14);
        assert!((back.phi - 10f64.to_radians()).abs() < 1e-14);
    }

    #[test]
    fn extrinsic_translation_only() {
        let t = RigidTransform::from_yaw_pitch(Point3::new(-0.8, -1.5, 2.5), 0.0, 0.0);
        assert_eq!(t.apply(Point3::ORIGIN), Point3::new(-0.8, -1.5, 2.5));
        let p = Point3::new(0.3, -0.2, 5.0);
        assert_eq!(RigidTransform::IDENTITY.apply(p), p);
    }

    #[test]
    fn yaw_turns_forward_toward_right() {
        let t = RigidTransform::from_yaw_pitch(Point3::ORIGIN, FRAC_PI_2, 0.0);
        assert!(close(t.apply(Point3::new(0.0, 0.0, 1.0)), Point3::new(1.0, 0.0, 0.0), 1e-15));
        let t = RigidTransform::from_yaw_pitch(Point3::ORIGIN, 0.0, 0.1);
        let d = t.apply(Point3::new(0.0, 0.0, 1.0));
        assert!(d.y < 0.0);
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let t = RigidTransform::from_yaw_pitch(Point3::new(0.8, -1.5, 2.5), -0.7, 0.09);
        assert!(RigidTransform::compose(&RigidTransform::IDENTITY, &t).max_abs_diff(&t) < 1e-15);
        assert!(
            RigidTransform::compose(&t, &t.invert()).max_abs_diff(&RigidTransform::IDENTITY)
                < 1e-12
        );
    }

    #[test]
    fn box_containment_edges() {
        let unit = OrientedBox::new(Point3::ORIGIN, 1.0, 1.0, 1.0, 0.0);
        assert!(point_in_box(Point3::ORIGIN, &unit));
        assert!(!point_in_box(Point3::new(0.51, 0.0, 0.0), &unit));
        assert!(point_in_box(Point3::new(0.5, 0.5, 0.5), &unit));
    }

    #[test]
    fn yawed_box_matches_inverse_rotation() {
        let b = OrientedBox::new(Point3::new(1.0, 0.5, 4.0), 4.0, 2.0, 1.5, 45f64.to_radians());
        // explicit inverse rotation by -45 degrees about +y
        let oracle = |p: Point3| {
            let (dx, dy, dz) = (p.x - 1.0, p.y - 0.5, p.z - 4.0);
            let c = (45f64).to_radians().cos();
            let s = (45f64).to_radians().sin();
            let lx = c * dx - s * dz;
            let lz = s * dx + c * dz;
            lx.abs() <= 1.0 && dy.abs() <= 0.75 && lz.abs() <= 2.0
        };
        let long = Point3::new(c45(), 0.0, c45());
        for eps in [-1e-6, 1e-6] {
            for p in [
                b.center() + long * (2.0 + eps),
                b.center() + long * -(2.0 + eps),
                b.center() + Point3::new(c45(), 0.0, -c45()) * (1.0 + eps),
                b.center() + Point3::new(0.0, 0.75 + eps, 0.0),
            ] {
                assert_eq!(point_in_box(p, &b), oracle(p), "{p:?}");
                assert_eq!(point_in_box(p, &b), eps < 0.0);
            }
        }
    }

    fn c45() -> f64 {
        std::f64::consts::FRAC_1_SQRT_2
    }

    #[test]
    fn unit_cube_corners() {
        let b = OrientedBox::new(Point3::ORIGIN, 1.0, 1.0, 1.0, 0.0);
        for c in box_corners(&b) {
            assert_eq!(c.x.abs(), 0.5);
            assert_eq!(c.y.abs(), 0.5);
            assert_eq!(c.z.abs(), 0.5);
        }
    }

    #[test]
    fn square_footprint_corners_invariant_under_quarter_turn() {
        let a = OrientedBox::new(Point3::new(1.0, 2.0, 3.0), 2.0, 2.0, 1.0, 0.0);
        let b = OrientedBox { yaw: FRAC_PI_2, ..a };
        let ca = box_corners(&a);
        let cb = box_corners(&b);
        for p in ca {
            assert!(cb.iter().any(|q| close(p, *q, 1e-12)));
        }
    }

    #[test]
    fn iou_of_identical_and_disjoint_boxes() {
        let a = OrientedBox::new(Point3::new(0.0, 0.0, 5.0), 4.0, 2.0, 1.5, 0.3);
        assert!((box_iou_3d(&a, &a) - 1.0).abs() < 1e-12);
        let b = OrientedBox { cx: 10.0, ..a };
        assert_eq!(box_iou_3d(&a, &b), 0.0);
        // half overlap along length
        let c = OrientedBox::new(Point3::new(0.0, 0.0, 0.0), 2.0, 1.0, 1.0, 0.0);
        let d = OrientedBox { cz: 1.0, ..c };
        assert!((box_iou_3d(&c, &d) - 1.0 / 3.0).abs() < 1e-12);
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64, -3.2..3.2f64, -1.5..1.5f64)
            .prop_map(|(x, y, z, yaw, pitch)| {
                RigidTransform::from_yaw_pitch(Point3::new(x, y, z), yaw, pitch)
            })
    }

    fn arb_point() -> impl Strategy<Value = Point3> {
        (-20.0..20.0f64, -20.0..20.0f64, -20.0..20.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn transform_round_trip(t in arb_transform(), p in arb_point()) {
            let q = t.invert().apply(t.apply(p));
            prop_assert!((q - p).norm() < 1e-9);
        }

        #[test]
        fn compose_is_sequential_application(
            a in arb_transform(), b in arb_transform(), c in arb_transform(),
            pts in proptest::collection::vec(arb_point(), 100)
        ) {
            let left = RigidTransform::compose(&RigidTransform::compose(&a, &b), &c);
            let right = RigidTransform::compose(&a, &RigidTransform::compose(&b, &c));
            for p in pts {
                let seq = a.apply(b.apply(c.apply(p)));
                prop_assert!((left.apply(p) - seq).norm() < 1e-9);
                prop_assert!((right.apply(p) - seq).norm() < 1e-9);
            }
        }

        #[test]
        fn containment_invariant_under_joint_yaw(
            p in arb_point(), yaw in -3.2..3.2f64, spin in -3.2..3.2f64,
            l in 0.1..8.0f64, w in 0.1..3.0f64, h in 0.1..3.0f64,
            cx in -5.0..5.0f64, cz in -5.0..5.0f64,
        ) {
            let b = OrientedBox::new(Point3::new(cx, 0.0, cz), l, w, h, yaw);
            let r = RigidTransform::from_yaw_pitch(Point3::ORIGIN, spin, 0.0);
            let c = r.apply(b.center());
            let rb = OrientedBox::new(c, l, w, h, yaw + spin);
            let q = b.to_local(p);
            // skip points numerically on a face
            let margin = (q.x.abs() - w / 2.0).abs().min((q.y.abs() - h / 2.0).abs()).min((q.z.abs() - l / 2.0).abs());
            prop_assume!(margin > 1e-9);
            prop_assert_eq!(point_in_box(p, &b), point_in_box(r.apply(p), &rb));
        }

        #[test]
        fn corners_faces_and_beyond(
            l in 0.1..8.0f64, w in 0.1..3.0f64, h in 0.1..3.0f64, yaw in -3.2..3.2f64,
            c in arb_point(),
        ) {
            let b = OrientedBox::new(c, l, w, h, yaw);
            // corners computed in floating point may sit a rounding step outside
            let tol = b.inflated(1e-9);
            for corner in box_corners(&b) {
                prop_assert!(point_in_box(corner, &tol));
            }
            let (lo, hi) = box_corners(&b).iter().fold(
                (Point3::new(f64::MAX, f64::MAX, f64::MAX), Point3::new(f64::MIN, f64::MIN, f64::MIN)),
                |(lo, hi), p| (
                    Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)),
                    Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)),
                ),
            );
            prop_assert!(lo.x <= c.x && c.x <= hi.x && lo.y <= c.y && c.y <= hi.y && lo.z <= c.z && c.z <= hi.z);
            for (axis, half) in [(0usize, w / 2.0), (1, h / 2.0), (2, l / 2.0)] {
                for sign in [-1.0, 1.0] {
                    let mut q = [0.0; 3];
                    q[axis] = sign * half * (1.0 - 1e-9);
                    prop_assert!(point_in_box(b.from_local(Point3::new(q[0], q[1], q[2])), &b));
                    q[axis] = sign * (half + 1e-6);
                    prop_assert!(!point_in_box(b.from_local(Point3::new(q[0], q[1], q[2])), &b));
                }
            }
        }
    }
}
