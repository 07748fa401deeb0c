//! Rigid transforms, oriented boxes and 2D boxes shared by every other module.

use nalgebra::{Isometry3, Matrix3, Matrix4, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Vec3 = Vector3<f64>;

/// Rotation + translation, stored as a unit quaternion so repeated edits do
/// not drift away from SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    iso: Isometry3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            iso: Isometry3::identity(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        let rotation = renormalize(rotation.into_inner());
        Self {
            iso: Isometry3::from_parts(Translation3::from(translation), rotation),
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Builds a transform from raw `wxyz` quaternion components, normalizing them.
    /// Returns `None` for a zero or non-finite quaternion.
    pub fn from_wxyz(q: [f64; 4], translation: Vec3) -> Option<Self> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-12 || !translation.iter().all(|v| v.is_finite()) {
            return None;
        }
        Some(Self::new(UnitQuaternion::new_unchecked(quat), translation))
    }

    /// Projects `rotation` onto the nearest rotation matrix before converting.
    pub fn from_matrix_parts(rotation: &Matrix3<f64>, translation: Vec3) -> Self {
        let rot = nearest_rotation(rotation);
        let q = UnitQuaternion::from_matrix(&rot);
        Self::new(q, translation)
    }

    pub fn from_isometry(iso: Isometry3<f64>) -> Self {
        Self::new(iso.rotation, iso.translation.vector)
    }

    pub fn isometry(&self) -> &Isometry3<f64> {
        &self.iso
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.iso.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.iso.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> Vec3 {
        self.iso.translation.vector
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        self.iso.to_homogeneous()
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.iso.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        Self::from_isometry(self.iso * other.iso)
    }

    pub fn inverse(&self) -> RigidTransform {
        Self::from_isometry(self.iso.inverse())
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.iso.rotation * p + self.iso.translation.vector
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.iso.rotation * v
    }

    pub fn with_translation(&self, translation: Vec3) -> RigidTransform {
        Self::new(self.iso.rotation, translation)
    }

    /// Rotation angle in radians between `self` and `other`.
    pub fn angle_to(&self, other: &RigidTransform) -> f64 {
        self.iso.rotation.angle_to(&other.iso.rotation)
    }
}

/// Nearest rotation (Frobenius sense) via SVD, with the reflection fixed up.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * v_t
}

/// Max deviation of `m` from an orthonormal, right-handed matrix.
pub fn rotation_defect(m: &Matrix3<f64>) -> f64 {
    let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
    ortho.max((m.determinant() - 1.0).abs())
}

// Quaternions already unit to within rounding are kept bit-exact, so a
// serialized pose reads back identical.
fn renormalize(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    if (q.norm_squared() - 1.0).abs() <= 4.0 * f64::EPSILON {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::new_normalize(q)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TransformRepr {
    Quat {
        #[serde(alias = "quaternion", alias = "quaternion_wxyz")]
        q: [f64; 4],
        #[serde(alias = "translation", alias = "translation_xyz")]
        t: [f64; 3],
    },
    Matrix {
        matrix: [[f64; 4]; 4],
    },
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let t = self.translation();
        TransformRepr::Quat {
            q: self.wxyz(),
            t: [t.x, t.y, t.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match TransformRepr::deserialize(d)? {
            TransformRepr::Quat { q, t } => RigidTransform::from_wxyz(q, Vec3::from(t))
                .ok_or_else(|| D::Error::custom("invalid quaternion")),
            TransformRepr::Matrix { matrix } => {
                let rot = Matrix3::from_fn(|r, c| matrix[r][c]);
                let t = Vec3::new(matrix[0][3], matrix[1][3], matrix[2][3]);
                if rotation_defect(&rot) > 1e-6 {
                    return Err(D::Error::custom("matrix rotation block is not orthonormal"));
                }
                Ok(RigidTransform::from_matrix_parts(&rot, t))
            }
        }
    }
}

/// Box with arbitrary orientation: a center frame plus positive half-extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub pose: RigidTransform,
    pub half_extents: Vec3,
}

impl OrientedBox {
    pub fn new(pose: RigidTransform, half_extents: Vec3) -> Option<Self> {
        if half_extents.iter().all(|h| *h > 0.0 && h.is_finite()) {
            Some(Self { pose, half_extents })
        } else {
            None
        }
    }

    pub fn centered(center: Vec3, half_extents: Vec3) -> Option<Self> {
        Self::new(RigidTransform::from_translation(center), half_extents)
    }

    /// Corners in lexicographic sign order over (x, y, z): index bit 2 selects
    /// the x sign, bit 1 the y sign, bit 0 the z sign, with 0 meaning minus.
    pub fn corners(&self) -> [Vec3; 8] {
        let h = self.half_extents;
        std::array::from_fn(|i| {
            let sx = if i & 4 != 0 { 1.0 } else { -1.0 };
            let sy = if i & 2 != 0 { 1.0 } else { -1.0 };
            let sz = if i & 1 != 0 { 1.0 } else { -1.0 };
            self.pose.apply(&Vec3::new(sx * h.x, sy * h.y, sz * h.z))
        })
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let local = self.to_local(p);
        (0..3).all(|i| local[i].abs() <= self.half_extents[i])
    }

    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.pose.rotation().inverse() * (p - self.pose.translation())
    }

    pub fn inflated(&self, factor: f64) -> OrientedBox {
        OrientedBox {
            pose: self.pose,
            half_extents: self.half_extents * factor,
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> OrientedBox {
        OrientedBox {
            pose: t.compose(&self.pose),
            half_extents: self.half_extents,
        }
    }

    /// Two-corner view: (lower-left-front, upper-right-back) in the box frame,
    /// plus the box orientation and center.
    pub fn two_corner_view(&self) -> TwoCornerBox {
        let h = self.half_extents;
        TwoCornerBox {
            min_corner: [-h.x, -h.y, -h.z],
            max_corner: [h.x, h.y, h.z],
            center: self.pose.translation().into(),
            orientation_wxyz: self.pose.wxyz(),
        }
    }

    /// Ray/box slab intersection; returns the parametric interval clipped to t ≥ 0.
    pub fn ray_interval(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let inv_rot = self.pose.rotation().inverse();
        let o = inv_rot * (origin - self.pose.translation());
        let d = inv_rot * dir;
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            let h = self.half_extents[i];
            if d[i].abs() < 1e-300 {
                if o[i].abs() > h {
                    return None;
                }
                continue;
            }
            let a = (-h - o[i]) / d[i];
            let b = (h - o[i]) / d[i];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoCornerBox {
    pub min_corner: [f64; 3],
    pub max_corner: [f64; 3],
    pub center: [f64; 3],
    pub orientation_wxyz: [f64; 4],
}

/// Axis-aligned bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb::new(self.min.inf(&other.min), self.max.sup(&other.max))
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.min[i] > self.max[i])
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    /// Slab test; returns the entry/exit parameters (entry may be negative).
    pub fn ray_interval(&self, origin: &Vec3, inv_dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            let a = (self.min[i] - origin[i]) * inv_dir[i];
            let b = (self.max[i] - origin[i]) * inv_dir[i];
            // NaN from 0 * inf means the ray lies on the slab plane; treat as inside
            let (lo, hi) = if a.is_nan() || b.is_nan() {
                (f64::NEG_INFINITY, f64::INFINITY)
            } else {
                (a.min(b), a.max(b))
            };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

/// Pixel-space rectangle, `min` is the upper-left, `max` the lower-right
/// (inclusive pixel indices when derived from masks).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Box2D {
    pub fn contains_box(&self, other: &Box2D) -> bool {
        self.min[0] <= other.min[0]
            && self.min[1] <= other.min[1]
            && self.max[0] >= other.max[0]
            && self.max[1] >= other.max[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(-10.0f64..10.0),
        )
            .prop_filter_map("degenerate quaternion", |(q, t)| {
                RigidTransform::from_wxyz(q, Vec3::from(t))
            })
    }

    #[test]
    fn identity_box_corners() {
        let b = OrientedBox::centered(Vec3::zeros(), Vec3::repeat(1.0)).unwrap();
        let c = b.corners();
        assert_eq!(c[0], Vec3::new(-1.0, -1.0, -1.0));
        assert_eq!(c[1], Vec3::new(-1.0, -1.0, 1.0));
        assert_eq!(c[2], Vec3::new(-1.0, 1.0, -1.0));
        assert_eq!(c[7], Vec3::new(1.0, 1.0, 1.0));
        for p in c {
            assert!(p.iter().all(|v| v.abs() == 1.0));
        }
    }

    #[test]
    fn translated_box_corners() {
        let b = OrientedBox::centered(Vec3::new(5.0, 0.0, 0.0), Vec3::repeat(1.0)).unwrap();
        let base = OrientedBox::centered(Vec3::zeros(), Vec3::repeat(1.0)).unwrap();
        for (a, b) in b.corners().iter().zip(base.corners().iter()) {
            assert_eq!(*a, b + Vec3::new(5.0, 0.0, 0.0));
        }
    }

    #[test]
    fn rotated_box_corners_match_hand_rotation() {
        let q = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2);
        let b = OrientedBox::new(RigidTransform::new(q, Vec3::zeros()), Vec3::new(2.0, 1.0, 1.0))
            .unwrap();
        // (x, y, z) -> (-y, x, z)
        let expected: Vec<Vec3> = OrientedBox::centered(Vec3::zeros(), Vec3::new(2.0, 1.0, 1.0))
            .unwrap()
            .corners()
            .iter()
            .map(|p| Vec3::new(-p.y, p.x, p.z))
            .collect();
        for (got, want) in b.corners().iter().zip(expected.iter()) {
            assert!((got - want).norm() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn containment_edges() {
        let b = OrientedBox::centered(Vec3::zeros(), Vec3::repeat(1.0)).unwrap();
        assert!(b.contains(&Vec3::zeros()));
        assert!(!b.contains(&Vec3::new(1.0 + 1e-6, 0.0, 0.0)));
    }

    #[test]
    fn invalid_box_rejected() {
        assert!(OrientedBox::centered(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0)).is_none());
    }

    #[test]
    fn serde_quaternion_and_matrix() {
        let t: RigidTransform = serde_json::from_str(
            r#"{"quaternion_wxyz":[2.0,0.0,0.0,0.0],"translation":[1.0,2.0,3.0]}"#,
        )
        .unwrap();
        assert_eq!(t.wxyz(), [1.0, 0.0, 0.0, 0.0]);
        let m: RigidTransform = serde_json::from_str(
            r#"{"matrix":[[0,-1,0,1],[1,0,0,2],[0,0,1,3],[0,0,0,1]]}"#,
        )
        .unwrap();
        let p = m.apply(&Vec3::new(1.0, 0.0, 0.0));
        assert!((p - Vec3::new(1.0, 3.0, 3.0)).norm() < 1e-12);
        let back: RigidTransform =
            serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert!((back.to_matrix() - m.to_matrix()).abs().max() < 1e-15);
    }

    proptest! {
        #[test]
        fn inverse_round_trip(t in arb_transform(), p in prop::array::uniform3(-5.0f64..5.0)) {
            let p = Vec3::from(p);
            let back = t.inverse().apply(&t.apply(&p));
            prop_assert!((back - p).norm() < 1e-12);
            let id = t.compose(&t.inverse());
            prop_assert!((id.to_matrix() - Matrix4::identity()).abs().max() < 1e-12);
        }

        #[test]
        fn compose_is_associative(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!((left.to_matrix() - right.to_matrix()).abs().max() < 1e-9);
        }

        #[test]
        fn identity_laws(a in arb_transform()) {
            let id = RigidTransform::identity();
            prop_assert!((a.compose(&id).to_matrix() - a.to_matrix()).abs().max() < 1e-12);
            prop_assert!((id.compose(&a).to_matrix() - a.to_matrix()).abs().max() < 1e-12);
        }

        #[test]
        fn contains_matches_brute_force(t in arb_transform(),
                                       h in prop::array::uniform3(0.1f64..3.0),
                                       p in prop::array::uniform3(-5.0f64..5.0)) {
            let b = OrientedBox::new(t, Vec3::from(h)).unwrap();
            let p = Vec3::from(p);
            let m = t.to_matrix().try_inverse().unwrap();
            let local = m.transform_point(&nalgebra::Point3::from(p)).coords;
            let brute = (0..3).all(|i| local[i].abs() <= h[i]);
            // only disagree within rounding distance of a face
            let margin = (0..3).map(|i| (local[i].abs() - h[i]).abs()).fold(f64::INFINITY, f64::min);
            if margin > 1e-9 {
                prop_assert_eq!(b.contains(&p), brute);
            }
        }
    }
}
