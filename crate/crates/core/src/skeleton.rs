//! Skeleton data model: the 16-joint body, its kinematic tree, absolute and
//! relative-to-parent pose encodings, per-frame velocities and rigid frame
//! alignment.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 16;
/// Coordinates per pose: 16 joints × (x, y, z).
pub const POSE_DIM: usize = NUM_JOINTS * 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointId {
    SpineMid = 0,
    SpineBase,
    SpineShoulder,
    Neck,
    ShoulderLeft,
    ElbowLeft,
    WristLeft,
    ShoulderRight,
    ElbowRight,
    WristRight,
    HipLeft,
    KneeLeft,
    AnkleLeft,
    HipRight,
    KneeRight,
    AnkleRight,
}

impl JointId {
    pub const ROOT: JointId = JointId::SpineMid;

    pub const ALL: [JointId; NUM_JOINTS] = [
        JointId::SpineMid,
        JointId::SpineBase,
        JointId::SpineShoulder,
        JointId::Neck,
        JointId::ShoulderLeft,
        JointId::ElbowLeft,
        JointId::WristLeft,
        JointId::ShoulderRight,
        JointId::ElbowRight,
        JointId::WristRight,
        JointId::HipLeft,
        JointId::KneeLeft,
        JointId::AnkleLeft,
        JointId::HipRight,
        JointId::KneeRight,
        JointId::AnkleRight,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<JointId> {
        Self::ALL.get(index).copied()
    }

    /// Kinect SDK style lower-case name.
    pub fn name(self) -> &'static str {
        match self {
            JointId::SpineMid => "spinemid",
            JointId::SpineBase => "spinebase",
            JointId::SpineShoulder => "spineshoulder",
            JointId::Neck => "neck",
            JointId::ShoulderLeft => "shoulderleft",
            JointId::ElbowLeft => "elbowleft",
            JointId::WristLeft => "wristleft",
            JointId::ShoulderRight => "shoulderright",
            JointId::ElbowRight => "elbowright",
            JointId::WristRight => "wristright",
            JointId::HipLeft => "hipleft",
            JointId::KneeLeft => "kneeleft",
            JointId::AnkleLeft => "ankleleft",
            JointId::HipRight => "hipright",
            JointId::KneeRight => "kneeright",
            JointId::AnkleRight => "ankleright",
        }
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parent map over the 16 joints. The root is its own parent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KinematicTree {
    parent: [JointId; NUM_JOINTS],
    /// Joints ordered so every parent precedes its children.
    order: [JointId; NUM_JOINTS],
}

impl KinematicTree {
    /// Validates that the parent map is a tree rooted at spinemid.
    pub fn new(parent: [JointId; NUM_JOINTS]) -> Result<Self> {
        if parent[JointId::ROOT.index()] != JointId::ROOT {
            return Err(Error::config("root joint must be its own parent"));
        }
        let mut order = Vec::with_capacity(NUM_JOINTS);
        let mut placed = [false; NUM_JOINTS];
        order.push(JointId::ROOT);
        placed[JointId::ROOT.index()] = true;
        while order.len() < NUM_JOINTS {
            let before = order.len();
            for j in JointId::ALL {
                if !placed[j.index()] && placed[parent[j.index()].index()] {
                    placed[j.index()] = true;
                    order.push(j);
                }
            }
            if order.len() == before {
                return Err(Error::config(
                    "kinematic tree has a cycle or a joint that never reaches the root",
                ));
            }
        }
        let mut ord = [JointId::ROOT; NUM_JOINTS];
        ord.copy_from_slice(&order);
        Ok(Self { parent, order: ord })
    }

    /// Kinect v2 hierarchy restricted to the tracked joints.
    pub fn kinect() -> Self {
        use JointId::*;
        let parent = [
            SpineMid,      // spinemid
            SpineMid,      // spinebase
            SpineMid,      // spineshoulder
            SpineShoulder, // neck
            SpineShoulder, // shoulderleft
            ShoulderLeft,  // elbowleft
            ElbowLeft,     // wristleft
            SpineShoulder, // shoulderright
            ShoulderRight, // elbowright
            ElbowRight,    // wristright
            SpineBase,     // hipleft
            HipLeft,       // kneeleft
            KneeLeft,      // ankleleft
            SpineBase,     // hipright
            HipRight,      // kneeright
            KneeRight,     // ankleright
        ];
        Self::new(parent).expect("built-in tree is valid")
    }

    #[inline]
    pub fn parent(&self, joint: JointId) -> JointId {
        self.parent[joint.index()]
    }

    /// Topological order, root first.
    pub fn order(&self) -> &[JointId; NUM_JOINTS] {
        &self.order
    }

    /// Number of bones between `joint` and the root.
    pub fn depth(&self, joint: JointId) -> usize {
        let mut d = 0;
        let mut j = joint;
        while j != JointId::ROOT {
            j = self.parent(j);
            d += 1;
        }
        d
    }
}

impl Default for KinematicTree {
    fn default() -> Self {
        Self::kinect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Absolute,
    RelativeToParent,
}

/// One skeleton frame: 16 (x, y, z) triples in [`JointId`] index order.
#[derive(Clone, Copy, PartialEq)]
pub struct SkeletonPose {
    coords: [f64; POSE_DIM],
    encoding: Encoding,
}

impl fmt::Debug for SkeletonPose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SkeletonPose")
            .field("encoding", &self.encoding)
            .field("coords", &&self.coords[..])
            .finish()
    }
}

impl SkeletonPose {
    pub fn zeros(encoding: Encoding) -> Self {
        Self {
            coords: [0.0; POSE_DIM],
            encoding,
        }
    }

    pub fn new(coords: [f64; POSE_DIM], encoding: Encoding) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("pose coordinates"));
        }
        Ok(Self { coords, encoding })
    }

    pub fn from_slice(coords: &[f64], encoding: Encoding) -> Result<Self> {
        let arr: [f64; POSE_DIM] = coords.try_into().map_err(|_| Error::Dimension {
            what: "pose",
            expected: POSE_DIM,
            got: coords.len(),
        })?;
        Self::new(arr, encoding)
    }

    #[inline]
    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    #[inline]
    pub fn coords(&self) -> &[f64; POSE_DIM] {
        &self.coords
    }

    #[inline]
    pub fn coords_mut(&mut self) -> &mut [f64; POSE_DIM] {
        &mut self.coords
    }

    #[inline]
    pub fn joint(&self, joint: JointId) -> [f64; 3] {
        let i = joint.index() * 3;
        [self.coords[i], self.coords[i + 1], self.coords[i + 2]]
    }

    #[inline]
    pub fn set_joint(&mut self, joint: JointId, p: [f64; 3]) {
        let i = joint.index() * 3;
        self.coords[i..i + 3].copy_from_slice(&p);
    }

    pub(crate) fn expect_encoding(&self, expected: Encoding) -> Result<()> {
        if self.encoding != expected {
            return Err(Error::Encoding {
                expected,
                actual: self.encoding,
            });
        }
        Ok(())
    }

    /// Each non-root joint becomes its offset from its parent; the root stays absolute.
    pub fn to_relative(&self, tree: &KinematicTree) -> Result<SkeletonPose> {
        self.expect_encoding(Encoding::Absolute)?;
        let mut out = SkeletonPose::zeros(Encoding::RelativeToParent);
        for j in JointId::ALL {
            let p = self.joint(j);
            if j == JointId::ROOT {
                out.set_joint(j, p);
            } else {
                let q = self.joint(tree.parent(j));
                out.set_joint(j, [p[0] - q[0], p[1] - q[1], p[2] - q[2]]);
            }
        }
        Ok(out)
    }

    pub fn to_absolute(&self, tree: &KinematicTree) -> Result<SkeletonPose> {
        self.expect_encoding(Encoding::RelativeToParent)?;
        let mut out = SkeletonPose::zeros(Encoding::Absolute);
        for &j in tree.order() {
            let r = self.joint(j);
            if j == JointId::ROOT {
                out.set_joint(j, r);
            } else {
                let q = out.joint(tree.parent(j));
                out.set_joint(j, [q[0] + r[0], q[1] + r[1], q[2] + r[2]]);
            }
        }
        Ok(out)
    }

    /// Component-wise `self - other`, ignoring encodings.
    pub fn difference(&self, other: &SkeletonPose) -> VelocityVector {
        let mut v = [0.0; POSE_DIM];
        for (k, out) in v.iter_mut().enumerate() {
            *out = self.coords[k] - other.coords[k];
        }
        VelocityVector(v)
    }

    /// Component-wise `self + delta`.
    pub fn translated(&self, delta: &[f64; POSE_DIM]) -> SkeletonPose {
        let mut out = *self;
        for (c, d) in out.coords.iter_mut().zip(delta) {
            *c += d;
        }
        out
    }
}

/// Per-frame joint displacement (meters per frame), 48 components.
#[derive(Clone, Copy, PartialEq)]
pub struct VelocityVector(pub [f64; POSE_DIM]);

impl fmt::Debug for VelocityVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("VelocityVector").field(&&self.0[..]).finish()
    }
}

impl VelocityVector {
    pub fn zeros() -> Self {
        Self([0.0; POSE_DIM])
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; POSE_DIM] = v.try_into().map_err(|_| Error::Dimension {
            what: "velocity",
            expected: POSE_DIM,
            got: v.len(),
        })?;
        Ok(Self(arr))
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Time-ordered poses sharing one encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    frames: Vec<SkeletonPose>,
    frame_rate_hz: f64,
}

impl SkeletonSequence {
    pub const DEFAULT_FRAME_RATE_HZ: f64 = 30.0;

    pub fn new(frames: Vec<SkeletonPose>, frame_rate_hz: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InsufficientFrames { needed: 1, got: 0 });
        }
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(Error::config("frame rate must be positive"));
        }
        let enc = frames[0].encoding;
        if let Some(bad) = frames.iter().find(|f| f.encoding != enc) {
            return Err(Error::Encoding {
                expected: enc,
                actual: bad.encoding,
            });
        }
        Ok(Self {
            frames,
            frame_rate_hz,
        })
    }

    #[inline]
    pub fn frames(&self) -> &[SkeletonPose] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<SkeletonPose> {
        self.frames
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Always false; sequences hold at least one frame.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    #[inline]
    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    #[inline]
    pub fn encoding(&self) -> Encoding {
        self.frames[0].encoding
    }

    pub(crate) fn expect_encoding(&self, expected: Encoding) -> Result<()> {
        if self.encoding() != expected {
            return Err(Error::Encoding {
                expected,
                actual: self.encoding(),
            });
        }
        Ok(())
    }

    pub fn to_relative(&self, tree: &KinematicTree) -> Result<SkeletonSequence> {
        let frames = self
            .frames
            .iter()
            .map(|f| f.to_relative(tree))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            frames,
            frame_rate_hz: self.frame_rate_hz,
        })
    }

    pub fn to_absolute(&self, tree: &KinematicTree) -> Result<SkeletonSequence> {
        let frames = self
            .frames
            .iter()
            .map(|f| f.to_absolute(tree))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            frames,
            frame_rate_hz: self.frame_rate_hz,
        })
    }

    /// Appends `other`'s frames; encodings must match.
    pub fn concat(&self, other: &SkeletonSequence) -> Result<SkeletonSequence> {
        let mut frames = self.frames.clone();
        frames.extend_from_slice(&other.frames);
        Self::new(frames, self.frame_rate_hz)
    }
}

/// Backward differences `frames[t] - frames[t-1]`, one per frame after the first.
pub fn velocities(seq: &SkeletonSequence) -> Result<Vec<VelocityVector>> {
    seq.expect_encoding(Encoding::Absolute)?;
    if seq.len() < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: seq.len(),
        });
    }
    Ok(seq
        .frames
        .windows(2)
        .map(|w| w[1].difference(&w[0]))
        .collect())
}

/// Proper rigid motion `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.rotation * Vector3::from(p) + self.translation;
        [q.x, q.y, q.z]
    }

    /// Maps every joint of an absolute pose.
    pub fn apply_pose(&self, pose: &SkeletonPose) -> Result<SkeletonPose> {
        pose.expect_encoding(Encoding::Absolute)?;
        let mut out = *pose;
        for j in JointId::ALL {
            out.set_joint(j, self.apply(pose.joint(j)));
        }
        Ok(out)
    }
}

/// Least-squares rigid transform taking `src` onto `dst`.
///
/// Closed-form orthogonal Procrustes (Kabsch): centroids are removed, the
/// cross-covariance is decomposed by SVD and the sign of the smallest
/// singular direction is flipped when needed so the result is a rotation
/// rather than a reflection.
pub fn rigid_align(src: &[[f64; 3]], dst: &[[f64; 3]]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch {
            left: src.len(),
            right: dst.len(),
        });
    }
    if src.len() < 3 {
        return Err(Error::InsufficientFrames {
            needed: 3,
            got: src.len(),
        });
    }
    if src.iter().chain(dst).flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("alignment points"));
    }

    let n = src.len() as f64;
    let centroid = |pts: &[[f64; 3]]| {
        pts.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) / n
    };
    let cs = centroid(src);
    let cd = centroid(dst);

    let mut cross = Matrix3::zeros();
    let mut spread_src = Matrix3::zeros();
    let mut spread_dst = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let a = Vector3::from(*s) - cs;
        let b = Vector3::from(*d) - cd;
        cross += a * b.transpose();
        spread_src += a * a.transpose();
        spread_dst += b * b.transpose();
    }

    for spread in [&spread_src, &spread_dst] {
        let mut ev = spread.symmetric_eigenvalues().as_slice().to_vec();
        ev.sort_by(|a, b| b.total_cmp(a));
        let scale = ev[0].max(f64::MIN_POSITIVE);
        if ev[0] <= 1e-24 || ev[1] <= 1e-12 * scale {
            return Err(Error::DegenerateGeometry(
                "points are coincident or collinear",
            ));
        }
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let translation = cd - rotation * cs;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_pose(rng: &mut ChaCha8Rng) -> SkeletonPose {
        let mut c = [0.0; POSE_DIM];
        for x in c.iter_mut() {
            *x = rng.random_range(-2.0..2.0);
        }
        SkeletonPose::new(c, Encoding::Absolute).unwrap()
    }

    #[test]
    fn joint_indices_are_fixed() {
        assert_eq!(JointId::ALL.len(), 16);
        assert_eq!(JointId::SpineMid.index(), 0);
        for (i, j) in JointId::ALL.iter().enumerate() {
            assert_eq!(j.index(), i);
            assert_eq!(JointId::from_index(i), Some(*j));
        }
        assert_eq!(JointId::from_index(16), None);
    }

    #[test]
    fn tree_reaches_root_from_every_joint() {
        let tree = KinematicTree::kinect();
        assert_eq!(tree.parent(JointId::ROOT), JointId::ROOT);
        assert_eq!(tree.order()[0], JointId::ROOT);
        for j in JointId::ALL {
            assert!(tree.depth(j) <= 4);
        }
        assert_eq!(tree.depth(JointId::WristLeft), 4);
        assert_eq!(tree.depth(JointId::AnkleRight), 4);
    }

    #[test]
    fn cyclic_tree_is_rejected() {
        let mut parent = [JointId::SpineMid; NUM_JOINTS];
        parent[JointId::Neck.index()] = JointId::ElbowLeft;
        parent[JointId::ElbowLeft.index()] = JointId::Neck;
        assert!(matches!(KinematicTree::new(parent), Err(Error::Config(_))));
        let mut parent = [JointId::SpineMid; NUM_JOINTS];
        parent[0] = JointId::Neck;
        assert!(KinematicTree::new(parent).is_err());
    }

    #[test]
    fn zero_pose_stays_zero() {
        let tree = KinematicTree::kinect();
        let z = SkeletonPose::zeros(Encoding::Absolute);
        let r = z.to_relative(&tree).unwrap();
        assert_eq!(r.coords(), &[0.0; POSE_DIM]);
        let a = SkeletonPose::zeros(Encoding::RelativeToParent)
            .to_absolute(&tree)
            .unwrap();
        assert_eq!(a.coords(), &[0.0; POSE_DIM]);
    }

    #[test]
    fn collapsed_pose_is_root_plus_zero_offsets() {
        let tree = KinematicTree::kinect();
        let mut p = SkeletonPose::zeros(Encoding::Absolute);
        for j in JointId::ALL {
            p.set_joint(j, [1.0, 1.0, 1.0]);
        }
        let r = p.to_relative(&tree).unwrap();
        assert_eq!(r.joint(JointId::ROOT), [1.0, 1.0, 1.0]);
        for j in &JointId::ALL[1..] {
            assert_eq!(r.joint(*j), [0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn chain_offsets_accumulate_with_depth() {
        let tree = KinematicTree::kinect();
        let mut r = SkeletonPose::zeros(Encoding::RelativeToParent);
        for j in &JointId::ALL[1..] {
            r.set_joint(*j, [0.0, 0.1, 0.0]);
        }
        let a = r.to_absolute(&tree).unwrap();
        for j in JointId::ALL {
            let p = a.joint(j);
            let expected = 0.1 * tree.depth(j) as f64;
            assert_eq!(p[0], 0.0);
            assert!((p[1] - expected).abs() < 1e-15, "{j}: {} vs {expected}", p[1]);
            assert_eq!(p[2], 0.0);
        }
    }

    #[test]
    fn relative_round_trip_on_random_poses() {
        let tree = KinematicTree::kinect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let back = p.to_relative(&tree).unwrap().to_absolute(&tree).unwrap();
            for (a, b) in p.coords().iter().zip(back.coords()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn wrong_encoding_is_an_error() {
        let tree = KinematicTree::kinect();
        let rel = SkeletonPose::zeros(Encoding::RelativeToParent);
        assert!(matches!(
            rel.to_relative(&tree),
            Err(Error::Encoding { .. })
        ));
        let abs = SkeletonPose::zeros(Encoding::Absolute);
        assert!(matches!(abs.to_absolute(&tree), Err(Error::Encoding { .. })));
    }

    #[test]
    fn pose_rejects_bad_input() {
        assert!(SkeletonPose::from_slice(&[0.0; 47], Encoding::Absolute).is_err());
        let mut c = [0.0; POSE_DIM];
        c[5] = f64::NAN;
        assert!(SkeletonPose::new(c, Encoding::Absolute).is_err());
    }

    #[test]
    fn sequence_rejects_mixed_encodings_and_empty() {
        let frames = vec![
            SkeletonPose::zeros(Encoding::Absolute),
            SkeletonPose::zeros(Encoding::RelativeToParent),
        ];
        assert!(SkeletonSequence::new(frames, 30.0).is_err());
        assert!(SkeletonSequence::new(vec![], 30.0).is_err());
        assert!(SkeletonSequence::new(vec![SkeletonPose::zeros(Encoding::Absolute)], 0.0).is_err());
    }

    #[test]
    fn velocities_of_constant_and_linear_motion() {
        let p = SkeletonPose::zeros(Encoding::Absolute);
        let seq = SkeletonSequence::new(vec![p; 5], 30.0).unwrap();
        for v in velocities(&seq).unwrap() {
            assert_eq!(v.0, [0.0; POSE_DIM]);
        }

        let frames = (0..6)
            .map(|t| {
                let mut p = SkeletonPose::zeros(Encoding::Absolute);
                for j in JointId::ALL {
                    p.set_joint(j, [0.01 * t as f64, 0.0, 0.0]);
                }
                p
            })
            .collect();
        let seq = SkeletonSequence::new(frames, 30.0).unwrap();
        let vel = velocities(&seq).unwrap();
        assert_eq!(vel.len(), 5);
        for v in vel {
            for j in 0..NUM_JOINTS {
                assert!((v.0[3 * j] - 0.01).abs() < 1e-15);
                assert_eq!(v.0[3 * j + 1], 0.0);
                assert_eq!(v.0[3 * j + 2], 0.0);
            }
        }
    }

    #[test]
    fn velocities_match_elementwise_subtraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frames: Vec<_> = (0..20).map(|_| random_pose(&mut rng)).collect();
        let seq = SkeletonSequence::new(frames.clone(), 30.0).unwrap();
        let vel = velocities(&seq).unwrap();
        for t in 1..frames.len() {
            for k in 0..POSE_DIM {
                let oracle = frames[t].coords()[k] - frames[t - 1].coords()[k];
                assert!((vel[t - 1].0[k] - oracle).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn velocities_of_concatenation_include_junction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<_> = (0..6).map(|_| random_pose(&mut rng)).collect();
        let b: Vec<_> = (0..4).map(|_| random_pose(&mut rng)).collect();
        let sa = SkeletonSequence::new(a.clone(), 30.0).unwrap();
        let sb = SkeletonSequence::new(b.clone(), 30.0).unwrap();
        let joined = velocities(&sa.concat(&sb).unwrap()).unwrap();
        let mut expected = velocities(&sa).unwrap();
        expected.push(b[0].difference(&a[5]));
        expected.extend(velocities(&sb).unwrap());
        assert_eq!(joined, expected);
    }

    #[test]
    fn velocities_need_two_frames() {
        let seq = SkeletonSequence::new(vec![SkeletonPose::zeros(Encoding::Absolute)], 30.0).unwrap();
        assert!(matches!(
            velocities(&seq),
            Err(Error::InsufficientFrames { needed: 2, got: 1 })
        ));
    }

    fn sample_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect()
    }

    fn check_rotation(r: &Matrix3<f64>) {
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        assert!(err < 1e-9, "orthonormality error {err}");
        assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn align_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = sample_points(&mut rng, 16);
        let t = rigid_align(&pts, &pts).unwrap();
        assert!((t.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn align_recovers_quarter_turn() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = sample_points(&mut rng, 16);
        let rot = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let truth = RigidTransform {
            rotation: rot,
            translation: Vector3::new(1.0, 2.0, 3.0),
        };
        let dst: Vec<_> = src.iter().map(|p| truth.apply(*p)).collect();
        let est = rigid_align(&src, &dst).unwrap();
        assert!((est.rotation - rot).abs().max() < 1e-9);
        assert!((est.translation - truth.translation).abs().max() < 1e-9);
        check_rotation(&est.rotation);
    }

    #[test]
    fn align_noisy_residual_is_near_noise_level() {
        let sigma = 1e-3;
        let noise = Normal::new(0.0, sigma).unwrap();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let src = sample_points(&mut rng, 16);
            let dst: Vec<[f64; 3]> = src
                .iter()
                .map(|p| {
                    [
                        p[0] + noise.sample(&mut rng),
                        p[1] + noise.sample(&mut rng),
                        p[2] + noise.sample(&mut rng),
                    ]
                })
                .collect();
            let t = rigid_align(&src, &dst).unwrap();
            check_rotation(&t.rotation);
            let sq: f64 = src
                .iter()
                .zip(&dst)
                .map(|(s, d)| {
                    let q = t.apply(*s);
                    (0..3).map(|k| (q[k] - d[k]).powi(2)).sum::<f64>()
                })
                .sum();
            let rms = (sq / src.len() as f64).sqrt();
            assert!(rms <= 3.0 * sigma, "seed {seed}: rms {rms}");
        }
    }

    #[test]
    fn align_corrects_reflection() {
        // dst is a mirror image; the best proper rotation must still have det +1.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let src = sample_points(&mut rng, 10);
        let dst: Vec<_> = src.iter().map(|p| [p[0], p[1], -p[2]]).collect();
        let t = rigid_align(&src, &dst).unwrap();
        check_rotation(&t.rotation);
    }

    #[test]
    fn align_rejects_degenerate_input() {
        let line: Vec<[f64; 3]> = (0..5).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        assert!(matches!(
            rigid_align(&line, &line),
            Err(Error::DegenerateGeometry(_))
        ));
        let same = vec![[1.0, 1.0, 1.0]; 4];
        assert!(matches!(
            rigid_align(&same, &same),
            Err(Error::DegenerateGeometry(_))
        ));
        assert!(rigid_align(&line[..2], &line[..2]).is_err());
        assert!(rigid_align(&line, &line[..4]).is_err());
    }
}
