//! 26-DoF kinematic hand skeleton.
//!
//! The global pose is a translation (position of the palm root) and a unit
//! quaternion; each finger adds two angles at its base joint (flexion,
//! abduction) and one hinge angle at each of the two distal joints. Only the
//! 21 joint positions are modelled, there is no surface.

use std::path::Path;

use nalgebra::{Matrix3, Point3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use thiserror::Error;

use crate::kv::{KvDoc, KvError, KvWriter};

pub const NUM_FINGERS: usize = 5;
pub const FINGER_DOFS: usize = 4;
pub const NUM_JOINTS: usize = 1 + NUM_FINGERS * 4;
pub const NUM_PARAMS: usize = 7 + NUM_FINGERS * FINGER_DOFS;
pub const PALM_ROOT: usize = 0;

const GEOMETRY_VERSION: u64 = 1;
const DEFAULT_GEOMETRY: &str = include_str!("../data/hand_geometry.kv");
const DEFAULT_LIMITS: &str = include_str!("../data/joint_limits.kv");

#[derive(Debug, Error)]
pub enum HandModelError {
    #[error("orientation quaternion has zero norm")]
    DegenerateOrientation,
    #[error("joint index {0} out of range (0..{NUM_JOINTS})")]
    JointIndex(usize),
    #[error("invalid hand geometry: {0}")]
    Geometry(String),
    #[error("invalid joint limits: {0}")]
    Limits(String),
    #[error("unsupported geometry file version {0}")]
    Version(u64),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("pose csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Finger {
    Thumb,
    Index,
    Middle,
    Ring,
    Pinky,
}

impl Finger {
    pub const ALL: [Finger; NUM_FINGERS] = [
        Finger::Thumb,
        Finger::Index,
        Finger::Middle,
        Finger::Ring,
        Finger::Pinky,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Finger::Thumb => "thumb",
            Finger::Index => "index",
            Finger::Middle => "middle",
            Finger::Ring => "ring",
            Finger::Pinky => "pinky",
        }
    }

    pub fn from_name(name: &str) -> Option<Finger> {
        Finger::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Joint indices of MCP, PIP, DIP, TIP for this finger.
    pub fn joints(self) -> [usize; 4] {
        let base = 1 + 4 * self.index();
        [base, base + 1, base + 2, base + 3]
    }

    /// Range of this finger's angles inside the flat 27-vector.
    pub fn param_range(self) -> std::ops::Range<usize> {
        let start = 7 + FINGER_DOFS * self.index();
        start..start + FINGER_DOFS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FingerJoint {
    Mcp,
    Pip,
    Dip,
    Tip,
}

pub fn joint_index(finger: Finger, joint: FingerJoint) -> usize {
    finger.joints()[joint as usize]
}

pub fn tip_joints() -> [usize; NUM_FINGERS] {
    Finger::ALL.map(|f| joint_index(f, FingerJoint::Tip))
}

/// Joints that move rigidly with the palm: the root and the five MCPs.
pub fn palm_joints() -> [usize; 6] {
    let mut out = [PALM_ROOT; 6];
    for f in Finger::ALL {
        out[1 + f.index()] = joint_index(f, FingerJoint::Mcp);
    }
    out
}

pub fn joint_name(j: usize) -> String {
    if j == PALM_ROOT {
        return "palm".to_string();
    }
    let finger = Finger::ALL[(j - 1) / 4];
    let part = ["mcp", "pip", "dip", "tip"][(j - 1) % 4];
    format!("{}_{}", finger.name(), part)
}

/// Degrees of freedom of one finger, in parameter order.
pub const DOF_NAMES: [&str; FINGER_DOFS] =
    ["mcp_flexion", "mcp_abduction", "pip_flexion", "dip_flexion"];

/// Fixed bone lengths and finger placement of one hand.
#[derive(Debug, Clone, PartialEq)]
pub struct HandGeometry {
    finger_base_offsets: [Vector3<f64>; NUM_FINGERS],
    bone_lengths: [[f64; 3]; NUM_FINGERS],
    base_frame_deg: [[f64; 3]; NUM_FINGERS],
    palm_root_to_wrist: Vector3<f64>,
    base_frames: [Matrix3<f64>; NUM_FINGERS],
}

impl HandGeometry {
    /// `base_frame_deg` holds yaw, pitch and roll of each finger base frame.
    pub fn new(
        finger_base_offsets: [Vector3<f64>; NUM_FINGERS],
        bone_lengths: [[f64; 3]; NUM_FINGERS],
        base_frame_deg: [[f64; 3]; NUM_FINGERS],
        palm_root_to_wrist: Vector3<f64>,
    ) -> Result<Self, HandModelError> {
        for (f, lengths) in bone_lengths.iter().enumerate() {
            if lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
                return Err(HandModelError::Geometry(format!(
                    "{} bone lengths must be positive, got {lengths:?}",
                    Finger::ALL[f].name()
                )));
            }
        }
        let base_frames = base_frame_deg.map(|[yaw, pitch, roll]| {
            let r = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw.to_radians())
                * Rotation3::from_axis_angle(&Vector3::x_axis(), pitch.to_radians())
                * Rotation3::from_axis_angle(&Vector3::y_axis(), roll.to_radians());
            *r.matrix()
        });
        Ok(Self {
            finger_base_offsets,
            bone_lengths,
            base_frame_deg,
            palm_root_to_wrist,
            base_frames,
        })
    }

    pub fn finger_base_offset(&self, finger: Finger) -> Vector3<f64> {
        self.finger_base_offsets[finger.index()]
    }

    /// Proximal, middle and distal segment lengths.
    pub fn bone_lengths(&self, finger: Finger) -> [f64; 3] {
        self.bone_lengths[finger.index()]
    }

    pub fn base_frame(&self, finger: Finger) -> &Matrix3<f64> {
        &self.base_frames[finger.index()]
    }

    pub fn palm_root_to_wrist(&self) -> Vector3<f64> {
        self.palm_root_to_wrist
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self, HandModelError> {
        let version = doc.u64("version")?;
        if version != GEOMETRY_VERSION {
            return Err(HandModelError::Version(version));
        }
        let vec3 = |prefix: &str| -> Result<Vector3<f64>, KvError> {
            Ok(Vector3::new(
                doc.f64(&format!("{prefix}.x"))?,
                doc.f64(&format!("{prefix}.y"))?,
                doc.f64(&format!("{prefix}.z"))?,
            ))
        };
        let mut offsets = [Vector3::zeros(); NUM_FINGERS];
        let mut lengths = [[0.0; 3]; NUM_FINGERS];
        let mut frames = [[0.0; 3]; NUM_FINGERS];
        for f in Finger::ALL {
            let n = f.name();
            offsets[f.index()] = vec3(&format!("{n}.base"))?;
            lengths[f.index()] = [
                doc.f64(&format!("{n}.proximal"))?,
                doc.f64(&format!("{n}.middle"))?,
                doc.f64(&format!("{n}.distal"))?,
            ];
            frames[f.index()] = [
                doc.f64(&format!("{n}.frame_yaw_deg"))?,
                doc.f64(&format!("{n}.frame_pitch_deg"))?,
                doc.f64(&format!("{n}.frame_roll_deg"))?,
            ];
        }
        let wrist = vec3("palm.wrist")?;
        let geom = Self::new(offsets, lengths, frames, wrist)?;
        doc.reject_unknown(|k| geometry_keys().iter().any(|g| g == k))?;
        Ok(geom)
    }

    pub fn to_kv(&self) -> String {
        let mut w = KvWriter::new();
        w.comment("hand geometry, millimetres and degrees")
            .entry("version", GEOMETRY_VERSION);
        let v = self.palm_root_to_wrist;
        w.entry("palm.wrist.x", v.x)
            .entry("palm.wrist.y", v.y)
            .entry("palm.wrist.z", v.z);
        for f in Finger::ALL {
            let n = f.name();
            let o = self.finger_base_offsets[f.index()];
            let l = self.bone_lengths[f.index()];
            let r = self.base_frame_deg[f.index()];
            w.entry(&format!("{n}.base.x"), o.x)
                .entry(&format!("{n}.base.y"), o.y)
                .entry(&format!("{n}.base.z"), o.z)
                .entry(&format!("{n}.frame_yaw_deg"), r[0])
                .entry(&format!("{n}.frame_pitch_deg"), r[1])
                .entry(&format!("{n}.frame_roll_deg"), r[2])
                .entry(&format!("{n}.proximal"), l[0])
                .entry(&format!("{n}.middle"), l[1])
                .entry(&format!("{n}.distal"), l[2]);
        }
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self, HandModelError> {
        Self::from_kv(&KvDoc::load(path)?)
    }
}

fn geometry_keys() -> Vec<String> {
    let mut keys = vec![
        "version".to_string(),
        "palm.wrist.x".into(),
        "palm.wrist.y".into(),
        "palm.wrist.z".into(),
    ];
    for f in Finger::ALL {
        let n = f.name();
        for suffix in [
            "base.x",
            "base.y",
            "base.z",
            "frame_yaw_deg",
            "frame_pitch_deg",
            "frame_roll_deg",
            "proximal",
            "middle",
            "distal",
        ] {
            keys.push(format!("{n}.{suffix}"));
        }
    }
    keys
}

impl Default for HandGeometry {
    fn default() -> Self {
        let doc = KvDoc::parse(DEFAULT_GEOMETRY).expect("bundled geometry parses");
        Self::from_kv(&doc).expect("bundled geometry is valid")
    }
}

/// Per-DoF `[min, max]` intervals in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLimits {
    ranges: [[[f64; 2]; FINGER_DOFS]; NUM_FINGERS],
}

impl JointLimits {
    pub fn new(ranges: [[[f64; 2]; FINGER_DOFS]; NUM_FINGERS]) -> Result<Self, HandModelError> {
        for (f, dofs) in ranges.iter().enumerate() {
            for (d, [lo, hi]) in dofs.iter().enumerate() {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(HandModelError::Limits(format!(
                        "{}.{}: min {lo} must be below max {hi}",
                        Finger::ALL[f].name(),
                        DOF_NAMES[d]
                    )));
                }
            }
        }
        Ok(Self { ranges })
    }

    pub fn range(&self, finger: Finger, dof: usize) -> [f64; 2] {
        self.ranges[finger.index()][dof]
    }

    /// Bounds for the 20 finger parameters in hypothesis order.
    pub fn flat_bounds(&self) -> Vec<[f64; 2]> {
        self.ranges.iter().flatten().copied().collect()
    }

    pub fn contains(&self, pose: &PoseParams) -> bool {
        self.violation(pose).is_none()
    }

    /// First out-of-range DoF, as (finger, dof, value).
    pub fn violation(&self, pose: &PoseParams) -> Option<(Finger, usize, f64)> {
        for f in Finger::ALL {
            for d in 0..FINGER_DOFS {
                let v = pose.finger_angles[f.index()][d];
                let [lo, hi] = self.ranges[f.index()][d];
                if !(v >= lo && v <= hi) {
                    return Some((f, d, v));
                }
            }
        }
        None
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self, HandModelError> {
        let version = doc.u64("version")?;
        if version != GEOMETRY_VERSION {
            return Err(HandModelError::Version(version));
        }
        let mut ranges = [[[0.0; 2]; FINGER_DOFS]; NUM_FINGERS];
        let mut known = vec!["version".to_string()];
        for f in Finger::ALL {
            for (d, dof) in DOF_NAMES.iter().enumerate() {
                let lo = format!("{}.{dof}.min_deg", f.name());
                let hi = format!("{}.{dof}.max_deg", f.name());
                ranges[f.index()][d] = [doc.f64(&lo)?.to_radians(), doc.f64(&hi)?.to_radians()];
                known.push(lo);
                known.push(hi);
            }
        }
        doc.reject_unknown(|k| known.iter().any(|g| g == k))?;
        Self::new(ranges)
    }

    pub fn to_kv(&self) -> String {
        let mut w = KvWriter::new();
        w.comment("joint limits, degrees")
            .entry("version", GEOMETRY_VERSION);
        for f in Finger::ALL {
            for (d, dof) in DOF_NAMES.iter().enumerate() {
                let [lo, hi] = self.ranges[f.index()][d];
                w.entry(&format!("{}.{dof}.min_deg", f.name()), lo.to_degrees())
                    .entry(&format!("{}.{dof}.max_deg", f.name()), hi.to_degrees());
            }
        }
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self, HandModelError> {
        Self::from_kv(&KvDoc::load(path)?)
    }
}

impl Default for JointLimits {
    fn default() -> Self {
        let doc = KvDoc::parse(DEFAULT_LIMITS).expect("bundled limits parse");
        Self::from_kv(&doc).expect("bundled limits are valid")
    }
}

/// The 27-value pose hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseParams {
    /// Palm root position, mm.
    pub translation: Vector3<f64>,
    /// Orientation as stored; not necessarily unit until normalized.
    pub orientation: Quaternion<f64>,
    /// Per finger: mcp_flexion, mcp_abduction, pip_flexion, dip_flexion (rad).
    pub finger_angles: [[f64; FINGER_DOFS]; NUM_FINGERS],
}

impl PoseParams {
    pub fn new(
        translation: Vector3<f64>,
        orientation: UnitQuaternion<f64>,
        finger_angles: [[f64; FINGER_DOFS]; NUM_FINGERS],
    ) -> Self {
        Self {
            translation,
            orientation: orientation.into_inner(),
            finger_angles,
        }
    }

    /// Fingers at zero angles (projected into `limits`), identity orientation.
    pub fn neutral(translation: Vector3<f64>, limits: &JointLimits) -> Self {
        let pose = Self::new(translation, UnitQuaternion::identity(), [[0.0; 4]; 5]);
        clamp_to_limits(&pose, limits)
    }

    /// Flat layout: tx ty tz qw qx qy qz, then 4 angles per finger
    /// (thumb, index, middle, ring, pinky).
    pub fn to_array(&self) -> [f64; NUM_PARAMS] {
        let mut h = [0.0; NUM_PARAMS];
        h[0] = self.translation.x;
        h[1] = self.translation.y;
        h[2] = self.translation.z;
        h[3] = self.orientation.w;
        h[4] = self.orientation.i;
        h[5] = self.orientation.j;
        h[6] = self.orientation.k;
        for f in Finger::ALL {
            h[f.param_range()].copy_from_slice(&self.finger_angles[f.index()]);
        }
        h
    }

    pub fn from_array(h: &[f64; NUM_PARAMS]) -> Self {
        let mut finger_angles = [[0.0; FINGER_DOFS]; NUM_FINGERS];
        for f in Finger::ALL {
            finger_angles[f.index()].copy_from_slice(&h[f.param_range()]);
        }
        Self {
            translation: Vector3::new(h[0], h[1], h[2]),
            orientation: Quaternion::new(h[3], h[4], h[5], h[6]),
            finger_angles,
        }
    }

    pub fn unit_orientation(&self) -> Result<UnitQuaternion<f64>, HandModelError> {
        let n = self.orientation.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(HandModelError::DegenerateOrientation);
        }
        Ok(UnitQuaternion::new_unchecked(self.orientation / n))
    }

    pub fn param_names() -> [String; NUM_PARAMS] {
        let mut names: [String; NUM_PARAMS] = Default::default();
        for (i, n) in ["tx", "ty", "tz", "qw", "qx", "qy", "qz"].iter().enumerate() {
            names[i] = n.to_string();
        }
        for f in Finger::ALL {
            for (d, dof) in DOF_NAMES.iter().enumerate() {
                names[f.param_range().start + d] = format!("{}_{dof}", f.name());
            }
        }
        names
    }
}

/// 21 keypoints: palm root, then MCP, PIP, DIP, TIP per finger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointPositions(pub [Point3<f64>; NUM_JOINTS]);

impl JointPositions {
    pub fn get(&self, j: usize) -> Result<Point3<f64>, HandModelError> {
        self.0.get(j).copied().ok_or(HandModelError::JointIndex(j))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Point3<f64>> {
        self.0.iter()
    }

    pub fn translated(&self, t: &Vector3<f64>) -> Self {
        Self(self.0.map(|p| p + t))
    }
}

/// Position of joint `j`.
pub fn joint_position(joints: &JointPositions, j: usize) -> Result<Point3<f64>, HandModelError> {
    joints.get(j)
}

pub fn forward_kinematics(
    geom: &HandGeometry,
    pose: &PoseParams,
) -> Result<JointPositions, HandModelError> {
    let q = pose.unit_orientation()?;
    let rot = q.to_rotation_matrix();
    let rot = rot.matrix();
    let origin = Point3::from(pose.translation);
    let mut out = [origin; NUM_JOINTS];
    for f in Finger::ALL {
        let fi = f.index();
        let frame = rot * geom.base_frames[fi];
        let [flex, abd, pip, dip] = pose.finger_angles[fi];
        let (sa, ca) = abd.sin_cos();
        let c0 = frame.column(0).into_owned();
        let c1 = frame.column(1).into_owned();
        let mut normal = frame.column(2).into_owned();
        let mut forward = -sa * c0 + ca * c1;
        let base = origin + rot * geom.finger_base_offsets[fi];
        let lengths = geom.bone_lengths[fi];
        let [mcp_i, pip_i, dip_i, tip_i] = f.joints();
        out[mcp_i] = base;
        let mut at = base;
        for (seg, (angle, idx)) in [(flex, pip_i), (pip, dip_i), (dip, tip_i)]
            .into_iter()
            .enumerate()
        {
            let (s, c) = angle.sin_cos();
            let fwd = c * forward + s * normal;
            normal = -s * forward + c * normal;
            forward = fwd;
            at += lengths[seg] * forward;
            out[idx] = at;
        }
    }
    Ok(JointPositions(out))
}

/// Clamps every finger DoF into its interval and renormalizes the quaternion.
/// A zero quaternion becomes the identity.
pub fn clamp_to_limits(pose: &PoseParams, limits: &JointLimits) -> PoseParams {
    let mut out = *pose;
    for f in Finger::ALL {
        for d in 0..FINGER_DOFS {
            let [lo, hi] = limits.ranges[f.index()][d];
            let v = out.finger_angles[f.index()][d];
            out.finger_angles[f.index()][d] = if v.is_nan() { lo } else { v.clamp(lo, hi) };
        }
    }
    // already-unit quaternions are kept bit-for-bit so clamping is idempotent
    out.orientation = match pose.unit_orientation() {
        Ok(_) if (pose.orientation.norm() - 1.0).abs() < 1e-12 => pose.orientation,
        Ok(q) => q.into_inner(),
        Err(_) => Quaternion::identity(),
    };
    out
}

/// Axis-aligned translation range for random poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Workspace {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Workspace {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        assert!(
            (0..3).all(|i| min[i] <= max[i]),
            "workspace bounds must be non-empty"
        );
        Self { min, max }
    }
}

/// Uniformly distributed unit quaternion.
pub fn random_unit_quaternion<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let tau = std::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = Quaternion::new(
        b * (tau * u3).cos(),
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
    );
    UnitQuaternion::new_normalize(q)
}

pub fn random_pose<R: Rng + ?Sized>(
    rng: &mut R,
    limits: &JointLimits,
    workspace: &Workspace,
) -> PoseParams {
    let translation = Vector3::from_fn(|i, _| {
        let (lo, hi) = (workspace.min[i], workspace.max[i]);
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..=hi)
        }
    });
    let orientation = random_unit_quaternion(rng);
    let mut angles = [[0.0; FINGER_DOFS]; NUM_FINGERS];
    for f in Finger::ALL {
        for d in 0..FINGER_DOFS {
            let [lo, hi] = limits.range(f, d);
            angles[f.index()][d] = rng.gen_range(lo..=hi);
        }
    }
    PoseParams::new(translation, orientation, angles)
}

pub fn write_pose_csv<W: std::io::Write>(
    out: W,
    poses: &[PoseParams],
) -> Result<(), HandModelError> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| HandModelError::Csv(e.to_string());
    w.write_record(PoseParams::param_names()).map_err(csv_err)?;
    for p in poses {
        w.write_record(p.to_array().iter().map(|v| format!("{v:?}")))
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| HandModelError::Csv(e.to_string()))
}

/// Reads a pose trace. Errors carry the 1-based line number.
pub fn read_pose_csv<R: std::io::Read>(input: R) -> Result<Vec<PoseParams>, HandModelError> {
    let mut r = csv::Reader::from_reader(input);
    let expected = PoseParams::param_names();
    let headers = r
        .headers()
        .map_err(|e| HandModelError::Csv(format!("line 1: {e}")))?
        .clone();
    if headers.len() != NUM_PARAMS || headers.iter().zip(expected.iter()).any(|(a, b)| a != b) {
        return Err(HandModelError::Csv(
            "line 1: header does not match the 27-column pose layout".into(),
        ));
    }
    let mut poses = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| HandModelError::Csv(format!("line {line}: {e}")))?;
        if rec.len() != NUM_PARAMS {
            return Err(HandModelError::Csv(format!(
                "line {line}: expected {NUM_PARAMS} columns, got {}",
                rec.len()
            )));
        }
        let mut h = [0.0; NUM_PARAMS];
        for (slot, field) in h.iter_mut().zip(rec.iter()) {
            *slot = field.trim().parse().map_err(|_| {
                HandModelError::Csv(format!("line {line}: bad number {field:?}"))
            })?;
        }
        poses.push(PoseParams::from_array(&h));
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rest(geom: &HandGeometry) -> JointPositions {
        let pose = PoseParams::new(Vector3::zeros(), UnitQuaternion::identity(), [[0.0; 4]; 5]);
        forward_kinematics(geom, &pose).unwrap()
    }

    #[test]
    fn rest_pose_fingertips_lie_along_forward_axis() {
        let geom = HandGeometry::default();
        let joints = rest(&geom);
        assert_eq!(joints.get(PALM_ROOT).unwrap(), Point3::origin());
        for f in [Finger::Index, Finger::Middle, Finger::Ring, Finger::Pinky] {
            let sum: f64 = geom.bone_lengths(f).iter().sum();
            let expect = geom.finger_base_offset(f) + Vector3::y() * sum;
            let tip = joints.get(joint_index(f, FingerJoint::Tip)).unwrap();
            assert!((tip.coords - expect).norm() < 1e-12, "{f:?}");
        }
        // the thumb extends along its own rotated base frame
        let f = Finger::Thumb;
        let sum: f64 = geom.bone_lengths(f).iter().sum();
        let expect = geom.finger_base_offset(f) + geom.base_frame(f).column(1) * sum;
        let tip = joints.get(joint_index(f, FingerJoint::Tip)).unwrap();
        assert!((tip.coords - expect).norm() < 1e-12);
    }

    #[test]
    fn joint_position_bounds() {
        let geom = HandGeometry::default();
        let joints = rest(&geom);
        assert_eq!(joint_position(&joints, 0).unwrap(), Point3::origin());
        let idx_tip = joint_index(Finger::Index, FingerJoint::Tip);
        assert_eq!(joint_position(&joints, idx_tip).unwrap(), joints.0[idx_tip]);
        assert!(matches!(
            joint_position(&joints, 21),
            Err(HandModelError::JointIndex(21))
        ));
    }

    #[test]
    fn translation_shifts_every_joint() {
        let geom = HandGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ws = Workspace::new(Vector3::repeat(-100.0), Vector3::repeat(100.0));
        let pose = random_pose(&mut rng, &JointLimits::default(), &ws);
        let t = Vector3::new(12.5, -40.0, 300.25);
        let mut moved = pose;
        moved.translation += t;
        let a = forward_kinematics(&geom, &pose).unwrap();
        let b = forward_kinematics(&geom, &moved).unwrap();
        for (p, q) in a.iter().zip(b.iter()) {
            assert!((q - (p + t)).norm() < 1e-9);
        }
    }

    #[test]
    fn zero_quaternion_is_degenerate() {
        let mut pose = PoseParams::neutral(Vector3::zeros(), &JointLimits::default());
        pose.orientation = Quaternion::new(0.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            forward_kinematics(&HandGeometry::default(), &pose),
            Err(HandModelError::DegenerateOrientation)
        ));
    }

    #[test]
    fn clamp_examples() {
        let limits = JointLimits::default();
        let valid = PoseParams::neutral(Vector3::new(1.0, 2.0, 3.0), &limits);
        assert_eq!(clamp_to_limits(&valid, &limits), valid);

        let mut ranges = [[[-1.0, 1.0]; 4]; 5];
        ranges[1][2] = [0.0, 1.75];
        let custom = JointLimits::new(ranges).unwrap();
        let mut pose = PoseParams::neutral(Vector3::zeros(), &custom);
        pose.finger_angles[1][2] = 4.0;
        pose.orientation = Quaternion::new(2.0, 0.0, 0.0, 0.0);
        let clamped = clamp_to_limits(&pose, &custom);
        assert_eq!(clamped.finger_angles[1][2], 1.75);
        assert_eq!(clamped.orientation, Quaternion::new(1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn limits_require_min_below_max() {
        let mut ranges = [[[-1.0, 1.0]; 4]; 5];
        ranges[2][3] = [0.5, 0.5];
        assert!(matches!(
            JointLimits::new(ranges),
            Err(HandModelError::Limits(_))
        ));
    }

    #[test]
    fn geometry_rejects_non_positive_bones() {
        let g = HandGeometry::default();
        let mut lengths = g.bone_lengths;
        lengths[3][1] = 0.0;
        assert!(HandGeometry::new(
            g.finger_base_offsets,
            lengths,
            g.base_frame_deg,
            g.palm_root_to_wrist
        )
        .is_err());
    }

    #[test]
    fn random_pose_is_repeatable_and_valid() {
        let limits = JointLimits::default();
        let ws = Workspace::new(Vector3::new(-50.0, -50.0, 450.0), Vector3::new(50.0, 50.0, 700.0));
        let a = random_pose(&mut ChaCha8Rng::seed_from_u64(11), &limits, &ws);
        let b = random_pose(&mut ChaCha8Rng::seed_from_u64(11), &limits, &ws);
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10_000 {
            let p = random_pose(&mut rng, &limits, &ws);
            assert!(limits.contains(&p));
            assert!((p.orientation.norm() - 1.0).abs() < 1e-6);
            assert!((0..3).all(|i| p.translation[i] >= ws.min[i] && p.translation[i] <= ws.max[i]));
        }
    }

    #[test]
    fn geometry_and_limits_files_round_trip() {
        let g = HandGeometry::default();
        let back = HandGeometry::from_kv(&KvDoc::parse(&g.to_kv()).unwrap()).unwrap();
        assert_eq!(g, back);
        let l = JointLimits::default();
        let back = JointLimits::from_kv(&KvDoc::parse(&l.to_kv()).unwrap()).unwrap();
        for f in Finger::ALL {
            for d in 0..4 {
                let (a, b) = (l.range(f, d), back.range(f, d));
                assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn geometry_file_rejects_unknown_keys_and_versions() {
        let text = HandGeometry::default().to_kv();
        let extra = format!("{text}index.extra = 3\n");
        assert!(matches!(
            HandGeometry::from_kv(&KvDoc::parse(&extra).unwrap()),
            Err(HandModelError::Kv(KvError::Unknown(_)))
        ));
        let v2 = text.replace("version = 1", "version = 2");
        assert!(matches!(
            HandGeometry::from_kv(&KvDoc::parse(&v2).unwrap()),
            Err(HandModelError::Version(2))
        ));
    }

    #[test]
    fn pose_csv_round_trip_and_errors() {
        let limits = JointLimits::default();
        let ws = Workspace::new(Vector3::repeat(-10.0), Vector3::repeat(10.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let poses: Vec<_> = (0..4).map(|_| random_pose(&mut rng, &limits, &ws)).collect();
        let mut buf = Vec::new();
        write_pose_csv(&mut buf, &poses).unwrap();
        assert_eq!(read_pose_csv(buf.as_slice()).unwrap(), poses);

        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[3] = "1,2,3";
        let broken = lines.join("\n");
        let err = read_pose_csv(broken.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn joint_names_cover_all_indices() {
        assert_eq!(joint_name(0), "palm");
        assert_eq!(joint_name(1), "thumb_mcp");
        assert_eq!(joint_name(20), "pinky_tip");
        assert_eq!(palm_joints(), [0, 1, 5, 9, 13, 17]);
        assert_eq!(tip_joints(), [4, 8, 12, 16, 20]);
    }
}
