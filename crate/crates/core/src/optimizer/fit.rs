use std::io::{Read, Write};

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::objective::{joint_term, Objective};
use super::pso::{pso_optimize, Hypothesis, PsoConfig, SearchSpace, QUAT_DIMS};
use super::ProposalSet;
use crate::hand_model::{
    clamp_to_limits, forward_kinematics, palm_joints, Finger, HandGeometry, HandModelError,
    JointLimits, JointPositions, PoseParams, NUM_FINGERS, NUM_JOINTS, NUM_PARAMS,
};
use crate::seeding::stream_rng;

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("palm is under-constrained: {0} usable palm/MCP proposals, need 3 non-collinear")]
    UnderConstrained(usize),
    #[error("proposal set is empty")]
    NoProposals,
    #[error("unknown fitter {0:?}")]
    UnknownFitter(String),
    #[error(transparent)]
    Model(#[from] HandModelError),
}

/// Particle and generation counts for one swarm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub particles: usize,
    pub generations: usize,
}

impl Budget {
    pub const fn square(n: usize) -> Self {
        Self {
            particles: n,
            generations: n,
        }
    }

    pub fn evaluations(&self) -> usize {
        self.particles.max(1) * self.generations.max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    /// Clamping distance, mm.
    pub d_max: f64,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub palm: Budget,
    /// Per finger stage.
    pub finger: Budget,
    /// All 27 dimensions at once.
    pub joint: Budget,
    /// Translation search extends this far beyond the palm proposals, mm.
    pub translation_margin: f64,
}

impl Default for FitSettings {
    /// 26^2 + 5 * 23^2 = 3321 evaluations stepwise; 58 * 57 = 3306 joint.
    fn default() -> Self {
        Self {
            d_max: 100.0,
            inertia: 0.7298,
            cognitive: 1.49618,
            social: 1.49618,
            palm: Budget::square(26),
            finger: Budget::square(23),
            joint: Budget {
                particles: 58,
                generations: 57,
            },
            translation_margin: 100.0,
        }
    }
}

impl FitSettings {
    /// 64^2 + 5 * 29^2 = 8301 evaluations stepwise; 91^2 = 8281 joint.
    pub fn large_budget() -> Self {
        Self {
            palm: Budget::square(64),
            finger: Budget::square(29),
            joint: Budget::square(91),
            ..Self::default()
        }
    }

    pub fn stepwise_evaluations(&self) -> usize {
        self.palm.evaluations() + NUM_FINGERS * self.finger.evaluations()
    }

    fn pso(&self, b: Budget) -> PsoConfig {
        PsoConfig {
            particles: b.particles,
            generations: b.generations,
            inertia: self.inertia,
            cognitive: self.cognitive,
            social: self.social,
        }
    }
}

/// Everything a fitter needs besides the proposals.
#[derive(Debug, Clone)]
pub struct FitContext {
    pub geom: HandGeometry,
    pub limits: JointLimits,
    pub settings: FitSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutput {
    /// `None` when no model was fitted.
    pub pose: Option<PoseParams>,
    pub joints: JointPositions,
    /// Joints that have an estimate; a model fit estimates all of them.
    pub present: [bool; NUM_JOINTS],
    pub score: f64,
    pub evaluations: usize,
    /// Fingers left at neutral because they had no proposals.
    pub missing_fingers: [bool; NUM_FINGERS],
}

impl FitOutput {
    /// No estimate for any joint.
    pub fn empty() -> Self {
        Self {
            pose: None,
            joints: JointPositions([Point3::origin(); NUM_JOINTS]),
            present: [false; NUM_JOINTS],
            score: 0.0,
            evaluations: 0,
            missing_fingers: [true; NUM_FINGERS],
        }
    }

    pub fn estimated(&self) -> EstimatedJoints {
        std::array::from_fn(|j| self.present[j].then_some(self.joints.0[j]))
    }

    fn from_pose(
        pose: PoseParams,
        ctx: &FitContext,
        proposals: &ProposalSet,
        evaluations: usize,
        missing_fingers: [bool; NUM_FINGERS],
    ) -> Result<Self, FitError> {
        let pose = clamp_to_limits(&pose, &ctx.limits);
        let joints = forward_kinematics(&ctx.geom, &pose)?;
        let score = Objective::new(proposals, &ctx.geom, ctx.settings.d_max).score(&pose.to_array());
        Ok(Self {
            pose: Some(pose),
            joints,
            present: [true; NUM_JOINTS],
            score,
            evaluations,
            missing_fingers,
        })
    }
}

/// Top proposals of the palm root and the five MCPs.
fn palm_anchors(proposals: &ProposalSet) -> Vec<(usize, Point3<f64>)> {
    palm_joints()
        .into_iter()
        .filter_map(|j| proposals.top(j).map(|p| (j, p.position)))
        .collect()
}

fn non_collinear(points: &[Point3<f64>]) -> bool {
    for a in 0..points.len() {
        for b in a + 1..points.len() {
            for c in b + 1..points.len() {
                let area = (points[b] - points[a]).cross(&(points[c] - points[a])).norm() / 2.0;
                if area > 1.0 {
                    return true;
                }
            }
        }
    }
    false
}

/// Rigid transform taking the model's palm points onto the anchors
/// (least squares, proper rotation).
fn kabsch_seed(
    anchors: &[(usize, Point3<f64>)],
    geom: &HandGeometry,
    limits: &JointLimits,
) -> Result<Hypothesis, FitError> {
    let rest = forward_kinematics(geom, &PoseParams::neutral(Vector3::zeros(), limits))?;
    let n = anchors.len() as f64;
    let model: Vec<Point3<f64>> = anchors.iter().map(|(j, _)| rest.0[*j]).collect();
    let mc = model.iter().fold(Vector3::zeros(), |s, p| s + p.coords) / n;
    let tc = anchors.iter().fold(Vector3::zeros(), |s, (_, p)| s + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (m, (_, t)) in model.iter().zip(anchors) {
        h += (m.coords - mc) * (t.coords - tc).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v_t.transpose() * d * u.transpose();
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = tc - q * mc;
    let pose = PoseParams::new(t, q, PoseParams::neutral(Vector3::zeros(), limits).finger_angles);
    Ok(pose.to_array())
}

/// Seeds shared by both model fitters: neutral hand with the palm root on
/// its top proposal, and the rigid palm alignment when it is defined.
fn palm_seeds(proposals: &ProposalSet, ctx: &FitContext) -> Result<Vec<Hypothesis>, FitError> {
    let anchors = palm_anchors(proposals);
    let mut seeds = Vec::new();
    if let Some(root) = proposals.top(0) {
        seeds.push(PoseParams::neutral(root.position.coords, &ctx.limits).to_array());
    }
    let pts: Vec<Point3<f64>> = anchors.iter().map(|a| a.1).collect();
    if anchors.len() >= 3 && non_collinear(&pts) {
        seeds.push(kabsch_seed(&anchors, &ctx.geom, &ctx.limits)?);
    }
    if seeds.is_empty() {
        let any = proposals.iter().next().ok_or(FitError::NoProposals)?;
        seeds.push(PoseParams::neutral(any.position.coords, &ctx.limits).to_array());
    }
    Ok(seeds)
}

/// Translation box around the palm proposals (all proposals if the palm
/// has none), quaternion in [-1, 1], finger angles within limits.
fn full_space(proposals: &ProposalSet, ctx: &FitContext) -> Result<SearchSpace, FitError> {
    let palm: Vec<Point3<f64>> = palm_joints()
        .into_iter()
        .flat_map(|j| proposals.joint(j).iter().map(|p| p.position))
        .collect();
    let pts: Vec<Point3<f64>> = if palm.is_empty() {
        proposals.iter().map(|p| p.position).collect()
    } else {
        palm
    };
    if pts.is_empty() {
        return Err(FitError::NoProposals);
    }
    let mut lower = [0.0; NUM_PARAMS];
    let mut upper = [0.0; NUM_PARAMS];
    let m = ctx.settings.translation_margin;
    for d in 0..3 {
        lower[d] = pts.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min) - m;
        upper[d] = pts.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max) + m;
    }
    for d in QUAT_DIMS {
        lower[d] = -1.0;
        upper[d] = 1.0;
    }
    for (i, [lo, hi]) in ctx.limits.flat_bounds().into_iter().enumerate() {
        lower[7 + i] = lo;
        upper[7 + i] = hi;
    }
    Ok(SearchSpace {
        lower,
        upper,
        active: (0..NUM_PARAMS).collect(),
    })
}

/// Six sub-problems: the 7 global dimensions against the palm root and
/// MCP proposals, then each finger's 4 angles against that finger's
/// proposals with everything else frozen.
pub fn stepwise_fit(
    proposals: &ProposalSet,
    ctx: &FitContext,
    rng: &mut ChaCha8Rng,
) -> Result<FitOutput, FitError> {
    let anchors = palm_anchors(proposals);
    let pts: Vec<Point3<f64>> = anchors.iter().map(|a| a.1).collect();
    if anchors.len() < 3 || !non_collinear(&pts) {
        return Err(FitError::UnderConstrained(anchors.len()));
    }
    let s = &ctx.settings;
    let mut space = full_space(proposals, ctx)?;
    let seeds = palm_seeds(proposals, ctx)?;
    let mut evaluations = 0;

    space.active = (0..7).collect();
    let palm = Objective::subset(proposals, &ctx.geom, s.d_max, palm_joints().to_vec());
    let r = pso_optimize(|h| palm.score(h), &space, &seeds[0], &s.pso(s.palm), &seeds, rng);
    evaluations += r.evaluations;
    let mut h = r.best;

    let mut missing = [false; NUM_FINGERS];
    for f in Finger::ALL {
        let joints = f.joints();
        if joints.iter().all(|&j| !proposals.is_present(j)) {
            missing[f.index()] = true;
            continue;
        }
        space.active = f.param_range().collect();
        let obj = Objective::subset(proposals, &ctx.geom, s.d_max, joints.to_vec());
        let r = pso_optimize(|x| obj.score(x), &space, &h, &s.pso(s.finger), &[h], rng);
        evaluations += r.evaluations;
        h = r.best;
    }
    FitOutput::from_pose(PoseParams::from_array(&h), ctx, proposals, evaluations, missing)
}

/// One swarm over all 27 dimensions with the same objective and seeds.
pub fn joint_fit(
    proposals: &ProposalSet,
    ctx: &FitContext,
    rng: &mut ChaCha8Rng,
) -> Result<FitOutput, FitError> {
    let s = &ctx.settings;
    let space = full_space(proposals, ctx)?;
    let seeds = palm_seeds(proposals, ctx)?;
    let obj = Objective::new(proposals, &ctx.geom, s.d_max);
    let r = pso_optimize(|h| obj.score(h), &space, &seeds[0], &s.pso(s.joint), &seeds, rng);
    let missing = Finger::ALL.map(|f| f.joints().iter().all(|&j| !proposals.is_present(j)));
    FitOutput::from_pose(PoseParams::from_array(&r.best), ctx, proposals, r.evaluations, missing)
}

/// The top proposal of every joint, no model involved.
pub fn regression_only(proposals: &ProposalSet, ctx: &FitContext) -> Result<FitOutput, FitError> {
    let fallback = proposals.iter().next().ok_or(FitError::NoProposals)?.position;
    let mut joints = [fallback; NUM_JOINTS];
    let mut present = [false; NUM_JOINTS];
    let mut score = 0.0;
    for (j, slot) in joints.iter_mut().enumerate() {
        if let Some(p) = proposals.top(j) {
            *slot = p.position;
            present[j] = true;
            score += joint_term(proposals, j, &p.position, ctx.settings.d_max);
        }
    }
    let missing = Finger::ALL.map(|f| f.joints().iter().all(|&j| !present[j]));
    Ok(FitOutput {
        pose: None,
        joints: JointPositions(joints),
        present,
        score,
        evaluations: 0,
        missing_fingers: missing,
    })
}

/// A pose-estimation strategy selectable by name.
pub trait PoseFitter: Send + Sync {
    fn name(&self) -> &'static str;
    fn fit(
        &self,
        proposals: &ProposalSet,
        ctx: &FitContext,
        rng: &mut ChaCha8Rng,
    ) -> Result<FitOutput, FitError>;
}

pub struct Stepwise;
pub struct Joint;
pub struct RegressionOnly;

impl PoseFitter for Stepwise {
    fn name(&self) -> &'static str {
        "stepwise"
    }

    fn fit(&self, p: &ProposalSet, ctx: &FitContext, rng: &mut ChaCha8Rng) -> Result<FitOutput, FitError> {
        stepwise_fit(p, ctx, rng)
    }
}

impl PoseFitter for Joint {
    fn name(&self) -> &'static str {
        "joint"
    }

    fn fit(&self, p: &ProposalSet, ctx: &FitContext, rng: &mut ChaCha8Rng) -> Result<FitOutput, FitError> {
        joint_fit(p, ctx, rng)
    }
}

impl PoseFitter for RegressionOnly {
    fn name(&self) -> &'static str {
        "regression-only"
    }

    fn fit(&self, p: &ProposalSet, ctx: &FitContext, _: &mut ChaCha8Rng) -> Result<FitOutput, FitError> {
        regression_only(p, ctx)
    }
}

pub struct FitterRegistry {
    fitters: Vec<Box<dyn PoseFitter>>,
}

impl Default for FitterRegistry {
    fn default() -> Self {
        Self {
            fitters: vec![Box::new(Stepwise), Box::new(Joint), Box::new(RegressionOnly)],
        }
    }
}

impl FitterRegistry {
    pub fn register(&mut self, fitter: Box<dyn PoseFitter>) {
        self.fitters.retain(|f| f.name() != fitter.name());
        self.fitters.push(fitter);
    }

    pub fn get(&self, name: &str) -> Result<&dyn PoseFitter, FitError> {
        self.fitters
            .iter()
            .find(|f| f.name() == name)
            .map(|f| f.as_ref())
            .ok_or_else(|| FitError::UnknownFitter(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.fitters.iter().map(|f| f.name()).collect()
    }
}

/// Fits every frame in parallel; frame `i` draws from stream `i` of `seed`.
pub fn fit_frames(
    fitter: &dyn PoseFitter,
    frames: &[ProposalSet],
    ctx: &FitContext,
    seed: u64,
) -> Vec<Result<FitOutput, FitError>> {
    frames
        .par_iter()
        .enumerate()
        .map(|(i, p)| fitter.fit(p, ctx, &mut stream_rng(seed, i as u64)))
        .collect()
}

/// Like [`fit_frames`], but a frame the fitter rejects falls back to the
/// top proposals, and a frame without any proposal to an empty estimate.
pub fn fit_fallback(
    fitter: &dyn PoseFitter,
    frames: &[ProposalSet],
    ctx: &FitContext,
    seed: u64,
) -> Vec<FitOutput> {
    fit_frames(fitter, frames, ctx, seed)
        .into_iter()
        .zip(frames)
        .enumerate()
        .map(|(i, (r, p))| match r {
            Ok(fit) => fit,
            Err(e) => {
                log::debug!("frame {i}: {} failed ({e}), using top proposals", fitter.name());
                regression_only(p, ctx).unwrap_or_else(|_| FitOutput::empty())
            }
        })
        .collect()
}

/// Pose trace: frame, 27 parameters (empty without a model), score,
/// evaluations, fingers left neutral (`;`-separated names).
pub fn write_fit_csv<W: Write>(out: W, fits: &[FitOutput]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["frame".to_string()];
    header.extend(PoseParams::param_names());
    header.extend(["score", "evaluations", "neutral_fingers"].map(String::from));
    w.write_record(&header)?;
    for (i, fit) in fits.iter().enumerate() {
        let mut row = vec![i.to_string()];
        match &fit.pose {
            Some(p) => row.extend(p.to_array().iter().map(|v| format!("{v:?}"))),
            None => row.extend(std::iter::repeat(String::new()).take(NUM_PARAMS)),
        }
        row.push(format!("{:?}", fit.score));
        row.push(fit.evaluations.to_string());
        let neutral: Vec<&str> = Finger::ALL
            .iter()
            .filter(|f| fit.missing_fingers[f.index()])
            .map(|f| f.name())
            .collect();
        row.push(neutral.join(";"));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Estimated joints: frame, joint, x, y, z. Joints without an estimate
/// have no row.
pub fn write_joints_csv<W: Write>(out: W, fits: &[FitOutput]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frame", "joint", "x", "y", "z"])?;
    for (i, fit) in fits.iter().enumerate() {
        for (j, p) in fit.joints.iter().enumerate() {
            if fit.present[j] {
                w.write_record([
                    i.to_string(),
                    j.to_string(),
                    format!("{:?}", p.x),
                    format!("{:?}", p.y),
                    format!("{:?}", p.z),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Joint estimates per frame; `None` where a joint has no row.
pub type EstimatedJoints = [Option<Point3<f64>>; NUM_JOINTS];

pub fn read_joints_csv<R: Read>(input: R) -> Result<Vec<EstimatedJoints>, super::ProposalError> {
    use super::ProposalError::Csv;
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| Csv {
        line: 1,
        msg: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != ["frame", "joint", "x", "y", "z"] {
        return Err(Csv {
            line: 1,
            msg: "expected header frame,joint,x,y,z".into(),
        });
    }
    let mut out: Vec<EstimatedJoints> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let err = |msg: String| Csv { line, msg };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() != 5 {
            return Err(err(format!("expected 5 columns, got {}", rec.len())));
        }
        let frame: usize = rec[0].parse().map_err(|_| err(format!("bad frame {:?}", &rec[0])))?;
        let joint: usize = rec[1].parse().map_err(|_| err(format!("bad joint {:?}", &rec[1])))?;
        if joint >= NUM_JOINTS {
            return Err(err(format!("joint {joint} out of range")));
        }
        let mut v = [0.0; 3];
        for (slot, field) in v.iter_mut().zip(rec.iter().skip(2)) {
            *slot = field.parse().map_err(|_| err(format!("bad number {field:?}")))?;
        }
        if out.len() <= frame {
            out.resize(frame + 1, [None; NUM_JOINTS]);
        }
        out[frame][joint] = Some(Point3::new(v[0], v[1], v[2]));
    }
    Ok(out)
}
