use nalgebra::Point3;

use super::ProposalSet;
use crate::hand_model::{forward_kinematics, HandGeometry, PoseParams, NUM_JOINTS, NUM_PARAMS};

/// `min(1, |p - q| / d_max)`.
pub fn clamped_distance(p: &Point3<f64>, q: &Point3<f64>, d_max: f64) -> f64 {
    debug_assert!(d_max > 0.0);
    ((p - q).norm() / d_max).min(1.0)
}

/// Best weighted agreement of one joint position with that joint's
/// proposals, `max_r w_r (1 - d_r^2)`. Zero when the joint has no proposals.
pub fn joint_term(proposals: &ProposalSet, j: usize, at: &Point3<f64>, d_max: f64) -> f64 {
    let mut best = 0.0;
    for p in proposals.joint(j) {
        let d = clamped_distance(&p.position, at, d_max);
        let t = p.confidence * (1.0 - d * d);
        if t > best {
            best = t;
        }
    }
    best
}

/// Agreement of hypothesis `h` with the proposal set, summed over all
/// joints. A hypothesis whose quaternion cannot be normalized scores
/// negative infinity.
pub fn objective(proposals: &ProposalSet, h: &[f64; NUM_PARAMS], geom: &HandGeometry, d_max: f64) -> f64 {
    Objective::new(proposals, geom, d_max).score(h)
}

/// The objective restricted to a subset of joints.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    proposals: &'a ProposalSet,
    geom: &'a HandGeometry,
    d_max: f64,
    joints: Vec<usize>,
}

impl<'a> Objective<'a> {
    pub fn new(proposals: &'a ProposalSet, geom: &'a HandGeometry, d_max: f64) -> Self {
        Self::subset(proposals, geom, d_max, (0..NUM_JOINTS).collect())
    }

    pub fn subset(
        proposals: &'a ProposalSet,
        geom: &'a HandGeometry,
        d_max: f64,
        joints: Vec<usize>,
    ) -> Self {
        assert!(d_max > 0.0, "d_max must be positive");
        Self {
            proposals,
            geom,
            d_max,
            joints,
        }
    }

    pub fn joints(&self) -> &[usize] {
        &self.joints
    }

    pub fn score(&self, h: &[f64; NUM_PARAMS]) -> f64 {
        let Ok(joints) = forward_kinematics(self.geom, &PoseParams::from_array(h)) else {
            return f64::NEG_INFINITY;
        };
        self.joints
            .iter()
            .map(|&j| joint_term(self.proposals, j, &joints.0[j], self.d_max))
            .sum()
    }
}
