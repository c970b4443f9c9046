use nalgebra::Point3;
use rayon::prelude::*;

use super::mean_shift::{mean_shift, MeanShiftParams};
use super::{Forest, ForestError};
use crate::depth_synth::{foreground_mask, DepthImage};
use crate::hand_model::NUM_JOINTS;
use crate::optimizer::ProposalSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    /// Pixel grid step for test patches.
    pub stride: u32,
    /// Strongest votes per joint passed to mean-shift.
    pub top_n: usize,
    /// Final proposals per joint.
    pub k: usize,
    pub mean_shift: MeanShiftParams,
    /// Multiply vote weights by the squared patch depth.
    pub depth_weighting: bool,
    /// Divide a mode's support by its leaf's sample count, so a vote's
    /// weight is the fraction of the leaf agreeing with it.
    pub leaf_fraction: bool,
    /// Leaf modes with longer offsets do not vote, mm.
    pub max_offset: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            stride: 2,
            top_n: 200,
            k: 3,
            mean_shift: MeanShiftParams::new(15.0, 50),
            depth_weighting: true,
            leaf_fraction: true,
            max_offset: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vote {
    pub position: Point3<f64>,
    pub weight: f64,
}

/// Absolute-position votes per joint, in patch-then-tree order.
#[derive(Debug, Clone, PartialEq)]
pub struct Votes {
    pub joints: Vec<Vec<Vote>>,
}

/// Passes every foreground patch on the stride grid through every tree and
/// collects the leaf offset modes as absolute votes.
pub fn collect_votes(forest: &Forest, img: &DepthImage, cfg: &InferenceConfig) -> Result<Votes, ForestError> {
    let stride = cfg.stride.max(1);
    let max2 = cfg.max_offset * cfg.max_offset;
    let pixels: Vec<(u32, u32)> = foreground_mask(img)
        .into_iter()
        .filter(|(x, y)| x % stride == 0 && y % stride == 0)
        .collect();
    if pixels.is_empty() {
        return Err(ForestError::EmptyForeground);
    }
    let bg = forest.config.background_depth;
    let per_patch: Vec<Vec<Vec<Vote>>> = pixels
        .par_iter()
        .map(|&(x, y)| {
            let depth = img.get(x, y) as f64;
            let center = img.intrinsics.back_project(x as f64, y as f64, depth);
            let scale = if cfg.depth_weighting { depth * depth } else { 1.0 };
            let mut out: Vec<Vec<Vote>> = vec![Vec::new(); NUM_JOINTS];
            for tree in &forest.trees {
                let leaf = tree.leaf(img, x, y, depth, bg);
                let norm = if cfg.leaf_fraction {
                    1.0 / leaf.sample_count.max(1) as f64
                } else {
                    1.0
                };
                for (j, modes) in leaf.joints.iter().enumerate() {
                    for m in modes {
                        let offset = m.offset();
                        if offset.norm_squared() > max2 {
                            continue;
                        }
                        out[j].push(Vote {
                            position: center + offset,
                            weight: m.weight as f64 * norm * scale,
                        });
                    }
                }
            }
            out
        })
        .collect();
    let mut joints: Vec<Vec<Vote>> = vec![Vec::new(); NUM_JOINTS];
    for patch in per_patch {
        for (j, v) in patch.into_iter().enumerate() {
            joints[j].extend(v);
        }
    }
    Ok(Votes { joints })
}

/// Keeps the `top_n` heaviest votes per joint (earlier votes win ties),
/// clusters them with mean-shift and returns the `k` best-supported modes
/// with confidences normalized per joint. Joints without votes are absent.
pub fn proposals_from_votes(
    votes: &Votes,
    top_n: usize,
    k: usize,
    params: &MeanShiftParams,
) -> ProposalSet {
    let mut set = ProposalSet::new();
    for (j, joint_votes) in votes.joints.iter().enumerate() {
        let mut order: Vec<usize> = (0..joint_votes.len())
            .filter(|&i| joint_votes[i].weight > 0.0)
            .collect();
        order.sort_by(|&a, &b| joint_votes[b].weight.total_cmp(&joint_votes[a].weight));
        order.truncate(top_n);
        if order.is_empty() {
            continue;
        }
        let pts: Vec<Point3<f64>> = order.iter().map(|&i| joint_votes[i].position).collect();
        let w: Vec<f64> = order.iter().map(|&i| joint_votes[i].weight).collect();
        let modes: Vec<(Point3<f64>, f64)> = mean_shift(&pts, &w, params)
            .into_iter()
            .take(k)
            .map(|m| (m.position, m.support))
            .collect();
        set.set_joint(j, &modes)
            .expect("mean-shift supports are positive and finite");
    }
    set
}

pub fn infer_proposals(
    forest: &Forest,
    img: &DepthImage,
    cfg: &InferenceConfig,
) -> Result<ProposalSet, ForestError> {
    let votes = collect_votes(forest, img, cfg)?;
    Ok(proposals_from_votes(&votes, cfg.top_n, cfg.k, &cfg.mean_shift))
}
