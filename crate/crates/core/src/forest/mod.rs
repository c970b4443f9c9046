//! Hough-style regression forest producing per-joint 3D proposals.
//!
//! Trees split foreground patches with depth-normalized probe features and
//! are grown to separate the part label (nearest joint). Leaves keep, for
//! every joint, the strongest mean-shift modes of the training offsets. At
//! test time every patch casts offset votes for every joint; the strongest
//! votes per joint are clustered again to give the final proposals.

mod features;
mod inference;
mod io;
pub mod mean_shift;
mod training;

pub use features::{
    extract_samples, nearest_joint, CroppedDepth, DepthProbe, SampleConfig, SplitFunction,
    TrainingSample,
};
pub use inference::{collect_votes, infer_proposals, proposals_from_votes, InferenceConfig, Vote, Votes};
pub use io::{load_forest, read_forest, save_forest, write_forest, FORMAT_VERSION, MAGIC};
pub use mean_shift::{mean_shift, mean_shift_step, MeanShiftParams, Mode};
pub use training::{build_leaf, class_entropy, split_score, train_forest, train_tree, TrainingSet};

use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("forest file: bad magic bytes {0:?}, not a forest file or unsupported version")]
    Magic([u8; 4]),
    #[error("forest file version {found} not supported (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("forest file corrupt at byte {offset}: {msg}")]
    Corrupt { offset: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("training set is empty")]
    NoSamples,
    #[error("image has no foreground pixels")]
    EmptyForeground,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub num_trees: usize,
    pub max_depth: usize,
    /// Nodes reached by fewer samples become leaves.
    pub min_samples: usize,
    /// Class-balanced subsample drawn at each node for split selection.
    pub node_subsample_size: usize,
    /// Random split candidates evaluated per node.
    pub candidates: usize,
    /// Probe offsets are uniform in ±probe_range pixel-millimetres.
    pub probe_range: f64,
    /// Thresholds are uniform in ±threshold_range millimetres.
    pub threshold_range: f64,
    /// Depth read by probes off the image or on background, mm.
    pub background_depth: f64,
    /// Offset modes kept per joint in each leaf.
    pub leaf_modes: usize,
    pub leaf_bandwidth: f64,
    /// Leaf mean-shift runs on at most this many samples (evenly strided).
    pub leaf_max_points: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            num_trees: 3,
            max_depth: 23,
            min_samples: 40,
            node_subsample_size: 500,
            candidates: 200,
            probe_range: 60_000.0,
            threshold_range: 200.0,
            background_depth: 10_000.0,
            leaf_modes: 2,
            leaf_bandwidth: 20.0,
            leaf_max_points: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafMode {
    /// Patch centre to joint, mm.
    pub offset: [f32; 3],
    /// Number of training offsets supporting the mode.
    pub weight: f32,
}

impl LeafMode {
    pub fn offset(&self) -> Vector3<f64> {
        Vector3::new(self.offset[0] as f64, self.offset[1] as f64, self.offset[2] as f64)
    }
}

/// Per joint, up to `leaf_modes` offset modes sorted by weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafModel {
    pub joints: Vec<Vec<LeafMode>>,
    /// Training samples that reached the leaf.
    pub sample_count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        split: SplitFunction,
        left: u32,
        right: u32,
    },
    Leaf(LeafModel),
}

/// Flat node array; index 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Routes a patch to its leaf. Every patch reaches exactly one leaf.
    pub fn leaf<D: DepthProbe + ?Sized>(
        &self,
        img: &D,
        x: u32,
        y: u32,
        depth: f64,
        background: f64,
    ) -> &LeafModel {
        self.leaf_index(img, x, y, depth, background).1
    }

    pub fn leaf_index<D: DepthProbe + ?Sized>(
        &self,
        img: &D,
        x: u32,
        y: u32,
        depth: f64,
        background: f64,
    ) -> (usize, &LeafModel) {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf(leaf) => return (at, leaf),
                Node::Split { split, left, right } => {
                    at = if split.goes_left(img, x, y, depth, background) {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    /// Length of the longest root-to-leaf path (a single leaf has depth 0).
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
}
