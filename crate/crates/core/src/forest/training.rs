use nalgebra::Point3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::features::{extract_samples, CroppedDepth, SampleConfig, SplitFunction, TrainingSample};
use super::mean_shift::{mean_shift, MeanShiftParams};
use super::{Forest, ForestConfig, ForestError, LeafMode, LeafModel, Node, Tree};
use crate::depth_synth::DepthImage;
use crate::hand_model::{JointPositions, NUM_JOINTS};
use crate::seeding::derive_seed;

/// Samples from many frames plus the cropped frames and ground truth they
/// refer to.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub images: Vec<CroppedDepth>,
    pub joints: Vec<JointPositions>,
    pub samples: Vec<TrainingSample>,
}

impl TrainingSet {
    pub fn new() -> Self {
        Self {
            images: Vec::new(),
            joints: Vec::new(),
            samples: Vec::new(),
        }
    }

    /// Samples from every frame; frame `i` uses an RNG derived from `seed`
    /// and `i`, so the result does not depend on thread scheduling.
    pub fn build(
        frames: &[(DepthImage, JointPositions)],
        cfg: &SampleConfig,
        seed: u64,
    ) -> Self {
        let mut set = Self::new();
        set.push_frames(frames, cfg, seed);
        set
    }

    /// Appends frames; indices continue from the frames already present, so
    /// pushing in chunks gives the same set as one `build`.
    pub fn push_frames(
        &mut self,
        frames: &[(DepthImage, JointPositions)],
        cfg: &SampleConfig,
        seed: u64,
    ) {
        let offset = self.images.len();
        let per_frame: Vec<(CroppedDepth, Vec<TrainingSample>)> = frames
            .par_iter()
            .enumerate()
            .map(|(i, (img, gt))| {
                let index = (offset + i) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index));
                let samples = extract_samples(img, gt, index as u32, cfg, &mut rng);
                (CroppedDepth::new(img), samples)
            })
            .collect();
        for (crop, s) in per_frame {
            self.images.push(crop);
            self.samples.extend(s);
        }
        self.joints.extend(frames.iter().map(|(_, gt)| *gt));
    }

    fn feature_left(&self, split: &SplitFunction, s: &TrainingSample, background: f64) -> bool {
        let img = &self.images[s.image as usize];
        split.goes_left(img, s.x as u32, s.y as u32, s.depth as f64, background)
    }
}

/// Shannon entropy (bits) of a label histogram.
pub fn class_entropy(hist: &[u32]) -> f64 {
    let n: u32 = hist.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Information gain of splitting a node into the two label histograms.
/// An empty side scores negative infinity.
pub fn split_score(left: &[u32], right: &[u32]) -> f64 {
    let nl: u32 = left.iter().sum();
    let nr: u32 = right.iter().sum();
    if nl == 0 || nr == 0 {
        return f64::NEG_INFINITY;
    }
    let parent: Vec<u32> = left.iter().zip(right).map(|(a, b)| a + b).collect();
    let n = (nl + nr) as f64;
    class_entropy(&parent)
        - (nl as f64 / n) * class_entropy(left)
        - (nr as f64 / n) * class_entropy(right)
}

/// Draws up to `size` samples round-robin across labels, each label's pool
/// shuffled, so rare labels are not swamped by frequent ones.
fn balanced_subsample<R: Rng + ?Sized>(
    set: &TrainingSet,
    indices: &[u32],
    size: usize,
    rng: &mut R,
) -> Vec<u32> {
    if indices.len() <= size {
        return indices.to_vec();
    }
    let mut pools: Vec<Vec<u32>> = vec![Vec::new(); NUM_JOINTS];
    for &i in indices {
        pools[set.samples[i as usize].label as usize].push(i);
    }
    for pool in pools.iter_mut() {
        pool.shuffle(rng);
    }
    let mut out = Vec::with_capacity(size);
    let mut round = 0;
    while out.len() < size {
        let mut took = false;
        for pool in &pools {
            if let Some(&i) = pool.get(round) {
                out.push(i);
                took = true;
                if out.len() == size {
                    break;
                }
            }
        }
        if !took {
            break;
        }
        round += 1;
    }
    out
}

/// Leaf model from the samples of `indices`: per joint, mean-shift over
/// their offsets, keeping the `leaf_modes` best-supported modes.
pub fn build_leaf(set: &TrainingSet, indices: &[u32], cfg: &ForestConfig) -> LeafModel {
    assert!(!indices.is_empty(), "a leaf needs at least one sample");
    let step = indices.len().div_ceil(cfg.leaf_max_points.max(1));
    let used: Vec<&TrainingSample> = indices
        .iter()
        .step_by(step.max(1))
        .map(|&i| &set.samples[i as usize])
        .collect();
    let scale = indices.len() as f64 / used.len() as f64;
    let weights = vec![1.0; used.len()];
    let params = MeanShiftParams::new(cfg.leaf_bandwidth, 50);
    let joints = (0..NUM_JOINTS)
        .map(|j| {
            let pts: Vec<Point3<f64>> = used
                .iter()
                .map(|s| Point3::from(s.offset(&set.joints[s.image as usize], j)))
                .collect();
            mean_shift(&pts, &weights, &params)
                .into_iter()
                .take(cfg.leaf_modes)
                .map(|m| LeafMode {
                    offset: [m.position.x as f32, m.position.y as f32, m.position.z as f32],
                    weight: (m.support * scale) as f32,
                })
                .collect()
        })
        .collect();
    LeafModel {
        joints,
        sample_count: indices.len() as u32,
    }
}

struct Grower<'a> {
    set: &'a TrainingSet,
    cfg: &'a ForestConfig,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn leaf(&mut self, indices: &[u32]) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf(build_leaf(self.set, indices, self.cfg)));
        id
    }

    fn grow(&mut self, indices: Vec<u32>, depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        if indices.len() < self.cfg.min_samples || depth >= self.cfg.max_depth {
            return self.leaf(&indices);
        }
        let bg = self.cfg.background_depth;
        let sub = balanced_subsample(self.set, &indices, self.cfg.node_subsample_size, rng);
        let mut best: Option<(f64, SplitFunction)> = None;
        let mut left = [0u32; NUM_JOINTS];
        let mut right = [0u32; NUM_JOINTS];
        for _ in 0..self.cfg.candidates {
            let split = SplitFunction::random(rng, self.cfg.probe_range, self.cfg.threshold_range);
            left.fill(0);
            right.fill(0);
            for &i in &sub {
                let s = &self.set.samples[i as usize];
                if self.set.feature_left(&split, s, bg) {
                    left[s.label as usize] += 1;
                } else {
                    right[s.label as usize] += 1;
                }
            }
            let gain = split_score(&left, &right);
            if gain > best.map_or(1e-9, |(g, _)| g) {
                best = Some((gain, split));
            }
        }
        let Some((_, split)) = best else {
            return self.leaf(&indices);
        };
        let (l, r): (Vec<u32>, Vec<u32>) = indices
            .iter()
            .partition(|&&i| self.set.feature_left(&split, &self.set.samples[i as usize], bg));
        if l.is_empty() || r.is_empty() {
            return self.leaf(&indices);
        }
        drop(indices);
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Split {
            split,
            left: 0,
            right: 0,
        });
        let li = self.grow(l, depth + 1, rng);
        let ri = self.grow(r, depth + 1, rng);
        self.nodes[id as usize] = Node::Split {
            split,
            left: li,
            right: ri,
        };
        id
    }
}

/// Grows one tree over `indices` of the training set.
pub fn train_tree(
    set: &TrainingSet,
    indices: Vec<u32>,
    cfg: &ForestConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tree, ForestError> {
    if indices.is_empty() {
        return Err(ForestError::NoSamples);
    }
    let mut grower = Grower {
        set,
        cfg,
        nodes: Vec::new(),
    };
    grower.grow(indices, 0, rng);
    Ok(Tree {
        nodes: grower.nodes,
    })
}

/// Trains `cfg.num_trees` trees in parallel, tree `t` seeded from
/// `(seed, t)`.
pub fn train_forest(set: &TrainingSet, cfg: &ForestConfig, seed: u64) -> Result<Forest, ForestError> {
    if set.samples.is_empty() {
        return Err(ForestError::NoSamples);
    }
    let all: Vec<u32> = (0..set.samples.len() as u32).collect();
    let trees = (0..cfg.num_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7eee_0000 + t as u64));
            train_tree(set, all.clone(), cfg, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Forest {
        config: *cfg,
        trees,
    })
}
