//! Binary forest files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        4 bytes  "HFOR"
//! version      u16
//! num_joints   u16
//! config       u32 num_trees, u32 max_depth, u32 min_samples,
//!              u32 node_subsample_size, u32 candidates,
//!              f64 probe_range, f64 threshold_range, f64 background_depth,
//!              u32 leaf_modes, f64 leaf_bandwidth, u32 leaf_max_points
//! tree_count   u32
//! per tree     u32 node_count, then node_count nodes:
//!   split      u8 0, f32 u.x, f32 u.y, f32 v.x, f32 v.y, f32 threshold,
//!              u32 left, u32 right
//!   leaf       u8 1, u32 sample_count, then per joint:
//!              u8 mode_count, mode_count x (f32 x, f32 y, f32 z, f32 weight)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::features::SplitFunction;
use super::{Forest, ForestConfig, ForestError, LeafMode, LeafModel, Node, Tree};
use crate::hand_model::NUM_JOINTS;

pub const MAGIC: [u8; 4] = *b"HFOR";
pub const FORMAT_VERSION: u16 = 1;

pub fn write_forest<W: Write>(forest: &Forest, mut out: W) -> std::io::Result<()> {
    let mut b = Vec::new();
    b.extend_from_slice(&MAGIC);
    b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    b.extend_from_slice(&(NUM_JOINTS as u16).to_le_bytes());
    let c = &forest.config;
    for v in [
        c.num_trees,
        c.max_depth,
        c.min_samples,
        c.node_subsample_size,
        c.candidates,
    ] {
        b.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in [c.probe_range, c.threshold_range, c.background_depth] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend_from_slice(&(c.leaf_modes as u32).to_le_bytes());
    b.extend_from_slice(&c.leaf_bandwidth.to_le_bytes());
    b.extend_from_slice(&(c.leaf_max_points as u32).to_le_bytes());
    b.extend_from_slice(&(forest.trees.len() as u32).to_le_bytes());
    for tree in &forest.trees {
        b.extend_from_slice(&(tree.nodes.len() as u32).to_le_bytes());
        for node in &tree.nodes {
            match node {
                Node::Split { split, left, right } => {
                    b.push(0);
                    for f in [split.u[0], split.u[1], split.v[0], split.v[1], split.threshold] {
                        b.extend_from_slice(&f.to_le_bytes());
                    }
                    b.extend_from_slice(&left.to_le_bytes());
                    b.extend_from_slice(&right.to_le_bytes());
                }
                Node::Leaf(leaf) => {
                    b.push(1);
                    b.extend_from_slice(&leaf.sample_count.to_le_bytes());
                    for modes in &leaf.joints {
                        b.push(modes.len() as u8);
                        for m in modes {
                            for f in [m.offset[0], m.offset[1], m.offset[2], m.weight] {
                                b.extend_from_slice(&f.to_le_bytes());
                            }
                        }
                    }
                }
            }
        }
    }
    out.write_all(&b)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ForestError> {
        if self.pos + n > self.bytes.len() {
            return Err(ForestError::Corrupt {
                offset: self.pos,
                msg: format!("unexpected end of file reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, ForestError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, ForestError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, ForestError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32, ForestError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, ForestError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn corrupt(&self, at: usize, msg: impl Into<String>) -> ForestError {
        ForestError::Corrupt {
            offset: at,
            msg: msg.into(),
        }
    }
}

pub fn read_forest<R: Read>(mut input: R) -> Result<Forest, ForestError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|source| ForestError::Io {
        path: "<reader>".into(),
        source,
    })?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<Forest, ForestError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = c.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(ForestError::Magic(magic));
    }
    let version = c.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(ForestError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let at = c.pos;
    let joints = c.u16("joint count")? as usize;
    if joints != NUM_JOINTS {
        return Err(c.corrupt(at, format!("joint count {joints}, expected {NUM_JOINTS}")));
    }
    let config = ForestConfig {
        num_trees: c.u32("num_trees")? as usize,
        max_depth: c.u32("max_depth")? as usize,
        min_samples: c.u32("min_samples")? as usize,
        node_subsample_size: c.u32("node_subsample_size")? as usize,
        candidates: c.u32("candidates")? as usize,
        probe_range: c.f64("probe_range")?,
        threshold_range: c.f64("threshold_range")?,
        background_depth: c.f64("background_depth")?,
        leaf_modes: c.u32("leaf_modes")? as usize,
        leaf_bandwidth: c.f64("leaf_bandwidth")?,
        leaf_max_points: c.u32("leaf_max_points")? as usize,
    };
    let tree_count = c.u32("tree count")? as usize;
    let mut trees = Vec::with_capacity(tree_count.min(1024));
    for _ in 0..tree_count {
        let at = c.pos;
        let node_count = c.u32("node count")? as usize;
        if node_count == 0 {
            return Err(c.corrupt(at, "tree without nodes"));
        }
        let mut nodes = Vec::with_capacity(node_count.min(1 << 20));
        for _ in 0..node_count {
            let at = c.pos;
            match c.u8("node tag")? {
                0 => {
                    let mut f = [0f32; 5];
                    for slot in f.iter_mut() {
                        *slot = c.f32("split parameter")?;
                    }
                    let child_at = c.pos;
                    let left = c.u32("left child")?;
                    let right = c.u32("right child")?;
                    if left as usize >= node_count || right as usize >= node_count {
                        return Err(c.corrupt(child_at, "child index out of range"));
                    }
                    nodes.push(Node::Split {
                        split: SplitFunction {
                            u: [f[0], f[1]],
                            v: [f[2], f[3]],
                            threshold: f[4],
                        },
                        left,
                        right,
                    });
                }
                1 => {
                    let sample_count = c.u32("leaf sample count")?;
                    let mut joints = Vec::with_capacity(NUM_JOINTS);
                    for _ in 0..NUM_JOINTS {
                        let n = c.u8("mode count")? as usize;
                        let mut modes = Vec::with_capacity(n);
                        for _ in 0..n {
                            let x = c.f32("mode")?;
                            let y = c.f32("mode")?;
                            let z = c.f32("mode")?;
                            let weight = c.f32("mode weight")?;
                            modes.push(LeafMode {
                                offset: [x, y, z],
                                weight,
                            });
                        }
                        joints.push(modes);
                    }
                    nodes.push(Node::Leaf(LeafModel {
                        joints,
                        sample_count,
                    }));
                }
                tag => return Err(c.corrupt(at, format!("unknown node tag {tag}"))),
            }
        }
        // children must point forward so routing always terminates
        for (i, n) in nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = n {
                if *left as usize <= i || *right as usize <= i {
                    return Err(c.corrupt(at, format!("node {i} has a backward child link")));
                }
            }
        }
        trees.push(Tree { nodes });
    }
    if c.pos != bytes.len() {
        return Err(c.corrupt(c.pos, "trailing bytes after last tree"));
    }
    Ok(Forest { config, trees })
}

pub fn save_forest(forest: &Forest, path: &Path) -> Result<(), ForestError> {
    let io = |source| ForestError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut buf = Vec::new();
    write_forest(forest, &mut buf).map_err(io)?;
    std::fs::write(path, buf).map_err(io)
}

pub fn load_forest(path: &Path) -> Result<Forest, ForestError> {
    let bytes = std::fs::read(path).map_err(|source| ForestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&bytes)
}
