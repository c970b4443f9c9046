//! Weighted per-joint position proposals.

use std::io::{Read, Write};

use nalgebra::Point3;

use crate::hand_model::{JointPositions, NUM_JOINTS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub joint: usize,
    pub position: Point3<f64>,
    pub confidence: f64,
}

/// Up to k proposals per joint with confidences summing to one for every
/// joint that has any. Absent joints have an empty list.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    joints: Vec<Vec<Proposal>>,
}

impl Default for ProposalSet {
    fn default() -> Self {
        Self {
            joints: vec![Vec::new(); NUM_JOINTS],
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProposalError {
    #[error("joint index {0} out of range")]
    Joint(usize),
    #[error("proposal weights for joint {0} must be finite, non-negative and not all zero")]
    Weights(usize),
    #[error("proposal position for joint {0} is not finite")]
    Position(usize),
    #[error("proposal csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

impl ProposalSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces joint `j`'s proposals; weights are normalized to sum to one.
    /// An empty list marks the joint absent.
    pub fn set_joint(
        &mut self,
        j: usize,
        weighted: &[(Point3<f64>, f64)],
    ) -> Result<(), ProposalError> {
        if j >= NUM_JOINTS {
            return Err(ProposalError::Joint(j));
        }
        let total: f64 = weighted.iter().map(|(_, w)| *w).sum();
        if !weighted.is_empty()
            && (!(total > 0.0)
                || !total.is_finite()
                || weighted.iter().any(|(_, w)| !(*w >= 0.0)))
        {
            return Err(ProposalError::Weights(j));
        }
        if weighted
            .iter()
            .any(|(p, _)| !p.iter().all(|c| c.is_finite()))
        {
            return Err(ProposalError::Position(j));
        }
        self.joints[j] = weighted
            .iter()
            .map(|&(position, w)| Proposal {
                joint: j,
                position,
                confidence: w / total,
            })
            .collect();
        Ok(())
    }

    /// One proposal of weight one per joint.
    pub fn from_joints(joints: &JointPositions) -> Self {
        let mut set = Self::new();
        for (j, p) in joints.iter().enumerate() {
            set.joints[j] = vec![Proposal {
                joint: j,
                position: *p,
                confidence: 1.0,
            }];
        }
        set
    }

    pub fn joint(&self, j: usize) -> &[Proposal] {
        &self.joints[j]
    }

    pub fn is_present(&self, j: usize) -> bool {
        !self.joints[j].is_empty()
    }

    pub fn present_joints(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_JOINTS).filter(|&j| self.is_present(j))
    }

    pub fn len(&self) -> usize {
        self.joints.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Highest-confidence proposal of joint `j` (lowest index on ties).
    pub fn top(&self, j: usize) -> Option<&Proposal> {
        self.joints[j]
            .iter()
            .reduce(|best, p| if p.confidence > best.confidence { p } else { best })
    }

    /// Keeps the first `k` proposals per joint and renormalizes.
    pub fn truncated(&self, k: usize) -> Self {
        let mut out = Self::new();
        for (j, props) in self.joints.iter().enumerate() {
            let kept: Vec<_> = props
                .iter()
                .take(k)
                .map(|p| (p.position, p.confidence))
                .collect();
            // weights were valid before truncation and k >= 1 keeps a positive one
            if out.set_joint(j, &kept).is_err() {
                let uniform: Vec<_> = kept.iter().map(|(p, _)| (*p, 1.0)).collect();
                out.set_joint(j, &uniform).expect("uniform weights are valid");
            }
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = &Proposal> {
        self.joints.iter().flatten()
    }

    /// CSV rows `frame,joint,x,y,z,confidence` for each frame in order.
    pub fn write_csv<W: Write>(out: W, frames: &[ProposalSet]) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame", "joint", "x", "y", "z", "confidence"])?;
        for (f, set) in frames.iter().enumerate() {
            for p in set.iter() {
                w.write_record([
                    f.to_string(),
                    p.joint.to_string(),
                    format!("{:?}", p.position.x),
                    format!("{:?}", p.position.y),
                    format!("{:?}", p.position.z),
                    format!("{:?}", p.confidence),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `frames` proposal sets; frames without rows are empty.
    pub fn read_csv<R: Read>(input: R, frames: usize) -> Result<Vec<ProposalSet>, ProposalError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(|e| ProposalError::Csv {
            line: 1,
            msg: e.to_string(),
        })?;
        if header.iter().collect::<Vec<_>>() != ["frame", "joint", "x", "y", "z", "confidence"] {
            return Err(ProposalError::Csv {
                line: 1,
                msg: "expected header frame,joint,x,y,z,confidence".into(),
            });
        }
        let mut raw: Vec<Vec<Vec<(Point3<f64>, f64)>>> = vec![vec![Vec::new(); NUM_JOINTS]; frames];
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let err = |msg: String| ProposalError::Csv { line, msg };
            let rec = rec.map_err(|e| err(e.to_string()))?;
            if rec.len() != 6 {
                return Err(err(format!("expected 6 columns, got {}", rec.len())));
            }
            let frame: usize = rec[0].parse().map_err(|_| err(format!("bad frame {:?}", &rec[0])))?;
            let joint: usize = rec[1].parse().map_err(|_| err(format!("bad joint {:?}", &rec[1])))?;
            if frame >= frames {
                return Err(err(format!("frame {frame} beyond {frames} frames")));
            }
            if joint >= NUM_JOINTS {
                return Err(err(format!("joint {joint} out of range")));
            }
            let mut v = [0.0; 4];
            for (slot, field) in v.iter_mut().zip(rec.iter().skip(2)) {
                *slot = field.parse().map_err(|_| err(format!("bad number {field:?}")))?;
            }
            raw[frame][joint].push((Point3::new(v[0], v[1], v[2]), v[3]));
        }
        raw.into_iter()
            .map(|per_joint| {
                let mut set = ProposalSet::new();
                for (j, props) in per_joint.iter().enumerate() {
                    set.set_joint(j, props)?;
                }
                Ok(set)
            })
            .collect()
    }
}
