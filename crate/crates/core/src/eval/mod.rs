//! Error metrics, success curves, the oracle baseline and the ablation
//! sweeps.

mod svg;
mod sweep;

pub use svg::{success_curve_svg, sweep_svg};
pub use sweep::{
    paired_sign_test, summarize, write_summary_csv, write_sweep_csv, EvalData, Experiment,
    ExperimentRegistry, KSweep, MethodArm, StepwiseVsJoint, Summary, SweepRow, TopNSweep,
    SWEEP_COLUMNS,
};

use crate::hand_model::{tip_joints, JointPositions, NUM_JOINTS};
use crate::optimizer::{EstimatedJoints, ProposalSet};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no frames to evaluate")]
    Empty,
    #[error("thresholds must be sorted ascending")]
    Thresholds,
    #[error("{0} estimated frames but {1} ground-truth frames")]
    FrameCount(usize, usize),
    #[error("missing inputs: {}", .0.join(", "))]
    Missing(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame: usize,
    pub predicted: EstimatedJoints,
    pub ground_truth: JointPositions,
    /// Euclidean error per joint, mm; missing joints carry the sentinel.
    pub errors: [f64; NUM_JOINTS],
}

impl FrameResult {
    pub fn new(
        frame: usize,
        predicted: EstimatedJoints,
        ground_truth: JointPositions,
        sentinel: f64,
    ) -> Self {
        let errors = std::array::from_fn(|j| match predicted[j] {
            Some(p) => (p - ground_truth.0[j]).norm(),
            None => sentinel,
        });
        Self {
            frame,
            predicted,
            ground_truth,
            errors,
        }
    }

    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

pub fn all_present(joints: &JointPositions) -> EstimatedJoints {
    joints.0.map(Some)
}

/// Mean error over every joint of every frame.
pub fn mean_joint_error(results: &[FrameResult]) -> Result<f64, EvalError> {
    mean_over(results, &(0..NUM_JOINTS).collect::<Vec<_>>())
}

/// Mean error over the fingertips only.
pub fn fingertip_error(results: &[FrameResult]) -> Result<f64, EvalError> {
    mean_over(results, &tip_joints())
}

fn mean_over(results: &[FrameResult], joints: &[usize]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let sum: f64 = results
        .iter()
        .map(|r| joints.iter().map(|&j| r.errors[j]).sum::<f64>())
        .sum();
    Ok(sum / (results.len() * joints.len()) as f64)
}

/// Fraction of frames whose worst joint error is within each threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessCurve {
    pub thresholds: Vec<f64>,
    pub rates: Vec<f64>,
}

/// 5 to 80 mm in 5 mm steps.
pub fn default_thresholds() -> Vec<f64> {
    (1..=16).map(|i| 5.0 * i as f64).collect()
}

pub fn success_rate_curve(
    results: &[FrameResult],
    thresholds: &[f64],
) -> Result<SuccessCurve, EvalError> {
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(EvalError::Thresholds);
    }
    let worst: Vec<f64> = results.iter().map(FrameResult::max_error).collect();
    let rates = thresholds
        .iter()
        .map(|&t| {
            if worst.is_empty() {
                0.0
            } else {
                worst.iter().filter(|&&e| e <= t).count() as f64 / worst.len() as f64
            }
        })
        .collect();
    Ok(SuccessCurve {
        thresholds: thresholds.to_vec(),
        rates,
    })
}

/// Per joint, the proposal closest to the ground truth; `None` for joints
/// without proposals.
pub fn oracle_select(proposals: &ProposalSet, gt: &JointPositions) -> EstimatedJoints {
    std::array::from_fn(|j| {
        proposals
            .joint(j)
            .iter()
            .map(|p| p.position)
            .reduce(|best, p| {
                if (p - gt.0[j]).norm() < (best - gt.0[j]).norm() {
                    p
                } else {
                    best
                }
            })
    })
}

/// Top proposal per joint.
pub fn top_select(proposals: &ProposalSet) -> EstimatedJoints {
    std::array::from_fn(|j| proposals.top(j).map(|p| p.position))
}

/// Pairs estimates with ground truth frame by frame.
pub fn evaluate_frames(
    predicted: &[EstimatedJoints],
    gt: &[JointPositions],
    sentinel: f64,
) -> Result<Vec<FrameResult>, EvalError> {
    if predicted.len() != gt.len() {
        return Err(EvalError::FrameCount(predicted.len(), gt.len()));
    }
    Ok(predicted
        .iter()
        .zip(gt)
        .enumerate()
        .map(|(i, (p, g))| FrameResult::new(i, *p, *g, sentinel))
        .collect())
}

/// Per-frame errors as CSV: frame, max_error_mm, then one column per joint.
pub fn write_frame_errors<W: std::io::Write>(out: W, results: &[FrameResult]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["frame".to_string(), "max_error_mm".to_string()];
    header.extend((0..NUM_JOINTS).map(crate::hand_model::joint_name));
    w.write_record(&header)?;
    for r in results {
        let mut row = vec![r.frame.to_string(), format!("{:.6}", r.max_error())];
        row.extend(r.errors.iter().map(|e| format!("{e:.6}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_success_curve<W: std::io::Write>(out: W, curve: &SuccessCurve) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold_mm", "success_rate"])?;
    for (t, r) in curve.thresholds.iter().zip(&curve.rates) {
        w.write_record([format!("{t}"), format!("{r:.6}")])?;
    }
    w.flush()?;
    Ok(())
}
