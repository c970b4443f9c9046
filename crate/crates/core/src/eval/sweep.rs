use std::io::Write;

use rayon::prelude::*;

use super::{
    fingertip_error, mean_joint_error, oracle_select, success_rate_curve, top_select, FrameResult,
};
use crate::forest::{proposals_from_votes, InferenceConfig, Votes};
use crate::hand_model::JointPositions;
use crate::optimizer::{
    fit_fallback, FitContext, FitOutput, Joint, PoseFitter, ProposalSet, Stepwise,
};

/// Everything a sweep needs: the forest votes of every test frame (the
/// forest is fixed, so votes are computed once), ground truth and the
/// default inference and fit settings.
pub struct EvalData {
    pub votes: Vec<Votes>,
    pub ground_truth: Vec<JointPositions>,
    pub inference: InferenceConfig,
    pub fit: FitContext,
    pub thresholds: Vec<f64>,
}

impl EvalData {
    fn proposals(&self, top_n: usize, k: usize) -> Vec<ProposalSet> {
        self.votes
            .par_iter()
            .map(|v| proposals_from_votes(v, top_n, k, &self.inference.mean_shift))
            .collect()
    }

    fn sentinel(&self) -> f64 {
        self.fit.settings.d_max
    }

    fn results(&self, predicted: impl Iterator<Item = crate::optimizer::EstimatedJoints>) -> Vec<FrameResult> {
        predicted
            .zip(&self.ground_truth)
            .enumerate()
            .map(|(i, (p, g))| FrameResult::new(i, p, *g, self.sentinel()))
            .collect()
    }

    fn fit(&self, fitter: &dyn PoseFitter, proposals: &[ProposalSet], seed: u64) -> (Vec<FrameResult>, f64) {
        let fits: Vec<FitOutput> = fit_fallback(fitter, proposals, &self.fit, seed);
        let evals = fits.iter().map(|f| f.evaluations as f64).sum::<f64>() / fits.len().max(1) as f64;
        let results = self.results(fits.iter().map(FitOutput::estimated));
        (results, evals)
    }

    fn oracle(&self, proposals: &[ProposalSet]) -> Vec<FrameResult> {
        self.results(proposals.iter().zip(&self.ground_truth).map(|(p, g)| oracle_select(p, g)))
    }

    fn regression(&self, proposals: &[ProposalSet]) -> Vec<FrameResult> {
        self.results(proposals.iter().map(top_select))
    }

    fn row(
        &self,
        point: String,
        seed: u64,
        fitted: &(Vec<FrameResult>, f64),
        oracle: Option<&[FrameResult]>,
        regression: Option<&[FrameResult]>,
    ) -> SweepRow {
        let (results, evals) = fitted;
        let curve = success_rate_curve(results, &self.thresholds).expect("sorted thresholds");
        SweepRow {
            point,
            seed,
            mean_error: mean_joint_error(results).unwrap_or(f64::NAN),
            fingertip_error: fingertip_error(results).unwrap_or(f64::NAN),
            oracle_error: oracle.map(|r| mean_joint_error(r).unwrap_or(f64::NAN)),
            regression_error: regression.map(|r| mean_joint_error(r).unwrap_or(f64::NAN)),
            evaluations_per_frame: *evals,
            success: curve.rates,
        }
    }
}

/// One sweep point under one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: String,
    pub seed: u64,
    /// Mean joint error of the fitted poses, mm.
    pub mean_error: f64,
    pub fingertip_error: f64,
    /// Closest-proposal baseline, where the sweep defines one.
    pub oracle_error: Option<f64>,
    /// Top proposal per joint without a model.
    pub regression_error: Option<f64>,
    pub evaluations_per_frame: f64,
    /// Success rates of the fitted poses at the data's thresholds.
    pub success: Vec<f64>,
}

pub const SWEEP_COLUMNS: [&str; 7] = [
    "point",
    "seed",
    "mean_error_mm",
    "fingertip_error_mm",
    "oracle_error_mm",
    "regression_error_mm",
    "evals_per_frame",
];

impl SweepRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "mean_error_mm" => Some(self.mean_error),
            "fingertip_error_mm" => Some(self.fingertip_error),
            "oracle_error_mm" => self.oracle_error,
            "regression_error_mm" => self.regression_error,
            "evals_per_frame" => Some(self.evaluations_per_frame),
            _ => None,
        }
    }
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow], thresholds: &[f64]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = SWEEP_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(thresholds.iter().map(|t| format!("success_{t}")));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        let mut row = vec![
            r.point.clone(),
            r.seed.to_string(),
            format!("{:.6}", r.mean_error),
            format!("{:.6}", r.fingertip_error),
            opt(r.oracle_error),
            opt(r.regression_error),
            format!("{:.1}", r.evaluations_per_frame),
        ];
        row.extend(r.success.iter().map(|s| format!("{s:.6}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and sample standard deviation of one metric at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub point: String,
    pub metric: &'static str,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn interval(&self) -> (f64, f64) {
        (self.mean - self.std, self.mean + self.std)
    }
}

/// Summaries per point (in first-seen order) and metric.
pub fn summarize(rows: &[SweepRow]) -> Vec<Summary> {
    let mut points: Vec<&str> = Vec::new();
    for r in rows {
        if !points.contains(&r.point.as_str()) {
            points.push(&r.point);
        }
    }
    let mut out = Vec::new();
    for p in points {
        for metric in &SWEEP_COLUMNS[2..] {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.point == p)
                .filter_map(|r| r.metric(metric))
                .collect();
            if v.is_empty() {
                continue;
            }
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            out.push(Summary {
                point: p.to_string(),
                metric,
                mean,
                std,
                n,
            });
        }
    }
    out
}

pub fn write_summary_csv<W: Write>(out: W, summary: &[Summary]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["point", "metric", "mean", "std", "n"])?;
    for s in summary {
        w.write_record([
            s.point.clone(),
            s.metric.to_string(),
            format!("{:.6}", s.mean),
            format!("{:.6}", s.std),
            s.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One-sided sign test that `a` is smaller than `b` pairwise. Ties are
/// dropped; returns 1 when every pair ties.
pub fn paired_sign_test(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let wins = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let n = a.iter().zip(b).filter(|(x, y)| x != y).count();
    if n == 0 {
        return 1.0;
    }
    let mut p = 0.0;
    let mut c = 1.0f64;
    for i in 0..=n {
        if i > 0 {
            c = c * (n - i + 1) as f64 / i as f64;
        }
        if i >= wins {
            p += c;
        }
    }
    p / 2f64.powi(n as i32)
}

/// Which fitter a sweep arm runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodArm {
    Stepwise,
    Joint,
}

impl MethodArm {
    fn fitter(self) -> &'static dyn PoseFitter {
        match self {
            MethodArm::Stepwise => &Stepwise,
            MethodArm::Joint => &Joint,
        }
    }
}

/// An ablation selectable by name.
pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;
    /// Axis label of the sweep variable.
    fn x_label(&self) -> &'static str;
    fn points(&self) -> Vec<String>;
    /// One row per point per seed, points outermost.
    fn run(&self, data: &EvalData, seeds: &[u64]) -> Vec<SweepRow>;
}

/// Number of strongest votes passed to mean-shift.
pub struct TopNSweep {
    pub grid: Vec<usize>,
}

impl Default for TopNSweep {
    fn default() -> Self {
        Self {
            grid: vec![25, 50, 100, 200, 400],
        }
    }
}

impl Experiment for TopNSweep {
    fn name(&self) -> &'static str {
        "top-n"
    }

    fn x_label(&self) -> &'static str {
        "votes per joint passed to mean-shift"
    }

    fn points(&self) -> Vec<String> {
        self.grid.iter().map(|n| n.to_string()).collect()
    }

    fn run(&self, data: &EvalData, seeds: &[u64]) -> Vec<SweepRow> {
        let mut rows = Vec::new();
        for &n in &self.grid {
            let props = data.proposals(n, data.inference.k);
            let oracle = data.oracle(&props);
            let regression = data.regression(&props);
            for &seed in seeds {
                let fitted = data.fit(&Stepwise, &props, seed);
                rows.push(data.row(n.to_string(), seed, &fitted, Some(&oracle), Some(&regression)));
            }
        }
        rows
    }
}

/// Number of proposals kept per joint. All points share one mean-shift run
/// whose modes are truncated, so the vote sets are identical across k.
pub struct KSweep {
    pub grid: Vec<usize>,
}

impl Default for KSweep {
    fn default() -> Self {
        Self {
            grid: vec![1, 2, 3, 5],
        }
    }
}

impl Experiment for KSweep {
    fn name(&self) -> &'static str {
        "k"
    }

    fn x_label(&self) -> &'static str {
        "proposals per joint (k)"
    }

    fn points(&self) -> Vec<String> {
        self.grid.iter().map(|k| k.to_string()).collect()
    }

    fn run(&self, data: &EvalData, seeds: &[u64]) -> Vec<SweepRow> {
        let kmax = self.grid.iter().copied().max().unwrap_or(1);
        let full = data.proposals(data.inference.top_n, kmax);
        let mut rows = Vec::new();
        for &k in &self.grid {
            let props: Vec<ProposalSet> = full.iter().map(|p| p.truncated(k)).collect();
            let oracle = data.oracle(&props);
            let regression = data.regression(&props);
            for &seed in seeds {
                let fitted = data.fit(&Stepwise, &props, seed);
                rows.push(data.row(k.to_string(), seed, &fitted, Some(&oracle), Some(&regression)));
            }
        }
        rows
    }
}

/// Stepwise against all-at-once fitting on the same proposals and seeds.
pub struct StepwiseVsJoint;

impl Experiment for StepwiseVsJoint {
    fn name(&self) -> &'static str {
        "stepwise-vs-joint"
    }

    fn x_label(&self) -> &'static str {
        "optimisation"
    }

    fn points(&self) -> Vec<String> {
        vec!["stepwise".into(), "joint".into()]
    }

    fn run(&self, data: &EvalData, seeds: &[u64]) -> Vec<SweepRow> {
        let props = data.proposals(data.inference.top_n, data.inference.k);
        let mut rows = Vec::new();
        for (name, arm) in [("stepwise", MethodArm::Stepwise), ("joint", MethodArm::Joint)] {
            for &seed in seeds {
                let fitted = data.fit(arm.fitter(), &props, seed);
                rows.push(data.row(name.into(), seed, &fitted, None, None));
            }
        }
        rows
    }
}

pub struct ExperimentRegistry {
    experiments: Vec<Box<dyn Experiment>>,
}

impl Default for ExperimentRegistry {
    fn default() -> Self {
        Self {
            experiments: vec![
                Box::new(TopNSweep::default()),
                Box::new(KSweep::default()),
                Box::new(StepwiseVsJoint),
            ],
        }
    }
}

impl ExperimentRegistry {
    pub fn register(&mut self, e: Box<dyn Experiment>) {
        self.experiments.retain(|x| x.name() != e.name());
        self.experiments.push(e);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Experiment> {
        self.experiments.iter().find(|e| e.name() == name).map(|e| e.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.experiments.iter().map(|e| e.name()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_values() {
        assert_eq!(paired_sign_test(&[1.0; 5], &[2.0; 5]), 1.0 / 32.0);
        assert_eq!(paired_sign_test(&[1.0, 1.0], &[1.0, 1.0]), 1.0);
        // 4 of 5 wins: (5 + 1) / 32
        let p = paired_sign_test(&[1.0, 1.0, 1.0, 1.0, 3.0], &[2.0; 5]);
        assert!((p - 6.0 / 32.0).abs() < 1e-12);
    }

    #[test]
    fn summary_mean_std() {
        let row = |p: &str, e: f64| SweepRow {
            point: p.into(),
            seed: 0,
            mean_error: e,
            fingertip_error: e,
            oracle_error: None,
            regression_error: None,
            evaluations_per_frame: 1.0,
            success: vec![],
        };
        let s = summarize(&[row("a", 1.0), row("a", 3.0), row("b", 5.0)]);
        let a = s.iter().find(|s| s.point == "a" && s.metric == "mean_error_mm").unwrap();
        assert_eq!(a.mean, 2.0);
        assert!((a.std - 2f64.sqrt()).abs() < 1e-12);
        assert!(s.iter().all(|s| s.metric != "oracle_error_mm"));
    }
}
