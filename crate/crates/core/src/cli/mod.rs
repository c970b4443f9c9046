//! The `handfit` command line: synth, train, infer, fit, eval, sweep and
//! pipeline.
//!
//! Every command is a library function as well, so tests drive the same
//! code paths as the binary.

mod config;

pub use config::{ConfigError, RunConfig};

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use nalgebra::Vector3;
use rayon::prelude::*;

use crate::depth_synth::{
    generate_sequence, generate_training_poses, random_keyposes, render_depth_jittered,
    ArticulationTemplates, CameraIntrinsics, DepthImage, SynthError, DEFAULT_TEMPLATES,
};
use crate::eval::{
    evaluate_frames, fingertip_error, mean_joint_error, oracle_select, success_curve_svg,
    success_rate_curve, summarize, sweep_svg, write_frame_errors, write_success_curve,
    write_summary_csv, write_sweep_csv, EvalData, EvalError, ExperimentRegistry,
};
use crate::forest::{
    collect_votes, infer_proposals, load_forest, save_forest, train_forest, Forest, ForestError,
    TrainingSet,
};
use crate::hand_model::{
    forward_kinematics, read_pose_csv, write_pose_csv, HandGeometry, HandModelError, JointLimits,
    JointPositions, PoseParams,
};
use crate::kv::{KvDoc, KvWriter};
use crate::optimizer::{
    fit_frames, read_joints_csv, write_fit_csv, write_joints_csv, FitContext, FitError, FitOutput,
    FitterRegistry, ProposalError, ProposalSet,
};
use crate::seeding::{derive_seed, stream_rng};

// sub-streams of the run seed
const STREAM_TEST_KEYPOSES: u64 = 1;
const STREAM_JITTER_TRAIN: u64 = 2;
const STREAM_JITTER_TEST: u64 = 3;
const STREAM_SAMPLES: u64 = 4;
const STREAM_FOREST: u64 = 5;
const STREAM_FIT: u64 = 6;
const STREAM_SWEEP: u64 = 100;

/// Frames rendered or loaded at once while training.
const CHUNK: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error("bad input: {0}")]
    Input(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) | CliError::Input(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::EmptyImage => CliError::Numeric(e.to_string()),
            SynthError::Intrinsics(_) | SynthError::Templates(_) => CliError::Config(e.to_string()),
            SynthError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<HandModelError> for CliError {
    fn from(e: HandModelError) -> Self {
        match e {
            HandModelError::DegenerateOrientation => CliError::Numeric(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ForestError> for CliError {
    fn from(e: ForestError) -> Self {
        match e {
            ForestError::NoSamples | ForestError::EmptyForeground => CliError::Numeric(e.to_string()),
            ForestError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ProposalError> for CliError {
    fn from(e: ProposalError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::UnknownFitter(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Missing(_) => CliError::Missing(e.to_string()),
            EvalError::Thresholds => CliError::Config(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn require(paths: &[&Path]) -> Result<(), CliError> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Missing(missing.join(", ")))
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Refuses a non-empty directory unless `force`, in which case it is
/// emptied.
fn prepare_out_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(io_err(dir))?.next().is_some();
        if non_empty {
            if !force {
                return Err(CliError::Config(format!(
                    "{} exists and is not empty (use --force to overwrite)",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    create_dir(dir)
}

fn frame_name(i: usize) -> String {
    format!("{i:05}.pgm")
}

/// A dataset directory written by `synth`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub camera: CameraIntrinsics,
    pub geometry: HandGeometry,
    pub limits: JointLimits,
    pub train_poses: Vec<PoseParams>,
    pub test_poses: Vec<PoseParams>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let files = ["intrinsics.kv", "geometry.kv", "limits.kv", "train/poses.csv", "test/poses.csv"]
            .map(|f| dir.join(f));
        require(&files.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
        let camera = CameraIntrinsics::from_kv(&KvDoc::load(&files[0]).map_err(SynthError::from)?)?;
        let geometry = HandGeometry::load(&files[1])?;
        let limits = JointLimits::load(&files[2])?;
        let poses = |p: &Path| -> Result<Vec<PoseParams>, CliError> {
            let f = fs::File::open(p).map_err(io_err(p))?;
            read_pose_csv(f).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            camera,
            geometry,
            limits,
            train_poses: poses(&files[3])?,
            test_poses: poses(&files[4])?,
        })
    }

    fn frames(&self, split: &str, poses: &[PoseParams], range: std::ops::Range<usize>) -> Result<Vec<(DepthImage, JointPositions)>, CliError> {
        range
            .into_par_iter()
            .map(|i| {
                let path = self.dir.join(split).join(frame_name(i));
                require(&[&path])?;
                let img = DepthImage::load_pgm(&path, self.camera)?;
                Ok((img, forward_kinematics(&self.geometry, &poses[i])?))
            })
            .collect()
    }

    pub fn train_frames(&self, range: std::ops::Range<usize>) -> Result<Vec<(DepthImage, JointPositions)>, CliError> {
        self.frames("train", &self.train_poses, range)
    }

    pub fn test_frames(&self) -> Result<Vec<(DepthImage, JointPositions)>, CliError> {
        self.frames("test", &self.test_poses, 0..self.test_poses.len())
    }

    pub fn test_ground_truth(&self) -> Result<Vec<JointPositions>, CliError> {
        self.test_poses
            .iter()
            .map(|p| Ok(forward_kinematics(&self.geometry, p)?))
            .collect()
    }

    pub fn fit_context(&self, cfg: &RunConfig) -> FitContext {
        FitContext {
            geom: self.geometry.clone(),
            limits: self.limits.clone(),
            settings: cfg.fit,
        }
    }
}

fn center(cfg: &RunConfig) -> Vector3<f64> {
    Vector3::from(cfg.center)
}

/// Training grid and test sequence poses for `cfg`.
pub fn dataset_poses(cfg: &RunConfig) -> Result<(Vec<PoseParams>, Vec<PoseParams>), CliError> {
    let templates = ArticulationTemplates::default();
    let limits = JointLimits::default();
    let train = generate_training_poses(&templates, cfg.articulations, cfg.viewpoints, center(cfg), &limits)?;
    let mut rng = stream_rng(cfg.seed, STREAM_TEST_KEYPOSES);
    let keys = random_keyposes(
        &templates,
        cfg.articulations,
        cfg.viewpoints,
        cfg.test_keyposes,
        center(cfg),
        &mut rng,
    );
    let test = generate_sequence(&keys, cfg.frames_between, cfg.subsample, &limits)?;
    Ok((train, test))
}

fn render_split(
    cfg: &RunConfig,
    geom: &HandGeometry,
    poses: &[PoseParams],
    stream: u64,
    dir: &Path,
) -> Result<(), CliError> {
    create_dir(dir)?;
    let f = dir.join("poses.csv");
    write_pose_csv(fs::File::create(&f).map_err(io_err(&f))?, poses)?;
    let seed = derive_seed(cfg.seed, stream);
    poses
        .par_iter()
        .enumerate()
        .try_for_each(|(i, pose)| -> Result<(), CliError> {
            let mut rng = stream_rng(seed, i as u64);
            let img = render_depth_jittered(geom, pose, &cfg.camera, cfg.depth_jitter, &mut rng)
                .map_err(|e| match e {
                    SynthError::EmptyImage => CliError::Numeric(format!("{}: frame {i}: {e}", dir.display())),
                    other => other.into(),
                })?;
            img.save_pgm(&dir.join(frame_name(i)))?;
            Ok(())
        })
}

/// Writes the training grid and the test sequence as poses CSV plus
/// 16-bit PGM frames, with intrinsics, geometry, limits and templates.
pub fn cmd_synth(cfg: &RunConfig, out: &Path, force: bool) -> Result<Dataset, CliError> {
    cfg.validate()?;
    prepare_out_dir(out, force)?;
    let geometry = HandGeometry::default();
    let limits = JointLimits::default();
    let (train, test) = dataset_poses(cfg)?;
    write_file(&out.join("intrinsics.kv"), cfg.camera.to_kv())?;
    write_file(&out.join("geometry.kv"), geometry.to_kv())?;
    write_file(&out.join("limits.kv"), limits.to_kv())?;
    write_file(&out.join("articulations.kv"), DEFAULT_TEMPLATES)?;
    write_file(&out.join("config.kv"), cfg.to_kv())?;
    render_split(cfg, &geometry, &train, STREAM_JITTER_TRAIN, &out.join("train"))?;
    render_split(cfg, &geometry, &test, STREAM_JITTER_TEST, &out.join("test"))?;
    info!(
        "synth: {} training frames ({} articulations, {} viewpoints), {} test frames -> {}",
        train.len(),
        cfg.articulations,
        cfg.viewpoints,
        test.len(),
        out.display()
    );
    Dataset::load(out)
}

/// Trains the forest on the dataset's training split and saves it.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<Forest, CliError> {
    let ds = Dataset::load(data)?;
    if ds.train_poses.is_empty() {
        return Err(CliError::Input(format!("{}: training split is empty", data.display())));
    }
    let seed = derive_seed(cfg.seed, STREAM_SAMPLES);
    let mut set = TrainingSet::new();
    for start in (0..ds.train_poses.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(ds.train_poses.len());
        let frames = ds.train_frames(start..end)?;
        set.push_frames(&frames, &cfg.sample, seed);
    }
    info!("train: {} samples from {} frames", set.samples.len(), set.images.len());
    let forest = train_forest(&set, &cfg.forest, derive_seed(cfg.seed, STREAM_FOREST))?;
    for (t, tree) in forest.trees.iter().enumerate() {
        info!("tree {t}: depth {}, {} leaves", tree.depth(), tree.leaf_count());
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_forest(&forest, out)?;
    Ok(forest)
}

fn load_forest_checked(path: &Path) -> Result<Forest, CliError> {
    require(&[path])?;
    Ok(load_forest(path)?)
}

/// Proposals for every test frame.
pub fn cmd_infer(cfg: &RunConfig, data: &Path, forest: &Path, out: &Path) -> Result<Vec<ProposalSet>, CliError> {
    let ds = Dataset::load(data)?;
    let forest = load_forest_checked(forest)?;
    let frames = ds.test_frames()?;
    let sets: Vec<ProposalSet> = frames
        .par_iter()
        .map(|(img, _)| infer_proposals(&forest, img, &cfg.inference))
        .collect::<Result<_, _>>()?;
    let f = fs::File::create(out).map_err(io_err(out))?;
    ProposalSet::write_csv(f, &sets).map_err(csv_err(out))?;
    info!("infer: {} frames, {} proposals -> {}", sets.len(), sets.iter().map(ProposalSet::len).sum::<usize>(), out.display());
    Ok(sets)
}

fn read_proposals(path: &Path, frames: usize) -> Result<Vec<ProposalSet>, CliError> {
    require(&[path])?;
    let f = fs::File::open(path).map_err(io_err(path))?;
    ProposalSet::read_csv(f, frames).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Fits every frame's proposals with the fitter named `mode`; writes the
/// pose trace and the estimated joints.
pub fn cmd_fit(cfg: &RunConfig, data: &Path, proposals: &Path, mode: &str, out: &Path) -> Result<Vec<FitOutput>, CliError> {
    let registry = FitterRegistry::default();
    let fitter = registry.get(mode)?;
    let ds = Dataset::load(data)?;
    let sets = read_proposals(proposals, ds.test_poses.len())?;
    let ctx = ds.fit_context(cfg);
    let fits: Vec<FitOutput> = fit_frames(fitter, &sets, &ctx, derive_seed(cfg.seed, STREAM_FIT))
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| CliError::Numeric(format!("frame {i}: {e}"))))
        .collect::<Result<_, _>>()?;
    create_dir(out)?;
    let p = out.join("poses.csv");
    write_fit_csv(fs::File::create(&p).map_err(io_err(&p))?, &fits).map_err(csv_err(&p))?;
    let j = out.join("joints.csv");
    write_joints_csv(fs::File::create(&j).map_err(io_err(&j))?, &fits).map_err(csv_err(&j))?;
    let evals = fits.iter().map(|f| f.evaluations).sum::<usize>() as f64 / fits.len().max(1) as f64;
    info!("fit: mode {mode}, {} frames, {evals:.0} evals/frame -> {}", fits.len(), out.display());
    Ok(fits)
}

/// Summary numbers of an evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub frames: usize,
    pub mean_error: f64,
    pub fingertip_error: f64,
    pub oracle_error: Option<f64>,
    pub success: Vec<f64>,
}

/// Scores estimated joints against the test ground truth; with proposals,
/// the oracle baseline as well.
pub fn cmd_eval(cfg: &RunConfig, data: &Path, joints: &Path, proposals: Option<&Path>, out: &Path) -> Result<EvalReport, CliError> {
    let ds = Dataset::load(data)?;
    let gt = ds.test_ground_truth()?;
    require(&[joints])?;
    let f = fs::File::open(joints).map_err(io_err(joints))?;
    let mut est = read_joints_csv(f).map_err(|e| CliError::Input(format!("{}: {e}", joints.display())))?;
    if est.len() > gt.len() {
        return Err(EvalError::FrameCount(est.len(), gt.len()).into());
    }
    est.resize(gt.len(), [None; crate::hand_model::NUM_JOINTS]);
    let sentinel = cfg.fit.d_max;
    let results = evaluate_frames(&est, &gt, sentinel)?;
    let curve = success_rate_curve(&results, &cfg.thresholds)?;
    let oracle = match proposals {
        Some(p) => {
            let sets = read_proposals(p, gt.len())?;
            let o: Vec<_> = sets.iter().zip(&gt).map(|(s, g)| oracle_select(s, g)).collect();
            Some(evaluate_frames(&o, &gt, sentinel)?)
        }
        None => None,
    };
    let report = EvalReport {
        frames: results.len(),
        mean_error: mean_joint_error(&results)?,
        fingertip_error: fingertip_error(&results)?,
        oracle_error: oracle.as_deref().map(mean_joint_error).transpose()?,
        success: curve.rates.clone(),
    };
    create_dir(out)?;
    let p = out.join("frame_errors.csv");
    write_frame_errors(fs::File::create(&p).map_err(io_err(&p))?, &results).map_err(csv_err(&p))?;
    let p = out.join("success.csv");
    write_success_curve(fs::File::create(&p).map_err(io_err(&p))?, &curve).map_err(csv_err(&p))?;
    let mut curves = vec![("estimate", &curve)];
    let oracle_curve = oracle.as_deref().map(|o| success_rate_curve(o, &cfg.thresholds)).transpose()?;
    if let Some(c) = &oracle_curve {
        curves.push(("oracle", c));
    }
    write_file(&out.join("success.svg"), success_curve_svg("Frames with all joints within threshold", &curves))?;
    let mut w = KvWriter::new();
    w.entry("frames", report.frames)
        .entry("mean_error_mm", format!("{:.6}", report.mean_error))
        .entry("fingertip_error_mm", format!("{:.6}", report.fingertip_error));
    if let Some(o) = report.oracle_error {
        w.entry("oracle_error_mm", format!("{o:.6}"));
    }
    write_file(&out.join("metrics.kv"), w.finish())?;
    info!(
        "eval: {} frames, mean error {:.2} mm, fingertip error {:.2} mm",
        report.frames, report.mean_error, report.fingertip_error
    );
    Ok(report)
}

/// Votes of every test frame plus everything the sweeps need.
pub fn eval_data(cfg: &RunConfig, ds: &Dataset, forest: &Forest) -> Result<EvalData, CliError> {
    let frames = ds.test_frames()?;
    let votes = frames
        .par_iter()
        .map(|(img, _)| collect_votes(forest, img, &cfg.inference))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalData {
        votes,
        ground_truth: frames.iter().map(|f| f.1).collect(),
        inference: cfg.inference,
        fit: ds.fit_context(cfg),
        thresholds: cfg.thresholds.clone(),
    })
}

/// Sweep seeds derived from the run seed.
pub fn sweep_seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.seeds as u64)
        .map(|i| derive_seed(cfg.seed, STREAM_SWEEP + i))
        .collect()
}

/// Runs the named experiments (all when empty); each gets `rows.csv`,
/// `summary.csv` and `plot.svg` under `out/<name>/`.
pub fn cmd_sweep(cfg: &RunConfig, data: &Path, forest: &Path, experiments: &[String], out: &Path) -> Result<(), CliError> {
    let mut registry = ExperimentRegistry::default();
    registry.register(Box::new(crate::eval::TopNSweep {
        grid: cfg.sweep_top_n.clone(),
    }));
    registry.register(Box::new(crate::eval::KSweep { grid: cfg.sweep_k.clone() }));
    let names: Vec<String> = if experiments.is_empty() {
        registry.names().iter().map(|s| s.to_string()).collect()
    } else {
        experiments.to_vec()
    };
    for n in &names {
        if registry.get(n).is_none() {
            return Err(CliError::Config(format!(
                "unknown experiment {n:?} (known: {})",
                registry.names().join(", ")
            )));
        }
    }
    let ds = Dataset::load(data)?;
    let forest = load_forest_checked(forest)?;
    let data = eval_data(cfg, &ds, &forest)?;
    let seeds = sweep_seeds(cfg);
    create_dir(out)?;
    write_file(&out.join("config.kv"), cfg.to_kv())?;
    for name in &names {
        let exp = registry.get(name).expect("checked above");
        let rows = exp.run(&data, &seeds);
        let summary = summarize(&rows);
        let dir = out.join(name);
        create_dir(&dir)?;
        let p = dir.join("rows.csv");
        write_sweep_csv(fs::File::create(&p).map_err(io_err(&p))?, &rows, &cfg.thresholds).map_err(csv_err(&p))?;
        let p = dir.join("summary.csv");
        write_summary_csv(fs::File::create(&p).map_err(io_err(&p))?, &summary).map_err(csv_err(&p))?;
        let svg = sweep_svg(
            &format!("{name} sweep, mean and standard deviation over {} seeds", seeds.len()),
            exp.x_label(),
            &exp.points(),
            &summary,
            &[
                ("mean_error_mm", "optimised"),
                ("oracle_error_mm", "oracle"),
                ("regression_error_mm", "regression only"),
            ],
        );
        write_file(&dir.join("plot.svg"), svg)?;
        for s in summary.iter().filter(|s| s.metric == "mean_error_mm") {
            info!("sweep {name} {}: {:.2} +- {:.2} mm", s.point, s.mean, s.std);
        }
    }
    Ok(())
}

/// synth, train, infer, fit and eval into `root/run-<config hash>`.
pub fn cmd_pipeline(cfg: &RunConfig, root: &Path, force: bool, sweeps: bool) -> Result<PathBuf, CliError> {
    cfg.validate()?;
    let run = root.join(format!("run-{}", &cfg.hash()[..16]));
    prepare_out_dir(&run, force)?;
    write_file(&run.join("config.kv"), cfg.to_kv())?;
    let data = run.join("data");
    cmd_synth(cfg, &data, false)?;
    let forest = run.join("forest.hfor");
    cmd_train(cfg, &data, &forest)?;
    let proposals = run.join("proposals.csv");
    cmd_infer(cfg, &data, &forest, &proposals)?;
    let fit = run.join("fit");
    cmd_fit(cfg, &data, &proposals, &cfg.fit_mode, &fit)?;
    cmd_eval(cfg, &data, &fit.join("joints.csv"), Some(&proposals), &run.join("eval"))?;
    if sweeps {
        cmd_sweep(cfg, &data, &forest, &[], &run.join("sweeps"))?;
    }
    info!("pipeline: run directory {}", run.display());
    Ok(run)
}

#[derive(Debug, Parser)]
#[command(name = "handfit", version, about = "Hand pose from depth: forest proposals fitted by particle swarm")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Key-value config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Training data scale in (0, 1]; 0.25 gives 2 articulations per finger.
    #[arg(long, global = true)]
    pub scale: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the training grid and the test sequence.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train the forest on a dataset's training split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Joint proposals for every test frame.
    Infer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        forest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit poses to proposals.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        proposals: PathBuf,
        /// stepwise, joint or regression-only (default: fit.mode).
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Errors and success curve of estimated joints.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        joints: PathBuf,
        /// Also score the closest-proposal oracle.
        #[arg(long)]
        proposals: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ablation sweeps over seeds.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        forest: PathBuf,
        /// top-n, k or stepwise-vs-joint; repeatable (default: all).
        #[arg(long)]
        experiment: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// synth, train, infer, fit and eval into a run directory.
    Pipeline {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        /// Run the sweeps as well.
        #[arg(long)]
        sweeps: bool,
    },
}

/// Effective config: file, then `--scale`, then `--set`, then
/// `HANDFIT_SEED`.
pub fn resolve_config(common: &Common, env_seed: Option<&str>) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => {
            require(&[p])?;
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = common.scale {
        cfg.apply_scale(s)?;
    }
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = env_seed {
        cfg.set("seed", seed)
            .map_err(|_| CliError::Config(format!("HANDFIT_SEED={seed:?} is not an unsigned integer")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let env_seed = std::env::var("HANDFIT_SEED").ok();
    let cfg = resolve_config(&cli.common, env_seed.as_deref())?;
    info!("config hash {}", &cfg.hash()[..16]);
    match &cli.command {
        Command::Synth { out, force } => cmd_synth(&cfg, out, *force).map(drop),
        Command::Train { data, out } => cmd_train(&cfg, data, out).map(drop),
        Command::Infer { data, forest, out } => cmd_infer(&cfg, data, forest, out).map(drop),
        Command::Fit { data, proposals, mode, out } => {
            let mode = mode.as_deref().unwrap_or(&cfg.fit_mode);
            cmd_fit(&cfg, data, proposals, mode, out).map(drop)
        }
        Command::Eval { data, joints, proposals, out } => {
            cmd_eval(&cfg, data, joints, proposals.as_deref(), out).map(drop)
        }
        Command::Sweep { data, forest, experiment, out } => cmd_sweep(&cfg, data, forest, experiment, out),
        Command::Pipeline { out, force, sweeps } => cmd_pipeline(&cfg, out, *force, *sweeps).map(drop),
    }
}

/// Parses the process arguments, runs, and maps errors to exit codes.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
