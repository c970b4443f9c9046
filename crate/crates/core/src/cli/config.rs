//! The run configuration: every tunable under a flat dotted key.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::depth_synth::CameraIntrinsics;
use crate::forest::{ForestConfig, InferenceConfig, MeanShiftParams, SampleConfig};
use crate::kv::{KvDoc, KvError, KvWriter};
use crate::optimizer::{Budget, FitSettings};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    Unknown(String),
    #[error("config key `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("override {0:?} is not `key=value`")]
    Override(String),
    #[error(transparent)]
    Kv(#[from] KvError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Training templates used per finger (1 to 4).
    pub articulations: usize,
    pub viewpoints: usize,
    /// Palm root position of training poses and centre of test keyposes, mm.
    pub center: [f64; 3],
    pub test_keyposes: usize,
    pub frames_between: usize,
    pub subsample: usize,
    pub depth_jitter: f64,
    pub camera: CameraIntrinsics,
    pub forest: ForestConfig,
    pub sample: SampleConfig,
    pub inference: InferenceConfig,
    pub fit: FitSettings,
    pub fit_mode: String,
    pub thresholds: Vec<f64>,
    pub seeds: usize,
    pub sweep_top_n: Vec<usize>,
    pub sweep_k: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            articulations: 4,
            viewpoints: 7,
            center: [0.0, 60.0, 550.0],
            test_keyposes: 11,
            frames_between: 50,
            subsample: 5,
            depth_jitter: 0.0,
            camera: CameraIntrinsics::default(),
            forest: ForestConfig::default(),
            sample: SampleConfig::default(),
            inference: InferenceConfig::default(),
            fit: FitSettings::default(),
            fit_mode: "stepwise".into(),
            thresholds: crate::eval::default_thresholds(),
            seeds: 5,
            sweep_top_n: vec![25, 50, 100, 200, 400],
            sweep_k: vec![1, 2, 3, 5],
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.trim().parse().map_err(|_| ConfigError::Value {
        key: key.into(),
        msg: format!("cannot parse {v:?}"),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, ConfigError> {
    let out: Vec<T> = v
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err(ConfigError::Value {
            key: key.into(),
            msg: "empty list".into(),
        });
    }
    Ok(out)
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(ConfigError::Value {
            key: key.into(),
            msg: format!("expected true or false, got {v:?}"),
        }),
    }
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_kv(&KvDoc::load(path)?)
    }

    /// Defaults overridden by every key of `doc`.
    pub fn from_kv(doc: &KvDoc) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for key in doc.keys() {
            cfg.set(key, doc.raw(key).unwrap_or_default())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value`.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| ConfigError::Override(spec.into()))?;
        self.set(k.trim(), v.trim())
    }

    /// Articulations per finger for a data scale: 4 * sqrt(scale), so the
    /// number of combinations scales roughly with `scale^(5/2)`; 0.25 gives
    /// 2 articulations (224 training poses).
    pub fn apply_scale(&mut self, scale: f64) -> Result<(), ConfigError> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(ConfigError::Value {
                key: "scale".into(),
                msg: format!("must be in (0, 1], got {scale}"),
            });
        }
        self.articulations = ((4.0 * scale.sqrt()).round() as usize).clamp(1, 4);
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let f = &mut self.forest;
        let inf = &mut self.inference;
        let fit = &mut self.fit;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "data.articulations" => self.articulations = parse(key, v)?,
            "data.viewpoints" => self.viewpoints = parse(key, v)?,
            "data.center_x" => self.center[0] = parse(key, v)?,
            "data.center_y" => self.center[1] = parse(key, v)?,
            "data.center_z" => self.center[2] = parse(key, v)?,
            "data.test_keyposes" => self.test_keyposes = parse(key, v)?,
            "data.frames_between" => self.frames_between = parse(key, v)?,
            "data.subsample" => self.subsample = parse(key, v)?,
            "data.depth_jitter" => self.depth_jitter = parse(key, v)?,
            "camera.fx" => self.camera.fx = parse(key, v)?,
            "camera.fy" => self.camera.fy = parse(key, v)?,
            "camera.cx" => self.camera.cx = parse(key, v)?,
            "camera.cy" => self.camera.cy = parse(key, v)?,
            "camera.width" => self.camera.width = parse(key, v)?,
            "camera.height" => self.camera.height = parse(key, v)?,
            "forest.num_trees" => f.num_trees = parse(key, v)?,
            "forest.max_depth" => f.max_depth = parse(key, v)?,
            "forest.min_samples" => f.min_samples = parse(key, v)?,
            "forest.node_subsample_size" => f.node_subsample_size = parse(key, v)?,
            "forest.candidates" => f.candidates = parse(key, v)?,
            "forest.probe_range" => f.probe_range = parse(key, v)?,
            "forest.threshold_range" => f.threshold_range = parse(key, v)?,
            "forest.background_depth" => f.background_depth = parse(key, v)?,
            "forest.leaf_modes" => f.leaf_modes = parse(key, v)?,
            "forest.leaf_bandwidth" => f.leaf_bandwidth = parse(key, v)?,
            "forest.leaf_max_points" => f.leaf_max_points = parse(key, v)?,
            "forest.sample_stride" => self.sample.stride = parse(key, v)?,
            "forest.samples_per_image" => self.sample.max_per_image = parse(key, v)?,
            "infer.stride" => inf.stride = parse(key, v)?,
            "infer.top_n" => inf.top_n = parse(key, v)?,
            "infer.k" => inf.k = parse(key, v)?,
            "infer.bandwidth" => inf.mean_shift.bandwidth = parse(key, v)?,
            "infer.merge_radius" => inf.mean_shift.merge_radius = parse(key, v)?,
            "infer.max_iters" => inf.mean_shift.max_iters = parse(key, v)?,
            "infer.depth_weighting" => inf.depth_weighting = parse_bool(key, v)?,
            "infer.leaf_fraction" => inf.leaf_fraction = parse_bool(key, v)?,
            "infer.max_offset" => inf.max_offset = parse(key, v)?,
            "pso.d_max" => fit.d_max = parse(key, v)?,
            "pso.inertia" => fit.inertia = parse(key, v)?,
            "pso.cognitive" => fit.cognitive = parse(key, v)?,
            "pso.social" => fit.social = parse(key, v)?,
            "pso.palm_particles" => fit.palm.particles = parse(key, v)?,
            "pso.palm_generations" => fit.palm.generations = parse(key, v)?,
            "pso.finger_particles" => fit.finger.particles = parse(key, v)?,
            "pso.finger_generations" => fit.finger.generations = parse(key, v)?,
            "pso.joint_particles" => fit.joint.particles = parse(key, v)?,
            "pso.joint_generations" => fit.joint.generations = parse(key, v)?,
            "pso.translation_margin" => fit.translation_margin = parse(key, v)?,
            "fit.mode" => self.fit_mode = v.trim().to_string(),
            "eval.thresholds" => self.thresholds = parse_list(key, v)?,
            "eval.seeds" => self.seeds = parse(key, v)?,
            "sweep.top_n" => self.sweep_top_n = parse_list(key, v)?,
            "sweep.k" => self.sweep_k = parse_list(key, v)?,
            _ => return Err(ConfigError::Unknown(key.into())),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let f = &self.forest;
        let inf = &self.inference;
        let fit = &self.fit;
        let g = |x: f64| format!("{x:?}");
        vec![
            ("seed", self.seed.to_string()),
            ("data.articulations", self.articulations.to_string()),
            ("data.viewpoints", self.viewpoints.to_string()),
            ("data.center_x", g(self.center[0])),
            ("data.center_y", g(self.center[1])),
            ("data.center_z", g(self.center[2])),
            ("data.test_keyposes", self.test_keyposes.to_string()),
            ("data.frames_between", self.frames_between.to_string()),
            ("data.subsample", self.subsample.to_string()),
            ("data.depth_jitter", g(self.depth_jitter)),
            ("camera.fx", g(self.camera.fx)),
            ("camera.fy", g(self.camera.fy)),
            ("camera.cx", g(self.camera.cx)),
            ("camera.cy", g(self.camera.cy)),
            ("camera.width", self.camera.width.to_string()),
            ("camera.height", self.camera.height.to_string()),
            ("forest.num_trees", f.num_trees.to_string()),
            ("forest.max_depth", f.max_depth.to_string()),
            ("forest.min_samples", f.min_samples.to_string()),
            ("forest.node_subsample_size", f.node_subsample_size.to_string()),
            ("forest.candidates", f.candidates.to_string()),
            ("forest.probe_range", g(f.probe_range)),
            ("forest.threshold_range", g(f.threshold_range)),
            ("forest.background_depth", g(f.background_depth)),
            ("forest.leaf_modes", f.leaf_modes.to_string()),
            ("forest.leaf_bandwidth", g(f.leaf_bandwidth)),
            ("forest.leaf_max_points", f.leaf_max_points.to_string()),
            ("forest.sample_stride", self.sample.stride.to_string()),
            ("forest.samples_per_image", self.sample.max_per_image.to_string()),
            ("infer.stride", inf.stride.to_string()),
            ("infer.top_n", inf.top_n.to_string()),
            ("infer.k", inf.k.to_string()),
            ("infer.bandwidth", g(inf.mean_shift.bandwidth)),
            ("infer.merge_radius", g(inf.mean_shift.merge_radius)),
            ("infer.max_iters", inf.mean_shift.max_iters.to_string()),
            ("infer.depth_weighting", inf.depth_weighting.to_string()),
            ("infer.leaf_fraction", inf.leaf_fraction.to_string()),
            ("infer.max_offset", g(inf.max_offset)),
            ("pso.d_max", g(fit.d_max)),
            ("pso.inertia", g(fit.inertia)),
            ("pso.cognitive", g(fit.cognitive)),
            ("pso.social", g(fit.social)),
            ("pso.palm_particles", fit.palm.particles.to_string()),
            ("pso.palm_generations", fit.palm.generations.to_string()),
            ("pso.finger_particles", fit.finger.particles.to_string()),
            ("pso.finger_generations", fit.finger.generations.to_string()),
            ("pso.joint_particles", fit.joint.particles.to_string()),
            ("pso.joint_generations", fit.joint.generations.to_string()),
            ("pso.translation_margin", g(fit.translation_margin)),
            ("fit.mode", self.fit_mode.clone()),
            ("eval.thresholds", join(&self.thresholds)),
            ("eval.seeds", self.seeds.to_string()),
            ("sweep.top_n", join(&self.sweep_top_n)),
            ("sweep.k", join(&self.sweep_k)),
        ]
    }

    pub fn to_kv(&self) -> String {
        let mut w = KvWriter::new();
        w.comment("handfit run configuration");
        for (k, v) in self.entries() {
            w.entry(k, v);
        }
        w.finish()
    }

    /// SHA-256 of the canonical text, hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_kv().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: &str| {
            Err(ConfigError::Value {
                key: key.into(),
                msg: msg.into(),
            })
        };
        if !(1..=4).contains(&self.articulations) {
            return bad("data.articulations", "must be between 1 and 4");
        }
        if !(1..=7).contains(&self.viewpoints) {
            return bad("data.viewpoints", "must be between 1 and 7");
        }
        if self.test_keyposes < 2 {
            return bad("data.test_keyposes", "need at least 2");
        }
        if self.frames_between == 0 || self.subsample == 0 {
            return bad("data.frames_between", "frames_between and subsample must be positive");
        }
        if self.camera.validate().is_err() {
            return bad("camera", "focal lengths and image size must be positive");
        }
        if self.forest.num_trees == 0 {
            return bad("forest.num_trees", "must be positive");
        }
        if self.forest.leaf_modes == 0 || self.forest.leaf_modes > 255 {
            return bad("forest.leaf_modes", "must be between 1 and 255");
        }
        if !(self.forest.leaf_bandwidth > 0.0) || !(self.inference.mean_shift.bandwidth > 0.0) {
            return bad("infer.bandwidth", "bandwidths must be positive");
        }
        if !(self.inference.max_offset > 0.0) {
            return bad("infer.max_offset", "must be positive (inf disables the cut)");
        }
        if self.inference.k == 0 || self.inference.top_n == 0 {
            return bad("infer.k", "k and top_n must be positive");
        }
        if !(self.fit.d_max > 0.0) {
            return bad("pso.d_max", "must be positive");
        }
        let budgets: [(&str, Budget); 3] = [
            ("pso.palm_particles", self.fit.palm),
            ("pso.finger_particles", self.fit.finger),
            ("pso.joint_particles", self.fit.joint),
        ];
        for (k, b) in budgets {
            if b.particles < 2 {
                return bad(k, "need at least 2 particles");
            }
        }
        if self.thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
            return bad("eval.thresholds", "must be ascending");
        }
        if self.seeds == 0 {
            return bad("eval.seeds", "must be positive");
        }
        if self.sweep_k.contains(&0) || self.sweep_top_n.contains(&0) {
            return bad("sweep.k", "sweep values must be positive");
        }
        Ok(())
    }

    pub fn mean_shift(&self) -> MeanShiftParams {
        self.inference.mean_shift
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_kv(&KvDoc::parse(&cfg.to_kv()).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn every_entry_is_settable() {
        let mut cfg = RunConfig::default();
        for (k, v) in RunConfig::default().entries() {
            cfg.set(k, &v).unwrap();
        }
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::from_kv(&KvDoc::parse("forest.depth = 3\n").unwrap()).unwrap_err();
        assert!(matches!(err, ConfigError::Unknown(k) if k == "forest.depth"));
    }

    #[test]
    fn overrides_and_scale() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("infer.k = 5").unwrap();
        assert_eq!(cfg.inference.k, 5);
        assert!(cfg.apply_override("infer.k").is_err());
        cfg.apply_scale(0.25).unwrap();
        assert_eq!(cfg.articulations, 2);
        cfg.apply_scale(1.0).unwrap();
        assert_eq!(cfg.articulations, 4);
        assert_ne!(RunConfig::default().hash(), cfg.hash());
    }

    #[test]
    fn published_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.forest.max_depth, 23);
        assert_eq!(cfg.forest.min_samples, 40);
        assert_eq!(cfg.forest.num_trees, 3);
        assert_eq!(cfg.inference.top_n, 200);
        assert_eq!(cfg.inference.k, 3);
    }
}
