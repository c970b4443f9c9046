use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use handfit::cli::*;

/// A configuration that runs the whole pipeline in a few seconds.
fn tiny() -> RunConfig {
    let mut cfg = RunConfig::default();
    for kv in [
        "seed=7",
        "data.articulations=2",
        "data.viewpoints=1",
        "data.test_keyposes=2",
        "data.frames_between=8",
        "data.subsample=2",
        "forest.num_trees=2",
        "forest.max_depth=10",
        "forest.min_samples=10",
        "forest.candidates=40",
        "pso.palm_particles=10",
        "pso.palm_generations=10",
        "pso.finger_particles=8",
        "pso.finger_generations=8",
        "pso.joint_particles=12",
        "pso.joint_generations=12",
        "eval.seeds=2",
        "sweep.top_n=25,200",
        "sweep.k=1,3",
    ] {
        cfg.apply_override(kv).unwrap();
    }
    cfg
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn pipeline_is_deterministic_from_an_empty_directory() {
    let cfg = tiny();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run_a = cmd_pipeline(&cfg, a.path(), false, false).unwrap();
    let run_b = cmd_pipeline(&cfg, b.path(), false, false).unwrap();
    assert_eq!(run_a.file_name(), run_b.file_name());
    let (ta, tb) = (tree(&run_a), tree(&run_b));
    for f in [
        "config.kv",
        "forest.hfor",
        "proposals.csv",
        "fit/poses.csv",
        "fit/joints.csv",
        "eval/frame_errors.csv",
        "eval/success.csv",
        "eval/success.svg",
        "eval/metrics.kv",
        "data/train/poses.csv",
        "data/test/00000.pgm",
    ] {
        assert!(ta.contains_key(Path::new(f)), "missing {f}");
    }
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{} differs", k.display());
    }

    // the run directory is refused the second time without --force
    let err = cmd_pipeline(&cfg, a.path(), false, false).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    cmd_pipeline(&cfg, a.path(), true, false).unwrap();
}

#[test]
fn commands_chain_and_sweeps() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ds = cmd_synth(&cfg, &data, false).unwrap();
    assert_eq!(ds.train_poses.len(), 32);
    assert!(ds.test_poses.len() >= 5);
    let forest = dir.path().join("forest.hfor");
    cmd_train(&cfg, &data, &forest).unwrap();
    let props = dir.path().join("proposals.csv");
    let sets = cmd_infer(&cfg, &data, &forest, &props).unwrap();
    assert_eq!(sets.len(), ds.test_poses.len());
    for mode in ["stepwise", "joint", "regression-only"] {
        let out = dir.path().join(mode);
        let fits = cmd_fit(&cfg, &data, &props, mode, &out).unwrap();
        assert_eq!(fits.len(), sets.len());
        let report = cmd_eval(&cfg, &data, &out.join("joints.csv"), Some(&props), &out.join("eval")).unwrap();
        assert_eq!(report.frames, sets.len());
        assert!(report.mean_error.is_finite());
        assert!(report.success.windows(2).all(|w| w[1] >= w[0]));
    }
    let err = cmd_fit(&cfg, &data, &props, "simulated-annealing", &dir.path().join("x")).unwrap_err();
    assert_eq!(err.exit_code(), 2);

    let sweeps = dir.path().join("sweeps");
    cmd_sweep(&cfg, &data, &forest, &["k".to_string()], &sweeps).unwrap();
    let rows = fs::read_to_string(sweeps.join("k/rows.csv")).unwrap();
    // header plus 2 points x 2 seeds
    assert_eq!(rows.lines().count(), 5);
    assert!(sweeps.join("k/summary.csv").exists());
    assert!(fs::read_to_string(sweeps.join("k/plot.svg")).unwrap().starts_with("<svg"));
    let err = cmd_sweep(&cfg, &data, &forest, &["nope".to_string()], &sweeps).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn bad_inputs_are_reported() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_synth(&cfg, &data, false).unwrap();

    let err = cmd_synth(&cfg, &data, false).unwrap_err();
    assert_eq!(err.exit_code(), 2);

    let props = dir.path().join("bad.csv");
    fs::write(&props, "frame,joint,x,y,z,confidence\n0,0,1,2,3,1\n0,1,1,2,oops,1\n").unwrap();
    let err = cmd_fit(&cfg, &data, &props, "stepwise", &dir.path().join("fit")).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("line 3"), "{err}");

    fs::write(&props, "frame,joint,x,y,z\n0,0,1,2,3\n").unwrap();
    let err = cmd_fit(&cfg, &data, &props, "stepwise", &dir.path().join("fit")).unwrap_err();
    assert!(err.to_string().contains("line 1"), "{err}");

    let err = cmd_train(&cfg, &dir.path().join("absent"), &dir.path().join("f.hfor")).unwrap_err();
    assert_eq!(err.exit_code(), 3);

    let err = cmd_infer(&cfg, &data, &dir.path().join("absent.hfor"), &dir.path().join("p.csv")).unwrap_err();
    assert_eq!(err.exit_code(), 3);

    fs::write(dir.path().join("junk.hfor"), b"HFOR\x01\x00").unwrap();
    let err = cmd_infer(&cfg, &data, &dir.path().join("junk.hfor"), &dir.path().join("p.csv")).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("byte"), "{err}");
}

fn handfit(args: &[&str], seed: Option<&str>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_handfit"));
    cmd.args(args).env("RUST_LOG", "warn");
    match seed {
        Some(s) => cmd.env("HANDFIT_SEED", s),
        None => cmd.env_remove("HANDFIT_SEED"),
    };
    cmd.output().unwrap()
}

#[test]
fn binary_exit_codes_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();

    let out = handfit(&["--set", "forest.nonsense=1", "synth", "--out", d], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("forest.nonsense"));

    let out = handfit(&["train", "--data", &format!("{d}/none"), "--out", &format!("{d}/f.hfor")], None);
    assert_eq!(out.status.code(), Some(3));

    let out = handfit(&["synth", "--out", d], Some("not-a-number"));
    assert_eq!(out.status.code(), Some(2));

    let cfg = dir.path().join("c.kv");
    fs::write(&cfg, tiny().to_kv()).unwrap();
    let c = cfg.to_str().unwrap();
    let a = format!("{d}/a");
    let out = handfit(&["--config", c, "synth", "--out", &a], Some("123"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let written = fs::read_to_string(dir.path().join("a/config.kv")).unwrap();
    assert!(written.lines().any(|l| l.replace(' ', "") == "seed=123"), "{written}");
}

#[test]
fn scale_and_overrides_compose() {
    let common = Common {
        config: None,
        overrides: vec!["infer.k=5".into()],
        threads: None,
        scale: Some(0.25),
    };
    let cfg = resolve_config(&common, Some("42")).unwrap();
    assert_eq!(cfg.articulations, 2);
    assert_eq!(cfg.inference.k, 5);
    assert_eq!(cfg.seed, 42);
    let (train, test) = dataset_poses(&cfg).unwrap();
    assert_eq!(train.len(), 224);
    assert_eq!(test.len(), 101);
}
