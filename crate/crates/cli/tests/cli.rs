use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::json;

use flame_cli::commands::{self, RunOptions, BEST_CHECKPOINT, FINAL_CHECKPOINT, HISTORY_FILE};
use flame_cli::config::write_json;
use flame_cli::manifest::{read_manifest, sha256_file, MANIFEST_FILE};
use flame_cli::presets::{self, Preset};
use flame_core::evaluation::{MetricKind, MetricSeries};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flamelab"))
}

fn quiet() -> RunOptions {
    RunOptions { quiet: true, ..Default::default() }
}

fn solver(p: usize, beta: f64, dt: f64) -> serde_json::Value {
    json!({"equation": "KS", "beta": beta, "grid": {"dim": 1, "points": p}, "dt_internal": dt / 5.0, "output_interval": dt})
}

/// Generate config on a small grid.
fn small_generate(dir: &Path, seed: u64) -> PathBuf {
    let p = dir.join("generate.json");
    write_json(
        &p,
        &json!({
            "solver": solver(32, 4.0, 0.15),
            "initial_condition": {"kind": "uniform_pointwise", "lo": 0.0, "hi": 0.5, "seed": seed},
            "n_sequences": 3,
            "n_steps": 12
        }),
    )
    .unwrap();
    p
}

fn small_train(dir: &Path, variant: &str, epochs: usize) -> PathBuf {
    let p = dir.join(format!("train_{variant}_{epochs}.json"));
    write_json(
        &p,
        &json!({
            "dataset": "data/dataset.siva",
            "validation_fraction": 0.34,
            "model": {"family": "fno", "d_z": 4, "kappa_max": 4, "n": 4, "variant": variant},
            "train": {"epochs": epochs, "batch_size": 3, "n": 4, "seed": 3, "window_stride": 2, "recurrent": variant == "baseline"}
        }),
    )
    .unwrap();
    p
}

fn small_evaluate(dir: &Path, checkpoint: Option<&str>, steps: usize) -> PathBuf {
    let p = dir.join("evaluate.json");
    write_json(
        &p,
        &json!({
            "checkpoint": checkpoint,
            "solver": solver(32, 4.0, 0.15),
            "initial_condition": {"kind": "uniform_pointwise", "lo": 0.0, "hi": 0.5, "seed": 99},
            "instances": 3,
            "steps": steps
        }),
    )
    .unwrap();
    p
}

#[test]
fn generate_is_seed_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_generate(d.path(), 5);
    let a = commands::generate(&cfg, &d.path().join("a"), &quiet()).unwrap();
    commands::generate(&cfg, &d.path().join("b"), &quiet()).unwrap();
    let opts = RunOptions { seed: Some(6), ..quiet() };
    commands::generate(&cfg, &d.path().join("c"), &opts).unwrap();
    let h = |s: &str| sha256_file(&d.path().join(s).join("dataset.siva")).unwrap();
    assert_eq!(h("a"), h("b"));
    assert_ne!(h("a"), h("c"));
    assert_eq!((a.n_sequences, a.n_steps, a.shape.clone()), (3, 12, vec![32]));
    let m = read_manifest(&d.path().join("a")).unwrap();
    assert_eq!(m.command, "generate");
    assert_eq!(m.outputs[0].sha256, h("a"));
}

#[test]
fn desk_dataset_size() {
    let d = tempfile::tempdir().unwrap();
    let preset = Preset::load("ks1d_beta10_desk").unwrap();
    let cfg = d.path().join("generate.json");
    write_json(&cfg, &preset.generate).unwrap();
    commands::generate(&cfg, &d.path().join("data"), &quiet()).unwrap();
    let len = std::fs::metadata(d.path().join("data/dataset.siva")).unwrap().len();
    // fixed 64-byte header, then 20 sequences of 201 snapshots of 256 doubles
    assert_eq!(len, 64 + 8 * 20 * 201 * 256);
}

#[test]
fn unresolvable_beta_exits_with_config_code() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("g.json");
    write_json(
        &p,
        &json!({
            "solver": solver(16, 9.0, 0.15),
            "initial_condition": {"kind": "uniform_pointwise", "lo": 0.0, "hi": 0.03},
            "n_sequences": 1, "n_steps": 1
        }),
    )
    .unwrap();
    let out = bin().args(["generate", "--config"]).arg(&p).arg("--out").arg(d.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta"));
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let run = |args: &[&str], cfg: &Path| bin().args(args).arg("--config").arg(cfg).arg("--out").arg(d.path().join("o")).output().unwrap();
    // missing file
    assert_eq!(run(&["generate"], &d.path().join("none.json")).status.code(), Some(4));
    // unknown field, reported by name
    let bad = d.path().join("bad.json");
    std::fs::write(&bad, r#"{"solver": {}, "bogus": 1}"#).unwrap();
    let out = run(&["generate"], &bad);
    assert_eq!(out.status.code(), Some(2));
    // blow-up while generating
    let blow = d.path().join("blow.json");
    write_json(
        &blow,
        &json!({
            "solver": {"equation": "KS", "beta": 10.0, "grid": {"dim": 1, "points": 64}, "dt_internal": 1.5, "output_interval": 1.5},
            "initial_condition": {"kind": "uniform_pointwise", "lo": -300.0, "hi": 300.0, "seed": 1},
            "n_sequences": 1, "n_steps": 50
        }),
    )
    .unwrap();
    let out = run(&["generate"], &blow);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    // usage errors come from the flag parser
    assert_eq!(bin().arg("train").output().unwrap().status.code(), Some(2));
}

fn pipeline(d: &Path) {
    commands::generate(&small_generate(d, 5), &d.join("data"), &quiet()).unwrap();
}

#[test]
fn resume_matches_an_unbroken_run() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path());
    let full = small_train(d.path(), "default", 3);
    let s = commands::train(&full, &d.path().join("full"), &quiet()).unwrap();
    assert_eq!(s.epochs, 3);

    let short = small_train(d.path(), "default", 1);
    let broken = d.path().join("broken");
    commands::train(&short, &broken, &quiet()).unwrap();
    // a second fresh run into the same directory is refused
    assert_eq!(commands::train(&short, &broken, &quiet()).unwrap_err().code, 2);
    commands::train(&full, &broken, &RunOptions { resume: true, ..quiet() }).unwrap();
    for f in [FINAL_CHECKPOINT, BEST_CHECKPOINT, HISTORY_FILE] {
        let a = std::fs::read(d.path().join("full").join(f)).unwrap();
        let b = std::fs::read(broken.join(f)).unwrap();
        assert!(a == b, "{f} differs after resume");
    }
    let history = std::fs::read_to_string(broken.join(HISTORY_FILE)).unwrap();
    assert_eq!(history.lines().count(), 1 + 3);
    assert!(read_manifest(&broken).unwrap().resumed);
}

#[test]
fn baseline_runs_as_single_step_model() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path());
    let cfg = small_train(d.path(), "baseline", 2);
    let s = commands::train(&cfg, &d.path().join("fno"), &quiet()).unwrap();
    assert_eq!(s.kind, "fno");
    let ck = flame_core::operators::Checkpoint::load(&d.path().join("fno").join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(ck.model().unwrap().n(), 1);
}

#[test]
fn solver_self_evaluation_has_zero_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_evaluate(d.path(), None, 6);
    let s = commands::evaluate(&cfg, &d.path().join("eval"), &quiet()).unwrap();
    assert_eq!(s.kind, "solver");
    assert_eq!(s.final_error, 0.0);
    assert_eq!(s.autocorrelation_max_deviation, Some(0.0));
    let e = MetricSeries::read_csv(std::io::BufReader::new(std::fs::File::open(d.path().join("eval/error_curve.csv")).unwrap()), MetricKind::ErrorCurve).unwrap();
    assert_eq!(e.len(), 7);
    assert!(e.values.iter().all(|&v| v == 0.0));
    assert_eq!(e.n_ensemble, 3);

    let cfg = small_evaluate(d.path(), None, 0);
    let s = commands::evaluate(&cfg, &d.path().join("eval0"), &quiet()).unwrap();
    assert_eq!((s.steps, s.final_error), (0, 0.0));
}

#[test]
fn manifests_chain_through_the_pipeline() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path());
    let tcfg = small_train(d.path(), "default", 1);
    commands::train(&tcfg, &d.path().join("kfno"), &quiet()).unwrap();
    let ecfg = small_evaluate(d.path(), Some("kfno/checkpoint_final.flck"), 5);
    let s = commands::evaluate(&ecfg, &d.path().join("eval"), &quiet()).unwrap();
    assert_eq!(s.kind, "kfno");
    let gen_hash = sha256_file(&d.path().join("data").join(MANIFEST_FILE)).unwrap();
    let train_m = read_manifest(&d.path().join("kfno")).unwrap();
    assert_eq!(train_m.parents, vec![gen_hash]);
    let train_hash = sha256_file(&d.path().join("kfno").join(MANIFEST_FILE)).unwrap();
    assert_eq!(read_manifest(&d.path().join("eval")).unwrap().parents, vec![train_hash]);

    // a protocol at another snapshot spacing is refused
    let bad = d.path().join("bad_eval.json");
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&ecfg).unwrap()).unwrap();
    v["solver"] = solver(32, 4.0, 0.3);
    write_json(&bad, &v).unwrap();
    assert_eq!(commands::evaluate(&bad, &d.path().join("e2"), &quiet()).unwrap_err().code, 2);
}

#[test]
fn plots_are_deterministic_and_validate_input() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_evaluate(d.path(), None, 4);
    commands::evaluate(&cfg, &d.path().join("solver"), &quiet()).unwrap();
    let csvs: Vec<PathBuf> = commands::EVALUATION_FILES.iter().map(|f| d.path().join("solver").join(f)).collect();
    let a = commands::plot(&csvs, &d.path().join("figs_a")).unwrap();
    let b = commands::plot(&csvs, &d.path().join("figs_b")).unwrap();
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let err_svg = std::fs::read_to_string(d.path().join("figs_a/error_curve.svg")).unwrap();
    assert!(err_svg.contains(">solver<") && err_svg.contains(">reference pair<"));

    let empty = d.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(commands::plot(&[empty], &d.path().join("f")).unwrap_err().code, 2);
    let broken = d.path().join("error_curve.csv");
    std::fs::write(&broken, "axis,value,n_ensemble\n0,0,1\n0.15,oops,1\n").unwrap();
    let e = commands::plot(&[broken], &d.path().join("f")).unwrap_err();
    assert!(e.message.contains("line 3"), "{e}");
}

#[test]
fn presets_load_and_write() {
    let d = tempfile::tempdir().unwrap();
    for name in presets::names() {
        let p = Preset::load(name).unwrap();
        assert_eq!(p.name, name);
        p.generate.solver.validate().unwrap();
        for (kind, m) in &p.models {
            let model = flame_core::operators::Model::new(m.model.clone(), p.generate.solver.grid).unwrap();
            assert_eq!(model.config().kind(), kind.as_str());
            m.train.validate(&model).unwrap();
        }
        let files = p.write(&d.path().join(name)).unwrap();
        assert_eq!(files.len(), 2 + 2 * p.models.len());
    }
    assert!(Preset::load("nope").is_err());
}

