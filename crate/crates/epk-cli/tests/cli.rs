//! End-to-end tests of the `epk` binary: artifact layout, exit codes,
//! determinism across reruns and worker counts, and the config override
//! surface.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_epk");

fn epk(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("EPK_OUT_ROOT")
        .output()
        .expect("spawn epk")
}

fn run_ok(args: &[&str]) -> String {
    let out = epk(args);
    assert!(
        out.status.success(),
        "epk {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn exit_code(args: &[&str]) -> (i32, String) {
    let out = epk(args);
    let code = out.status.code().expect("exit code");
    (code, String::from_utf8_lossy(&out.stderr).into_owned())
}

fn bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Manifest text with the one runtime-dependent field removed.
fn manifest_modulo_walltime(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("wall_time_ms"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&bytes(path)).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Shared tiny MLP run (40 steps, 178 params) trained once per test binary.
fn mlp_run() -> &'static PathBuf {
    static RUN: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    let (_, path) = RUN.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let run = dir.path().join("run");
        run_ok(&[
            "train",
            "--preset",
            "desk_mlp",
            "--steps",
            "40",
            "--n_train",
            "64",
            "--n_test",
            "32",
            "--out",
            run.to_str().unwrap(),
        ]);
        (dir, run)
    });
    path
}

/// Shared tiny modular-addition run (30 steps) for the analyses that need
/// token data.
fn modadd_run() -> &'static PathBuf {
    static RUN: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    let (_, path) = RUN.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let run = dir.path().join("run");
        run_ok(&[
            "train",
            "--preset",
            "desk_transformer",
            "--steps",
            "30",
            "--out",
            run.to_str().unwrap(),
        ]);
        (dir, run)
    });
    path
}

#[test]
fn train_writes_artifacts_and_reruns_byte_identically() {
    let dir = TempDir::new().unwrap();
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    let args = |out: &Path| {
        vec![
            "train".to_string(),
            "--preset".into(),
            "desk_mlp".into(),
            "--steps".into(),
            "25".into(),
            "--n_train".into(),
            "48".into(),
            "--n_test".into(),
            "24".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    for out in [&out1, &out2] {
        let argv = args(out);
        run_ok(&argv.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    }

    for name in ["trajectory.bin", "curves.csv", "config.json", "manifest.json"] {
        assert!(out1.join(name).exists(), "missing {name}");
    }
    // Feature-vector data has no CSV form; only token datasets get one.
    assert!(!out1.join("dataset.csv").exists());

    assert_eq!(bytes(&out1.join("trajectory.bin")), bytes(&out2.join("trajectory.bin")));
    assert_eq!(bytes(&out1.join("curves.csv")), bytes(&out2.join("curves.csv")));
    assert_eq!(bytes(&out1.join("config.json")), bytes(&out2.join("config.json")));
    assert_eq!(
        manifest_modulo_walltime(&out1.join("manifest.json")),
        manifest_modulo_walltime(&out2.join("manifest.json"))
    );
}

#[test]
fn exported_dataset_reimports_to_the_same_trajectory() {
    let run = modadd_run();
    let csv = run.join("dataset.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("a,b,label,split\n"), "unexpected header: {}", &text[..40]);

    let dir = TempDir::new().unwrap();
    let out = dir.path().join("reimport");
    run_ok(&[
        "train",
        "--preset",
        "desk_transformer",
        "--steps",
        "30",
        "--data",
        csv.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(bytes(&run.join("trajectory.bin")), bytes(&out.join("trajectory.bin")));

    // The imported CSV is recorded as a manifest input with its digest.
    let manifest = json(&out.join("manifest.json"));
    let inputs = manifest["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 1);
    assert!(inputs[0]["path"].as_str().unwrap().ends_with("dataset.csv"));
    assert_eq!(inputs[0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn linear_model_reconstructs_exactly_at_one_integration_node() {
    let dir = TempDir::new().unwrap();
    let run = dir.path().join("lin");
    let verify = dir.path().join("v");
    run_ok(&[
        "train",
        "--preset",
        "desk_mlp",
        "--model_kind",
        "linear",
        "--steps",
        "20",
        "--n_train",
        "32",
        "--n_test",
        "16",
        "--out",
        run.to_str().unwrap(),
    ]);
    run_ok(&[
        "epk-verify",
        "--run",
        run.to_str().unwrap(),
        "--T",
        "1",
        "--out",
        verify.to_str().unwrap(),
    ]);
    let report = json(&verify.join("fidelity.json"));
    assert_eq!(report["replay"]["identical"], serde_json::Value::Bool(true));
    assert!(report["update_check"]["max_rel_err"].as_f64().unwrap() < 1e-9);
    let fid = &report["fidelity"][0];
    assert_eq!(fid["t"].as_u64(), Some(1));
    assert_eq!(fid["agreement"].as_f64(), Some(1.0));
    assert!(
        fid["max_abs_diff"].as_f64().unwrap() < 1e-9,
        "constant-Jacobian path should integrate exactly: {fid}"
    );
}

#[test]
fn exit_codes_follow_the_contract() {
    // Validation problems exit 1.
    let (code, err) = exit_code(&["train", "--preset", "nope", "--out", "/tmp/unused"]);
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("desk_transformer"), "should list presets: {err}");

    let (code, err) = exit_code(&["train", "--preset", "desk_mlp", "--bogus_key", "5"]);
    assert_eq!(code, 1, "{err}");

    let (code, _) = exit_code(&["scores"]); // no --run at all
    assert_eq!(code, 1);

    let (code, err) = exit_code(&[
        "kernel-matrix",
        "--run",
        mlp_run().to_str().unwrap(),
        "--component",
        "nope",
        "--out",
        "/tmp/unused_km",
    ]);
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("linear1"), "should list components: {err}");

    let (code, _) = exit_code(&["--workers", "0", "report", "--run", mlp_run().to_str().unwrap()]);
    assert_eq!(code, 1);

    // Missing inputs exit 2.
    let (code, err) = exit_code(&["scores", "--run", "/tmp/no_such_run_dir"]);
    assert_eq!(code, 2, "{err}");

    let (code, _) = exit_code(&["train", "--config", "/tmp/no_such_config.json"]);
    assert_eq!(code, 2);

    let (code, _) = exit_code(&[
        "train",
        "--preset",
        "desk_transformer",
        "--data",
        "/tmp/no_such_data.csv",
        "--out",
        "/tmp/unused_data",
    ]);
    assert_eq!(code, 2);

    // A truncated trajectory is a broken input, not a validation problem.
    let dir = TempDir::new().unwrap();
    let broken = dir.path().join("broken");
    std::fs::create_dir(&broken).unwrap();
    std::fs::copy(mlp_run().join("config.json"), broken.join("config.json")).unwrap();
    let full = bytes(&mlp_run().join("trajectory.bin"));
    std::fs::write(broken.join("trajectory.bin"), &full[..full.len() / 2]).unwrap();
    let (code, err) = exit_code(&["scores", "--run", broken.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");

    // Help and version are successes.
    let (code, _) = exit_code(&["--help"]);
    assert_eq!(code, 0);
    let (code, _) = exit_code(&["--version"]);
    assert_eq!(code, 0);
}

#[test]
fn seed_and_t_flags_map_into_the_config() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("seeded");
    run_ok(&[
        "train",
        "--preset",
        "desk_mlp",
        "--steps",
        "5",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    let cfg = json(&out.join("config.json"));
    assert_eq!(cfg["init_seed"].as_u64(), Some(5));
    assert_eq!(cfg["batch_seed"].as_u64(), Some(6));
    assert_eq!(cfg["data_seed"].as_u64(), Some(7));

    let scored = dir.path().join("scored");
    run_ok(&[
        "scores",
        "--run",
        out.to_str().unwrap(),
        "--T",
        "7",
        "--out",
        scored.to_str().unwrap(),
    ]);
    let manifest = json(&scored.join("manifest.json"));
    assert_eq!(manifest["config"]["integration_steps"].as_u64(), Some(7));
}

#[test]
fn override_spellings_and_lists_are_accepted() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("ov");
    run_ok(&[
        "train",
        "--preset",
        "desk_mlp",
        "--steps",
        "5",
        "--train-fraction", // hyphens normalize to the underscore key
        "0.8",
        "--hidden",
        "8,4",
        "--reinit_seeds",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    let cfg = json(&out.join("config.json"));
    assert_eq!(cfg["train_fraction"].as_f64(), Some(0.8));
    assert_eq!(cfg["hidden"], serde_json::json!([8, 4]));
    assert_eq!(cfg["reinit_seeds"], serde_json::json!([9]));
}

#[test]
fn out_root_env_provides_the_default_output_dir() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(BIN)
        .args(["report", "--run", mlp_run().to_str().unwrap()])
        .env("EPK_OUT_ROOT", dir.path())
        .output()
        .expect("spawn epk");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("report").join("report.json").exists());
    assert!(dir.path().join("report").join("manifest.json").exists());
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let one = dir.path().join("w1");
    let three = dir.path().join("w3");
    for (workers, out) in [("1", &one), ("3", &three)] {
        run_ok(&[
            "--workers",
            workers,
            "scores",
            "--run",
            mlp_run().to_str().unwrap(),
            "--T",
            "10",
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    assert_eq!(bytes(&one.join("scores.csv")), bytes(&three.join("scores.csv")));
}

#[test]
fn every_analysis_subcommand_produces_its_artifacts() {
    let run = modadd_run().to_str().unwrap().to_string();
    let dir = TempDir::new().unwrap();
    let sub = |name: &str| dir.path().join(name);

    let v = sub("verify");
    run_ok(&["epk-verify", "--run", &run, "--T", "2", "--out", v.to_str().unwrap()]);
    assert!(v.join("fidelity.json").exists());

    let s = sub("scores");
    run_ok(&["scores", "--run", &run, "--T", "2", "--out", s.to_str().unwrap()]);
    assert!(s.join("scores.csv").exists());

    let km = sub("km");
    run_ok(&[
        "kernel-matrix",
        "--run",
        &run,
        "--T",
        "2",
        "--component",
        "decoder",
        "--ordering",
        "by_sum",
        "--test_limit",
        "6",
        "--out",
        km.to_str().unwrap(),
    ]);
    assert!(km.join("kernel_decoder.csv").exists());
    assert!(km.join("kernel_decoder.svg").exists());

    let sim = sub("sim");
    run_ok(&[
        "similarity",
        "--run",
        &run,
        "--T",
        "2",
        "--component",
        "decoder",
        "--test_limit",
        "6",
        "--out",
        sim.to_str().unwrap(),
    ]);
    assert!(sim.join("similarity_decoder.csv").exists());
    assert!(sim.join("similarity_decoder.svg").exists());

    let si = sub("si");
    run_ok(&["step-importance", "--run", &run, "--T", "2", "--out", si.to_str().unwrap()]);
    assert!(si.join("step_importance.csv").exists());

    let p = sub("prune");
    run_ok(&[
        "prune",
        "--run",
        &run,
        "--T",
        "2",
        "--prune_fractions",
        "0.5,1.0",
        "--out",
        p.to_str().unwrap(),
    ]);
    assert!(p.join("prune.json").exists());

    let sw = sub("swap");
    run_ok(&[
        "swap",
        "--run",
        &run,
        "--source-step",
        "5",
        "--components",
        "decoder",
        "--out",
        sw.to_str().unwrap(),
    ]);
    assert!(sw.join("swap.json").exists());
    assert!(sw.join("confusion.csv").exists());

    let re = sub("re");
    run_ok(&[
        "reinit-train",
        "--run",
        &run,
        "--source-step",
        "30",
        "--components",
        "decoder",
        "--reinit_seeds",
        "3,4",
        "--steps",
        "8",
        "--out",
        re.to_str().unwrap(),
    ]);
    assert!(re.join("reinit.json").exists());
    assert!(re.join("reinit.csv").exists());

    let l = sub("lasso");
    let stdout = run_ok(&[
        "lasso",
        "--run",
        &run,
        "--T",
        "2",
        "--component",
        "decoder",
        "--test_limit",
        "6",
        "--out",
        l.to_str().unwrap(),
    ]);
    assert!(l.join("lasso.json").exists());
    assert!(stdout.contains("dominant:"), "lasso should name a dominant frequency: {stdout}");

    let rep = sub("rep");
    run_ok(&["report", "--run", &run, "--out", rep.to_str().unwrap()]);
    assert!(rep.join("report.json").exists());
}

#[test]
fn lasso_rejects_feature_vector_runs() {
    let (code, err) = exit_code(&[
        "lasso",
        "--run",
        mlp_run().to_str().unwrap(),
        "--component",
        "decoder",
        "--out",
        "/tmp/unused_lasso",
    ]);
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("modular-addition"), "{err}");
}
