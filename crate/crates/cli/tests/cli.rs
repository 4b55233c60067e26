//! End-to-end tests of the `eigenfk` binary: flag handling, artifact
//! layout, reproducibility of the CSV outputs, resume, evaluate, and the
//! exit-code contract (0 ok, 1 usage, 2 numerical failure).

use std::path::Path;
use std::process::{Command, Output};

fn eigenfk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eigenfk"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// A run small enough that even an unoptimized binary finishes in
/// milliseconds: one dimension, a tiny net, a short path.
fn tiny_config(iterations: u64, seed: u64, lr: &str) -> String {
    format!(
        r#"
[problem]
family = "linear_schrodinger"
dim = 1
coefficients = [0.2]

[network]
hidden = [8]
harmonics = 2

[sde]
horizon = 0.1
time_steps = 4

[training]
iterations = {iterations}
batch = 16
seed = {seed}
lr = [{lr}]
lr_boundaries = []
gamma = [0.5]
gamma_boundaries = []
shard_size = 8
validation_every = 2
validation_size = 32
summary_window = 4
"#
    )
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn help_exits_zero_and_shows_subcommands() {
    let out = eigenfk(&["--help"]);
    assert!(out.status.success(), "help failed: {}", stderr(&out));
    let text = stdout(&out);
    for sub in ["train", "reference", "evaluate"] {
        assert!(text.contains(sub), "help text lacks `{sub}`:\n{text}");
    }
}

#[test]
fn unknown_flag_exits_one() {
    let out = eigenfk(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_requires_exactly_one_config_source() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let neither = eigenfk(&["train", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(neither.status.code(), Some(1));
    assert!(
        stderr(&neither).contains("--config") && stderr(&neither).contains("--preset"),
        "error should name both flags: {}",
        stderr(&neither)
    );
    let both = eigenfk(&[
        "train",
        "--config",
        "whatever.toml",
        "--preset",
        "ls_d5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(both.status.code(), Some(1), "conflicting sources must be rejected");
}

#[test]
fn reference_free_particle_ground_state_is_zero() {
    let out = eigenfk(&["reference", "--c", "0", "--k", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lambda: f64 = text.trim().split('\t').nth(1).unwrap().parse().unwrap();
    assert!(lambda.abs() <= 1e-12, "free ground state should sit at 0, got {lambda}");
}

#[test]
fn reference_double_well_pair_matches_known_values() {
    let out = eigenfk(&["reference", "--c", "5", "--freq", "2", "--k", "1,2", "--nbasis", "64"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    let l1: f64 = lines.next().unwrap().split('\t').nth(1).unwrap().parse().unwrap();
    let l2: f64 = lines.next().unwrap().split('\t').nth(1).unwrap().parse().unwrap();
    assert!((l1 - -2.153).abs() <= 2e-3, "lambda_1 = {l1}");
    assert!((l2 - -2.076).abs() <= 2e-3, "lambda_2 = {l2}");
}

#[test]
fn reference_export_writes_eigenvalue_and_profile_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("ref");
    let out = eigenfk(&[
        "reference",
        "--c",
        "0.2",
        "--k",
        "1,2",
        "--out",
        dir.to_str().unwrap(),
        "--grid",
        "16",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let values = read(&dir.join("eigenvalues.csv"));
    assert!(values.starts_with("k,lambda\n"));
    assert_eq!(values.lines().count(), 3, "header plus one row per requested k");
    for k in [1, 2] {
        let profile = read(&dir.join(format!("psi_{k}.csv")));
        assert!(profile.starts_with("x,psi,dpsi\n"));
        assert_eq!(profile.lines().count(), 17, "header plus one row per grid point");
    }
}

#[test]
fn reference_rejects_bad_arguments() {
    for args in [
        vec!["reference", "--c", "1.0", "--freq", "3"],
        vec!["reference", "--c", "1.0", "--k", "0"],
        vec!["reference", "--c", "1.0", "--nbasis", "0"],
    ] {
        let out = eigenfk(&args);
        assert_eq!(out.status.code(), Some(1), "args {args:?} should be a usage error");
    }
}

#[test]
fn train_writes_the_full_artifact_set() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", &tiny_config(6, 3, "1e-3"));
    let dir = tmp.path().join("out");
    let out = eigenfk(&["train", "--config", &cfg, "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));

    let history = read(&dir.join("history.csv"));
    let mut lines = history.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,loss,lambda,z,err_lambda,err_psi_l2,err_psi_inf,err_grad"
    );
    // validation_every = 2 over 6 iterations: records at steps 2, 4, 6.
    let steps: Vec<&str> =
        lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["2", "4", "6"]);

    let summary = read(&dir.join("summary.toml"));
    for key in ["lambda =", "z =", "final_loss =", "err_psi_l2 ="] {
        assert!(summary.contains(key), "summary lacks `{key}`:\n{summary}");
    }

    let density = read(&dir.join("density.csv"));
    assert!(density.starts_with("bin_center,net_density,ref_density\n"));
    assert_eq!(density.lines().count(), 101, "header plus one row per bin");

    assert!(dir.join("final.ckpt").is_file());
    assert!(dir.join("config.toml").is_file());

    // The console summary carries the eigenvalue for quick reading.
    assert!(stdout(&out).contains("lambda = "), "stdout: {}", stdout(&out));
}

#[test]
fn same_seed_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", &tiny_config(6, 11, "1e-3"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = eigenfk(&["train", "--config", &cfg, "--out", dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(read(&a.join("history.csv")), read(&b.join("history.csv")));
    assert_eq!(read(&a.join("summary.toml")), read(&b.join("summary.toml")));
    assert_eq!(
        std::fs::read(a.join("final.ckpt")).unwrap(),
        std::fs::read(b.join("final.ckpt")).unwrap(),
        "checkpoints should be byte-identical"
    );

    let c = tmp.path().join("c");
    let out = eigenfk(&[
        "train", "--config", &cfg, "--seed", "12", "--out", c.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_ne!(
        read(&a.join("history.csv")),
        read(&c.join("history.csv")),
        "a different seed must change the run"
    );
}

#[test]
fn zero_iterations_reports_the_initial_state() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", &tiny_config(6, 5, "1e-3"));
    let dir = tmp.path().join("out");
    let out = eigenfk(&[
        "train", "--config", &cfg, "--iterations", "0", "--out", dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let history = read(&dir.join("history.csv"));
    let rows: Vec<&str> = history.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("0,"), "single row for step 0, got {}", rows[0]);
    assert!(dir.join("final.ckpt").is_file(), "initial state still gets a checkpoint");
}

#[test]
fn resumed_run_matches_a_straight_run_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let straight_cfg = write_config(tmp.path(), "straight.toml", &tiny_config(8, 21, "1e-3"));
    let head_cfg = write_config(tmp.path(), "head.toml", &tiny_config(4, 21, "1e-3"));

    let straight = tmp.path().join("straight");
    let head = tmp.path().join("head");
    let tail = tmp.path().join("tail");
    for (cfg, dir) in [(&straight_cfg, &straight), (&head_cfg, &head)] {
        let out = eigenfk(&["train", "--config", cfg, "--out", dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let ckpt = head.join("final.ckpt");
    let out = eigenfk(&[
        "train",
        "--config",
        &straight_cfg,
        "--resume",
        ckpt.to_str().unwrap(),
        "--out",
        tail.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    // The resumed history covers steps 5..=8; the straight run's trailing
    // rows must agree byte for byte, as must the final checkpoints.
    let full = read(&straight.join("history.csv"));
    let resumed = read(&tail.join("history.csv"));
    let full_tail: Vec<&str> =
        full.lines().skip(1).filter(|l| !l.starts_with("2,") && !l.starts_with("4,")).collect();
    let resumed_rows: Vec<&str> = resumed.lines().skip(1).collect();
    assert_eq!(resumed_rows, full_tail);
    assert_eq!(
        std::fs::read(straight.join("final.ckpt")).unwrap(),
        std::fs::read(tail.join("final.ckpt")).unwrap()
    );
}

#[test]
fn resume_rejects_a_mismatched_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let head_cfg = write_config(tmp.path(), "head.toml", &tiny_config(4, 21, "1e-3"));
    let other_cfg = write_config(tmp.path(), "other.toml", &tiny_config(8, 99, "1e-3"));
    let head = tmp.path().join("head");
    let out = eigenfk(&["train", "--config", &head_cfg, "--out", head.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = eigenfk(&[
        "train",
        "--config",
        &other_cfg,
        "--resume",
        head.join("final.ckpt").to_str().unwrap(),
        "--out",
        tmp.path().join("tail").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("seed"), "error should name the seed: {}", stderr(&out));
}

#[test]
fn evaluate_reproduces_the_final_training_record() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", &tiny_config(6, 17, "1e-3"));
    let dir = tmp.path().join("out");
    let out = eigenfk(&["train", "--config", &cfg, "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));

    let history = read(&dir.join("history.csv"));
    let last = history.lines().last().unwrap();

    // Evaluating the echoed effective config against the final checkpoint
    // must land on the same validation batch and hence the same metrics.
    let out = eigenfk(&[
        "evaluate",
        "--checkpoint",
        dir.join("final.ckpt").to_str().unwrap(),
        "--config",
        dir.join("config.toml").to_str().unwrap(),
        "--out",
        tmp.path().join("eval").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let metrics = read(&tmp.path().join("eval").join("metrics.csv"));
    let row = metrics.lines().nth(1).unwrap();

    // history: step,loss,lambda,z,errs...; metrics: step,lambda,z,errs...
    let mut h = last.split(',');
    let (h_step, _h_loss) = (h.next().unwrap(), h.next().unwrap());
    let h_rest: Vec<&str> = h.collect();
    let mut m = row.split(',');
    let m_step = m.next().unwrap();
    let m_rest: Vec<&str> = m.collect();
    assert_eq!(h_step, m_step);
    assert_eq!(h_rest, m_rest, "evaluate must reproduce the final record's fields");
}

#[test]
fn evaluate_rejects_checkpoints_from_a_different_architecture() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", &tiny_config(4, 17, "1e-3"));
    let dir = tmp.path().join("out");
    let out = eigenfk(&["train", "--config", &cfg, "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));

    let wider = tiny_config(4, 17, "1e-3").replace("hidden = [8]", "hidden = [12]");
    let wider_cfg = write_config(tmp.path(), "wider.toml", &wider);
    let out = eigenfk(&[
        "evaluate",
        "--checkpoint",
        dir.join("final.ckpt").to_str().unwrap(),
        "--config",
        &wider_cfg,
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("architecture"),
        "error should call out the mismatch: {}",
        stderr(&out)
    );

    let out = eigenfk(&[
        "evaluate",
        "--checkpoint",
        tmp.path().join("missing.ckpt").to_str().unwrap(),
        "--config",
        &cfg,
    ]);
    assert_eq!(out.status.code(), Some(1), "missing checkpoint is a usage error");
}

#[test]
fn diverging_run_exits_two_with_the_failing_step() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", &tiny_config(50, 3, "1e100"));
    let out = eigenfk(&[
        "train", "--config", &cfg, "--out", tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("step"), "diagnostics should name the step: {}", stderr(&out));
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", &tiny_config(6, 29, "1e-3"));
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    let out = eigenfk(&["train", "--config", &cfg, "--out", first.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = eigenfk(&[
        "train",
        "--config",
        first.join("config.toml").to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        read(&first.join("history.csv")),
        read(&second.join("history.csv")),
        "the echoed effective config must reproduce the run"
    );
}

#[test]
fn presets_are_listed_in_help_and_unknown_names_fail() {
    let out = eigenfk(&["train", "--help"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("ls_d5"), "preset list missing: {}", stdout(&out));

    let tmp = tempfile::tempdir().unwrap();
    let out = eigenfk(&[
        "train",
        "--preset",
        "no_such_preset",
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("no_such_preset"),
        "error should echo the bad name: {}",
        stderr(&out)
    );
}
