//! End-to-end tests of the binary: artifacts, exit codes, determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn geno(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_geno"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_toy_game(dir: &Path) -> (String, String) {
    let game = serde_json::json!({
        "players": [
            {"dim": 1, "lower": [0.0], "upper": [1.0], "A_i": [[0.0]],
             "b_i": [0.5], "Q_i": [[1.0]], "q_i": [0.0]},
            {"dim": 1, "lower": [0.0], "upper": [1.0], "A_i": [[0.0]],
             "b_i": [0.5], "Q_i": [[1.0]], "q_i": [0.0]}
        ],
        "b": [1.0],
        "m": 1
    });
    let graph = serde_json::json!({"N": 2, "edges": [[1, 2]]});
    let game_path = dir.join("game.json");
    let graph_path = dir.join("graph.json");
    fs::write(&game_path, serde_json::to_string_pretty(&game).unwrap()).unwrap();
    fs::write(&graph_path, serde_json::to_string_pretty(&graph).unwrap()).unwrap();
    (
        game_path.to_string_lossy().into_owned(),
        graph_path.to_string_lossy().into_owned(),
    )
}

#[test]
fn run_all_variants_writes_artifacts_and_deterministic_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");

    for out in [&out_a, &out_b] {
        let output = geno(
            &[
                "run",
                "--game",
                "cournot",
                "--seed",
                "42",
                "--variant",
                "all",
                "--out",
                out.to_str().unwrap(),
            ],
            &[],
        );
        assert!(
            output.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }

    // Three runs, each with a trace; async runs also log events.
    for variant in ["sync", "e_adagnes", "ad_geno"] {
        assert!(out_a.join(format!("{variant}-s42/trace.csv")).exists());
        assert!(out_a.join(format!("{variant}-s42/metrics.csv")).exists());
    }
    assert!(out_a.join("e_adagnes-s42/events.jsonl").exists());
    assert!(!out_a.join("sync-s42/events.jsonl").exists());

    // Byte-identical artifacts across identical invocations.
    for rel in [
        "sync-s42/trace.csv",
        "e_adagnes-s42/trace.csv",
        "ad_geno-s42/trace.csv",
        "ad_geno-s42/events.jsonl",
        "ad_geno-s42/metrics.csv",
    ] {
        let a = fs::read(out_a.join(rel)).unwrap();
        let b = fs::read(out_b.join(rel)).unwrap();
        assert_eq!(a, b, "{rel} differs between identical runs");
    }

    // Reports agree apart from the single timestamp field.
    let strip = |p: &Path| -> String {
        fs::read_to_string(p.join("report.json"))
            .unwrap()
            .lines()
            .filter(|l| !l.contains("generated_at"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&out_a), strip(&out_b));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 3);
    assert_eq!(report["all_converged"], serde_json::json!(true));
}

#[test]
fn invalid_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(
        &path,
        r#"{"game": {"cournot": {}}, "bogus_field": 1}"#,
    )
    .unwrap();
    let output = geno(&["run", "--config", path.to_str().unwrap()], &[]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("error"), "diagnostic missing: {stderr}");
}

#[test]
fn inadmissible_relaxation_exits_3_and_cites_the_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let (game, graph) = write_toy_game(tmp.path());
    // alpha = ell = 2, theta = 2: admissible relaxations are (0, 1.5);
    // eta = 1.9 is outside.
    let config = serde_json::json!({
        "game": {"files": {"game": game, "graph": graph}},
        "variant": "sync",
        "params": {"tau": [0.05, 0.05], "delta": 0.05, "eps": [0.05, 0.05],
                    "eta": 1.9, "theta": 2.0},
        "seeds": [0]
    });
    let path = tmp.path().join("config.json");
    fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    let out = tmp.path().join("out");
    let output = geno(
        &[
            "run",
            "--config",
            path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("(4*alpha*theta - ell^2)/(2*alpha*theta)"),
        "bound not cited: {stderr}"
    );
}

#[test]
fn compare_passes_under_shared_schedule_and_fails_desynchronized() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cmp");
    let output = geno(
        &[
            "compare",
            "--game",
            "cournot",
            "--seed",
            "3",
            "--steps",
            "2000",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(String::from_utf8_lossy(&output.stderr).contains("PASS"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("compare.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], serde_json::json!(true));

    // Negative control: different schedule seeds must diverge immediately.
    let output = geno(
        &[
            "compare",
            "--game",
            "cournot",
            "--seed",
            "3",
            "--steps",
            "2000",
            "--desync",
            "1",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(output.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("first divergence at step"),
        "missing divergence report: {stderr}"
    );
}

#[test]
fn oracle_subcommand_solves_tiny_game() {
    let tmp = tempfile::tempdir().unwrap();
    // One player, F = 2x - 4 on [0, 10], slack constraint: x* = 2.
    let game = serde_json::json!({
        "players": [
            {"dim": 1, "lower": [0.0], "upper": [10.0], "A_i": [[0.0]],
             "b_i": [5.0], "Q_i": [[1.0]], "q_i": [-4.0]}
        ],
        "b": [5.0],
        "m": 1
    });
    let path = tmp.path().join("game.json");
    fs::write(&path, serde_json::to_string(&game).unwrap()).unwrap();
    let output = geno(&["oracle", "--game", path.to_str().unwrap()], &[]);
    assert!(output.status.success());
    let v: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert!((v["x"][0].as_f64().unwrap() - 2.0).abs() < 1e-10);
    assert!(v["kkt_residual"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn validate_reports_conditions() {
    let output = geno(&["validate", "--game", "cournot", "--seed", "1"], &[]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert!(v["report"]["alpha"].as_f64().unwrap() > 0.0);
    assert!(v["report"]["phi_pd"].as_bool().unwrap());
    // Benchmark-scale draws do not clear the strict margin; that is reported,
    // not enforced.
    assert!(v["strict_conditions"]["pass"].is_boolean());
}

#[test]
fn out_dir_env_var_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from-env");
    let output = geno(
        &[
            "compare",
            "--game",
            "cournot",
            "--seed",
            "1",
            "--steps",
            "500",
        ],
        &[("GENO_OUT_DIR", out.to_str().unwrap())],
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(out.join("compare.json").exists());
}
