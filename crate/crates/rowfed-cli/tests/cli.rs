//! End-to-end tests of the command-line driver through the compiled binary.

use std::fs;
use std::path::Path;
use std::process::Command;

fn rowfed_bin() -> &'static str {
    env!("CARGO_BIN_EXE_rowfed")
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

const SMALL_SIM: &str = r#"
[scenario]
clients = 4
samples = 30
covariates = 6
responses = 5

[run]
lambda1 = 0.05
lambda2 = 0.4
rounds = 400
seed = 7

[tuning]
lambda1_grid = [0.05]
lambda2_grid = [0.3, 0.6]

[experiment]
methods = ["rowfed", "nonfed", "fedavg", "oracle"]
replications = 2
tune = true
workers = 1
"#;

#[test]
fn simulate_is_deterministic_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    write(&cfg, SMALL_SIM);
    let out1 = dir.path().join("out1");
    let out2 = dir.path().join("out2");
    for out in [&out1, &out2] {
        let status = Command::new(rowfed_bin())
            .args(["simulate", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    for name in ["replications.csv", "aggregate.csv", "rounds.csv", "summary.json"] {
        let a = read(&out1.join(name));
        let b = read(&out2.join(name));
        assert_eq!(a, b, "{name} differs between identical runs");
        assert!(a.contains("config_sha256") || name.ends_with(".json"));
    }
    let reps = read(&out1.join("replications.csv"));
    assert!(reps.starts_with("# config_sha256="));
    assert!(reps.contains("# master_seed=7"));
    // 2 replications x 4 methods
    let data_lines = reps
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("replication") && !l.is_empty())
        .count();
    assert_eq!(data_lines, 8);
    for method in ["rowfed", "nonfed", "fedavg", "oracle"] {
        assert!(reps.contains(method));
    }
}

#[test]
fn simulate_oracle_noiseless_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    write(
        &cfg,
        r#"
[scenario]
clients = 3
samples = 20
covariates = 4
responses = 5
sigma_e = 0.0

[run]
seed = 3

[experiment]
methods = ["oracle"]
replications = 1
tune = false
workers = 1
"#,
    );
    let out = dir.path().join("out");
    let status = Command::new(rowfed_bin())
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let reps = read(&out.join("replications.csv"));
    let line = reps
        .lines()
        .find(|l| l.contains("oracle"))
        .expect("oracle row");
    let mse_est: f64 = line.split(',').nth(5).unwrap().parse().unwrap();
    assert!(mse_est < 1e-18, "noiseless oracle mse {mse_est}");
}

#[test]
fn seed_overrides_are_logged_and_applied() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    write(&cfg, SMALL_SIM);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let output = Command::new(rowfed_bin())
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_a)
        .args(["--seed", "99"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("seed override from --seed: 99"));
    let output_env = Command::new(rowfed_bin())
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_b)
        .env("ROWFED_SEED", "99")
        .output()
        .unwrap();
    assert!(output_env.status.success());
    let stderr_env = String::from_utf8_lossy(&output_env.stderr);
    assert!(stderr_env.contains("seed override from ROWFED_SEED: 99"));
    assert_eq!(
        read(&out_a.join("replications.csv")),
        read(&out_b.join("replications.csv"))
    );
    assert!(read(&out_a.join("replications.csv")).contains("# master_seed=99"));
}

#[test]
fn tune_emits_full_gic_surface() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    write(
        &cfg,
        r#"
[scenario]
clients = 3
samples = 25
covariates = 5
responses = 5

[run]
rounds = 300
seed = 5

[tuning]
lambda1_grid = [0.05, 0.2]
lambda2_grid = [0.3, 0.6]

[experiment]
workers = 1
"#,
    );
    let out = dir.path().join("out");
    let status = Command::new(rowfed_bin())
        .args(["tune", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let surface = read(&out.join("gic_surface.csv"));
    let rows = surface
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("lambda1") && !l.is_empty())
        .count();
    assert_eq!(rows, 4, "surface must have |grid1| * |grid2| rows");
    let summary = read(&out.join("summary.json"));
    assert!(summary.contains("selected_lambda1"));

    // single-point grid selects that point
    let cfg1 = dir.path().join("single.toml");
    write(
        &cfg1,
        r#"
[scenario]
clients = 3
samples = 25
covariates = 5
responses = 5

[run]
rounds = 300
seed = 5

[tuning]
lambda1_grid = [0.11]
lambda2_grid = [0.22]

[experiment]
workers = 1
"#,
    );
    let out1 = dir.path().join("single");
    let status = Command::new(rowfed_bin())
        .args(["tune", "--config"])
        .arg(&cfg1)
        .arg("--out")
        .arg(&out1)
        .status()
        .unwrap();
    assert!(status.success());
    let summary = read(&out1.join("summary.json"));
    assert!(summary.contains("\"selected_lambda1\": 0.11"));
    assert!(summary.contains("\"selected_lambda2\": 0.22"));
}

#[test]
fn fit_then_eval_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    write(
        &cfg,
        r#"
[scenario]
clients = 3
samples = 25
covariates = 5
responses = 4

[run]
lambda1 = 0.05
lambda2 = 0.4
rounds = 500
seed = 11

[experiment]
workers = 1
tune = false
"#,
    );
    let out = dir.path().join("out");
    let status = Command::new(rowfed_bin())
        .args(["fit", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let metrics_fit = read(&out.join("metrics.csv"));
    let out_eval = dir.path().join("eval");
    let status = Command::new(rowfed_bin())
        .args(["eval", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_eval)
        .arg("--theta")
        .arg(out.join("theta.csv"))
        .status()
        .unwrap();
    assert!(status.success());
    let metrics_eval = read(&out_eval.join("metrics.csv"));
    // same mse_est re-derived from the dumped stack
    let field = |text: &str, idx: usize| -> f64 {
        text.lines()
            .find(|l| l.contains("rowfed"))
            .unwrap()
            .split(',')
            .nth(idx)
            .unwrap()
            .parse()
            .unwrap()
    };
    let mse_fit = field(&metrics_fit, 5);
    let mse_eval = field(&metrics_eval, 5);
    assert!(
        (mse_fit - mse_eval).abs() <= 1e-9 * mse_fit.abs().max(1e-12),
        "fit {mse_fit} vs eval {mse_eval}"
    );
}

#[test]
fn bad_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    write(&cfg, "[run]\npenalty = \"ridge\"\n");
    let status = Command::new(rowfed_bin())
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    // missing config file is an I/O problem
    let status = Command::new(rowfed_bin())
        .args(["simulate", "--config"])
        .arg(dir.path().join("nope.toml"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}

fn synthetic_table(path: &Path, rows_per_client: &[usize]) {
    // linear responses from two predictors, distinct slope per client
    let mut text = String::from("state,x1,x2,y1,y2\n");
    let mut v = 0.13f64;
    for (c, &n) in rows_per_client.iter().enumerate() {
        let slope = 1.0 + c as f64;
        for _ in 0..n {
            v = (v * 1.7 + 0.31).fract();
            let x1 = v;
            let x2 = (v * 2.3).fract();
            let y1 = slope * x1 + 0.1 * x2;
            let y2 = 0.5 * x1 - slope * 0.2 * x2;
            text.push_str(&format!("S{c},{x1},{x2},{y1},{y2}\n"));
        }
    }
    write(path, &text);
}

#[test]
fn real_data_pipeline_beats_mean_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.csv");
    synthetic_table(&table, &[40, 40, 40, 2]); // last client dropped (n < 3)
    let cfg = dir.path().join("config.toml");
    write(
        &cfg,
        &format!(
            r#"
[run]
lambda1 = 0.01
lambda2 = 0.1
rounds = 600
seed = 13

[tuning]
lambda1_grid = [0.01]
lambda2_grid = [0.05, 0.2]

[experiment]
methods = ["rowfed", "nonfed"]
workers = 1
tune = true

[realdata]
path = "{}"
client_key = "state"
responses = ["y1", "y2"]
knn_k = 3
dump_normalized = true
"#,
            table.display()
        ),
    );
    let out = dir.path().join("out");
    let run = |out: &Path| {
        let status = Command::new(rowfed_bin())
            .args(["real-data", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    };
    run(&out);
    let per_client = read(&out.join("per_client_mse.csv"));
    let mut rowfed_beats = 0usize;
    let mut rows = 0usize;
    for line in per_client.lines() {
        if line.starts_with('#') || line.starts_with("client") || line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        assert_eq!(parts.len(), 6);
        if parts[3] == "rowfed" {
            rows += 1;
            let mse: f64 = parts[4].parse().unwrap();
            let baseline: f64 = parts[5].parse().unwrap();
            if mse < baseline {
                rowfed_beats += 1;
            }
        }
    }
    assert_eq!(rows, 3, "dropped client must not appear");
    assert_eq!(rowfed_beats, 3, "rowfed must beat the mean predictor");
    let summary = read(&out.join("summary.json"));
    assert!(summary.contains("\"dropped_clients\": 1"));
    assert!(out.join("normalized_table.csv").exists());

    // rerun reproduces the split and outputs byte for byte
    let out2 = dir.path().join("out2");
    run(&out2);
    assert_eq!(
        read(&out.join("per_client_mse.csv")),
        read(&out2.join("per_client_mse.csv"))
    );
    assert_eq!(read(&out.join("summary.json")), read(&out2.join("summary.json")));
}
