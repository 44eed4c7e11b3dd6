use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn rfens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfens")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn run(cmd: &str, cfg: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap()];
    args.extend_from_slice(extra);
    rfens(&args)
}

const RIDGE: &str = r#"{"loss": "square", "lambda": 0.1, "alpha": 2, "gamma": 1, "k": [1, 2, "inf"]}"#;

const RIDGE_SWEEP: &str = r#"{
  "base": {"loss": "square", "lambda": 1e-2, "n_over_d": 2, "k": [1, 4, "inf"]},
  "axis": "p_over_n",
  "grid": {"start": 0.25, "stop": 3.0, "num": 12}
}"#;

#[test]
fn solve_prints_a_converged_fixed_point() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "ridge.json", RIDGE);
    let out = run("solve", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["status"], "converged");
    for key in ["m", "q0", "q1", "v", "m_hat", "q0_hat", "q1_hat", "v_hat", "iterations", "residual"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let eps = &v["observables"]["eps_g"];
    assert!(eps["k1"].as_f64().unwrap() > eps["k2"].as_f64().unwrap());
    assert!(eps["k2"].as_f64().unwrap() > eps["kinf"].as_f64().unwrap());
}

#[test]
fn solve_output_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "logistic.json", r#"{"loss": "logistic", "lambda": 1e-2, "alpha": 2, "gamma": 1}"#);
    let a = run("solve", &cfg, &[]);
    let b = run("solve", &cfg, &[]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn missing_field_is_a_config_error_naming_it() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"loss": "square", "lambda": 0.1, "gamma": 1}"#);
    let out = run("solve", &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("alpha"), "{}", stderr(&out));
}

#[test]
fn malformed_configs_exit_with_code_2() {
    let dir = TempDir::new().unwrap();
    for (name, text) in [
        ("syntax.json", "{\"loss\": "),
        ("unknown.json", r#"{"loss": "square", "lambda": 0.1, "alpha": 2, "gamma": 1, "colour": 3}"#),
        ("negative.json", r#"{"loss": "square", "lambda": -1, "alpha": 2, "gamma": 1}"#),
        ("loss.json", r#"{"loss": "cubic", "lambda": 0.1, "alpha": 2, "gamma": 1}"#),
    ] {
        let cfg = write(dir.path(), name, text);
        assert_eq!(run("solve", &cfg, &[]).status.code(), Some(2), "{name}");
    }
    let cfg = write(dir.path(), "ridge.json", RIDGE);
    assert_eq!(run("solve", &cfg, &["--damping", "1.5"]).status.code(), Some(2));
    assert_eq!(rfens(&["solve"]).status.code(), Some(2));
}

#[test]
fn unreadable_config_is_an_io_failure() {
    let out = rfens(&["solve", "--config", "/nonexistent/cfg.json"]);
    assert!(matches!(out.status.code(), Some(1) | Some(2)), "{:?}", out.status);
    assert!(!stderr(&out).is_empty());
}

#[test]
fn iteration_cap_exits_with_code_3() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "slow.json",
        r#"{"loss": "square", "lambda": 1e-6, "alpha": 1, "gamma": 0.5, "solver": {"max_iters": 3}}"#,
    );
    let out = run("solve", &cfg, &[]);
    assert_eq!(out.status.code(), Some(3));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["status"], "max_iterations");
    assert_eq!(v["converged"], false);
}

#[test]
fn tol_flag_overrides_the_configuration() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "ridge.json", RIDGE);
    let loose: serde_json::Value = serde_json::from_str(&stdout(&run("solve", &cfg, &["--tol", "1e-3"]))).unwrap();
    let tight: serde_json::Value = serde_json::from_str(&stdout(&run("solve", &cfg, &["--tol", "1e-12"]))).unwrap();
    assert!(loose["iterations"].as_u64() < tight["iterations"].as_u64());
    assert!(tight["residual"].as_f64().unwrap() < 1e-12);
}

fn table(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect();
    (header, rows)
}

fn col(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let j = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[j].parse().unwrap()).collect()
}

#[test]
fn sweep_table_schema() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sweep.json", RIDGE_SWEEP);
    let out = run("sweep", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (header, rows) = table(&stdout(&out));
    let expected = [
        "p_over_n", "alpha", "gamma", "lambda", "m", "q0", "q1", "v", "m_hat", "q0_hat", "q1_hat", "v_hat", "eps_g_k1",
        "eps_g_k4", "eps_g_kinf", "eps_bar", "delta_eps", "disagreement", "iterations", "residual", "status",
    ];
    assert_eq!(header, expected);
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.last().unwrap() == "converged"));
    let x = col(&header, &rows, "p_over_n");
    assert!((x[0] - 0.25).abs() < 1e-15 && (x[11] - 3.0).abs() < 1e-15);
    let alpha = col(&header, &rows, "alpha");
    for (a, r) in alpha.iter().zip(&x) {
        assert!((a * r - 1.0).abs() < 1e-12);
    }
    let (k1, k4, kinf) = (col(&header, &rows, "eps_g_k1"), col(&header, &rows, "eps_g_k4"), col(&header, &rows, "eps_g_kinf"));
    let bar = col(&header, &rows, "eps_bar");
    for i in 0..rows.len() {
        assert!(k1[i] >= k4[i] && k4[i] >= kinf[i]);
        assert_eq!(kinf[i], bar[i]);
    }
}

#[test]
fn sweep_over_k_has_one_error_column() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "k.json",
        r#"{"base": {"loss": "logistic", "lambda": 1e-2, "alpha": 2, "gamma": 1}, "axis": "K", "grid": [1, 2, 5, 10]}"#,
    );
    let out = run("sweep", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (header, rows) = table(&stdout(&out));
    assert_eq!(header[0], "K");
    assert!(header.contains(&"eps_g".to_string()));
    let eps = col(&header, &rows, "eps_g");
    assert!(eps.windows(2).all(|w| w[1] < w[0]), "{eps:?}");
    // The fixed point does not depend on K.
    let q0 = col(&header, &rows, "q0");
    assert!(q0.iter().all(|q| *q == q0[0]));
}

#[test]
fn single_point_grid_gives_one_row() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "one.json",
        r#"{"base": {"loss": "square", "lambda": 1e-2, "n_over_d": 2}, "axis": "p_over_n", "grid": [0.7]}"#,
    );
    let out = run("sweep", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(table(&stdout(&out)).1.len(), 1);
}

#[test]
fn invalid_grids_are_config_errors() {
    let dir = TempDir::new().unwrap();
    for (name, grid) in [("empty", "[]"), ("unsorted", "[0.5, 0.3, 0.9]"), ("repeated", "[0.5, 0.5]"), ("negative", "[-0.5, 0.5]")] {
        let text = format!(r#"{{"base": {{"loss": "square", "lambda": 1e-2, "n_over_d": 2}}, "axis": "p_over_n", "grid": {grid}}}"#);
        let cfg = write(dir.path(), &format!("{name}.json"), &text);
        assert_eq!(run("sweep", &cfg, &[]).status.code(), Some(2), "{name}");
    }
    // A kernel base has no p/n axis.
    let cfg = write(
        dir.path(),
        "kernel.json",
        r#"{"base": {"mode": "kernel", "loss": "square", "lambda": 1e-2, "delta": 2}, "axis": "p_over_n", "grid": [0.5, 1]}"#,
    );
    assert_eq!(run("sweep", &cfg, &[]).status.code(), Some(2));
}

#[test]
fn sweep_writes_to_the_output_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sweep.json", RIDGE_SWEEP);
    let dest = dir.path().join("table.csv");
    let out = run("sweep", &cfg, &["--out", dest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    assert_eq!(std::fs::read_to_string(&dest).unwrap(), stdout(&run("sweep", &cfg, &[])));
}

#[test]
fn parallel_sweep_matches_the_sequential_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sweep.json", RIDGE_SWEEP);
    let one = table(&stdout(&run("sweep", &cfg, &["--jobs", "1", "--tol", "1e-12"])));
    let three = table(&stdout(&run("sweep", &cfg, &["--jobs", "3", "--tol", "1e-12"])));
    assert_eq!(one.0, three.0);
    assert_eq!(one.1.len(), three.1.len());
    for name in ["m", "q0", "q1", "v", "eps_g_k1"] {
        for (a, b) in col(&one.0, &one.1, name).iter().zip(col(&three.0, &three.1, name)) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{name}: {a} vs {b}");
        }
    }
}

#[test]
fn unconverged_sweep_points_exit_with_code_3() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "slow.json",
        r#"{"base": {"loss": "square", "lambda": 1e-6, "n_over_d": 2, "solver": {"max_iters": 50}}, "axis": "p_over_n", "grid": [0.9, 1.0]}"#,
    );
    let out = run("sweep", &cfg, &[]);
    assert_eq!(out.status.code(), Some(3));
    let (_, rows) = table(&stdout(&out));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().any(|r| r.last().unwrap() == "max_iterations"));
}

fn simulate_config(trials: usize, newton: &str) -> String {
    format!(
        r#"{{
  "base": {{"loss": "logistic", "lambda": 1e-2, "n_over_d": 2, "k": [1, 2]}},
  "axis": "p_over_n",
  "grid": [0.5, 1.5],
  "simulate": {{"trials": {trials}, "seed": 5, "d": 20, "test_samples": 500{newton}}}
}}"#
    )
}

#[test]
fn simulate_table_schema_and_determinism() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sim.json", &simulate_config(4, ""));
    let a = run("simulate", &cfg, &[]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let (header, rows) = table(&stdout(&a));
    let sweep_part = [
        "p_over_n", "alpha", "gamma", "lambda", "m", "q0", "q1", "v", "m_hat", "q0_hat", "q1_hat", "v_hat", "eps_g_k1",
        "eps_g_k2", "eps_bar", "delta_eps", "disagreement", "iterations", "residual", "status",
    ];
    assert_eq!(&header[..sweep_part.len()], sweep_part);
    let mut expected: Vec<String> = ["n", "p", "d", "trials_ok", "trials_failed"].map(String::from).to_vec();
    for q in ["m", "q0", "q1", "eps_g_k1", "eps_g_k2", "disagreement"] {
        expected.extend(["emp", "se", "z"].map(|s| format!("{q}_{s}")));
    }
    expected.push("sim_status".into());
    assert_eq!(header[sweep_part.len()..], expected);
    assert_eq!(rows.len(), 2);
    assert_eq!(col(&header, &rows, "d"), [20.0, 20.0]);
    assert_eq!(col(&header, &rows, "n"), [40.0, 40.0]);
    assert_eq!(col(&header, &rows, "p"), [20.0, 60.0]);
    assert_eq!(col(&header, &rows, "trials_ok"), [4.0, 4.0]);

    assert_eq!(a.stdout, run("simulate", &cfg, &[]).stdout);
    // Chunked warm starts move the theory only within the solver tolerance;
    // the experiments are identical.
    let (_, rows_b) = table(&stdout(&run("simulate", &cfg, &["--jobs", "2"])));
    for (j, name) in header.iter().enumerate() {
        for (ra, rb) in rows.iter().zip(&rows_b) {
            if name.ends_with("_emp") || name.ends_with("_se") || name.starts_with("trials") {
                assert_eq!(ra[j], rb[j], "{name}");
            } else if name == "m" || name == "q0" || name == "q1" {
                let (x, y): (f64, f64) = (ra[j].parse().unwrap(), rb[j].parse().unwrap());
                assert!((x - y).abs() <= 1e-7 * x.abs().max(1.0), "{name}: {x} vs {y}");
            }
        }
    }
    let c = run("simulate", &cfg, &["--seed", "6"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn zero_trials_reproduce_the_sweep_table() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sim.json", &simulate_config(0, ""));
    let sim = run("simulate", &cfg, &[]);
    let sweep = run("sweep", &cfg, &[]);
    assert_eq!(sim.status.code(), Some(0));
    assert_eq!(sim.stdout, sweep.stdout);
}

#[test]
fn failed_training_exits_with_code_4() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sim.json", &simulate_config(2, r#", "newton": {"max_iters": 1}"#));
    let out = run("simulate", &cfg, &[]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    let (header, rows) = table(&stdout(&out));
    assert_eq!(col(&header, &rows, "trials_failed"), [2.0, 2.0]);
}

#[test]
fn confidence_density_is_symmetric_with_unit_mass() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "logistic.json", r#"{"loss": "logistic", "lambda": 1e-2, "alpha": 2, "gamma": 1}"#);
    let out = run("confidence-density", &cfg, &["--resolution", "40"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let comments: Vec<&str> = text.lines().filter(|l| l.starts_with('#')).collect();
    assert!(comments.iter().any(|l| l.starts_with("# q0=")));
    assert!(comments.iter().any(|l| l.starts_with("# q1=")));
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let (header, rows) = table(&body);
    assert_eq!(header.len(), 41);
    assert_eq!(rows.len(), 40);
    let grid: Vec<Vec<f64>> = rows.iter().map(|r| r[1..].iter().map(|x| x.parse().unwrap()).collect()).collect();
    let mut mass = 0.0;
    for i in 0..40 {
        for j in 0..40 {
            assert_eq!(grid[i][j], grid[j][i]);
            assert!(grid[i][j] >= 0.0);
            mass += grid[i][j] / 1600.0;
        }
    }
    assert!((mass - 1.0).abs() < 0.01, "{mass}");
}

#[test]
fn confidence_density_needs_the_logistic_loss() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "ridge.json", RIDGE);
    assert_eq!(run("confidence-density", &cfg, &[]).status.code(), Some(2));
}
