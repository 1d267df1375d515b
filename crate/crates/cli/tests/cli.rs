use std::fs;
use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
seed = 4
realizations = 2
record_timing = false
[system]
users = 2
quadrature_order = 6
shape_grid = 16
[solver]
max_iters = 3
[sweep]
parameter = "users"
values = [1, 2]
"#;

fn run(dir: &Path, args: &[&str]) -> String {
    let cfg = dir.join("cfg.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fcapa"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(dir.join("out"))
        .args(["--threads", "1"])
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn sweep_writes_results_config_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = run(dir.path(), &["sweep"]);
    assert!(stdout.contains("mean ARPU"));
    let csv = fs::read_to_string(dir.path().join("out/sweep_users.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("scheme,param_name,param_value,realization,seed,arpu,iterations,power,wall_ms"));
    assert_eq!(lines.count(), 4 * 2 * 2);
    assert!(dir.path().join("out/sweep_users.json").exists());
    assert!(dir.path().join("out/sweep_users_traces.csv").exists());
}

#[test]
fn seed_flag_overrides_config_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    run(
        dir.path(),
        &[
            "--seed",
            "11",
            "sweep",
            "--param",
            "power",
            "--values",
            "0.1",
            "--realizations",
            "1",
        ],
    );
    let first = fs::read(dir.path().join("out/sweep_power.csv")).unwrap();
    run(
        dir.path(),
        &[
            "--seed",
            "11",
            "sweep",
            "--param",
            "power",
            "--values",
            "0.1",
            "--realizations",
            "1",
        ],
    );
    assert_eq!(first, fs::read(dir.path().join("out/sweep_power.csv")).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(4) == Some("11")));
}

#[test]
fn solve_and_convergence_commands() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = run(dir.path(), &["solve"]);
    assert_eq!(stdout.lines().filter(|l| l.contains("ARPU")).count(), 4);
    assert!(dir.path().join("out/fcapa_shape.csv").exists());
    assert!(dir.path().join("out/solve_traces.csv").exists());

    let stdout = run(dir.path(), &["convergence", "--realizations", "2"]);
    assert!(stdout.contains("of 2 drops"));
    let traces = fs::read_to_string(dir.path().join("out/convergence_traces.csv")).unwrap();
    assert_eq!(traces.lines().count(), 1 + 2 * 4);
}

#[test]
fn bad_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "realizations = 0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fcapa"))
        .arg("--config")
        .arg(&cfg)
        .arg("sweep")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("realizations"));
}
