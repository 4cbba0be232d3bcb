use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
strategy.kind = nmer
strategy.k = 5
td3.hidden = 8,8
td3.batch_size = 16
td3.random_steps = 50
td3.optimizer = adam
run.total_env_steps = 150
run.eval_interval = 50
run.eval_episodes = 1
";

fn nmer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmer"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = nmer(args);
    assert!(
        out.status.success(),
        "nmer {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("tiny.cfg");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["run", "--config", &cfg, "--seed", "4", "--out", out.to_str().unwrap()]);
    }
    let name = "pendulum_nmer_rr1_k5_seed4";
    let csv_a = fs::read(a.join(format!("{name}.csv"))).unwrap();
    assert_eq!(csv_a, fs::read(b.join(format!("{name}.csv"))).unwrap());
    assert_eq!(
        fs::read(a.join(format!("{name}.config"))).unwrap(),
        fs::read(b.join(format!("{name}.config"))).unwrap()
    );
    let text = String::from_utf8(csv_a).unwrap();
    assert_eq!(text.lines().next().unwrap(), "env_step,eval_return_raw,eval_return_smoothed");
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("o");
    let stdout = ok(&[
        "run",
        "--config",
        &cfg,
        "--strategy",
        "uniform",
        "--replay-ratio",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("pendulum_uniform_rr2_seed0"), "{stdout}");
    assert!(stdout.contains("200 gradient steps"), "{stdout}");
    let stdout = ok(&[
        "run",
        "--config",
        &cfg,
        "--k",
        "7",
        "--set",
        "run.total_env_steps=60",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("pendulum_nmer_rr1_k7_seed0"), "{stdout}");
}

#[test]
fn bad_configs_fail_with_messages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.sed = 3\n");
    let out = nmer(&["run", "--config", &cfg]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key `run.sed`"));
    let cfg = write_config(dir.path(), "strategy.k = 0\n");
    let out = nmer(&["run", "--config", &cfg]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("k must be ≥ 1"));
}

#[test]
fn collect_then_residuals_on_linear_system() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "env.name = linear\n");
    let dump = dir.path().join("buf.txt");
    let csv = dir.path().join("res.csv");
    ok(&["collect", "--config", &cfg, "--transitions", "1000", "--out", dump.to_str().unwrap()]);
    let stdout = ok(&[
        "residuals",
        "--config",
        &cfg,
        "--dump",
        dump.to_str().unwrap(),
        "--strategy",
        "nmer,naive_mixup",
        "--samples",
        "300",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(stdout.lines().count(), 2);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "strategy,seed,sample_id,residual,reward_residual,state_residual"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 600);
    for row in rows {
        let residual: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
        assert!(residual < 1e-9, "{row}");
    }
}

#[test]
fn smooth_rewrites_curve() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    fs::write(&input, "env_step,eval_return_raw,eval_return_smoothed\n1,1,0\n2,2,0\n3,6,0\n").unwrap();
    let output = dir.path().join("out.csv");
    ok(&[
        "smooth",
        "--input",
        input.to_str().unwrap(),
        "--window",
        "3",
        "--out",
        output.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(&output).unwrap();
    let smoothed: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(smoothed, vec![1.0, 3.0, 6.0]);
    let even = nmer(&["smooth", "--input", input.to_str().unwrap(), "--window", "4", "--out", output.to_str().unwrap()]);
    assert!(!even.status.success());
}

#[test]
fn grid_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("grid");
    let stdout = ok(&[
        "grid",
        "--config",
        &cfg,
        "--strategy",
        "uniform,nmer",
        "--replay-ratio",
        "1",
        "--k",
        "5",
        "--seed",
        "0,1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(stdout.lines().count(), 3);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("strategy,replay_ratio,k,n_runs,n_failed,mean_final,sd_final,best_of_grid"));
    assert!(out.join("runs.csv").exists());
    assert!(out.join("pendulum_uniform_rr1_seed1.csv").exists());
}
