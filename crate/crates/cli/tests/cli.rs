use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const WORKED: &str = r#"
[scenario]
name = "worked"
r_hat = 10.0
e_setup = 0.0
k0 = 1.0
alpha = 2.0

[workload]
m0 = 100.0
dirty_rate = 1.0

[qos]
delta_tm = 100.0
delta_dt = 4.0
beta = 2.0
"#;

fn migband(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_migband"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn body(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

fn embedded_config(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    let mut inside = false;
    let mut out = String::new();
    for line in text.lines() {
        let bare = line.strip_prefix("# ").unwrap_or(line.trim_start_matches('#'));
        match bare {
            "resolved config begin" => inside = true,
            "resolved config end" => break,
            _ if inside => {
                out.push_str(bare);
                out.push('\n');
            }
            _ => {}
        }
    }
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_worked_instance() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), WORKED);
    let out = dir.path().join("out");
    let o = migband(&[
        "solve",
        "--config",
        &cfg,
        "--i-max",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("E* = 552.6"), "{}", stdout(&o));
    assert!(stdout(&o).contains("converged"));
    let csv = body(&out.join("solve.csv"));
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "round,rate_mbps,volume_mb,time_s,energy_j");
    assert_eq!(rows.len(), 3);
    let r0: f64 = rows[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((r0 - 3.684).abs() < 0.01);
}

#[test]
fn infeasible_instance_exits_two() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "preset = \"4g\"\n[workload]\ndirty_rate = 30.0\n");
    let o = migband(&["solve", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("Psi3 vs Psi4"), "{}", stderr(&o));
}

#[test]
fn missing_key_exits_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &WORKED.replace("m0 = 100.0\n", ""));
    let o = migband(&["solve", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("workload.m0 required"), "{}", stderr(&o));
}

#[test]
fn unknown_key_and_bad_flags_exit_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &format!("{WORKED}\n[run]\nsed = 3\n"));
    let o = migband(&["solve", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sed"), "{}", stderr(&o));

    assert_eq!(migband(&["solve", "--preset", "5g"]).status.code(), Some(1));
    assert_eq!(migband(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(migband(&["--help"]).status.code(), Some(0));
}

#[test]
fn outputs_are_deterministic_and_round_trip() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        let o = migband(&[
            "solve",
            "--preset",
            "wifi",
            "--q",
            "full",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert_eq!(body(&a.join("solve.csv")), body(&b.join("solve.csv")));

    // the embedded config alone reproduces the run
    let cfg = write_config(dir.path(), &embedded_config(&a.join("solve.csv")));
    let o = migband(&["solve", "--config", &cfg, "--out", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(body(&a.join("solve.csv")), body(&c.join("solve.csv")));
    assert_eq!(
        embedded_config(&a.join("solve.csv")).replace(a.to_str().unwrap(), ""),
        embedded_config(&c.join("solve.csv")).replace(c.to_str().unwrap(), "")
    );
}

#[test]
fn compare_writes_one_row_per_xen_policy() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = migband(&[
        "compare",
        "--preset",
        "4g",
        "--ratio",
        "0.33",
        "--xen-rounds",
        "6,14,25",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = body(&dir.path().join("compare.csv"));
    assert_eq!(csv.lines().count(), 4);
    let md = fs::read_to_string(dir.path().join("compare.md")).unwrap();
    assert!(md.starts_with("<!--"));
    assert!(md.contains("| 25 |") || md.contains("|25|") || md.contains(" 25 "));
}

#[test]
fn track_writes_the_whole_horizon() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = migband(&["track", "--profile", "fig45b", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = body(&dir.path().join("track.csv"));
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("n,w_bar,k0,E_tot,feasible,R_0"));
    assert_eq!(lines.count(), 90);
    assert!(stdout(&o).contains("segment 2"));
}

#[test]
fn sweep_and_oracle_commands() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = migband(&["sweep", "--preset", "wifi", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(body(&dir.path().join("sweep.csv")).lines().count(), 10);

    let o = migband(&["oracle", "--preset", "3g", "--i-max", "9", "--grid", "60", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(body(&dir.path().join("oracle.csv")).lines().count(), 3);

    let o = migband(&[
        "oracle", "--random", "4", "--grid", "40", "--seed", "1", "--jobs", "2", "--out", out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = body(&dir.path().join("oracle.csv"));
    assert_eq!(csv.lines().count(), 5);
    for row in csv.lines().skip(1) {
        let gap: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!(gap <= 2.0, "{row}");
    }
}
