use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bregaccel::io::write_trace_csv;
use bregaccel::synth::{generate, SynthConfig};
use bregaccel::{solve, stack, SolverConfig};
use tempfile::TempDir;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bregaccel")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

/// Well-conditioned synthetic instance that every solver finishes quickly.
fn synth(dir: &TempDir, name: &str, seed: u64) -> String {
    let path = p(dir, name);
    let seed = seed.to_string();
    let out = bin(&[
        "synth", "--seed", &seed, "--assets", "3", "--periods", "2", "--ret-low", "-0.5", "--ret-high", "0.5",
        "--eig-min", "0.1", "--eig-max", "1", "--output", &path,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    path
}

fn field<'a>(report: &'a str, key: &str) -> &'a str {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in report:\n{report}"))
}

/// Percent returns from a small linear congruential generator.
fn returns_csv(path: &Path, rows: usize, assets: usize) {
    let mut state: u64 = 12345;
    let mut text = String::from("date");
    for j in 0..assets {
        let _ = write!(text, ",A{j}");
    }
    text.push('\n');
    for t in 0..rows {
        let _ = write!(text, "{}", 200001 + t);
        for _ in 0..assets {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let unit = (state >> 11) as f64 / (1u64 << 53) as f64;
            let _ = write!(text, ",{:.3}", 8.0 * unit - 3.0);
        }
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

#[test]
fn converged_solve_exits_zero_and_reports() {
    let dir = TempDir::new().unwrap();
    let problem = synth(&dir, "p.json", 4);
    let out = bin(&["solve", "--problem", &problem, "--mode", "sbsa"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = stdout(&out);
    assert_eq!(field(&report, "termination"), "converged");
    assert!(field(&report, "violation_a").parse::<f64>().unwrap() <= 1e-4);
    assert!(field(&report, "ratio").parse::<f64>().unwrap() > 0.0);
}

#[test]
fn iteration_cap_exits_two() {
    let dir = TempDir::new().unwrap();
    let problem = synth(&dir, "p.json", 4);
    let out = bin(&["solve", "--problem", &problem, "--max-outer", "2", "--tol-b", "1e-12"]);
    assert_eq!(code(&out), 2);
    assert_eq!(field(&stdout(&out), "termination"), "max_outer");
}

#[test]
fn numerical_failure_exits_three() {
    // a tiny instance on which the accelerated iteration blows up
    let dir = TempDir::new().unwrap();
    let path = p(&dir, "bad.json");
    let out = bin(&[
        "synth", "--seed", "28", "--assets", "2", "--periods", "1", "--ret-low", "-0.5", "--ret-high", "0.5",
        "--eig-min", "1e-2", "--eig-max", "1e-1", "--output", &path,
    ]);
    assert_eq!(code(&out), 0);
    let out = bin(&["solve", "--problem", &path, "--mode", "sbsa"]);
    assert_eq!(code(&out), 3, "{}", stdout(&out));
    assert_eq!(field(&stdout(&out), "termination"), "numerical_error");
}

#[test]
fn missing_input_names_the_path() {
    let out = bin(&["solve", "--problem", "/nonexistent/problem.json"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("/nonexistent/problem.json"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&bin(&["solve"])), 1);
    assert_eq!(code(&bin(&["solve", "--problem", "x", "--mode", "newton"])), 1);
    assert_eq!(code(&bin(&["frobnicate"])), 1);
    assert_eq!(code(&bin(&["--help"])), 0);
}

#[test]
fn invalid_config_values_are_rejected() {
    let dir = TempDir::new().unwrap();
    let problem = synth(&dir, "p.json", 4);
    let out = bin(&["solve", "--problem", &problem, "--eta", "1.5"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("eta"));

    let cfg = p(&dir, "bad.cfg");
    fs::write(&cfg, "lambda = 1\nbogus = 3\n").unwrap();
    let out = bin(&["solve", "--problem", &problem, "--config", &cfg]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains(":2:"), "{}", stderr(&out));
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let problem = synth(&dir, "p.json", 4);
    let cfg = p(&dir, "run.cfg");
    fs::write(&cfg, "# capped run\nmax_outer = 2\ntol_b = 1e-12\nmode = sb\n").unwrap();
    let out = bin(&["solve", "--problem", &problem, "--config", &cfg]);
    assert_eq!(code(&out), 2);
    assert_eq!(field(&stdout(&out), "solver"), "sb");
    let out = bin(&["solve", "--problem", &problem, "--config", &cfg, "--max-outer", "10000", "--tol-b", "1e-4"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
}

#[test]
fn synth_is_deterministic_and_sized() {
    let dir = TempDir::new().unwrap();
    let a = p(&dir, "a.json");
    let b = p(&dir, "b.json");
    for path in [&a, &b] {
        let out = bin(&["synth", "--seed", "42", "--assets", "5", "--periods", "4", "--output", path]);
        assert_eq!(code(&out), 0);
        assert!(stdout(&out).contains("n=20, q=15, constraints=5"), "{}", stdout(&out));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = p(&dir, "c.json");
    bin(&["synth", "--seed", "43", "--assets", "5", "--periods", "4", "--output", &c]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn reloaded_problem_gives_bit_identical_traces() {
    let dir = TempDir::new().unwrap();
    let problem = synth(&dir, "p.json", 9);
    let (t1, t2) = (p(&dir, "t1.csv"), p(&dir, "t2.csv"));
    let (s1, s2) = (p(&dir, "s1.txt"), p(&dir, "s2.txt"));
    bin(&["solve", "--problem", &problem, "--plot", &t1, "--solution", &s1]);
    bin(&["solve", "--problem", &problem, "--plot", &t2, "--solution", &s2]);
    let trace = fs::read_to_string(&t1).unwrap();
    assert!(trace.starts_with("k,residual,"));
    assert!(trace.lines().count() > 2);
    assert_eq!(trace, fs::read_to_string(&t2).unwrap());
    assert_eq!(fs::read(&s1).unwrap(), fs::read(&s2).unwrap());

    // same instance built in memory, never serialized
    let inst = generate(&SynthConfig {
        seed: 9,
        n_assets: 3,
        periods: 2,
        ret_low: -0.5,
        ret_high: 0.5,
        eig_min: 0.1,
        eig_max: 1.0,
        ..SynthConfig::default()
    })
    .unwrap();
    let sp = stack(&inst.model.problem).unwrap();
    let r = solve(
        &sp,
        &SolverConfig {
            record_trace: true,
            ..SolverConfig::default()
        },
    )
    .unwrap();
    let mut direct = Vec::new();
    write_trace_csv(&mut direct, r.trace.as_ref().unwrap()).unwrap();
    assert_eq!(trace, String::from_utf8(direct).unwrap());
}

#[test]
fn compare_prints_one_row_per_solver() {
    let dir = TempDir::new().unwrap();
    let problem = synth(&dir, "p.json", 4);
    let csv = p(&dir, "table.csv");
    let out = bin(&["compare", "--problem", &problem, "--csv", &csv]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = stdout(&out);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 4, "{table}");
    let mut objectives = Vec::new();
    for (row, name) in rows.iter().zip(["sbsa", "sbsa_lsa", "sb", "admm"]) {
        let cells: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(cells[0], name);
        objectives.push(cells[3].parse::<f64>().unwrap_or_else(|_| panic!("row {row}")));
    }
    let lo = objectives.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = objectives.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(hi - lo <= 1e-3 * lo.abs().max(1e-3), "{objectives:?}");
    let csv_text = fs::read_to_string(&csv).unwrap();
    assert_eq!(csv_text.lines().count(), 5);
    assert!(csv_text.starts_with("solver,termination,"));
}

#[test]
fn compare_marks_capped_solvers_and_keeps_going() {
    let dir = TempDir::new().unwrap();
    let problem = synth(&dir, "p.json", 4);
    let out = bin(&["compare", "--problem", &problem, "--admm-max-iters", "1"]);
    let table = stdout(&out);
    let admm = table.lines().find(|l| l.starts_with("admm")).unwrap();
    assert!(admm.contains("---"), "{table}");
    let sbsa = table.lines().find(|l| l.starts_with("sbsa ")).unwrap();
    assert!(!sbsa.contains("---"), "{table}");
}

#[test]
fn malformed_csv_reports_the_line() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("r.csv");
    fs::write(&data, "date,A,B\n200001,0.1,0.2\n200002,0.1,oops\n").unwrap();
    let out = bin(&["solve", "--data", data.to_str().unwrap(), "--window", "1", "--stride", "1"]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains(":3") && err.contains("oops"), "{err}");
}

#[test]
fn data_pipeline_end_to_end() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("r.csv");
    returns_csv(&data, 40, 4);
    let data = data.to_str().unwrap();
    let common = ["--data", data, "--percent", "--window", "12", "--stride", "6", "--years", "3"];

    let mut args = vec!["solve"];
    args.extend(common);
    let out = bin(&args);
    assert_eq!(code(&out), 0, "{}\n{}", stdout(&out), stderr(&out));
    let report = stdout(&out);
    assert_eq!(field(&report, "n"), "12");
    assert_eq!(field(&report, "constraints"), "4");
    let density: f64 = field(&report, "density_pct").parse().unwrap();
    assert!((0.0..=100.0).contains(&density));

    // too short for the requested window
    let out = bin(&["solve", "--data", data, "--window", "60"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn metrics_of_a_stored_solution() {
    let dir = TempDir::new().unwrap();
    let problem = synth(&dir, "p.json", 4);
    let sol = p(&dir, "u.txt");
    assert_eq!(code(&bin(&["solve", "--problem", &problem, "--solution", &sol])), 0);
    let out = bin(&["metrics", "--problem", &problem, "--solution", &sol, "--format", "json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(json.to_string().contains("density_pct"), "{json}");
}
