use std::path::Path;
use std::process::{Command, Output};

use cogmac_core::optimizer::{axis_points, GridTable};
use cogmac_core::{DesignProblem, NetworkConfig, TrafficModel};

fn cogmac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cogmac"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn analyze_baseline() {
    let out = cogmac(&["analyze", "--q", "0.10", "--r", "0.37"]);
    assert_eq!(code(&out), 0);
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((m["c_s"].as_f64().unwrap() - 0.390).abs() <= 0.002);
    assert!((m["t_col"].as_f64().unwrap() - 1.376).abs() <= 0.01);
}

#[test]
fn analyze_exit_codes() {
    assert_eq!(code(&cogmac(&["analyze", "--q", "1.5", "--r", "0.3"])), 2);
    assert_eq!(code(&cogmac(&["analyze", "--q", "0.99", "--r", "0.99"])), 3);
    assert_eq!(code(&cogmac(&["analyze"])), 2);
    assert_eq!(code(&cogmac(&["analyze", "--q", "0.1"])), 2);
    assert_eq!(code(&cogmac(&["analyze", "--bogus"])), 2);
}

#[test]
fn contour_single_point_and_unwritable_path() {
    let out = cogmac(&["contour", "--grid", "1"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "q,r,p_s,t_col,c_s");
    assert_eq!(lines.len(), 2);
    assert!(!text.contains('\r'));

    let out = cogmac(&["contour", "--grid", "2", "--out", "/nonexistent-dir/grid.csv"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn contour_maxima_and_exact_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.csv");
    let out = cogmac(&["contour", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let (header, rows) = read_csv(&path);
    assert_eq!(header, ["q", "r", "p_s", "t_col", "c_s"]);
    assert_eq!(rows.len(), 200 * 200);
    let parsed: Vec<[f64; 5]> = rows
        .iter()
        .map(|r| std::array::from_fn(|i| r[i].parse::<f64>().unwrap()))
        .collect();

    // one grid step plus rounding of the two-decimal reference point
    let step = (1.0 - 2e-4) / 199.0 + 0.005;
    let argmax = |col: usize| {
        parsed
            .iter()
            .filter(|r| r[col].is_finite())
            .fold([0.0; 5], |a, r| if r[col] > a[col] { *r } else { a })
    };
    let ps = argmax(2);
    assert!((ps[0] - 0.11).abs() <= step && (ps[1] - 0.48).abs() <= step, "{ps:?}");
    let cs = argmax(4);
    assert!((cs[0] - 0.10).abs() <= step && (cs[1] - 0.37).abs() <= step, "{cs:?}");

    let cfg = NetworkConfig::new(10, 100.0, 50.0, TrafficModel::Geometric).unwrap();
    let problem = DesignProblem::unconstrained(cfg, 0.1).unwrap();
    let axis = axis_points(1e-4, 1.0 - 1e-4, 200);
    let grid = GridTable::evaluate(&problem, axis.clone(), axis);
    for (row, p) in parsed.iter().zip(&grid.points) {
        let same = |a: f64, b: f64| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan());
        assert!(same(row[0], p.q) && same(row[1], p.r) && same(row[2], p.p_s));
        assert!(same(row[3], p.t_col) && same(row[4], p.c_s));
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, args: &[&str]| {
        let path = dir.path().join(name);
        let mut full: Vec<&str> = args.to_vec();
        let p = path.to_str().unwrap().to_string();
        full.extend(["--out", &p]);
        assert_eq!(code(&cogmac(&full)), 0);
        std::fs::read(&path).unwrap()
    };
    let sim = ["simulate", "--q", "0.1", "--r", "0.37", "--horizon", "300000", "--seed", "4"];
    assert_eq!(run("a.json", &sim), run("b.json", &sim));
    let grid = ["contour", "--grid", "25"];
    assert_eq!(run("a.csv", &grid), run("b.csv", &grid));
    let opt = ["optimize", "--gamma", "1", "--grid", "40", "--format", "csv"];
    assert_eq!(run("c.csv", &opt), run("d.csv", &opt));
}

#[test]
fn sweep_marks_failed_points() {
    let out = cogmac(&["sweep", "--axis", "gamma", "--values", "1e-9,1", "--grid", "40"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "axis,value,status,q,r,p_s,t_col,c_s,binding,on_contour,error");
    assert!(lines[1].starts_with("gamma,0.000000001,failed,"));
    assert!(lines[2].starts_with("gamma,1,solved,"));
    assert_eq!(code(&cogmac(&["sweep", "--axis", "gamma", "--values", "2,1"])), 2);
    assert_eq!(code(&cogmac(&["sweep"])), 2);
}

#[test]
fn validate_long_intervals_agree() {
    let out = cogmac(&[
        "validate", "--q", "0.1", "--r", "0.37", "--t-int", "10000", "--t-pac", "5000", "--traffic",
        "deterministic", "--horizon", "10000000", "--seed", "2",
    ]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{text}");
    assert_eq!(text.lines().next().unwrap(), "metric,analytic,empirical,std_error,z,status");
    assert_eq!(text.matches(",pass").count(), 4);
}

#[test]
fn validate_preconditions_and_p2_bound() {
    assert_eq!(code(&cogmac(&["validate", "--q", "0.1", "--r", "0.37", "--horizon", "1000"])), 2);
    let out = cogmac(&["validate", "--q", "0.1", "--r", "0.37", "--horizon", "1000000", "--p2", "--b", "5"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let bound = text
        .lines()
        .find(|l| l.starts_with("max_collisions_in_on_period,"))
        .unwrap();
    assert!(bound.starts_with("max_collisions_in_on_period,5,") && bound.ends_with(",pass"));
}

#[test]
fn run_reads_command_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out = dir.path().join("metrics.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "command": "analyze",
            "problem": {
                "config": {"n_secondary": 10, "t_int": 100.0, "t_pac": 50.0},
                "theta": 0.1
            },
            "protocol": {"q": 0.1, "r": 0.37, "theta": 0.1},
            "output": {"path": out, "format": "json"}
        })
        .to_string(),
    )
    .unwrap();
    let res = cogmac(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert!((m["p_s"].as_f64().unwrap() - 0.8017).abs() < 1e-3);

    std::fs::write(&cfg, r#"{"command": "simulate", "problem": {"config": {"n_secondary": 2, "t_int": 10, "t_pac": 5}, "theta": 0.5}}"#).unwrap();
    assert_eq!(code(&cogmac(&["run", "--config", cfg.to_str().unwrap()])), 2);
    assert_eq!(code(&cogmac(&["run"])), 2);
    assert_eq!(code(&cogmac(&["run", "--config", "/nonexistent.json"])), 4);
}

#[test]
fn trace_file_has_header_and_one_row_per_slot() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let out = cogmac(&[
        "simulate", "--q", "0.1", "--r", "0.37", "--horizon", "20000", "--trace", trace.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let (header, rows) = read_csv(&trace);
    assert_eq!(header, ["slot", "y_p", "transmitters", "outcome"]);
    assert_eq!(rows.len(), 20000);
}
