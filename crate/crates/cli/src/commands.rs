use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use cogmac_core::optimizer::{axis_points, GridTable, Optimizer, SearchOptions, SweepOutcome, SweepResult};
use cogmac_core::simulator::{fairness_estimate, run_observed, SimStats, TraceWriter};
use cogmac_core::{full_metrics, EnhancedPolicy, Metrics, NetworkConfig, Protocol};
use serde::Serialize;

use crate::config::{Command, Format, RunConfig};
use crate::CliError;

/// Runs the configured command, writing its result to the output target.
/// Returns `false` when validation found a disagreement.
pub fn execute(rc: &RunConfig) -> Result<bool, CliError> {
    rc.check_complete()?;
    match rc.command {
        Command::Analyze => analyze(rc).map(|_| true),
        Command::Contour => contour(rc).map(|_| true),
        Command::Optimize => optimize(rc).map(|_| true),
        Command::Sweep => sweep(rc).map(|_| true),
        Command::Simulate => simulate(rc).map(|_| true),
        Command::Validate => validate(rc),
    }
}

fn io_err(path: Option<&Path>, e: impl std::fmt::Display) -> CliError {
    match path {
        Some(p) => CliError::Io(format!("{}: {e}", p.display())),
        None => CliError::Io(format!("stdout: {e}")),
    }
}

/// Opens the output target before any work is done, so a bad path fails fast.
fn sink(rc: &RunConfig) -> Result<Box<dyn Write>, CliError> {
    match rc.out_path() {
        Some(p) => {
            let f = File::create(p).map_err(|e| io_err(Some(p), e))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

fn emit_json<T: Serialize>(rc: &RunConfig, out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(|e| io_err(rc.out_path(), e))?;
    writeln!(out).map_err(|e| io_err(rc.out_path(), e))?;
    out.flush().map_err(|e| io_err(rc.out_path(), e))
}

fn emit_csv(rc: &RunConfig, out: &mut dyn Write, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let err = |e: csv::Error| io_err(rc.out_path(), e);
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(|e| io_err(rc.out_path(), e))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn metrics_rows(m: &Metrics) -> (Vec<&'static str>, Vec<String>) {
    (
        vec!["p_s", "t_ns_tilde", "t_s_tilde", "t_col", "p_c", "c_s", "c_p", "c_total", "efficiency"],
        [m.p_s, m.t_ns_tilde, m.t_s_tilde, m.t_col, m.p_c, m.c_s, m.c_p, m.c_total, m.efficiency]
            .into_iter()
            .map(num)
            .collect(),
    )
}

fn p1_of(rc: &RunConfig) -> bool {
    rc.sim.as_ref().is_some_and(|s| s.p1)
}

fn analyze(rc: &RunConfig) -> Result<(), CliError> {
    let protocol = rc.require_protocol()?;
    let mut out = sink(rc)?;
    let metrics = full_metrics(&protocol, &rc.problem.config, p1_of(rc))?;
    match rc.format() {
        Format::Json => emit_json(rc, &mut out, &metrics),
        Format::Csv => {
            let (header, row) = metrics_rows(&metrics);
            emit_csv(rc, &mut out, &header, &[row])
        }
    }
}

fn search_options(rc: &RunConfig) -> SearchOptions {
    SearchOptions {
        grid_resolution: rc.grid.as_ref().map_or(200, |g| g.resolution),
        ..Default::default()
    }
}

fn contour(rc: &RunConfig) -> Result<(), CliError> {
    let eps = rc.problem.epsilon;
    let (res, q_range, r_range) = match &rc.grid {
        Some(g) => (g.resolution, g.q_range, g.r_range),
        None => (200, None, None),
    };
    if res == 0 {
        return Err(CliError::Usage("grid resolution must be at least 1".into()));
    }
    for (lo, hi) in [q_range, r_range].into_iter().flatten() {
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(CliError::Usage(format!("grid range ({lo}, {hi}) is not inside [0, 1]")));
        }
    }
    let (q_lo, q_hi) = q_range.unwrap_or((eps, 1.0 - eps));
    let (r_lo, r_hi) = r_range.unwrap_or((eps, 1.0 - eps));
    let mut out = sink(rc)?;
    let grid = GridTable::evaluate(&rc.problem, axis_points(q_lo, q_hi, res), axis_points(r_lo, r_hi, res));
    match rc.format() {
        Format::Json => emit_json(rc, &mut out, &grid.points),
        Format::Csv => {
            let rows: Vec<Vec<String>> = grid
                .points
                .iter()
                .map(|p| vec![num(p.q), num(p.r), num(p.p_s), num(p.t_col), num(p.c_s)])
                .collect();
            emit_csv(rc, &mut out, &["q", "r", "p_s", "t_col", "c_s"], &rows)
        }
    }
}

const SOLUTION_HEADER: [&str; 9] = [
    "q", "r", "p_s", "t_col", "c_s", "binding", "on_contour", "grid_resolution", "refined",
];

fn optimize(rc: &RunConfig) -> Result<(), CliError> {
    let mut out = sink(rc)?;
    let opt = Optimizer::new(search_options(rc));
    let s = opt.solve_constrained(&rc.problem)?;
    match rc.format() {
        Format::Json => emit_json(rc, &mut out, &s),
        Format::Csv => {
            let row = vec![
                num(s.q_opt),
                num(s.r_opt),
                num(s.p_s),
                num(s.t_col),
                num(s.c_s),
                s.binding.to_string(),
                s.on_contour.to_string(),
                s.grid_resolution.to_string(),
                s.refined.to_string(),
            ];
            emit_csv(rc, &mut out, &SOLUTION_HEADER, &[row])
        }
    }
}

fn sweep_rows(res: &SweepResult) -> Vec<Vec<String>> {
    let axis = res.axis.label().to_string();
    res.points
        .iter()
        .map(|p| {
            let mut row = vec![axis.clone(), num(p.value)];
            match &p.outcome {
                SweepOutcome::Solved(s) => row.extend([
                    "solved".into(),
                    num(s.q_opt),
                    num(s.r_opt),
                    num(s.p_s),
                    num(s.t_col),
                    num(s.c_s),
                    s.binding.to_string(),
                    s.on_contour.to_string(),
                    String::new(),
                ]),
                SweepOutcome::Mismatched { design, metrics } => row.extend([
                    "solved".into(),
                    num(design.q_opt),
                    num(design.r_opt),
                    num(metrics.p_s),
                    num(metrics.t_col),
                    num(metrics.c_s),
                    design.binding.to_string(),
                    design.on_contour.to_string(),
                    String::new(),
                ]),
                SweepOutcome::Failed { error } => {
                    row.push("failed".into());
                    row.extend(std::iter::repeat_n(num(f64::NAN), 5));
                    row.extend([String::new(), String::new(), error.clone()]);
                }
            }
            row
        })
        .collect()
}

fn sweep(rc: &RunConfig) -> Result<(), CliError> {
    let spec = rc
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Usage("sweep needs --axis and --values".into()))?;
    let mut out = sink(rc)?;
    let res = Optimizer::new(search_options(rc)).sweep(&rc.problem, spec.axis, &spec.values)?;
    match rc.format() {
        Format::Json => emit_json(rc, &mut out, &res),
        Format::Csv => emit_csv(
            rc,
            &mut out,
            &["axis", "value", "status", "q", "r", "p_s", "t_col", "c_s", "binding", "on_contour", "error"],
            &sweep_rows(&res),
        ),
    }
}

fn sim_inputs(rc: &RunConfig) -> Result<(Protocol, EnhancedPolicy, NetworkConfig), CliError> {
    let protocol = rc.require_protocol()?;
    let sim = rc.require_sim()?;
    let policy = if sim.p1 || sim.p2 {
        EnhancedPolicy::new(protocol, sim.b, sim.p1, sim.p2)?
    } else {
        EnhancedPolicy::plain(protocol)
    };
    let base = rc.problem.config;
    let config = match sim.traffic_model {
        Some(t) => NetworkConfig::new(base.n_secondary, base.t_int, base.t_pac, t)?,
        None => base,
    };
    Ok((protocol, policy, config))
}

fn simulate_stats(rc: &RunConfig, policy: &EnhancedPolicy, config: &NetworkConfig) -> Result<SimStats, CliError> {
    let sim = rc.require_sim()?;
    let Some(path) = &sim.trace else {
        return Ok(run_observed(policy, config, sim.horizon, sim.seed, |_| {})?);
    };
    let file = File::create(path).map_err(|e| io_err(Some(path), e))?;
    let mut writer = TraceWriter::new(BufWriter::new(file)).map_err(|e| io_err(Some(path), e))?;
    let mut failure: Option<io::Error> = None;
    let stats = run_observed(policy, config, sim.horizon, sim.seed, |rec| {
        if failure.is_none() {
            if let Err(e) = writer.write(rec) {
                failure = Some(e);
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(io_err(Some(path), e));
    }
    writer.finish().map_err(|e| io_err(Some(path), e))?;
    Ok(stats)
}

#[derive(Serialize)]
struct Estimate {
    estimate: f64,
    std_error: f64,
}

#[derive(Serialize)]
struct SimReport<'a> {
    policy: &'a EnhancedPolicy,
    config: &'a NetworkConfig,
    horizon: u64,
    seed: u64,
    p_s: Estimate,
    t_col: Estimate,
    p_c: Estimate,
    c_s: Estimate,
    c_total: Estimate,
    fairness_estimate: Option<f64>,
    user_success_spread: f64,
    stats: &'a SimStats,
}

fn simulate(rc: &RunConfig) -> Result<(), CliError> {
    let (_, policy, config) = sim_inputs(rc)?;
    let sim = rc.require_sim()?;
    let mut out = sink(rc)?;
    let s = simulate_stats(rc, &policy, &config)?;
    let est = |r: &cogmac_core::simulator::RatioEstimator| Estimate {
        estimate: r.ratio(),
        std_error: r.std_error(),
    };
    let report = SimReport {
        policy: &policy,
        config: &config,
        horizon: sim.horizon,
        seed: sim.seed,
        p_s: est(&s.p_s_ratio),
        t_col: Estimate {
            estimate: s.t_col_samples.mean(),
            std_error: s.t_col_samples.std_error(),
        },
        p_c: est(&s.p_c_ratio),
        c_s: est(&s.c_s_ratio),
        c_total: est(&s.c_ratio),
        fairness_estimate: fairness_estimate(&s).ok(),
        user_success_spread: s.user_success_spread(),
        stats: &s,
    };
    match rc.format() {
        Format::Json => emit_json(rc, &mut out, &report),
        Format::Csv => {
            let mut rows: Vec<Vec<String>> = [
                ("p_s", &report.p_s),
                ("t_col", &report.t_col),
                ("p_c", &report.p_c),
                ("c_s", &report.c_s),
                ("c_total", &report.c_total),
            ]
            .iter()
            .map(|(name, e)| vec![name.to_string(), num(e.estimate), num(e.std_error)])
            .collect();
            rows.push(vec![
                "fairness".into(),
                num(report.fairness_estimate.unwrap_or(f64::NAN)),
                num(f64::NAN),
            ]);
            rows.push(vec![
                "max_collisions_in_on_period".into(),
                s.max_collisions_in_on_period.to_string(),
                num(f64::NAN),
            ]);
            emit_csv(rc, &mut out, &["metric", "estimate", "std_error"], &rows)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationRow {
    pub metric: String,
    pub analytic: f64,
    pub empirical: f64,
    pub std_error: f64,
    pub z: f64,
    /// `pass`, `fail` or `not_checked`.
    pub status: &'static str,
}

fn validate(rc: &RunConfig) -> Result<bool, CliError> {
    let (protocol, policy, config) = sim_inputs(rc)?;
    let sim = rc.require_sim()?;
    let analytic = full_metrics(&protocol, &config, sim.p1)?;
    let mut out = sink(rc)?;
    let s = simulate_stats(rc, &policy, &config)?;

    // P2 changes collision counts in ways the chain analysis does not model,
    // so with P2 only its bound is checked.
    let checked = !sim.p2;
    let row = |metric: &str, analytic: f64, empirical: f64, se: f64| {
        let z = (empirical - analytic) / se;
        let status = if !checked {
            "not_checked"
        } else if z.abs() <= 3.0 {
            "pass"
        } else {
            "fail"
        };
        ValidationRow {
            metric: metric.into(),
            analytic,
            empirical,
            std_error: se,
            z,
            status,
        }
    };
    let mut rows = vec![
        row("p_s", analytic.p_s, s.p_s_ratio.ratio(), s.p_s_ratio.std_error()),
        row("t_col", analytic.t_col, s.t_col_samples.mean(), s.t_col_samples.std_error()),
        row("p_c", analytic.p_c, s.p_c_ratio.ratio(), s.p_c_ratio.std_error()),
        row("c_s", analytic.c_s, s.c_s_ratio.ratio(), s.c_s_ratio.std_error()),
    ];
    if sim.p2 {
        let bound = policy.b as f64;
        let max = s.max_collisions_in_on_period as f64;
        rows.push(ValidationRow {
            metric: "max_collisions_in_on_period".into(),
            analytic: bound,
            empirical: max,
            std_error: f64::NAN,
            z: f64::NAN,
            status: if max <= bound { "pass" } else { "fail" },
        });
    }
    let all_pass = rows.iter().all(|r| r.status != "fail");
    match rc.format() {
        Format::Json => emit_json(rc, &mut out, &rows)?,
        Format::Csv => {
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.metric.clone(),
                        num(r.analytic),
                        num(r.empirical),
                        num(r.std_error),
                        num(r.z),
                        r.status.to_string(),
                    ]
                })
                .collect();
            emit_csv(rc, &mut out, &["metric", "analytic", "empirical", "std_error", "z", "status"], &table)?;
        }
    }
    Ok(all_pass)
}
