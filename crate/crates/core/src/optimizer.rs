//! Protocol design: maximize secondary utilization over `(q, r)` in
//! `[ε, 1-ε]²` subject to a cap on mean primary collisions.
//!
//! The search is an exhaustive grid followed by a bounded pattern search
//! started from the best grid point. Infeasible trial points (unstable, or
//! above the collision cap) are rejected rather than penalized.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{core_quantities, full_metrics, secondary_utilization};
use crate::error::{Error, Result};
use crate::model::{DesignProblem, Metrics, Threshold};

/// Two objective values closer than this are treated as equal on the grid.
pub const TIE_TOLERANCE: f64 = 1e-12;
/// `|t_col - γ|` within which a binding solution is reported as on the contour.
pub const CONTOUR_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Points per axis of the initial grid.
    pub grid_resolution: usize,
    pub refine: bool,
    /// Pattern search stops once its step falls below this.
    pub min_step: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            grid_resolution: 200,
            refine: true,
            min_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSolution {
    pub q_opt: f64,
    pub r_opt: f64,
    pub c_s: f64,
    pub p_s: f64,
    pub t_col: f64,
    /// The collision cap excludes the unconstrained optimum.
    pub binding: bool,
    /// Binding and within [`CONTOUR_TOLERANCE`] of the cap.
    pub on_contour: bool,
    pub grid_resolution: usize,
    pub refined: bool,
}

/// Objective and constraint values at one `(q, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEval {
    pub q: f64,
    pub r: f64,
    pub p_s: f64,
    pub t_col: f64,
    /// NaN when the point is unstable or could not be evaluated.
    pub c_s: f64,
}

impl PointEval {
    pub fn is_stable(&self) -> bool {
        self.c_s.is_finite()
    }

    fn feasible(&self, threshold: Threshold) -> bool {
        self.is_stable() && threshold.admits(self.t_col)
    }
}

/// Evaluates `P_s`, `T_col` and `C_s` at `(q, r)`; failures become NaN fields.
pub fn evaluate_point(problem: &DesignProblem, q: f64, r: f64) -> PointEval {
    let nan = PointEval {
        q,
        r,
        p_s: f64::NAN,
        t_col: f64::NAN,
        c_s: f64::NAN,
    };
    let Ok(protocol) = problem.protocol(q, r) else {
        return nan;
    };
    let config = &problem.config;
    match core_quantities(&protocol, config.n_secondary, false) {
        Ok(core) => {
            let stable = core.t_col < config.t_int - config.t_pac;
            PointEval {
                q,
                r,
                p_s: core.p_s,
                t_col: core.t_col,
                c_s: if stable {
                    secondary_utilization(core.p_s, core.t_col, config)
                } else {
                    f64::NAN
                },
            }
        }
        Err(_) => nan,
    }
}

/// `resolution` evenly spaced points from `lo` to `hi`; a single point sits at `lo`.
pub fn axis_points(lo: f64, hi: f64, resolution: usize) -> Vec<f64> {
    match resolution {
        0 => Vec::new(),
        1 => vec![lo],
        n => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// Row-major table of point evaluations, `q` outer and `r` inner.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTable {
    pub qs: Vec<f64>,
    pub rs: Vec<f64>,
    pub points: Vec<PointEval>,
}

impl GridTable {
    pub fn evaluate(problem: &DesignProblem, qs: Vec<f64>, rs: Vec<f64>) -> Self {
        let points = qs
            .par_iter()
            .flat_map_iter(|&q| rs.iter().map(move |&r| evaluate_point(problem, q, r)))
            .collect();
        Self { qs, rs, points }
    }

    /// The square `[ε, 1-ε]²` at the given resolution.
    pub fn restricted_domain(problem: &DesignProblem, resolution: usize) -> Self {
        let eps = problem.epsilon;
        let axis = axis_points(eps, 1.0 - eps, resolution);
        Self::evaluate(problem, axis.clone(), axis)
    }

    /// Index of the best feasible point, ties going to the smallest `(q, r)`.
    pub fn best(&self, threshold: Threshold) -> Option<usize> {
        let best = self
            .points
            .iter()
            .filter(|p| p.feasible(threshold))
            .map(|p| p.c_s)
            .fold(f64::NEG_INFINITY, f64::max);
        if best == f64::NEG_INFINITY {
            return None;
        }
        self.points
            .iter()
            .position(|p| p.feasible(threshold) && p.c_s >= best - TIE_TOLERANCE)
    }

    pub fn argmax_by<F: Fn(&PointEval) -> f64>(&self, key: F) -> Option<&PointEval> {
        self.points
            .iter()
            .filter(|p| key(p).is_finite())
            .fold(None, |acc: Option<&PointEval>, p| match acc {
                Some(a) if key(a) >= key(p) => Some(a),
                _ => Some(p),
            })
    }

    fn spacing(&self) -> f64 {
        let s = |v: &[f64]| if v.len() > 1 { v[1] - v[0] } else { 0.0 };
        s(&self.qs).max(s(&self.rs))
    }
}

/// Lattice points per side of the incumbent in one refinement poll.
const POLL_HALF_POINTS: usize = 10;

/// Pattern search on a moving local lattice: polls a
/// `(2k+1) x (2k+1)` lattice of half-width `h` around the incumbent, moves to
/// its best feasible point while that improves, and halves `h` otherwise.
/// A dense poll lets the incumbent slide along a binding contour, where
/// single compass steps mostly land on the infeasible side.
fn pattern_search(problem: &DesignProblem, start: PointEval, half_width: f64, min_step: f64, threshold: Threshold) -> PointEval {
    let (lo, hi) = (problem.epsilon, 1.0 - problem.epsilon);
    let k = POLL_HALF_POINTS as i64;
    let mut current = start;
    let mut h = half_width;
    let mut polls = 0;
    while h / k as f64 >= min_step && polls < 10_000 {
        polls += 1;
        let step = h / k as f64;
        let mut best: Option<PointEval> = None;
        for i in -k..=k {
            for j in -k..=k {
                if i == 0 && j == 0 {
                    continue;
                }
                let q = (current.q + i as f64 * step).clamp(lo, hi);
                let r = (current.r + j as f64 * step).clamp(lo, hi);
                let trial = evaluate_point(problem, q, r);
                if !trial.feasible(threshold) || trial.c_s <= current.c_s {
                    continue;
                }
                if best.is_none_or(|b| trial.c_s > b.c_s) {
                    best = Some(trial);
                }
            }
        }
        match best {
            Some(p) => current = p,
            None => h *= 0.5,
        }
    }
    current
}

/// Largest feasible `q` on the slice at `r`, bracketed outward from `q0`
/// and then bisected. `None` when the slice has no feasible point near `q0`.
fn contour_point(problem: &DesignProblem, q0: f64, r: f64, threshold: Threshold) -> Option<PointEval> {
    let (lo, hi) = (problem.epsilon, 1.0 - problem.epsilon);
    let at = |q: f64| evaluate_point(problem, q, r);
    let start = at(q0);
    let (mut good, mut bad) = if start.feasible(threshold) {
        let mut good = start;
        let mut delta = 1e-4;
        loop {
            let q = (good.q + delta).min(hi);
            let trial = at(q);
            if !trial.feasible(threshold) {
                break (good, q);
            }
            if q >= hi {
                return Some(trial);
            }
            good = trial;
            delta *= 2.0;
        }
    } else {
        let mut bad = q0;
        let mut delta = 1e-4;
        loop {
            let q = (bad - delta).max(lo);
            let trial = at(q);
            if trial.feasible(threshold) {
                break (trial, bad);
            }
            if q <= lo {
                return None;
            }
            bad = q;
            delta *= 2.0;
        }
    };
    for _ in 0..80 {
        let mid = 0.5 * (good.q + bad);
        if mid <= good.q || mid >= bad {
            break;
        }
        let trial = at(mid);
        if trial.feasible(threshold) {
            good = trial;
        } else {
            bad = mid;
        }
    }
    Some(good)
}

/// One-dimensional search in `r` along the boundary of the feasible set,
/// with `q` placed on the boundary for every trial `r`.
fn contour_slide(problem: &DesignProblem, start: PointEval, step: f64, min_step: f64, threshold: Threshold) -> PointEval {
    let (lo, hi) = (problem.epsilon, 1.0 - problem.epsilon);
    let mut current = start;
    let mut step = step;
    let mut moves = 0;
    while step >= min_step && moves < 100_000 {
        moves += 1;
        let mut best: Option<PointEval> = None;
        for dir in [-1.0, 1.0] {
            let r = (current.r + dir * step).clamp(lo, hi);
            if r == current.r {
                continue;
            }
            if let Some(p) = contour_point(problem, current.q, r, threshold) {
                if p.c_s > current.c_s && best.is_none_or(|b| p.c_s > b.c_s) {
                    best = Some(p);
                }
            }
        }
        match best {
            Some(p) => {
                current = p;
                step *= 2.0;
            }
            None => step *= 0.5,
        }
    }
    current
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Optimizer {
    pub options: SearchOptions,
}

impl Optimizer {
    pub fn new(options: SearchOptions) -> Self {
        Self { options }
    }

    pub fn grid(&self, problem: &DesignProblem) -> GridTable {
        GridTable::restricted_domain(problem, self.options.grid_resolution)
    }

    fn search(&self, problem: &DesignProblem, grid: &GridTable, threshold: Threshold) -> Result<PointEval> {
        let Some(idx) = grid.best(threshold) else {
            if grid.points.iter().all(|p| !p.is_stable()) {
                return Err(Error::NoStablePoint);
            }
            let min_t_col = grid
                .points
                .iter()
                .filter(|p| p.is_stable())
                .map(|p| p.t_col)
                .fold(f64::INFINITY, f64::min);
            return Err(Error::Infeasible {
                gamma: threshold.gamma().unwrap_or(f64::INFINITY),
                min_t_col,
            });
        };
        let start = grid.points[idx];
        if !self.options.refine {
            return Ok(start);
        }
        let step = match grid.spacing() {
            s if s > 0.0 => s,
            _ => 0.01,
        };
        let min_step = self.options.min_step;
        let mut best = pattern_search(problem, start, step, min_step, threshold);
        if threshold.gamma().is_some() {
            for _ in 0..20 {
                let slid = contour_slide(problem, best, step, min_step, threshold);
                if slid.c_s <= best.c_s {
                    break;
                }
                best = pattern_search(problem, slid, step, min_step, threshold);
            }
        }
        Ok(best)
    }

    fn solution(&self, p: PointEval, binding: bool, threshold: Threshold) -> DesignSolution {
        let on_contour = binding
            && threshold
                .gamma()
                .is_some_and(|g| (p.t_col - g).abs() <= CONTOUR_TOLERANCE);
        DesignSolution {
            q_opt: p.q,
            r_opt: p.r,
            c_s: p.c_s,
            p_s: p.p_s,
            t_col: p.t_col,
            binding,
            on_contour,
            grid_resolution: self.options.grid_resolution,
            refined: self.options.refine,
        }
    }

    /// Best protocol with no cap on collisions.
    pub fn solve_unconstrained(&self, problem: &DesignProblem) -> Result<DesignSolution> {
        let grid = self.grid(problem);
        self.unconstrained_on(problem, &grid)
    }

    pub fn unconstrained_on(&self, problem: &DesignProblem, grid: &GridTable) -> Result<DesignSolution> {
        let p = self.search(problem, grid, Threshold::Unconstrained)?;
        Ok(self.solution(p, false, Threshold::Unconstrained))
    }

    /// Best protocol with `T_col <= γ`; identical to the unconstrained
    /// optimum whenever that already satisfies the cap.
    pub fn solve_constrained(&self, problem: &DesignProblem) -> Result<DesignSolution> {
        let grid = self.grid(problem);
        let free = self.unconstrained_on(problem, &grid)?;
        self.constrained_on(problem, &grid, &free)
    }

    /// Constrained solve reusing a grid and unconstrained optimum computed
    /// for the same network and fairness level.
    pub fn constrained_on(
        &self,
        problem: &DesignProblem,
        grid: &GridTable,
        unconstrained: &DesignSolution,
    ) -> Result<DesignSolution> {
        let threshold = problem.threshold;
        if threshold.admits(unconstrained.t_col) {
            return Ok(*unconstrained);
        }
        let p = self.search(problem, grid, threshold)?;
        Ok(self.solution(p, true, threshold))
    }

    /// Designs for `n_hat` users, then measures that protocol with `n_true`.
    pub fn evaluate_mismatched(&self, problem: &DesignProblem, n_true: usize, n_hat: usize) -> Result<Metrics> {
        self.evaluate_mismatched_detailed(problem, n_true, n_hat)
            .map(|(_, m)| m)
    }

    pub fn evaluate_mismatched_detailed(
        &self,
        problem: &DesignProblem,
        n_true: usize,
        n_hat: usize,
    ) -> Result<(DesignSolution, Metrics)> {
        if n_true == 0 {
            return Err(Error::invalid("n_true", "must be at least 1"));
        }
        let design = self.solve_constrained(&problem.with_n(n_hat)?)?;
        let protocol = problem.protocol(design.q_opt, design.r_opt)?;
        let metrics = full_metrics(&protocol, &problem.config.with_n(n_true)?, false)?;
        Ok((design, metrics))
    }

    /// Solves the design problem once per axis value, holding the other
    /// parameters at `problem`'s values. Failed points are recorded, not fatal.
    pub fn sweep(&self, problem: &DesignProblem, axis: SweepAxis, values: &[f64]) -> Result<SweepResult> {
        if values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("values", "axis values must be strictly increasing"));
        }
        let as_count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::invalid("values", format!("{v} is not a positive integer")))
            }
        };
        if matches!(axis, SweepAxis::N | SweepAxis::NHat) {
            for &v in values {
                as_count(v)?;
            }
        }

        let points = match axis {
            SweepAxis::Gamma => {
                let grid = self.grid(problem);
                let free = self.unconstrained_on(problem, &grid);
                values
                    .iter()
                    .map(|&g| {
                        let outcome = free.as_ref().map_err(clone_error).and_then(|free| {
                            let p = problem.with_threshold(Threshold::Gamma(g))?;
                            self.constrained_on(&p, &grid, free)
                        });
                        SweepPoint::solved(g, outcome)
                    })
                    .collect()
            }
            SweepAxis::N => values
                .iter()
                .map(|&v| {
                    let outcome = problem
                        .with_n(v as usize)
                        .and_then(|p| self.solve_constrained(&p));
                    SweepPoint::solved(v, outcome)
                })
                .collect(),
            SweepAxis::Theta => values
                .iter()
                .map(|&v| {
                    let outcome = problem.with_theta(v).and_then(|p| self.solve_constrained(&p));
                    SweepPoint::solved(v, outcome)
                })
                .collect(),
            SweepAxis::NHat => values
                .iter()
                .map(|&v| {
                    let outcome =
                        self.evaluate_mismatched_detailed(problem, problem.config.n_secondary, v as usize);
                    SweepPoint {
                        value: v,
                        outcome: match outcome {
                            Ok((design, metrics)) => SweepOutcome::Mismatched { design, metrics },
                            Err(e) => SweepOutcome::Failed { error: e.to_string() },
                        },
                    }
                })
                .collect(),
        };
        Ok(SweepResult { axis, points })
    }
}

fn clone_error(e: &Error) -> Error {
    match e {
        Error::NoStablePoint => Error::NoStablePoint,
        Error::Infeasible { gamma, min_t_col } => Error::Infeasible {
            gamma: *gamma,
            min_t_col: *min_t_col,
        },
        other => Error::Domain(other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Gamma,
    N,
    Theta,
    NHat,
}

impl SweepAxis {
    pub fn label(&self) -> &'static str {
        match self {
            SweepAxis::Gamma => "gamma",
            SweepAxis::N => "n",
            SweepAxis::Theta => "theta",
            SweepAxis::NHat => "n_hat",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(SweepAxis::Gamma),
            "n" => Ok(SweepAxis::N),
            "theta" => Ok(SweepAxis::Theta),
            "n_hat" | "n-hat" => Ok(SweepAxis::NHat),
            other => Err(Error::invalid("axis", format!("unknown sweep axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SweepOutcome {
    Solved(DesignSolution),
    Mismatched { design: DesignSolution, metrics: Metrics },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub outcome: SweepOutcome,
}

impl SweepPoint {
    fn solved(value: f64, outcome: Result<DesignSolution>) -> Self {
        Self {
            value,
            outcome: match outcome {
                Ok(s) => SweepOutcome::Solved(s),
                Err(e) => SweepOutcome::Failed { error: e.to_string() },
            },
        }
    }

    pub fn solution(&self) -> Option<&DesignSolution> {
        match &self.outcome {
            SweepOutcome::Solved(s) => Some(s),
            SweepOutcome::Mismatched { design, .. } => Some(design),
            SweepOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}
