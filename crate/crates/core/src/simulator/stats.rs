use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimator {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl MeanEstimator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum / self.count as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        let n = self.count as f64;
        let mean = self.sum / n;
        let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }

    pub fn merge(&mut self, other: &MeanEstimator) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }
}

/// Ratio `sum(x) / sum(y)` over independent-ish cycles, with a delta-method
/// standard error.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimator {
    pub count: u64,
    pub sum_x: f64,
    pub sum_y: f64,
    pub sum_xx: f64,
    pub sum_yy: f64,
    pub sum_xy: f64,
}

impl RatioEstimator {
    pub fn push(&mut self, x: f64, y: f64) {
        self.count += 1;
        self.sum_x += x;
        self.sum_y += y;
        self.sum_xx += x * x;
        self.sum_yy += y * y;
        self.sum_xy += x * y;
    }

    pub fn ratio(&self) -> f64 {
        if self.sum_y == 0.0 {
            f64::NAN
        } else {
            self.sum_x / self.sum_y
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count < 2 || self.sum_y == 0.0 {
            return f64::NAN;
        }
        let n = self.count as f64;
        let r = self.ratio();
        let ss = (self.sum_xx - 2.0 * r * self.sum_xy + r * r * self.sum_yy).max(0.0);
        let s2 = ss / (n - 1.0);
        let y_bar = self.sum_y / n;
        (s2 / n).sqrt() / y_bar
    }

    pub fn merge(&mut self, other: &RatioEstimator) {
        self.count += other.count;
        self.sum_x += other.sum_x;
        self.sum_y += other.sum_y;
        self.sum_xx += other.sum_xx;
        self.sum_yy += other.sum_yy;
        self.sum_xy += other.sum_xy;
    }
}

/// Counters gathered over complete primary cycles (an off period and the
/// on period that follows it).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub warmup_slots: u64,
    /// Slots inside complete measured cycles.
    pub slots_total: u64,
    pub cycles: u64,
    pub pu_attempts: u64,
    pub pu_collisions: u64,
    pub pu_successes: u64,
    pub pu_off_slots: u64,
    pub su_successes: u64,
    pub successes_total: u64,
    pub idle_slots: u64,
    pub collision_slots: u64,
    pub on_periods_observed: u64,
    pub off_periods_observed: u64,
    pub max_collisions_in_on_period: u64,
    pub per_user_success_counts: Vec<u64>,
    /// Mean primary collisions per completed on period.
    pub t_col_empirical: f64,

    /// Slots of success runs by one secondary user during off periods.
    pub success_run_slots: u64,
    /// Runs ended by the successful user releasing the channel.
    pub complete_success_runs: u64,
    /// Runs cut short by the primary turning on.
    pub truncated_success_runs: u64,

    /// Secondary transmissions in a slot right after a primary success.
    pub non_intrusion_violations: u64,
    /// Off periods whose first slot was not idle.
    pub off_periods_not_starting_idle: u64,

    pub t_col_samples: MeanEstimator,
    /// Per cycle: secondary successes over off slots.
    pub p_s_ratio: RatioEstimator,
    /// Per cycle: primary collisions over primary attempts.
    pub p_c_ratio: RatioEstimator,
    /// Per cycle: secondary successes over slots.
    pub c_s_ratio: RatioEstimator,
    /// Per cycle: all successes over slots.
    pub c_ratio: RatioEstimator,
}

impl SimStats {
    pub(crate) fn new(n: usize, warmup_slots: u64) -> Self {
        Self {
            warmup_slots,
            per_user_success_counts: vec![0; n],
            ..Default::default()
        }
    }

    pub fn p_s(&self) -> f64 {
        ratio(self.su_successes, self.pu_off_slots)
    }

    pub fn p_c(&self) -> f64 {
        ratio(self.pu_collisions, self.pu_attempts)
    }

    pub fn c_s(&self) -> f64 {
        ratio(self.su_successes, self.slots_total)
    }

    pub fn c_total(&self) -> f64 {
        ratio(self.successes_total, self.slots_total)
    }

    /// Largest over smallest per-user success count.
    pub fn user_success_spread(&self) -> f64 {
        let max = self.per_user_success_counts.iter().copied().max().unwrap_or(0);
        let min = self.per_user_success_counts.iter().copied().min().unwrap_or(0);
        if min == 0 {
            f64::INFINITY
        } else {
            max as f64 / min as f64
        }
    }

    /// Adds another run's counters, as for independent replications.
    pub fn merge(&mut self, other: &SimStats) {
        self.warmup_slots += other.warmup_slots;
        self.slots_total += other.slots_total;
        self.cycles += other.cycles;
        self.pu_attempts += other.pu_attempts;
        self.pu_collisions += other.pu_collisions;
        self.pu_successes += other.pu_successes;
        self.pu_off_slots += other.pu_off_slots;
        self.su_successes += other.su_successes;
        self.successes_total += other.successes_total;
        self.idle_slots += other.idle_slots;
        self.collision_slots += other.collision_slots;
        self.on_periods_observed += other.on_periods_observed;
        self.off_periods_observed += other.off_periods_observed;
        self.max_collisions_in_on_period = self
            .max_collisions_in_on_period
            .max(other.max_collisions_in_on_period);
        if self.per_user_success_counts.len() < other.per_user_success_counts.len() {
            self.per_user_success_counts
                .resize(other.per_user_success_counts.len(), 0);
        }
        for (a, b) in self
            .per_user_success_counts
            .iter_mut()
            .zip(&other.per_user_success_counts)
        {
            *a += b;
        }
        self.success_run_slots += other.success_run_slots;
        self.complete_success_runs += other.complete_success_runs;
        self.truncated_success_runs += other.truncated_success_runs;
        self.non_intrusion_violations += other.non_intrusion_violations;
        self.off_periods_not_starting_idle += other.off_periods_not_starting_idle;
        self.t_col_samples.merge(&other.t_col_samples);
        self.p_s_ratio.merge(&other.p_s_ratio);
        self.p_c_ratio.merge(&other.p_c_ratio);
        self.c_s_ratio.merge(&other.c_s_ratio);
        self.c_ratio.merge(&other.c_ratio);
        self.t_col_empirical = self.t_col_samples.mean();
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

/// Mean number of consecutive successes by one secondary user while the
/// primary is off.
///
/// Runs cut short by a primary arrival are censored observations of a
/// geometric length: each success slot is one trial of "does the run go
/// on", except the last slot of a truncated run whose trial was never
/// observed. The estimate is trials per completed run.
pub fn fairness_estimate(stats: &SimStats) -> Result<f64> {
    if stats.complete_success_runs == 0 {
        return Err(Error::UndefinedEstimate(
            "no completed secondary success run during off periods",
        ));
    }
    let trials = stats.success_run_slots - stats.truncated_success_runs;
    Ok(trials as f64 / stats.complete_success_runs as f64)
}
