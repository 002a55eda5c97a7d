//! Slot-level Monte Carlo simulation of one primary user and `N`
//! secondary users on a slotted channel.
//!
//! Each slot the primary transmits iff it has a packet; each secondary
//! transmits with a probability chosen from its own recent observations.
//! Exactly one transmitter succeeds, two or more collide.

mod stats;
mod trace;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NetworkConfig, Protocol, TrafficModel};

pub use stats::{fairness_estimate, MeanEstimator, RatioEstimator, SimStats};
pub use trace::{check_trace, ChannelOutcome, SlotRecord, TraceCheck, TraceWriter, TRACE_HEADER};

/// A secondary user's view of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Idle,
    Busy,
    Success,
    Failure,
}

/// A protocol with `B`-slot memory layered on a one-slot protocol.
///
/// * P1: after `success` then `failure`, wait one slot.
/// * P2: after `b` consecutive failures, wait one slot.
/// * otherwise follow the base protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnhancedPolicy {
    pub base: Protocol,
    pub b: usize,
    pub p1_enabled: bool,
    pub p2_enabled: bool,
}

impl EnhancedPolicy {
    pub fn new(base: Protocol, b: usize, p1_enabled: bool, p2_enabled: bool) -> Result<Self> {
        if b < 2 {
            return Err(Error::invalid("b", format!("memory length {b} must be at least 2")));
        }
        Ok(Self {
            base,
            b,
            p1_enabled,
            p2_enabled,
        })
    }

    /// The base protocol alone.
    pub fn plain(base: Protocol) -> Self {
        Self {
            base,
            b: 2,
            p1_enabled: false,
            p2_enabled: false,
        }
    }

    pub fn transmit_probability(&self, state: &SecondaryState) -> f64 {
        if self.p1_enabled
            && state.previous_outcome == Some(Outcome::Success)
            && state.last_outcome == Outcome::Failure
        {
            return 0.0;
        }
        if self.p2_enabled && state.consecutive_failures as usize >= self.b {
            return 0.0;
        }
        match state.last_outcome {
            Outcome::Idle => self.base.f_idle(),
            Outcome::Busy => self.base.f_busy(),
            Outcome::Success => self.base.f_success(),
            Outcome::Failure => self.base.f_failure(),
        }
    }
}

/// The last two observations and the current failure streak, which is all
/// that P1 and P2 read from a `B`-slot history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecondaryState {
    pub last_outcome: Outcome,
    pub previous_outcome: Option<Outcome>,
    pub consecutive_failures: u32,
}

impl SecondaryState {
    pub fn new() -> Self {
        Self {
            last_outcome: Outcome::Idle,
            previous_outcome: None,
            consecutive_failures: 0,
        }
    }

    pub fn observe(&mut self, outcome: Outcome) {
        self.previous_outcome = Some(self.last_outcome);
        self.last_outcome = outcome;
        if outcome == Outcome::Failure {
            self.consecutive_failures += 1;
        } else {
            self.consecutive_failures = 0;
        }
    }
}

impl Default for SecondaryState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimaryState {
    pub packets_remaining: u64,
    /// Slots until the next arrival; an arrival happens at the start of the
    /// slot in which this reads 0.
    pub slots_to_next_arrival: u64,
}

impl PrimaryState {
    pub fn is_on(&self) -> bool {
        self.packets_remaining > 0
    }
}

/// Draws inter-arrival gaps and packet counts.
#[derive(Debug, Clone)]
enum Sampler {
    Deterministic { mean: f64 },
    Geometric(Geometric),
}

impl Sampler {
    fn new(model: TrafficModel, mean: f64, field: &'static str) -> Result<Self> {
        match model {
            TrafficModel::Deterministic => Ok(Sampler::Deterministic { mean }),
            TrafficModel::Geometric => {
                if mean < 1.0 {
                    return Err(Error::invalid(
                        field,
                        format!("geometric traffic needs a mean of at least 1 slot, got {mean}"),
                    ));
                }
                Geometric::new(1.0 / mean)
                    .map(Sampler::Geometric)
                    .map_err(|e| Error::invalid(field, e.to_string()))
            }
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match self {
            Sampler::Deterministic { mean } => {
                let base = mean.floor();
                let frac = mean - base;
                base as u64 + u64::from(frac > 0.0 && rng.random_bool(frac))
            }
            Sampler::Geometric(g) => g.sample(rng) + 1,
        }
    }
}

/// Complete simulation state between slots.
#[derive(Debug, Clone)]
pub struct World {
    pub policy: EnhancedPolicy,
    pub config: NetworkConfig,
    pub slot: u64,
    pub primary: PrimaryState,
    pub secondaries: Vec<SecondaryState>,
    user_rngs: Vec<ChaCha8Rng>,
    traffic_rng: ChaCha8Rng,
    gaps: Sampler,
    packets: Sampler,
    last_outcome: Option<ChannelOutcome>,
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

impl World {
    /// Primary off and waiting a full inter-arrival gap; secondaries idle.
    /// Each user, and the traffic process, draws from its own stream of
    /// the master seed.
    pub fn new(policy: EnhancedPolicy, config: NetworkConfig, seed: u64) -> Result<Self> {
        let gaps = Sampler::new(config.traffic_model, config.t_int, "t_int")?;
        let packets = Sampler::new(config.traffic_model, config.t_pac, "t_pac")?;
        let mut traffic_rng = stream(seed, 0);
        let first_gap = gaps.sample(&mut traffic_rng).max(1);
        let n = config.n_secondary;
        Ok(Self {
            policy,
            config,
            slot: 0,
            primary: PrimaryState {
                packets_remaining: 0,
                slots_to_next_arrival: first_gap,
            },
            secondaries: vec![SecondaryState::new(); n],
            user_rngs: (0..n as u64).map(|i| stream(seed, i + 1)).collect(),
            traffic_rng,
            gaps,
            packets,
            last_outcome: None,
        })
    }

    /// Advances one slot and reports what happened in it.
    pub fn step(&mut self) -> SlotRecord {
        if self.primary.slots_to_next_arrival == 0 {
            self.primary.packets_remaining += self.packets.sample(&mut self.traffic_rng);
            self.primary.slots_to_next_arrival = self.gaps.sample(&mut self.traffic_rng).max(1);
        }
        let primary_on = self.primary.is_on();

        let mut transmitters = 0u32;
        let mut last_transmitter = usize::MAX;
        let mut transmitted = vec![false; self.secondaries.len()];
        for (i, (state, rng)) in self.secondaries.iter().zip(&mut self.user_rngs).enumerate() {
            let p = self.policy.transmit_probability(state);
            let tx = p >= 1.0 || (p > 0.0 && rng.random_bool(p));
            if tx {
                transmitted[i] = true;
                transmitters += 1;
                last_transmitter = i;
            }
        }

        let total = transmitters + u32::from(primary_on);
        let outcome = match total {
            0 => ChannelOutcome::Idle,
            1 if primary_on => ChannelOutcome::PrimarySuccess,
            1 => ChannelOutcome::SecondarySuccess {
                user: last_transmitter,
            },
            _ => ChannelOutcome::Collision,
        };

        for (state, &tx) in self.secondaries.iter_mut().zip(&transmitted) {
            let seen = match (tx, total) {
                (_, 0) => Outcome::Idle,
                (true, 1) => Outcome::Success,
                (true, _) => Outcome::Failure,
                (false, _) => Outcome::Busy,
            };
            state.observe(seen);
        }
        if outcome == ChannelOutcome::PrimarySuccess {
            self.primary.packets_remaining -= 1;
        }

        let record = SlotRecord {
            slot: self.slot,
            primary_on,
            secondary_transmitters: transmitters,
            outcome,
        };
        self.primary.slots_to_next_arrival -= 1;
        self.slot += 1;
        self.last_outcome = Some(outcome);
        record
    }
}

/// Slots discarded before measurement starts.
pub fn warmup_slots(config: &NetworkConfig) -> u64 {
    10_000u64.max((10.0 * config.t_int).ceil() as u64)
}

/// A reproducible simulation request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub policy: EnhancedPolicy,
    pub config: NetworkConfig,
    /// Total simulated slots, warm-up included.
    pub horizon: u64,
    pub seed: u64,
}

impl RunSpec {
    pub fn run(&self) -> Result<SimStats> {
        run(&self.policy, &self.config, self.horizon, self.seed)
    }
}

/// Counters for the cycle in progress; folded into the totals only when
/// the cycle completes.
#[derive(Debug, Clone, Default)]
struct Cycle {
    slots: u64,
    off_slots: u64,
    pu_attempts: u64,
    pu_collisions: u64,
    pu_successes: u64,
    su_successes: u64,
    idle: u64,
    collisions: u64,
    on_collisions: u64,
    saw_on: bool,
    per_user: Vec<u64>,
    run_slots: u64,
    complete_runs: u64,
    truncated_runs: u64,
    non_intrusion_violations: u64,
    not_idle_start: u64,
}

impl Cycle {
    fn new(n: usize) -> Self {
        Self {
            per_user: vec![0; n],
            ..Default::default()
        }
    }

    fn commit(&mut self, stats: &mut SimStats) {
        stats.cycles += 1;
        stats.slots_total += self.slots;
        stats.pu_attempts += self.pu_attempts;
        stats.pu_collisions += self.pu_collisions;
        stats.pu_successes += self.pu_successes;
        stats.pu_off_slots += self.off_slots;
        stats.su_successes += self.su_successes;
        stats.successes_total += self.su_successes + self.pu_successes;
        stats.idle_slots += self.idle;
        stats.collision_slots += self.collisions;
        stats.off_periods_observed += 1;
        stats.off_periods_not_starting_idle += self.not_idle_start;
        for (a, b) in stats.per_user_success_counts.iter_mut().zip(&self.per_user) {
            *a += b;
        }
        stats.success_run_slots += self.run_slots;
        stats.complete_success_runs += self.complete_runs;
        stats.truncated_success_runs += self.truncated_runs;
        stats.non_intrusion_violations += self.non_intrusion_violations;
        if self.saw_on {
            stats.on_periods_observed += 1;
            stats.max_collisions_in_on_period = stats.max_collisions_in_on_period.max(self.on_collisions);
            stats.t_col_samples.push(self.on_collisions as f64);
        }
        stats.p_s_ratio.push(self.su_successes as f64, self.off_slots as f64);
        stats.p_c_ratio.push(self.pu_collisions as f64, self.pu_attempts as f64);
        stats.c_s_ratio.push(self.su_successes as f64, self.slots as f64);
        stats
            .c_ratio
            .push((self.su_successes + self.pu_successes) as f64, self.slots as f64);
        stats.t_col_empirical = stats.t_col_samples.mean();

        let n = self.per_user.len();
        *self = Cycle::new(n);
    }
}

/// Simulates `horizon` slots and aggregates statistics over the complete
/// cycles that start after the warm-up.
pub fn run(policy: &EnhancedPolicy, config: &NetworkConfig, horizon: u64, seed: u64) -> Result<SimStats> {
    run_observed(policy, config, horizon, seed, |_| {})
}

/// Like [`run`], handing every simulated slot (warm-up included) to `observer`.
pub fn run_observed<F>(
    policy: &EnhancedPolicy,
    config: &NetworkConfig,
    horizon: u64,
    seed: u64,
    mut observer: F,
) -> Result<SimStats>
where
    F: FnMut(&SlotRecord),
{
    let warmup = warmup_slots(config);
    if horizon <= warmup {
        return Err(Error::invalid(
            "horizon",
            format!("{horizon} slots does not exceed the {warmup}-slot warm-up"),
        ));
    }
    let queue_limit = (100.0 * config.t_pac).ceil() as u64;
    let n = config.n_secondary;

    let mut world = World::new(*policy, *config, seed)?;
    let mut stats = SimStats::new(n, warmup);
    let mut cycle = Cycle::new(n);
    let mut measuring = false;
    let mut prev: Option<SlotRecord> = None;
    // (user, length) of the success run in progress.
    let mut open_run: Option<(usize, u64)> = None;

    for _ in 0..horizon {
        let rec = world.step();
        observer(&rec);

        let off_start = matches!(prev, Some(p) if p.primary_on) && !rec.primary_on;
        if off_start && rec.slot >= warmup {
            if measuring {
                cycle.commit(&mut stats);
            }
            measuring = true;
        }

        if measuring {
            debug_assert!(
                !(rec.primary_on && rec.outcome == ChannelOutcome::Idle),
                "primary on but slot idle"
            );
            cycle.slots += 1;
            if off_start && rec.outcome != ChannelOutcome::Idle {
                cycle.not_idle_start += 1;
            }
            if let Some(p) = prev {
                if p.outcome == ChannelOutcome::PrimarySuccess && rec.secondary_transmitters > 0 {
                    cycle.non_intrusion_violations += 1;
                }
            }
            if let Some((user, len)) = open_run {
                if rec.outcome != (ChannelOutcome::SecondarySuccess { user }) {
                    cycle.run_slots += len;
                    if rec.primary_on {
                        cycle.truncated_runs += 1;
                    } else {
                        cycle.complete_runs += 1;
                    }
                    open_run = None;
                }
            }
            if rec.primary_on {
                cycle.saw_on = true;
                cycle.pu_attempts += 1;
            } else {
                cycle.off_slots += 1;
            }
            match rec.outcome {
                ChannelOutcome::Idle => cycle.idle += 1,
                ChannelOutcome::PrimarySuccess => cycle.pu_successes += 1,
                ChannelOutcome::SecondarySuccess { user } => {
                    cycle.su_successes += 1;
                    cycle.per_user[user] += 1;
                    open_run = Some(match open_run {
                        Some((u, len)) if u == user => (u, len + 1),
                        _ => (user, 1),
                    });
                }
                ChannelOutcome::Collision => {
                    cycle.collisions += 1;
                    if rec.primary_on {
                        cycle.pu_collisions += 1;
                        cycle.on_collisions += 1;
                    }
                }
            }
        }

        if world.primary.packets_remaining > queue_limit {
            return Err(Error::UnstableRun {
                slot: rec.slot,
                queue: world.primary.packets_remaining,
                partial: Box::new(stats),
            });
        }
        prev = Some(rec);
    }
    Ok(stats)
}

/// Independent runs evaluated in parallel; results keep the input order.
pub fn run_many(specs: &[RunSpec]) -> Vec<Result<SimStats>> {
    specs.par_iter().map(RunSpec::run).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_protocol;

    fn config(model: TrafficModel) -> NetworkConfig {
        NetworkConfig::new(10, 100.0, 50.0, model).unwrap()
    }

    fn world_with(states: Vec<SecondaryState>, policy: EnhancedPolicy) -> World {
        let cfg = NetworkConfig::new(states.len(), 100.0, 50.0, TrafficModel::Deterministic).unwrap();
        let mut w = World::new(policy, cfg, 1).unwrap();
        w.secondaries = states;
        w
    }

    #[test]
    fn busy_users_never_transmit() {
        let policy = EnhancedPolicy::plain(make_protocol(1.0, 1.0, 0.1).unwrap());
        let busy = SecondaryState {
            last_outcome: Outcome::Busy,
            previous_outcome: None,
            consecutive_failures: 0,
        };
        let mut w = world_with(vec![busy; 5], policy);
        let rec = w.step();
        assert_eq!(rec.secondary_transmitters, 0);
        assert_eq!(rec.outcome, ChannelOutcome::Idle);
    }

    #[test]
    fn successful_user_releases_at_theta_one() {
        let policy = EnhancedPolicy::plain(make_protocol(0.0, 0.5, 1.0).unwrap());
        let mut states = vec![SecondaryState::new(); 3];
        states[1].observe(Outcome::Success);
        states[0].observe(Outcome::Busy);
        states[2].observe(Outcome::Busy);
        assert_eq!(policy.transmit_probability(&states[1]), 0.0);
        let mut w = world_with(states, policy);
        assert_eq!(w.step().secondary_transmitters, 0);
    }

    #[test]
    fn p1_backs_off_after_success_then_failure() {
        let base = make_protocol(0.3, 1.0, 0.1).unwrap();
        let mut s = SecondaryState::new();
        s.observe(Outcome::Success);
        s.observe(Outcome::Failure);
        let p1 = EnhancedPolicy::new(base, 4, true, false).unwrap();
        assert_eq!(p1.transmit_probability(&s), 0.0);
        assert_eq!(EnhancedPolicy::plain(base).transmit_probability(&s), 1.0);
    }

    #[test]
    fn p2_backs_off_after_b_failures() {
        let base = make_protocol(0.3, 1.0, 0.1).unwrap();
        let policy = EnhancedPolicy::new(base, 3, false, true).unwrap();
        let mut s = SecondaryState::new();
        for expected in [1.0, 1.0, 0.0] {
            s.observe(Outcome::Failure);
            assert_eq!(policy.transmit_probability(&s), expected);
        }
        s.observe(Outcome::Idle);
        assert_eq!(s.consecutive_failures, 0);
        assert_eq!(policy.transmit_probability(&s), 0.3);
    }

    #[test]
    fn enhanced_policy_requires_memory_of_two() {
        let base = make_protocol(0.3, 0.3, 0.1).unwrap();
        assert!(EnhancedPolicy::new(base, 1, true, true).is_err());
    }

    #[test]
    fn collision_outcomes() {
        let policy = EnhancedPolicy::plain(make_protocol(1.0, 0.5, 0.1).unwrap());
        let mut w = world_with(vec![SecondaryState::new(); 3], policy);
        let rec = w.step();
        assert_eq!(rec.outcome, ChannelOutcome::Collision);
        assert!(w.secondaries.iter().all(|s| s.last_outcome == Outcome::Failure));

        let mut w = world_with(vec![SecondaryState::new(); 1], policy);
        assert_eq!(w.step().outcome, ChannelOutcome::SecondarySuccess { user: 0 });
        assert_eq!(w.secondaries[0].last_outcome, Outcome::Success);
    }

    #[test]
    fn horizon_must_exceed_warmup() {
        let policy = EnhancedPolicy::plain(make_protocol(0.1, 0.37, 0.1).unwrap());
        assert!(matches!(
            run(&policy, &config(TrafficModel::Geometric), 1_000, 1),
            Err(Error::Validation { field: "horizon", .. })
        ));
    }

    #[test]
    fn runs_are_reproducible() {
        let policy = EnhancedPolicy::plain(make_protocol(0.1, 0.37, 0.1).unwrap());
        let cfg = config(TrafficModel::Geometric);
        let a = run(&policy, &cfg, 60_000, 42).unwrap();
        let b = run(&policy, &cfg, 60_000, 42).unwrap();
        assert_eq!(a, b);
        let c = run(&policy, &cfg, 60_000, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn counters_are_consistent() {
        let policy = EnhancedPolicy::plain(make_protocol(0.1, 0.37, 0.1).unwrap());
        let s = run(&policy, &config(TrafficModel::Geometric), 200_000, 5).unwrap();
        assert!(s.cycles > 100);
        assert!(s.pu_collisions <= s.pu_attempts);
        assert!(s.su_successes <= s.pu_off_slots);
        assert_eq!(s.successes_total, s.su_successes + s.pu_successes);
        assert_eq!(s.slots_total, s.idle_slots + s.successes_total + s.collision_slots);
        assert_eq!(s.slots_total, s.pu_off_slots + s.pu_attempts);
        assert_eq!(s.per_user_success_counts.iter().sum::<u64>(), s.su_successes);
        assert_eq!(s.non_intrusion_violations, 0);
        assert_eq!(s.off_periods_not_starting_idle, 0);
        assert!((0.0..=1.0).contains(&s.p_c()));
        assert!((0.0..=1.0).contains(&s.p_s()));
    }

    #[test]
    fn overloaded_primary_is_flagged() {
        // Collisions swallow most slots, so packets pile up.
        let policy = EnhancedPolicy::plain(make_protocol(0.99, 0.99, 0.01).unwrap());
        let cfg = NetworkConfig::new(10, 2.0, 1.5, TrafficModel::Geometric).unwrap();
        match run(&policy, &cfg, 1_000_000, 3) {
            Err(Error::UnstableRun { queue, .. }) => assert!(queue > 150),
            other => panic!("expected unstable run, got {other:?}"),
        }
    }

    #[test]
    fn run_many_preserves_order() {
        let policy = EnhancedPolicy::plain(make_protocol(0.1, 0.37, 0.1).unwrap());
        let cfg = config(TrafficModel::Deterministic);
        let specs: Vec<RunSpec> = (0..3)
            .map(|seed| RunSpec {
                policy,
                config: cfg,
                horizon: 30_000,
                seed,
            })
            .collect();
        let out = run_many(&specs);
        for (spec, res) in specs.iter().zip(out) {
            assert_eq!(res.unwrap(), spec.run().unwrap());
        }
    }
}
