//! Closed-form performance metrics of a θ-fair non-intrusive protocol.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{
    binomial_row, build_off_chain, build_on_chain, off_chain_structured, on_chain_structured, stationary_distribution,
    OffChain,
};
use crate::model::{p_c_from_t_col, Metrics, NetworkConfig, Protocol};

/// Expected primary collisions per on period, split by the number of
/// secondary transmitters in the last slot of the preceding off period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionProfile {
    /// `d[k]`: mean collisions when the off period ended with `k` transmitters.
    pub d: Vec<f64>,
    /// Stationary off-period state distribution.
    pub w_off: Vec<f64>,
    pub t_col: f64,
}

fn require_open_unit(protocol: &Protocol, n: usize) -> Result<()> {
    let open = |v: f64| v > 0.0 && v < 1.0;
    if !open(protocol.q()) || (n >= 2 && !open(protocol.r())) {
        return Err(Error::Domain(format!(
            "off-period analysis needs 0 < q, r < 1 (got q = {}, r = {})",
            protocol.q(),
            protocol.r()
        )));
    }
    Ok(())
}

/// Mean length of a contention period, from an idle slot to the next
/// secondary success. Does not depend on `theta`.
pub fn contention_length(protocol: &Protocol, n: usize) -> Result<f64> {
    require_open_unit(protocol, n)?;
    Ok(build_off_chain(protocol, n).absorption_slots()?[0])
}

fn success_from_contention(theta: f64, t_ns: f64) -> f64 {
    1.0 / (theta * t_ns + 1.0)
}

/// Probability that some secondary user succeeds in a slot in which the
/// primary is off.
pub fn success_probability(protocol: &Protocol, n: usize) -> Result<f64> {
    let t_ns = contention_length(protocol, n)?;
    Ok(success_from_contention(protocol.theta(), t_ns))
}

/// `d(0..=N)`. With `p1_enabled` a secondary user that collides right after
/// a success backs off, which leaves `d(1) = 1 - theta`.
///
/// Needs only `r < 1`, so it is defined on boundaries where the stationary
/// weights are not.
pub fn collision_distances(protocol: &Protocol, n: usize, p1_enabled: bool) -> Result<Vec<f64>> {
    let on = build_on_chain(protocol, n);
    let to_absorb = on.absorption_slots()?;
    let theta = protocol.theta();

    let mut d = vec![0.0; n + 1];
    let from_idle = binomial_row(n, protocol.q());
    d[0] = (1..=n).map(|k| from_idle[k] * to_absorb[k - 1]).sum();
    d[1] = if p1_enabled {
        1.0 - theta
    } else {
        (1.0 - theta) * to_absorb[0]
    };
    for k in 2..=n {
        d[k] = to_absorb[k - 1] - 1.0;
    }
    Ok(d)
}

fn profile_from_chain(off: &OffChain, p1_enabled: bool) -> Result<CollisionProfile> {
    let d = collision_distances(&off.protocol, off.n, p1_enabled)?;
    let w_off = stationary_distribution(off)?;
    let t_col = w_off.iter().zip(&d).map(|(w, d)| w * d).sum();
    Ok(CollisionProfile { d, w_off, t_col })
}

/// Collision profile weighted by the stationary off-period distribution.
/// The weights are the same with or without P1, which only acts once the
/// primary has started transmitting.
pub fn collision_profile(protocol: &Protocol, n: usize, p1_enabled: bool) -> Result<CollisionProfile> {
    require_open_unit(protocol, n)?;
    profile_from_chain(&build_off_chain(protocol, n), p1_enabled)
}

/// The three protocol-dependent quantities. Uses the `O(N²)` recursions
/// rather than the dense chain solves of [`collision_profile`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoreQuantities {
    pub p_s: f64,
    pub t_ns_tilde: f64,
    pub t_col: f64,
}

pub fn core_quantities(protocol: &Protocol, n: usize, p1_enabled: bool) -> Result<CoreQuantities> {
    require_open_unit(protocol, n)?;
    let (t_ns_tilde, w_off) = off_chain_structured(protocol, n)?;
    let y = on_chain_structured(protocol.r(), n)?;
    let theta = protocol.theta();
    let from_idle = binomial_row(n, protocol.q());
    let d0: f64 = (1..=n).map(|k| from_idle[k] * y[k - 1]).sum();
    let d1 = if p1_enabled { 1.0 - theta } else { (1.0 - theta) * y[0] };
    let t_col = w_off[0] * d0 + w_off[1] * d1 + (2..=n).map(|k| w_off[k] * (y[k - 1] - 1.0)).sum::<f64>();
    Ok(CoreQuantities {
        p_s: success_from_contention(theta, t_ns_tilde),
        t_ns_tilde,
        t_col,
    })
}

/// Secondary utilization `P_s (T_int - T_pac - T_col) / T_int`.
pub fn secondary_utilization(p_s: f64, t_col: f64, config: &NetworkConfig) -> f64 {
    p_s * (config.t_int - config.t_pac - t_col) / config.t_int
}

/// Assembles every metric from `P_s`, `T̃_ns` and `T_col`; fails when the
/// collisions leave no room for an off period.
pub fn metrics_from_core(
    core: CoreQuantities,
    theta: f64,
    config: &NetworkConfig,
) -> Result<Metrics> {
    let limit = config.t_int - config.t_pac;
    if !(core.t_col < limit) {
        return Err(Error::Unstable {
            t_col: core.t_col,
            limit,
        });
    }
    let c_s = secondary_utilization(core.p_s, core.t_col, config);
    let c_p = config.t_pac / config.t_int;
    let c_total = c_p + c_s;
    Ok(Metrics {
        p_s: core.p_s,
        t_ns_tilde: core.t_ns_tilde,
        t_s_tilde: 1.0 / theta,
        t_col: core.t_col,
        p_c: p_c_from_t_col(core.t_col, config.t_pac),
        c_s,
        c_p,
        c_total,
        efficiency: c_total,
    })
}

pub fn full_metrics(protocol: &Protocol, config: &NetworkConfig, p1_enabled: bool) -> Result<Metrics> {
    let core = core_quantities(protocol, config.n_secondary, p1_enabled)?;
    metrics_from_core(core, protocol.theta(), config)
}
