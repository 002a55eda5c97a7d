//! Domain types shared by the analytic, optimization and simulation layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default half-width of the excluded band at the edges of the `(q, r)` square.
pub const DEFAULT_EPSILON: f64 = 1e-4;

fn check_probability(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("{value} is not in [0, 1]")))
    }
}

/// A θ-fair non-intrusive protocol with one-slot memory.
///
/// A secondary user whose previous slot was `idle` transmits with
/// probability `q`, after a `failure` with probability `r`, after a
/// `success` with probability `1 - theta`, and never after a `busy` slot.
/// Only `(q, r, theta)` are stored so the success probability is always
/// exactly `1 - theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProtocolRepr", into = "ProtocolRepr")]
pub struct Protocol {
    q: f64,
    r: f64,
    theta: f64,
}

impl Protocol {
    pub fn new(q: f64, r: f64, theta: f64) -> Result<Self> {
        check_probability("q", q)?;
        check_probability("r", r)?;
        if !(theta.is_finite() && theta > 0.0 && theta <= 1.0) {
            return Err(Error::invalid("theta", format!("{theta} is not in (0, 1]")));
        }
        Ok(Self { q, r, theta })
    }

    /// Transmission probability after an idle slot.
    pub fn q(&self) -> f64 {
        self.q
    }

    /// Transmission probability after a failed transmission.
    pub fn r(&self) -> f64 {
        self.r
    }

    /// Fairness level; a success run lasts `1 / theta` slots on average.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn f_success(&self) -> f64 {
        1.0 - self.theta
    }

    pub fn f_busy(&self) -> f64 {
        0.0
    }

    pub fn f_idle(&self) -> f64 {
        self.q
    }

    pub fn f_failure(&self) -> f64 {
        self.r
    }

    pub fn with_qr(&self, q: f64, r: f64) -> Result<Self> {
        Self::new(q, r, self.theta)
    }
}

/// Builds a protocol, rejecting out-of-range arguments by field name.
pub fn make_protocol(q: f64, r: f64, theta: f64) -> Result<Protocol> {
    Protocol::new(q, r, theta)
}

#[derive(Serialize, Deserialize)]
struct ProtocolRepr {
    q: f64,
    r: f64,
    theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f_success: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f_busy: Option<f64>,
}

impl TryFrom<ProtocolRepr> for Protocol {
    type Error = Error;

    fn try_from(repr: ProtocolRepr) -> Result<Self> {
        let protocol = Protocol::new(repr.q, repr.r, repr.theta)?;
        if let Some(fs) = repr.f_success {
            if (fs - protocol.f_success()).abs() > 1e-12 {
                return Err(Error::invalid(
                    "f_success",
                    format!("{fs} disagrees with 1 - theta = {}", protocol.f_success()),
                ));
            }
        }
        if let Some(fb) = repr.f_busy {
            if fb != 0.0 {
                return Err(Error::invalid("f_busy", "a non-intrusive protocol has f_busy = 0"));
            }
        }
        Ok(protocol)
    }
}

impl From<Protocol> for ProtocolRepr {
    fn from(p: Protocol) -> Self {
        ProtocolRepr {
            q: p.q,
            r: p.r,
            theta: p.theta,
            f_success: Some(p.f_success()),
            f_busy: Some(p.f_busy()),
        }
    }
}

/// Distribution family used by the simulator for both the inter-arrival
/// gap and the number of packets per arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficModel {
    /// Exact means; non-integer means are met by randomized rounding.
    Deterministic,
    /// Geometric on the positive integers.
    #[default]
    Geometric,
}

impl std::str::FromStr for TrafficModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(TrafficModel::Deterministic),
            "geometric" => Ok(TrafficModel::Geometric),
            other => Err(Error::invalid(
                "traffic_model",
                format!("unknown traffic model `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkConfigRepr", into = "NetworkConfigRepr")]
pub struct NetworkConfig {
    /// Number of secondary users.
    pub n_secondary: usize,
    /// Mean slots between consecutive primary arrivals.
    pub t_int: f64,
    /// Mean packets generated per arrival.
    pub t_pac: f64,
    pub traffic_model: TrafficModel,
}

impl NetworkConfig {
    pub fn new(n_secondary: usize, t_int: f64, t_pac: f64, traffic_model: TrafficModel) -> Result<Self> {
        if n_secondary == 0 {
            return Err(Error::invalid("n_secondary", "at least one secondary user is required"));
        }
        if !(t_pac.is_finite() && t_pac > 0.0) {
            return Err(Error::invalid("t_pac", format!("{t_pac} must be positive")));
        }
        if !(t_int.is_finite() && t_int > 0.0) {
            return Err(Error::invalid("t_int", format!("{t_int} must be positive")));
        }
        if t_pac >= t_int {
            return Err(Error::invalid(
                "t_pac",
                format!("{t_pac} must be smaller than t_int = {t_int}"),
            ));
        }
        Ok(Self {
            n_secondary,
            t_int,
            t_pac,
            traffic_model,
        })
    }

    pub fn with_n(&self, n_secondary: usize) -> Result<Self> {
        Self::new(n_secondary, self.t_int, self.t_pac, self.traffic_model)
    }
}

#[derive(Serialize, Deserialize)]
struct NetworkConfigRepr {
    n_secondary: usize,
    t_int: f64,
    t_pac: f64,
    #[serde(default)]
    traffic_model: TrafficModel,
}

impl TryFrom<NetworkConfigRepr> for NetworkConfig {
    type Error = Error;

    fn try_from(r: NetworkConfigRepr) -> Result<Self> {
        NetworkConfig::new(r.n_secondary, r.t_int, r.t_pac, r.traffic_model)
    }
}

impl From<NetworkConfig> for NetworkConfigRepr {
    fn from(c: NetworkConfig) -> Self {
        NetworkConfigRepr {
            n_secondary: c.n_secondary,
            t_int: c.t_int,
            t_pac: c.t_pac,
            traffic_model: c.traffic_model,
        }
    }
}

/// Performance of a protocol under a network configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Probability that a secondary user succeeds in an off slot.
    pub p_s: f64,
    /// Mean length of a contention period.
    pub t_ns_tilde: f64,
    /// Mean length of a success period, `1 / theta`.
    pub t_s_tilde: f64,
    /// Mean primary collisions per on period.
    pub t_col: f64,
    /// Primary collision probability.
    pub p_c: f64,
    pub c_s: f64,
    pub c_p: f64,
    pub c_total: f64,
    /// `c_total` relative to the ideal-control bound of 1.
    pub efficiency: f64,
}

/// Primary collision probability for a mean collision count per on period.
pub fn p_c_from_t_col(t_col: f64, t_pac: f64) -> f64 {
    t_col / (t_pac + t_col)
}

/// Collision threshold `γ` equivalent to the protection level `P_c <= eta`.
pub fn gamma_from_eta(eta: f64, t_pac: f64) -> Result<f64> {
    if !(eta.is_finite() && eta > 0.0 && eta < 1.0) {
        return Err(Error::invalid("eta", format!("{eta} is not in (0, 1)")));
    }
    if !(t_pac.is_finite() && t_pac > 0.0) {
        return Err(Error::invalid("t_pac", format!("{t_pac} must be positive")));
    }
    Ok(eta / (1.0 - eta) * t_pac)
}

/// Upper limit on mean collisions per on period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Unconstrained,
    Gamma(f64),
}

impl Threshold {
    pub fn admits(&self, t_col: f64) -> bool {
        match *self {
            Threshold::Unconstrained => true,
            Threshold::Gamma(g) => t_col <= g,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            Threshold::Unconstrained => None,
            Threshold::Gamma(g) => Some(g),
        }
    }
}

/// The restricted design problem: maximize `C_s` over `[ε, 1-ε]²`
/// subject to `T_col <= γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DesignProblemRepr", into = "DesignProblemRepr")]
pub struct DesignProblem {
    pub config: NetworkConfig,
    pub theta: f64,
    pub threshold: Threshold,
    /// Protection level the threshold was derived from, when known.
    pub eta: Option<f64>,
    pub epsilon: f64,
}

impl DesignProblem {
    pub fn unconstrained(config: NetworkConfig, theta: f64) -> Result<Self> {
        Self::build(config, theta, Threshold::Unconstrained, None, DEFAULT_EPSILON)
    }

    pub fn with_gamma(config: NetworkConfig, theta: f64, gamma: f64) -> Result<Self> {
        Self::build(config, theta, Threshold::Gamma(gamma), None, DEFAULT_EPSILON)
    }

    pub fn with_eta(config: NetworkConfig, theta: f64, eta: f64) -> Result<Self> {
        let gamma = gamma_from_eta(eta, config.t_pac)?;
        Self::build(config, theta, Threshold::Gamma(gamma), Some(eta), DEFAULT_EPSILON)
    }

    pub fn build(
        config: NetworkConfig,
        theta: f64,
        threshold: Threshold,
        eta: Option<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        if !(theta.is_finite() && theta > 0.0 && theta <= 1.0) {
            return Err(Error::invalid("theta", format!("{theta} is not in (0, 1]")));
        }
        if let Threshold::Gamma(g) = threshold {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::invalid("gamma", format!("{g} must be positive and finite")));
            }
        }
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::invalid("epsilon", format!("{epsilon} is not in (0, 0.5)")));
        }
        Ok(Self {
            config,
            theta,
            threshold,
            eta,
            epsilon,
        })
    }

    pub fn with_threshold(&self, threshold: Threshold) -> Result<Self> {
        Self::build(self.config, self.theta, threshold, None, self.epsilon)
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        Self::build(self.config, theta, self.threshold, self.eta, self.epsilon)
    }

    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::build(self.config.with_n(n)?, self.theta, self.threshold, self.eta, self.epsilon)
    }

    pub fn protocol(&self, q: f64, r: f64) -> Result<Protocol> {
        Protocol::new(q, r, self.theta)
    }
}

#[derive(Serialize, Deserialize)]
struct DesignProblemRepr {
    config: NetworkConfig,
    theta: f64,
    #[serde(default)]
    gamma: Option<f64>,
    #[serde(default)]
    eta: Option<f64>,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl TryFrom<DesignProblemRepr> for DesignProblem {
    type Error = Error;

    fn try_from(r: DesignProblemRepr) -> Result<Self> {
        let threshold = match (r.gamma, r.eta) {
            (None, None) => Threshold::Unconstrained,
            (Some(g), None) => Threshold::Gamma(g),
            (gamma, Some(eta)) => {
                let derived = gamma_from_eta(eta, r.config.t_pac)?;
                if let Some(g) = gamma {
                    if (g - derived).abs() > 1e-9 * derived.max(1.0) {
                        return Err(Error::invalid(
                            "gamma",
                            format!("{g} disagrees with eta-derived threshold {derived}"),
                        ));
                    }
                }
                Threshold::Gamma(derived)
            }
        };
        DesignProblem::build(r.config, r.theta, threshold, r.eta, r.epsilon)
    }
}

impl From<DesignProblem> for DesignProblemRepr {
    fn from(p: DesignProblem) -> Self {
        DesignProblemRepr {
            config: p.config,
            theta: p.theta,
            gamma: p.threshold.gamma(),
            eta: p.eta,
            epsilon: p.epsilon,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_derives_success_probability() {
        let p = make_protocol(0.10, 0.37, 0.1).unwrap();
        assert_eq!(p.f_success(), 0.9);
        assert_eq!(p.f_busy(), 0.0);

        let p = make_protocol(0.5, 0.5, 1.0).unwrap();
        assert_eq!(p.f_success(), 0.0);
    }

    #[test]
    fn protocol_rejects_out_of_range_fields() {
        match make_protocol(0.2, 0.3, 1.5) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "theta"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            make_protocol(-0.1, 0.3, 0.5),
            Err(Error::Validation { field: "q", .. })
        ));
        assert!(matches!(
            make_protocol(0.1, 1.3, 0.5),
            Err(Error::Validation { field: "r", .. })
        ));
        assert!(make_protocol(0.1, 0.3, 0.0).is_err());
        assert!(make_protocol(f64::NAN, 0.3, 0.5).is_err());
    }

    #[test]
    fn gamma_from_eta_values() {
        assert_eq!(gamma_from_eta(0.5, 50.0).unwrap(), 50.0);
        let g = gamma_from_eta(0.02, 50.0).unwrap();
        assert!((g - 1.020_408_163_265_306).abs() < 1e-12);
        assert!((p_c_from_t_col(g, 50.0) - 0.02).abs() < 1e-12);
        assert!(gamma_from_eta(1.0, 50.0).is_err());
        assert!(gamma_from_eta(0.0, 50.0).is_err());
    }

    #[test]
    fn p_c_is_one_half_when_collisions_equal_packets() {
        assert_eq!(p_c_from_t_col(50.0, 50.0), 0.5);
    }

    #[test]
    fn network_config_requires_t_pac_below_t_int() {
        assert!(NetworkConfig::new(10, 100.0, 50.0, TrafficModel::Geometric).is_ok());
        assert!(NetworkConfig::new(10, 50.0, 50.0, TrafficModel::Geometric).is_err());
        assert!(NetworkConfig::new(0, 100.0, 50.0, TrafficModel::Geometric).is_err());
    }

    #[test]
    fn json_field_names() {
        let p = make_protocol(0.1, 0.37, 0.1).unwrap();
        let v: serde_json::Value = serde_json::to_value(p).unwrap();
        for key in ["q", "r", "theta", "f_success", "f_busy"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: Protocol = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);

        let bad = serde_json::json!({"q": 0.1, "r": 0.2, "theta": 0.5, "f_busy": 0.3});
        assert!(serde_json::from_value::<Protocol>(bad).is_err());

        let cfg = NetworkConfig::new(10, 100.0, 50.0, TrafficModel::Deterministic).unwrap();
        let v = serde_json::to_value(cfg).unwrap();
        assert_eq!(v["traffic_model"], "deterministic");
        assert_eq!(v["n_secondary"], 10);

        let problem = DesignProblem::with_eta(cfg, 0.1, 0.02).unwrap();
        let v = serde_json::to_value(problem).unwrap();
        assert_eq!(v["epsilon"], 1e-4);
        let back: DesignProblem = serde_json::from_value(v).unwrap();
        assert_eq!(back, problem);
    }

    #[test]
    fn design_problem_defaults_and_marker() {
        let json = serde_json::json!({
            "config": {"n_secondary": 10, "t_int": 100.0, "t_pac": 50.0},
            "theta": 0.1
        });
        let p: DesignProblem = serde_json::from_value(json).unwrap();
        assert_eq!(p.threshold, Threshold::Unconstrained);
        assert_eq!(p.epsilon, DEFAULT_EPSILON);
        assert_eq!(p.config.traffic_model, TrafficModel::Geometric);

        let json = serde_json::json!({
            "config": {"n_secondary": 10, "t_int": 100.0, "t_pac": 50.0},
            "theta": 0.1, "epsilon": 0.7
        });
        assert!(serde_json::from_value::<DesignProblem>(json).is_err());
    }
}
