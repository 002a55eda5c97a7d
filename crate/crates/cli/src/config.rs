use std::path::{Path, PathBuf};

use cogmac_core::optimizer::SweepAxis;
use cogmac_core::{DesignProblem, NetworkConfig, Protocol, Threshold, TrafficModel};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Analyze,
    Contour,
    Optimize,
    Sweep,
    Simulate,
    Validate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: usize,
    /// Defaults to `[ε, 1-ε]`.
    #[serde(default)]
    pub q_range: Option<(f64, f64)>,
    #[serde(default)]
    pub r_range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub horizon: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub p1: bool,
    #[serde(default)]
    pub p2: bool,
    #[serde(default = "default_b")]
    pub b: usize,
    /// Overrides the traffic model of the network configuration.
    #[serde(default)]
    pub traffic_model: Option<TrafficModel>,
    /// Per-slot trace CSV.
    #[serde(default)]
    pub trace: Option<PathBuf>,
}

fn default_seed() -> u64 {
    1
}

fn default_b() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    /// Standard output when absent.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<Format>,
}

/// Everything one invocation needs, as read from `--config` and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub problem: DesignProblem,
    #[serde(default)]
    pub protocol: Option<Protocol>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub sim: Option<SimSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub output: Option<OutputSpec>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn baseline(command: Command) -> Self {
        let config = NetworkConfig::new(10, 100.0, 50.0, TrafficModel::default()).expect("baseline network");
        Self {
            command,
            problem: DesignProblem::unconstrained(config, 0.1).expect("baseline problem"),
            protocol: None,
            grid: None,
            sim: None,
            sweep: None,
            output: None,
        }
    }

    pub fn format(&self) -> Format {
        if let Some(f) = self.output.as_ref().and_then(|o| o.format) {
            return f;
        }
        match self.command {
            Command::Contour | Command::Sweep | Command::Validate => Format::Csv,
            _ => Format::Json,
        }
    }

    pub fn out_path(&self) -> Option<&Path> {
        self.output.as_ref().and_then(|o| o.path.as_deref())
    }

    pub fn require_protocol(&self) -> Result<Protocol, CliError> {
        self.protocol
            .ok_or_else(|| CliError::Usage(format!("{:?} needs a protocol (--q and --r)", self.command).to_lowercase()))
    }

    pub fn require_sim(&self) -> Result<&SimSpec, CliError> {
        self.sim
            .as_ref()
            .ok_or_else(|| CliError::Usage("simulation settings are missing (--horizon)".into()))
    }

    /// Fails with a usage error when the chosen command lacks an input.
    pub fn check_complete(&self) -> Result<(), CliError> {
        match self.command {
            Command::Analyze => self.require_protocol().map(|_| ()),
            Command::Simulate | Command::Validate => {
                self.require_protocol()?;
                self.require_sim().map(|_| ())
            }
            Command::Sweep => {
                if self.sweep.is_none() {
                    return Err(CliError::Usage("sweep needs --axis and --values".into()));
                }
                Ok(())
            }
            Command::Contour | Command::Optimize => Ok(()),
        }
    }
}

/// Flag overrides; every field left `None` keeps the config file's value.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct Overrides {
    /// JSON run configuration to start from.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of secondary users.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "t-int")]
    pub t_int: Option<f64>,
    #[arg(long = "t-pac")]
    pub t_pac: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// Cap on mean primary collisions per on period.
    #[arg(long, conflicts_with = "eta")]
    pub gamma: Option<f64>,
    /// Protection level; sets gamma = eta / (1 - eta) * t_pac.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    /// Grid points per axis.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub horizon: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub p1: bool,
    #[arg(long)]
    pub p2: bool,
    /// Memory length for P2.
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long, value_parser = parse_traffic)]
    pub traffic: Option<TrafficModel>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Sweep axis: gamma, n, theta or n_hat.
    #[arg(long, value_parser = parse_axis)]
    pub axis: Option<SweepAxis>,
    /// Sweep values, `a,b,c` or `start:stop:step`.
    #[arg(long)]
    pub values: Option<String>,
    /// Write a per-slot trace CSV while simulating.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

fn parse_traffic(s: &str) -> Result<TrafficModel, String> {
    s.parse().map_err(|e: cogmac_core::Error| e.to_string())
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse().map_err(|e: cogmac_core::Error| e.to_string())
}

/// `a,b,c` or an inclusive `start:stop:step` range.
pub fn parse_values(s: &str) -> Result<Vec<f64>, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0) || stop < start {
                return Err(format!("bad range `{s}`"));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            Ok((0..count)
                .map(|i| {
                    let v = start + i as f64 * step;
                    (v * 1e12).round() / 1e12
                })
                .collect())
        }
        [_] => s.split(',').map(num).collect(),
        _ => Err(format!("bad value list `{s}`")),
    }
}

impl Overrides {
    /// Starts from `--config` (or the baseline network) and applies the flags.
    pub fn resolve(&self, command: Option<Command>) -> Result<RunConfig, CliError> {
        let mut rc = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::baseline(command.unwrap_or(Command::Analyze)),
        };
        if let Some(c) = command {
            rc.command = c;
        }

        let old = rc.problem;
        let net = NetworkConfig::new(
            self.n.unwrap_or(old.config.n_secondary),
            self.t_int.unwrap_or(old.config.t_int),
            self.t_pac.unwrap_or(old.config.t_pac),
            self.traffic.unwrap_or(old.config.traffic_model),
        )?;
        let theta = self.theta.unwrap_or(old.theta);
        let epsilon = self.epsilon.unwrap_or(old.epsilon);
        rc.problem = match (self.gamma, self.eta, old.eta) {
            (Some(g), _, _) => DesignProblem::build(net, theta, Threshold::Gamma(g), None, epsilon)?,
            (None, Some(eta), _) | (None, None, Some(eta)) => {
                let gamma = cogmac_core::gamma_from_eta(eta, net.t_pac)?;
                DesignProblem::build(net, theta, Threshold::Gamma(gamma), Some(eta), epsilon)?
            }
            (None, None, None) => DesignProblem::build(net, theta, old.threshold, None, epsilon)?,
        };

        let base = rc.protocol;
        match (self.q.or(base.map(|p| p.q())), self.r.or(base.map(|p| p.r()))) {
            (Some(q), Some(r)) => {
                let theta = if self.theta.is_some() || base.is_none() {
                    rc.problem.theta
                } else {
                    base.map_or(rc.problem.theta, |p| p.theta())
                };
                rc.protocol = Some(cogmac_core::make_protocol(q, r, theta)?);
            }
            (None, None) => {}
            _ => return Err(CliError::Usage("--q and --r must be given together".into())),
        }

        if let Some(res) = self.grid {
            let g = rc.grid.get_or_insert(GridSpec {
                resolution: res,
                q_range: None,
                r_range: None,
            });
            g.resolution = res;
        }

        let touches_sim = self.horizon.is_some()
            || self.seed.is_some()
            || self.p1
            || self.p2
            || self.b.is_some()
            || self.trace.is_some();
        if touches_sim {
            let sim = match (rc.sim.take(), self.horizon) {
                (Some(s), _) => s,
                (None, Some(h)) => SimSpec {
                    horizon: h,
                    seed: default_seed(),
                    p1: false,
                    p2: false,
                    b: default_b(),
                    traffic_model: None,
                    trace: None,
                },
                (None, None) => return Err(CliError::Usage("simulation flags need --horizon".into())),
            };
            rc.sim = Some(SimSpec {
                horizon: self.horizon.unwrap_or(sim.horizon),
                seed: self.seed.unwrap_or(sim.seed),
                p1: sim.p1 || self.p1,
                p2: sim.p2 || self.p2,
                b: self.b.unwrap_or(sim.b),
                traffic_model: sim.traffic_model,
                trace: self.trace.clone().or(sim.trace),
            });
        }
        if let Some(sim) = rc.sim.as_mut() {
            if self.traffic.is_some() {
                sim.traffic_model = self.traffic;
            }
        }

        let values = self
            .values
            .as_deref()
            .map(parse_values)
            .transpose()
            .map_err(|e| CliError::Usage(format!("--values: {e}")))?;
        match (self.axis, &values, rc.sweep.take()) {
            (Some(axis), Some(values), _) => {
                rc.sweep = Some(SweepSpec {
                    axis,
                    values: values.clone(),
                })
            }
            (None, None, existing) => rc.sweep = existing,
            (axis, values, Some(existing)) => {
                rc.sweep = Some(SweepSpec {
                    axis: axis.unwrap_or(existing.axis),
                    values: values.clone().unwrap_or(existing.values),
                })
            }
            (_, _, None) => return Err(CliError::Usage("--axis and --values must be given together".into())),
        }

        if self.out.is_some() || self.format.is_some() {
            let prev = rc.output.take();
            rc.output = Some(OutputSpec {
                path: self.out.clone().or(prev.as_ref().and_then(|o| o.path.clone())),
                format: self.format.or(prev.and_then(|o| o.format)),
            });
        }
        Ok(rc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_lists_and_ranges() {
        assert_eq!(parse_values("3,4,5").unwrap(), vec![3.0, 4.0, 5.0]);
        let r = parse_values("0.1:2:0.1").unwrap();
        assert_eq!(r.len(), 20);
        assert_eq!(r[2], 0.3);
        assert_eq!(r[19], 2.0);
        assert!(parse_values("1:0:0.1").is_err());
        assert!(parse_values("a,b").is_err());
    }

    #[test]
    fn flags_override_config_values() {
        let o = Overrides {
            n: Some(4),
            q: Some(0.2),
            r: Some(0.3),
            gamma: Some(1.5),
            ..Default::default()
        };
        let rc = o.resolve(Some(Command::Analyze)).unwrap();
        assert_eq!(rc.problem.config.n_secondary, 4);
        assert_eq!(rc.problem.threshold, Threshold::Gamma(1.5));
        assert_eq!(rc.protocol.unwrap().q(), 0.2);
        assert_eq!(rc.protocol.unwrap().theta(), 0.1);
    }

    #[test]
    fn run_config_round_trips_through_json() {
        let mut rc = RunConfig::baseline(Command::Simulate);
        rc.protocol = Some(cogmac_core::make_protocol(0.1, 0.37, 0.1).unwrap());
        rc.sim = Some(SimSpec {
            horizon: 100_000,
            seed: 3,
            p1: true,
            p2: false,
            b: 5,
            traffic_model: Some(TrafficModel::Deterministic),
            trace: None,
        });
        let text = serde_json::to_string(&rc).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rc);
    }
}
