//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Deserialize;

use rre_gossip::analysis::{RareEvent, Statistic};
use rre_gossip::filter::Scenario;
use rre_gossip::model::{rotation_chain, triad, LinearSystem, Sensor, SensorSuite};
use rre_gossip::network::{GossipTopology, Matching, MatchingDistribution};
use rre_gossip::riccati::{RiccatiOps, SearchCaps};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub gamma_grid: Vec<f64>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub n_samples: usize,
    /// Epochs dumped by `trace`; defaults to `burn_in`.
    pub trace_epochs: Option<usize>,
    /// Maximum tolerated fraction of divergent samples.
    #[serde(default = "default_max_divergence")]
    pub max_divergence_rate: f64,
    pub system: SystemSpec,
    #[serde(default)]
    pub topology: TopologySpec,
    #[serde(default)]
    pub matchings: Option<MatchingSpec>,
    /// Rare events for `ld`; defaults to trace and λ_max at half of `P*`.
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub ld: LdSpec,
    #[serde(default)]
    pub validate: ValidateSpec,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_burn_in() -> usize {
    rre_gossip::analysis::DEFAULT_BURN_IN
}
fn default_max_divergence() -> f64 {
    0.01
}

#[derive(Debug, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Triad,
    RotationChain {
        state_dim: usize,
        n_sensors: usize,
        #[serde(default = "default_growth")]
        growth: f64,
    },
    Explicit {
        f: Vec<Vec<f64>>,
        q: Vec<Vec<f64>>,
        initial_cov: Option<Vec<Vec<f64>>>,
        sensors: Vec<SensorSpec>,
    },
}

fn default_growth() -> f64 {
    1.05
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub c: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    #[default]
    Complete,
    Path,
    Ring,
    Custom,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    #[serde(default)]
    pub kind: TopologyKind,
    /// Graph file for `custom`, relative to the config file.
    pub graph_file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchingSpec {
    pub support: Vec<MatchingEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchingEntry {
    /// 1-based partner of each node.
    pub partners: Vec<usize>,
    pub prob: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub statistic: String,
    /// Absolute radius.
    pub epsilon: Option<f64>,
    /// Radius as a fraction of the statistic at `P*`.
    pub epsilon_fraction: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdSpec {
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_max_subsets")]
    pub max_subsets_per_step: usize,
    #[serde(default = "default_max_nodes")]
    pub max_nodes: usize,
    /// Hitting-time horizon; the smallest admissible one when absent.
    pub hitting_l: Option<usize>,
}

impl Default for LdSpec {
    fn default() -> Self {
        Self {
            max_len: default_max_len(),
            max_subsets_per_step: default_max_subsets(),
            max_nodes: default_max_nodes(),
            hitting_l: None,
        }
    }
}

fn default_max_len() -> usize {
    SearchCaps::default().max_len
}
fn default_max_subsets() -> usize {
    SearchCaps::default().max_subsets_per_step
}
fn default_max_nodes() -> usize {
    SearchCaps::default().max_nodes
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSpec {
    #[serde(default = "default_q_trials")]
    pub q_trials: u64,
    #[serde(default = "default_detect_trials")]
    pub detectability_trials: usize,
}

impl Default for ValidateSpec {
    fn default() -> Self {
        Self {
            q_trials: default_q_trials(),
            detectability_trials: default_detect_trials(),
        }
    }
}

fn default_q_trials() -> u64 {
    2000
}
fn default_detect_trials() -> usize {
    200
}

/// A parsed config with its raw bytes and location.
#[derive(Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
    pub base_dir: PathBuf,
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let raw = std::fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let text = std::str::from_utf8(&raw).map_err(|_| CliError::Config(format!("{}: not UTF-8", path.display())))?;
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    config.check()?;
    Ok(LoadedConfig {
        config,
        sha256: crate::output::sha256_hex(&raw),
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!("{name}: expected a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    fn check(&self) -> Result<(), CliError> {
        if self.gamma_grid.is_empty() {
            return Err(CliError::Config("gamma_grid: at least one value required".into()));
        }
        if let Some(g) = self.gamma_grid.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(CliError::Config(format!("gamma_grid: values must be positive, got {g}")));
        }
        if self.n_samples == 0 {
            return Err(CliError::Config("n_samples: must be at least 1".into()));
        }
        if self.burn_in == 0 {
            return Err(CliError::Config("burn_in: must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.max_divergence_rate) {
            return Err(CliError::Config("max_divergence_rate: must lie in [0, 1]".into()));
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.epsilon.is_some() == e.epsilon_fraction.is_some() {
                return Err(CliError::Config(format!(
                    "events[{i}]: give exactly one of epsilon / epsilon_fraction"
                )));
            }
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<(LinearSystem, SensorSuite), CliError> {
        Ok(match &self.system {
            SystemSpec::Triad => triad(),
            SystemSpec::RotationChain {
                state_dim,
                n_sensors,
                growth,
            } => rotation_chain(*state_dim, *n_sensors, *growth).map_err(|e| CliError::Config(format!("system: {e}")))?,
            SystemSpec::Explicit {
                f,
                q,
                initial_cov,
                sensors,
            } => {
                let cfg = |e: rre_gossip::Error| CliError::Config(format!("system: {e}"));
                let mut sys = LinearSystem::new(matrix("system.f", f)?, matrix("system.q", q)?).map_err(cfg)?;
                if let Some(p0) = initial_cov {
                    sys = sys.with_initial_cov(matrix("system.initial_cov", p0)?).map_err(cfg)?;
                }
                let sensors = sensors
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        Sensor::new(
                            matrix(&format!("system.sensors[{i}].c"), &s.c)?,
                            matrix(&format!("system.sensors[{i}].r"), &s.r)?,
                        )
                        .map_err(|e| CliError::Config(format!("system.sensors[{i}]: {e}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let suite = SensorSuite::new(&sys, sensors).map_err(cfg)?;
                (sys, suite)
            }
        })
    }

    pub fn build_topology(&self, n: usize, base_dir: &Path) -> Result<GossipTopology, CliError> {
        let cfg = |e: rre_gossip::Error| CliError::Config(format!("topology: {e}"));
        let topo = match self.topology.kind {
            TopologyKind::Complete => GossipTopology::complete(n).map_err(cfg)?,
            TopologyKind::Path => GossipTopology::path(n).map_err(cfg)?,
            TopologyKind::Ring => GossipTopology::ring(n).map_err(cfg)?,
            TopologyKind::Custom => {
                let file = self
                    .topology
                    .graph_file
                    .as_ref()
                    .ok_or_else(|| CliError::Config("topology: custom kind needs graph_file".into()))?;
                let path = base_dir.join(file);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Config(format!("topology.graph_file {}: {e}", path.display())))?;
                GossipTopology::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
        };
        if topo.len() != n {
            return Err(CliError::Config(format!(
                "topology has {} nodes but the system has {n} sensors",
                topo.len()
            )));
        }
        Ok(topo)
    }

    /// Explicit support, or the greedy maximal matchings from a fixed seed so
    /// the model does not change with the experiment seed.
    pub fn build_matchings(&self, topo: &GossipTopology) -> Result<MatchingDistribution, CliError> {
        let cfg = |e: rre_gossip::Error| CliError::Config(format!("matchings: {e}"));
        match &self.matchings {
            None => MatchingDistribution::greedy_maximal(topo, 0).map_err(cfg),
            Some(spec) => {
                let mut support = Vec::new();
                let mut probs = Vec::new();
                for (i, m) in spec.support.iter().enumerate() {
                    if m.partners.iter().any(|&p| p == 0) {
                        return Err(CliError::Config(format!("matchings.support[{i}]: partners are 1-based")));
                    }
                    let partners = m.partners.iter().map(|p| p - 1).collect();
                    support.push(
                        Matching::from_partners(partners)
                            .map_err(|e| CliError::Config(format!("matchings.support[{i}]: {e}")))?,
                    );
                    probs.push(m.prob);
                }
                MatchingDistribution::new(topo, support, probs).map_err(cfg)
            }
        }
    }

    pub fn build_scenario(&self, base_dir: &Path) -> Result<Scenario, CliError> {
        let (sys, suite) = self.build_system()?;
        let topo = self.build_topology(suite.len(), base_dir)?;
        let matchings = self.build_matchings(&topo)?;
        Scenario::new(RiccatiOps::new(&sys, &suite), topo, matchings).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn caps(&self) -> SearchCaps {
        SearchCaps {
            max_len: self.ld.max_len,
            max_subsets_per_step: self.ld.max_subsets_per_step,
            max_nodes: self.ld.max_nodes,
        }
    }

    pub fn rare_events(&self, p_star: &DMatrix<f64>) -> Result<Vec<RareEvent>, CliError> {
        if self.events.is_empty() {
            return [Statistic::Trace, Statistic::LambdaMax]
                .into_iter()
                .map(|s| RareEvent::half_of(s, p_star).map_err(|e| CliError::Config(e.to_string())))
                .collect();
        }
        self.events
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let stat: Statistic = e
                    .statistic
                    .parse()
                    .map_err(|err| CliError::Config(format!("events[{i}]: {err}")))?;
                let center = stat.eval(p_star);
                let radius = e.epsilon.unwrap_or_else(|| e.epsilon_fraction.unwrap_or(0.5) * center);
                RareEvent::new(stat, center, radius).map_err(|err| CliError::Config(format!("events[{i}]: {err}")))
            })
            .collect()
    }
}
