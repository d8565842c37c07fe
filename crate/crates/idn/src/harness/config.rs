//! JSON configuration and its resolution into a runnable scenario.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, VariantRow};
use crate::infida::{
    CapacityMode, EtaChoice, InfidaConfig, RefreshSchedule, RoundingMode, SubgradientMode,
};
use crate::instance::{Instance, InstanceError};
use crate::serving::{max_capacities, SlotDemand};
use crate::topology::{TierSpec, Topology, TopologyError};
use crate::workload::{Generator, Popularity, Trace, WorkloadError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown topology preset '{0}' (expected topology_i or topology_ii)")]
    UnknownPreset(String),
    #[error("topology needs either a preset or an explicit tier list")]
    NoTopology,
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("repository capacity cannot absorb the declared peak batch of {0} requests per task")]
    RepoInfeasible(u64),
    #[error("trace capacity pins require capacity_mode = \"max\"")]
    PinsNeedMaxMode,
    #[error("workload kind 'trace' needs a trace_path")]
    MissingTracePath,
    #[error("horizon {horizon} exceeds trace length {len}")]
    TraceTooShort { horizon: u64, len: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TopologySection {
    /// "topology_i" (36 nodes) or "topology_ii" (5 nodes).
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub tiers: Option<Vec<TierSpec>>,
    /// Optional fixed routes overriding the hierarchy walk.
    #[serde(default)]
    pub explicit_paths: Vec<ExplicitPath>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplicitPath {
    pub task: usize,
    pub origin: usize,
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum CatalogSource {
    /// The built-in profiled variant table.
    Yolov4,
    Csv {
        path: PathBuf,
    },
    Inline {
        rows: Vec<VariantRow>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogSection {
    #[serde(flatten)]
    pub source: CatalogSource,
    pub tasks: usize,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_slot_secs")]
    pub slot_secs: f64,
}

fn default_replicas() -> usize {
    3
}

fn default_slot_secs() -> f64 {
    60.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WorkloadKind {
    Fixed,
    Sliding { window: u64, shift: usize },
    Trace { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadSection {
    #[serde(flatten)]
    pub kind: WorkloadKind,
    #[serde(default = "default_rate")]
    pub rate_rps: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    #[serde(default = "default_origins_per_task")]
    pub origins_per_task: usize,
    /// Declared peak per-task batch for the repository feasibility check;
    /// defaults to a full slot of requests.
    #[serde(default)]
    pub max_task_batch: Option<u64>,
}

fn default_rate() -> f64 {
    7_500.0
}

fn default_exponent() -> f64 {
    1.2
}

fn default_origins_per_task() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Infida,
    InfidaOffline,
    Sg,
    Olag,
    /// Repository-only static allocation (diagnostic baseline).
    Omega,
}

impl std::str::FromStr for PolicyName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "infida" => Ok(PolicyName::Infida),
            "infida_offline" => Ok(PolicyName::InfidaOffline),
            "sg" => Ok(PolicyName::Sg),
            "olag" => Ok(PolicyName::Olag),
            "omega" => Ok(PolicyName::Omega),
            other => Err(format!("unknown policy '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySection {
    pub name: PolicyName,
    #[serde(default)]
    pub eta: EtaChoice,
    #[serde(default)]
    pub refresh: RefreshSchedule,
    #[serde(default = "default_eps_min")]
    pub eps_min: f64,
    #[serde(default)]
    pub rounding: RoundingMode,
    #[serde(default)]
    pub subgradient: SubgradientMode,
    #[serde(default)]
    pub capacity_mode: CapacityMode,
    #[serde(default)]
    pub olag_decay: f64,
    /// Trace stride for SG marginal-gain scoring (1 = exact).
    #[serde(default = "default_sg_stride")]
    pub sg_stride: usize,
    #[serde(default = "default_offline_iterations")]
    pub offline_iterations: u64,
}

fn default_eps_min() -> f64 {
    1e-12
}

fn default_sg_stride() -> usize {
    0 // auto: full trace up to 200 slots, then ~128 samples
}

fn default_offline_iterations() -> u64 {
    200
}

impl PolicySection {
    pub fn infida_config(&self) -> InfidaConfig {
        InfidaConfig {
            eta: self.eta,
            refresh: self.refresh,
            eps_min: self.eps_min,
            rounding: self.rounding,
            subgradient: self.subgradient,
            capacity: self.capacity_mode,
        }
    }

    pub fn resolved_sg_stride(&self, horizon: usize) -> usize {
        if self.sg_stride > 0 {
            self.sg_stride
        } else if horizon <= 200 {
            1
        } else {
            horizon.div_ceil(128)
        }
    }
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    pub horizon: u64,
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub topology: TopologySection,
    pub catalog: CatalogSection,
    pub workload: WorkloadSection,
    pub policy: PolicySection,
    pub run: RunSection,
}

impl SimulationConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn build_topology(&self) -> Result<Topology, ConfigError> {
        if let Some(preset) = &self.topology.preset {
            return match preset.as_str() {
                "topology_i" => Ok(Topology::preset_i()),
                "topology_ii" => Ok(Topology::preset_ii()),
                other => Err(ConfigError::UnknownPreset(other.to_string())),
            };
        }
        match &self.topology.tiers {
            Some(tiers) => Ok(Topology::hierarchical(tiers)?),
            None => Err(ConfigError::NoTopology),
        }
    }

    pub fn build_catalog(&self) -> Result<Catalog, ConfigError> {
        let rows = match &self.catalog.source {
            CatalogSource::Yolov4 => Catalog::yolov4_rows(),
            CatalogSource::Csv { path } => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.clone(),
                    source,
                })?;
                Catalog::rows_from_csv(&text)?
            }
            CatalogSource::Inline { rows } => rows.clone(),
        };
        Ok(Catalog::load(
            rows,
            self.catalog.tasks,
            self.catalog.replicas,
            self.catalog.slot_secs,
        )?)
    }

    /// Requests per slot at the configured arrival rate.
    pub fn requests_per_slot(&self) -> u64 {
        (self.workload.rate_rps * self.catalog.slot_secs).round() as u64
    }
}

/// Everything resolved and pre-generated for one run.
pub struct Scenario {
    pub config: SimulationConfig,
    pub inst: Instance,
    /// Per-slot batches, pre-generated for determinism and hindsight policies.
    pub batches: Vec<Vec<u64>>,
    /// Fully pinned per-slot demands (adversarial mode); `None` when
    /// capacities are derived at runtime.
    pub fixed: Option<Vec<SlotDemand>>,
}

impl Scenario {
    pub fn build(
        mut config: SimulationConfig,
        seed_override: Option<u64>,
    ) -> Result<Self, ConfigError> {
        if let Some(seed) = seed_override {
            config.run.seed = seed;
        }
        let seed = config.run.seed;
        let topology = config.build_topology()?;
        let catalog = config.build_catalog()?;

        // request types and batches
        let explicit: Vec<(usize, usize, Vec<usize>)> = config
            .topology
            .explicit_paths
            .iter()
            .map(|p| (p.task, p.origin, p.nodes.clone()))
            .collect();
        let horizon = config.run.horizon as usize;

        let (pairs, trace) = match &config.workload.kind {
            WorkloadKind::Trace { path } => {
                let trace = Trace::load(path)?;
                if horizon > trace.slots.len() {
                    return Err(ConfigError::TraceTooShort {
                        horizon: config.run.horizon,
                        len: trace.slots.len(),
                    });
                }
                let mut pairs = BTreeSet::new();
                for slot in &trace.slots {
                    for &(task, origin, _) in &slot.requests {
                        pairs.insert((task, origin));
                    }
                    for &(task, origin, _, _, _) in &slot.capacities {
                        pairs.insert((task, origin));
                    }
                }
                (pairs.into_iter().collect::<Vec<_>>(), Some(trace))
            }
            _ => {
                let stations = base_stations(&topology);
                let mut setup = ChaCha8Rng::seed_from_u64(seed ^ 0x5e7a_11ce_0ff5_e77e);
                let origins = Generator::assign_origins(
                    catalog.tasks,
                    &stations,
                    config.workload.origins_per_task,
                    &mut setup,
                );
                let pairs: Vec<(usize, usize)> = origins
                    .iter()
                    .enumerate()
                    .flat_map(|(t, os)| os.iter().map(move |&o| (t, o)))
                    .collect();
                (pairs, None)
            }
        };

        let inst = Instance::build(topology, &catalog, config.run.alpha, &pairs, &explicit)?;

        // repository feasibility for the declared peak batch
        let peak = config
            .workload
            .max_task_batch
            .unwrap_or_else(|| config.requests_per_slot());
        if !inst.repo_feasible(&vec![peak; inst.tasks]) {
            return Err(ConfigError::RepoInfeasible(peak));
        }

        // per-slot batches
        let batches = match (&config.workload.kind, &trace) {
            (WorkloadKind::Trace { .. }, Some(trace)) => {
                let mut all = trace.batches(&inst)?;
                all.truncate(horizon);
                all
            }
            (kind, _) => {
                let popularity = match kind {
                    WorkloadKind::Fixed => Popularity::Fixed,
                    WorkloadKind::Sliding { window, shift } => Popularity::Sliding {
                        window: *window,
                        shift: *shift,
                    },
                    WorkloadKind::Trace { .. } => unreachable!(),
                };
                let mut setup = ChaCha8Rng::seed_from_u64(seed ^ 0x5e7a_11ce_0ff5_e77e);
                let origins = Generator::assign_origins(
                    inst.tasks,
                    &base_stations(&inst.topology),
                    config.workload.origins_per_task,
                    &mut setup,
                );
                let mut generator =
                    Generator::new(&inst, popularity, config.workload.exponent, origins, seed)?;
                let per_slot = config.requests_per_slot();
                (0..horizon)
                    .map(|_| generator.next_batch(per_slot))
                    .collect()
            }
        };

        // fully pinned adversarial demands
        let has_pins = trace
            .as_ref()
            .map(|t| t.slots.iter().any(|s| !s.capacities.is_empty()))
            .unwrap_or(false);
        let fixed = if config.policy.capacity_mode == CapacityMode::Max {
            let mut demands: Vec<SlotDemand> =
                batches.iter().map(|r| max_capacities(&inst, r)).collect();
            if let Some(trace) = &trace {
                for (t, demand) in demands.iter_mut().enumerate() {
                    trace.apply_overrides(&inst, t, demand)?;
                }
            }
            Some(demands)
        } else if has_pins {
            return Err(ConfigError::PinsNeedMaxMode);
        } else {
            None
        };

        Ok(Scenario {
            config,
            inst,
            batches,
            fixed,
        })
    }
}

/// Nodes of the highest tier (the request entry points).
pub fn base_stations(topology: &Topology) -> Vec<usize> {
    let top = topology.nodes.iter().map(|n| n.tier).max().unwrap_or(0);
    topology.tier_nodes(top)
}
