//! A resolved simulation world: topology + catalog + request types + cost
//! rankings, with all per-(node, model) tables flattened for fast access.
//!
//! Everything here is immutable after [`Instance::build`]; policies and the
//! scheduler share it freely.

use serde::Serialize;
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError};
use crate::serving::{build_ranking, CostRanking};
use crate::topology::{RequestPath, Topology, TopologyError};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("unknown task {0}")]
    UnknownTask(usize),
    #[error("no repository model for task {0} at the path terminal")]
    NoRepository(usize),
    #[error("repository model {model} at node {node} has zero per-slot capacity")]
    ZeroRepositoryCapacity { node: usize, model: usize },
    #[error("root node budget {budget} MB cannot hold the whole catalog ({total} MB)")]
    RootTooSmall { budget: f64, total: f64 },
    #[error("table {0} has wrong length")]
    BadTableShape(&'static str),
    #[error("allocation value {value} at (node {node}, model {model}) is not integral")]
    NotIntegral {
        node: usize,
        model: usize,
        value: f64,
    },
    #[error("allocation drops pinned model {model} at node {node}")]
    DropsPinned { node: usize, model: usize },
    #[error("allocation at node {node} uses {used} MB, budget {budget} MB (slack {slack} MB)")]
    OverBudget {
        node: usize,
        used: f64,
        budget: f64,
        slack: f64,
    },
}

/// A request type: a task plus the routing path from its origin node.
#[derive(Debug, Clone, Serialize)]
pub struct RequestType {
    pub task: usize,
    /// Origin node id; doubles as the path identifier in trace files.
    pub origin: usize,
    pub path: RequestPath,
}

/// A global allocation vector over (node, model) coordinates, fractional in
/// [0, 1]. Integral allocations use exact 0.0 / 1.0 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    values: Vec<f64>,
}

impl Allocation {
    pub fn zeros(len: usize) -> Self {
        Allocation {
            values: vec![0.0; len],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Allocation { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn set(&mut self, idx: usize, v: f64) {
        self.values[idx] = v;
    }

    pub fn is_integral(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn deployed(&self, idx: usize) -> bool {
        self.values[idx] == 1.0
    }
}

/// Resolved world shared by the scheduler and every policy.
#[derive(Debug, Clone)]
pub struct Instance {
    pub topology: Topology,
    pub n_nodes: usize,
    pub n_models: usize,
    pub tasks: usize,
    /// s^v_m in MB, flattened node-major.
    sizes: Vec<f64>,
    /// d^v_m in ms.
    delays: Vec<f64>,
    /// L^v_m in requests per slot.
    caps: Vec<u64>,
    /// a_m in [0, 1].
    accuracy: Vec<f64>,
    task_of: Vec<usize>,
    models_of_task: Vec<Vec<usize>>,
    pub budgets: Vec<f64>,
    pub types: Vec<RequestType>,
    pub rankings: Vec<CostRanking>,
    /// Minimal allocation: permanently pinned repository models.
    pub omega: Vec<bool>,
    /// Coordinates fixed at 1 in every allocation: repository models plus
    /// every model on nodes whose budget fits the whole catalog.
    pub pinned: Vec<bool>,
    pub alpha: f64,
    pub slot_secs: f64,
}

impl Instance {
    /// Resolves a topology and catalog into a full instance. `origins` lists
    /// the request types as (task, origin node) pairs; paths run up the
    /// hierarchy unless an explicit path is supplied for the pair.
    pub fn build(
        topology: Topology,
        catalog: &Catalog,
        alpha: f64,
        origins: &[(usize, usize)],
        explicit_paths: &[(usize, usize, Vec<usize>)],
    ) -> Result<Self, InstanceError> {
        let n_nodes = topology.len();
        let n_models = catalog.n_models();
        let mut sizes = vec![0.0; n_nodes * n_models];
        let mut delays = vec![0.0; n_nodes * n_models];
        let mut caps = vec![0u64; n_nodes * n_models];
        for v in 0..n_nodes {
            let hw = topology.nodes[v].hardware.clone();
            for m in 0..n_models {
                sizes[v * n_models + m] = catalog.size_mb(m);
                delays[v * n_models + m] = catalog.delay_ms(m, &hw)?;
                caps[v * n_models + m] = catalog.capacity(m, &hw)?;
            }
        }
        let accuracy: Vec<f64> = (0..n_models).map(|m| catalog.accuracy(m)).collect();
        let task_of: Vec<usize> = (0..n_models).map(|m| catalog.task_of(m)).collect();

        // The root must be able to host the entire catalog.
        let root = topology.root();
        let total = catalog.total_size_mb();
        if let Some(b) = topology.nodes[root].budget_mb {
            if b < total {
                return Err(InstanceError::RootTooSmall { budget: b, total });
            }
        }

        // Pin, per task, every replica of the variant with the smallest
        // combined cost d + alpha * 100 * (1 - a) at the root.
        let mut omega = vec![false; n_nodes * n_models];
        for task in 0..catalog.tasks {
            let range = catalog.models_of_task(task);
            let best = range
                .clone()
                .min_by(|&a, &b| {
                    let ca = delays[root * n_models + a] + alpha * 100.0 * (1.0 - accuracy[a]);
                    let cb = delays[root * n_models + b] + alpha * 100.0 * (1.0 - accuracy[b]);
                    ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
                })
                .ok_or(InstanceError::NoRepository(task))?;
            let best_variant = catalog.models[best].variant;
            for m in range {
                if catalog.models[m].variant == best_variant {
                    omega[root * n_models + m] = true;
                }
            }
        }

        Self::from_tables(RawTables {
            topology,
            sizes,
            delays,
            caps,
            accuracy,
            task_of,
            tasks: catalog.tasks,
            omega,
            alpha,
            slot_secs: catalog.slot_secs,
            origins: origins.to_vec(),
            explicit_paths: explicit_paths.to_vec(),
        })
    }

    /// Builds an instance directly from per-(node, model) tables. Used by the
    /// random-instance generator and tests.
    pub fn from_tables(raw: RawTables) -> Result<Self, InstanceError> {
        let RawTables {
            topology,
            sizes,
            delays,
            caps,
            accuracy,
            task_of,
            tasks,
            omega,
            alpha,
            slot_secs,
            origins,
            explicit_paths,
        } = raw;
        let n_nodes = topology.len();
        let n_models = accuracy.len();
        let cells = n_nodes * n_models;
        if sizes.len() != cells {
            return Err(InstanceError::BadTableShape("sizes"));
        }
        if delays.len() != cells {
            return Err(InstanceError::BadTableShape("delays"));
        }
        if caps.len() != cells {
            return Err(InstanceError::BadTableShape("caps"));
        }
        if task_of.len() != n_models {
            return Err(InstanceError::BadTableShape("task_of"));
        }
        if omega.len() != cells {
            return Err(InstanceError::BadTableShape("omega"));
        }

        let mut models_of_task = vec![Vec::new(); tasks];
        for (m, &t) in task_of.iter().enumerate() {
            if t >= tasks {
                return Err(InstanceError::UnknownTask(t));
            }
            models_of_task[t].push(m);
        }

        // Repository entries must be able to serve at least one request.
        for v in 0..n_nodes {
            for m in 0..n_models {
                if omega[v * n_models + m] && caps[v * n_models + m] == 0 {
                    return Err(InstanceError::ZeroRepositoryCapacity { node: v, model: m });
                }
            }
        }

        // Resolve budgets; `None` means "fits everything".
        let budgets: Vec<f64> = (0..n_nodes)
            .map(|v| {
                let ssum: f64 = (0..n_models).map(|m| sizes[v * n_models + m]).sum();
                topology.nodes[v].budget_mb.unwrap_or(ssum)
            })
            .collect();

        // Nodes whose budget fits the whole catalog host everything, always.
        let mut pinned = omega.clone();
        for v in 0..n_nodes {
            let ssum: f64 = (0..n_models).map(|m| sizes[v * n_models + m]).sum();
            if budgets[v] >= ssum {
                for m in 0..n_models {
                    pinned[v * n_models + m] = true;
                }
            }
        }

        // Request types sorted by (task, origin).
        let mut pairs = origins;
        pairs.sort_unstable();
        pairs.dedup();
        let mut types = Vec::with_capacity(pairs.len());
        for (task, origin) in pairs {
            if task >= tasks {
                return Err(InstanceError::UnknownTask(task));
            }
            let path = match explicit_paths
                .iter()
                .find(|(t, o, _)| *t == task && *o == origin)
            {
                Some((_, _, nodes)) => RequestPath::new(nodes.clone(), &topology)?,
                None => topology.path_to_root(origin)?,
            };
            let terminal = path.terminal();
            let has_repo = models_of_task[task]
                .iter()
                .any(|&m| omega[terminal * n_models + m]);
            if !has_repo {
                return Err(InstanceError::NoRepository(task));
            }
            types.push(RequestType { task, origin, path });
        }

        let mut inst = Instance {
            topology,
            n_nodes,
            n_models,
            tasks,
            sizes,
            delays,
            caps,
            accuracy,
            task_of,
            models_of_task,
            budgets,
            types,
            rankings: Vec::new(),
            omega,
            pinned,
            alpha,
            slot_secs,
        };
        inst.rankings = (0..inst.types.len())
            .map(|rho| build_ranking(&inst, rho))
            .collect();
        Ok(inst)
    }

    #[inline]
    pub fn idx(&self, node: usize, model: usize) -> usize {
        node * self.n_models + model
    }

    #[inline]
    pub fn size(&self, node: usize, model: usize) -> f64 {
        self.sizes[node * self.n_models + model]
    }

    #[inline]
    pub fn delay(&self, node: usize, model: usize) -> f64 {
        self.delays[node * self.n_models + model]
    }

    #[inline]
    pub fn capacity(&self, node: usize, model: usize) -> u64 {
        self.caps[node * self.n_models + model]
    }

    #[inline]
    pub fn accuracy_of(&self, model: usize) -> f64 {
        self.accuracy[model]
    }

    #[inline]
    pub fn task_of(&self, model: usize) -> usize {
        self.task_of[model]
    }

    pub fn models_of_task(&self, task: usize) -> &[usize] {
        &self.models_of_task[task]
    }

    /// Total model mass at a node, in MB.
    pub fn node_size_sum(&self, node: usize) -> f64 {
        (0..self.n_models).map(|m| self.size(node, m)).sum()
    }

    /// The budget-equality target of the fractional feasible set at a node:
    /// min(budget, total model mass).
    pub fn budget_target(&self, node: usize) -> f64 {
        self.budgets[node].min(self.node_size_sum(node))
    }

    /// The minimal allocation (repository models only).
    pub fn omega_allocation(&self) -> Allocation {
        Allocation::from_values(
            self.omega
                .iter()
                .map(|&p| if p { 1.0 } else { 0.0 })
                .collect(),
        )
    }

    /// An allocation with every pinned coordinate set to 1 and nothing else.
    pub fn pinned_allocation(&self) -> Allocation {
        Allocation::from_values(
            self.pinned
                .iter()
                .map(|&p| if p { 1.0 } else { 0.0 })
                .collect(),
        )
    }

    /// The routing path a request for `task` issued at `origin` follows.
    pub fn serving_path(&self, origin: usize, task: usize) -> Result<RequestPath, InstanceError> {
        if task >= self.tasks {
            return Err(InstanceError::UnknownTask(task));
        }
        let path = self.topology.path_to_root(origin)?;
        let terminal = path.terminal();
        let has_repo = self.models_of_task[task]
            .iter()
            .any(|&m| self.omega[terminal * self.n_models + m]);
        if !has_repo {
            return Err(InstanceError::NoRepository(task));
        }
        Ok(path)
    }

    /// True iff for every task the declared peak batch fits the repository
    /// capacity at the path terminals.
    pub fn repo_feasible(&self, max_batch_per_task: &[u64]) -> bool {
        for (task, &peak) in max_batch_per_task.iter().enumerate() {
            if task >= self.tasks {
                return false;
            }
            let mut terminals: Vec<usize> = self
                .types
                .iter()
                .filter(|ty| ty.task == task)
                .map(|ty| ty.path.terminal())
                .collect();
            terminals.sort_unstable();
            terminals.dedup();
            if terminals.is_empty() {
                terminals.push(self.topology.root());
            }
            let cap: u64 = terminals
                .iter()
                .flat_map(|&v| {
                    self.models_of_task[task]
                        .iter()
                        .filter(move |&&m| self.omega[v * self.n_models + m])
                        .map(move |&m| self.caps[v * self.n_models + m])
                })
                .sum();
            if peak > cap {
                return false;
            }
        }
        true
    }

    /// Validates an integral allocation: 0/1 values, pinned coordinates kept,
    /// and per-node budget respected up to `slack` MB.
    pub fn validate_integral(&self, alloc: &Allocation, slack: f64) -> Result<(), InstanceError> {
        for v in 0..self.n_nodes {
            let mut used = 0.0;
            for m in 0..self.n_models {
                let idx = self.idx(v, m);
                let val = alloc.get(idx);
                if val != 0.0 && val != 1.0 {
                    return Err(InstanceError::NotIntegral {
                        node: v,
                        model: m,
                        value: val,
                    });
                }
                if self.pinned[idx] && val != 1.0 {
                    return Err(InstanceError::DropsPinned { node: v, model: m });
                }
                used += val * self.size(v, m);
            }
            if used > self.budgets[v] + slack + 1e-9 {
                return Err(InstanceError::OverBudget {
                    node: v,
                    used,
                    budget: self.budgets[v],
                    slack,
                });
            }
        }
        Ok(())
    }

    /// Model sizes at a node, contiguous slice.
    pub fn node_sizes(&self, node: usize) -> &[f64] {
        &self.sizes[node * self.n_models..(node + 1) * self.n_models]
    }

    /// Pinned mask at a node, contiguous slice.
    pub fn node_pinned(&self, node: usize) -> &[bool] {
        &self.pinned[node * self.n_models..(node + 1) * self.n_models]
    }

    /// Largest model size at a node; the DepRound budget slack bound.
    pub fn max_size(&self, node: usize) -> f64 {
        (0..self.n_models)
            .map(|m| self.size(node, m))
            .fold(0.0, f64::max)
    }
}

/// Raw inputs for [`Instance::from_tables`].
pub struct RawTables {
    pub topology: Topology,
    pub sizes: Vec<f64>,
    pub delays: Vec<f64>,
    pub caps: Vec<u64>,
    pub accuracy: Vec<f64>,
    pub task_of: Vec<usize>,
    pub tasks: usize,
    pub omega: Vec<bool>,
    pub alpha: f64,
    pub slot_secs: f64,
    pub origins: Vec<(usize, usize)>,
    pub explicit_paths: Vec<(usize, usize, Vec<usize>)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::topology::Topology;

    fn build_preset_ii(alpha: f64) -> (Instance, Catalog) {
        let catalog = Catalog::load(Catalog::yolov4_rows(), 2, 3, 60.0).unwrap();
        let inst = Instance::build(
            Topology::preset_ii(),
            &catalog,
            alpha,
            &[(0, 0), (0, 1), (1, 0), (1, 1)],
            &[],
        )
        .unwrap();
        (inst, catalog)
    }

    #[test]
    fn repository_pins_every_replica_of_the_cheapest_variant() {
        // at alpha = 3 the second most accurate variant has the smallest
        // combined delay + weighted-inaccuracy cost on the root hardware
        let (inst, catalog) = build_preset_ii(3.0);
        let root = inst.topology.root();
        for task in 0..inst.tasks {
            let pinned: Vec<usize> = inst
                .models_of_task(task)
                .iter()
                .filter(|&&m| inst.omega[inst.idx(root, m)])
                .copied()
                .collect();
            assert_eq!(pinned.len(), 3, "all replicas pinned");
            for m in pinned {
                assert_eq!(catalog.models[m].variant, 1, "512p variant expected");
            }
        }
    }

    #[test]
    fn root_hosts_the_entire_catalog() {
        let (inst, catalog) = build_preset_ii(1.0);
        let root = inst.topology.root();
        assert!(inst.node_pinned(root).iter().all(|&p| p));
        assert_eq!(inst.budgets[root], catalog.total_size_mb());
        // base stations cannot, so only their repo models are pinned
        assert!(inst.node_pinned(0).iter().any(|&p| !p));
    }

    #[test]
    fn repo_feasibility_thresholds() {
        let (inst, _) = build_preset_ii(1.0);
        // pinned 3.99pruned on Titan RTX: 3 replicas x 209 fps x 60 s
        let per_task_cap = 3 * 209 * 60;
        assert!(inst.repo_feasible(&vec![7_000; inst.tasks]));
        assert!(inst.repo_feasible(&vec![0; inst.tasks]));
        assert!(!inst.repo_feasible(&vec![per_task_cap + 1; inst.tasks]));

        // a heavily accuracy-weighted run pins 608p: 3 x 2502 per slot
        let (inst, catalog) = build_preset_ii(10.0);
        let root = inst.topology.root();
        let pinned: Vec<usize> = inst
            .models_of_task(0)
            .iter()
            .filter(|&&m| inst.omega[inst.idx(root, m)])
            .copied()
            .collect();
        assert!(pinned.iter().all(|&m| catalog.models[m].variant == 0));
        assert!(inst.repo_feasible(&vec![7_000; inst.tasks]));
        assert!(!inst.repo_feasible(&vec![7_507; inst.tasks]));
    }

    #[test]
    fn serving_path_validates_task() {
        let (inst, _) = build_preset_ii(1.0);
        let path = inst.serving_path(0, 0).unwrap();
        assert_eq!(path.len(), 4);
        assert_eq!(path.terminal(), inst.topology.root());
        assert!(matches!(
            inst.serving_path(0, 99),
            Err(InstanceError::UnknownTask(99))
        ));
    }

    #[test]
    fn rejects_root_smaller_than_catalog() {
        let catalog = Catalog::load(Catalog::yolov4_rows(), 1, 1, 60.0).unwrap();
        let topo = Topology::single_node(0, "titan_rtx", Some(10.0));
        let err = Instance::build(topo, &catalog, 1.0, &[(0, 0)], &[]);
        assert!(matches!(err, Err(InstanceError::RootTooSmall { .. })));
    }

    #[test]
    fn validate_integral_catches_violations() {
        let (inst, _) = build_preset_ii(1.0);
        let mut x = inst.pinned_allocation();
        x.set(inst.idx(0, 0), 0.5);
        assert!(matches!(
            inst.validate_integral(&x, 0.0),
            Err(InstanceError::NotIntegral { .. })
        ));
        let mut x = inst.pinned_allocation();
        let root = inst.topology.root();
        x.set(inst.idx(root, 0), 0.0);
        assert!(matches!(
            inst.validate_integral(&x, 0.0),
            Err(InstanceError::DropsPinned { .. })
        ));
        let mut x = inst.pinned_allocation();
        for m in 0..inst.n_models {
            x.set(inst.idx(0, m), 1.0);
        }
        assert!(matches!(
            inst.validate_integral(&x, 0.0),
            Err(InstanceError::OverBudget { .. })
        ));
    }
}
