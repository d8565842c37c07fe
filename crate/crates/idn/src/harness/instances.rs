//! Hand-built fixtures and a seeded random-instance generator, shared by the
//! structural checks, the acceptance suite and unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::infida::bregman_project;
use crate::instance::{Allocation, Instance, RawTables};
use crate::serving::SlotDemand;
use crate::topology::{TierSpec, Topology};

/// A chain of `n` nodes; node `n - 1` is the root.
pub fn chain_topology(n: usize, budgets: &[Option<f64>], uplinks: &[f64]) -> Topology {
    let levels: Vec<TierSpec> = (0..n)
        .map(|i| TierSpec {
            tier: (n - 1 - i) as u32,
            count: 1,
            hardware: "hw".into(),
            budget_mb: budgets[i],
            uplink_ms: if i + 1 < n { uplinks[i] } else { 0.0 },
        })
        .collect();
    Topology::hierarchical(&levels).unwrap()
}

/// Raw tables of [`two_cost_example`], for tests that want to tweak a field
/// before building.
pub fn two_cost_raw() -> RawTables {
    RawTables {
        topology: chain_topology(2, &[Some(1.0), None], &[0.0]),
        sizes: vec![1.0, 1.0, 1.0, 1.0],
        // node 0: model 0 costs 20, model 1 unattractive; node 1: reversed
        delays: vec![20.0, 1000.0, 2000.0, 100.0],
        caps: vec![4, 0, 0, 100],
        accuracy: vec![0.9, 0.8],
        task_of: vec![0, 0],
        tasks: 1,
        omega: vec![false, false, false, true],
        alpha: 0.0,
        slot_secs: 60.0,
        origins: vec![(0, 0)],
        explicit_paths: vec![],
    }
}

/// Two nodes, one task, one cheap capacity-limited model at the edge and one
/// expensive repository model: costs 20 and 100, capacities 4 and 10-plus.
/// The returned allocation deploys the edge model.
pub fn two_cost_example() -> (Instance, Allocation) {
    let inst = Instance::from_tables(two_cost_raw()).unwrap();
    let mut x = inst.pinned_allocation();
    x.set(inst.idx(0, 0), 1.0);
    (inst, x)
}

/// One node hosting its own repository; every path has length 1.
pub fn single_node_example() -> (Instance, Allocation) {
    let topology = Topology::single_node(0, "hw", None);
    let inst = Instance::from_tables(RawTables {
        topology,
        sizes: vec![1.0],
        delays: vec![5.0],
        caps: vec![50],
        accuracy: vec![0.9],
        task_of: vec![0],
        tasks: 1,
        omega: vec![true],
        alpha: 1.0,
        slot_secs: 60.0,
        origins: vec![(0, 0)],
        explicit_paths: vec![],
    })
    .unwrap();
    let x = inst.pinned_allocation();
    (inst, x)
}

/// Three-node chain whose cost order interleaves path positions, so the
/// message protocol must buffer out-of-order entries. Returns (instance,
/// integral allocation, fractional state).
pub fn non_monotone_cost_example() -> (Instance, Allocation, Allocation) {
    let topology = chain_topology(3, &[Some(2.0), Some(1.0), None], &[0.0, 0.0]);
    let big = 1e6;
    let inst = Instance::from_tables(RawTables {
        topology,
        sizes: vec![1.0; 9],
        // ranking: (node1, m1, 10) < (node2, m2, 12) < (node0, m0, 15) < (node0, m1, 16) < ...
        delays: vec![15.0, 16.0, big, big, 10.0, big, big, big, 12.0],
        caps: vec![5, 3, 0, 0, 4, 0, 0, 0, 100],
        accuracy: vec![0.9, 0.9, 0.9],
        task_of: vec![0, 0, 0],
        tasks: 1,
        omega: vec![false, false, false, false, false, false, false, false, true],
        alpha: 0.0,
        slot_secs: 60.0,
        origins: vec![(0, 0)],
        explicit_paths: vec![],
    })
    .unwrap();
    let mut x = inst.pinned_allocation();
    x.set(inst.idx(0, 0), 1.0);
    x.set(inst.idx(1, 1), 1.0);
    let mut y = x.clone();
    y.set(inst.idx(0, 0), 0.5);
    y.set(inst.idx(0, 1), 0.5);
    (inst, x, y)
}

/// Two tasks sharing nothing, two request types of the same task contending
/// for one capacity-5 model at the common middle node.
pub fn shared_capacity_example() -> (Instance, Allocation) {
    let topology = Topology::hierarchical(&[
        TierSpec {
            tier: 2,
            count: 2,
            hardware: "hw".into(),
            budget_mb: Some(1.0),
            uplink_ms: 0.0,
        },
        TierSpec {
            tier: 1,
            count: 1,
            hardware: "hw".into(),
            budget_mb: Some(1.0),
            uplink_ms: 0.0,
        },
        TierSpec {
            tier: 0,
            count: 1,
            hardware: "hw".into(),
            budget_mb: None,
            uplink_ms: 0.0,
        },
    ])
    .unwrap();
    let big = 1e6;
    let inst = Instance::from_tables(RawTables {
        topology,
        sizes: vec![1.0; 8],
        delays: vec![big, big, big, big, 10.0, big, big, 100.0],
        caps: vec![0, 0, 0, 0, 5, 0, 0, 100],
        accuracy: vec![0.9, 0.9],
        task_of: vec![0, 0],
        tasks: 1,
        omega: vec![false, false, false, false, false, false, false, true],
        alpha: 0.0,
        slot_secs: 60.0,
        origins: vec![(0, 0), (0, 1)],
        explicit_paths: vec![],
    })
    .unwrap();
    let mut x = inst.pinned_allocation();
    x.set(inst.idx(2, 0), 1.0);
    (inst, x)
}

/// Two nodes with two unit-size models each and unit budgets; used for the
/// regret-constant plug-in checks.
pub fn unit_regret_example() -> (Instance, Allocation) {
    let topology = chain_topology(2, &[Some(1.0), Some(1.0)], &[1.0]);
    let inst = Instance::from_tables(RawTables {
        topology,
        sizes: vec![1.0; 4],
        delays: vec![1.0; 4],
        caps: vec![10; 4],
        accuracy: vec![0.9, 0.9],
        task_of: vec![0, 0],
        tasks: 1,
        omega: vec![false; 4],
        alpha: 1.0,
        slot_secs: 60.0,
        origins: vec![],
        explicit_paths: vec![],
    })
    .unwrap();
    let x = inst.pinned_allocation();
    (inst, x)
}

/// Knobs for [`random_instance`].
#[derive(Debug, Clone, Copy)]
pub struct SampleParams {
    pub max_nodes: usize,
    pub max_tasks: usize,
    pub max_models_per_task: usize,
    pub max_r: u64,
    /// When set, every capacity entry is maximal (`min(L, r)`) instead of
    /// adversarially random.
    pub maximal_capacities: bool,
}

impl Default for SampleParams {
    fn default() -> Self {
        SampleParams {
            max_nodes: 5,
            max_tasks: 2,
            max_models_per_task: 3,
            max_r: 10,
            maximal_capacities: false,
        }
    }
}

/// A random valid world plus a random admissible slot: batch, adversarial
/// capacities (repository entries always maximal) and a feasible integral
/// allocation.
pub struct RandomInstance {
    pub inst: Instance,
    pub demand: SlotDemand,
    pub x: Allocation,
}

pub fn random_instance(rng: &mut ChaCha8Rng, p: &SampleParams) -> RandomInstance {
    let n_nodes = rng.gen_range(2..=p.max_nodes.max(2));
    let tasks = rng.gen_range(1..=p.max_tasks.max(1));
    let per_task: Vec<usize> = (0..tasks)
        .map(|_| rng.gen_range(1..=p.max_models_per_task.max(1)))
        .collect();
    let n_models: usize = per_task.iter().sum();
    let mut task_of = Vec::with_capacity(n_models);
    for (t, &k) in per_task.iter().enumerate() {
        task_of.extend(std::iter::repeat_n(t, k));
    }

    let cells = n_nodes * n_models;
    let sizes: Vec<f64> = (0..cells).map(|_| rng.gen_range(0.5..2.0)).collect();
    let delays: Vec<f64> = (0..cells).map(|_| rng.gen_range(1.0..50.0)).collect();
    let mut caps: Vec<u64> = (0..cells).map(|_| rng.gen_range(0..=8)).collect();
    let accuracy: Vec<f64> = (0..n_models).map(|_| rng.gen_range(0.3..0.99)).collect();
    let alpha = rng.gen_range(0.0..3.0);

    // pin one random model per task at the root, with ample capacity
    let root = n_nodes - 1;
    let mut omega = vec![false; cells];
    let mut m0 = 0;
    for &k in &per_task {
        let pick = m0 + rng.gen_range(0..k);
        omega[root * n_models + pick] = true;
        caps[root * n_models + pick] = 1_000;
        m0 += k;
    }

    // budgets as random fractions of the node mass; root holds everything
    let budgets: Vec<Option<f64>> = (0..n_nodes)
        .map(|v| {
            if v == root {
                None
            } else {
                let ssum: f64 = (0..n_models).map(|m| sizes[v * n_models + m]).sum();
                Some(ssum * rng.gen_range(0.3..1.1))
            }
        })
        .collect();
    let uplinks: Vec<f64> = (0..n_nodes.saturating_sub(1))
        .map(|_| rng.gen_range(0.0..10.0))
        .collect();
    let topology = chain_topology(n_nodes, &budgets, &uplinks);

    let mut origins = Vec::new();
    for t in 0..tasks {
        let k = rng.gen_range(1..=2);
        for _ in 0..k {
            origins.push((t, rng.gen_range(0..n_nodes)));
        }
    }

    let inst = Instance::from_tables(RawTables {
        topology,
        sizes,
        delays,
        caps,
        accuracy,
        task_of,
        tasks,
        omega,
        alpha,
        slot_secs: 60.0,
        origins,
        explicit_paths: vec![],
    })
    .expect("random tables are valid");

    let demand = random_demand(&inst, rng, p.max_r, p.maximal_capacities);
    let x = random_integral(&inst, rng);
    RandomInstance { inst, demand, x }
}

/// A random admissible slot: batch plus capacities respecting the adversary
/// constraint `l <= min(L, r)`, repository entries always at full capacity.
pub fn random_demand(
    inst: &Instance,
    rng: &mut ChaCha8Rng,
    max_r: u64,
    maximal: bool,
) -> SlotDemand {
    let r: Vec<u64> = (0..inst.types.len())
        .map(|_| rng.gen_range(0..=max_r))
        .collect();
    let caps = inst
        .rankings
        .iter()
        .enumerate()
        .map(|(rho, rk)| {
            rk.entries
                .iter()
                .map(|e| {
                    let idx = inst.idx(e.node, e.model);
                    let upper = inst.capacity(e.node, e.model).min(r[rho]);
                    if inst.omega[idx] || maximal {
                        upper
                    } else {
                        rng.gen_range(0..=upper)
                    }
                })
                .collect()
        })
        .collect();
    SlotDemand { r, caps }
}

/// Two nodes, two tasks with three model options each, tight edge budget.
/// The workhorse of the empirical regret experiment: small enough for the
/// brute-force oracle, rich enough that the best static allocation matters.
pub fn two_node_regret_instance() -> Instance {
    let topology = chain_topology(2, &[Some(2.0), None], &[5.0]);
    let n = 6;
    let mut delays = vec![0.0; 2 * n];
    let mut caps = vec![0u64; 2 * n];
    // edge node: cheap fast models with modest capacity
    for m in 0..n {
        delays[m] = 4.0 + 3.0 * m as f64;
        caps[m] = 3 + (m as u64 % 3) * 2;
        // root: ample capacity, higher inference cost for non-repo entries
        delays[n + m] = 30.0 + 5.0 * m as f64;
        caps[n + m] = 1_000;
    }
    let mut omega = vec![false; 2 * n];
    omega[n + 2] = true; // task 0 repository
    omega[n + 5] = true; // task 1 repository
    Instance::from_tables(RawTables {
        topology,
        sizes: vec![1.0; 2 * n],
        delays,
        caps,
        accuracy: vec![0.95, 0.8, 0.6, 0.9, 0.75, 0.55],
        task_of: vec![0, 0, 0, 1, 1, 1],
        tasks: 2,
        omega,
        alpha: 0.5,
        slot_secs: 60.0,
        origins: vec![(0, 0), (1, 0)],
        explicit_paths: vec![],
    })
    .unwrap()
}

/// A random feasible integral allocation: pinned coordinates plus a random
/// budget-respecting subset per node.
pub fn random_integral(inst: &Instance, rng: &mut ChaCha8Rng) -> Allocation {
    let mut x = inst.pinned_allocation();
    for v in 0..inst.n_nodes {
        let mut used: f64 = (0..inst.n_models)
            .filter(|&m| inst.pinned[inst.idx(v, m)])
            .map(|m| inst.size(v, m))
            .sum();
        let mut order: Vec<usize> = (0..inst.n_models).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        for m in order {
            let idx = inst.idx(v, m);
            if inst.pinned[idx] || !rng.gen_bool(0.5) {
                continue;
            }
            if used + inst.size(v, m) <= inst.budgets[v] {
                x.set(idx, 1.0);
                used += inst.size(v, m);
            }
        }
    }
    x
}

/// A random point of the fractional feasible set: random positives projected
/// per node, pinned coordinates fixed at 1.
pub fn random_feasible_state(inst: &Instance, rng: &mut ChaCha8Rng) -> Allocation {
    let mut y = inst.pinned_allocation();
    for v in 0..inst.n_nodes {
        let lo = v * inst.n_models;
        let sizes = inst.node_sizes(v);
        let pinned = inst.node_pinned(v);
        let h: Vec<f64> = (0..inst.n_models)
            .map(|m| {
                if pinned[m] {
                    1.0
                } else {
                    rng.gen_range(1e-3..1.5f64)
                }
            })
            .collect();
        let projected =
            bregman_project(&h, sizes, inst.budgets[v], pinned).expect("random state projects");
        y.values_mut()[lo..lo + inst.n_models].copy_from_slice(&projected);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn random_instances_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let sample = random_instance(&mut rng, &SampleParams::default());
            let inst = &sample.inst;
            // adversary constraint l <= min(L, r)
            for (rho, rk) in inst.rankings.iter().enumerate() {
                for (ki, e) in rk.entries.iter().enumerate() {
                    let l = sample.demand.caps[rho][ki];
                    assert!(l <= inst.capacity(e.node, e.model).min(sample.demand.r[rho]));
                }
            }
            inst.validate_integral(&sample.x, 0.0).unwrap();
            // the gain is well defined on the sample
            crate::serving::gain(inst, &sample.demand, &sample.x).unwrap();
        }
    }

    #[test]
    fn random_states_live_on_the_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let sample = random_instance(&mut rng, &SampleParams::default());
            let inst = &sample.inst;
            let y = random_feasible_state(inst, &mut rng);
            for v in 0..inst.n_nodes {
                let target = inst.budget_target(v);
                let got: f64 = (0..inst.n_models)
                    .map(|m| inst.size(v, m) * y.get(inst.idx(v, m)))
                    .sum();
                assert!((got - target).abs() < 1e-6, "node {v}: {got} vs {target}");
                for m in 0..inst.n_models {
                    let val = y.get(inst.idx(v, m));
                    assert!(val > 0.0 && val <= 1.0);
                }
            }
        }
    }
}
