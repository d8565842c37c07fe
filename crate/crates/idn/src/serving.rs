//! Cost model, cost rankings, within-slot scheduling, aggregate cost,
//! allocation gain and its multiplicative bound.
//!
//! For a request type the costs of all (path node, model) pairs are sorted
//! ascending once; everything downstream (scheduling, gain, subgradients)
//! walks that ranking. Rank `k` is 1-based: `entries[k - 1]` holds the k-th
//! smallest cost `gamma_k`.

use serde::Serialize;
use thiserror::Error;

use crate::instance::{Allocation, Instance};

#[derive(Debug, Error)]
pub enum ServingError {
    #[error("scheduler requires an integral allocation")]
    NotIntegral,
    #[error("request type {rho}: {demand} requests exceed reachable capacity {capacity}")]
    Unserved {
        rho: usize,
        demand: u64,
        capacity: f64,
    },
    #[error("model {model} cannot serve task {task}")]
    UnsuitableModel { model: usize, task: usize },
}

/// One (node, model) pair on a request type's path, with its serving cost.
#[derive(Debug, Clone, Serialize)]
pub struct RankEntry {
    pub node: usize,
    pub model: usize,
    /// 1-based position of `node` on the path.
    pub pos: usize,
    pub cost: f64,
}

/// Serving costs of all pairs along a request type's path, ascending.
/// Ties break by (path position, model id).
#[derive(Debug, Clone, Serialize)]
pub struct CostRanking {
    pub entries: Vec<RankEntry>,
}

impl CostRanking {
    /// Number of (node, model) pairs the request may encounter.
    pub fn k_max(&self) -> usize {
        self.entries.len()
    }

    /// 1-based rank of (node, model), or `None` when the node is off-path
    /// (rank "infinity").
    pub fn kappa(&self, node: usize, model: usize) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.node == node && e.model == model)
            .map(|i| i + 1)
    }

    /// Cost of the k-th smallest entry (1-based).
    pub fn gamma(&self, k: usize) -> f64 {
        self.entries[k - 1].cost
    }
}

/// Cost of serving one request of the given type at path position `j` with
/// `model`: network prefix + inference delay + weighted inaccuracy. The
/// inaccuracy term lives on a 0-100 scale, so `alpha` multiplies
/// `100 * (1 - a_m)`.
pub fn serving_cost(
    inst: &Instance,
    rho: usize,
    j: usize,
    model: usize,
) -> Result<f64, ServingError> {
    let ty = &inst.types[rho];
    if inst.task_of(model) != ty.task {
        return Err(ServingError::UnsuitableModel {
            model,
            task: ty.task,
        });
    }
    let node = ty.path.nodes()[j - 1];
    let net = ty
        .path
        .prefix_latency(j)
        .expect("position validated by caller");
    Ok(net + inst.delay(node, model) + inst.alpha * 100.0 * (1.0 - inst.accuracy_of(model)))
}

/// Builds the full cost ranking of a request type over every (path node,
/// model of the task) pair, deployed or not.
pub fn build_ranking(inst: &Instance, rho: usize) -> CostRanking {
    let ty = &inst.types[rho];
    let mut entries = Vec::with_capacity(ty.path.len() * inst.models_of_task(ty.task).len());
    for (j0, &node) in ty.path.nodes().iter().enumerate() {
        let net = ty.path.prefix_latency(j0 + 1).unwrap();
        for &m in inst.models_of_task(ty.task) {
            let cost = net + inst.delay(node, m) + inst.alpha * 100.0 * (1.0 - inst.accuracy_of(m));
            entries.push(RankEntry {
                node,
                model: m,
                pos: j0 + 1,
                cost,
            });
        }
    }
    entries.sort_by(|a, b| {
        a.cost
            .partial_cmp(&b.cost)
            .unwrap()
            .then(a.pos.cmp(&b.pos))
            .then(a.model.cmp(&b.model))
    });
    CostRanking { entries }
}

/// Per-slot demand: the request batch plus the potential available capacity
/// of every ranking entry (aligned with `CostRanking::entries`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotDemand {
    pub r: Vec<u64>,
    pub caps: Vec<Vec<u64>>,
}

impl SlotDemand {
    pub fn total_requests(&self) -> u64 {
        self.r.iter().sum()
    }
}

/// Result of scheduling one slot: realized per-entry loads and the derived
/// potential available capacities.
#[derive(Debug, Clone)]
pub struct SlotSchedule {
    pub demand: SlotDemand,
    /// Requests served per (request type, rank index), aligned with rankings.
    pub loads: Vec<Vec<u64>>,
}

/// Serves a batch on an integral allocation. Request types are processed in
/// ascending (task, origin) order; each type water-fills its ranking over
/// deployed models, consuming shared residual capacity. Afterwards the
/// potential available capacity of every entry is derived: for deployed
/// entries the capacity left over by *other* types (capped by the batch), for
/// undeployed entries the full capacity capped by the batch.
pub fn schedule_slot(
    inst: &Instance,
    x: &Allocation,
    r: &[u64],
) -> Result<SlotSchedule, ServingError> {
    if !x.is_integral() {
        return Err(ServingError::NotIntegral);
    }
    let mut residual: Vec<u64> = (0..inst.n_nodes * inst.n_models)
        .map(|idx| inst.capacity(idx / inst.n_models, idx % inst.n_models))
        .collect();
    let mut loads: Vec<Vec<u64>> = inst
        .rankings
        .iter()
        .map(|rk| vec![0u64; rk.k_max()])
        .collect();
    let mut total_load = vec![0u64; inst.n_nodes * inst.n_models];

    for rho in 0..inst.types.len() {
        let mut remaining = r[rho];
        if remaining == 0 {
            continue;
        }
        for (ki, e) in inst.rankings[rho].entries.iter().enumerate() {
            let idx = inst.idx(e.node, e.model);
            if !x.deployed(idx) {
                continue;
            }
            let q = residual[idx].min(remaining);
            if q > 0 {
                loads[rho][ki] = q;
                residual[idx] -= q;
                total_load[idx] += q;
                remaining -= q;
            }
            if remaining == 0 {
                break;
            }
        }
        if remaining > 0 {
            return Err(ServingError::Unserved {
                rho,
                demand: r[rho],
                capacity: (r[rho] - remaining) as f64,
            });
        }
    }

    let caps = derive_capacities(inst, x, r, &loads, &total_load);
    Ok(SlotSchedule {
        demand: SlotDemand {
            r: r.to_vec(),
            caps,
        },
        loads,
    })
}

fn derive_capacities(
    inst: &Instance,
    x: &Allocation,
    r: &[u64],
    loads: &[Vec<u64>],
    total_load: &[u64],
) -> Vec<Vec<u64>> {
    inst.rankings
        .iter()
        .enumerate()
        .map(|(rho, rk)| {
            rk.entries
                .iter()
                .enumerate()
                .map(|(ki, e)| {
                    let idx = inst.idx(e.node, e.model);
                    let cap = inst.capacity(e.node, e.model);
                    if x.deployed(idx) {
                        let others = total_load[idx] - loads[rho][ki];
                        cap.saturating_sub(others).min(r[rho])
                    } else {
                        cap.min(r[rho])
                    }
                })
                .collect()
        })
        .collect()
}

/// The maximal adversarial capacities: `l = min(L, r)` for every entry.
pub fn max_capacities(inst: &Instance, r: &[u64]) -> SlotDemand {
    let caps = inst
        .rankings
        .iter()
        .enumerate()
        .map(|(rho, rk)| {
            rk.entries
                .iter()
                .map(|e| inst.capacity(e.node, e.model).min(r[rho]))
                .collect()
        })
        .collect();
    SlotDemand {
        r: r.to_vec(),
        caps,
    }
}

/// Fractional analogue of [`schedule_slot`]: each entry can serve up to
/// `y * (residual pool)` requests. Derived capacities are floored to stay
/// integral.
pub fn schedule_slot_fractional(inst: &Instance, y: &Allocation, r: &[u64]) -> SlotDemand {
    let mut pool: Vec<f64> = (0..inst.n_nodes * inst.n_models)
        .map(|idx| inst.capacity(idx / inst.n_models, idx % inst.n_models) as f64)
        .collect();
    let mut own: Vec<Vec<f64>> = inst
        .rankings
        .iter()
        .map(|rk| vec![0.0; rk.k_max()])
        .collect();
    let mut used: Vec<f64> = vec![0.0; pool.len()];
    for rho in 0..inst.types.len() {
        let mut remaining = r[rho] as f64;
        if remaining == 0.0 {
            continue;
        }
        for (ki, e) in inst.rankings[rho].entries.iter().enumerate() {
            let idx = inst.idx(e.node, e.model);
            let usable = (y.get(idx) * pool[idx]).min(remaining);
            if usable > 0.0 {
                own[rho][ki] = usable;
                pool[idx] -= usable;
                used[idx] += usable;
                remaining -= usable;
            }
            if remaining <= 0.0 {
                break;
            }
        }
    }
    let caps = inst
        .rankings
        .iter()
        .enumerate()
        .map(|(rho, rk)| {
            rk.entries
                .iter()
                .enumerate()
                .map(|(ki, e)| {
                    let idx = inst.idx(e.node, e.model);
                    let cap = inst.capacity(e.node, e.model) as f64;
                    let others = used[idx] - own[rho][ki];
                    ((cap - others).max(0.0).min(r[rho] as f64)).floor() as u64
                })
                .collect()
        })
        .collect();
    SlotDemand {
        r: r.to_vec(),
        caps,
    }
}

fn aggregate_cost_with(
    inst: &Instance,
    demand: &SlotDemand,
    value: impl Fn(usize) -> f64,
) -> Result<f64, ServingError> {
    let mut total = 0.0;
    for rho in 0..inst.types.len() {
        let r = demand.r[rho] as f64;
        if r == 0.0 {
            continue;
        }
        let mut cum = 0.0;
        for (ki, e) in inst.rankings[rho].entries.iter().enumerate() {
            let z = value(inst.idx(e.node, e.model)) * demand.caps[rho][ki] as f64;
            if cum < r {
                total += e.cost * z.min(r - cum);
            }
            cum += z;
        }
        if cum < r - 1e-9 {
            return Err(ServingError::Unserved {
                rho,
                demand: demand.r[rho],
                capacity: cum,
            });
        }
    }
    Ok(total)
}

/// Aggregate serving cost of a slot under the given (possibly fractional)
/// allocation: requests of each type fill the ranking cheapest-first, each
/// entry contributing up to its effective capacity `y * l`.
pub fn aggregate_cost(
    inst: &Instance,
    demand: &SlotDemand,
    alloc: &Allocation,
) -> Result<f64, ServingError> {
    aggregate_cost_with(inst, demand, |idx| alloc.get(idx))
}

/// Allocation gain: cost reduction relative to serving everything on the
/// minimal (repository-only) allocation.
pub fn gain(inst: &Instance, demand: &SlotDemand, alloc: &Allocation) -> Result<f64, ServingError> {
    let base = aggregate_cost_with(inst, demand, |idx| if inst.omega[idx] { 1.0 } else { 0.0 })?;
    let cost = aggregate_cost(inst, demand, alloc)?;
    Ok(base - cost)
}

/// The telescoped gain expression: per rank, the cost saving to the next
/// rank times the additional requests served relative to the minimal
/// allocation. Agrees exactly with [`gain`].
pub fn gain_compact(
    inst: &Instance,
    demand: &SlotDemand,
    alloc: &Allocation,
) -> Result<f64, ServingError> {
    let mut total = 0.0;
    for rho in 0..inst.types.len() {
        let r = demand.r[rho] as f64;
        let entries = &inst.rankings[rho].entries;
        let k_max = entries.len();
        let mut cum = 0.0;
        let mut cum_omega = 0.0;
        for ki in 0..k_max {
            let e = &entries[ki];
            let idx = inst.idx(e.node, e.model);
            let l = demand.caps[rho][ki] as f64;
            cum += alloc.get(idx) * l;
            if inst.omega[idx] {
                cum_omega += l;
            }
            if ki + 1 < k_max {
                let saving = entries[ki + 1].cost - e.cost;
                total += saving * (cum.min(r) - cum_omega.min(r));
            }
        }
        if r > 0.0 && cum < r - 1e-9 {
            return Err(ServingError::Unserved {
                rho,
                demand: demand.r[rho],
                capacity: cum,
            });
        }
    }
    Ok(total)
}

/// Multiplicative lower bound on the gain. Per rank prefix, the expected
/// covered fraction is replaced by `1 - prod(1 - z_k / r)`; ranks already
/// covered by repository capacity are excluded. Sandwiches the gain:
/// `bound <= gain <= bound / (1 - 1/e)`.
pub fn bounding_function(inst: &Instance, demand: &SlotDemand, alloc: &Allocation) -> f64 {
    let mut total = 0.0;
    for rho in 0..inst.types.len() {
        let r_int = demand.r[rho];
        if r_int == 0 {
            continue;
        }
        let r = r_int as f64;
        let entries = &inst.rankings[rho].entries;
        let k_max = entries.len();
        let mut prod = 1.0;
        let mut cum_omega: u64 = 0;
        for ki in 0..k_max {
            let e = &entries[ki];
            let idx = inst.idx(e.node, e.model);
            let l = demand.caps[rho][ki];
            let z = alloc.get(idx) * l as f64;
            prod *= (1.0 - z / r).max(0.0);
            if inst.omega[idx] {
                cum_omega += l;
            }
            if ki + 1 < k_max && cum_omega == 0 {
                let saving = entries[ki + 1].cost - e.cost;
                total += saving * r * (1.0 - prod);
            }
        }
    }
    total
}

/// Per-request statistics of a scheduled slot, for metrics.
#[derive(Debug, Clone, Copy, Default)]
pub struct ServedStats {
    pub requests: u64,
    pub latency_sum_ms: f64,
    pub inaccuracy_sum: f64,
}

impl ServedStats {
    pub fn mean_latency_ms(&self) -> f64 {
        if self.requests == 0 {
            0.0
        } else {
            self.latency_sum_ms / self.requests as f64
        }
    }

    pub fn mean_inaccuracy(&self) -> f64 {
        if self.requests == 0 {
            0.0
        } else {
            self.inaccuracy_sum / self.requests as f64
        }
    }
}

/// Aggregates realized latency (network prefix + inference delay) and
/// inaccuracy (0-100 scale) over all served requests of a slot.
pub fn served_stats(inst: &Instance, schedule: &SlotSchedule) -> ServedStats {
    let mut stats = ServedStats::default();
    for (rho, loads) in schedule.loads.iter().enumerate() {
        let ty = &inst.types[rho];
        for (ki, &q) in loads.iter().enumerate() {
            if q == 0 {
                continue;
            }
            let e = &inst.rankings[rho].entries[ki];
            let net = ty.path.prefix_latency(e.pos).unwrap();
            stats.requests += q;
            stats.latency_sum_ms += q as f64 * (net + inst.delay(e.node, e.model));
            stats.inaccuracy_sum += q as f64 * 100.0 * (1.0 - inst.accuracy_of(e.model));
        }
    }
    stats
}

/// For every deployed (node, model) pair and request type, how many deployed
/// strictly cheaper alternatives sit upstream on the path. Returns the
/// maximum over all pairs; the information a node needs to decide whether to
/// forward a request.
pub fn cheaper_upstream_max(inst: &Instance, x: &Allocation) -> usize {
    let mut worst = 0;
    for rk in &inst.rankings {
        for e in &rk.entries {
            if !x.deployed(inst.idx(e.node, e.model)) {
                continue;
            }
            let count = rk
                .entries
                .iter()
                .filter(|o| {
                    o.pos > e.pos && o.cost < e.cost && x.deployed(inst.idx(o.node, o.model))
                })
                .count();
            worst = worst.max(count);
        }
    }
    worst
}
