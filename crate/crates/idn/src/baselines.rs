//! Greedy comparison policies: the hindsight static cost-benefit greedy and
//! its online load-aware counterpart.

use rayon::prelude::*;
use thiserror::Error;

use crate::infida::CapacityMode;
use crate::instance::{Allocation, Instance};
use crate::serving::{
    gain_compact, max_capacities, schedule_slot, schedule_slot_fractional, ServingError,
    SlotDemand, SlotSchedule,
};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error(transparent)]
    Serving(#[from] ServingError),
    #[error("trace is empty")]
    EmptyTrace,
}

fn demand_for(
    inst: &Instance,
    x: &Allocation,
    r: &[u64],
    mode: CapacityMode,
) -> Result<SlotDemand, ServingError> {
    Ok(match mode {
        CapacityMode::Scheduler => schedule_slot(inst, x, r)?.demand,
        CapacityMode::Fractional => schedule_slot_fractional(inst, x, r),
        CapacityMode::Max => max_capacities(inst, r),
    })
}

/// Time-averaged gain of an allocation over the sampled slots, with
/// capacities pinned by the trace or re-derived per slot.
fn time_averaged_gain(
    inst: &Instance,
    x: &Allocation,
    batches: &[Vec<u64>],
    fixed: Option<&[SlotDemand]>,
    mode: CapacityMode,
    stride: usize,
) -> Result<f64, ServingError> {
    let stride = stride.max(1);
    let mut total = 0.0;
    let mut slots = 0usize;
    for t in (0..batches.len()).step_by(stride) {
        let owned;
        let demand = match fixed {
            Some(f) => &f[t],
            None => {
                owned = demand_for(inst, x, &batches[t], mode)?;
                &owned
            }
        };
        total += gain_compact(inst, demand, x)?;
        slots += 1;
    }
    Ok(total / slots.max(1) as f64)
}

/// True when the greedy's own additions absorb every request of every
/// sampled slot, i.e. nothing would travel on to a repository.
fn additions_cover_demand(
    inst: &Instance,
    x: &Allocation,
    batches: &[Vec<u64>],
    fixed: Option<&[SlotDemand]>,
    mode: CapacityMode,
    stride: usize,
) -> Result<bool, ServingError> {
    for t in (0..batches.len()).step_by(stride.max(1)) {
        let owned;
        let demand = match fixed {
            Some(f) => &f[t],
            None => {
                owned = demand_for(inst, x, &batches[t], mode)?;
                &owned
            }
        };
        for rho in 0..inst.types.len() {
            let r = demand.r[rho];
            if r == 0 {
                continue;
            }
            let covered: u64 = inst.rankings[rho]
                .entries
                .iter()
                .enumerate()
                .filter(|(_, e)| {
                    let idx = inst.idx(e.node, e.model);
                    x.deployed(idx) && !inst.pinned[idx]
                })
                .map(|(ki, _)| demand.caps[rho][ki])
                .sum();
            if covered < r {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Static cost-benefit greedy over the full trace (hindsight). Starting from
/// the pinned allocation, repeatedly adds the feasible (node, model) with
/// the highest marginal time-averaged gain per MB, stopping as soon as its
/// own additions can absorb every request or no addition has positive
/// marginal gain. Lazy re-evaluation exploits the diminishing returns of the
/// objective; `eval_stride` subsamples the trace during candidate scoring
/// (1 = exact).
pub fn static_greedy(
    inst: &Instance,
    batches: &[Vec<u64>],
    fixed: Option<&[SlotDemand]>,
    mode: CapacityMode,
    eval_stride: usize,
) -> Result<Allocation, BaselineError> {
    if batches.is_empty() {
        return Err(BaselineError::EmptyTrace);
    }
    let mut x = inst.pinned_allocation();
    let mut residual: Vec<f64> = (0..inst.n_nodes)
        .map(|v| {
            inst.budgets[v]
                - (0..inst.n_models)
                    .filter(|&m| inst.pinned[inst.idx(v, m)])
                    .map(|m| inst.size(v, m))
                    .sum::<f64>()
        })
        .collect();
    let mut base = time_averaged_gain(inst, &x, batches, fixed, mode, eval_stride)?;

    // (density, candidate, round evaluated) max-heap via sorted vec
    let candidates: Vec<usize> = (0..inst.n_nodes * inst.n_models)
        .filter(|&idx| !inst.pinned[idx])
        .collect();
    let score = |idx: usize, x: &Allocation, base: f64| -> Result<f64, ServingError> {
        let mut cand = x.clone();
        cand.set(idx, 1.0);
        let g = time_averaged_gain(inst, &cand, batches, fixed, mode, eval_stride)?;
        Ok((g - base) / inst.size(idx / inst.n_models, idx % inst.n_models))
    };

    let mut heap: Vec<(f64, usize, u64)> = candidates
        .par_iter()
        .map(|&idx| score(idx, &x, base).map(|d| (d, idx, 0u64)))
        .collect::<Result<_, _>>()?;
    let mut round = 0u64;
    loop {
        heap.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(b.1.cmp(&a.1)));
        let Some(&(density, idx, evaluated)) = heap.last() else {
            break;
        };
        if density <= 1e-12 {
            break;
        }
        let (v, m) = (idx / inst.n_models, idx % inst.n_models);
        if inst.size(v, m) > residual[v] + 1e-9 {
            heap.pop();
            continue;
        }
        if evaluated == round {
            // fresh score and still on top: take it
            x.set(idx, 1.0);
            residual[v] -= inst.size(v, m);
            base += density * inst.size(v, m);
            heap.pop();
            round += 1;
            if additions_cover_demand(inst, &x, batches, fixed, mode, eval_stride)? {
                break;
            }
        } else {
            let d = score(idx, &x, base)?;
            let last = heap.len() - 1;
            heap[last] = (d, idx, round);
        }
    }
    Ok(x)
}

/// Per-node counters of the online load-aware greedy: one entry per
/// (request type, model) pair that would beat the repository cost at this
/// node.
struct OlagEntry {
    rho: usize,
    model: usize,
    /// Cost reduction of serving here instead of at the repository.
    q: f64,
    /// Requests forwarded upstream that this model could have improved.
    phi: f64,
}

/// Online load-aware greedy. During a slot, counters track how many requests
/// passed each node unserved although a local model could have beaten the
/// repository cost; at slot end every node greedily re-packs its budget by
/// importance weight.
pub struct Olag {
    pub x: Allocation,
    /// Counter decay applied after each re-pack (0 = reset every slot).
    pub decay: f64,
    entries: Vec<Vec<OlagEntry>>,
}

impl Olag {
    pub fn new(inst: &Instance, decay: f64) -> Self {
        let mut entries: Vec<Vec<OlagEntry>> = (0..inst.n_nodes).map(|_| Vec::new()).collect();
        for (rho, rk) in inst.rankings.iter().enumerate() {
            let terminal = inst.types[rho].path.terminal();
            let repo_cost = rk
                .entries
                .iter()
                .filter(|e| e.node == terminal && inst.omega[inst.idx(e.node, e.model)])
                .map(|e| e.cost)
                .fold(f64::INFINITY, f64::min);
            for e in &rk.entries {
                let q = repo_cost - e.cost;
                if q > 0.0 && !inst.pinned[inst.idx(e.node, e.model)] {
                    entries[e.node].push(OlagEntry {
                        rho,
                        model: e.model,
                        q,
                        phi: 0.0,
                    });
                }
            }
        }
        Olag {
            x: inst.pinned_allocation(),
            decay,
            entries,
        }
    }

    /// Accumulates forwarding counters from a scheduled slot: a request
    /// counts for node `v` when it traveled past `v` unserved.
    pub fn observe(&mut self, inst: &Instance, schedule: &SlotSchedule) {
        for rho in 0..inst.types.len() {
            let r = schedule.demand.r[rho];
            if r == 0 {
                continue;
            }
            let path = inst.types[rho].path.nodes();
            // served at or below each path position
            let mut served_below = vec![0u64; path.len() + 1];
            for (ki, e) in inst.rankings[rho].entries.iter().enumerate() {
                let q = schedule.loads[rho][ki];
                if q > 0 {
                    for pos in e.pos..=path.len() {
                        served_below[pos] += q;
                    }
                }
            }
            for (pos0, &node) in path.iter().enumerate() {
                let forwarded = r - served_below[pos0 + 1];
                if forwarded == 0 {
                    continue;
                }
                for entry in &mut self.entries[node] {
                    if entry.rho == rho {
                        entry.phi += forwarded as f64;
                    }
                }
            }
        }
    }

    /// Re-packs every node: repeatedly selects the feasible model with the
    /// highest importance weight `(1/s)(1/R) sum_rho q min(phi, L)`, then
    /// discounts the counters of that model and of every cheaper-gain model
    /// for the same types.
    pub fn end_slot(&mut self, inst: &Instance) -> Allocation {
        let n_types = inst.types.len() as f64;
        let mut x = inst.pinned_allocation();
        for v in 0..inst.n_nodes {
            let mut residual = inst.budgets[v]
                - (0..inst.n_models)
                    .filter(|&m| inst.pinned[inst.idx(v, m)])
                    .map(|m| inst.size(v, m))
                    .sum::<f64>();
            let mut phi: Vec<f64> = self.entries[v].iter().map(|e| e.phi).collect();
            let mut selected = vec![false; inst.n_models];
            loop {
                // importance per candidate model
                let mut best: Option<(f64, usize)> = None;
                for m in 0..inst.n_models {
                    if selected[m] || inst.pinned[inst.idx(v, m)] {
                        continue;
                    }
                    let s = inst.size(v, m);
                    if s > residual + 1e-9 {
                        continue;
                    }
                    let cap = inst.capacity(v, m) as f64;
                    let w: f64 = self.entries[v]
                        .iter()
                        .zip(&phi)
                        .filter(|(e, _)| e.model == m)
                        .map(|(e, &p)| e.q * p.min(cap))
                        .sum::<f64>()
                        / (s * n_types);
                    if w > 0.0 && best.is_none_or(|(bw, bm)| w > bw || (w == bw && m < bm)) {
                        best = Some((w, m));
                    }
                }
                let Some((_, m_star)) = best else { break };
                selected[m_star] = true;
                residual -= inst.size(v, m_star);
                x.set(inst.idx(v, m_star), 1.0);
                // discount counters: the served amount leaves phi of m_star
                // and of every lower-gain model for the same type
                let cap = inst.capacity(v, m_star) as f64;
                let picks: Vec<(usize, f64, f64)> = self.entries[v]
                    .iter()
                    .zip(&phi)
                    .enumerate()
                    .filter(|(_, (e, _))| e.model == m_star)
                    .map(|(i, (e, &p))| (i, e.q, p.min(cap)))
                    .collect();
                for (i_star, q_star, amount) in picks {
                    let rho = self.entries[v][i_star].rho;
                    for (i, e) in self.entries[v].iter().enumerate() {
                        if e.rho == rho && (i == i_star || e.q < q_star) {
                            phi[i] = (phi[i] - amount).max(0.0);
                        }
                    }
                }
            }
            for (entry, &p) in self.entries[v].iter_mut().zip(&phi) {
                entry.phi = p * self.decay;
            }
        }
        self.x = x.clone();
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::instances::{chain_topology, two_cost_example};
    use crate::instance::RawTables;

    #[test]
    fn greedy_zero_budget_returns_pinned() {
        let (inst, _) = two_cost_example();
        // budget 1.0 at node 0 still allows one model; shrink demand to zero
        let batches = vec![vec![0u64]];
        let x = static_greedy(&inst, &batches, None, CapacityMode::Scheduler, 1).unwrap();
        assert_eq!(x, inst.pinned_allocation());
    }

    #[test]
    fn greedy_deploys_the_edge_model() {
        let (inst, _) = two_cost_example();
        let batches = vec![vec![10u64]];
        let x = static_greedy(&inst, &batches, None, CapacityMode::Scheduler, 1).unwrap();
        assert_eq!(x.get(inst.idx(0, 0)), 1.0);
    }

    /// Density rule: gain 320 at size 100 loses to gain 50 at size 10.
    #[test]
    fn greedy_prefers_gain_density() {
        let topology = chain_topology(2, &[Some(10.0), None], &[0.0]);
        let big = 1e6;
        // model 0: large saving, huge size; model 1: small saving, tiny size
        let inst = Instance::from_tables(RawTables {
            topology,
            sizes: vec![100.0, 10.0, 100.0, 10.0, 1.0, 1.0],
            delays: vec![20.0, 70.0, big, big, big, 100.0],
            caps: vec![10, 10, 0, 0, 0, 100],
            accuracy: vec![0.9; 3],
            task_of: vec![0, 0, 0],
            tasks: 1,
            omega: vec![false, false, false, false, false, true],
            alpha: 0.0,
            slot_secs: 60.0,
            origins: vec![(0, 0)],
            explicit_paths: vec![],
        })
        .unwrap();
        // budget 10 fits only the small model; density 5.0/MB beats 3.2/MB
        let batches = vec![vec![4u64]];
        let x = static_greedy(&inst, &batches, None, CapacityMode::Scheduler, 1).unwrap();
        assert_eq!(x.get(inst.idx(0, 1)), 1.0);
        assert_eq!(x.get(inst.idx(0, 0)), 0.0);
    }

    #[test]
    fn olag_hand_example() {
        // one node, one type with phi = 10, models (q=80, L=4, s=1) and
        // (q=30, L=10, s=1), budget 2: picks q=80 first, then q=30
        let topology = chain_topology(2, &[Some(2.0), None], &[0.0]);
        let big = 1e6;
        let inst = Instance::from_tables(RawTables {
            topology,
            // repo cost 100; node-0 models cost 20 (q=80) and 70 (q=30)
            sizes: vec![1.0; 6],
            delays: vec![20.0, 70.0, big, big, big, 100.0],
            caps: vec![4, 10, 0, 0, 0, 100],
            accuracy: vec![0.9; 3],
            task_of: vec![0, 0, 0],
            tasks: 1,
            omega: vec![false, false, false, false, false, true],
            alpha: 0.0,
            slot_secs: 60.0,
            origins: vec![(0, 0)],
            explicit_paths: vec![],
        })
        .unwrap();
        let mut olag = Olag::new(&inst, 0.0);
        // ten requests forwarded past node 0, none served locally
        let x0 = inst.pinned_allocation();
        let sched = schedule_slot(&inst, &x0, &[10]).unwrap();
        olag.observe(&inst, &sched);
        let x = olag.end_slot(&inst);
        assert_eq!(x.get(inst.idx(0, 0)), 1.0, "q=80 model selected first");
        assert_eq!(x.get(inst.idx(0, 1)), 1.0, "q=30 model selected second");
    }

    #[test]
    fn olag_all_zero_counters_allocates_nothing() {
        let (inst, _) = two_cost_example();
        let mut olag = Olag::new(&inst, 0.0);
        let x = olag.end_slot(&inst);
        assert_eq!(x, inst.pinned_allocation());
    }

    #[test]
    fn olag_respects_budget() {
        let (inst, x0) = two_cost_example();
        let mut olag = Olag::new(&inst, 0.5);
        let sched = schedule_slot(&inst, &x0, &[10]).unwrap();
        for _ in 0..5 {
            olag.observe(&inst, &sched);
            let x = olag.end_slot(&inst);
            inst.validate_integral(&x, 0.0).unwrap();
        }
    }
}
