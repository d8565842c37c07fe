//! Subgradient of the allocation gain, computed either centrally or by
//! replaying the upstream/downstream control-message protocol.
//!
//! For each request type the *worst needed* rank `K*` is the smallest rank
//! whose cumulative effective capacity `sum y l` covers the batch. Every
//! cheaper entry contributes `l * (gamma_{K*} - cost)` to its (node, model)
//! component; everything at or beyond `K*` contributes nothing.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::instance::{Allocation, Instance};
use crate::serving::{ServingError, SlotDemand};

/// Subgradient vector plus the per-type worst-needed ranks (1-based; `None`
/// for types with an empty batch).
#[derive(Debug, Clone)]
pub struct Subgradient {
    pub g: Vec<f64>,
    pub kstar: Vec<Option<usize>>,
}

/// Traffic counters of the message-based computation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MessageStats {
    /// Hops travelled by upstream accumulation messages.
    pub upstream_hops: u64,
    /// Hops travelled by downstream broadcast messages.
    pub downstream_hops: u64,
    /// Control messages generated (one per type with a non-empty batch).
    pub control_messages: u64,
    /// Largest pending-entry payload observed on any message.
    pub max_payload: usize,
    /// Total (capacity, cost) entries ever appended to messages.
    pub payload_entries: u64,
}

/// Central evaluation over the cost rankings.
pub fn subgradient(
    inst: &Instance,
    demand: &SlotDemand,
    y: &Allocation,
) -> Result<Subgradient, ServingError> {
    let mut g = vec![0.0; inst.n_nodes * inst.n_models];
    let mut kstar = vec![None; inst.types.len()];
    for rho in 0..inst.types.len() {
        let r = demand.r[rho];
        if r == 0 {
            continue;
        }
        let entries = &inst.rankings[rho].entries;
        let r_f = r as f64;
        let mut cum = 0.0;
        let mut found = None;
        for (ki, e) in entries.iter().enumerate() {
            cum += y.get(inst.idx(e.node, e.model)) * demand.caps[rho][ki] as f64;
            if cum >= r_f {
                found = Some(ki + 1);
                break;
            }
        }
        let k_star = found.ok_or(ServingError::Unserved {
            rho,
            demand: r,
            capacity: cum,
        })?;
        kstar[rho] = Some(k_star);
        let gamma_star = entries[k_star - 1].cost;
        for (ki, e) in entries.iter().enumerate().take(k_star - 1) {
            let l = demand.caps[rho][ki] as f64;
            g[inst.idx(e.node, e.model)] += l * (gamma_star - e.cost);
        }
    }
    Ok(Subgradient { g, kstar })
}

/// Replays the distributed protocol and checks nothing was lost in
/// translation: the result must equal [`subgradient`] exactly.
///
/// Per type with a non-empty batch, a message carrying the batch size and a
/// cumulative counter travels upstream. Each node appends its local
/// (capacity, cost) entries; entries are *applied* to the counter strictly
/// in ascending rank order, so an entry whose cheaper predecessors live
/// further upstream stays pending in the payload until those are applied.
/// The message stops at the worst needed rank; its cost is broadcast
/// downstream and every cheaper entry's component is accumulated locally.
pub fn subgradient_via_messages(
    inst: &Instance,
    demand: &SlotDemand,
    y: &Allocation,
) -> Result<(Subgradient, MessageStats), ServingError> {
    let mut g = vec![0.0; inst.n_nodes * inst.n_models];
    let mut kstar = vec![None; inst.types.len()];
    let mut stats = MessageStats::default();

    for rho in 0..inst.types.len() {
        let r = demand.r[rho];
        if r == 0 {
            continue;
        }
        stats.control_messages += 1;
        let entries = &inst.rankings[rho].entries;
        let path = inst.types[rho].path.nodes();
        let r_f = r as f64;

        // ranks hosted at each path position (1-based rank = entry index + 1)
        let mut ranks_at_pos: Vec<Vec<usize>> = vec![Vec::new(); path.len() + 1];
        for (ki, e) in entries.iter().enumerate() {
            ranks_at_pos[e.pos].push(ki + 1);
        }

        let mut pending: BinaryHeap<Reverse<usize>> = BinaryHeap::new();
        let mut next_rank = 1usize;
        let mut counter = 0.0;
        let mut found: Option<(usize, usize)> = None; // (K*, position reached)

        'walk: for pos in 1..=path.len() {
            if pos > 1 {
                stats.upstream_hops += 1;
            }
            for &k in &ranks_at_pos[pos] {
                pending.push(Reverse(k));
                stats.payload_entries += 1;
            }
            stats.max_payload = stats.max_payload.max(pending.len());
            while pending.peek() == Some(&Reverse(next_rank)) {
                pending.pop();
                let e = &entries[next_rank - 1];
                counter +=
                    y.get(inst.idx(e.node, e.model)) * demand.caps[rho][next_rank - 1] as f64;
                if counter >= r_f {
                    found = Some((next_rank, pos));
                    break 'walk;
                }
                next_rank += 1;
            }
        }

        let (k_star, reached) = found.ok_or(ServingError::Unserved {
            rho,
            demand: r,
            capacity: counter,
        })?;
        kstar[rho] = Some(k_star);
        stats.downstream_hops += (reached - 1) as u64;

        // downstream broadcast of gamma_{K*}: each node sums its own terms
        let gamma_star = entries[k_star - 1].cost;
        for pos in 1..=reached {
            for &k in &ranks_at_pos[pos] {
                if k < k_star {
                    let e = &entries[k - 1];
                    let l = demand.caps[rho][k - 1] as f64;
                    g[inst.idx(e.node, e.model)] += l * (gamma_star - e.cost);
                }
            }
        }
    }
    Ok((Subgradient { g, kstar }, stats))
}
