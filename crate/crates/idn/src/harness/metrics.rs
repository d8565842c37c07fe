//! Per-slot metrics and their CSV serialization.

use std::io::Write;
use std::path::Path;

use crate::instance::{Allocation, Instance};

/// One row of `metrics.csv`.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub t: u64,
    /// Slot gain under the slot's demand.
    pub gain: f64,
    /// Running normalized time-averaged gain.
    pub ntag: f64,
    /// Running time-averaged model updates (MB fetched per slot).
    pub mu: f64,
    /// MB fetched at the boundary entering this slot.
    pub fetched_mb: f64,
    pub avg_latency_ms: f64,
    pub avg_inaccuracy: f64,
    /// Allocated MB per tier, aligned with [`tier_labels`].
    pub tier_mass_mb: Vec<f64>,
}

/// Sorted distinct tiers of an instance (column order of the CSV).
pub fn tier_labels(inst: &Instance) -> Vec<u32> {
    let mut tiers: Vec<u32> = inst.topology.nodes.iter().map(|n| n.tier).collect();
    tiers.sort_unstable();
    tiers.dedup();
    tiers
}

/// Allocated megabytes per tier.
pub fn tier_mass(inst: &Instance, x: &Allocation, tiers: &[u32]) -> Vec<f64> {
    tiers
        .iter()
        .map(|&tier| {
            inst.topology
                .nodes
                .iter()
                .filter(|n| n.tier == tier)
                .map(|n| {
                    (0..inst.n_models)
                        .map(|m| x.get(inst.idx(n.id, m)) * inst.size(n.id, m))
                        .sum::<f64>()
                })
                .sum()
        })
        .collect()
}

/// Normalized time-averaged gain: `sum_t gain_t / (T * |r_t|_1)`; empty
/// slots contribute zero.
pub fn ntag(gains: &[f64], batch_sizes: &[u64]) -> f64 {
    if gains.is_empty() {
        return 0.0;
    }
    let total: f64 = gains
        .iter()
        .zip(batch_sizes)
        .map(|(&g, &n)| if n == 0 { 0.0 } else { g / n as f64 })
        .sum();
    total / gains.len() as f64
}

/// Time-averaged model updates: MB newly fetched per slot, averaged over the
/// horizon.
pub fn model_updates(inst: &Instance, allocations: &[Allocation]) -> f64 {
    if allocations.len() < 2 {
        return 0.0;
    }
    let fetched: f64 = allocations
        .windows(2)
        .map(|w| fetched_mb(inst, &w[0], &w[1]))
        .sum();
    fetched / allocations.len() as f64
}

/// MB downloaded when moving from `prev` to `next`.
pub fn fetched_mb(inst: &Instance, prev: &Allocation, next: &Allocation) -> f64 {
    let mut total = 0.0;
    for v in 0..inst.n_nodes {
        for m in 0..inst.n_models {
            let idx = inst.idx(v, m);
            let delta = next.get(idx) - prev.get(idx);
            if delta > 0.0 {
                total += delta * inst.size(v, m);
            }
        }
    }
    total
}

pub fn write_csv(path: &Path, records: &[MetricsRecord], tiers: &[u32]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(
        out,
        "t,gain,ntag,mu,fetched_mb,avg_latency_ms,avg_inaccuracy"
    )?;
    for tier in tiers {
        write!(out, ",alloc_mb_tier{tier}")?;
    }
    writeln!(out)?;
    for r in records {
        write!(
            out,
            "{},{},{},{},{},{},{}",
            r.t, r.gain, r.ntag, r.mu, r.fetched_mb, r.avg_latency_ms, r.avg_inaccuracy
        )?;
        for mass in &r.tier_mass_mb {
            write!(out, ",{mass}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
