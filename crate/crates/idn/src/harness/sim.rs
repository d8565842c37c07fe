//! The slot loop: sample or replay a batch, serve it on the current
//! allocation, record metrics, let the policy update.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use super::config::{PolicyName, Scenario};
use super::metrics::{self, MetricsRecord};
use crate::baselines::{static_greedy, BaselineError, Olag};
use crate::infida::{
    infida_offline, regret_constants, CapacityMode, Infida, PolicyError, RegretConstants,
};
use crate::instance::{Allocation, Instance};
use crate::serving::{
    cheaper_upstream_max, gain_compact, max_capacities, schedule_slot, schedule_slot_fractional,
    served_stats, ServingError, SlotDemand,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("slot {slot}: {source}")]
    Infeasible { slot: u64, source: ServingError },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("metrics serialization: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub run_id: String,
    pub policy: String,
    pub horizon: u64,
    pub seed: u64,
    pub alpha: f64,
    pub ntag: f64,
    pub mu: f64,
    pub total_requests: u64,
    pub mean_latency_ms: f64,
    pub mean_inaccuracy: f64,
    pub regret: RegretConstants,
    /// The regret-bound curve at the horizon, per slot and per request:
    /// `A sqrt(T) / T` — the average discounted regret cannot exceed it.
    pub regret_bound_per_slot: f64,
    /// Largest number of cheaper deployed upstream alternatives any deployed
    /// model had (partial-information diagnostic).
    pub cheaper_upstream_max: usize,
    pub config: serde_json::Value,
}

pub struct SimOutput {
    pub records: Vec<MetricsRecord>,
    pub summary: Summary,
    pub final_allocation: Allocation,
}

enum PolicyState {
    Infida(Infida),
    Olag(Olag),
    Static(Allocation),
}

/// Runs one scenario end to end; fully deterministic per (config, seed).
pub fn run_simulation(scenario: &Scenario) -> Result<SimOutput, SimError> {
    let inst = &scenario.inst;
    let cfg = &scenario.config;
    let horizon = scenario.batches.len() as u64;
    let seed = cfg.run.seed;

    let mut policy = match cfg.policy.name {
        PolicyName::Infida => PolicyState::Infida(Infida::new(
            inst,
            cfg.policy.infida_config(),
            Some(horizon),
            seed,
        )?),
        PolicyName::Olag => PolicyState::Olag(Olag::new(inst, cfg.policy.olag_decay)),
        PolicyName::Omega => PolicyState::Static(full_nodes_allocation(inst)),
        PolicyName::Sg => PolicyState::Static(static_greedy(
            inst,
            &scenario.batches,
            scenario.fixed.as_deref(),
            cfg.policy.capacity_mode,
            cfg.policy.resolved_sg_stride(scenario.batches.len()),
        )?),
        PolicyName::InfidaOffline => {
            let outcome = infida_offline(
                inst,
                &scenario.batches,
                scenario.fixed.as_deref(),
                cfg.policy.offline_iterations,
                &cfg.policy.infida_config(),
                seed,
            )?;
            PolicyState::Static(outcome.x_bar)
        }
    };

    let tiers = metrics::tier_labels(inst);
    let mut records = Vec::with_capacity(horizon as usize);
    let mut cum_norm_gain = 0.0;
    let mut cum_fetched = 0.0;
    let mut pending_fetch = 0.0;
    let mut total_requests = 0u64;
    let mut latency_sum = 0.0;
    let mut inaccuracy_sum = 0.0;
    let mut upstream_max = 0usize;

    for (t0, r) in scenario.batches.iter().enumerate() {
        let slot = (t0 + 1) as u64;
        let x = current_allocation(&policy).clone();

        let schedule =
            schedule_slot(inst, &x, r).map_err(|source| SimError::Infeasible { slot, source })?;
        let demand: SlotDemand = match &scenario.fixed {
            Some(fixed) => fixed[t0].clone(),
            None => match cfg.policy.capacity_mode {
                CapacityMode::Scheduler => schedule.demand.clone(),
                CapacityMode::Fractional => match &policy {
                    PolicyState::Infida(p) => schedule_slot_fractional(inst, &p.y, r),
                    _ => schedule_slot_fractional(inst, &x, r),
                },
                CapacityMode::Max => max_capacities(inst, r),
            },
        };

        let gain = gain_compact(inst, &demand, &x)
            .map_err(|source| SimError::Infeasible { slot, source })?;
        let batch_size: u64 = r.iter().sum();
        total_requests += batch_size;
        if batch_size > 0 {
            cum_norm_gain += gain / batch_size as f64;
        }
        let stats = served_stats(inst, &schedule);
        latency_sum += stats.latency_sum_ms;
        inaccuracy_sum += stats.inaccuracy_sum;
        cum_fetched += pending_fetch;
        if slot == 1 || (slot - 1).is_multiple_of(100) {
            upstream_max = upstream_max.max(cheaper_upstream_max(inst, &x));
        }

        records.push(MetricsRecord {
            t: slot,
            gain,
            ntag: cum_norm_gain / slot as f64,
            mu: cum_fetched / slot as f64,
            fetched_mb: pending_fetch,
            avg_latency_ms: stats.mean_latency_ms(),
            avg_inaccuracy: stats.mean_inaccuracy(),
            tier_mass_mb: metrics::tier_mass(inst, &x, &tiers),
        });

        // policy update at slot end
        match &mut policy {
            PolicyState::Infida(p) => {
                p.step(inst, &demand, slot)?;
            }
            PolicyState::Olag(o) => {
                o.observe(inst, &schedule);
                o.end_slot(inst);
            }
            PolicyState::Static(_) => {}
        }
        pending_fetch = metrics::fetched_mb(inst, &x, current_allocation(&policy));
    }

    let final_allocation = current_allocation(&policy).clone();
    upstream_max = upstream_max.max(cheaper_upstream_max(inst, &final_allocation));
    let config_json = serde_json::to_value(cfg)?;
    let regret = regret_constants(inst, horizon.max(1));
    let summary = Summary {
        run_id: run_id(cfg),
        policy: format!("{:?}", cfg.policy.name).to_lowercase(),
        horizon,
        seed,
        alpha: cfg.run.alpha,
        ntag: records.last().map(|r| r.ntag).unwrap_or(0.0),
        mu: records.last().map(|r| r.mu).unwrap_or(0.0),
        total_requests,
        mean_latency_ms: if total_requests > 0 {
            latency_sum / total_requests as f64
        } else {
            0.0
        },
        mean_inaccuracy: if total_requests > 0 {
            inaccuracy_sum / total_requests as f64
        } else {
            0.0
        },
        regret_bound_per_slot: regret.a_bound / (horizon.max(1) as f64).sqrt(),
        regret,
        cheaper_upstream_max: upstream_max,
        config: config_json,
    };

    if let Some(dir) = &cfg.run.out_dir {
        write_outputs(dir, inst, &records, &tiers, &summary)?;
    }

    Ok(SimOutput {
        records,
        summary,
        final_allocation,
    })
}

fn current_allocation(policy: &PolicyState) -> &Allocation {
    match policy {
        PolicyState::Infida(p) => &p.x,
        PolicyState::Olag(o) => &o.x,
        PolicyState::Static(x) => x,
    }
}

/// Pinned coordinates only: repositories plus catalog-sized nodes.
fn full_nodes_allocation(inst: &Instance) -> Allocation {
    inst.pinned_allocation()
}

fn run_id(cfg: &super::config::SimulationConfig) -> String {
    let mut hasher = DefaultHasher::new();
    serde_json::to_string(cfg)
        .unwrap_or_default()
        .hash(&mut hasher);
    format!("{:016x}", hasher.finish())
}

fn write_outputs(
    dir: &Path,
    inst: &Instance,
    records: &[MetricsRecord],
    tiers: &[u32],
    summary: &Summary,
) -> Result<(), SimError> {
    std::fs::create_dir_all(dir)?;
    metrics::write_csv(&dir.join("metrics.csv"), records, tiers)?;
    let json = serde_json::to_string_pretty(summary)?;
    std::fs::write(dir.join("summary.json"), json)?;
    let topo = serde_json::to_string_pretty(&inst.topology)?;
    std::fs::write(dir.join("topology.json"), topo)?;
    Ok(())
}
