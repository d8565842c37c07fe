//! The INFIDA online allocation policy and its offline variant.
//!
//! Per slot, every node takes a mirror-ascent step on its fractional state
//! (weighted negative-entropy map), projects back onto the weighted capped
//! simplex, and on refresh slots samples a physical allocation with
//! DepRound. All nodes share one subgradient of the slot gain, computed
//! centrally or through the control-message protocol.

pub mod projection;
pub mod rounding;
pub mod subgradient;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{Allocation, Instance};
use crate::serving::{
    gain_compact, max_capacities, schedule_slot, schedule_slot_fractional, ServingError, SlotDemand,
};
pub use projection::{bregman_project, mirror_step, ProjectionError};
pub use rounding::{depround, depround_strict};
pub use subgradient::{subgradient, subgradient_via_messages, MessageStats, Subgradient};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Serving(#[from] ServingError),
    #[error("node {node}: {source}")]
    Projection {
        node: usize,
        source: ProjectionError,
    },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("learning rate 'auto' needs a known horizon")]
    NoHorizon,
}

/// How the subgradient is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubgradientMode {
    #[default]
    Central,
    Messages,
}

/// How DepRound treats the residual coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RoundingMode {
    /// Budget may be exceeded by at most one model size; marginals exact.
    #[default]
    Slack,
    /// Budget never exceeded; overflowing residuals are replaced by the best
    /// marginal-gain model that fits.
    Strict,
}

/// Where per-slot potential available capacities come from when the trace
/// does not pin them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CapacityMode {
    /// Deterministic scheduler run on the current integral allocation.
    #[default]
    Scheduler,
    /// Fractional water-fill on the current fractional state.
    Fractional,
    /// Maximal adversarial capacities `min(L, r)`.
    Max,
}

/// Physical-allocation refresh schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshSchedule {
    /// Resample every `B` slots (slots B, 2B, ...).
    Fixed(u64),
    /// Period stretches linearly from `init` to `target` over `over_slots`
    /// slots, then stays constant.
    Linear {
        init: u64,
        target: u64,
        over_slots: u64,
    },
}

impl Default for RefreshSchedule {
    fn default() -> Self {
        RefreshSchedule::Fixed(1)
    }
}

impl RefreshSchedule {
    /// Refresh period in effect at `slot` (1-based).
    pub fn period_at(&self, slot: u64) -> u64 {
        match *self {
            RefreshSchedule::Fixed(b) => b.max(1),
            RefreshSchedule::Linear {
                init,
                target,
                over_slots,
            } => {
                if over_slots == 0 || slot >= over_slots {
                    target.max(1)
                } else {
                    let init = init as f64;
                    let target = target as f64;
                    let frac = slot as f64 / over_slots as f64;
                    (init + (target - init) * frac).round().max(1.0) as u64
                }
            }
        }
    }

    pub fn due(&self, slot: u64, last_refresh: u64) -> bool {
        match *self {
            RefreshSchedule::Fixed(b) => slot.is_multiple_of(b.max(1)),
            RefreshSchedule::Linear { .. } => slot - last_refresh >= self.period_at(slot),
        }
    }
}

/// Learning rate selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EtaChoice {
    /// The horizon-optimal rate from the regret analysis.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InfidaConfig {
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
    pub capacity: CapacityMode,
}

fn default_eps_min() -> f64 {
    1e-12
}

impl Default for InfidaConfig {
    fn default() -> Self {
        InfidaConfig {
            eta: EtaChoice::Auto,
            refresh: RefreshSchedule::default(),
            eps_min: default_eps_min(),
            rounding: RoundingMode::default(),
            subgradient: SubgradientMode::default(),
            capacity: CapacityMode::default(),
        }
    }
}

/// Constants of the sublinear regret bound, all computable from the
/// instance: the strong-convexity modulus of the mirror map, the subgradient
/// norm bound, the divergence radius, the bound slope `A` (regret stays
/// below `A sqrt(T)`), and the horizon-optimal learning rate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RegretConstants {
    pub theta: f64,
    pub sigma: f64,
    pub d_max: f64,
    pub a_bound: f64,
    pub eta_star: f64,
}

pub fn regret_constants(inst: &Instance, horizon: u64) -> RegretConstants {
    let mut s_max: f64 = 0.0;
    let mut s_min = f64::INFINITY;
    let mut l_max = 0u64;
    for v in 0..inst.n_nodes {
        for m in 0..inst.n_models {
            let s = inst.size(v, m);
            s_max = s_max.max(s);
            s_min = s_min.min(s);
            l_max = l_max.max(inst.capacity(v, m));
        }
    }
    let theta = 1.0 / (s_max * inst.n_nodes as f64 * inst.n_models as f64);

    // largest gap between the repository cost mass and any entry's cost
    let mut delta_c: f64 = 0.0;
    for (rho, rk) in inst.rankings.iter().enumerate() {
        let terminal = inst.types[rho].path.terminal();
        let repo_sum: f64 = rk
            .entries
            .iter()
            .filter(|e| e.node == terminal && inst.omega[inst.idx(e.node, e.model)])
            .map(|e| e.cost)
            .sum();
        if let Some(first) = rk.entries.first() {
            delta_c = delta_c.max(repo_sum - first.cost);
        }
    }

    let d_max: f64 = (0..inst.n_nodes)
        .map(|v| {
            let ssum = inst.node_size_sum(v);
            let cap = inst.budgets[v].min(ssum);
            if cap <= 0.0 || ssum <= 0.0 {
                0.0
            } else {
                cap * (ssum / cap).ln()
            }
        })
        .sum();

    let sigma = inst.types.len() as f64 * l_max as f64 * delta_c / s_min;
    let psi = 1.0 - (-1.0f64).exp();
    let a_bound = psi * sigma * (2.0 * d_max / theta).sqrt();
    let eta_star = if sigma > 0.0 {
        (2.0 * theta * d_max / horizon.max(1) as f64).sqrt() / sigma
    } else {
        1.0
    };
    RegretConstants {
        theta,
        sigma,
        d_max,
        a_bound,
        eta_star,
    }
}

/// The minimizer of the mirror map over the feasible set: uniform
/// `min(b, |s|_1) / |s|_1` on free coordinates, 1 on pinned ones.
pub fn initial_state(inst: &Instance, eps_min: f64) -> Allocation {
    let mut y = vec![1.0; inst.n_nodes * inst.n_models];
    for v in 0..inst.n_nodes {
        let pinned = inst.node_pinned(v);
        let sizes = inst.node_sizes(v);
        let pinned_mass: f64 = sizes
            .iter()
            .zip(pinned)
            .map(|(&s, &p)| if p { s } else { 0.0 })
            .sum();
        let free_mass: f64 = sizes
            .iter()
            .zip(pinned)
            .map(|(&s, &p)| if p { 0.0 } else { s })
            .sum();
        if free_mass <= 0.0 {
            continue;
        }
        let b_free = (inst.budgets[v] - pinned_mass).max(0.0);
        let c = (b_free.min(free_mass) / free_mass).clamp(eps_min, 1.0);
        for m in 0..inst.n_models {
            if !pinned[m] {
                y[inst.idx(v, m)] = c;
            }
        }
    }
    Allocation::from_values(y)
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z =
        seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-(node, slot) rng so results do not depend on execution
/// order across nodes.
pub fn node_rng(seed: u64, node: usize, slot: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, node as u64, slot))
}

/// Advances a fractional state by one mirror-ascent + projection round.
/// Shared by the online and offline variants.
pub fn ascend(
    inst: &Instance,
    y: &mut Allocation,
    g: &[f64],
    eta: f64,
    eps_min: f64,
) -> Result<(), PolicyError> {
    let n_models = inst.n_models;
    for v in 0..inst.n_nodes {
        let lo = v * n_models;
        let hi = lo + n_models;
        let sizes = inst.node_sizes(v);
        let pinned = inst.node_pinned(v);
        // a node whose budget is exhausted by its pins hosts nothing else;
        // its free coordinates idle at the positivity floor
        let pinned_mass: f64 = sizes
            .iter()
            .zip(pinned)
            .map(|(&s, &p)| if p { s } else { 0.0 })
            .sum();
        if inst.budgets[v] - pinned_mass <= 0.0 {
            for (value, &pin) in y.values_mut()[lo..hi].iter_mut().zip(pinned) {
                if !pin {
                    *value = eps_min;
                }
            }
            continue;
        }
        let h = mirror_step(&y.values()[lo..hi], &g[lo..hi], eta, sizes, pinned, eps_min);
        let mut projected = bregman_project(&h, sizes, inst.budgets[v], pinned)
            .map_err(|source| PolicyError::Projection { node: v, source })?;
        floor_and_rescale(&mut projected, sizes, pinned, eps_min);
        y.values_mut()[lo..hi].copy_from_slice(&projected);
    }
    Ok(())
}

/// Floors free coordinates at `eps_min` (so the next dual map stays finite)
/// and rescales the rest to restore the budget equality; the deviation is
/// bounded by `M * eps_min`.
fn floor_and_rescale(y: &mut [f64], sizes: &[f64], pinned: &[bool], eps_min: f64) {
    let mut target = 0.0;
    let mut floored_mass = 0.0;
    let mut scalable_mass = 0.0;
    for i in 0..y.len() {
        if pinned[i] {
            continue;
        }
        target += sizes[i] * y[i];
        if y[i] < eps_min {
            y[i] = eps_min;
        }
        if y[i] <= eps_min {
            floored_mass += sizes[i] * y[i];
        } else {
            scalable_mass += sizes[i] * y[i];
        }
    }
    if scalable_mass <= 0.0 {
        return;
    }
    let factor = (target - floored_mass) / scalable_mass;
    if factor > 0.0 && factor.is_finite() && (factor - 1.0).abs() > 1e-15 {
        for i in 0..y.len() {
            if !pinned[i] && y[i] > eps_min {
                y[i] = (y[i] * factor).min(1.0);
            }
        }
    }
}

/// Online INFIDA state.
pub struct Infida {
    pub cfg: InfidaConfig,
    pub eta: f64,
    pub y: Allocation,
    pub x: Allocation,
    last_refresh: u64,
    seed: u64,
    pub message_stats: MessageStats,
}

/// What a step did.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub refreshed: bool,
    pub kstar_max: usize,
}

impl Infida {
    pub fn new(
        inst: &Instance,
        cfg: InfidaConfig,
        horizon: Option<u64>,
        seed: u64,
    ) -> Result<Self, PolicyError> {
        let eta = match cfg.eta {
            EtaChoice::Fixed(e) => e,
            EtaChoice::Auto => {
                regret_constants(inst, horizon.ok_or(PolicyError::NoHorizon)?).eta_star
            }
        };
        let y = initial_state(inst, cfg.eps_min);
        let mut policy = Infida {
            cfg,
            eta,
            x: y.clone(),
            y,
            last_refresh: 0,
            seed,
            message_stats: MessageStats::default(),
        };
        policy.resample(inst, None, 0);
        Ok(policy)
    }

    /// One slot: subgradient at the current fractional state, ascent +
    /// projection per node, DepRound on refresh slots.
    pub fn step(
        &mut self,
        inst: &Instance,
        demand: &SlotDemand,
        slot: u64,
    ) -> Result<StepInfo, PolicyError> {
        let sg = match self.cfg.subgradient {
            SubgradientMode::Central => subgradient(inst, demand, &self.y)?,
            SubgradientMode::Messages => {
                let (sg, stats) = subgradient_via_messages(inst, demand, &self.y)?;
                self.message_stats.upstream_hops += stats.upstream_hops;
                self.message_stats.downstream_hops += stats.downstream_hops;
                self.message_stats.control_messages += stats.control_messages;
                self.message_stats.payload_entries += stats.payload_entries;
                self.message_stats.max_payload =
                    self.message_stats.max_payload.max(stats.max_payload);
                sg
            }
        };
        ascend(inst, &mut self.y, &sg.g, self.eta, self.cfg.eps_min)?;
        let refreshed = self.cfg.refresh.due(slot, self.last_refresh);
        if refreshed {
            self.resample(inst, Some(demand), slot);
            self.last_refresh = slot;
        }
        Ok(StepInfo {
            refreshed,
            kstar_max: sg.kstar.iter().flatten().copied().max().unwrap_or(0),
        })
    }

    /// Draws a fresh physical allocation from the fractional state.
    fn resample(&mut self, inst: &Instance, demand: Option<&SlotDemand>, slot: u64) {
        let n_models = inst.n_models;
        for v in 0..inst.n_nodes {
            let lo = v * n_models;
            let hi = lo + n_models;
            let mut rng = node_rng(self.seed, v, slot);
            let rounded = match self.cfg.rounding {
                RoundingMode::Slack => {
                    depround(&self.y.values()[lo..hi], inst.node_sizes(v), &mut rng)
                }
                RoundingMode::Strict => {
                    let base = self.x.clone();
                    let score = |m: usize| -> f64 {
                        let Some(demand) = demand else { return 0.0 };
                        let mut cand = base.clone();
                        cand.set(lo + m, 1.0);
                        let with = gain_compact(inst, demand, &cand).unwrap_or(0.0);
                        let without = gain_compact(inst, demand, &base).unwrap_or(0.0);
                        with - without
                    };
                    depround_strict(
                        &self.y.values()[lo..hi],
                        inst.node_sizes(v),
                        inst.budgets[v],
                        &mut rng,
                        score,
                    )
                }
            };
            self.x.values_mut()[lo..hi].copy_from_slice(&rounded);
        }
    }
}

/// Result of the offline (hindsight) run.
pub struct OfflineOutcome {
    /// Time-averaged fractional allocation.
    pub y_bar: Allocation,
    /// DepRound sample of the average.
    pub x_bar: Allocation,
}

/// Mirror ascent on the time-averaged gain of a full trace: per iteration
/// the subgradient is the average of per-slot subgradients at the current
/// state, with capacities taken from the trace when pinned there or derived
/// from the current allocations otherwise.
pub fn infida_offline(
    inst: &Instance,
    batches: &[Vec<u64>],
    fixed: Option<&[SlotDemand]>,
    iterations: u64,
    cfg: &InfidaConfig,
    seed: u64,
) -> Result<OfflineOutcome, PolicyError> {
    if batches.is_empty() || iterations == 0 {
        return Err(PolicyError::EmptyTrace);
    }
    let eta = match cfg.eta {
        EtaChoice::Fixed(e) => e,
        EtaChoice::Auto => regret_constants(inst, iterations).eta_star,
    };
    let cells = inst.n_nodes * inst.n_models;
    let mut y = initial_state(inst, cfg.eps_min);
    let mut x_cur = resample_all(inst, &y, seed, 0);
    let mut acc = vec![0.0; cells];
    let scale = 1.0 / batches.len() as f64;

    for tau in 1..=iterations {
        for (i, &v) in y.values().iter().enumerate() {
            acc[i] += v;
        }
        let mut g = vec![0.0; cells];
        for (t, r) in batches.iter().enumerate() {
            let owned;
            let demand: &SlotDemand = match fixed {
                Some(f) => &f[t],
                None => {
                    owned = match cfg.capacity {
                        CapacityMode::Scheduler => schedule_slot(inst, &x_cur, r)?.demand,
                        CapacityMode::Fractional => schedule_slot_fractional(inst, &y, r),
                        CapacityMode::Max => max_capacities(inst, r),
                    };
                    &owned
                }
            };
            let sg = subgradient(inst, demand, &y)?;
            for (gi, si) in g.iter_mut().zip(&sg.g) {
                *gi += si * scale;
            }
        }
        ascend(inst, &mut y, &g, eta, cfg.eps_min)?;
        x_cur = resample_all(inst, &y, seed, tau);
    }

    let y_bar = Allocation::from_values(acc.iter().map(|v| v / iterations as f64).collect());
    let x_bar = resample_all(inst, &y_bar, seed, iterations + 1);
    Ok(OfflineOutcome { y_bar, x_bar })
}

/// DepRound over every node with per-(node, round) rng streams.
pub fn resample_all(inst: &Instance, y: &Allocation, seed: u64, round: u64) -> Allocation {
    let n_models = inst.n_models;
    let mut x = y.clone();
    for v in 0..inst.n_nodes {
        let lo = v * n_models;
        let hi = lo + n_models;
        let mut rng = node_rng(seed, v, round);
        let rounded = depround(&y.values()[lo..hi], inst.node_sizes(v), &mut rng);
        x.values_mut()[lo..hi].copy_from_slice(&rounded);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::instances::two_cost_example;

    #[test]
    fn refresh_schedule_fixed() {
        let sched = RefreshSchedule::Fixed(4);
        let due: Vec<u64> = (1..=13).filter(|&t| sched.due(t, 0)).collect();
        assert_eq!(due, vec![4, 8, 12]);
    }

    #[test]
    fn refresh_schedule_linear_stretches() {
        let sched = RefreshSchedule::Linear {
            init: 1,
            target: 32,
            over_slots: 60,
        };
        assert_eq!(sched.period_at(0), 1);
        assert_eq!(sched.period_at(60), 32);
        assert_eq!(sched.period_at(10_000), 32);
        assert!(sched.period_at(30) > 1);
        assert!(sched.period_at(30) < 32);
    }

    #[test]
    fn regret_constants_plug_in() {
        // 2 nodes, 2 unit-size models each, budget 1 per node
        let (inst, _) = crate::harness::instances::unit_regret_example();
        let rc = regret_constants(&inst, 100);
        assert!((rc.theta - 0.25).abs() < 1e-12);
        assert!((rc.d_max - 2.0 * (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn sigma_plug_in() {
        // R = 1, L_max = 10, cost gap 80, unit sizes: sigma = 800
        let mut raw = crate::harness::instances::two_cost_raw();
        raw.caps = vec![4, 0, 0, 10];
        let inst = crate::instance::Instance::from_tables(raw).unwrap();
        let rc = regret_constants(&inst, 100);
        assert_eq!(rc.sigma, 800.0);
        // full-budget nodes contribute nothing to the divergence radius
        let root_term: f64 = 0.0;
        let edge_term = 1.0f64.min(2.0) * (2.0f64 / 1.0).ln();
        assert!((rc.d_max - (edge_term + root_term)).abs() < 1e-12);
    }

    #[test]
    fn zero_budget_nodes_collapse_to_the_minimal_allocation() {
        let mut raw = crate::harness::instances::two_cost_raw();
        raw.topology = crate::harness::instances::chain_topology(2, &[Some(0.0), None], &[0.0]);
        let inst = crate::instance::Instance::from_tables(raw).unwrap();
        let out =
            infida_offline(&inst, &[vec![5u64]], None, 10, &InfidaConfig::default(), 3).unwrap();
        assert_eq!(out.x_bar, inst.pinned_allocation());
    }

    #[test]
    fn zero_demand_slot_leaves_state_nearly_fixed() {
        let (inst, x) = two_cost_example();
        let sched = crate::serving::schedule_slot(&inst, &x, &[0]).unwrap();
        let mut policy = Infida::new(
            &inst,
            InfidaConfig {
                eta: EtaChoice::Fixed(0.05),
                ..InfidaConfig::default()
            },
            Some(10),
            7,
        )
        .unwrap();
        let before = policy.y.clone();
        policy.step(&inst, &sched.demand, 1).unwrap();
        for (a, b) in before.values().iter().zip(policy.y.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn repeated_demand_grows_best_model_mass() {
        let (inst, x) = two_cost_example();
        let sched = crate::serving::schedule_slot(&inst, &x, &[10]).unwrap();
        let mut policy = Infida::new(
            &inst,
            InfidaConfig {
                eta: EtaChoice::Fixed(0.01),
                ..InfidaConfig::default()
            },
            Some(10),
            7,
        )
        .unwrap();
        let best = inst.idx(0, 0);
        let mut prev = policy.y.get(best);
        for slot in 1..=10 {
            policy.step(&inst, &sched.demand, slot).unwrap();
            let cur = policy.y.get(best);
            assert!(cur >= prev - 1e-12, "mass on the cheap model decreased");
            prev = cur;
        }
        assert!(prev > 0.5);
    }
}
