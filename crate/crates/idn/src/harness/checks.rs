//! Structural check suite: every mathematical property the system relies on,
//! verified on seeded random instances with independent oracles. Used by the
//! `check` subcommand and, at full sample counts, by the acceptance tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::instances::{
    non_monotone_cost_example, random_feasible_state, random_instance, RandomInstance, SampleParams,
};
use crate::infida::{
    bregman_project, depround, regret_constants, subgradient, subgradient_via_messages,
};
use crate::instance::{Allocation, Instance};
use crate::serving::{bounding_function, gain, gain_compact, ServingError, SlotDemand};

/// Result of one named check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub details: String,
}

impl CheckOutcome {
    fn pass(name: &'static str, details: String) -> Self {
        CheckOutcome {
            name,
            passed: true,
            details,
        }
    }

    fn fail(name: &'static str, details: String) -> Self {
        CheckOutcome {
            name,
            passed: false,
            details,
        }
    }
}

type GainFn = dyn Fn(&Instance, &SlotDemand, &Allocation) -> Result<f64, ServingError>;

/// Compares two gain evaluation routes on random instances, both on random
/// integral allocations and random fractional states.
pub fn check_gain_equivalence_with(
    lhs: &GainFn,
    rhs: &GainFn,
    seed: u64,
    instances: usize,
    tol: f64,
) -> CheckOutcome {
    let name = "gain_equivalence";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = SampleParams {
        max_nodes: 5,
        max_tasks: 2,
        max_models_per_task: 3,
        ..SampleParams::default()
    };
    let mut worst = 0.0f64;
    for i in 0..instances {
        let RandomInstance { inst, demand, x } = random_instance(&mut rng, &params);
        let y = random_feasible_state(&inst, &mut rng);
        for alloc in [&x, &y] {
            let a = lhs(&inst, &demand, alloc).unwrap();
            let b = rhs(&inst, &demand, alloc).unwrap();
            let err = (a - b).abs() / a.abs().max(1.0);
            worst = worst.max(err);
            if err > tol {
                return CheckOutcome::fail(
                    name,
                    format!("instance {i}: routes disagree, {a} vs {b} (rel err {err:.3e})"),
                );
            }
        }
    }
    CheckOutcome::pass(
        name,
        format!("{instances} instances, worst relative gap {worst:.3e}"),
    )
}

pub fn check_gain_equivalence(seed: u64, instances: usize, tol: f64) -> CheckOutcome {
    check_gain_equivalence_with(&gain, &gain_compact, seed, instances, tol)
}

/// Weighted negative-entropy Bregman divergence between positive vectors.
pub fn bregman_divergence(y: &[f64], h: &[f64], sizes: &[f64]) -> f64 {
    y.iter()
        .zip(h)
        .zip(sizes)
        .map(|((&a, &b), &s)| s * (a * (a / b).ln() - a + b))
        .sum()
}

/// KKT conditions of the projection on random inputs up to `max_dim`
/// dimensions: budget equality, box bounds, a shared multiplier on scaled
/// coordinates and the cap condition on saturated ones.
pub fn check_projection_kkt(seed: u64, inputs: usize, max_dim: usize, tol: f64) -> CheckOutcome {
    let name = "projection_kkt";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..inputs {
        let dim = rng.gen_range(1..=max_dim.max(1));
        let h: Vec<f64> = (0..dim).map(|_| rng.gen_range(1e-6..3.0f64)).collect();
        let sizes: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.2..2.0f64)).collect();
        let total: f64 = sizes.iter().sum();
        let budget = total * rng.gen_range(0.1..1.2);
        let pinned = vec![false; dim];
        let y = match bregman_project(&h, &sizes, budget, &pinned) {
            Ok(y) => y,
            Err(e) => return CheckOutcome::fail(name, format!("input {i}: {e}")),
        };
        let target = budget.min(total);
        let got: f64 = y.iter().zip(&sizes).map(|(a, b)| a * b).sum();
        if (got - target).abs() > tol * target.max(1.0) {
            return CheckOutcome::fail(name, format!("input {i}: budget {got} != {target}"));
        }
        let mut multiplier: Option<f64> = None;
        for m in 0..dim {
            if y[m] <= 0.0 || y[m] > 1.0 + tol {
                return CheckOutcome::fail(name, format!("input {i}: box violated y={}", y[m]));
            }
            if y[m] < 1.0 - tol {
                let ratio = y[m] / h[m];
                match multiplier {
                    None => multiplier = Some(ratio),
                    Some(prev) => {
                        if (ratio - prev).abs() > tol * prev.max(1.0) {
                            return CheckOutcome::fail(
                                name,
                                format!("input {i}: multipliers differ {ratio} vs {prev}"),
                            );
                        }
                    }
                }
            }
        }
        if let Some(mult) = multiplier {
            for m in 0..dim {
                if y[m] >= 1.0 - tol && h[m] * mult < 1.0 - tol {
                    return CheckOutcome::fail(
                        name,
                        format!("input {i}: capped coordinate below the scaling line"),
                    );
                }
            }
        }
    }
    CheckOutcome::pass(
        name,
        format!("{inputs} random inputs satisfy the KKT system"),
    )
}

/// Projection optimality against a feasible grid (low dimensions): the
/// algorithm's divergence never exceeds any grid point's by more than `tol`.
pub fn check_projection_grid(seed: u64, inputs: usize, grid: usize, tol: f64) -> CheckOutcome {
    let name = "projection_grid";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked_points = 0usize;
    for i in 0..inputs {
        let dim = rng.gen_range(2..=3);
        let h: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.05..2.0f64)).collect();
        let sizes: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.3..1.5f64)).collect();
        let total: f64 = sizes.iter().sum();
        let budget = total * rng.gen_range(0.2..0.9);
        let pinned = vec![false; dim];
        let y = bregman_project(&h, &sizes, budget, &pinned).unwrap();
        let d_alg = bregman_divergence(&y, &h, &sizes);

        let steps = if dim == 2 {
            grid
        } else {
            (grid as f64).sqrt() as usize
        };
        let mut probe = vec![0.0; dim];
        let mut indices = vec![0usize; dim - 1];
        loop {
            for (a, &idx) in probe.iter_mut().zip(&indices) {
                *a = (idx as f64 + 0.5) / steps as f64;
            }
            let partial: f64 = probe[..dim - 1]
                .iter()
                .zip(&sizes)
                .map(|(a, b)| a * b)
                .sum();
            let last = (budget - partial) / sizes[dim - 1];
            if last > 1e-9 && last <= 1.0 {
                probe[dim - 1] = last;
                checked_points += 1;
                let d_grid = bregman_divergence(&probe, &h, &sizes);
                if d_alg > d_grid + tol {
                    return CheckOutcome::fail(
                        name,
                        format!(
                            "input {i}: grid point beats the projection by {:.3e}",
                            d_alg - d_grid
                        ),
                    );
                }
            }
            // advance the odometer
            let mut pos = 0;
            loop {
                if pos == dim - 1 {
                    break;
                }
                indices[pos] += 1;
                if indices[pos] < steps {
                    break;
                }
                indices[pos] = 0;
                pos += 1;
            }
            if pos == dim - 1 {
                break;
            }
        }
    }
    CheckOutcome::pass(
        name,
        format!("{inputs} inputs, {checked_points} feasible grid points dominated"),
    )
}

/// DepRound marginals within 3 sigma over `draws` samples, and the budget
/// never exceeded by more than one model size.
pub fn check_depround_marginals(seed: u64, instances: usize, draws: usize) -> CheckOutcome {
    let name = "depround_marginals";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..instances {
        let sample = random_instance(&mut rng, &SampleParams::default());
        let inst = &sample.inst;
        let y = random_feasible_state(inst, &mut rng);
        for v in 0..inst.n_nodes {
            let lo = v * inst.n_models;
            let slice = &y.values()[lo..lo + inst.n_models];
            let sizes = inst.node_sizes(v);
            let slack = inst.max_size(v);
            let mut mean = vec![0.0; inst.n_models];
            for _ in 0..draws {
                let x = depround(slice, sizes, &mut rng);
                let used: f64 = x.iter().zip(sizes).map(|(a, b)| a * b).sum();
                if used > inst.budgets[v] + slack + 1e-6 {
                    return CheckOutcome::fail(
                        name,
                        format!("instance {i} node {v}: budget slack exceeded ({used})"),
                    );
                }
                for (acc, &val) in mean.iter_mut().zip(&x) {
                    *acc += val;
                }
            }
            for m in 0..inst.n_models {
                let p = slice[m];
                let got = mean[m] / draws as f64;
                let sigma = (p * (1.0 - p) / draws as f64).sqrt();
                if (got - p).abs() > 3.0 * sigma + 1e-9 {
                    return CheckOutcome::fail(
                        name,
                        format!(
                            "instance {i} node {v} model {m}: marginal {got:.5} vs {p:.5} (3s={:.5})",
                            3.0 * sigma
                        ),
                    );
                }
            }
        }
    }
    CheckOutcome::pass(
        name,
        format!("{instances} instances x {draws} draws: marginals and slack hold"),
    )
}

/// Negative-correlation product inequality of DepRound:
/// `E[prod (1 - x c)] <= prod (1 - y c)` up to Monte Carlo noise.
pub fn check_depround_product(seed: u64, pairs: usize, draws: usize) -> CheckOutcome {
    let name = "depround_product";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..pairs {
        let sample = random_instance(&mut rng, &SampleParams::default());
        let inst = &sample.inst;
        let y = random_feasible_state(inst, &mut rng);
        // pick a node with at least two free coordinates
        let v = (0..inst.n_nodes)
            .find(|&v| inst.node_pinned(v).iter().filter(|&&p| !p).count() >= 2)
            .unwrap_or(0);
        let lo = v * inst.n_models;
        let slice = &y.values()[lo..lo + inst.n_models];
        let sizes = inst.node_sizes(v);
        let c: Vec<f64> = (0..inst.n_models)
            .map(|_| {
                if rng.gen_bool(0.7) {
                    rng.gen_range(0.0..=1.0)
                } else {
                    0.0 // excluded from the subset
                }
            })
            .collect();
        let bound: f64 = slice
            .iter()
            .zip(&c)
            .map(|(&ym, &cm)| 1.0 - ym * cm)
            .product();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let x = depround(slice, sizes, &mut rng);
            let p: f64 = x.iter().zip(&c).map(|(&xm, &cm)| 1.0 - xm * cm).product();
            sum += p;
            sum_sq += p * p;
        }
        let meanv = sum / draws as f64;
        let var = (sum_sq / draws as f64 - meanv * meanv).max(0.0);
        let sigma = (var / draws as f64).sqrt();
        let gap = meanv - bound;
        worst = worst.max(gap - 3.0 * sigma);
        if gap > 3.0 * sigma + 1e-9 {
            return CheckOutcome::fail(
                name,
                format!(
                    "pair {i}: E[prod] = {meanv:.6} exceeds bound {bound:.6} (3s={:.2e})",
                    3.0 * sigma
                ),
            );
        }
    }
    CheckOutcome::pass(name, format!("{pairs} (y, c) pairs obey the product bound"))
}

/// Supergradient inequality of the concave gain: for random feasible pairs,
/// `G(y') <= G(y) + g(y) . (y' - y)` up to `tol` (relative).
pub fn check_supergradient(seed: u64, pairs: usize, tol: f64) -> CheckOutcome {
    let name = "supergradient";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..pairs {
        let sample = random_instance(&mut rng, &SampleParams::default());
        let inst = &sample.inst;
        let y = random_feasible_state(inst, &mut rng);
        let y2 = random_feasible_state(inst, &mut rng);
        let g = subgradient(inst, &sample.demand, &y).unwrap();
        let g_y = gain_compact(inst, &sample.demand, &y).unwrap();
        let g_y2 = gain_compact(inst, &sample.demand, &y2).unwrap();
        let linear: f64 =
            g.g.iter()
                .zip(y2.values().iter().zip(y.values()))
                .map(|(&gi, (&a, &b))| gi * (a - b))
                .sum();
        let slack = g_y + linear - g_y2;
        let scale = g_y.abs().max(g_y2.abs()).max(1.0);
        worst = worst.max(-slack / scale);
        if slack < -tol * scale {
            return CheckOutcome::fail(
                name,
                format!("pair {i}: violated by {:.3e} (scale {scale:.3e})", -slack),
            );
        }
    }
    CheckOutcome::pass(
        name,
        format!("{pairs} pairs, worst normalized violation {worst:.3e}"),
    )
}

/// Central-difference derivative along free coordinates at generic points
/// (no min/indicator tight) matches the subgradient component.
pub fn check_finite_difference(seed: u64, points: usize, tol: f64) -> CheckOutcome {
    let name = "finite_difference";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta = 1e-5;
    let margin = 1e-3;
    let mut tested = 0usize;
    let mut attempts = 0usize;
    while tested < points {
        attempts += 1;
        if attempts > points * 200 {
            return CheckOutcome::fail(
                name,
                format!("could not find {points} generic points ({tested} found)"),
            );
        }
        let sample = random_instance(&mut rng, &SampleParams::default());
        let inst = &sample.inst;
        let y = random_feasible_state(inst, &mut rng);
        if !is_generic(inst, &sample.demand, &y, margin) {
            continue;
        }
        // a free coordinate with capacity on some ranking, away from the box edges
        let candidates: Vec<usize> = (0..inst.n_nodes * inst.n_models)
            .filter(|&idx| {
                !inst.pinned[idx] && y.get(idx) > 2.0 * delta && y.get(idx) < 1.0 - 2.0 * delta
            })
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let idx = candidates[rng.gen_range(0..candidates.len())];
        let g = subgradient(inst, &sample.demand, &y).unwrap();
        let mut plus = y.clone();
        plus.set(idx, y.get(idx) + delta);
        let mut minus = y.clone();
        minus.set(idx, y.get(idx) - delta);
        let fd = (gain_compact(inst, &sample.demand, &plus).unwrap()
            - gain_compact(inst, &sample.demand, &minus).unwrap())
            / (2.0 * delta);
        let err = (fd - g.g[idx]).abs() / g.g[idx].abs().max(1.0);
        if err > tol {
            return CheckOutcome::fail(
                name,
                format!(
                    "coordinate {idx}: fd {fd} vs subgradient {} (rel {err:.3e})",
                    g.g[idx]
                ),
            );
        }
        tested += 1;
    }
    CheckOutcome::pass(name, format!("{tested} generic points match"))
}

/// No cumulative capacity sits within `margin` of a batch size, so small
/// perturbations cannot flip any min or indicator.
fn is_generic(inst: &Instance, demand: &SlotDemand, y: &Allocation, margin: f64) -> bool {
    for rho in 0..inst.types.len() {
        let r = demand.r[rho] as f64;
        if r == 0.0 {
            continue;
        }
        let mut cum = 0.0;
        for (ki, e) in inst.rankings[rho].entries.iter().enumerate() {
            cum += y.get(inst.idx(e.node, e.model)) * demand.caps[rho][ki] as f64;
            if (cum - r).abs() < margin {
                return false;
            }
        }
    }
    true
}

/// The message-based subgradient must equal the central one bitwise,
/// including on paths whose cost order interleaves positions.
pub fn check_message_equality(seed: u64, instances: usize) -> CheckOutcome {
    let name = "message_equality";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // the hand-crafted non-monotone path first
    let (inst, x, y) = non_monotone_cost_example();
    let sched = crate::serving::schedule_slot(&inst, &x, &[8]).unwrap();
    let central = subgradient(&inst, &sched.demand, &y).unwrap();
    let (msg, _) = subgradient_via_messages(&inst, &sched.demand, &y).unwrap();
    if central.g != msg.g {
        return CheckOutcome::fail(name, "non-monotone fixture differs".into());
    }
    for i in 0..instances {
        let sample = random_instance(&mut rng, &SampleParams::default());
        let inst = &sample.inst;
        let y = random_feasible_state(inst, &mut rng);
        let central = subgradient(inst, &sample.demand, &y).unwrap();
        let (msg, _) = subgradient_via_messages(inst, &sample.demand, &y).unwrap();
        if central.g != msg.g || central.kstar != msg.kstar {
            return CheckOutcome::fail(name, format!("instance {i}: protocols disagree"));
        }
    }
    CheckOutcome::pass(name, format!("{instances} instances agree bitwise"))
}

/// Sandwich `bound <= G <= bound / (1 - 1/e)` on random fractional points.
pub fn check_sandwich(seed: u64, points: usize, tol: f64) -> CheckOutcome {
    let name = "sandwich";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..points {
        let sample = random_instance(&mut rng, &SampleParams::default());
        let inst = &sample.inst;
        let y = random_feasible_state(inst, &mut rng);
        let g = gain_compact(inst, &sample.demand, &y).unwrap();
        let lambda = bounding_function(inst, &sample.demand, &y);
        let scale = g.abs().max(1.0);
        let psi = 1.0 - (-1.0f64).exp();
        if lambda > g + tol * scale || psi * g > lambda + tol * scale {
            return CheckOutcome::fail(
                name,
                format!("point {i}: bound {lambda}, gain {g} violate the sandwich"),
            );
        }
    }
    CheckOutcome::pass(name, format!("{points} sampled points sandwiched"))
}

/// Midpoint concavity of the gain in the fractional state.
pub fn check_concavity(seed: u64, points: usize, tol: f64) -> CheckOutcome {
    let name = "concavity";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..points {
        let sample = random_instance(&mut rng, &SampleParams::default());
        let inst = &sample.inst;
        let a = random_feasible_state(inst, &mut rng);
        let b = random_feasible_state(inst, &mut rng);
        let mid = Allocation::from_values(
            a.values()
                .iter()
                .zip(b.values())
                .map(|(&x, &y)| 0.5 * (x + y))
                .collect(),
        );
        let ga = gain_compact(inst, &sample.demand, &a).unwrap();
        let gb = gain_compact(inst, &sample.demand, &b).unwrap();
        let gm = gain_compact(inst, &sample.demand, &mid).unwrap();
        let scale = ga.abs().max(gb.abs()).max(1.0);
        if gm < 0.5 * (ga + gb) - tol * scale {
            return CheckOutcome::fail(
                name,
                format!("point {i}: midpoint {gm} below chord {}", 0.5 * (ga + gb)),
            );
        }
    }
    CheckOutcome::pass(name, format!("{points} random midpoints concave"))
}

/// Exhaustive submodularity and monotonicity of the slot-gain set function
/// on instances with at most 8 (node, model) cells.
pub fn check_submodularity(seed: u64, instances: usize, tol: f64) -> CheckOutcome {
    let name = "submodularity";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = SampleParams {
        max_nodes: 2,
        max_tasks: 1,
        max_models_per_task: 4,
        ..SampleParams::default()
    };
    let mut pairs_checked = 0u64;
    for i in 0..instances {
        let sample = random_instance(&mut rng, &params);
        let inst = &sample.inst;
        let cells = inst.n_nodes * inst.n_models;
        assert!(cells <= 8);
        // f(S) = gain of (S union omega); budget deliberately ignored
        let f: Vec<f64> = (0..1usize << cells)
            .map(|mask| {
                let values: Vec<f64> = (0..cells)
                    .map(|idx| {
                        if mask >> idx & 1 == 1 || inst.omega[idx] {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                gain_compact(inst, &sample.demand, &Allocation::from_values(values)).unwrap()
            })
            .collect();
        if f[0].abs() > tol {
            return CheckOutcome::fail(name, format!("instance {i}: f(empty) = {}", f[0]));
        }
        for big in 0..1usize << cells {
            // strict submasks of `big`
            let mut small = (big.wrapping_sub(1)) & big;
            loop {
                if f[big] < f[small] - tol {
                    return CheckOutcome::fail(
                        name,
                        format!("instance {i}: monotonicity fails {big:#b} vs {small:#b}"),
                    );
                }
                for e in 0..cells {
                    if big >> e & 1 == 0 {
                        let lhs = f[big | 1 << e] - f[big];
                        let rhs = f[small | 1 << e] - f[small];
                        pairs_checked += 1;
                        if lhs > rhs + tol {
                            return CheckOutcome::fail(
                                name,
                                format!(
                                    "instance {i}: marginal gain grows from {small:#b} to {big:#b} adding {e}"
                                ),
                            );
                        }
                    }
                }
                if small == 0 {
                    break;
                }
                small = (small - 1) & big;
            }
        }
    }
    CheckOutcome::pass(
        name,
        format!("{instances} instances, {pairs_checked} marginal pairs verified"),
    )
}

/// Subgradient norm bound: `max |g| / s <= sigma` with the constants
/// computed from the instance.
pub fn check_subgradient_bound(seed: u64, instances: usize) -> CheckOutcome {
    let name = "subgradient_bound";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..instances {
        let sample = random_instance(&mut rng, &SampleParams::default());
        let inst = &sample.inst;
        let y = random_feasible_state(inst, &mut rng);
        let g = subgradient(inst, &sample.demand, &y).unwrap();
        let sigma = regret_constants(inst, 1).sigma;
        let norm =
            g.g.iter()
                .enumerate()
                .map(|(idx, &v)| v.abs() / inst.size(idx / inst.n_models, idx % inst.n_models))
                .fold(0.0f64, f64::max);
        if norm > sigma * (1.0 + 1e-12) + 1e-9 {
            return CheckOutcome::fail(
                name,
                format!("instance {i}: norm {norm} exceeds sigma {sigma}"),
            );
        }
        if g.g.iter().any(|&v| v < 0.0) {
            return CheckOutcome::fail(name, format!("instance {i}: negative component"));
        }
    }
    CheckOutcome::pass(name, format!("{instances} instances within the norm bound"))
}

/// The default report: every suite at `scale` times its base sample count.
pub fn run_all(seed: u64, scale: usize) -> Vec<CheckOutcome> {
    let scale = scale.max(1);
    vec![
        check_gain_equivalence(seed, 200 * scale, 1e-9),
        check_projection_kkt(seed.wrapping_add(1), 200 * scale, 50, 1e-9),
        check_projection_grid(seed.wrapping_add(2), 5 * scale, 10_000, 1e-6),
        check_depround_marginals(seed.wrapping_add(3), 2 * scale, 20_000),
        check_depround_product(seed.wrapping_add(4), 20 * scale, 20_000),
        check_supergradient(seed.wrapping_add(5), 500 * scale, 1e-8),
        check_finite_difference(seed.wrapping_add(6), 100 * scale, 1e-6),
        check_message_equality(seed.wrapping_add(7), 100 * scale),
        check_sandwich(seed.wrapping_add(8), 500 * scale, 1e-9),
        check_concavity(seed.wrapping_add(9), 500 * scale, 1e-9),
        check_submodularity(seed.wrapping_add(10), 10 * scale, 1e-9),
        check_subgradient_bound(seed.wrapping_add(11), 200 * scale),
    ]
}
