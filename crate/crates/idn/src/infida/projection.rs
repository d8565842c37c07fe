//! Dual-space ascent step and Bregman projection onto the weighted capped
//! simplex, both per node.
//!
//! The mirror map is the weighted negative entropy `sum_m s_m y_m log y_m`.
//! Its gradient maps `y` to `s (log y + 1)`; the inverse maps `u` to
//! `exp(u / s - 1)`, so the ascent step has the closed form
//! `y * exp(eta g / s)`.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error(
        "budget {budget} cannot host the pinned models ({pinned} MB) plus a positive free mass"
    )]
    InfeasibleBudget { budget: f64, pinned: f64 },
    #[error("no valid scaling index found (numerical breakdown)")]
    NoValidIndex,
}

const H_MAX: f64 = 1e30;

/// Maps the node state to the dual space, takes the gradient step and maps
/// back. Pinned coordinates are left untouched; free coordinates stay inside
/// `[eps_min, 1e30]`.
pub fn mirror_step(
    y: &[f64],
    g: &[f64],
    eta: f64,
    sizes: &[f64],
    pinned: &[bool],
    eps_min: f64,
) -> Vec<f64> {
    y.iter()
        .zip(g)
        .zip(sizes.iter().zip(pinned))
        .map(|((&y_m, &g_m), (&s_m, &pin))| {
            if pin {
                return y_m;
            }
            let dual = s_m * (y_m.ln() + 1.0) + eta * g_m;
            let h = (dual / s_m - 1.0).exp();
            if h.is_nan() {
                eps_min
            } else {
                h.clamp(eps_min, H_MAX)
            }
        })
        .collect()
}

/// Projects a positive node vector onto the weighted capped simplex
/// `{ y in (0, 1]^M : sum_m s_m y_m = min(b, |s|_1) }` under the weighted
/// negative-entropy Bregman divergence.
///
/// Pinned coordinates are fixed at 1 and their sizes deducted from the
/// budget first. The free part is solved by a sorted scan: find the split
/// index `k` where the scaling factor `m_k = (b - sum of capped sizes) /
/// (sum of scaled s_i h_i)` keeps the k smallest inputs below 1 while the
/// rest cap at 1. Runs in O(M log M).
pub fn bregman_project(
    h: &[f64],
    sizes: &[f64],
    budget: f64,
    pinned: &[bool],
) -> Result<Vec<f64>, ProjectionError> {
    let n = h.len();
    let mut out = vec![1.0; n];
    let pinned_mass: f64 = (0..n).filter(|&i| pinned[i]).map(|i| sizes[i]).sum();
    let free: Vec<usize> = (0..n).filter(|&i| !pinned[i]).collect();
    if free.is_empty() {
        return Ok(out);
    }
    let b_free = budget - pinned_mass;
    if b_free <= 0.0 {
        return Err(ProjectionError::InfeasibleBudget {
            budget,
            pinned: pinned_mass,
        });
    }
    let free_mass: f64 = free.iter().map(|&i| sizes[i]).sum();
    if free_mass <= b_free {
        // corner case: the whole catalog fits, every coordinate saturates
        return Ok(out);
    }

    // ascending scan order by input value
    let mut order = free.clone();
    order.sort_by(|&a, &b| h[a].partial_cmp(&h[b]).unwrap().then(a.cmp(&b)));
    let k_count = order.len();
    let mut weighted_prefix = vec![0.0; k_count + 1]; // sum_{i <= k} s_i h_i
    let mut size_suffix = vec![0.0; k_count + 1]; // sum_{i > k} s_i
    for (pos, &i) in order.iter().enumerate() {
        weighted_prefix[pos + 1] = weighted_prefix[pos] + sizes[i] * h[i];
    }
    for pos in (0..k_count).rev() {
        size_suffix[pos] = size_suffix[pos + 1] + sizes[order[pos]];
    }

    for k in (1..=k_count).rev() {
        let m_k = (b_free - size_suffix[k]) / weighted_prefix[k];
        if m_k <= 0.0 {
            continue;
        }
        // the scaled value of a coordinate sitting exactly on the cap is
        // the same whether it is scaled or capped, so accept ties: extreme
        // input ratios can round h * m_k onto 1.0
        let below = h[order[k - 1]] * m_k < 1.0 + 1e-9;
        let above = k == k_count || h[order[k]] * m_k >= 1.0;
        if below && above {
            for (pos, &i) in order.iter().enumerate() {
                out[i] = if pos < k { (h[i] * m_k).min(1.0) } else { 1.0 };
            }
            return Ok(out);
        }
    }
    Err(ProjectionError::NoValidIndex)
}
