//! Exhaustive search for the best static allocation on tiny instances.

use thiserror::Error;

use crate::infida::CapacityMode;
use crate::instance::{Allocation, Instance};
use crate::serving::{
    gain_compact, max_capacities, schedule_slot, schedule_slot_fractional, ServingError, SlotDemand,
};

#[derive(Debug, Error)]
pub enum BruteForceError {
    #[error("instance too large for exhaustive search: {free} free coordinates (limit {limit})")]
    TooLarge { free: usize, limit: usize },
    #[error("trace is empty")]
    EmptyTrace,
    #[error(transparent)]
    Serving(#[from] ServingError),
}

/// Exact maximizer of the time-averaged gain over all feasible integral
/// allocations. Refuses instances with more than `limit` free coordinates.
pub fn brute_force_static_opt(
    inst: &Instance,
    batches: &[Vec<u64>],
    fixed: Option<&[SlotDemand]>,
    mode: CapacityMode,
    limit: usize,
) -> Result<(Allocation, f64), BruteForceError> {
    if batches.is_empty() {
        return Err(BruteForceError::EmptyTrace);
    }
    // candidates that could ever be added
    let free: Vec<usize> = (0..inst.n_nodes * inst.n_models)
        .filter(|&idx| {
            let (v, m) = (idx / inst.n_models, idx % inst.n_models);
            !inst.pinned[idx] && inst.size(v, m) <= inst.budgets[v]
        })
        .collect();
    if free.len() > limit {
        return Err(BruteForceError::TooLarge {
            free: free.len(),
            limit,
        });
    }

    let evaluate = |x: &Allocation| -> Result<f64, ServingError> {
        let mut total = 0.0;
        for (t, r) in batches.iter().enumerate() {
            let owned;
            let demand = match fixed {
                Some(f) => &f[t],
                None => {
                    owned = match mode {
                        CapacityMode::Scheduler => schedule_slot(inst, x, r)?.demand,
                        CapacityMode::Fractional => schedule_slot_fractional(inst, x, r),
                        CapacityMode::Max => max_capacities(inst, r),
                    };
                    &owned
                }
            };
            total += gain_compact(inst, demand, x)?;
        }
        Ok(total / batches.len() as f64)
    };

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
    let mut best = (x.clone(), evaluate(&x)?);

    fn recurse(
        inst: &Instance,
        free: &[usize],
        pos: usize,
        x: &mut Allocation,
        residual: &mut [f64],
        best: &mut (Allocation, f64),
        evaluate: &dyn Fn(&Allocation) -> Result<f64, ServingError>,
    ) -> Result<(), ServingError> {
        if pos == free.len() {
            let g = evaluate(x)?;
            if g > best.1 {
                *best = (x.clone(), g);
            }
            return Ok(());
        }
        let idx = free[pos];
        let (v, m) = (idx / inst.n_models, idx % inst.n_models);
        recurse(inst, free, pos + 1, x, residual, best, evaluate)?;
        if inst.size(v, m) <= residual[v] + 1e-9 {
            x.set(idx, 1.0);
            residual[v] -= inst.size(v, m);
            recurse(inst, free, pos + 1, x, residual, best, evaluate)?;
            residual[v] += inst.size(v, m);
            x.set(idx, 0.0);
        }
        Ok(())
    }

    recurse(inst, &free, 0, &mut x, &mut residual, &mut best, &evaluate)?;
    Ok(best)
}
