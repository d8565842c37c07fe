//! Dependent rounding of a node's fractional allocation.
//!
//! Pairwise `simplify` passes move mass between two fractional coordinates
//! without changing the allocated size `sum s y`, making at least one of
//! them integral, until at most one fractional coordinate survives. The
//! survivor is rounded by an independent coin with its own probability, so
//! marginals are preserved exactly and the budget is exceeded by at most one
//! model size.

use rand::Rng;

/// Values closer than this to 0 or 1 are treated as integral.
pub const INTEGRALITY_TOL: f64 = 1e-9;

fn snap(v: f64) -> f64 {
    if v <= INTEGRALITY_TOL {
        0.0
    } else if v >= 1.0 - INTEGRALITY_TOL {
        1.0
    } else {
        v
    }
}

/// Runs pairwise passes until at most one fractional coordinate survives;
/// returns the vector and the surviving index, coin not yet flipped.
fn pairwise_rounds(y: &[f64], sizes: &[f64], rng: &mut impl Rng) -> (Vec<f64>, Option<usize>) {
    let mut work: Vec<f64> = y.iter().map(|&v| snap(v)).collect();
    loop {
        let mut frac = work
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0 && v != 1.0)
            .map(|(i, _)| i);
        match (frac.next(), frac.next()) {
            (Some(a), Some(b)) => simplify(&mut work, sizes, a, b, rng),
            (residual, _) => return (work, residual),
        }
    }
}

/// Rounds a fractional node vector to {0,1} with exact marginals
/// (`E[x] = y`) while preserving `sum s y` up to the single residual coin.
/// Integral inputs are returned unchanged.
pub fn depround(y: &[f64], sizes: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    let (mut work, residual) = pairwise_rounds(y, sizes, rng);
    if let Some(i) = residual {
        work[i] = if rng.gen::<f64>() < work[i] { 1.0 } else { 0.0 };
    }
    work
}

/// One pairwise pass: moves mass between coordinates `a` and `b` keeping
/// `s_a y_a + s_b y_b` constant; at least one endpoint becomes integral.
fn simplify(work: &mut [f64], sizes: &[f64], a: usize, b: usize, rng: &mut impl Rng) {
    let (ya, yb) = (work[a], work[b]);
    let (sa, sb) = (sizes[a], sizes[b]);
    let up = (1.0 - ya).min(yb * sb / sa); // push a up, b down
    let down = ya.min((1.0 - yb) * sb / sa); // push a down, b up
    if rng.gen::<f64>() * (up + down) < down {
        work[a] = snap(ya + up);
        work[b] = snap(yb - up * sa / sb);
    } else {
        work[a] = snap(ya - down);
        work[b] = snap(yb + down * sa / sb);
    }
    // floating point can leave both endpoints marginally fractional; force
    // the one closer to an integer so every pass makes progress
    if work[a] != 0.0 && work[a] != 1.0 && work[b] != 0.0 && work[b] != 1.0 {
        let da = work[a].min(1.0 - work[a]);
        let db = work[b].min(1.0 - work[b]);
        let fix = if da <= db { a } else { b };
        work[fix] = if work[fix] < 0.5 { 0.0 } else { 1.0 };
    }
}

/// Strict-budget variant: the residual coordinate is only kept when it fits
/// the budget. When it does not, it is dropped and the best-scoring model
/// that fits the leftover space is deployed instead (`score` is the
/// caller's marginal-gain estimate).
pub fn depround_strict(
    y: &[f64],
    sizes: &[f64],
    budget: f64,
    rng: &mut impl Rng,
    score: impl Fn(usize) -> f64,
) -> Vec<f64> {
    let (mut x, residual) = pairwise_rounds(y, sizes, rng);
    let Some(i) = residual else { return x };
    let used_others: f64 = x
        .iter()
        .zip(sizes)
        .enumerate()
        .map(|(j, (&v, &s))| if j != i && v == 1.0 { s } else { 0.0 })
        .sum();
    if used_others + sizes[i] <= budget + 1e-9 {
        x[i] = if rng.gen::<f64>() < x[i] { 1.0 } else { 0.0 };
        return x;
    }
    x[i] = 0.0;
    let slack = budget - used_others;
    let best = (0..x.len())
        .filter(|&j| x[j] == 0.0 && sizes[j] <= slack + 1e-9 && score(j) > 0.0)
        .max_by(|&a, &b| score(a).partial_cmp(&score(b)).unwrap().then(b.cmp(&a)));
    if let Some(j) = best {
        x[j] = 1.0;
    }
    x
}
