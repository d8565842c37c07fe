//! Request batch generation and trace files.
//!
//! Tasks are drawn i.i.d. from a Zipf law; the sliding profile cyclically
//! shifts the popularity ranking by a fixed number of tasks every `window`
//! requests (counted over the cumulative request index, not slots). Each
//! task is served from a small fixed set of origin base stations chosen once
//! at setup.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::Instance;
use crate::serving::SlotDemand;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("task count must be positive")]
    NoTasks,
    #[error("zipf exponent must be non-negative, got {0}")]
    BadExponent(f64),
    #[error("shift amount {shift} must be smaller than the task count {tasks}")]
    BadShift { shift: usize, tasks: usize },
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace references unknown request type (task {task}, origin {origin})")]
    UnknownType { task: usize, origin: usize },
    #[error("trace references (node {node}, model {model}) off the path of (task {task}, origin {origin})")]
    OffPath {
        task: usize,
        origin: usize,
        node: usize,
        model: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Task popularity over time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Popularity {
    Fixed,
    /// Cyclic shift of `shift` tasks every `window` requests.
    Sliding {
        window: u64,
        shift: usize,
    },
}

/// Zipf probability vector over `n` tasks: `p(i)` proportional to
/// `(i + 1)^-exponent`, strictly decreasing for positive exponents.
pub fn popularity_pmf(n: usize, exponent: f64) -> Result<Vec<f64>, WorkloadError> {
    if n == 0 {
        return Err(WorkloadError::NoTasks);
    }
    if exponent < 0.0 {
        return Err(WorkloadError::BadExponent(exponent));
    }
    let weights: Vec<f64> = (0..n).map(|i| ((i + 1) as f64).powf(-exponent)).collect();
    let z: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| w / z).collect())
}

/// Stateful request generator. Single-threaded; identical seed and
/// configuration reproduce the identical batch sequence.
pub struct Generator {
    popularity: Popularity,
    cumulative: Vec<f64>,
    tasks: usize,
    /// Request types per (task, origin), indexed into the instance tables.
    type_of: HashMap<(usize, usize), usize>,
    /// Origins per task.
    origins: Vec<Vec<usize>>,
    n_types: usize,
    requests_seen: u64,
    rng: ChaCha8Rng,
}

impl Generator {
    /// Assigns each task its origin base stations (distinct whenever enough
    /// stations exist) using the given seeded rng.
    pub fn assign_origins(
        tasks: usize,
        stations: &[usize],
        per_task: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Vec<usize>> {
        (0..tasks)
            .map(|_| {
                let mut pool = stations.to_vec();
                let mut picked = Vec::new();
                for _ in 0..per_task.min(stations.len().max(1)) {
                    if pool.is_empty() {
                        break;
                    }
                    let i = rng.gen_range(0..pool.len());
                    picked.push(pool.swap_remove(i));
                }
                picked.sort_unstable();
                picked
            })
            .collect()
    }

    pub fn new(
        inst: &Instance,
        popularity: Popularity,
        exponent: f64,
        origins: Vec<Vec<usize>>,
        seed: u64,
    ) -> Result<Self, WorkloadError> {
        let pmf = popularity_pmf(inst.tasks, exponent)?;
        if let Popularity::Sliding { shift, .. } = popularity {
            if shift >= inst.tasks {
                return Err(WorkloadError::BadShift {
                    shift,
                    tasks: inst.tasks,
                });
            }
        }
        let mut cumulative = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for p in &pmf {
            acc += p;
            cumulative.push(acc);
        }
        let type_of = inst
            .types
            .iter()
            .enumerate()
            .map(|(i, ty)| ((ty.task, ty.origin), i))
            .collect();
        Ok(Generator {
            popularity,
            cumulative,
            tasks: inst.tasks,
            type_of,
            origins,
            n_types: inst.types.len(),
            requests_seen: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// The task probability vector in effect at cumulative request index `l`.
    pub fn pmf_at(&self, l: u64) -> Vec<f64> {
        let shift = self.shift_at(l);
        let mut pmf = vec![0.0; self.tasks];
        for (i, slot) in pmf.iter_mut().enumerate() {
            let j = (i + shift) % self.tasks;
            let lo = if j == 0 { 0.0 } else { self.cumulative[j - 1] };
            *slot = self.cumulative[j] - lo;
        }
        pmf
    }

    fn shift_at(&self, l: u64) -> usize {
        match self.popularity {
            Popularity::Fixed => 0,
            Popularity::Sliding { window, shift } => match l.checked_div(window) {
                Some(periods) => (periods as usize).wrapping_mul(shift) % self.tasks,
                None => 0,
            },
        }
    }

    /// Draws `count` requests and aggregates them into per-type counts.
    pub fn next_batch(&mut self, count: u64) -> Vec<u64> {
        let mut batch = vec![0u64; self.n_types];
        for _ in 0..count {
            let shift = self.shift_at(self.requests_seen);
            let u: f64 = self.rng.gen();
            let j = self
                .cumulative
                .partition_point(|&c| c < u)
                .min(self.tasks - 1);
            // p(task = i) = p((i + shift) mod n)  =>  i = (j - shift) mod n
            let task = (j + self.tasks - shift % self.tasks) % self.tasks;
            let origins = &self.origins[task];
            let origin = origins[self.rng.gen_range(0..origins.len())];
            if let Some(&rho) = self.type_of.get(&(task, origin)) {
                batch[rho] += 1;
            }
            self.requests_seen += 1;
        }
        batch
    }
}

/// One slot of a trace: per-type batch counts plus optional capacity pins.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceSlot {
    /// (task, origin, count)
    pub requests: Vec<(usize, usize, u64)>,
    /// (task, origin, node, model, capacity)
    pub capacities: Vec<(usize, usize, usize, usize, u64)>,
}

/// A replayable sequence of slots.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub slots: Vec<TraceSlot>,
}

const TRACE_HEADER: &str =
    "# idn-trace v1: slot,[r:task:origin:count]...,[l:task:origin:node:model:cap]...";

impl Trace {
    pub fn save(&self, path: &Path) -> Result<(), WorkloadError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{TRACE_HEADER}")?;
        for (t, slot) in self.slots.iter().enumerate() {
            write!(out, "{}", t + 1)?;
            for &(task, origin, count) in &slot.requests {
                write!(out, ",r:{task}:{origin}:{count}")?;
            }
            for &(task, origin, node, model, cap) in &slot.capacities {
                write!(out, ",l:{task}:{origin}:{node}:{model}:{cap}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, WorkloadError> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut slots = Vec::new();
        for (line_no, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = line_no + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut fields = trimmed.split(',');
            let slot_no: usize =
                fields
                    .next()
                    .unwrap()
                    .parse()
                    .map_err(|_| WorkloadError::Parse {
                        line: line_no,
                        message: "bad slot index".into(),
                    })?;
            if slot_no != slots.len() + 1 {
                return Err(WorkloadError::Parse {
                    line: line_no,
                    message: format!("expected slot {}, found {slot_no}", slots.len() + 1),
                });
            }
            let mut slot = TraceSlot::default();
            for field in fields {
                let parts: Vec<&str> = field.split(':').collect();
                let nums = |expect: usize| -> Result<Vec<u64>, WorkloadError> {
                    if parts.len() != expect + 1 {
                        return Err(WorkloadError::Parse {
                            line: line_no,
                            message: format!("record '{field}' malformed"),
                        });
                    }
                    parts[1..]
                        .iter()
                        .map(|p| {
                            p.parse::<u64>().map_err(|_| WorkloadError::Parse {
                                line: line_no,
                                message: format!("bad number in '{field}'"),
                            })
                        })
                        .collect()
                };
                match parts.first() {
                    Some(&"r") => {
                        let v = nums(3)?;
                        slot.requests.push((v[0] as usize, v[1] as usize, v[2]));
                    }
                    Some(&"l") => {
                        let v = nums(5)?;
                        slot.capacities.push((
                            v[0] as usize,
                            v[1] as usize,
                            v[2] as usize,
                            v[3] as usize,
                            v[4],
                        ));
                    }
                    _ => {
                        return Err(WorkloadError::Parse {
                            line: line_no,
                            message: format!("unknown record '{field}'"),
                        })
                    }
                }
            }
            slots.push(slot);
        }
        Ok(Trace { slots })
    }

    /// Per-slot batch vectors aligned with the instance's request types.
    pub fn batches(&self, inst: &Instance) -> Result<Vec<Vec<u64>>, WorkloadError> {
        let lookup: HashMap<(usize, usize), usize> = inst
            .types
            .iter()
            .enumerate()
            .map(|(i, ty)| ((ty.task, ty.origin), i))
            .collect();
        self.slots
            .iter()
            .map(|slot| {
                let mut r = vec![0u64; inst.types.len()];
                for &(task, origin, count) in &slot.requests {
                    let rho = lookup
                        .get(&(task, origin))
                        .ok_or(WorkloadError::UnknownType { task, origin })?;
                    r[*rho] += count;
                }
                Ok(r)
            })
            .collect()
    }

    /// Applies a slot's capacity pins on top of a derived demand.
    pub fn apply_overrides(
        &self,
        inst: &Instance,
        slot: usize,
        demand: &mut SlotDemand,
    ) -> Result<(), WorkloadError> {
        for &(task, origin, node, model, cap) in &self.slots[slot].capacities {
            let rho = inst
                .types
                .iter()
                .position(|ty| ty.task == task && ty.origin == origin)
                .ok_or(WorkloadError::UnknownType { task, origin })?;
            let k = inst.rankings[rho]
                .kappa(node, model)
                .ok_or(WorkloadError::OffPath {
                    task,
                    origin,
                    node,
                    model,
                })?;
            demand.caps[rho][k - 1] = cap;
        }
        Ok(())
    }

    /// Builds a trace from pre-generated batches (no capacity pins).
    pub fn from_batches(inst: &Instance, batches: &[Vec<u64>]) -> Trace {
        let slots = batches
            .iter()
            .map(|r| TraceSlot {
                requests: r
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(rho, &c)| (inst.types[rho].task, inst.types[rho].origin, c))
                    .collect(),
                capacities: Vec::new(),
            })
            .collect();
        Trace { slots }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::instances::shared_capacity_example;

    #[test]
    fn zipf_pmf_frozen_values() {
        // computed independently at 30-digit precision
        let pmf = popularity_pmf(3, 1.2).unwrap();
        let expected = [0.587248784476, 0.25561488006, 0.157136335464];
        for (p, e) in pmf.iter().zip(expected) {
            assert!((p - e).abs() < 1e-10);
        }
        let total: f64 = pmf.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(pmf.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn degenerate_pmfs() {
        assert_eq!(popularity_pmf(1, 1.2).unwrap(), vec![1.0]);
        let flat = popularity_pmf(4, 0.0).unwrap();
        assert!(flat.iter().all(|&p| (p - 0.25).abs() < 1e-12));
        assert!(popularity_pmf(0, 1.2).is_err());
    }

    #[test]
    fn batches_are_deterministic_per_seed() {
        let (inst, _) = shared_capacity_example();
        let make = || {
            let mut setup = ChaCha8Rng::seed_from_u64(5);
            let origins = Generator::assign_origins(inst.tasks, &[0, 1], 2, &mut setup);
            Generator::new(&inst, Popularity::Fixed, 1.2, origins, 99).unwrap()
        };
        let mut a = make();
        let mut b = make();
        for _ in 0..5 {
            assert_eq!(a.next_batch(200), b.next_batch(200));
        }
    }

    #[test]
    fn zero_rate_gives_empty_batch() {
        let (inst, _) = shared_capacity_example();
        let mut g = Generator::new(&inst, Popularity::Fixed, 1.2, vec![vec![0, 1]], 1).unwrap();
        assert!(g.next_batch(0).iter().all(|&c| c == 0));
    }

    #[test]
    fn sliding_profile_shifts_after_window() {
        let (inst, _) = shared_capacity_example();
        // instance has 1 task; use a synthetic pmf check on 20 tasks instead
        let _ = inst;
        let pmf = popularity_pmf(20, 1.2).unwrap();
        let topology = crate::harness::instances::chain_topology(2, &[Some(1.0), None], &[0.0]);
        let inst20 = crate::instance::Instance::from_tables(crate::instance::RawTables {
            topology,
            sizes: vec![1.0; 2 * 20],
            delays: vec![1.0; 2 * 20],
            caps: vec![1_000; 2 * 20],
            accuracy: vec![0.9; 20],
            task_of: (0..20).collect(),
            tasks: 20,
            omega: (0..2 * 20).map(|i| i >= 20).collect(),
            alpha: 1.0,
            slot_secs: 60.0,
            origins: (0..20).map(|t| (t, 0)).collect(),
            explicit_paths: vec![],
        })
        .unwrap();
        let g = Generator::new(
            &inst20,
            Popularity::Sliding {
                window: 1_000,
                shift: 5,
            },
            1.2,
            vec![vec![0]; 20],
            3,
        )
        .unwrap();
        let shifted = g.pmf_at(1_000);
        for i in 0..20 {
            assert!((shifted[i] - pmf[(i + 5) % 20]).abs() < 1e-12);
        }
        // window = "infinity" degenerates to the fixed profile
        let g_inf = Generator::new(
            &inst20,
            Popularity::Sliding {
                window: u64::MAX,
                shift: 5,
            },
            1.2,
            vec![vec![0]; 20],
            3,
        )
        .unwrap();
        let fixed = g_inf.pmf_at(123_456_789);
        for i in 0..20 {
            assert!((fixed[i] - pmf[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_frequencies_match_pmf() {
        let (inst, _) = shared_capacity_example();
        let mut g = Generator::new(&inst, Popularity::Fixed, 1.2, vec![vec![0, 1]], 21).unwrap();
        let n = 100_000u64;
        let batch = g.next_batch(n);
        // single task split uniformly over two origins: each within 3 sigma of 1/2
        let sigma = (0.25 / n as f64).sqrt();
        for &count in &batch {
            assert!((count as f64 / n as f64 - 0.5).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn empirical_task_frequencies_follow_the_zipf_law() {
        // 20 tasks, one origin each; frequencies within 3 sigma of the pmf
        let topology = crate::harness::instances::chain_topology(2, &[Some(1.0), None], &[0.0]);
        let inst = crate::instance::Instance::from_tables(crate::instance::RawTables {
            topology,
            sizes: vec![1.0; 40],
            delays: vec![1.0; 40],
            caps: vec![1_000; 40],
            accuracy: vec![0.9; 20],
            task_of: (0..20).collect(),
            tasks: 20,
            omega: (0..40).map(|i| i >= 20).collect(),
            alpha: 1.0,
            slot_secs: 60.0,
            origins: (0..20).map(|t| (t, 0)).collect(),
            explicit_paths: vec![],
        })
        .unwrap();
        let pmf = popularity_pmf(20, 1.2).unwrap();
        let mut g = Generator::new(&inst, Popularity::Fixed, 1.2, vec![vec![0]; 20], 17).unwrap();
        let n = 200_000u64;
        let batch = g.next_batch(n);
        for (rho, &count) in batch.iter().enumerate() {
            let p = pmf[inst.types[rho].task];
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (count as f64 / n as f64 - p).abs() < 3.0 * sigma,
                "task {rho}: {count} of {n} vs p = {p}"
            );
        }
    }

    #[test]
    fn trace_round_trip_and_errors() {
        let (inst, _) = shared_capacity_example();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.trace");
        let trace = Trace {
            slots: vec![
                TraceSlot {
                    requests: vec![(0, 0, 7), (0, 1, 3)],
                    capacities: vec![(0, 0, 2, 0, 4)],
                },
                TraceSlot::default(),
            ],
        };
        trace.save(&path).unwrap();
        let loaded = Trace::load(&path).unwrap();
        assert_eq!(trace, loaded);
        let batches = loaded.batches(&inst).unwrap();
        assert_eq!(batches[0], vec![7, 3]);
        assert_eq!(batches[1], vec![0, 0]);

        // truncated record is a parse error with its line number
        std::fs::write(&path, "# h\n1,r:0:0\n").unwrap();
        match Trace::load(&path) {
            Err(WorkloadError::Parse { line: 2, .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_trace_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.trace");
        let trace = Trace::default();
        trace.save(&path).unwrap();
        assert_eq!(Trace::load(&path).unwrap(), trace);
    }
}
