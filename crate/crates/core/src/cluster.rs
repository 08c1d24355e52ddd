//! Deterministic virtual SPMD cluster with α-β-γ cost accounting.
//!
//! Programs alternate local phases (every processor computes on its own
//! columns) and collectives. Counters follow critical-path semantics: a
//! local phase charges the largest per-processor flop count, a collective
//! charges its round count once.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ColumnPartition;
use crate::linalg::FlopMeter;
use crate::{Error, Result};

/// Seconds per flop (`gamma`), per message (`alpha`) and per word (`beta`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachineParams {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl MachineParams {
    pub fn new(gamma: f64, alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("gamma", gamma), ("alpha", alpha), ("beta", beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be >= 0")));
            }
        }
        Ok(MachineParams { gamma, alpha, beta })
    }
}

impl Default for MachineParams {
    /// Roughly a commodity cluster: 1 GF/s, 1 µs latency, 1 GB/s for 8-byte words.
    fn default() -> Self {
        MachineParams {
            gamma: 1e-9,
            alpha: 1e-6,
            beta: 8e-9,
        }
    }
}

impl FromStr for MachineParams {
    type Err = Error;

    /// `gamma,alpha,beta`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::InvalidParameter(format!(
                "machine parameters must be gamma,alpha,beta; got {s:?}"
            )));
        }
        let mut v = [0.0; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad machine parameter {p:?}")))?;
        }
        MachineParams::new(v[0], v[1], v[2])
    }
}

/// Critical-path tallies: flops, message rounds, words moved, and peak
/// resident words on any one processor.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostCounters {
    pub flops: u64,
    pub messages: u64,
    pub words: u64,
    pub mem_peak: u64,
}

pub fn modeled_time(c: &CostCounters, m: &MachineParams) -> f64 {
    m.gamma * c.flops as f64 + m.alpha * c.messages as f64 + m.beta * c.words as f64
}

/// `ceil(log2 p)`; zero for a single processor.
pub fn tree_rounds(p: usize) -> u64 {
    if p <= 1 {
        0
    } else {
        (usize::BITS - (p - 1).leading_zeros()) as u64
    }
}

/// What a processor sees during a local phase. There is no way to reach
/// another processor from here; data only moves through collectives.
#[derive(Debug)]
pub struct ProcessorCtx {
    pub rank: usize,
    pub meter: FlopMeter,
}

pub struct VirtualCluster {
    partition: ColumnPartition,
    pool: Option<rayon::ThreadPool>,
    counters: CostCounters,
    resident: Vec<u64>,
    collectives: u64,
}

impl std::fmt::Debug for VirtualCluster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VirtualCluster")
            .field("p", &self.p())
            .field("threads", &self.threads())
            .field("counters", &self.counters)
            .finish()
    }
}

impl VirtualCluster {
    /// `threads <= 1` runs every processor on the calling thread.
    pub fn new(partition: ColumnPartition, threads: usize) -> Result<Self> {
        let pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        let p = partition.p();
        Ok(VirtualCluster {
            partition,
            pool,
            counters: CostCounters::default(),
            resident: vec![0; p],
            collectives: 0,
        })
    }

    pub fn p(&self) -> usize {
        self.partition.p()
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    pub fn partition(&self) -> &ColumnPartition {
        &self.partition
    }

    pub fn counters(&self) -> CostCounters {
        self.counters
    }

    /// Number of all-reduce invocations so far.
    pub fn collectives(&self) -> u64 {
        self.collectives
    }

    pub fn rounds(&self) -> u64 {
        tree_rounds(self.p())
    }

    /// Runs `f` on every processor. Results come back in rank order and the
    /// phase costs the maximum per-processor flop count.
    pub fn local_phase<T, F>(&mut self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&mut ProcessorCtx) -> Result<T> + Sync,
    {
        let run = |rank: usize| {
            let mut ctx = ProcessorCtx {
                rank,
                meter: FlopMeter::new(),
            };
            f(&mut ctx).map(|out| (out, ctx.meter.flops()))
        };
        let p = self.p();
        let outcomes: Vec<Result<(T, u64)>> = match &self.pool {
            Some(pool) => pool.install(|| (0..p).into_par_iter().map(run).collect()),
            None => (0..p).map(run).collect(),
        };
        let mut results = Vec::with_capacity(p);
        let mut max_flops = 0;
        for o in outcomes {
            let (out, flops) = o?;
            max_flops = max_flops.max(flops);
            results.push(out);
        }
        self.counters.flops += max_flops;
        Ok(results)
    }

    /// Work every processor repeats identically on replicated data; it is
    /// evaluated once and charged once.
    pub fn replicated_phase<T>(&mut self, f: impl FnOnce(&mut FlopMeter) -> Result<T>) -> Result<T> {
        let mut meter = FlopMeter::new();
        let out = f(&mut meter)?;
        self.counters.flops += meter.flops();
        Ok(out)
    }

    /// Recursive-doubling all-reduce of one equal-length payload per rank.
    ///
    /// The sum is associated as a left-to-right binary tree over ranks
    /// (padded to a power of two), so the result does not depend on which
    /// thread ran which processor. Costs `ceil(log2 P)` rounds, each moving
    /// the full payload and adding it element-wise.
    pub fn all_reduce_sum(&mut self, payloads: Vec<Vec<f64>>) -> Result<Vec<f64>> {
        let p = self.p();
        if payloads.len() != p {
            return Err(Error::ContractViolation(format!(
                "collective needs one contribution per processor: got {}, P = {p}",
                payloads.len()
            )));
        }
        let s = payloads[0].len();
        if let Some((rank, bad)) = payloads.iter().enumerate().find(|(_, v)| v.len() != s) {
            return Err(Error::PayloadMismatch {
                rank,
                expected: s,
                found: bad.len(),
            });
        }

        let mut level: Vec<Option<Vec<f64>>> = payloads.into_iter().map(Some).collect();
        level.resize(p.next_power_of_two(), None);
        while level.len() > 1 {
            level = level
                .chunks_mut(2)
                .map(|pair| match (pair[0].take(), pair[1].take()) {
                    (Some(mut a), Some(b)) => {
                        a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                        Some(a)
                    }
                    (a, b) => a.or(b),
                })
                .collect();
        }

        let rounds = self.rounds();
        self.counters.messages += rounds;
        self.counters.words += s as u64 * rounds;
        self.counters.flops += s as u64 * rounds;
        self.collectives += 1;
        Ok(level.pop().flatten().unwrap_or_default())
    }

    /// Records `words` newly resident on `rank`.
    pub fn alloc(&mut self, rank: usize, words: usize) {
        self.resident[rank] += words as u64;
        self.counters.mem_peak = self.counters.mem_peak.max(self.resident[rank]);
    }

    /// Records a buffer replicated on every processor.
    pub fn alloc_all(&mut self, words: usize) {
        for rank in 0..self.p() {
            self.alloc(rank, words);
        }
    }

    pub fn free_all(&mut self, words: usize) {
        for r in self.resident.iter_mut() {
            *r = r.saturating_sub(words as u64);
        }
    }

    pub fn resident(&self, rank: usize) -> u64 {
        self.resident[rank]
    }
}

/// Runs an SPMD program to completion and returns its result together with
/// the counters it accumulated.
///
/// The program only reaches other processors through
/// [`VirtualCluster::all_reduce_sum`]; local-phase closures get a
/// [`ProcessorCtx`] with no communication handle, and the cluster stays
/// mutably borrowed for the whole phase.
pub fn spmd_execute<R>(
    cluster: &mut VirtualCluster,
    program: impl FnOnce(&mut VirtualCluster) -> Result<R>,
) -> Result<(R, CostCounters)> {
    let before = cluster.counters();
    let out = program(cluster)?;
    let after = cluster.counters();
    Ok((
        out,
        CostCounters {
            flops: after.flops - before.flops,
            messages: after.messages - before.messages,
            words: after.words - before.words,
            mem_peak: after.mem_peak,
        },
    ))
}
