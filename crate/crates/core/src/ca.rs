//! k-step communication-avoiding SFISTA and SPNM.
//!
//! Every `k` iterations each processor accumulates the partial Gram pairs
//! for the next `k` samples, the `k (d² + d)`-word concatenation goes through
//! one all-reduce, and the `k` updates then run with no communication.
//! Because block `j` of round `i` uses the sample of global iteration
//! `i k + j` and every entry is reduced through the same tree, the iterates
//! are those of the classical solver.

use crate::classical::{Method, Run, RunTrace, SolverConfig};
use crate::cluster::{MachineParams, VirtualCluster};
use crate::dataset::{Dataset, Sampler};
use crate::linalg::{GramPair, LocalBlock};
use crate::prox::LassoProblem;
use crate::{Error, Result};

/// The replicated `G = [G_1 | ... | G_k]`, `R = [R_1 | ... | R_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramBlocks {
    d: usize,
    blocks: Vec<GramPair>,
}

impl GramBlocks {
    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Block for the `j`-th iteration of the round, 1-based.
    pub fn block(&self, j: usize) -> &GramPair {
        &self.blocks[j - 1]
    }

    pub fn blocks(&self) -> &[GramPair] {
        &self.blocks
    }

    pub fn payload_words(d: usize, k: usize) -> usize {
        k * GramPair::words(d)
    }
}

/// Builds and all-reduces the Gram blocks for round `outer` (0-based): block
/// `j` in `1..=count` uses the sample of global iteration `outer·k + j`.
/// `count` is `k` except for a trailing partial round.
pub fn build_gram_blocks(
    ds: &Dataset,
    sampler: &Sampler,
    outer: usize,
    k: usize,
    count: usize,
    cluster: &mut VirtualCluster,
) -> Result<GramBlocks> {
    if k == 0 || count == 0 || count > k {
        return Err(Error::InvalidParameter(format!(
            "block count {count} must be in 1..={k}"
        )));
    }
    let d = ds.d();
    let first = (outer * k + 1) as u64;
    let samples: Vec<Vec<usize>> = (0..count as u64).map(|j| sampler.sample(first + j)).collect();
    let m = sampler.m();
    let words = GramPair::words(d);
    let partition = cluster.partition().clone();

    let partials = cluster.local_phase(|ctx| {
        let local = LocalBlock::new(ds, ctx.rank, partition.range(ctx.rank));
        let mut payload = vec![0.0; count * words];
        for (sample, out) in samples.iter().zip(payload.chunks_exact_mut(words)) {
            local.sampled_gram_into(partition.owned(ctx.rank, sample), m, out, &mut ctx.meter)?;
        }
        Ok(payload)
    })?;
    let reduced = cluster.all_reduce_sum(partials)?;
    let blocks = reduced
        .chunks_exact(words)
        .map(|c| GramPair::from_payload(d, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(GramBlocks { d, blocks })
}

impl Run<'_> {
    /// k-step schedule: one all-reduce per `k` iterations.
    pub fn execute_k_step(&mut self, cluster: &mut VirtualCluster) -> Result<()> {
        let k = self.config().k;
        let total = self.config().iters;
        let d = self.dataset().d();
        self.reserve_memory(cluster, GramBlocks::payload_words(d, k.min(total)));
        let mut outer = 0;
        while !self.is_done() {
            let count = k.min(total - outer * k);
            let blocks = build_gram_blocks(self.dataset(), self.sampler(), outer, k, count, cluster)?;
            for gram in blocks.blocks() {
                if self.update(cluster, gram)? {
                    break;
                }
            }
            outer += 1;
        }
        Ok(())
    }
}

fn run_k_step(
    problem: LassoProblem<'_>,
    config: &SolverConfig,
    method: Method,
    cluster: &mut VirtualCluster,
    machine: MachineParams,
    reference: Option<&[f64]>,
) -> Result<RunTrace> {
    let mut run = Run::new(problem, config, method, machine, reference)?;
    run.execute_k_step(cluster)?;
    Ok(run.into_trace())
}

pub fn ca_sfista_run(
    problem: LassoProblem<'_>,
    config: &SolverConfig,
    cluster: &mut VirtualCluster,
    machine: MachineParams,
    reference: Option<&[f64]>,
) -> Result<RunTrace> {
    run_k_step(problem, config, Method::Sfista, cluster, machine, reference)
}

pub fn ca_spnm_run(
    problem: LassoProblem<'_>,
    config: &SolverConfig,
    cluster: &mut VirtualCluster,
    machine: MachineParams,
    reference: Option<&[f64]>,
) -> Result<RunTrace> {
    run_k_step(problem, config, Method::Spnm, cluster, machine, reference)
}
