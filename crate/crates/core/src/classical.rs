//! SFISTA and SPNM in their classical form: one sampled Gram pair is
//! all-reduced at every iteration, then every processor applies the same
//! update redundantly.
//!
//! The [`Run`] engine here also drives the k-step solvers in [`crate::ca`];
//! the two families differ only in how the Gram pairs reach the update.

use serde::{Deserialize, Serialize};

use crate::cluster::{modeled_time, CostCounters, MachineParams, VirtualCluster};
use crate::dataset::{Dataset, Sampler};
use crate::linalg::{axpy, estimate_lipschitz, FlopMeter, GramPair, LocalBlock};
use crate::prox::{relative_solution_error, sampled_gradient, soft_threshold_in_place, Iterate, LassoProblem};
use crate::{Error, Result};

/// Where SFISTA evaluates the sampled gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GradientPoint {
    /// At the extrapolated point `v_j` (standard FISTA).
    #[default]
    Auxiliary,
    /// At the previous iterate `w_{j−1}`, then applied at `v_j`.
    PreviousIterate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StoppingMode {
    /// Run exactly `iters` iterations.
    #[default]
    Iterations,
    /// Stop at the first iteration whose relative solution error drops below `tol`.
    Tolerance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Sfista,
    Spnm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Fraction of columns sampled per iteration.
    pub b: f64,
    /// Fixed step; `None` uses `1 / L̂` from power iteration.
    pub step: Option<f64>,
    /// Outer iteration budget `T`.
    pub iters: usize,
    /// Inner ISTA iterations `Q` (SPNM only).
    pub inner: usize,
    /// Iterations per communication round (k-step solvers only).
    pub k: usize,
    pub seed: u64,
    pub tol: Option<f64>,
    pub stopping: StoppingMode,
    pub gradient_point: GradientPoint,
    pub momentum: bool,
    /// Keep every iterate in the trace.
    pub record_iterates: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            b: 1.0,
            step: None,
            iters: 100,
            inner: 10,
            k: 1,
            seed: 0,
            tol: None,
            stopping: StoppingMode::Iterations,
            gradient_point: GradientPoint::Auxiliary,
            momentum: true,
            record_iterates: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.b > 0.0 && self.b <= 1.0) {
            return bad(format!("b = {} outside (0, 1]", self.b));
        }
        if self.iters == 0 {
            return bad("iteration budget must be at least 1".into());
        }
        if self.inner == 0 {
            return bad("inner iteration count must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if let Some(t) = self.step {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("step {t} must be positive"));
            }
        }
        match (self.stopping, self.tol) {
            (StoppingMode::Tolerance, None) => bad("tolerance stopping needs tol".into()),
            (_, Some(tol)) if tol.is_nan() || tol <= 0.0 => bad(format!("tol {tol} must be positive")),
            _ => Ok(()),
        }
    }
}

/// Per-update constants shared by every iteration of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub step: f64,
    pub lambda: f64,
    pub inner: usize,
    pub gradient_point: GradientPoint,
    pub momentum: bool,
}

/// One SFISTA update from `w_{j−1}` to `w_j` using the Gram pair sampled
/// for iteration `j`.
///
/// `v_j = w_{j−1} + β_j (w_{j−1} − w_{j−2})` with `β_j = max(0, (j−2)/j)`,
/// then `w_j = S_{λt}(v_j − t ∇f)`.
pub fn sfista_step(
    gram: &GramPair,
    it: &mut Iterate,
    params: &StepParams,
    meter: &mut FlopMeter,
) -> Result<()> {
    let j = it.j + 1;
    let beta = if params.momentum && j >= 2 {
        (j as f64 - 2.0) / j as f64
    } else {
        0.0
    };
    let mut delta: Vec<f64> = it.w.iter().zip(&it.w_prev).map(|(a, b)| a - b).collect();
    meter.add(it.w.len() as u64);
    let mut v = it.w.clone();
    axpy(beta, &delta, &mut v, meter)?;

    let at = match params.gradient_point {
        GradientPoint::Auxiliary => &v,
        GradientPoint::PreviousIterate => &it.w,
    };
    let grad = sampled_gradient(gram, at, meter)?;
    delta.copy_from_slice(&v);
    axpy(-params.step, &grad, &mut delta, meter)?;
    soft_threshold_in_place(&mut delta, params.lambda * params.step, meter)?;
    it.v = v;
    it.advance(delta)
}

/// One SPNM update: `Q` ISTA steps on the sampled quadratic model, warm
/// started at `w_{j−1}`.
///
/// The model gradient `∇f(w_{j−1}) + G (z − w_{j−1})` equals `G z − R`
/// because the Hessian approximation is the sampled Gram block itself.
pub fn spnm_step(
    gram: &GramPair,
    it: &mut Iterate,
    params: &StepParams,
    meter: &mut FlopMeter,
) -> Result<()> {
    let mut z = it.w.clone();
    for _ in 0..params.inner {
        let grad = sampled_gradient(gram, &z, meter)?;
        axpy(-params.step, &grad, &mut z, meter)?;
        soft_threshold_in_place(&mut z, params.lambda * params.step, meter)?;
    }
    it.v.copy_from_slice(&it.w);
    it.advance(z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub rel_sol_err: Option<f64>,
    pub flops: u64,
    pub messages: u64,
    pub words: u64,
    pub mem_peak: u64,
    pub modeled_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    /// `w_1, w_2, ...` when `record_iterates` is set.
    pub iterates: Vec<Vec<f64>>,
    pub final_w: Vec<f64>,
    pub counters: CostCounters,
    /// All-reduce invocations.
    pub collectives: u64,
    pub step: f64,
}

impl RunTrace {
    /// First iteration whose relative solution error is below `tol`.
    pub fn first_below(&self, tol: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.rel_sol_err.is_some_and(|e| e < tol))
            .map(|r| r.iter)
    }
}

/// Solver state for one run on a virtual cluster.
///
/// After a failed [`Run::execute_classical`] the rows produced so far stay readable.
#[derive(Debug)]
pub struct Run<'a> {
    problem: LassoProblem<'a>,
    config: SolverConfig,
    method: Method,
    machine: MachineParams,
    reference: Option<&'a [f64]>,
    sampler: Sampler,
    params: StepParams,
    iterate: Iterate,
    trace: RunTrace,
    done: bool,
}

impl<'a> Run<'a> {
    pub fn new(
        problem: LassoProblem<'a>,
        config: &SolverConfig,
        method: Method,
        machine: MachineParams,
        reference: Option<&'a [f64]>,
    ) -> Result<Self> {
        config.validate()?;
        let ds = problem.dataset();
        if let Some(r) = reference {
            if r.len() != ds.d() {
                return Err(Error::DimensionMismatch {
                    expected: ds.d(),
                    found: r.len(),
                });
            }
        }
        if config.stopping == StoppingMode::Tolerance && reference.is_none() {
            return Err(Error::InvalidParameter(
                "tolerance stopping needs a reference solution".into(),
            ));
        }
        let sampler = Sampler::new(config.seed, config.b, ds.n())?;
        let step = config.step.unwrap_or_else(|| 1.0 / estimate_lipschitz(ds));
        let params = StepParams {
            step,
            lambda: problem.lambda(),
            inner: config.inner,
            gradient_point: config.gradient_point,
            momentum: config.momentum,
        };
        Ok(Run {
            problem,
            config: config.clone(),
            method,
            machine,
            reference,
            sampler,
            params,
            iterate: Iterate::zeros(ds.d()),
            trace: RunTrace {
                step,
                ..RunTrace::default()
            },
            done: false,
        })
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.problem.dataset()
    }

    pub fn sampler(&self) -> &Sampler {
        &self.sampler
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iterate.j
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn trace(&self) -> &RunTrace {
        &self.trace
    }

    pub fn into_trace(self) -> RunTrace {
        self.trace
    }

    /// Charges each processor for its columns of `X` and `y`, the Gram
    /// buffer of `buffer_words`, and four length-`d` work vectors.
    pub(crate) fn reserve_memory(&self, cluster: &mut VirtualCluster, buffer_words: usize) {
        let ds = self.dataset();
        for rank in 0..cluster.p() {
            let local = LocalBlock::new(ds, rank, cluster.partition().range(rank));
            cluster.alloc(rank, local.resident_words());
        }
        cluster.alloc_all(buffer_words + 4 * ds.d());
    }

    /// Applies the update for the next global iteration with `gram` and
    /// records a trace row. Returns `true` once the run should stop.
    pub(crate) fn update(&mut self, cluster: &mut VirtualCluster, gram: &GramPair) -> Result<bool> {
        let method = self.method;
        let params = self.params;
        let it = &mut self.iterate;
        cluster.replicated_phase(|meter| match method {
            Method::Sfista => sfista_step(gram, it, &params, meter),
            Method::Spnm => spnm_step(gram, it, &params, meter),
        })?;

        let rel = match self.reference {
            Some(r) => relative_solution_error(&self.iterate.w, r).ok(),
            None => None,
        };
        let counters = cluster.counters();
        self.trace.rows.push(TraceRow {
            iter: self.iterate.j,
            objective: self.problem.objective(&self.iterate.w)?,
            rel_sol_err: rel,
            flops: counters.flops,
            messages: counters.messages,
            words: counters.words,
            mem_peak: counters.mem_peak,
            modeled_time: modeled_time(&counters, &self.machine),
        });
        if self.config.record_iterates {
            self.trace.iterates.push(self.iterate.w.clone());
        }
        self.trace.final_w.clone_from(&self.iterate.w);
        self.trace.counters = counters;
        self.trace.collectives = cluster.collectives();

        let converged = self.config.stopping == StoppingMode::Tolerance
            && matches!((rel, self.config.tol), (Some(e), Some(tol)) if e < tol);
        self.done = converged || self.iterate.j >= self.config.iters;
        Ok(self.done)
    }

    /// Classical schedule: one Gram all-reduce per iteration.
    pub fn execute_classical(&mut self, cluster: &mut VirtualCluster) -> Result<()> {
        let d = self.dataset().d();
        self.reserve_memory(cluster, GramPair::words(d));
        while !self.done {
            let j = self.iterate.j + 1;
            let gram = exchange_gram(self.dataset(), &self.sampler, j as u64, cluster)?;
            self.update(cluster, &gram)?;
        }
        Ok(())
    }
}

/// Every processor accumulates its share of iteration `j`'s sample, then
/// the partial pairs are all-reduced into the replicated Gram pair.
pub fn exchange_gram(
    ds: &Dataset,
    sampler: &Sampler,
    iteration: u64,
    cluster: &mut VirtualCluster,
) -> Result<GramPair> {
    let sample = sampler.sample(iteration);
    let m = sampler.m();
    let partition = cluster.partition().clone();
    let partials = cluster.local_phase(|ctx| {
        let local = LocalBlock::new(ds, ctx.rank, partition.range(ctx.rank));
        let mut payload = vec![0.0; GramPair::words(ds.d())];
        local.sampled_gram_into(partition.owned(ctx.rank, &sample), m, &mut payload, &mut ctx.meter)?;
        Ok(payload)
    })?;
    let reduced = cluster.all_reduce_sum(partials)?;
    GramPair::from_payload(ds.d(), &reduced)
}

/// Runs classical SFISTA or SPNM to completion.
pub fn run_classical(
    problem: LassoProblem<'_>,
    config: &SolverConfig,
    method: Method,
    cluster: &mut VirtualCluster,
    machine: MachineParams,
    reference: Option<&[f64]>,
) -> Result<RunTrace> {
    let mut run = Run::new(problem, config, method, machine, reference)?;
    run.execute_classical(cluster)?;
    Ok(run.into_trace())
}
