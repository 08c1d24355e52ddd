//! High-accuracy reference optimum used for relative solution errors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg::{estimate_lipschitz, symv, FlopMeter, LocalBlock};
use crate::prox::{kkt_violation, shrink, LassoProblem};
use crate::{Error, Result};

pub const REFERENCE_TOL: f64 = 1e-8;
pub const REFERENCE_MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub w_op: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl ReferenceSolution {
    pub fn is_zero(&self) -> bool {
        self.w_op.iter().all(|&v| v == 0.0)
    }
}

/// Full-batch FISTA with `t = 1/L̂` until the KKT residual is at most
/// [`REFERENCE_TOL`].
pub fn solve_reference(problem: &LassoProblem<'_>) -> Result<ReferenceSolution> {
    solve_reference_with(problem, REFERENCE_TOL, REFERENCE_MAX_ITERS)
}

pub fn solve_reference_with(
    problem: &LassoProblem<'_>,
    tol: f64,
    max_iters: usize,
) -> Result<ReferenceSolution> {
    let ds = problem.dataset();
    let d = ds.d();
    let lambda = problem.lambda();
    let mut meter = FlopMeter::new();
    let all: Vec<usize> = (0..ds.n()).collect();
    // Full-batch gradient is C w − r with C = XXᵀ/n, r = Xy/n.
    let gram = LocalBlock::whole(ds).sampled_gram(&all, ds.n(), &mut meter)?;
    let grad_at = |w: &[f64], meter: &mut FlopMeter| -> Result<Vec<f64>> {
        let mut g = symv(gram.g(), w, meter)?;
        g.iter_mut().zip(gram.r()).for_each(|(gi, ri)| *gi -= ri);
        Ok(g)
    };

    let step = 1.0 / estimate_lipschitz(ds);
    let mut w = vec![0.0; d];
    let mut w_prev = w.clone();
    let mut theta = 1.0f64;
    let mut residual = f64::INFINITY;

    for iter in 0..=max_iters {
        let g = grad_at(&w, &mut meter)?;
        residual = kkt_violation(&g, &w, lambda);
        if residual <= tol {
            let certified = problem.kkt_residual(&w)?;
            if certified <= tol {
                return Ok(ReferenceSolution {
                    w_op: w,
                    kkt_residual: certified,
                    iterations: iter,
                });
            }
        }
        if iter == max_iters {
            break;
        }

        let theta_next = (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0;
        let beta = (theta - 1.0) / theta_next;
        theta = theta_next;
        let v: Vec<f64> = w.iter().zip(&w_prev).map(|(a, b)| a + beta * (a - b)).collect();
        let gv = grad_at(&v, &mut meter)?;
        let next: Vec<f64> = v
            .iter()
            .zip(&gv)
            .map(|(vi, gi)| shrink(vi - step * gi, lambda * step))
            .collect();
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { iteration: iter + 1 });
        }
        w_prev = std::mem::replace(&mut w, next);
    }
    Err(Error::ReferenceNotConverged {
        iterations: max_iters,
        residual,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    fingerprint: String,
    lambda: f64,
    solution: ReferenceSolution,
}

/// Reuses a cached reference when both the dataset fingerprint and λ match;
/// otherwise solves and rewrites the cache.
pub fn cached_reference(problem: &LassoProblem<'_>, cache: Option<&Path>) -> Result<ReferenceSolution> {
    let Some(path) = cache else {
        return solve_reference(problem);
    };
    let fingerprint = problem.dataset().fingerprint();
    if let Ok(text) = fs::read_to_string(path) {
        if let Ok(entry) = serde_json::from_str::<CacheEntry>(&text) {
            if entry.fingerprint == fingerprint
                && entry.lambda.to_bits() == problem.lambda().to_bits()
                && entry.solution.w_op.len() == problem.d()
            {
                return Ok(entry.solution);
            }
        }
    }
    let solution = solve_reference(problem)?;
    let entry = CacheEntry {
        fingerprint,
        lambda: problem.lambda(),
        solution,
    };
    fs::write(path, serde_json::to_string_pretty(&entry)?)?;
    Ok(entry.solution)
}
