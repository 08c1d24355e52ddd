//! LASSO objective `F(w) = (1/2n)‖Xᵀw − y‖² + λ‖w‖₁` and its pieces.

use crate::dataset::Dataset;
use crate::linalg::{symv, FlopMeter, GramPair};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LassoProblem<'a> {
    dataset: &'a Dataset,
    lambda: f64,
}

impl<'a> LassoProblem<'a> {
    pub fn new(dataset: &'a Dataset, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda {lambda} must be >= 0")));
        }
        Ok(LassoProblem { dataset, lambda })
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn d(&self) -> usize {
        self.dataset.d()
    }

    fn check_dim(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                found: w.len(),
            });
        }
        Ok(())
    }

    /// `x_iᵀ w − y_i` for every sample.
    fn residuals(&self, w: &[f64]) -> Vec<f64> {
        let ds = self.dataset;
        (0..ds.n())
            .map(|i| {
                let xw: f64 = ds.column(i).entries().map(|(r, v)| v * w[r]).sum();
                xw - ds.y()[i]
            })
            .collect()
    }

    pub fn objective(&self, w: &[f64]) -> Result<f64> {
        self.check_dim(w)?;
        let n = self.dataset.n() as f64;
        let smooth = self.residuals(w).iter().map(|r| r * r).sum::<f64>() / (2.0 * n);
        Ok(smooth + self.lambda * w.iter().map(|v| v.abs()).sum::<f64>())
    }

    /// `(1/n)(X Xᵀ w − X y)` evaluated through the residual `Xᵀw − y`.
    pub fn full_gradient(&self, w: &[f64], meter: &mut FlopMeter) -> Result<Vec<f64>> {
        self.check_dim(w)?;
        let ds = self.dataset;
        let mut grad = vec![0.0; self.d()];
        for (i, res) in self.residuals(w).into_iter().enumerate() {
            let col = ds.column(i);
            for (r, v) in col.entries() {
                grad[r] += v * res;
            }
            meter.add(4 * col.stored() as u64);
        }
        let n = ds.n() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(grad)
    }

    /// Largest |gradient at zero|; `w = 0` is optimal for any λ at or above it.
    pub fn lambda_max(dataset: &Dataset) -> f64 {
        let n = dataset.n() as f64;
        let mut xy = vec![0.0; dataset.d()];
        for i in 0..dataset.n() {
            for (r, v) in dataset.column(i).entries() {
                xy[r] += v * dataset.y()[i];
            }
        }
        xy.iter().map(|v| (v / n).abs()).fold(0.0, f64::max)
    }

    /// Largest violation of the subgradient optimality condition at `w`.
    pub fn kkt_residual(&self, w: &[f64]) -> Result<f64> {
        let grad = self.full_gradient(w, &mut FlopMeter::new())?;
        Ok(kkt_violation(&grad, w, self.lambda))
    }
}

/// KKT residual given the smooth gradient at `w`.
pub fn kkt_violation(grad: &[f64], w: &[f64], lambda: f64) -> f64 {
    grad.iter()
        .zip(w)
        .map(|(&g, &wi)| {
            if wi != 0.0 {
                (g + lambda * wi.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// `G w − R`: the stochastic gradient from an already normalised Gram pair.
pub fn sampled_gradient(gram: &GramPair, w: &[f64], meter: &mut FlopMeter) -> Result<Vec<f64>> {
    if w.len() != gram.d() {
        return Err(Error::DimensionMismatch {
            expected: gram.d(),
            found: w.len(),
        });
    }
    let mut g = symv(gram.g(), w, meter)?;
    for (gi, ri) in g.iter_mut().zip(gram.r()) {
        *gi -= ri;
    }
    meter.add(w.len() as u64);
    Ok(g)
}

/// Scalar shrinkage; `|x| <= threshold` maps to exactly zero.
#[inline]
pub fn shrink(x: f64, threshold: f64) -> f64 {
    if x > threshold {
        x - threshold
    } else if x < -threshold {
        x + threshold
    } else {
        0.0
    }
}

pub fn soft_threshold(v: &[f64], threshold: f64) -> Result<Vec<f64>> {
    check_threshold(threshold)?;
    Ok(v.iter().map(|&x| shrink(x, threshold)).collect())
}

pub fn soft_threshold_in_place(v: &mut [f64], threshold: f64, meter: &mut FlopMeter) -> Result<()> {
    check_threshold(threshold)?;
    v.iter_mut().for_each(|x| *x = shrink(*x, threshold));
    meter.add(v.len() as u64);
    Ok(())
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "soft threshold {threshold} must be >= 0"
        )));
    }
    Ok(())
}

/// `‖w − w_op‖ / ‖w_op‖`
pub fn relative_solution_error(w: &[f64], w_op: &[f64]) -> Result<f64> {
    if w.len() != w_op.len() {
        return Err(Error::DimensionMismatch {
            expected: w_op.len(),
            found: w.len(),
        });
    }
    let denom = w_op.iter().map(|v| v * v).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedReference);
    }
    let num = w
        .iter()
        .zip(w_op)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// Optimisation state shared by every solver.
///
/// `w_prev` is `w_{j−1}` while `w` is `w_j`; both start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub w: Vec<f64>,
    pub w_prev: Vec<f64>,
    pub v: Vec<f64>,
    pub j: usize,
}

impl Iterate {
    pub fn zeros(d: usize) -> Self {
        Iterate {
            w: vec![0.0; d],
            w_prev: vec![0.0; d],
            v: vec![0.0; d],
            j: 0,
        }
    }

    /// Installs `w_j` as the new current iterate.
    pub fn advance(&mut self, next: Vec<f64>) -> Result<()> {
        let j = self.j + 1;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { iteration: j });
        }
        self.w_prev = std::mem::replace(&mut self.w, next);
        self.j = j;
        Ok(())
    }
}
