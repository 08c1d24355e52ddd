//! Dense and sparse kernels with flop accounting.
//!
//! A multiply-add pair counts as 2 flops everywhere. Level-1 kernels cost
//! `2d`, `symv` costs `2d²`, and a sampled Gram contribution costs
//! `2d² + 2d` per dense column (`2·nnz² + 2·nnz` per sparse column).

use std::ops::Range;

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Column, Dataset};
use crate::{Error, Result};

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FlopMeter {
    flops: u64,
}

impl FlopMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, flops: u64) {
        self.flops += flops;
    }

    pub fn flops(&self) -> u64 {
        self.flops
    }
}

/// Sampled second-moment statistics: `G = (1/m) Σ x_i x_iᵀ` and
/// `R = (1/m) Σ x_i y_i` over a set of sampled columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GramPair {
    d: usize,
    /// Row-major `d × d`.
    g: Vec<f64>,
    r: Vec<f64>,
}

impl GramPair {
    pub fn zeros(d: usize) -> Self {
        GramPair {
            d,
            g: vec![0.0; d * d],
            r: vec![0.0; d],
        }
    }

    /// Words in the flattened payload `[G | R]`.
    pub fn words(d: usize) -> usize {
        d * d + d
    }

    /// Rebuilds a pair from a `[G | R]` payload slice.
    pub fn from_payload(d: usize, payload: &[f64]) -> Result<Self> {
        if payload.len() != Self::words(d) {
            return Err(Error::DimensionMismatch {
                expected: Self::words(d),
                found: payload.len(),
            });
        }
        Ok(GramPair {
            d,
            g: payload[..d * d].to_vec(),
            r: payload[d * d..].to_vec(),
        })
    }

    pub fn to_payload(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::words(self.d));
        out.extend_from_slice(&self.g);
        out.extend_from_slice(&self.r);
        out
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn g_entry(&self, row: usize, col: usize) -> f64 {
        self.g[row * self.d + col]
    }
}

/// The columns of `X` (and entries of `y`) held by one processor.
#[derive(Debug, Clone)]
pub struct LocalBlock<'a> {
    ds: &'a Dataset,
    rank: usize,
    cols: Range<usize>,
}

impl<'a> LocalBlock<'a> {
    pub fn new(ds: &'a Dataset, rank: usize, cols: Range<usize>) -> Self {
        LocalBlock { ds, rank, cols }
    }

    /// The whole dataset as a single block.
    pub fn whole(ds: &'a Dataset) -> Self {
        LocalBlock::new(ds, 0, 0..ds.n())
    }

    pub fn cols(&self) -> Range<usize> {
        self.cols.clone()
    }

    /// Words of `X` and `y` resident on this processor.
    pub fn resident_words(&self) -> usize {
        self.ds.stored_words(self.cols.clone()) + self.cols.len()
    }

    /// Partial Gram pair over `local` (ascending, owned) scaled by `1/m_global`.
    pub fn sampled_gram(
        &self,
        local: &[usize],
        m_global: usize,
        meter: &mut FlopMeter,
    ) -> Result<GramPair> {
        let mut payload = vec![0.0; GramPair::words(self.ds.d())];
        self.sampled_gram_into(local, m_global, &mut payload, meter)?;
        GramPair::from_payload(self.ds.d(), &payload)
    }

    /// Writes the `[G | R]` payload of [`Self::sampled_gram`] into `out`.
    pub fn sampled_gram_into(
        &self,
        local: &[usize],
        m_global: usize,
        out: &mut [f64],
        meter: &mut FlopMeter,
    ) -> Result<()> {
        let d = self.ds.d();
        if out.len() != GramPair::words(d) {
            return Err(Error::DimensionMismatch {
                expected: GramPair::words(d),
                found: out.len(),
            });
        }
        if m_global == 0 {
            return Err(Error::InvalidParameter("global sample size is zero".into()));
        }
        out.fill(0.0);
        let (g, r) = out.split_at_mut(d * d);
        let y = self.ds.y();

        for &i in local {
            if !self.cols.contains(&i) {
                return Err(Error::Ownership {
                    column: i,
                    rank: self.rank,
                    start: self.cols.start,
                    end: self.cols.end,
                });
            }
            let yi = y[i];
            match self.ds.column(i) {
                Column::Dense(x) => {
                    for (a, &xa) in x.iter().enumerate() {
                        let row = &mut g[a * d..(a + 1) * d];
                        for (gab, &xb) in row.iter_mut().zip(x) {
                            *gab += xa * xb;
                        }
                        r[a] += xa * yi;
                    }
                    meter.add(2 * (d * d + d) as u64);
                }
                Column::Sparse { rows, values } => {
                    for (&ra, &va) in rows.iter().zip(values) {
                        for (&rb, &vb) in rows.iter().zip(values) {
                            g[ra * d + rb] += va * vb;
                        }
                        r[ra] += va * yi;
                    }
                    let z = rows.len() as u64;
                    meter.add(2 * (z * z + z));
                }
            }
        }

        let m = m_global as f64;
        for v in out.iter_mut() {
            *v /= m;
        }
        Ok(())
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `A x` for a row-major symmetric `d × d` matrix.
pub fn symv(a: &[f64], x: &[f64], meter: &mut FlopMeter) -> Result<Vec<f64>> {
    let d = x.len();
    check_len(d * d, a.len())?;
    meter.add(2 * (d * d) as u64);
    Ok(a.chunks_exact(d.max(1))
        .take(d)
        .map(|row| row.iter().zip(x).map(|(aij, xj)| aij * xj).sum())
        .collect())
}

/// `y += alpha x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64], meter: &mut FlopMeter) -> Result<()> {
    check_len(y.len(), x.len())?;
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
    meter.add(2 * x.len() as u64);
    Ok(())
}

pub fn dot(x: &[f64], y: &[f64], meter: &mut FlopMeter) -> Result<f64> {
    check_len(x.len(), y.len())?;
    meter.add(2 * x.len() as u64);
    Ok(x.iter().zip(y).map(|(a, b)| a * b).sum())
}

pub fn norm2(x: &[f64], meter: &mut FlopMeter) -> f64 {
    meter.add(2 * x.len() as u64);
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn norm1(x: &[f64], meter: &mut FlopMeter) -> f64 {
    meter.add(2 * x.len() as u64);
    x.iter().map(|v| v.abs()).sum()
}

/// Largest eigenvalue of `(1/n) X Xᵀ` by power iteration.
///
/// Stops when the Rayleigh quotient changes by less than `1e-6` relative, or
/// after 1000 iterations. Never returns less than `1e-12`.
pub fn estimate_lipschitz(ds: &Dataset) -> f64 {
    const FLOOR: f64 = 1e-12;
    let d = ds.d();
    let mut meter = FlopMeter::new();
    let all: Vec<usize> = (0..ds.n()).collect();
    let gram = LocalBlock::whole(ds)
        .sampled_gram(&all, ds.n(), &mut meter)
        .expect("whole block owns every column");

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let nv = norm2(&v, &mut meter);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut rq = f64::NAN;
    for _ in 0..1000 {
        let u = symv(gram.g(), &v, &mut meter).expect("square gram");
        let next = dot(&v, &u, &mut meter).expect("same length");
        let nu = norm2(&u, &mut meter);
        if nu == 0.0 {
            return FLOOR;
        }
        let converged = ((next - rq) / next).abs() < 1e-6;
        rq = next;
        if converged {
            break;
        }
        v = u.into_iter().map(|x| x / nu).collect();
    }
    rq.max(FLOOR)
}
