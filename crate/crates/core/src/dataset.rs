//! Feature matrix storage, LIBSVM ingestion, synthetic problems, column
//! partitioning and the shared column sampler.
//!
//! `X` is `d × n` with features as rows and samples as columns, stored
//! column-major. A LIBSVM file therefore contributes one column per line.

use std::io::{BufRead, Write};
use std::ops::Range;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Column-major storage of `X`.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    /// `d * n` values, column `i` at `[i*d, (i+1)*d)`.
    Dense(Vec<f64>),
    /// Compressed sparse columns with strictly increasing row indices per column.
    Sparse {
        col_ptr: Vec<usize>,
        rows: Vec<usize>,
        values: Vec<f64>,
    },
}

/// One column of `X`.
#[derive(Debug, Clone, Copy)]
pub enum Column<'a> {
    Dense(&'a [f64]),
    Sparse { rows: &'a [usize], values: &'a [f64] },
}

impl<'a> Column<'a> {
    /// Stored entries as `(row, value)`; dense columns yield every row.
    pub fn entries(self) -> Box<dyn Iterator<Item = (usize, f64)> + 'a> {
        match self {
            Column::Dense(v) => Box::new(v.iter().copied().enumerate()),
            Column::Sparse { rows, values } => {
                Box::new(rows.iter().copied().zip(values.iter().copied()))
            }
        }
    }

    pub fn stored(self) -> usize {
        match self {
            Column::Dense(v) => v.len(),
            Column::Sparse { rows, .. } => rows.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    n: usize,
    features: Features,
    y: Vec<f64>,
}

impl Dataset {
    pub fn dense(d: usize, n: usize, values: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        check_shape(d, n, &y)?;
        if values.len() != d * n {
            return Err(Error::DimensionMismatch {
                expected: d * n,
                found: values.len(),
            });
        }
        Ok(Dataset {
            d,
            n,
            features: Features::Dense(values),
            y,
        })
    }

    /// Builds a dataset from rows given in the natural `d × n` layout.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let d = rows.len();
        let n = y.len();
        let mut values = vec![0.0; d * n];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            for (c, &v) in row.iter().enumerate() {
                values[c * d + r] = v;
            }
        }
        Dataset::dense(d, n, values, y)
    }

    pub fn sparse(
        d: usize,
        n: usize,
        col_ptr: Vec<usize>,
        rows: Vec<usize>,
        values: Vec<f64>,
        y: Vec<f64>,
    ) -> Result<Self> {
        check_shape(d, n, &y)?;
        if col_ptr.len() != n + 1 {
            return Err(Error::DimensionMismatch {
                expected: n + 1,
                found: col_ptr.len(),
            });
        }
        if rows.len() != values.len() || col_ptr[0] != 0 || col_ptr[n] != rows.len() {
            return Err(Error::InvalidParameter(
                "inconsistent sparse column layout".into(),
            ));
        }
        for c in 0..n {
            let (lo, hi) = (col_ptr[c], col_ptr[c + 1]);
            if lo > hi {
                return Err(Error::InvalidParameter(format!(
                    "column pointer decreases at column {c}"
                )));
            }
            let col = &rows[lo..hi];
            if col.windows(2).any(|w| w[0] >= w[1]) || col.last().is_some_and(|&r| r >= d) {
                return Err(Error::InvalidParameter(format!(
                    "bad row indices in column {c}"
                )));
            }
        }
        Ok(Dataset {
            d,
            n,
            features: Features::Sparse {
                col_ptr,
                rows,
                values,
            },
            y,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.features, Features::Sparse { .. })
    }

    pub fn column(&self, i: usize) -> Column<'_> {
        match &self.features {
            Features::Dense(v) => Column::Dense(&v[i * self.d..(i + 1) * self.d]),
            Features::Sparse {
                col_ptr,
                rows,
                values,
            } => {
                let r = col_ptr[i]..col_ptr[i + 1];
                Column::Sparse {
                    rows: &rows[r.clone()],
                    values: &values[r],
                }
            }
        }
    }

    /// Stored entries in column `i`; `d` for dense storage.
    pub fn column_nnz(&self, i: usize) -> usize {
        self.column(i).stored()
    }

    pub fn nnz(&self) -> usize {
        match &self.features {
            Features::Dense(v) => v.len(),
            Features::Sparse { values, .. } => values.len(),
        }
    }

    /// Words of `X` held by whoever owns `cols`.
    pub fn stored_words(&self, cols: Range<usize>) -> usize {
        cols.map(|c| self.column_nnz(c)).sum()
    }

    /// Column-major dense copy of `X`.
    pub fn dense_values(&self) -> Vec<f64> {
        match &self.features {
            Features::Dense(v) => v.clone(),
            Features::Sparse { .. } => {
                let mut out = vec![0.0; self.d * self.n];
                for c in 0..self.n {
                    for (r, v) in self.column(c).entries() {
                        out[c * self.d + r] = v;
                    }
                }
                out
            }
        }
    }

    pub fn to_dense(&self) -> Dataset {
        Dataset {
            d: self.d,
            n: self.n,
            features: Features::Dense(self.dense_values()),
            y: self.y.clone(),
        }
    }

    /// `X` entry at `(row, col)`.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        match self.column(col) {
            Column::Dense(v) => v[row],
            Column::Sparse { rows, values } => rows
                .binary_search(&row)
                .map(|k| values[k])
                .unwrap_or(0.0),
        }
    }

    /// SHA-256 over the dense contents; storage format does not affect it.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.d as u64).to_le_bytes());
        h.update((self.n as u64).to_le_bytes());
        for v in self.dense_values() {
            h.update(v.to_bits().to_le_bytes());
        }
        for v in &self.y {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn check_shape(d: usize, n: usize, y: &[f64]) -> Result<()> {
    if n == 0 {
        return Err(Error::NoSamples);
    }
    if d == 0 {
        return Err(Error::InvalidParameter("feature count must be at least 1".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    Ok(())
}

/// Reads LIBSVM text (`label idx:val ...`, 1-based increasing indices).
///
/// Each line becomes one sample column. `d` is the largest index seen unless
/// `d_override` is given, in which case every index must fit under it.
pub fn parse_libsvm<R: BufRead>(reader: R, d_override: Option<usize>) -> Result<Dataset> {
    let mut col_ptr = vec![0usize];
    let mut rows = Vec::new();
    let mut values = Vec::new();
    let mut y = Vec::new();
    let mut max_index = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = tokens.next().unwrap_or("");
        let label: f64 = label.parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("non-numeric label {label:?}"),
        })?;
        let mut prev = 0usize;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("expected idx:val, found {tok:?}"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("non-numeric index {idx:?}"),
            })?;
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("non-numeric value {val:?}"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    message: "indices are 1-based".into(),
                });
            }
            if idx <= prev {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("index {idx} does not increase (previous {prev})"),
                });
            }
            prev = idx;
            max_index = max_index.max(idx);
            rows.push(idx - 1);
            values.push(val);
        }
        y.push(label);
        col_ptr.push(rows.len());
    }

    if y.is_empty() {
        return Err(Error::NoSamples);
    }
    let d = match d_override {
        Some(d) if d < max_index => {
            return Err(Error::InvalidParameter(format!(
                "feature index {max_index} exceeds declared dimension {d}"
            )))
        }
        Some(d) => d,
        None => max_index.max(1),
    };
    let n = y.len();
    Dataset::sparse(d, n, col_ptr, rows, values, y)
}

/// Writes LIBSVM text; dense columns skip explicit zeros.
pub fn write_libsvm<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    for c in 0..ds.n() {
        write!(out, "{}", ds.y()[c])?;
        let dense = !ds.is_sparse();
        for (r, v) in ds.column(c).entries() {
            if dense && v == 0.0 {
                continue;
            }
            write!(out, " {}:{}", r + 1, v)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub d: usize,
    pub n: usize,
    /// Fraction of nonzero entries in the planted coefficient vector.
    pub sparsity: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

/// Gaussian design with a planted sparse `w_true` and `y = Xᵀ w_true + noise`.
///
/// Planted coefficients have magnitude in `[1, 2)` with random sign.
pub fn synthesize(spec: &SyntheticSpec) -> Result<(Dataset, Vec<f64>)> {
    let SyntheticSpec {
        d,
        n,
        sparsity,
        noise_sd,
        seed,
    } = *spec;
    if d == 0 || n == 0 {
        return Err(Error::InvalidParameter("d and n must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::InvalidParameter(format!(
            "sparsity {sparsity} outside [0, 1]"
        )));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise sd {noise_sd}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let support_size = ((sparsity * d as f64).ceil() as usize).min(d);
    let mut support = index::sample(&mut rng, d, support_size).into_vec();
    support.sort_unstable();
    let mut w_true = vec![0.0; d];
    for &s in &support {
        let mag: f64 = rng.random_range(1.0..2.0);
        w_true[s] = if rng.random::<bool>() { mag } else { -mag };
    }

    let values: Vec<f64> = (0..d * n).map(|_| rng.sample(StandardNormal)).collect();
    let y = (0..n)
        .map(|c| {
            let col = &values[c * d..(c + 1) * d];
            let clean: f64 = col.iter().zip(&w_true).map(|(x, w)| x * w).sum();
            let noise: f64 = rng.sample(StandardNormal);
            clean + noise_sd * noise
        })
        .collect();
    Ok((Dataset::dense(d, n, values, y)?, w_true))
}

/// Contiguous column blocks, one per processor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnPartition {
    boundaries: Vec<usize>,
}

impl ColumnPartition {
    /// Greedy split on the nnz prefix sum: boundary `p` sits before the first
    /// column whose preceding nnz reaches `p/P` of the total.
    pub fn from_column_nnz(nnz: &[usize], p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidParameter("processor count must be at least 1".into()));
        }
        let n = nnz.len();
        let total: usize = nnz.iter().sum();
        // prefix[c] = nnz of columns before c
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0usize);
        for &z in nnz {
            prefix.push(prefix.last().unwrap() + z);
        }

        let mut boundaries = vec![0usize];
        let mut prev = 0usize;
        for rank in 1..p {
            // prefix[c] * P >= rank * total, in integers
            let target = rank as u128 * total as u128;
            let mut c = prev;
            while c < n && (prefix[c] as u128) * (p as u128) < target {
                c += 1;
            }
            let c = if n >= p {
                c.clamp(prev + 1, n - (p - rank))
            } else {
                c.clamp(prev, n)
            };
            boundaries.push(c);
            prev = c;
        }
        boundaries.push(n);
        Ok(ColumnPartition { boundaries })
    }

    pub fn p(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn range(&self, rank: usize) -> Range<usize> {
        self.boundaries[rank]..self.boundaries[rank + 1]
    }

    pub fn owner(&self, column: usize) -> usize {
        self.boundaries.partition_point(|&b| b <= column) - 1
    }

    /// Portion of an ascending index list that falls in `rank`'s block.
    pub fn owned<'a>(&self, rank: usize, sorted: &'a [usize]) -> &'a [usize] {
        let r = self.range(rank);
        let lo = sorted.partition_point(|&i| i < r.start);
        let hi = sorted.partition_point(|&i| i < r.end);
        &sorted[lo..hi]
    }
}

pub fn partition_columns(ds: &Dataset, p: usize) -> Result<ColumnPartition> {
    let nnz: Vec<usize> = (0..ds.n()).map(|c| ds.column_nnz(c)).collect();
    ColumnPartition::from_column_nnz(&nnz, p)
}

/// Draws `m = floor(b n)` distinct columns per global iteration.
///
/// The draw is a pure function of `(seed, iteration)`: a ChaCha20 stream is
/// keyed by the seed and positioned on the iteration number, so every solver
/// variant sees the same samples at the same global iteration no matter how
/// its loops are blocked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampler {
    seed: u64,
    b: f64,
    n: usize,
    m: usize,
}

impl Sampler {
    pub fn new(seed: u64, b: f64, n: usize) -> Result<Self> {
        if !(b > 0.0 && b <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sampling fraction {b} outside (0, 1]"
            )));
        }
        let m = sample_size(b, n);
        if m == 0 {
            return Err(Error::InvalidParameter(format!(
                "floor({b} * {n}) = 0 samples"
            )));
        }
        Ok(Sampler { seed, b, n, m })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Ascending, distinct sample indices for `iteration`.
    pub fn sample(&self, iteration: u64) -> Vec<usize> {
        if self.m == self.n {
            return (0..self.n).collect();
        }
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(iteration);
        let mut idx = index::sample(&mut rng, self.n, self.m).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// `floor(b n)` tolerant of products like `0.29 * 100 = 28.999...`.
pub fn sample_size(b: f64, n: usize) -> usize {
    (b * n as f64 * (1.0 + 4.0 * f64::EPSILON)).floor() as usize
}
