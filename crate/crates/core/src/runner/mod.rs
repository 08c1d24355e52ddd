//! Experiment driver: data loading, reference solutions, the two stopping
//! criteria, presets, sweeps and CSV output.

pub mod cli;
mod reference;

use std::fmt;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;

use crate::classical::{GradientPoint, Method, Run, RunTrace, SolverConfig, StoppingMode, TraceRow};
use crate::cluster::{MachineParams, VirtualCluster};
use crate::dataset::{parse_libsvm, partition_columns, synthesize, Dataset, SyntheticSpec};
use crate::prox::LassoProblem;
use crate::{Error, Result};

pub use reference::{
    cached_reference, solve_reference, solve_reference_with, ReferenceSolution, REFERENCE_MAX_ITERS,
    REFERENCE_TOL,
};

pub const TRACE_SCHEMA: &str = "# calasso trace v1";
pub const SWEEP_SCHEMA: &str = "# calasso sweep v1";
pub const REFERENCE_SCHEMA: &str = "# calasso reference v1";
pub const TRACE_COLUMNS: [&str; 8] = [
    "iter",
    "objective",
    "rel_sol_err",
    "F",
    "L",
    "W",
    "M_peak",
    "modeled_time",
];

/// Relative-solution-error threshold used by the speedup studies.
pub const DEFAULT_TOL: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Sfista,
    Spnm,
    CaSfista,
    CaSpnm,
    Reference,
}

impl Algorithm {
    pub fn method(self) -> Option<Method> {
        match self {
            Algorithm::Sfista | Algorithm::CaSfista => Some(Method::Sfista),
            Algorithm::Spnm | Algorithm::CaSpnm => Some(Method::Spnm),
            Algorithm::Reference => None,
        }
    }

    pub fn is_k_step(self) -> bool {
        matches!(self, Algorithm::CaSfista | Algorithm::CaSpnm)
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sfista" => Algorithm::Sfista,
            "spnm" => Algorithm::Spnm,
            "ca-sfista" => Algorithm::CaSfista,
            "ca-spnm" => Algorithm::CaSpnm,
            "reference" => Algorithm::Reference,
            _ => return Err(Error::InvalidParameter(format!("unknown algorithm {s:?}"))),
        })
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Sfista => "sfista",
            Algorithm::Spnm => "spnm",
            Algorithm::CaSfista => "ca-sfista",
            Algorithm::CaSpnm => "ca-spnm",
            Algorithm::Reference => "reference",
        })
    }
}

/// Parameter choices for the benchmark datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Abalone,
    Covtype,
    Susy,
}

impl Preset {
    pub fn lambda(self) -> f64 {
        match self {
            Preset::Abalone => 0.1,
            Preset::Covtype | Preset::Susy => 0.01,
        }
    }

    pub fn b(self) -> f64 {
        match self {
            Preset::Abalone => 0.1,
            Preset::Covtype | Preset::Susy => 0.01,
        }
    }

    pub fn k(self) -> usize {
        32
    }

    /// `(d, n)` of the real dataset, used for synthetic stand-ins.
    pub fn shape(self) -> (usize, usize) {
        match self {
            Preset::Abalone => (8, 4177),
            Preset::Covtype => (54, 581_012),
            Preset::Susy => (18, 5_000_000),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "abalone" => Preset::Abalone,
            "covtype" => Preset::Covtype,
            "susy" => Preset::Susy,
            _ => return Err(Error::InvalidParameter(format!("unknown preset {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Libsvm { path: PathBuf, features: Option<usize> },
    Synthetic(SyntheticSpec),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Libsvm { path, features } => {
                parse_libsvm(BufReader::new(File::open(path)?), *features)
            }
            DataSource::Synthetic(spec) => synthesize(spec).map(|(ds, _)| ds),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub algorithm: Algorithm,
    pub data: DataSource,
    pub lambda: f64,
    pub b: f64,
    /// Required for the k-step algorithms.
    pub k: Option<usize>,
    /// Required for the SPNM variants.
    pub inner: Option<usize>,
    pub iters: usize,
    pub stopping: StoppingMode,
    pub tol: f64,
    pub seed: u64,
    pub procs: usize,
    pub threads: usize,
    pub machine: MachineParams,
    pub step: Option<f64>,
    pub gradient_point: GradientPoint,
    /// Compute a reference optimum and fill the `rel_sol_err` column.
    pub with_reference: bool,
    pub output: Option<PathBuf>,
    pub reference_cache: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(algorithm: Algorithm, data: DataSource, lambda: f64) -> Self {
        ExperimentSpec {
            algorithm,
            data,
            lambda,
            b: 1.0,
            k: None,
            inner: None,
            iters: 100,
            stopping: StoppingMode::Iterations,
            tol: DEFAULT_TOL,
            seed: 0,
            procs: 1,
            threads: 1,
            machine: MachineParams::default(),
            step: None,
            gradient_point: GradientPoint::Auxiliary,
            with_reference: true,
            output: None,
            reference_cache: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.procs == 0 {
            return Err(Error::InvalidParameter("--procs must be at least 1".into()));
        }
        if self.algorithm.is_k_step() && self.k.is_none() {
            return Err(Error::InvalidParameter(format!("{} needs k", self.algorithm)));
        }
        if self.algorithm.method() == Some(Method::Spnm) && self.inner.is_none() {
            return Err(Error::InvalidParameter(format!("{} needs q", self.algorithm)));
        }
        if self.stopping == StoppingMode::Tolerance && !self.with_reference {
            return Err(Error::InvalidParameter(
                "tolerance stopping needs a reference solution".into(),
            ));
        }
        if self.algorithm != Algorithm::Reference {
            self.solver_config().validate()?;
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            b: self.b,
            step: self.step,
            iters: self.iters,
            inner: self.inner.unwrap_or(1),
            k: self.k.unwrap_or(1),
            seed: self.seed,
            tol: (self.stopping == StoppingMode::Tolerance).then_some(self.tol),
            stopping: self.stopping,
            gradient_point: self.gradient_point,
            momentum: true,
            record_iterates: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub csv: String,
    pub trace: Option<RunTrace>,
    pub reference: Option<ReferenceSolution>,
}

fn fmt_float(v: f64) -> String {
    format!("{v:e}")
}

fn row_fields(row: &TraceRow) -> [String; 8] {
    [
        row.iter.to_string(),
        fmt_float(row.objective),
        row.rel_sol_err.map(fmt_float).unwrap_or_default(),
        row.flops.to_string(),
        row.messages.to_string(),
        row.words.to_string(),
        row.mem_peak.to_string(),
        fmt_float(row.modeled_time),
    ]
}

fn finish_csv(schema: &str, wtr: csv::Writer<Vec<u8>>) -> Result<String> {
    let body = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(format!("{schema}\n{}", String::from_utf8_lossy(&body)))
}

/// Trace rows as CSV with the versioned schema comment on the first line.
pub fn trace_csv(rows: &[TraceRow]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(TRACE_COLUMNS)?;
    for row in rows {
        wtr.write_record(row_fields(row))?;
    }
    finish_csv(TRACE_SCHEMA, wtr)
}

fn reference_csv(r: &ReferenceSolution) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["feature", "w_op"])?;
    for (i, w) in r.w_op.iter().enumerate() {
        wtr.write_record([i.to_string(), fmt_float(*w)])?;
    }
    let body = finish_csv(REFERENCE_SCHEMA, wtr)?;
    Ok(body.replacen(
        '\n',
        &format!("\n# kkt_residual={:e} iterations={}\n", r.kkt_residual, r.iterations),
        1,
    ))
}

fn problem_reference(
    spec: &ExperimentSpec,
    problem: &LassoProblem<'_>,
) -> Result<Option<ReferenceSolution>> {
    if !spec.with_reference {
        return Ok(None);
    }
    let r = cached_reference(problem, spec.reference_cache.as_deref())?;
    if spec.stopping == StoppingMode::Tolerance && r.is_zero() {
        return Err(Error::UndefinedReference);
    }
    Ok(Some(r))
}

/// Runs one solver and returns its trace even when it stops with an error.
fn execute(
    spec: &ExperimentSpec,
    problem: LassoProblem<'_>,
    reference: Option<&ReferenceSolution>,
) -> Result<(RunTrace, Option<Error>)> {
    let method = spec
        .algorithm
        .method()
        .ok_or_else(|| Error::InvalidParameter("reference is not an iterative run".into()))?;
    let w_ref = reference.filter(|r| !r.is_zero()).map(|r| r.w_op.as_slice());
    let partition = partition_columns(problem.dataset(), spec.procs)?;
    let mut cluster = VirtualCluster::new(partition, spec.threads)?;
    let mut run = Run::new(problem, &spec.solver_config(), method, spec.machine, w_ref)?;
    let outcome = if spec.algorithm.is_k_step() {
        run.execute_k_step(&mut cluster)
    } else {
        run.execute_classical(&mut cluster)
    };
    Ok((run.into_trace(), outcome.err()))
}

/// Runs one experiment. The CSV is written to `spec.output` (if set) before
/// any solver error is returned, so a diverging run still leaves its rows.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let ds = spec.data.load()?;
    let problem = LassoProblem::new(&ds, spec.lambda)?;

    if spec.algorithm == Algorithm::Reference {
        let r = cached_reference(&problem, spec.reference_cache.as_deref())?;
        let csv = reference_csv(&r)?;
        if let Some(path) = &spec.output {
            fs::write(path, &csv)?;
        }
        return Ok(ExperimentOutput {
            csv,
            trace: None,
            reference: Some(r),
        });
    }

    let reference = problem_reference(spec, &problem)?;
    let (trace, err) = execute(spec, problem, reference.as_ref())?;
    let csv = trace_csv(&trace.rows)?;
    if let Some(path) = &spec.output {
        fs::write(path, &csv)?;
    }
    if let Some(e) = err {
        return Err(e);
    }
    Ok(ExperimentOutput {
        csv,
        trace: Some(trace),
        reference,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepGrid {
    pub ks: Vec<usize>,
    pub bs: Vec<f64>,
    pub procs: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub k: usize,
    pub b: f64,
    pub procs: usize,
    pub trace: RunTrace,
    pub error: Option<String>,
}

/// One run per `(k, b, P)` grid point, all sharing the dataset and reference.
/// Cells run concurrently; their order in the output is the grid order.
pub fn sweep(spec: &ExperimentSpec, grid: &SweepGrid) -> Result<(String, Vec<SweepCell>)> {
    let ks = if grid.ks.is_empty() { vec![spec.k.unwrap_or(1)] } else { grid.ks.clone() };
    let bs = if grid.bs.is_empty() { vec![spec.b] } else { grid.bs.clone() };
    let ps = if grid.procs.is_empty() { vec![spec.procs] } else { grid.procs.clone() };
    let mut cells = Vec::new();
    for &k in &ks {
        for &b in &bs {
            for &p in &ps {
                cells.push((k, b, p));
            }
        }
    }
    if spec.algorithm == Algorithm::Reference {
        return Err(Error::InvalidParameter("cannot sweep the reference solver".into()));
    }

    let ds = spec.data.load()?;
    let problem = LassoProblem::new(&ds, spec.lambda)?;
    let reference = problem_reference(spec, &problem)?;

    let results: Vec<SweepCell> = cells
        .par_iter()
        .map(|&(k, b, procs)| {
            let cell_spec = ExperimentSpec {
                k: Some(k),
                b,
                procs,
                output: None,
                ..spec.clone()
            };
            let (trace, error) = match cell_spec
                .validate()
                .and_then(|_| execute(&cell_spec, problem, reference.as_ref()))
            {
                Ok((trace, err)) => (trace, err.map(|e| e.to_string())),
                Err(e) => (RunTrace::default(), Some(e.to_string())),
            };
            SweepCell {
                k,
                b,
                procs,
                trace,
                error,
            }
        })
        .collect();

    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["k", "b", "procs", "error"];
    header.extend(TRACE_COLUMNS);
    wtr.write_record(&header)?;
    for cell in &results {
        let grid_fields = [cell.k.to_string(), fmt_float(cell.b), cell.procs.to_string()];
        for row in &cell.trace.rows {
            let mut rec: Vec<String> = grid_fields.to_vec();
            rec.push(String::new());
            rec.extend(row_fields(row));
            wtr.write_record(&rec)?;
        }
        if let Some(err) = &cell.error {
            let mut rec: Vec<String> = grid_fields.to_vec();
            rec.push(err.clone());
            rec.extend(std::iter::repeat_n(String::new(), TRACE_COLUMNS.len()));
            wtr.write_record(&rec)?;
        }
    }
    let csv = finish_csv(SWEEP_SCHEMA, wtr)?;
    if let Some(path) = &spec.output {
        fs::write(path, &csv)?;
    }
    Ok((csv, results))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(d: usize, n: usize, seed: u64) -> DataSource {
        DataSource::Synthetic(SyntheticSpec {
            d,
            n,
            sparsity: 0.3,
            noise_sd: 0.1,
            seed,
        })
    }

    #[test]
    fn presets() {
        assert_eq!(Preset::Abalone.lambda(), 0.1);
        assert_eq!(Preset::Covtype.lambda(), 0.01);
        assert_eq!(Preset::Susy.lambda(), 0.01);
        assert_eq!(Preset::Abalone.b(), 0.1);
        assert_eq!(Preset::Covtype.b(), 0.01);
        assert_eq!(Preset::Abalone.shape(), (8, 4177));
        assert!("iris".parse::<Preset>().is_err());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in [
            Algorithm::Sfista,
            Algorithm::Spnm,
            Algorithm::CaSfista,
            Algorithm::CaSpnm,
            Algorithm::Reference,
        ] {
            assert_eq!(a.to_string().parse::<Algorithm>().unwrap(), a);
        }
    }

    #[test]
    fn required_fields() {
        let mut spec = ExperimentSpec::new(Algorithm::CaSpnm, synthetic(4, 20, 0), 0.1);
        assert!(spec.validate().is_err());
        spec.k = Some(4);
        assert!(spec.validate().is_err());
        spec.inner = Some(5);
        assert!(spec.validate().is_ok());
        spec.procs = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn fixed_iteration_csv() {
        let mut spec = ExperimentSpec::new(Algorithm::CaSfista, synthetic(6, 80, 1), 0.05);
        spec.k = Some(32);
        spec.iters = 100;
        spec.procs = 4;
        spec.b = 0.5;
        let out = run_experiment(&spec).unwrap();
        let mut lines = out.csv.lines();
        assert_eq!(lines.next(), Some(TRACE_SCHEMA));
        assert_eq!(lines.next(), Some("iter,objective,rel_sol_err,F,L,W,M_peak,modeled_time"));
        let last: Vec<&str> = out.csv.lines().last().unwrap().split(',').collect();
        assert_eq!(last[0], "100");
        // ceil(100/32) = 4 all-reduces of 2 rounds each
        assert_eq!(last[4], "8");
        assert_eq!(out.trace.unwrap().collectives, 4);
    }

    #[test]
    fn tolerance_mode_stops_early() {
        let mut spec = ExperimentSpec::new(Algorithm::Sfista, synthetic(6, 80, 2), 0.05);
        spec.stopping = StoppingMode::Tolerance;
        spec.iters = 5000;
        let out = run_experiment(&spec).unwrap();
        let trace = out.trace.unwrap();
        let last = trace.rows.last().unwrap();
        assert!(last.rel_sol_err.unwrap() < DEFAULT_TOL);
        assert!(trace.rows[..trace.rows.len() - 1]
            .iter()
            .all(|r| r.rel_sol_err.unwrap() >= DEFAULT_TOL));
    }

    #[test]
    fn tolerance_mode_with_zero_reference_fails() {
        let src = synthetic(4, 30, 3);
        let lmax = LassoProblem::lambda_max(&src.load().unwrap());
        let mut spec = ExperimentSpec::new(Algorithm::Sfista, src, lmax * 1.01);
        spec.stopping = StoppingMode::Tolerance;
        assert!(matches!(run_experiment(&spec), Err(Error::UndefinedReference)));
    }

    #[test]
    fn divergence_flushes_partial_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut spec = ExperimentSpec::new(Algorithm::Sfista, synthetic(4, 30, 4), 0.0);
        spec.step = Some(1e150);
        spec.iters = 50;
        spec.output = Some(path.clone());
        spec.with_reference = false;
        let err = run_experiment(&spec).unwrap_err();
        let Error::Divergence { iteration } = err else {
            panic!("{err:?}");
        };
        let written = fs::read_to_string(&path).unwrap();
        assert_eq!(written.lines().count(), 2 + iteration - 1);
    }

    #[test]
    fn reference_output() {
        let spec = ExperimentSpec::new(Algorithm::Reference, synthetic(4, 40, 5), 0.05);
        let out = run_experiment(&spec).unwrap();
        assert!(out.csv.starts_with(REFERENCE_SCHEMA));
        assert!(out.reference.unwrap().kkt_residual <= REFERENCE_TOL);
        assert_eq!(out.csv.lines().count(), 3 + 4);
    }

    #[test]
    fn sweep_records_cell_errors() {
        let mut spec = ExperimentSpec::new(Algorithm::CaSfista, synthetic(4, 30, 6), 0.05);
        spec.k = Some(2);
        spec.iters = 6;
        let grid = SweepGrid {
            ks: vec![1, 2],
            bs: vec![0.01, 0.5],
            procs: vec![2],
        };
        let (csv, cells) = sweep(&spec, &grid).unwrap();
        assert_eq!(cells.len(), 4);
        // floor(0.01 * 30) = 0 samples
        assert!(cells[0].error.is_some() && cells[1].error.is_none());
        assert!(csv.starts_with(SWEEP_SCHEMA));
        assert_eq!(csv.lines().filter(|l| l.contains("samples")).count(), 2);
        assert_eq!(cells[1].trace.rows.len(), 6);
    }
}
