//! Command-line front end.
//!
//! `--config FILE` reads flat `key = value` lines; each becomes `--key value`
//! ahead of the command-line flags, so explicit flags win.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::{run_experiment, sweep, Algorithm, DataSource, ExperimentSpec, Preset, SweepGrid};
use crate::classical::{GradientPoint, StoppingMode};
use crate::cluster::MachineParams;
use crate::dataset::SyntheticSpec;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "calasso", version, about = "Communication-avoiding stochastic LASSO solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one solver and emit its per-iteration trace.
    #[command(args_override_self = true)]
    Run(RunArgs),
    /// Run the solver over a grid of k, b and processor counts.
    #[command(args_override_self = true)]
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StopArg {
    Iterations,
    Tolerance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticArg(pub SyntheticSpec);

impl FromStr for SyntheticArg {
    type Err = Error;

    /// `d,n,sparsity,noise[,seed]`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || Error::InvalidParameter(format!("--synthetic expects d,n,sparsity,noise[,seed]; got {s:?}"));
        if !(4..=5).contains(&parts.len()) {
            return Err(bad());
        }
        Ok(SyntheticArg(SyntheticSpec {
            d: parts[0].parse().map_err(|_| bad())?,
            n: parts[1].parse().map_err(|_| bad())?,
            sparsity: parts[2].parse().map_err(|_| bad())?,
            noise_sd: parts[3].parse().map_err(|_| bad())?,
            seed: match parts.get(4) {
                Some(p) => p.parse().map_err(|_| bad())?,
                None => 0,
            },
        }))
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Flat key = value file of defaults for these flags.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dataset preset: abalone, covtype or susy.
    #[arg(long)]
    pub preset: Option<Preset>,
    /// sfista, spnm, ca-sfista, ca-spnm or reference.
    #[arg(long)]
    pub alg: Algorithm,
    /// LIBSVM file.
    #[arg(long, value_name = "FILE", conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Feature count when the file does not reach the last feature.
    #[arg(long)]
    pub features: Option<usize>,
    /// Generated data: `d,n,sparsity,noise[,seed]`.
    #[arg(long, value_name = "SPEC")]
    pub synthetic: Option<SyntheticArg>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Sampled fraction of the data per iteration.
    #[arg(long)]
    pub b: Option<f64>,
    /// Iterations per communication round.
    #[arg(long)]
    pub k: Option<usize>,
    /// Inner iterations of SPNM.
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, value_enum, default_value_t = StopArg::Iterations)]
    pub stop: StopArg,
    /// Relative solution error target for --stop tolerance.
    #[arg(long, default_value_t = super::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = 1)]
    pub procs: usize,
    /// Worker threads used to simulate the processors.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// gamma,alpha,beta in seconds per flop, message and word.
    #[arg(long, value_name = "G,A,B")]
    pub machine: Option<MachineParams>,
    /// Fixed step size instead of the inverse Lipschitz estimate.
    #[arg(long)]
    pub step: Option<f64>,
    /// Evaluate the SFISTA gradient at the previous iterate.
    #[arg(long)]
    pub gradient_at_previous: bool,
    /// Skip the reference solve; the rel_sol_err column stays empty.
    #[arg(long)]
    pub no_reference: bool,
    /// Output CSV; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// JSON cache for the reference solution.
    #[arg(long, value_name = "FILE")]
    pub reference_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub b_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub procs_grid: Vec<usize>,
}

impl RunArgs {
    pub fn into_spec(self) -> Result<ExperimentSpec> {
        let data = match (self.data, self.synthetic, self.preset) {
            (Some(path), _, _) => DataSource::Libsvm {
                path,
                features: self.features,
            },
            (None, Some(SyntheticArg(s)), _) => DataSource::Synthetic(s),
            (None, None, Some(p)) => {
                let (d, n) = p.shape();
                DataSource::Synthetic(SyntheticSpec {
                    d,
                    n,
                    sparsity: 0.5,
                    noise_sd: 0.1,
                    seed: self.seed,
                })
            }
            (None, None, None) => {
                return Err(Error::InvalidParameter(
                    "one of --data, --synthetic or --preset is required".into(),
                ))
            }
        };
        let lambda = self
            .lambda
            .or(self.preset.map(Preset::lambda))
            .ok_or_else(|| Error::InvalidParameter("--lambda is required without --preset".into()))?;
        let mut spec = ExperimentSpec::new(self.alg, data, lambda);
        spec.b = self.b.or(self.preset.map(Preset::b)).unwrap_or(1.0);
        spec.k = self.k.or(self.preset.filter(|_| self.alg.is_k_step()).map(Preset::k));
        spec.inner = self.q;
        spec.iters = self.iters;
        spec.stopping = match self.stop {
            StopArg::Iterations => StoppingMode::Iterations,
            StopArg::Tolerance => StoppingMode::Tolerance,
        };
        spec.tol = self.tol;
        spec.seed = self.seed;
        spec.procs = self.procs;
        spec.threads = self.threads;
        spec.machine = self.machine.unwrap_or_default();
        spec.step = self.step;
        if self.gradient_at_previous {
            spec.gradient_point = GradientPoint::PreviousIterate;
        }
        spec.with_reference = !self.no_reference;
        spec.output = self.out;
        spec.reference_cache = self.reference_cache;
        Ok(spec)
    }
}

/// Turns the contents of a config file into flag arguments.
pub fn config_args(text: &str) -> Result<Vec<OsString>> {
    let mut args = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            });
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        args.push(format!("--{key}").into());
        match value {
            "true" => {}
            _ => args.push(value.into()),
        }
    }
    Ok(args)
}

/// Splices the `--config` file's flags in right after the subcommand name.
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = argv.get(i + 1).cloned();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let extra = config_args(&fs::read_to_string(PathBuf::from(path))?)?;
    let at = argv
        .iter()
        .position(|a| a == "run" || a == "sweep")
        .map_or(argv.len(), |i| i + 1);
    let mut out = argv[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}

pub fn parse(argv: Vec<OsString>) -> std::result::Result<Cli, clap::Error> {
    let argv = expand_config(argv).map_err(|e| {
        clap::Error::raw(clap::error::ErrorKind::ValueValidation, format!("--config: {e}\n"))
    })?;
    Cli::try_parse_from(argv)
}

/// Executes a parsed command; the CSV goes to `--out` or `stdout`.
pub fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let spec = args.into_spec()?;
            let to_stdout = spec.output.is_none();
            let out = run_experiment(&spec)?;
            if to_stdout {
                stdout.write_all(out.csv.as_bytes())?;
            }
        }
        Command::Sweep(args) => {
            let grid = SweepGrid {
                ks: args.k_grid,
                bs: args.b_grid,
                procs: args.procs_grid,
            };
            let spec = args.run.into_spec()?;
            let to_stdout = spec.output.is_none();
            let (csv, _) = sweep(&spec, &grid)?;
            if to_stdout {
                stdout.write_all(csv.as_bytes())?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<OsString> {
        s.split_whitespace().map(OsString::from).collect()
    }

    #[test]
    fn preset_defaults() {
        let cli = parse(argv("calasso run --preset abalone --alg ca-spnm --q 5")).unwrap();
        let Command::Run(args) = cli.command else { panic!() };
        let spec = args.into_spec().unwrap();
        assert_eq!(spec.lambda, 0.1);
        assert_eq!(spec.b, 0.1);
        assert_eq!(spec.k, Some(32));
        assert_eq!(spec.inner, Some(5));
        let DataSource::Synthetic(s) = spec.data else { panic!() };
        assert_eq!((s.d, s.n), (8, 4177));
    }

    #[test]
    fn explicit_flags_beat_presets() {
        let cli = parse(argv("calasso run --preset covtype --alg sfista --lambda 0.5 --b 0.2 --synthetic 5,50,0.4,0.1,3")).unwrap();
        let Command::Run(args) = cli.command else { panic!() };
        let spec = args.into_spec().unwrap();
        assert_eq!((spec.lambda, spec.b, spec.k), (0.5, 0.2, None));
        assert_eq!(
            spec.data,
            DataSource::Synthetic(SyntheticSpec {
                d: 5,
                n: 50,
                sparsity: 0.4,
                noise_sd: 0.1,
                seed: 3
            })
        );
    }

    #[test]
    fn config_file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(
            &cfg,
            "# defaults\nalg = ca-sfista\nsynthetic = 4,30,0.5,0.1\nlambda = 0.05\nk = 8\niters = 20\nno_reference = true\n",
        )
        .unwrap();
        let cli = parse(argv(&format!("calasso run --config {} --k 4", cfg.display()))).unwrap();
        let Command::Run(args) = cli.command else { panic!() };
        let spec = args.into_spec().unwrap();
        assert_eq!(spec.k, Some(4));
        assert_eq!(spec.iters, 20);
        assert!(!spec.with_reference);
        assert_eq!(spec.algorithm, Algorithm::CaSfista);
    }

    #[test]
    fn config_syntax_errors_have_line_numbers() {
        assert!(matches!(config_args("a = 1\nbogus\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(parse(argv("calasso run --alg nope --lambda 1")).is_err());
        assert!(parse(argv("calasso run --alg sfista --machine 1,2")).is_err());
        assert!(parse(argv("calasso run --alg sfista --synthetic 1,2,3")).is_err());
        assert!(parse(argv("calasso run --alg sfista --data x --synthetic 4,30,0.5,0.1")).is_err());
    }

    #[test]
    fn sweep_grids() {
        let cli = parse(argv(
            "calasso sweep --alg ca-sfista --synthetic 4,40,0.5,0.1 --lambda 0.05 --iters 4 --no-reference --k-grid 1,2 --b-grid 0.5 --procs-grid 1,2",
        ))
        .unwrap();
        let mut out = Vec::new();
        dispatch(cli, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        // 4 cells of 4 rows, one header, one schema line
        assert_eq!(text.lines().count(), 4 * 4 + 2);
    }
}
