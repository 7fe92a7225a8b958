//! `fairscope` command line: CSV ingestion, subcommand dispatch and JSON
//! audit reports.

pub mod error;
pub mod io;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Parser, Subcommand};
use fairscope_core::audit::{
    beta_sensitivity, bound_under_error_cap, bound_under_unfairness_cap, fair_error_lower_bound, overall_positive_rate, pareto_curve,
    solve_discrepancy, AuditOptions,
};
use fairscope_core::multiclass::SlpParams;
use fairscope_core::unfairness::{unfairness_binary_exact, unfairness_multiclass_bounds, UnfairnessOptions};
use fairscope_core::{condition_onesided, error_of, AggregateInputs};

pub use error::CliError;
pub use io::{emit_inputs, parse_confusions_csv, parse_inputs_csv};
use report::*;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Caps the worker pool size.
pub const THREADS_ENV: &str = "FAIRSCOPE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fairscope", version, about = "Fairness audits from aggregate label statistics")]
pub struct Cli {
    /// Seed for the random greedy orderings.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Print compact single-line JSON instead of the indented form.
    #[arg(long, global = true)]
    pub json: bool,
    /// Write the report here instead of stdout (for `pareto`: the points CSV).
    #[arg(long, global = true, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an inputs or confusions file.
    Validate { file: PathBuf },
    /// Minimum error of any fair classifier consistent with the inputs.
    FairErrorLb {
        inputs: PathBuf,
        /// Slack on the predicted-proportion equalities.
        #[arg(long, default_value_t = 0.0)]
        margin: f64,
    },
    /// Unfairness of known per-group confusion matrices.
    Unfairness {
        confusions: PathBuf,
        #[arg(long, default_value_t = 10)]
        orderings: usize,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-7)]
        eps_stop: f64,
    },
    /// Minimal β-discrepancy consistent with the inputs.
    Mindisc {
        inputs: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Lower-bound Pareto curve of (unfairness, error).
    Pareto {
        inputs: PathBuf,
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long, default_value_t = 10)]
        refine: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Record the overall positive rate as plotting divisor (two labels).
        #[arg(long)]
        normalize: bool,
    },
    /// Solution plateaus over a 0.01 β grid (two labels).
    BetaSweep {
        inputs: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Bound on one quantity given a cap on the other.
    #[command(group(ArgGroup::new("cap").required(true).args(["error_cap", "unfairness_cap"])))]
    CapBound {
        inputs: PathBuf,
        #[arg(long)]
        error_cap: Option<f64>,
        #[arg(long)]
        unfairness_cap: Option<f64>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

/// A finished command: its report, exit status and any side file.
pub struct Outcome {
    pub report: AuditReport,
    pub exit_code: i32,
    pub side_file: Option<(PathBuf, String)>,
}

/// Parses `argv`, runs the command and writes the report; returns the exit
/// code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = write!(err, "{}", e.render());
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| execute(&cli)).and_then(|o| emit(&cli, o, out)) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                CliError::Usage(_) => EXIT_USAGE,
                _ => EXIT_ERROR,
            }
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV}={v} is not a positive integer")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Usage(e.to_string()))
}

fn emit(cli: &Cli, o: Outcome, out: &mut dyn Write) -> Result<i32, CliError> {
    let json = if cli.json {
        serde_json::to_string(&o.report)
    } else {
        serde_json::to_string_pretty(&o.report)
    }
    .expect("report serializes");
    let stdout_err = |e| CliError::io("<stdout>", e);
    match (&o.side_file, &cli.out) {
        (Some((path, body)), _) => {
            io::write_atomic(path, body.as_bytes())?;
            writeln!(out, "{json}").map_err(stdout_err)?;
        }
        (None, Some(path)) => io::write_atomic(path, format!("{json}\n").as_bytes())?,
        (None, None) => writeln!(out, "{json}").map_err(stdout_err)?,
    }
    Ok(o.exit_code)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn load_inputs(path: &Path) -> Result<(AggregateInputs, String), CliError> {
    let bytes = read_bytes(path)?;
    let inputs = io::parse_inputs_reader(bytes.as_slice(), &path.display().to_string())?;
    Ok((inputs, io::sha256_hex(&bytes)))
}

fn check_unit(name: &str, v: f64) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(CliError::Usage(format!("--{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<(), CliError> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(CliError::Usage(format!("--{name} must be positive, got {v}")));
    }
    Ok(())
}

fn audit_options(gamma: f64) -> AuditOptions {
    AuditOptions {
        gamma,
        slp: SlpParams::default(),
    }
}

fn slp_if_multiclass(inputs: &AggregateInputs) -> Option<SlpParams> {
    (inputs.k() > 2).then(SlpParams::default)
}

fn ids(inputs: &AggregateInputs) -> Vec<String> {
    inputs.groups.iter().map(|g| g.group_id.clone()).collect()
}

/// Runs the parsed command without writing anything.
pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let base = |command: &str, input: &Path| Parameters {
        command: command.to_string(),
        input: input.display().to_string(),
        seed: cli.seed,
        ..Parameters::default()
    };
    let report = |mode, digest, results, parameters| AuditReport {
        schema_version: SCHEMA_VERSION,
        mode,
        inputs_digest: digest,
        results,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        parameters,
    };
    let ok = |r| Outcome {
        report: r,
        exit_code: EXIT_OK,
        side_file: None,
    };

    match &cli.command {
        Command::Validate { file } => {
            let bytes = read_bytes(file)?;
            let name = file.display().to_string();
            let first = String::from_utf8_lossy(&bytes).lines().next().unwrap_or_default().to_string();
            let res = if io::is_confusions_header(&first) {
                let set = io::parse_confusions_reader(bytes.as_slice(), &name)?;
                let inputs = set.inputs();
                ValidateResult {
                    kind: "confusions".into(),
                    k: set.k(),
                    groups: ids(&inputs),
                    weights: inputs.groups.iter().map(|g| g.weight).collect(),
                    onesided: None,
                    error: Some(error_of(&set)),
                }
            } else {
                let inputs = io::parse_inputs_reader(bytes.as_slice(), &name)?;
                ValidateResult {
                    kind: "inputs".into(),
                    k: inputs.k(),
                    groups: ids(&inputs),
                    weights: inputs.groups.iter().map(|g| g.weight).collect(),
                    onesided: if inputs.k() == 2 {
                        Some(condition_onesided(&inputs)?)
                    } else {
                        None
                    },
                    error: None,
                }
            };
            Ok(ok(report(
                Mode::Validate,
                io::sha256_hex(&bytes),
                Results::Validate(res),
                base("validate", file),
            )))
        }
        Command::FairErrorLb { inputs, margin } => {
            if !(*margin >= 0.0 && margin.is_finite()) {
                return Err(CliError::Usage(format!("--margin must be nonnegative, got {margin}")));
            }
            let (inp, digest) = load_inputs(inputs)?;
            let r = fair_error_lower_bound(&inp, *margin)?;
            let exit_code = if r.feasible { EXIT_OK } else { EXIT_INFEASIBLE };
            let res = FairErrorReport {
                feasible: r.feasible,
                min_error: r.min_error,
                witness: r.witness.map(|w| w.rows()),
            };
            let params = Parameters {
                margin: Some(*margin),
                ..base("fair-error-lb", inputs)
            };
            Ok(Outcome {
                report: report(Mode::FairErrorLB, digest, Results::FairError(res), params),
                exit_code,
                side_file: None,
            })
        }
        Command::Unfairness {
            confusions,
            orderings,
            max_iter,
            eps_stop,
        } => {
            if *orderings == 0 || *max_iter == 0 {
                return Err(CliError::Usage("--orderings and --max-iter must be positive".into()));
            }
            check_positive("eps-stop", *eps_stop)?;
            let bytes = read_bytes(confusions)?;
            let set = io::parse_confusions_reader(bytes.as_slice(), &confusions.display().to_string())?;
            let exact = set.k() == 2;
            let opts = UnfairnessOptions {
                n_orderings: *orderings,
                max_iter: *max_iter,
                eps_stop: *eps_stop,
                seed: cli.seed,
            };
            let r = if exact {
                unfairness_binary_exact(&set)?
            } else {
                unfairness_multiclass_bounds(&set, &opts)?
            };
            let res = UnfairnessReport {
                exact,
                lower: r.lower,
                upper: r.upper,
                error: error_of(&set),
                per_label: r.per_label,
                baseline: r.baseline_witness.rows(),
                per_group_eta: set
                    .per_group
                    .iter()
                    .zip(r.per_group_eta)
                    .map(|((g, _), eta)| GroupEta {
                        group: g.group_id.clone(),
                        eta,
                    })
                    .collect(),
            };
            let params = if exact {
                base("unfairness", confusions)
            } else {
                Parameters {
                    orderings: Some(*orderings),
                    max_iter: Some(*max_iter),
                    eps_stop: Some(*eps_stop),
                    ..base("unfairness", confusions)
                }
            };
            Ok(ok(report(
                Mode::UnfairnessKnown,
                io::sha256_hex(&bytes),
                Results::Unfairness(res),
                params,
            )))
        }
        Command::Mindisc { inputs, beta, tol } => {
            check_unit("beta", *beta)?;
            check_positive("tol", *tol)?;
            let (inp, digest) = load_inputs(inputs)?;
            let (sol, lower) = solve_discrepancy(&inp, *beta, &audit_options(*tol))?;
            let res = MindiscReport::new(&sol, lower, &ids(&inp));
            let params = Parameters {
                beta: Some(*beta),
                gamma: Some(*tol),
                slp: slp_if_multiclass(&inp),
                ..base("mindisc", inputs)
            };
            Ok(ok(report(Mode::Mindisc, digest, Results::Mindisc(res), params)))
        }
        Command::Pareto {
            inputs,
            points,
            refine,
            tol,
            normalize,
        } => {
            if *points < 2 {
                return Err(CliError::Usage("--points must be at least 2".into()));
            }
            check_positive("tol", *tol)?;
            let (inp, digest) = load_inputs(inputs)?;
            if *normalize && inp.k() != 2 {
                return Err(CliError::Usage("--normalize needs two labels".into()));
            }
            let mut curve = pareto_curve(&inp, *points, *refine, &audit_options(*tol))?;
            if *normalize {
                curve.normalization = Some(overall_positive_rate(&inp));
            }
            let csv = pareto_csv(&curve.points);
            let side_file = cli.out.clone().map(|p| (p, csv));
            let res = ParetoReport {
                points: curve.points,
                normalization: curve.normalization,
                csv: cli.out.as_ref().map(|p| p.display().to_string()),
            };
            let params = Parameters {
                points: Some(*points),
                refine: Some(*refine),
                gamma: Some(*tol),
                normalize: Some(*normalize),
                slp: slp_if_multiclass(&inp),
                ..base("pareto", inputs)
            };
            Ok(Outcome {
                report: report(Mode::Pareto, digest, Results::Pareto(res), params),
                exit_code: EXIT_OK,
                side_file,
            })
        }
        Command::BetaSweep { inputs, tol } => {
            check_positive("tol", *tol)?;
            let (inp, digest) = load_inputs(inputs)?;
            let intervals = beta_sensitivity(&inp, *tol)?;
            let params = Parameters {
                gamma: Some(*tol),
                ..base("beta-sweep", inputs)
            };
            Ok(ok(report(
                Mode::BetaSweep,
                digest,
                Results::BetaSweep(BetaSweepReport { intervals }),
                params,
            )))
        }
        Command::CapBound {
            inputs,
            error_cap,
            unfairness_cap,
            tol,
        } => {
            check_positive("tol", *tol)?;
            let (inp, digest) = load_inputs(inputs)?;
            let opts = audit_options(*tol);
            let (kind, cap, sol) = match (error_cap, unfairness_cap) {
                (Some(e), None) => {
                    check_unit("error-cap", *e)?;
                    ("error", *e, bound_under_error_cap(&inp, *e, &opts))
                }
                (None, Some(u)) => {
                    check_unit("unfairness-cap", *u)?;
                    ("unfairness", *u, bound_under_unfairness_cap(&inp, *u, &opts))
                }
                _ => return Err(CliError::Usage("give exactly one of --error-cap and --unfairness-cap".into())),
            };
            let sol = sol?;
            let bound = if kind == "error" { sol.unfairness } else { sol.error };
            let res = CapBoundReport {
                cap_kind: kind.into(),
                cap,
                bound,
                solution: sol,
            };
            let params = Parameters {
                error_cap: *error_cap,
                unfairness_cap: *unfairness_cap,
                gamma: Some(*tol),
                slp: slp_if_multiclass(&inp),
                ..base("cap-bound", inputs)
            };
            Ok(ok(report(Mode::CapBound, digest, Results::CapBound(res), params)))
        }
    }
}
