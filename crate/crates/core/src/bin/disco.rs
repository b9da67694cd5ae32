use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use disco::collectives::Scheduler;
use disco::data::SparseDataset;
use disco::loss::LossModel;
use disco::solver::{self, EpsPolicy, Mode, SolveReport, SolverConfig};
use disco::synth::{self, Task};
use disco::trace::write_trace;
use disco::Error;

#[derive(Parser, Debug)]
#[command(name = "disco", version, about = "Distributed inexact damped Newton solver")]
struct Cli {
    /// TOML file with run settings; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one problem and write its convergence trace.
    Solve {
        #[command(flatten)]
        run: RunArgs,
        /// Trace CSV destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-phase traffic CSV destination.
        #[arg(long)]
        ledger_out: Option<PathBuf>,
    },
    /// Run both data layouts on the same problem and compare their traffic.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for per-mode trace CSVs.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// One solve per preconditioner sample count.
    SweepTau {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        taus: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// One solve per Hessian subsample fraction.
    SweepHessian {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        fractions: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Write a synthetic dataset in libsvm format.
    Generate(GenerateArgs),
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// libsvm file, optionally gzip-compressed (.gz).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    loss: Option<LossModel>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    nodes: Option<usize>,
    /// Inner tolerance relative to the gradient norm.
    #[arg(long, conflicts_with = "eps_abs")]
    eps_beta: Option<f64>,
    /// Fixed inner tolerance.
    #[arg(long)]
    eps_abs: Option<f64>,
    #[arg(long)]
    hessian_fraction: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    max_inner: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    scheduler: Option<SchedulerArg>,
    /// Write zero in the wall-time column so repeated runs are identical.
    #[arg(long)]
    no_wall_time: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum SchedulerArg {
    Threaded,
    RoundRobin,
}

impl From<SchedulerArg> for Scheduler {
    fn from(s: SchedulerArg) -> Self {
        match s {
            SchedulerArg::Threaded => Scheduler::Threaded,
            SchedulerArg::RoundRobin => Scheduler::RoundRobin,
        }
    }
}

/// Same settings as [`RunArgs`], read from the config file.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct FileConfig {
    data: Option<PathBuf>,
    loss: Option<LossModel>,
    lambda: Option<f64>,
    mu: Option<f64>,
    tau: Option<usize>,
    mode: Option<Mode>,
    nodes: Option<usize>,
    eps_beta: Option<f64>,
    eps_abs: Option<f64>,
    hessian_fraction: Option<f64>,
    max_outer: Option<usize>,
    max_inner: Option<usize>,
    grad_tol: Option<f64>,
    seed: Option<u64>,
    scheduler: Option<SchedulerArg>,
    no_wall_time: Option<bool>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "dense")]
    kind: Kind,
    #[arg(long, default_value = "classification")]
    task: Task,
    #[arg(long)]
    samples: usize,
    #[arg(long)]
    features: usize,
    /// Nonzeros per sample (text kind only).
    #[arg(long, default_value_t = 20)]
    nnz: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Dense,
    Text,
}

/// Merged run settings: defaults, then the config file, then flags.
struct Run {
    data: PathBuf,
    cfg: SolverConfig,
}

fn merge(file: FileConfig, args: RunArgs) -> Result<Run, Error> {
    let mut cfg = SolverConfig::default();
    macro_rules! pick {
        ($field:ident) => {
            if let Some(v) = args.$field.or(file.$field) {
                cfg.$field = v;
            }
        };
    }
    pick!(loss);
    pick!(lambda);
    pick!(mu);
    pick!(tau);
    pick!(mode);
    pick!(nodes);
    pick!(hessian_fraction);
    pick!(max_outer);
    pick!(grad_tol);
    pick!(seed);
    cfg.max_inner = args.max_inner.or(file.max_inner);
    if let Some(s) = args.scheduler.or(file.scheduler) {
        cfg.scheduler = s.into();
    }
    // a flag of either kind overrides whatever the file chose
    cfg.eps = match (args.eps_beta, args.eps_abs, file.eps_beta, file.eps_abs) {
        (Some(beta), _, _, _) => EpsPolicy::Relative { beta },
        (_, Some(eps), _, _) => EpsPolicy::Absolute { eps },
        (_, _, Some(_), Some(_)) => {
            return Err(Error::Config {
                field: "eps-beta",
                reason: "config file sets both eps-beta and eps-abs".into(),
            })
        }
        (_, _, Some(beta), None) => EpsPolicy::Relative { beta },
        (_, _, None, Some(eps)) => EpsPolicy::Absolute { eps },
        _ => EpsPolicy::default(),
    };
    cfg.record_wall_time = !(args.no_wall_time || file.no_wall_time.unwrap_or(false));
    let data = args.data.or(file.data).ok_or(Error::Config {
        field: "data",
        reason: "no dataset given (use --data or the config file)".into(),
    })?;
    cfg.validate()?;
    Ok(Run { data, cfg })
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, Error> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config {
        field: "config",
        reason: format!("{}: {}", path.display(), e.message()),
    })
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Io(io::Error::other(format!("{other:?}"))),
    }
}

fn save_trace(dir: Option<&Path>, name: &str, report: &SolveReport) -> Result<(), Error> {
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        let f = BufWriter::new(File::create(dir.join(name))?);
        write_trace(&report.trace, f).map_err(csv_err)?;
    }
    Ok(())
}

fn summarize(label: &str, r: &SolveReport) {
    let last = r.final_record();
    let total = r.ledger.total();
    eprintln!(
        "{label}: converged={} outer={} inner={} f={:.12e} grad_norm={:.3e} rounds={} grouped_rounds={} scalars={} vector_elements={} wall={:.3}s",
        r.converged,
        r.outer_iters(),
        r.inner_iters(),
        last.f_value,
        last.grad_norm,
        total.rounds,
        total.grouped_rounds,
        total.scalars,
        total.vector_elements,
        last.wall_seconds,
    );
}

fn wall(cfg: &SolverConfig, start: Instant) -> f64 {
    if cfg.record_wall_time {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    }
}

fn cmd_solve(run: Run, out: Option<&Path>, ledger_out: Option<&Path>) -> Result<(), Error> {
    let data = SparseDataset::from_path(&run.data)?;
    let report = solver::solve(&data, &run.cfg)?;
    write_trace(&report.trace, output(out)?).map_err(csv_err)?;
    if let Some(p) = ledger_out {
        report
            .ledger
            .write_csv(BufWriter::new(File::create(p)?))
            .map_err(csv_err)?;
    }
    summarize("solve", &report);
    Ok(())
}

fn cmd_compare(run: Run, out: Option<&Path>, trace_dir: Option<&Path>) -> Result<(), Error> {
    let data = SparseDataset::from_path(&run.data)?;
    let mut w = csv::Writer::from_writer(output(out)?);
    w.write_record([
        "mode",
        "outer_iters",
        "inner_iters",
        "rounds",
        "grouped_rounds",
        "scalars",
        "vector_elements",
        "final_grad_norm",
        "converged",
    ])
    .map_err(csv_err)?;
    for mode in [Mode::Samples, Mode::Features] {
        let cfg = SolverConfig { mode, ..run.cfg.clone() };
        let report = solver::solve(&data, &cfg)?;
        save_trace(trace_dir, &format!("trace_{mode}.csv"), &report)?;
        let t = report.ledger.total();
        w.write_record([
            mode.to_string(),
            report.outer_iters().to_string(),
            report.inner_iters().to_string(),
            t.rounds.to_string(),
            t.grouped_rounds.to_string(),
            t.scalars.to_string(),
            t.vector_elements.to_string(),
            format!("{:e}", report.final_record().grad_norm),
            report.converged.to_string(),
        ])
        .map_err(csv_err)?;
        summarize(&format!("mode {mode}"), &report);
    }
    w.flush()?;
    Ok(())
}

fn cmd_sweep_tau(
    run: Run,
    taus: &[usize],
    out: Option<&Path>,
    trace_dir: Option<&Path>,
) -> Result<(), Error> {
    if taus.is_empty() {
        return Err(Error::Config {
            field: "taus",
            reason: "need at least one value".into(),
        });
    }
    let data = SparseDataset::from_path(&run.data)?;
    for &tau in taus {
        SolverConfig { tau, ..run.cfg.clone() }.validate_for(data.n(), data.d())?;
    }
    let mut w = csv::Writer::from_writer(output(out)?);
    w.write_record(["tau", "outer_iters", "inner_iters", "rounds", "grouped_rounds", "wall_seconds", "converged"])
        .map_err(csv_err)?;
    for &tau in taus {
        let cfg = SolverConfig { tau, ..run.cfg.clone() };
        let start = Instant::now();
        let report = solver::solve(&data, &cfg)?;
        let secs = wall(&cfg, start);
        save_trace(trace_dir, &format!("trace_tau_{tau}.csv"), &report)?;
        let t = report.ledger.total();
        w.write_record([
            tau.to_string(),
            report.outer_iters().to_string(),
            report.inner_iters().to_string(),
            t.rounds.to_string(),
            t.grouped_rounds.to_string(),
            secs.to_string(),
            report.converged.to_string(),
        ])
        .map_err(csv_err)?;
        summarize(&format!("tau {tau}"), &report);
    }
    w.flush()?;
    Ok(())
}

fn cmd_sweep_hessian(
    run: Run,
    fractions: &[f64],
    out: Option<&Path>,
    trace_dir: Option<&Path>,
) -> Result<(), Error> {
    if fractions.is_empty() {
        return Err(Error::Config {
            field: "fractions",
            reason: "need at least one value".into(),
        });
    }
    for &hessian_fraction in fractions {
        SolverConfig { hessian_fraction, ..run.cfg.clone() }.validate()?;
    }
    let data = SparseDataset::from_path(&run.data)?;
    let mut w = csv::Writer::from_writer(output(out)?);
    w.write_record([
        "fraction",
        "outer_iters",
        "inner_iters",
        "rounds",
        "grouped_rounds",
        "vector_elements",
        "wall_seconds",
        "final_grad_norm",
        "converged",
    ])
    .map_err(csv_err)?;
    for &hessian_fraction in fractions {
        let cfg = SolverConfig { hessian_fraction, ..run.cfg.clone() };
        let start = Instant::now();
        let report = solver::solve(&data, &cfg)?;
        let secs = wall(&cfg, start);
        save_trace(trace_dir, &format!("trace_fraction_{hessian_fraction}.csv"), &report)?;
        let t = report.ledger.total();
        w.write_record([
            hessian_fraction.to_string(),
            report.outer_iters().to_string(),
            report.inner_iters().to_string(),
            t.rounds.to_string(),
            t.grouped_rounds.to_string(),
            t.vector_elements.to_string(),
            secs.to_string(),
            format!("{:e}", report.final_record().grad_norm),
            report.converged.to_string(),
        ])
        .map_err(csv_err)?;
        summarize(&format!("fraction {hessian_fraction}"), &report);
    }
    w.flush()?;
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Error> {
    let ds = match args.kind {
        Kind::Dense => synth::dense_gaussian(args.samples, args.features, args.task, args.noise, args.seed)?,
        Kind::Text => synth::sparse_text(
            args.samples,
            args.features,
            args.nnz,
            args.task,
            args.noise,
            args.seed,
        )?,
    };
    let mut f = BufWriter::new(File::create(&args.out)?);
    ds.write_libsvm(&mut f)?;
    f.flush()?;
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::DimensionMismatch { .. } | Error::EmptySubset => 2,
        Error::Io(_) | Error::Parse(_) => 3,
        _ => 4,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let file = || load_config(cli.config.as_deref());
    match cli.command {
        Command::Solve { run, out, ledger_out } => {
            cmd_solve(merge(file()?, run)?, out.as_deref(), ledger_out.as_deref())
        }
        Command::Compare { run, out, trace_dir } => {
            cmd_compare(merge(file()?, run)?, out.as_deref(), trace_dir.as_deref())
        }
        Command::SweepTau { run, taus, out, trace_dir } => {
            cmd_sweep_tau(merge(file()?, run)?, &taus, out.as_deref(), trace_dir.as_deref())
        }
        Command::SweepHessian { run, fractions, out, trace_dir } => cmd_sweep_hessian(
            merge(file()?, run)?,
            &fractions,
            out.as_deref(),
            trace_dir.as_deref(),
        ),
        Command::Generate(args) => cmd_generate(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
