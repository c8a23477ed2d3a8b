use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};
use homlab::cli::{compare, run, write_compare, CliError, ExperimentConfig, Subcommand};

#[derive(Parser)]
#[command(name = "homlab", version, about = "Homogenization expansion experiments on the lattice torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Flat TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "HOMLAB_WORKERS")]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Series terms and their signed sum.
    Expansion(RunArgs),
    /// Averaged resolvent symbol and k1.
    Annealed(RunArgs),
    /// Exact enumeration of the effective operator.
    Oracle(RunArgs),
    /// Chain-kernel bound scan.
    Bounds(RunArgs),
    /// Path families and the irreducibility identity.
    Diagrams(RunArgs),
    /// Markov brothers inequality checks.
    Markov(RunArgs),
    /// Decay fit of a kernel or symbol table.
    Fit {
        #[command(flatten)]
        run: RunArgs,
        /// Table produced by `expansion` or `annealed`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Per-probe z-scores between two k1 tables.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        tolerance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w);
    }
    b.build().map_err(|e| CliError::Config(e.to_string()))
}

fn execute(sub: Subcommand, args: RunArgs, input: Option<PathBuf>) -> Result<u8, CliError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let workers = args.workers.or(cfg.workers);
    if workers == Some(0) {
        return Err(CliError::Config("workers must be positive".into()));
    }
    let out = args
        .out
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let output = pool(workers)?.install(|| run(sub, &cfg, &out, input.as_deref()))?;
    for f in &output.files {
        println!("wrote {}", f.display());
    }
    for n in &output.notes {
        println!("{n}");
    }
    Ok(0)
}

fn execute_compare(a: PathBuf, b: PathBuf, tolerance: f64, out: Option<PathBuf>) -> Result<u8, CliError> {
    let report = compare(&a, &b, tolerance)?;
    if let Some(dir) = out {
        let path = write_compare(&report, &a, &b, &dir)?;
        println!("wrote {}", path.display());
    }
    println!("{}", report.summary());
    Ok(if report.passed() { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Expansion(a) => execute(Subcommand::Expansion, a, None),
        Command::Annealed(a) => execute(Subcommand::Annealed, a, None),
        Command::Oracle(a) => execute(Subcommand::Oracle, a, None),
        Command::Bounds(a) => execute(Subcommand::Bounds, a, None),
        Command::Diagrams(a) => execute(Subcommand::Diagrams, a, None),
        Command::Markov(a) => execute(Subcommand::Markov, a, None),
        Command::Fit { run, input } => execute(Subcommand::Fit, run, input),
        Command::Compare { a, b, tolerance, out } => execute_compare(a, b, tolerance, out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
