use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mlmi::combine::{ShrinkageKind, ShrinkageSpec, DEFAULT_LAMBDA_MAX};
use mlmi::data_model::read_csv;
use mlmi::harness::{
    analyze, default_cells, empirical_gamma, parse_config, run_study, write_cells_csv, write_gamma_csv,
    write_markdown, Design, Method, Pattern,
};
use mlmi::rng::SeedStream;
use mlmi::Error;

const DEFAULT_SEED: u64 = 2012;
const CELL_REPS: usize = 400;
const GAMMA_REPS: usize = 40_000;
const GAMMA_REPS_FAST: usize = 10_000;

#[derive(Parser)]
#[command(name = "mlmi", version, about = "Multiple imputation from a single ML estimate, with variance shrinkage")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation study and write report.csv, gamma.csv and report.md.
    Simulate {
        /// JSON array of cells; the built-in grid when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Fewer replications in the missing-information phase.
        #[arg(long)]
        fast: bool,
        /// Skip the missing-information phase.
        #[arg(long)]
        no_gamma: bool,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Empirical fraction of missing information for one design.
    Gamma {
        #[arg(long)]
        pattern: Pattern,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = GAMMA_REPS)]
        reps: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Impute a user CSV and report pooled estimates as JSON.
    Impute {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: CliMethod,
        #[arg(long, default_value_t = 5)]
        imputations: usize,
        #[arg(long, default_value = "mean")]
        shrinkage: ShrinkageKind,
        #[arg(long, default_value_t = DEFAULT_LAMBDA_MAX)]
        lambda_max: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMethod {
    Ml,
    Pd,
}

enum Failure {
    Config(String),
    Cells(usize),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Json(_) => Failure::Config(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

fn simulate(config: Option<&Path>, out: &Path, fast: bool, no_gamma: bool, seed: u64) -> Result<(), Failure> {
    let cells = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            parse_config(&text)?
        }
        None => default_cells(CELL_REPS),
    };
    let gamma_reps = (!no_gamma).then_some(if fast { GAMMA_REPS_FAST } else { GAMMA_REPS });
    let report = run_study(&cells, seed, gamma_reps);
    fs::create_dir_all(out)?;
    write_cells_csv(&report, create(&out.join("report.csv"))?)?;
    write_gamma_csv(&report, create(&out.join("gamma.csv"))?)?;
    write_markdown(&report, create(&out.join("report.md"))?)?;
    for f in &report.failures {
        eprintln!("cell {} d={} {} failed: {}", f.cell.design.key(), f.cell.d, f.cell.method, f.reason);
    }
    for (d, reason) in &report.gamma_failures {
        eprintln!("missing-information phase {} failed: {reason}", d.key());
    }
    let failed = report.failures.len() + report.gamma_failures.len();
    if failed > 0 {
        return Err(Failure::Cells(failed));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config, out, fast, no_gamma, seed } => simulate(config.as_deref(), &out, fast, no_gamma, seed),
        Command::Gamma { pattern, n, rho, p, reps, seed } => {
            let design = Design { pattern, n, rho, p };
            design.validate()?;
            let g = empirical_gamma(&design, reps, SeedStream::new(seed))?;
            println!("design        {}", design.key());
            println!("replications  {} ({} redrawn)", g.replications, g.degenerate);
            println!("eigenvalues   {:.4} {:.4}", g.eigenvalues[0], g.eigenvalues[1]);
            Ok(())
        }
        Command::Impute { input, method, imputations, shrinkage, lambda_max, out, seed } => {
            let file = File::open(&input).map_err(|e| Failure::Other(format!("{}: {e}", input.display())))?;
            let data = read_csv(file)?;
            let method = match method {
                CliMethod::Pd => Method::Pd,
                CliMethod::Ml => Method::Ml(ShrinkageSpec::new(shrinkage, lambda_max).map_err(|e| Failure::Config(e.to_string()))?),
            };
            if imputations < 2 {
                return Err(Failure::Config("--imputations must be at least 2".into()));
            }
            let report = analyze(&data, method, imputations, seed)?;
            let json = report.to_json()?;
            match out {
                Some(path) => fs::write(&path, json + "\n")?,
                None => println!("{json}"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be positive");
            return ExitCode::from(2);
        }
        pool = pool.num_threads(w);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Cells(n)) => {
            eprintln!("{n} cell(s) failed");
            ExitCode::from(3)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
