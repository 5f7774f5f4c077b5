use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cellhom::config::{parse_config, SEED_ENV};
use cellhom::driver::run;
use cellhom::validation::run_suite;

#[derive(Parser)]
#[command(name = "cellhom", version, about = "Cell-problem homogenization of lattice energies")]
struct Cli {
    /// Worker threads (default: hardware parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a JSON run config.
    Run {
        config: PathBuf,
        /// Output directory, overriding `output.dir` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite and print one line per property.
    Validate {
        /// Smaller samples and boxes.
        #[arg(long)]
        quick: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match cli.command {
        Command::Run { config, out } => run_config(&config, out),
        Command::Validate { quick } => validate(quick),
    }
}

fn run_config(path: &Path, out: Option<PathBuf>) -> ExitCode {
    let outcome = parse_config(path).and_then(|mut c| {
        c.apply_env_seed()?;
        run(&c, out.as_deref())
    });
    match outcome {
        Ok(o) => {
            for line in &o.lines {
                println!("{line}");
            }
            for e in &o.errors {
                eprintln!("solve failed: {e}");
            }
            println!("wrote {}", o.out_dir.display());
            if o.success() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn validate(quick: bool) -> ExitCode {
    let seed = match std::env::var(SEED_ENV).map(|v| v.trim().parse::<u64>()) {
        Ok(Ok(s)) => s,
        Ok(Err(_)) => {
            eprintln!("error: {SEED_ENV} is not an unsigned integer");
            return ExitCode::FAILURE;
        }
        Err(_) => 0,
    };
    match run_suite(quick, seed) {
        Ok(results) => {
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} of {} properties passed", results.len() - failed, results.len());
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
