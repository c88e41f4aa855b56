use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedself::experiment::{run_experiment, run_sweep, write_bundle, write_sweep, ExperimentConfig};
use fedself::{AggregationStrategy, Error};

/// Environment variable naming the default output directory.
const OUTPUT_DIR_ENV: &str = "FEDSELF_OUTPUT_DIR";
const FALLBACK_OUTPUT_DIR: &str = "results";

#[derive(Parser)]
#[command(
    name = "fedself",
    version,
    about = "Federated-learning simulator with selfish clients and robust aggregation"
)]
struct Cli {
    /// Worker threads for client training; outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Overrides `rounds` from the config file.
    #[arg(long)]
    rounds: Option<usize>,
    /// Overrides `strategy`: fed_avg, marginal_median, downscale or rfl_self.
    #[arg(long)]
    strategy: Option<AggregationStrategy>,
    /// Overrides `output_dir` and the FEDSELF_OUTPUT_DIR default.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run every combination of alpha, selfish-client count and seed.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        selfish: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the randomized self-checks.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } => 2,
        Error::Io { .. } => 3,
        _ => 1,
    }
}

fn load(path: &Path, overrides: &Overrides) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(r) = overrides.rounds {
        cfg.rounds = r;
    }
    if let Some(s) = overrides.strategy {
        cfg.strategy = s;
    }
    cfg.validate()?;
    let out = overrides
        .output_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUTPUT_DIR));
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run { config, overrides } => {
            let (cfg, out) = load(&config, &overrides)?;
            let bundle = run_experiment(&cfg)?;
            write_bundle(&bundle, &out)?;
            let s = &bundle.summary;
            println!("wrote {}", out.display());
            if let Some(n) = s.normal {
                println!("normal clients: {:.4} +- {:.4}", n.mean, n.std);
            }
            if let Some(g) = s.selfish {
                println!("selfish clients: {:.4} +- {:.4}", g.mean, g.std);
            }
            if let Some(c) = s.counterfactual_normal {
                println!("normal clients, all-normal twin: {:.4} +- {:.4}", c.mean, c.std);
            }
            if let Some(msg) = &s.divergence {
                eprintln!("{msg}");
                return Ok(2);
            }
            Ok(0)
        }
        Command::Sweep {
            config,
            alphas,
            selfish,
            seeds,
            overrides,
        } => {
            let (cfg, out) = load(&config, &overrides)?;
            let cells = run_sweep(&cfg, &alphas, &selfish, &seeds)?;
            write_sweep(&cells, &out)?;
            let failed = cells.iter().filter(|c| c.result.is_err()).count();
            let diverged = cells
                .iter()
                .filter(|c| c.result.as_ref().is_ok_and(|b| b.diverged()))
                .count();
            println!(
                "wrote {} ({} cells, {failed} failed, {diverged} diverged)",
                out.display(),
                cells.len()
            );
            for c in cells.iter().filter(|c| c.result.is_err()) {
                eprintln!(
                    "alpha {} selfish {} seed {}: {}",
                    c.alpha,
                    c.selfish_count,
                    c.seed,
                    c.result.as_ref().unwrap_err()
                );
            }
            Ok(0)
        }
        Command::Verify { seed } => {
            let reports = fedself::verify::run_all(seed)?;
            let mut ok = true;
            for r in &reports {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                ok &= r.passed;
            }
            Ok(if ok { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match cli.threads {
        Some(0) => {
            eprintln!("--threads must be >= 1");
            return ExitCode::from(1);
        }
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
