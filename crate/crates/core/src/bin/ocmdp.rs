use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ocmdp::harness::{
    compute_baseline, compute_regret, generate_scenario_dir, load_scenario, run_scenario, sweep_scenario,
    verify_suite, write_run_outputs, RunOptions,
};

#[derive(Parser)]
#[command(name = "ocmdp", about = "Online control of weakly coupled constrained MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario directory from a configuration file.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the controller on a scenario.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long = "T")]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "V")]
        v: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Check the per-slot inequalities; abort on the first violation.
        #[arg(long)]
        check: bool,
        /// Output directory (defaults to `<scenario>/runs/T<T>-seed<seed>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep horizons over several seeds.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long = "T", value_delimiter = ',')]
        horizons: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the stationary benchmark.
    Baseline {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long = "T", default_value_t = 10_000)]
        horizon: usize,
    },
    /// Run the verification suite; exit code 0 iff every check passes.
    Check {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn print_json<T: serde::Serialize>(v: &T) -> ocmdp::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> ocmdp::Result<bool> {
    match cli.command {
        Command::Gen { config, out } => {
            let scn = generate_scenario_dir(&config, &out)?;
            eprintln!("wrote {} (eta = {})", out.display(), scn.certificate.eta);
        }
        Command::Run {
            scenario,
            horizon,
            seed,
            v,
            alpha,
            check,
            out,
        } => {
            let scn = load_scenario(&scenario)?;
            let mut opts = RunOptions::new(horizon, seed);
            opts.v = v;
            opts.alpha = alpha;
            opts.check = check;
            let record = run_scenario(&scn, &opts)?;
            let dir = out.unwrap_or_else(|| scenario.join("runs").join(format!("T{horizon}-seed{seed}")));
            write_run_outputs(&record, &dir)?;
            let baseline = compute_baseline(&scn, horizon)?;
            print_json(&compute_regret(&record, &baseline)?)?;
        }
        Command::Sweep {
            scenario,
            horizons,
            seeds,
            out,
        } => {
            let scn = load_scenario(&scenario)?;
            let result = sweep_scenario(&scn, &horizons, seeds)?;
            let path = out.unwrap_or_else(|| scenario.join("sweep.json"));
            std::fs::write(&path, serde_json::to_string_pretty(&result)? + "\n")?;
            eprintln!("wrote {} (slope {:.3})", path.display(), result.slope);
        }
        Command::Baseline { scenario, horizon } => {
            let scn = load_scenario(&scenario)?;
            print_json(&compute_baseline(&scn, horizon)?)?;
        }
        Command::Check { scenario } => {
            let report = verify_suite(&scenario);
            for c in &report.checks {
                let mark = if c.passed { "PASS" } else { "FAIL" };
                println!("{mark} {}/{}: {}", c.module, c.name, c.detail);
            }
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
