//! Command-line front end for calibration experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tsinv::harness::{compare_dir, run_experiment, write_target, ExperimentConfig, HarnessError};
use tsinv::simulators::{make_target, parse_response, BuiltinSim, InputPoint, TestSimulator, TimeGrid};

#[derive(Parser)]
#[command(name = "tsinv", version, about = "Inverse problems for time-series simulators via EI sequential design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method and replication of an experiment config (TOML).
    Run {
        config: PathBuf,
        /// Override the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild <out-dir>/comparison.csv from the traces under it.
    Compare { out_dir: PathBuf },
    /// Write the output of a built-in simulator at x0 as a target CSV.
    TargetFromSim {
        sim: BuiltinSim,
        /// Input coordinates followed by the output path.
        #[arg(num_args = 2.., required = true)]
        rest: Vec<String>,
    },
    /// Serve a built-in simulator over the external protocol: read one line
    /// of coordinates from stdin, print the series to stdout.
    Simulate { sim: BuiltinSim },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.seeds = None;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let outcome = run_experiment(&cfg)?;
            for s in &outcome.summaries {
                println!(
                    "{:<14} seed {:<6} w_opt {:.6e}  x_opt {:?}  ({:.2}s)",
                    s.method.name(),
                    s.seed,
                    s.w_opt,
                    s.x_opt,
                    s.wall_time_seconds
                );
            }
            println!("results in {}", cfg.output_dir.display());
        }
        Command::Compare { out_dir } => {
            let n = compare_dir(&out_dir)?;
            println!("{} traces -> {}", n, out_dir.join("comparison.csv").display());
        }
        Command::TargetFromSim { sim, mut rest } => {
            let path = PathBuf::from(rest.pop().expect("clap enforces two values"));
            let coords = rest
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| HarnessError::Config(format!("bad coordinate '{s}'"))))
                .collect::<Result<Vec<_>, _>>()?;
            if coords.len() != sim.dim() {
                return Err(HarnessError::Config(format!(
                    "{} takes {} coordinates, got {}",
                    sim.name(),
                    sim.dim(),
                    coords.len()
                )));
            }
            let x0 = InputPoint::new(coords).map_err(|e| HarnessError::Config(e.to_string()))?;
            let target = make_target(&TestSimulator::new(sim, TimeGrid::default()), &x0)?;
            write_target(&target.series, &path)?;
            println!("wrote {}", path.display());
        }
        Command::Simulate { sim } => {
            let mut line = String::new();
            std::io::stdin()
                .read_line(&mut line)
                .map_err(|e| HarnessError::Config(format!("cannot read stdin: {e}")))?;
            let coords = parse_response(&line, sim.dim()).map_err(|e| HarnessError::Config(e.to_string()))?;
            let x = InputPoint::new(coords).map_err(|e| HarnessError::Config(e.to_string()))?;
            let series = sim.eval(&x, &TimeGrid::default())?;
            let text: Vec<String> = series.values().iter().map(|v| format!("{v:?}")).collect();
            println!("{}", text.join(" "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
