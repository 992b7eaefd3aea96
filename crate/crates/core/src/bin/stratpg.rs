use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stratpg::harness::{self, exit_code, ExperimentConfig, Scenario, SummaryRow};
use stratpg::loanenv::generate_surrogate;
use stratpg::theorychecks::{run_suite, Suite};
use stratpg::Result;

#[derive(Parser)]
#[command(name = "stratpg", version, about = "Policy learning under strategic manipulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, seed) pair of an experiment.
    Run {
        /// TOML configuration; keys left out come from the scenario preset.
        config: Option<PathBuf>,
        /// Preset to start from.
        #[arg(long, value_parser = parse_scenario)]
        scenario: Option<Scenario>,
        /// Override a key, e.g. `--set synthetic.cost=0.15`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate run directories into tables and plots.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Run a numerical verification suite.
    Check {
        /// gradients, lemma1, prop2, counts, trend or all.
        #[arg(value_parser = parse_suite)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a surrogate loan dataset as CSV.
    Surrogate {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 55)]
        dim_v: usize,
    },
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e: stratpg::Error| e.to_string())
}

fn parse_suite(s: &str) -> std::result::Result<Suite, String> {
    s.parse().map_err(|e: stratpg::Error| e.to_string())
}

fn print_summary(rows: &[SummaryRow]) {
    println!(
        "{:<10} {:>5} {:>22} {:>22} {:>9} {:>7}",
        "method", "seeds", "best", "final", "%change", "move"
    );
    for r in rows {
        println!(
            "{:<10} {:>5} {:>12.4} ± {:<7.4} {:>12.4} ± {:<7.4} {:>9.2} {:>7.3}",
            r.method, r.seeds, r.best_mean, r.best_se, r.final_mean, r.final_se, r.pct_change_mean, r.move_mean
        );
    }
}

fn run(config: Option<PathBuf>, scenario: Option<Scenario>, mut overrides: Vec<String>, out: Option<PathBuf>) -> Result<i32> {
    if let Some(s) = scenario {
        overrides.insert(0, format!("scenario=\"{s}\""));
    }
    if let Some(dir) = out {
        overrides.push(format!("output_dir={}", toml::Value::String(dir.display().to_string())));
    }
    let cfg = match config {
        Some(path) => ExperimentConfig::load(&path, &overrides)?,
        None => ExperimentConfig::from_overrides(scenario.unwrap_or(Scenario::Synthetic), &overrides)?,
    };
    let dir = harness::run_experiment(&cfg)?;
    print_summary(&harness::read_summary(&dir.join("summary.csv"))?);
    println!("results in {}", dir.display());
    Ok(exit_code::OK)
}

fn check(suite: Suite, seed: u64) -> Result<i32> {
    let results = run_suite(suite, seed)?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    Ok(if failed == 0 { exit_code::OK } else { exit_code::FAILURE })
}

fn surrogate(rows: usize, out: PathBuf, seed: u64, dim_v: usize) -> Result<i32> {
    let data = generate_surrogate(rows, dim_v, &mut ChaCha8Rng::seed_from_u64(seed))?;
    data.write_csv(&out)?;
    println!("wrote {rows} rows to {}", out.display());
    Ok(exit_code::OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            scenario,
            overrides,
            out,
        } => run(config, scenario, overrides, out),
        Command::Report { dirs, out } => harness::report(&dirs, &out).map(|rows| {
            print_summary(&rows);
            println!("report in {}", out.display());
            exit_code::OK
        }),
        Command::Check { suite, seed } => check(suite, seed),
        Command::Surrogate { rows, out, seed, dim_v } => surrogate(rows, out, seed, dim_v),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code_for(&e) as u8)
        }
    }
}
