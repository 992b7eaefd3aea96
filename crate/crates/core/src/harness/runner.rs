use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::report::{summarize, write_histograms, write_metrics, write_summary, HistogramRow, MetricRow};
use crate::env::StrategicEnv;
use crate::error::{Error, Result};
use crate::learner::{self, Method, RunOutput};
use crate::loanenv::LoanEnv;
use crate::synthenv::SynthEnv;

/// Environment variable naming the worker count.
pub const WORKERS_ENV: &str = "STRATPG_WORKERS";

pub fn build_env(cfg: &ExperimentConfig) -> Result<Box<dyn StrategicEnv>> {
    Ok(if cfg.scenario.is_synthetic() {
        Box::new(SynthEnv::new(cfg.synthetic.clone())?)
    } else {
        Box::new(LoanEnv::new(cfg.loan.clone())?)
    })
}

/// Seed that fixes the environment itself.
pub fn env_seed(cfg: &ExperimentConfig) -> u64 {
    if cfg.scenario.is_synthetic() {
        cfg.synthetic.structural_seed
    } else {
        cfg.loan.data_seed
    }
}

fn workers() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got `{s}`"))),
        },
    }
}

/// Every `(method, seed)` run, in configuration order. Runs execute in
/// parallel; each is sequential and seeded on its own, so results do not
/// depend on scheduling.
pub fn run_all(cfg: &ExperimentConfig, env: &dyn StrategicEnv) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    let jobs: Vec<(Method, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(method, seed)| {
                let started = std::time::Instant::now();
                let out = learner::run(env, &cfg.learner, method, seed)?;
                log::info!(
                    "{method} seed {seed}: best {:.4}, final {:.4} ({:.1}s)",
                    out.best_value(),
                    out.final_record().map_or(f64::NAN, |r| r.policy_value),
                    started.elapsed().as_secs_f64()
                );
                Ok(out)
            })
            .collect()
    })
}

/// Runs the experiment and writes its directory: `metrics.csv`,
/// `summary.csv`, `histograms.csv`, `config.toml` and `seeds.csv`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let env = build_env(cfg)?;
    let outputs = run_all(cfg, env.as_ref())?;
    write_run_dir(cfg, &outputs, &cfg.output_dir)?;
    Ok(cfg.output_dir.clone())
}

pub fn write_run_dir(cfg: &ExperimentConfig, outputs: &[RunOutput], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let metrics: Vec<MetricRow> = outputs.iter().flat_map(|o| o.records.iter().map(MetricRow::from)).collect();
    write_metrics(&dir.join("metrics.csv"), &metrics)?;
    write_summary(&dir.join("summary.csv"), &summarize(&metrics))?;
    let hist: Vec<HistogramRow> = outputs.iter().flat_map(HistogramRow::from_output).collect();
    write_histograms(&dir.join("histograms.csv"), &hist)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;

    let mut seeds = csv::Writer::from_path(dir.join("seeds.csv"))?;
    seeds.write_record(["method", "seed", "env_seed"])?;
    for o in outputs {
        seeds.write_record([o.method.name().to_string(), o.seed.to_string(), env_seed(cfg).to_string()])?;
    }
    seeds.flush()?;
    Ok(())
}
