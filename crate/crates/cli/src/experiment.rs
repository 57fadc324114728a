//! Drives a full (ratio, k, seed) sweep and persists every output file.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use qratio_core::trainer::{
    assemble_grid, plan_sweep, run_sweep_cell, RunResult, RunSpec, SweepGrid, SweepRow,
};
use qratio_core::Error;

use crate::config::ExperimentConfig;
use crate::{outputs, CliError};

#[derive(Debug)]
pub struct ExperimentReport {
    pub rows: Vec<SweepRow>,
    pub grid: SweepGrid,
    /// Count of runs that ended with non-finite numerics and scored zero.
    pub diverged_runs: usize,
}

/// Creates the output tree and echoes the resolved config into it. Running
/// this before any training means an unwritable destination fails fast.
pub fn prepare_output_dir(config: &ExperimentConfig) -> Result<(), CliError> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir.join("curves"))
        .map_err(|e| crate::io_err(&format!("creating {}", dir.join("curves").display()), e))?;
    let echo = toml::to_string_pretty(config)
        .map_err(|e| CliError::Io(format!("encoding config echo: {e}")))?;
    outputs::atomic_write(&dir.join("config_used.toml"), echo.as_bytes())
}

fn run_cell(config: &ExperimentConfig, spec: RunSpec) -> Result<(SweepRow, RunResult), CliError> {
    run_sweep_cell(&config.train, config.base_seed, spec).map_err(|e| match e {
        Error::InvalidConfig(_) => crate::config_err(e),
        other => CliError::Config(format!("run {spec:?}: {other}")),
    })
}

/// Runs every cell of the sweep plan, honoring `parallelism`. Results come
/// back in plan order regardless of completion order, so downstream files
/// are byte-stable across thread counts.
pub fn run_plan(
    config: &ExperimentConfig,
    plan: &[RunSpec],
) -> Result<Vec<(SweepRow, RunResult)>, CliError> {
    if config.parallelism <= 1 {
        return plan.iter().map(|&spec| run_cell(config, spec)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| CliError::Config(format!("building thread pool: {e}")))?;
    pool.install(|| {
        plan.par_iter()
            .map(|&spec| run_cell(config, spec))
            .collect()
    })
}

/// The whole experiment: prepare the output directory, train every sweep
/// cell, then write results.csv, heatmap.csv, summary.csv and one curve file
/// per run. Diverged runs are recorded, not fatal.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, CliError> {
    config.validate()?;
    prepare_output_dir(config)?;

    let plan = plan_sweep(&config.ratios, &config.k_values, &config.train.seeds);
    let cells = run_plan(config, &plan)?;

    let rows: Vec<SweepRow> = cells.iter().map(|(row, _)| row.clone()).collect();
    let grid = assemble_grid(&config.ratios, &config.k_values, &rows).map_err(crate::config_err)?;

    let dir: &Path = &config.output_dir;
    outputs::atomic_write(&dir.join("results.csv"), &outputs::results_csv(&rows)?)?;
    outputs::atomic_write(&dir.join("heatmap.csv"), &outputs::heatmap_csv(&grid)?)?;
    outputs::atomic_write(&dir.join("summary.csv"), &outputs::summary_csv(&grid)?)?;
    for (row, result) in &cells {
        let path = outputs::curve_path(dir, row);
        outputs::atomic_write(&path, &outputs::curve_csv(&result.eval_curve)?)?;
    }

    let diverged_runs = rows.iter().filter(|r| r.diverged).count();
    Ok(ExperimentReport {
        rows,
        grid,
        diverged_runs,
    })
}
