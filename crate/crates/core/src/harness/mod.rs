//! Experiment orchestration: replicate sweeps, strategy comparison and report
//! files.

pub mod config;
pub mod finite_sample;
pub mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;
use crate::scenario::{compute_similarities, generate_scenario, Scenario};
use crate::selection::{run_ideal, run_random_baseline, run_sis, SisTrajectory, Strategy};

pub use config::{HarnessParams, RunConfig, ScenarioParams};
pub use finite_sample::{finite_sample_study, Estimator, FiniteSampleParams, FiniteSampleReport};
pub use report::{aggregate, ComponentRow, ReportRow, TrajectoryRow};

/// How independent replicates are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// `workers = 0` uses every available core.
    Parallel { workers: usize },
}

impl Execution {
    pub fn from_workers(workers: usize) -> Self {
        if workers == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel { workers }
        }
    }
}

/// `f(0), ..., f(n - 1)` in index order, possibly computed in parallel.
pub fn map_replicates<T, F>(n: usize, exec: Execution, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => Ok((0..n).map(f).collect()),
        #[cfg(feature = "parallel")]
        Execution::Parallel { workers } => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel { .. } => Ok((0..n).map(f).collect()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub run_seed: u64,
    pub error: String,
}

/// Everything one replicate produced.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub run_seed: u64,
    pub scenario: Scenario,
    pub trajectories: Vec<SisTrajectory>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub replicates: Vec<Replicate>,
    pub failures: Vec<Failure>,
    pub rows: Vec<TrajectoryRow>,
    pub components: Vec<ComponentRow>,
    pub report: Vec<ReportRow>,
}

impl SweepOutcome {
    pub fn n_runs(&self) -> usize {
        self.replicates.len() + self.failures.len()
    }

    /// Errors when more than 1% of replicates failed.
    pub fn check_failures(&self) -> Result<()> {
        let (failed, total) = (self.failures.len(), self.n_runs());
        if failed * 100 > total {
            return Err(Error::TooManyFailures { failed, total });
        }
        Ok(())
    }

    /// Last-round trajectory rows of one strategy, one per successful run.
    pub fn final_rows(&self, strategy: Strategy) -> Vec<&TrajectoryRow> {
        let name = strategy.as_str();
        let mut last: BTreeMap<u64, &TrajectoryRow> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.strategy == name) {
            last.insert(r.run_seed, r);
        }
        last.into_values().collect()
    }
}

/// Scenario, similarities, norm estimate and every requested strategy for
/// replicate seed `run_seed`.
pub fn run_replicate(config: &RunConfig, run_seed: u64) -> Result<Replicate> {
    let p = &config.scenario;
    let mut scenario = generate_scenario(p.n_iv, p.d_x, p.d_id, run_seed)?;
    if p.noiseless {
        scenario = scenario.without_confounding();
    }
    let trajectories = run_strategies(config, &scenario, run_seed, &config.harness.strategies)?;
    Ok(Replicate {
        run_seed,
        scenario,
        trajectories,
    })
}

/// Runs `strategies` on a given scenario with the seeds a sweep replicate
/// `run_seed` would use.
pub fn run_strategies(
    config: &RunConfig,
    scenario: &Scenario,
    run_seed: u64,
    strategies: &[Strategy],
) -> Result<Vec<SisTrajectory>> {
    let sim = compute_similarities(
        scenario,
        config.scenario.similarity_noise_sd,
        rng::derive_seed(run_seed, 1),
    )?;
    let norm = config
        .harness
        .norm_provider
        .resolve(scenario, rng::derive_seed(run_seed, 2))?;
    let exp_seed = rng::derive_seed(run_seed, 3);
    let sel = &config.selection;
    strategies
        .iter()
        .map(|s| match s {
            Strategy::Sis => run_sis(scenario, &sim, norm, sel, exp_seed),
            Strategy::Random => run_random_baseline(scenario, norm, sel, exp_seed),
            Strategy::Ideal => run_ideal(scenario, norm, sel, exp_seed),
        })
        .collect()
}

/// Runs every replicate and aggregates, without touching the filesystem.
pub fn simulate_sweep(config: &RunConfig, exec: Execution) -> Result<SweepOutcome> {
    config.validate()?;
    let base = config.harness.base_seed;
    let results = map_replicates(config.harness.n_runs, exec, |r| {
        let seed = base.wrapping_add(r as u64);
        run_replicate(config, seed).map_err(|e| Failure {
            run_seed: seed,
            error: e.to_string(),
        })
    })?;

    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rep) => replicates.push(rep),
            Err(f) => failures.push(f),
        }
    }

    let mut rows = Vec::new();
    let mut components = Vec::new();
    for rep in &replicates {
        for t in &rep.trajectories {
            rows.extend(report::trajectory_rows(rep.run_seed, &rep.scenario, t));
            components.extend(report::component_rows(rep.run_seed, &rep.scenario, t));
        }
    }
    rows.sort_by(|a, b| {
        (&a.strategy, a.run_seed, a.round).cmp(&(&b.strategy, b.run_seed, b.round))
    });
    components.sort_by(|a, b| {
        (&a.strategy, a.run_seed, a.component).cmp(&(&b.strategy, b.run_seed, b.component))
    });
    let report = aggregate(&rows);
    Ok(SweepOutcome {
        replicates,
        failures,
        rows,
        components,
        report,
    })
}

#[derive(Serialize)]
struct StrategySummary {
    runs: usize,
    mean_final_mse_nonzero: f64,
    median_final_mse_nonzero: f64,
    mean_rounds: f64,
    stopped_early: usize,
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    config: &'a RunConfig,
    n_runs: usize,
    succeeded: usize,
    failed: usize,
    failures: &'a [Failure],
    strategies: BTreeMap<String, StrategySummary>,
}

#[derive(Serialize)]
struct TrajectoryDump<'a> {
    run_seed: u64,
    trajectory: &'a SisTrajectory,
}

/// Writes `trajectories.csv`, `components.csv`, `report.csv`,
/// `trajectories.json` and `summary.json` into `dir`.
pub fn write_outputs(config: &RunConfig, outcome: &SweepOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    report::write_csv_file(&outcome.rows, &dir.join("trajectories.csv"))?;
    report::write_csv_file(&outcome.components, &dir.join("components.csv"))?;
    report::write_csv_file(&outcome.report, &dir.join("report.csv"))?;

    let mut dump: Vec<TrajectoryDump> = outcome
        .replicates
        .iter()
        .flat_map(|r| {
            r.trajectories.iter().map(move |t| TrajectoryDump {
                run_seed: r.run_seed,
                trajectory: t,
            })
        })
        .collect();
    dump.sort_by(|a, b| {
        (a.trajectory.strategy.as_str(), a.run_seed)
            .cmp(&(b.trajectory.strategy.as_str(), b.run_seed))
    });
    write_json(&dump, &dir.join("trajectories.json"))?;

    let mut strategies = BTreeMap::new();
    for s in &config.harness.strategies {
        let finals = outcome.final_rows(*s);
        let mse: Vec<f64> = finals.iter().map(|r| r.mse_nonzero).collect();
        let summary = report::summarize(&mse);
        let n = finals.len().max(1) as f64;
        strategies.insert(
            s.to_string(),
            StrategySummary {
                runs: finals.len(),
                mean_final_mse_nonzero: summary.mean,
                median_final_mse_nonzero: summary.median,
                mean_rounds: finals.iter().map(|r| r.round as f64).sum::<f64>() / n,
                stopped_early: finals.iter().filter(|r| r.stopped).count(),
            },
        );
    }
    let summary = SweepSummary {
        config,
        n_runs: outcome.n_runs(),
        succeeded: outcome.replicates.len(),
        failed: outcome.failures.len(),
        failures: &outcome.failures,
        strategies,
    };
    write_json(&summary, &dir.join("summary.json"))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Full sweep: simulate, write every output file, then fail if more than
/// 1% of replicates failed.
pub fn run_sweep(config: &RunConfig, exec: Execution) -> Result<SweepOutcome> {
    let outcome = simulate_sweep(config, exec)?;
    write_outputs(config, &outcome, &config.harness.output_dir)?;
    outcome.check_failures()?;
    Ok(outcome)
}

/// Re-aggregates an existing `trajectories.csv` into `report.csv` next to it.
pub fn rebuild_report(dir: &Path) -> Result<Vec<ReportRow>> {
    let rows = report::read_trajectories_file(&dir.join("trajectories.csv"))?;
    let agg = aggregate(&rows);
    report::write_csv_file(&agg, &dir.join("report.csv"))?;
    Ok(agg)
}
