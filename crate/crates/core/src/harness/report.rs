//! Per-round metric rows and their aggregation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::selection::SisTrajectory;

/// One row of `trajectories.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub run_seed: u64,
    pub strategy: String,
    pub round: usize,
    /// `;`-joined zero-based instrument indices.
    pub chosen_instruments: String,
    pub combined_norm: f64,
    pub norm_estimate: f64,
    pub mse_nonzero: f64,
    pub identified_fraction: f64,
    pub error_bound: f64,
    pub stopped: bool,
    pub mse_full: f64,
}

pub const TRAJECTORY_HEADER: &[&str] = &[
    "run_seed",
    "strategy",
    "round",
    "chosen_instruments",
    "combined_norm",
    "norm_estimate",
    "mse_nonzero",
    "identified_fraction",
    "error_bound",
    "stopped",
    "mse_full",
];

/// One row of `components.csv`: final-round estimate of one component.
/// Component 0 is the intercept, component `k` is `beta_k` (one-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRow {
    pub run_seed: u64,
    pub strategy: String,
    pub component: usize,
    pub estimate: f64,
    pub truth: f64,
}

/// Summary statistics of one metric over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: String,
    /// Round number, or `final` for each run's last executed round.
    pub round: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub p10: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub p90: f64,
}

pub const METRICS: &[&str] = &[
    "mse_nonzero",
    "mse_full",
    "combined_norm",
    "identified_fraction",
    "error_bound",
];

/// Linear-interpolation quantile (R type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub p10: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub p90: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = if n == 0 {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / n as f64
    };
    Summary {
        n,
        mean,
        p10: quantile_sorted(&v, 0.1),
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
        p90: quantile_sorted(&v, 0.9),
    }
}

fn mse(a: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (sum, n) = a.fold((0.0, 0usize), |(s, n), (x, y)| (s + (x - y) * (x - y), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Metric rows for every executed round of a trajectory.
pub fn trajectory_rows(run_seed: u64, scenario: &Scenario, traj: &SisTrajectory) -> Vec<TrajectoryRow> {
    let beta = scenario.beta.as_slice();
    let support = scenario.support();
    let d_x = scenario.d_x as f64;
    traj.rounds
        .iter()
        .map(|r| TrajectoryRow {
            run_seed,
            strategy: traj.strategy.to_string(),
            round: r.round,
            chosen_instruments: r
                .instrument_set
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(";"),
            combined_norm: r.combined_norm,
            norm_estimate: traj.norm_estimate.value,
            mse_nonzero: mse(support.clone().map(|i| (r.combined[i], beta[i]))),
            identified_fraction: r.identified_indices.len() as f64 / d_x,
            error_bound: r.error_bound,
            stopped: r.stopped,
            mse_full: mse(r.combined.iter().copied().zip(beta.iter().copied())),
        })
        .collect()
}

/// Final-round components of a trajectory, intercept first.
pub fn component_rows(run_seed: u64, scenario: &Scenario, traj: &SisTrajectory) -> Vec<ComponentRow> {
    let Some(last) = traj.rounds.last() else {
        return Vec::new();
    };
    std::iter::once((last.offset, 0.0))
        .chain(
            last.combined
                .iter()
                .copied()
                .zip(scenario.beta.iter().copied()),
        )
        .enumerate()
        .map(|(component, (estimate, truth))| ComponentRow {
            run_seed,
            strategy: traj.strategy.to_string(),
            component,
            estimate,
            truth,
        })
        .collect()
}

fn metric(row: &TrajectoryRow, name: &str) -> f64 {
    match name {
        "mse_nonzero" => row.mse_nonzero,
        "mse_full" => row.mse_full,
        "combined_norm" => row.combined_norm,
        "identified_fraction" => row.identified_fraction,
        "error_bound" => row.error_bound,
        _ => unreachable!("unknown metric {name}"),
    }
}

/// Aggregates trajectory rows per strategy and round, plus a `final` group
/// holding each run's last executed round.
pub fn aggregate(rows: &[TrajectoryRow]) -> Vec<ReportRow> {
    let mut by_round: BTreeMap<(String, usize), Vec<&TrajectoryRow>> = BTreeMap::new();
    let mut last: BTreeMap<(String, u64), &TrajectoryRow> = BTreeMap::new();
    for r in rows {
        by_round
            .entry((r.strategy.clone(), r.round))
            .or_default()
            .push(r);
        last.entry((r.strategy.clone(), r.run_seed))
            .and_modify(|cur| {
                if r.round > cur.round {
                    *cur = r;
                }
            })
            .or_insert(r);
    }
    let mut finals: BTreeMap<String, Vec<&TrajectoryRow>> = BTreeMap::new();
    for ((strategy, _), r) in last {
        finals.entry(strategy).or_default().push(r);
    }

    let mut out = Vec::new();
    let mut emit = |strategy: &str, round: String, group: &[&TrajectoryRow]| {
        for m in METRICS {
            let values: Vec<f64> = group.iter().map(|r| metric(r, m)).collect();
            let s = summarize(&values);
            out.push(ReportRow {
                strategy: strategy.to_string(),
                round: round.clone(),
                metric: m.to_string(),
                n: s.n,
                mean: s.mean,
                p10: s.p10,
                q1: s.q1,
                median: s.median,
                q3: s.q3,
                p90: s.p90,
            });
        }
    };
    for ((strategy, round), group) in &by_round {
        emit(strategy, round.to_string(), group);
    }
    for (strategy, group) in &finals {
        emit(strategy, "final".to_string(), group);
    }
    out
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_csv_file<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(rows, f).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_trajectories<R: Read>(r: R) -> Result<Vec<TrajectoryRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != TRAJECTORY_HEADER {
        return Err(Error::Config(format!(
            "unexpected trajectory header: {}",
            header.join(",")
        )));
    }
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_trajectories_file(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trajectories(f)
}
