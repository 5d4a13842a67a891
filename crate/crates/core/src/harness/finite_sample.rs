//! Finite-sample behavior of the combined estimator: one experiment with all
//! instruments versus the same instruments split over two or three
//! experiments.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{map_replicates, report, write_json, Execution};
use crate::combination::{combine, combine_offsets, combined_covariance};
use crate::error::{Error, Result};
use crate::estimation::{estimate_projection, ProjectedEstimate, DEFAULT_RANK_TOL};
use crate::rng;
use crate::scenario::{generate_scenario, Scenario};
use crate::simulator::run_experiment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Estimator {
    IdealEx,
    TwoEx,
    ThreeEx,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::IdealEx, Estimator::TwoEx, Estimator::ThreeEx];

    /// Instrument sets of each experiment for `d_z` instruments: all at once;
    /// all but the last plus the last; every instrument alone.
    pub fn splits(&self, d_z: usize) -> Vec<Vec<usize>> {
        match self {
            Estimator::IdealEx => vec![(0..d_z).collect()],
            Estimator::TwoEx => vec![(0..d_z - 1).collect(), vec![d_z - 1]],
            Estimator::ThreeEx => (0..d_z).map(|i| vec![i]).collect(),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::IdealEx => "IdealEx",
            Estimator::TwoEx => "TwoEx",
            Estimator::ThreeEx => "ThreeEx",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSampleParams {
    pub d_x: usize,
    pub d_z: usize,
    /// Samples per experiment.
    pub n: usize,
    pub n_runs: usize,
    pub seed: u64,
    pub noiseless: bool,
}

impl Default for FiniteSampleParams {
    fn default() -> Self {
        Self {
            d_x: 3,
            d_z: 3,
            n: 1000,
            n_runs: 500,
            seed: 253,
            noiseless: false,
        }
    }
}

/// One component of one estimator in one run. Component 0 is the intercept,
/// component `k >= 1` is `beta_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSampleRow {
    pub run: usize,
    pub estimator: String,
    pub component: usize,
    pub estimate: f64,
    pub truth: f64,
    /// Standard error from the estimated covariance.
    pub se: f64,
}

/// Boxplot statistics of one component across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSampleStat {
    pub estimator: String,
    pub component: usize,
    pub truth: f64,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub p10: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub p90: f64,
    pub median_se: f64,
}

impl FiniteSampleStat {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSampleReport {
    pub params: FiniteSampleParams,
    pub scenario: Scenario,
    pub rows: Vec<FiniteSampleRow>,
    pub stats: Vec<FiniteSampleStat>,
}

impl FiniteSampleReport {
    pub fn stat(&self, estimator: Estimator, component: usize) -> Option<&FiniteSampleStat> {
        let name = estimator.to_string();
        self.stats
            .iter()
            .find(|s| s.estimator == name && s.component == component)
    }

    /// Writes `finite_sample.csv` (raw), `finite_sample_summary.csv` and
    /// `finite_sample.json` (parameters and scenario).
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        report::write_csv_file(&self.rows, &dir.join("finite_sample.csv"))?;
        report::write_csv_file(&self.stats, &dir.join("finite_sample_summary.csv"))?;
        #[derive(Serialize)]
        struct Meta<'a> {
            params: &'a FiniteSampleParams,
            scenario: &'a Scenario,
        }
        write_json(
            &Meta {
                params: &self.params,
                scenario: &self.scenario,
            },
            &dir.join("finite_sample.json"),
        )
    }
}

fn run_estimator(
    scenario: &Scenario,
    estimator: Estimator,
    n: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let estimates = estimator
        .splits(scenario.n_iv)
        .iter()
        .enumerate()
        .map(|(k, set)| {
            let data = run_experiment(scenario, set, n, rng::derive_seed(seed, k as u64))?;
            estimate_projection(&data, DEFAULT_RANK_TOL)
        })
        .collect::<Result<Vec<ProjectedEstimate>>>()?;
    let (combined, _) = combine(&estimates)?;
    let cov = combined_covariance(&estimates)?;
    let (offset, offset_var) = combine_offsets(&estimates);
    let values = std::iter::once(offset).chain(combined.iter().copied()).collect();
    let se = std::iter::once(offset_var)
        .chain(cov.diagonal().iter().copied())
        .map(|v| v.max(0.0).sqrt())
        .collect();
    Ok((values, se))
}

/// Repeats every estimator `n_runs` times on one scenario with `d_z`
/// instruments, all of which identify `beta`.
pub fn finite_sample_study(params: &FiniteSampleParams, exec: Execution) -> Result<FiniteSampleReport> {
    let FiniteSampleParams {
        d_x,
        d_z,
        n,
        n_runs,
        seed,
        noiseless,
    } = *params;
    if d_z < 2 || d_z > d_x {
        return Err(Error::InvalidParameter(format!(
            "need 2 <= d_z <= d_x, got d_z = {d_z}, d_x = {d_x}"
        )));
    }
    if n_runs == 0 {
        return Err(Error::InvalidParameter("n_runs must be at least 1".into()));
    }
    let mut scenario = generate_scenario(d_z, d_x, d_z, seed)?;
    if noiseless {
        scenario = scenario.without_confounding();
    }
    let truth: Vec<f64> = std::iter::once(0.0)
        .chain(scenario.beta.iter().copied())
        .collect();

    let per_run = map_replicates(n_runs, exec, |run| {
        let run_seed = rng::derive_seed(seed, run as u64 + 1);
        Estimator::ALL
            .iter()
            .enumerate()
            .map(|(k, &est)| {
                let (values, se) =
                    run_estimator(&scenario, est, n, rng::derive_seed(run_seed, k as u64))?;
                Ok(values
                    .into_iter()
                    .zip(se)
                    .enumerate()
                    .map(|(component, (estimate, se))| FiniteSampleRow {
                        run,
                        estimator: est.to_string(),
                        component,
                        estimate,
                        truth: truth[component],
                        se,
                    })
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rows: Vec<FiniteSampleRow> = Vec::new();
    for r in per_run {
        rows.extend(r?.into_iter().flatten());
    }

    let mut groups: BTreeMap<(Estimator, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &rows {
        let est = Estimator::ALL
            .into_iter()
            .find(|e| e.to_string() == r.estimator)
            .expect("known estimator");
        let g = groups.entry((est, r.component)).or_default();
        g.0.push(r.estimate);
        g.1.push(r.se);
    }
    let stats = groups
        .into_iter()
        .map(|((est, component), (values, ses))| {
            let s = report::summarize(&values);
            let var = values.iter().map(|v| (v - s.mean).powi(2)).sum::<f64>()
                / (values.len().max(2) - 1) as f64;
            FiniteSampleStat {
                estimator: est.to_string(),
                component,
                truth: truth[component],
                n: s.n,
                mean: s.mean,
                sd: var.sqrt(),
                p10: s.p10,
                q1: s.q1,
                median: s.median,
                q3: s.q3,
                p90: s.p90,
                median_se: report::summarize(&ses).median,
            }
        })
        .collect();
    Ok(FiniteSampleReport {
        params: params.clone(),
        scenario,
        rows,
        stats,
    })
}
