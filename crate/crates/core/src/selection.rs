//! Instrument-subset scoring and the sequential selection loop.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::combination::{RoundRecord, RunningEstimate, DEFAULT_DELTA};
use crate::error::{Error, Result};
use crate::estimation::{estimate_projection, DEFAULT_RANK_TOL};
use crate::norm::NormEstimate;
use crate::rng;
use crate::scenario::{Scenario, SimilarityMatrix};
use crate::simulator::run_experiment;

/// Experiment cost as a function of the number of randomized instruments.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum CostKind {
    #[default]
    Log,
    Linear(f64),
    Constant,
}

impl FromStr for CostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "log" => Ok(CostKind::Log),
            "constant" => Ok(CostKind::Constant),
            "linear" => Ok(CostKind::Linear(1.0)),
            other => {
                let unit = other
                    .strip_prefix("linear:")
                    .and_then(|u| u.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown cost kind `{other}`")))?;
                if !(unit >= 0.0 && unit.is_finite()) {
                    return Err(Error::Config(format!("linear cost unit {unit}")));
                }
                Ok(CostKind::Linear(unit))
            }
        }
    }
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostKind::Log => write!(f, "log"),
            CostKind::Linear(u) => write!(f, "linear:{u}"),
            CostKind::Constant => write!(f, "constant"),
        }
    }
}

impl Serialize for CostKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CostKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// How `epsilon` is turned into the stopping tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonMode {
    /// `epsilon * norm_estimate`
    #[default]
    Relative,
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub t_max: usize,
    pub max_per_round: usize,
    pub cost: CostKind,
    pub epsilon: f64,
    pub epsilon_mode: EpsilonMode,
    pub delta: f64,
    pub n_per_experiment: usize,
    pub rank_tol: f64,
    /// Above this many candidate subsets per round, selection turns greedy.
    pub enumeration_budget: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            t_max: 6,
            max_per_round: 3,
            cost: CostKind::Log,
            epsilon: 0.05,
            epsilon_mode: EpsilonMode::Relative,
            delta: DEFAULT_DELTA,
            n_per_experiment: 1000,
            rank_tol: DEFAULT_RANK_TOL,
            enumeration_budget: 1_000_000,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.t_max == 0 {
            return bad("t_max must be at least 1".into());
        }
        if self.max_per_round == 0 {
            return bad("max_per_round must be at least 1".into());
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon = {}", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("delta = {} outside (0, 1]", self.delta));
        }
        if self.n_per_experiment == 0 {
            return bad("n_per_experiment must be positive".into());
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return bad(format!("rank_tol = {}", self.rank_tol));
        }
        if let CostKind::Linear(u) = self.cost {
            if !(u >= 0.0 && u.is_finite()) {
                return bad(format!("linear cost unit {u}"));
            }
        }
        Ok(())
    }

    /// Absolute tolerance for `|norm_estimate - |combined||`.
    pub fn stop_tolerance(&self, norm_estimate: f64) -> f64 {
        match self.epsilon_mode {
            EpsilonMode::Relative => self.epsilon * norm_estimate,
            EpsilonMode::Absolute => self.epsilon,
        }
    }
}

fn check_candidate(candidate: &[usize], used: &[usize], n: usize) -> Result<()> {
    if candidate.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    for (k, &i) in candidate.iter().enumerate() {
        if i >= n {
            return Err(Error::InvalidInstrumentSet(format!(
                "index {i} out of range for {n} instruments"
            )));
        }
        if candidate[..k].contains(&i) {
            return Err(Error::InvalidInstrumentSet(format!("duplicate index {i}")));
        }
        if used.contains(&i) {
            return Err(Error::Overlap(i));
        }
    }
    if let Some(&j) = used.iter().find(|&&j| j >= n) {
        return Err(Error::InvalidInstrumentSet(format!(
            "used index {j} out of range for {n} instruments"
        )));
    }
    Ok(())
}

/// Average dissimilarity of `candidate` to itself and to `used`.
///
/// `sum_{i in I} sum_{j in I u J} (1 - sim_ij) / (|I| + |J| - 1)`, and 0 for a
/// lone first instrument, where the only summand is the zero diagonal.
pub fn gain(candidate: &[usize], used: &[usize], sim: &SimilarityMatrix) -> Result<f64> {
    check_candidate(candidate, used, sim.n())?;
    let denom = candidate.len() + used.len() - 1;
    if denom == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &i in candidate {
        for &j in candidate.iter().chain(used) {
            total += 1.0 - sim.get(i, j);
        }
    }
    Ok(total / denom as f64)
}

/// Cost of randomizing `d` instruments; `+inf` above the per-round cap.
pub fn cost(d: usize, config: &SelectionConfig) -> f64 {
    if d > config.max_per_round {
        return f64::INFINITY;
    }
    match config.cost {
        CostKind::Log => (d.max(1) as f64).ln(),
        CostKind::Linear(unit) => d as f64 * unit,
        CostKind::Constant => 0.0,
    }
}

pub fn score(
    candidate: &[usize],
    used: &[usize],
    sim: &SimilarityMatrix,
    config: &SelectionConfig,
) -> Result<f64> {
    let g = gain(candidate, used, sim)?;
    let c = cost(candidate.len(), config);
    Ok(if c.is_infinite() { f64::NEG_INFINITY } else { g - c })
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

fn candidate_count(m: usize, cap: usize) -> u64 {
    (1..=cap.min(m)).fold(0u64, |acc, k| acc.saturating_add(binomial(m, k)))
}

/// Incremental scorer over a fixed `used` set.
struct Scorer<'a> {
    sim: &'a SimilarityMatrix,
    config: &'a SelectionConfig,
    n_used: usize,
    /// Dissimilarity of each instrument to the used set.
    to_used: Vec<f64>,
}

impl<'a> Scorer<'a> {
    fn new(sim: &'a SimilarityMatrix, used: &[usize], config: &'a SelectionConfig) -> Self {
        let to_used = (0..sim.n())
            .map(|i| used.iter().map(|&j| 1.0 - sim.get(i, j)).sum())
            .collect();
        Self {
            sim,
            config,
            n_used: used.len(),
            to_used,
        }
    }

    /// Score of a set whose summed dissimilarity (both orders, all of
    /// `I x (I u J)`) is `total`.
    fn finish(&self, size: usize, total: f64) -> f64 {
        let c = cost(size, self.config);
        if c.is_infinite() {
            return f64::NEG_INFINITY;
        }
        let denom = size + self.n_used - 1;
        let g = if denom == 0 { 0.0 } else { total / denom as f64 };
        g - c
    }

    /// Added dissimilarity when `k` joins `set`.
    fn delta(&self, set: &[usize], k: usize) -> f64 {
        let inner: f64 = set.iter().map(|&i| 1.0 - self.sim.get(i, k)).sum();
        self.to_used[k] + 2.0 * inner + (1.0 - self.sim.get(k, k))
    }
}

struct Best {
    score: f64,
    set: Vec<usize>,
}

fn enumerate(
    scorer: &Scorer,
    remaining: &[usize],
    start: usize,
    current: &mut Vec<usize>,
    total: f64,
    best: &mut Option<Best>,
) {
    for pos in start..remaining.len() {
        let k = remaining[pos];
        let t = total + scorer.delta(current, k);
        current.push(k);
        let s = scorer.finish(current.len(), t);
        if s > f64::NEG_INFINITY && best.as_ref().is_none_or(|b| s > b.score) {
            *best = Some(Best {
                score: s,
                set: current.clone(),
            });
        }
        if current.len() < scorer.config.max_per_round {
            enumerate(scorer, remaining, pos + 1, current, t, best);
        }
        current.pop();
    }
}

fn greedy(scorer: &Scorer, remaining: &[usize]) -> Option<Vec<usize>> {
    let mut set: Vec<usize> = Vec::new();
    let mut total = 0.0;
    let mut current = f64::NEG_INFINITY;
    while set.len() < scorer.config.max_per_round {
        let mut step: Option<(f64, f64, usize)> = None;
        for &k in remaining.iter().filter(|k| !set.contains(k)) {
            let t = total + scorer.delta(&set, k);
            let s = scorer.finish(set.len() + 1, t);
            if step.is_none_or(|(bs, _, _)| s > bs) {
                step = Some((s, t, k));
            }
        }
        match step {
            Some((s, t, k)) if s > current => {
                set.push(k);
                total = t;
                current = s;
            }
            _ => break,
        }
    }
    set.sort_unstable();
    (!set.is_empty()).then_some(set)
}

/// Highest-scoring subset of `remaining` with at most `max_per_round`
/// elements. Ties go to the lexicographically smallest sorted index list.
pub fn select_next(
    remaining: &[usize],
    used: &[usize],
    sim: &SimilarityMatrix,
    config: &SelectionConfig,
) -> Result<Vec<usize>> {
    if remaining.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut remaining = remaining.to_vec();
    remaining.sort_unstable();
    remaining.dedup();
    check_candidate(&remaining, used, sim.n())?;

    let scorer = Scorer::new(sim, used, config);
    let chosen = if candidate_count(remaining.len(), config.max_per_round)
        > config.enumeration_budget
    {
        greedy(&scorer, &remaining)
    } else {
        let mut best = None;
        enumerate(&scorer, &remaining, 0, &mut Vec::new(), 0.0, &mut best);
        best.map(|b| b.set)
    };
    Ok(chosen.unwrap_or_else(|| vec![remaining[0]]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Sis,
    Random,
    Ideal,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Sis => "sis",
            Strategy::Random => "random",
            Strategy::Ideal => "ideal",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sis" => Ok(Strategy::Sis),
            "random" => Ok(Strategy::Random),
            "ideal" => Ok(Strategy::Ideal),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SisTrajectory {
    pub strategy: Strategy,
    pub seed: u64,
    pub chosen_sets: Vec<Vec<usize>>,
    pub rounds: Vec<RoundRecord>,
    /// `|combined|_2` after each round.
    pub norms: Vec<f64>,
    pub stopped_early: bool,
    pub stop_round: Option<usize>,
    pub norm_estimate: NormEstimate,
    /// Full state after the last round.
    #[serde(skip)]
    pub final_estimate: RunningEstimate,
}

impl SisTrajectory {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn n_rounds(&self) -> usize {
        self.rounds.len()
    }
}

fn run_loop<F>(
    scenario: &Scenario,
    norm_est: NormEstimate,
    config: &SelectionConfig,
    seed: u64,
    strategy: Strategy,
    t_max: usize,
    mut choose: F,
) -> Result<SisTrajectory>
where
    F: FnMut(&[usize], &[usize]) -> Result<Vec<usize>>,
{
    config.validate()?;
    scenario.check_shapes()?;
    let mut used: Vec<usize> = Vec::new();
    let mut running: Option<RunningEstimate> = None;
    let mut traj = SisTrajectory {
        strategy,
        seed,
        chosen_sets: Vec::new(),
        rounds: Vec::new(),
        norms: Vec::new(),
        stopped_early: false,
        stop_round: None,
        norm_estimate: norm_est,
        final_estimate: RunningEstimate::default(),
    };
    let tol = config.stop_tolerance(norm_est.value);

    for t in 1..=t_max {
        let remaining: Vec<usize> = (0..scenario.n_iv).filter(|i| !used.contains(i)).collect();
        if remaining.is_empty() {
            break;
        }
        let set = choose(&remaining, &used).map_err(|e| e.in_round(t))?;
        let data = run_experiment(
            scenario,
            &set,
            config.n_per_experiment,
            rng::derive_seed(seed, t as u64),
        )
        .map_err(|e| e.in_round(t))?;
        let est = estimate_projection(&data, config.rank_tol).map_err(|e| e.in_round(t))?;
        let next = match &running {
            None => RunningEstimate::from_rounds(vec![est], config.delta),
            Some(r) => r.with_round(est),
        }
        .map_err(|e| e.in_round(t))?;
        used.extend_from_slice(&set);

        let norm = next.combined_norm();
        let stop = (norm_est.value - norm).abs() < tol;
        let next = if stop { next.mark_all_identified() } else { next };
        let mut record = next.snapshot(t, norm_est.value);
        record.stopped = stop;
        traj.chosen_sets.push(set);
        traj.rounds.push(record);
        traj.norms.push(norm);
        running = Some(next);
        if stop {
            traj.stopped_early = true;
            traj.stop_round = Some(t);
            break;
        }
    }
    traj.final_estimate = running.unwrap_or_default();
    Ok(traj)
}

fn check_sim(scenario: &Scenario, sim: &SimilarityMatrix) -> Result<()> {
    if sim.n() != scenario.n_iv {
        return Err(Error::DimensionMismatch {
            expected: scenario.n_iv,
            got: sim.n(),
        });
    }
    Ok(())
}

/// Sequential instrument selection: pick by score, experiment, combine, and
/// stop once the combined norm matches the norm estimate.
pub fn run_sis(
    scenario: &Scenario,
    sim: &SimilarityMatrix,
    norm_est: NormEstimate,
    config: &SelectionConfig,
    seed: u64,
) -> Result<SisTrajectory> {
    check_sim(scenario, sim)?;
    run_loop(
        scenario,
        norm_est,
        config,
        seed,
        Strategy::Sis,
        config.t_max,
        |remaining, used| select_next(remaining, used, sim, config),
    )
}

/// Same loop with a uniformly drawn subset of up to `max_per_round` unused
/// instruments per round. Cost is ignored.
pub fn run_random_baseline(
    scenario: &Scenario,
    norm_est: NormEstimate,
    config: &SelectionConfig,
    seed: u64,
) -> Result<SisTrajectory> {
    let mut rng = rng::stream(seed, 0x72616e64);
    run_loop(
        scenario,
        norm_est,
        config,
        seed,
        Strategy::Random,
        config.t_max,
        |remaining, _| {
            let k = config.max_per_round.min(remaining.len());
            let mut set: Vec<usize> = index::sample(&mut rng, remaining.len(), k)
                .into_iter()
                .map(|p| remaining[p])
                .collect();
            set.sort_unstable();
            Ok(set)
        },
    )
}

/// One experiment randomizing every instrument.
pub fn run_ideal(
    scenario: &Scenario,
    norm_est: NormEstimate,
    config: &SelectionConfig,
    seed: u64,
) -> Result<SisTrajectory> {
    run_loop(
        scenario,
        norm_est,
        config,
        seed,
        Strategy::Ideal,
        1,
        |remaining, _| Ok(remaining.to_vec()),
    )
}
