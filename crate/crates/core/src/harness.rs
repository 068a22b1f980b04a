//! Monte-Carlo experiments: random trees, simulated probing, estimation,
//! inference and comparison against the truth.
//!
//! Trial `t` draws its tree from `mix_seed(base_seed, [t, TREE_STREAM])`, its
//! link rates from `mix_seed(base_seed, [t, RATE_STREAM])` and the probes at
//! sample-size index `k` from `mix_seed(base_seed, [t, k])`. Trials run in
//! parallel and are aggregated in trial order, so output does not depend on
//! the thread count.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimate::{empirical_distance_matrix, EstimatorConfig, ZeroCountPolicy};
use crate::fmt::decimal;
use crate::infer::{nj_binary, nj_general, rnj_binary, rnj_general, InferenceConfig, InferredTree};
use crate::metrics::DistanceMatrix;
use crate::rng::{mix_seed, rng_from_seed, RNG_ID};
use crate::sim::simulate;
use crate::tree::{generate_tree, match_links, trees_equal, LinkMetric, NodeId, RoutedTree, TreeGenConfig, TreeKind};

const TREE_STREAM: u64 = u64::MAX;
const RATE_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    Nj,
    Rnj,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Nj => "nj",
            Algorithm::Rnj => "rnj",
        }
    }

    /// Runs the binary or general variant, depending on `kind`.
    pub fn infer(self, kind: TreeKind, dist: &DistanceMatrix, delta: f64) -> Result<InferredTree> {
        match (self, kind) {
            (Algorithm::Nj, TreeKind::Binary) => nj_binary(dist),
            (Algorithm::Rnj, TreeKind::Binary) => rnj_binary(dist),
            (Algorithm::Nj, TreeKind::General) => nj_general(dist, &InferenceConfig::new(delta)?),
            (Algorithm::Rnj, TreeKind::General) => rnj_general(dist, &InferenceConfig::new(delta)?),
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nj" => Ok(Algorithm::Nj),
            "rnj" => Ok(Algorithm::Rnj),
            other => Err(Error::InvalidConfig(format!("unknown algorithm {other:?}"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Multicast from the source.
    Forward,
    /// Reverse multicast towards a single receiver.
    Reverse,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "reverse" => Ok(Direction::Reverse),
            other => Err(Error::InvalidConfig(format!("unknown direction {other:?}"))),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub tree_kind: TreeKind,
    pub n_leaves: usize,
    /// Link success rates are drawn uniformly from this interval.
    pub alpha_range: (f64, f64),
    pub sample_sizes: Vec<usize>,
    pub trials: usize,
    pub algorithms: Vec<Algorithm>,
    pub direction: Direction,
    pub base_seed: u64,
    pub zero_count_policy: ZeroCountPolicy,
    pub clamp_value: f64,
    /// Threshold parameter for the general-tree algorithms; defaults to
    /// `-ln(alpha_range.1)`, the smallest possible link length.
    pub delta_override: Option<f64>,
    pub max_children: usize,
    pub contract_prob: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            tree_kind: TreeKind::Binary,
            n_leaves: 10,
            alpha_range: (0.90, 0.99),
            sample_sizes: (7..=14).map(|e| 1 << e).collect(),
            trials: 100,
            algorithms: vec![Algorithm::Nj, Algorithm::Rnj],
            direction: Direction::Forward,
            base_seed: 1,
            zero_count_policy: ZeroCountPolicy::Clamp,
            clamp_value: 0.5,
            delta_override: None,
            max_children: 5,
            contract_prob: 0.5,
        }
    }
}

fn list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, T::Err> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let (lo, hi) = self.alpha_range;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return bad(format!("alpha_range must satisfy 0 < low < high < 1, got ({lo}, {hi})"));
        }
        if self.n_leaves < 2 {
            return bad(format!("n_leaves must be at least 2, got {}", self.n_leaves));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.sample_sizes.is_empty()
            || self.sample_sizes[0] == 0
            || self.sample_sizes.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("sample_sizes must be positive and strictly increasing".into());
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms configured".into());
        }
        if !(self.clamp_value > 0.0 && self.clamp_value.is_finite()) {
            return bad(format!("clamp_value must be positive, got {}", self.clamp_value));
        }
        if let Some(d) = self.delta_override {
            InferenceConfig::new(d)?;
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.delta_override.unwrap_or(-self.alpha_range.1.ln())
    }

    pub fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            zero_count_policy: self.zero_count_policy,
            clamp_value: self.clamp_value,
        }
    }

    fn tree_gen(&self) -> TreeGenConfig {
        TreeGenConfig {
            kind: self.tree_kind,
            max_children: self.max_children,
            contract_prob: self.contract_prob,
            root_label: match self.direction {
                Direction::Forward => "s".into(),
                Direction::Reverse => "r".into(),
            },
        }
    }

    /// Reads `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let err = |what: &str| {
                Error::InvalidConfig(format!("line {}: invalid {key} {what}: {value:?}", lineno + 1))
            };
            match key {
                "tree_kind" => cfg.tree_kind = value.parse()?,
                "n_leaves" => cfg.n_leaves = value.parse().map_err(|_| err("integer"))?,
                "alpha_range" => {
                    let v: Vec<f64> = list(value).map_err(|_| err("pair"))?;
                    match v[..] {
                        [lo, hi] => cfg.alpha_range = (lo, hi),
                        _ => return Err(err("pair")),
                    }
                }
                "sample_sizes" => cfg.sample_sizes = list(value).map_err(|_| err("list"))?,
                "trials" => cfg.trials = value.parse().map_err(|_| err("integer"))?,
                "algorithms" => cfg.algorithms = list(value)?,
                "direction" => cfg.direction = value.parse()?,
                "base_seed" => cfg.base_seed = value.parse().map_err(|_| err("integer"))?,
                "zero_count_policy" => cfg.zero_count_policy = value.parse()?,
                "clamp_value" => cfg.clamp_value = value.parse().map_err(|_| err("number"))?,
                "delta_override" => {
                    cfg.delta_override = match value {
                        "" | "none" => None,
                        v => Some(v.parse().map_err(|_| err("number"))?),
                    }
                }
                "max_children" => cfg.max_children = value.parse().map_err(|_| err("integer"))?,
                "contract_prob" => cfg.contract_prob = value.parse().map_err(|_| err("number"))?,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.algorithms.sort();
        cfg.algorithms.dedup();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Per-link relative rate errors `|a_hat - a| / a` and their mean.
pub fn relative_errors(
    truth: &RoutedTree,
    truth_metric: &LinkMetric,
    inferred: &InferredTree,
) -> Result<(BTreeMap<NodeId, f64>, f64)> {
    let pairs = match_links(truth, inferred.tree())?;
    let rates = inferred.rates();
    let mut out = BTreeMap::new();
    for (k, m) in pairs {
        let a = truth_metric.rate(k).ok_or(Error::MetricIncomplete(k))?;
        out.insert(k, (rates[&m].rate - a).abs() / a);
    }
    let mean = out.values().sum::<f64>() / out.len() as f64;
    Ok((out, mean))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    /// Topology recovered; carries the mean relative rate error.
    Correct(f64),
    Incorrect,
    /// Estimation failed under the `error` zero-count policy.
    Aborted,
}

/// Outcomes of one trial, indexed `[algorithm][sample size]` in config order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub outcomes: Vec<Vec<Outcome>>,
}

/// Draws trial `t`'s tree and link rates. Reverse experiments get a
/// receiver-rooted tree.
pub fn trial_instance(cfg: &ExperimentConfig, t: usize) -> Result<(RoutedTree, LinkMetric)> {
    let tree = generate_tree(
        cfg.n_leaves,
        &cfg.tree_gen(),
        mix_seed(cfg.base_seed, &[t as u64, TREE_STREAM]),
    )?;
    let tree = match cfg.direction {
        Direction::Forward => tree,
        Direction::Reverse => tree.mirrored(),
    };
    let metric = draw_rates(
        &tree,
        cfg.alpha_range,
        mix_seed(cfg.base_seed, &[t as u64, RATE_STREAM]),
    )?;
    Ok((tree, metric))
}

/// Independent uniform success rates on `[low, high]`, one per link.
pub fn draw_rates(tree: &RoutedTree, (low, high): (f64, f64), rng_seed: u64) -> Result<LinkMetric> {
    if !(0.0 < low && low <= high && high < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "rate range ({low}, {high}) must lie inside (0, 1)"
        )));
    }
    let mut rng = rng_from_seed(rng_seed);
    let u = Uniform::new_inclusive(low, high);
    let links: Vec<NodeId> = tree.links().collect();
    LinkMetric::from_rates(links.into_iter().map(|k| (k, u.sample(&mut rng))))
}

/// Runs every configured algorithm at every sample size on one instance.
///
/// The probing direction follows the tree's orientation.
pub fn run_trial(
    cfg: &ExperimentConfig,
    tree: &RoutedTree,
    metric: &LinkMetric,
    t: usize,
) -> Result<TrialRecord> {
    let est_cfg = cfg.estimator();
    let delta = cfg.delta();
    let mut outcomes = vec![Vec::with_capacity(cfg.sample_sizes.len()); cfg.algorithms.len()];
    for (k, &n) in cfg.sample_sizes.iter().enumerate() {
        let samples = simulate(tree, metric, n, mix_seed(cfg.base_seed, &[t as u64, k as u64]))?;
        let dist = match empirical_distance_matrix(&samples, &est_cfg) {
            Ok(d) => d,
            Err(Error::ZeroCount(..)) => {
                outcomes.iter_mut().for_each(|o| o.push(Outcome::Aborted));
                continue;
            }
            Err(e) => return Err(e),
        };
        for (a, alg) in cfg.algorithms.iter().enumerate() {
            let inferred = alg.infer(cfg.tree_kind, &dist, delta)?;
            let outcome = if trees_equal(tree, inferred.tree())? {
                Outcome::Correct(relative_errors(tree, metric, &inferred)?.1)
            } else {
                Outcome::Incorrect
            };
            outcomes[a].push(outcome);
        }
    }
    Ok(TrialRecord { outcomes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub algorithm: Algorithm,
    pub sample_size: usize,
    pub count_correct: usize,
    pub fraction_correct: f64,
    /// Mean rate error over correctly inferred trees; `None` if there are none.
    pub mean_eps_e: Option<f64>,
    pub aborted_trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Sorted by (algorithm, sample size).
    pub rows: Vec<ResultRow>,
    pub trials: Vec<TrialRecord>,
}

impl ExperimentResult {
    pub fn row(&self, algorithm: Algorithm, sample_size: usize) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.algorithm == algorithm && r.sample_size == sample_size)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let c = &self.config;
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "algorithm",
            "direction",
            "tree_kind",
            "n_leaves",
            "sample_size",
            "trials",
            "fraction_correct",
            "mean_eps_E",
            "aborted_trials",
            "base_seed",
            "rng_id",
        ])?;
        for r in &self.rows {
            out.write_record([
                r.algorithm.to_string(),
                c.direction.to_string(),
                c.tree_kind.to_string(),
                c.n_leaves.to_string(),
                r.sample_size.to_string(),
                c.trials.to_string(),
                decimal(r.fraction_correct, 12),
                r.mean_eps_e.map(|e| decimal(e, 12)).unwrap_or_default(),
                r.aborted_trials.to_string(),
                c.base_seed.to_string(),
                RNG_ID.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs the configured experiment in either direction.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let trials: Vec<TrialRecord> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            trial_instance(cfg, t)
                .and_then(|(tree, metric)| run_trial(cfg, &tree, &metric, t))
                .map_err(|e| Error::Trial {
                    index: t,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;

    let rows = aggregate(cfg, &trials);
    Ok(ExperimentResult {
        config: cfg.clone(),
        rows,
        trials,
    })
}

/// Summarizes trial records into rows sorted by (algorithm, sample size).
pub fn aggregate(cfg: &ExperimentConfig, trials: &[TrialRecord]) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for (a, &algorithm) in cfg.algorithms.iter().enumerate() {
        for (k, &sample_size) in cfg.sample_sizes.iter().enumerate() {
            let outcomes = trials.iter().map(|r| r.outcomes[a][k]);
            let eps: Vec<f64> = outcomes
                .clone()
                .filter_map(|o| match o {
                    Outcome::Correct(e) => Some(e),
                    _ => None,
                })
                .collect();
            let aborted = outcomes.filter(|o| *o == Outcome::Aborted).count();
            rows.push(ResultRow {
                algorithm,
                sample_size,
                count_correct: eps.len(),
                fraction_correct: eps.len() as f64 / trials.len() as f64,
                mean_eps_e: (!eps.is_empty()).then(|| eps.iter().sum::<f64>() / eps.len() as f64),
                aborted_trials: aborted,
            });
        }
    }
    rows.sort_by_key(|r| (r.algorithm, r.sample_size));
    rows
}

/// Reverse-multicast experiment; `cfg.direction` must be `Reverse`.
pub fn run_reverse_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if cfg.direction != Direction::Reverse {
        return Err(Error::InvalidConfig("direction must be reverse".into()));
    }
    run_experiment(cfg)
}
