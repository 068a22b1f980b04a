//! Distance estimation from probe outcomes.
//!
//! The loss-metric estimator plugs sample means into the exact distance
//! formula: `d(i, j) = ln(mean(X_i) mean(X_j) / mean(X_i X_j)^2)`. For the
//! constant root column this reduces to `d(s, i) = -ln mean(X_i)`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fmt::decimal;
use crate::metrics::{log_det_distance, DistanceMatrix, TransitionPair};
use crate::rng::mix_seed;
use crate::sim::{simulate, SampleSet};
use crate::tree::{terminal_distance_matrix, LinkMetric, RoutedTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroCountPolicy {
    /// Fail with [`Error::ZeroCount`].
    Error,
    /// Replace a zero count by the configured pseudo-count.
    Clamp,
}

impl std::str::FromStr for ZeroCountPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(ZeroCountPolicy::Error),
            "clamp" => Ok(ZeroCountPolicy::Clamp),
            other => Err(Error::InvalidConfig(format!(
                "unknown zero-count policy {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for ZeroCountPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ZeroCountPolicy::Error => "error",
            ZeroCountPolicy::Clamp => "clamp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub zero_count_policy: ZeroCountPolicy,
    /// Pseudo-count substituted for a zero count under [`ZeroCountPolicy::Clamp`].
    pub clamp_value: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            zero_count_policy: ZeroCountPolicy::Clamp,
            clamp_value: 0.5,
        }
    }
}

impl EstimatorConfig {
    pub fn strict() -> Self {
        Self {
            zero_count_policy: ZeroCountPolicy::Error,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.clamp_value > 0.0 && self.clamp_value.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "clamp_value must be positive, got {}",
                self.clamp_value
            )))
        }
    }
}

/// First and second moments of the terminal outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    labels: Vec<String>,
    means: Vec<f64>,
    joint: Vec<f64>,
}

impl Moments {
    /// Exact (or externally computed) moments. `joint` is row-major and must
    /// be symmetric; its diagonal is ignored.
    pub fn new(labels: Vec<String>, means: Vec<f64>, joint: Vec<f64>) -> Result<Self> {
        let m = labels.len();
        if means.len() != m || joint.len() != m * m {
            return Err(Error::InvalidConfig("moment dimensions do not match labels".into()));
        }
        Ok(Self {
            labels,
            means,
            joint,
        })
    }

    /// Sample moments. Returns the moments and the number of clamped counts.
    pub fn from_samples(samples: &SampleSet, cfg: &EstimatorConfig) -> Result<(Self, usize)> {
        cfg.validate()?;
        let labels = samples.labels().to_vec();
        let m = labels.len();
        let n = samples.n() as f64;
        let mut clamped = 0;
        let mut fix = |count: usize, a: usize, b: usize| -> Result<f64> {
            if count > 0 {
                return Ok(count as f64 / n);
            }
            match cfg.zero_count_policy {
                ZeroCountPolicy::Error => Err(Error::ZeroCount(labels[a].clone(), labels[b].clone())),
                ZeroCountPolicy::Clamp => {
                    clamped += 1;
                    Ok(cfg.clamp_value / n)
                }
            }
        };
        let means = (0..m)
            .map(|i| fix(samples.count(i), i, i))
            .collect::<Result<Vec<_>>>()?;
        let mut joint = vec![0.0; m * m];
        for i in 0..m {
            joint[i * m + i] = means[i];
            for j in i + 1..m {
                let v = fix(samples.joint_count(i, j), i, j)?;
                joint[i * m + j] = v;
                joint[j * m + i] = v;
            }
        }
        Ok((Self { labels, means, joint }, clamped))
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.means[i]
    }

    pub fn joint(&self, i: usize, j: usize) -> f64 {
        self.joint[i * self.labels.len() + j]
    }
}

/// Estimated matrix plus what had to be patched to produce it.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceEstimate {
    pub matrix: DistanceMatrix,
    /// Zero counts replaced by the pseudo-count.
    pub clamped_counts: usize,
    /// Negative off-diagonal estimates raised to 0.
    pub negatives_zeroed: usize,
}

/// Loss-metric distances from moments. Negative estimates are set to 0.
pub fn distances_from_moments(moments: &Moments) -> Result<DistanceEstimate> {
    let m = moments.labels.len();
    let mut negatives = 0;
    let mut values = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let (mi, mj, mij) = (moments.mean(i), moments.mean(j), moments.joint(i, j));
            if !(mi > 0.0 && mj > 0.0 && mij > 0.0) {
                return Err(Error::ZeroCount(
                    moments.labels[i].clone(),
                    moments.labels[j].clone(),
                ));
            }
            let mut d = mi.ln() + mj.ln() - 2.0 * mij.ln();
            if d < 0.0 {
                log::warn!(
                    "negative distance estimate {d:.3e} for ({}, {}) set to 0",
                    moments.labels[i],
                    moments.labels[j]
                );
                negatives += 1;
                d = 0.0;
            }
            values[i * m + j] = d;
            values[j * m + i] = d;
        }
    }
    Ok(DistanceEstimate {
        matrix: DistanceMatrix::new(moments.labels.clone(), values)?,
        clamped_counts: 0,
        negatives_zeroed: negatives,
    })
}

/// Full estimate with clamp and negative-distance bookkeeping.
pub fn estimate_distances(samples: &SampleSet, cfg: &EstimatorConfig) -> Result<DistanceEstimate> {
    let (moments, clamped) = Moments::from_samples(samples, cfg)?;
    let mut est = distances_from_moments(&moments)?;
    est.clamped_counts = clamped;
    Ok(est)
}

/// Loss-metric distance matrix over all terminals, source first.
pub fn empirical_distance_matrix(samples: &SampleSet, cfg: &EstimatorConfig) -> Result<DistanceMatrix> {
    estimate_distances(samples, cfg).map(|e| e.matrix)
}

/// Empirical conditional tables between columns `a` and `b`.
pub fn empirical_transition_pair(
    samples: &SampleSet,
    a: usize,
    b: usize,
    cfg: &EstimatorConfig,
) -> Result<TransitionPair> {
    cfg.validate()?;
    let mut joint = [[0.0; 2]; 2];
    for (va, row) in joint.iter_mut().enumerate() {
        for (vb, cell) in row.iter_mut().enumerate() {
            *cell = samples.pattern_count(a, b, va == 1, vb == 1) as f64;
        }
    }
    let degenerate = (0..2).any(|x| {
        joint[x][0] + joint[x][1] == 0.0 || joint[0][x] + joint[1][x] == 0.0
    });
    if degenerate {
        match cfg.zero_count_policy {
            ZeroCountPolicy::Error => {
                return Err(Error::ZeroCount(
                    samples.labels()[a].clone(),
                    samples.labels()[b].clone(),
                ))
            }
            ZeroCountPolicy::Clamp => {
                for cell in joint.iter_mut().flatten() {
                    if *cell == 0.0 {
                        *cell = cfg.clamp_value;
                    }
                }
            }
        }
    }
    TransitionPair::from_joint(joint)
}

/// Log-det distances between destination terminals (column 0 excluded).
///
/// The source column is constant, so its conditional tables are undefined.
pub fn log_det_distances(samples: &SampleSet, cfg: &EstimatorConfig) -> Result<DistanceMatrix> {
    let m = samples.labels().len();
    let labels = samples.labels()[1..].to_vec();
    let mut values = vec![0.0; (m - 1) * (m - 1)];
    for i in 1..m {
        for j in i + 1..m {
            let d = log_det_distance(&empirical_transition_pair(samples, i, j, cfg)?)?;
            values[(i - 1) * (m - 1) + (j - 1)] = d;
            values[(j - 1) * (m - 1) + (i - 1)] = d;
        }
    }
    DistanceMatrix::new(labels, values)
}

/// Per-pair result at one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDeviation {
    pub a: String,
    pub b: String,
    /// Fraction of trials with `|d_hat - d| >= epsilon` for this pair.
    pub prob_exceed: f64,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationPoint {
    pub n: usize,
    pub epsilon: f64,
    /// Fraction of trials in which any pair deviates by at least `epsilon`.
    pub prob_exceed: f64,
    pub pairs: Vec<PairDeviation>,
}

/// Empirical probability that the estimated matrix strays from the true one
/// by at least `epsilon`, per sample size.
///
/// Trial `t` at size index `k` simulates with seed `mix_seed(rng_seed, [k, t])`.
pub fn deviation_curve(
    tree: &RoutedTree,
    metric: &LinkMetric,
    sample_sizes: &[usize],
    trials: usize,
    epsilon: f64,
    rng_seed: u64,
    cfg: &EstimatorConfig,
) -> Result<Vec<DeviationPoint>> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
    }
    if sample_sizes.is_empty() || sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "sample sizes must be non-empty and strictly increasing".into(),
        ));
    }
    let truth = terminal_distance_matrix(tree, metric)?;
    let m = truth.len();
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect();

    let mut out = Vec::with_capacity(sample_sizes.len());
    for (k, &n) in sample_sizes.iter().enumerate() {
        let devs: Vec<Vec<f64>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let seed = mix_seed(rng_seed, &[k as u64, t as u64]);
                let samples = simulate(tree, metric, n, seed)?;
                let est = empirical_distance_matrix(&samples, cfg)?;
                Ok(pairs
                    .iter()
                    .map(|&(i, j)| (est.get(i, j) - truth.get(i, j)).abs())
                    .collect())
            })
            .collect::<Result<_>>()?;
        let any = devs
            .iter()
            .filter(|d| d.iter().any(|&x| x >= epsilon))
            .count();
        let pair_stats = pairs
            .iter()
            .enumerate()
            .map(|(p, &(i, j))| {
                let hits = devs.iter().filter(|d| d[p] >= epsilon).count();
                PairDeviation {
                    a: truth.labels()[i].clone(),
                    b: truth.labels()[j].clone(),
                    prob_exceed: hits as f64 / trials as f64,
                    max_deviation: devs.iter().map(|d| d[p]).fold(0.0, f64::max),
                }
            })
            .collect();
        out.push(DeviationPoint {
            n,
            epsilon,
            prob_exceed: any as f64 / trials as f64,
            pairs: pair_stats,
        });
    }
    Ok(out)
}

/// CSV with columns `n, epsilon, prob_exceed` and one `maxdev_<a>_<b>` column
/// per terminal pair.
pub fn write_deviation_csv<W: Write>(points: &[DeviationPoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["n".to_string(), "epsilon".into(), "prob_exceed".into()];
    if let Some(p) = points.first() {
        header.extend(p.pairs.iter().map(|d| format!("maxdev_{}_{}", d.a, d.b)));
    }
    out.write_record(&header)?;
    for p in points {
        let mut rec = vec![p.n.to_string(), decimal(p.epsilon, 12), decimal(p.prob_exceed, 12)];
        rec.extend(p.pairs.iter().map(|d| decimal(d.max_deviation, 12)));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn lossless_samples_give_zero_distances() {
        let rows = vec![[true; 4]; 10];
        let s = SampleSet::from_rows(labels(&["s", "1", "2", "3"]), &rows).unwrap();
        let d = empirical_distance_matrix(&s, &EstimatorConfig::default()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(d.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn hand_counted_pair() {
        // X_i = (1,1,1,0), X_j = (1,0,1,1): means 0.75, 0.75, joint 0.5.
        let xi = [true, true, true, false];
        let xj = [true, false, true, true];
        let rows: Vec<[bool; 3]> = (0..4).map(|t| [true, xi[t], xj[t]]).collect();
        let s = SampleSet::from_rows(labels(&["s", "i", "j"]), &rows).unwrap();
        let d = empirical_distance_matrix(&s, &EstimatorConfig::strict()).unwrap();
        assert_abs_diff_eq!(d.get_by_label("i", "j").unwrap(), 2.25f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(d.get_by_label("i", "j").unwrap(), 0.810930, epsilon = 1e-6);
        assert_abs_diff_eq!(d.get_by_label("s", "i").unwrap(), -(0.75f64.ln()), epsilon = 1e-15);
    }

    #[test]
    fn zero_joint_count() {
        let xi = [true, true, false, false];
        let xj = [false, false, true, true];
        let rows: Vec<[bool; 3]> = (0..4).map(|t| [true, xi[t], xj[t]]).collect();
        let s = SampleSet::from_rows(labels(&["s", "i", "j"]), &rows).unwrap();
        match empirical_distance_matrix(&s, &EstimatorConfig::strict()) {
            Err(Error::ZeroCount(a, b)) => assert_eq!((a.as_str(), b.as_str()), ("i", "j")),
            other => panic!("expected ZeroCount, got {other:?}"),
        }
        let est = estimate_distances(&s, &EstimatorConfig::default()).unwrap();
        assert_eq!(est.clamped_counts, 1);
        // means 0.5, 0.5, joint 0.5 / 4.
        let expected = (0.25f64 / (0.125 * 0.125)).ln();
        assert_abs_diff_eq!(est.matrix.get(1, 2), expected, epsilon = 1e-12);
    }

    #[test]
    fn negative_estimates_are_zeroed() {
        // X_i = X_j on every probe: joint mean 0.5 > sqrt(0.5 * 0.5) is not
        // possible, so use a case where joint equals both marginals.
        let rows = [[true, true, true], [true, false, false], [true, true, true], [true, true, true]];
        let s = SampleSet::from_rows(labels(&["s", "i", "j"]), &rows).unwrap();
        let est = estimate_distances(&s, &EstimatorConfig::default()).unwrap();
        // ln(0.75 * 0.75 / 0.75^2) = 0 exactly.
        assert_abs_diff_eq!(est.matrix.get(1, 2), 0.0, epsilon = 1e-15);

        let m = Moments::new(
            labels(&["s", "i", "j"]),
            vec![1.0, 0.5, 0.5],
            vec![1.0, 0.5, 0.5, 0.5, 0.5, 0.6, 0.5, 0.6, 0.5],
        )
        .unwrap();
        let est = distances_from_moments(&m).unwrap();
        assert_eq!(est.negatives_zeroed, 1);
        assert_eq!(est.matrix.get(1, 2), 0.0);
    }

    #[test]
    fn rejects_bad_clamp() {
        let rows = [[true, true]];
        let s = SampleSet::from_rows(labels(&["s", "i"]), &rows).unwrap();
        let cfg = EstimatorConfig {
            clamp_value: 0.0,
            ..EstimatorConfig::default()
        };
        assert!(matches!(
            empirical_distance_matrix(&s, &cfg),
            Err(Error::InvalidConfig(_))
        ));
    }
}
