//! Multicast and reverse-multicast loss probing on a routing tree.
//!
//! Each probe draws an independent Bernoulli state for every link and pushes
//! the outcome down from the root: `X_root = 1`, `X_k = X_parent(k) * Z_k`.
//! For a receiver-rooted tree the same recursion reads `X_i = Z_i * X_child(i)`,
//! so both directions share one propagation core.

use std::io::{Read, Write};

use rand::distributions::{Bernoulli, Distribution};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tree::{LinkMetric, Orientation, RoutedTree};

/// Binary probe outcomes at the terminals, stored column-wise as bit words.
///
/// Column 0 is the constant terminal (source or receiver) and is all ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    labels: Vec<String>,
    n: usize,
    columns: Vec<Vec<u64>>,
}

fn words(n: usize) -> usize {
    n.div_ceil(64)
}

impl SampleSet {
    /// Builds a sample set from per-probe rows.
    pub fn from_rows<R: AsRef<[bool]>>(labels: Vec<String>, rows: &[R]) -> Result<Self> {
        let m = labels.len();
        let n = rows.len();
        let mut columns = vec![vec![0u64; words(n)]; m];
        for (t, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != m {
                return Err(Error::InvalidSamples(format!(
                    "probe {t} has {} outcomes for {m} terminals",
                    row.len()
                )));
            }
            for (c, &bit) in row.iter().enumerate() {
                if bit {
                    columns[c][t / 64] |= 1 << (t % 64);
                }
            }
        }
        Self::from_columns(labels, n, columns)
    }

    fn from_columns(labels: Vec<String>, n: usize, columns: Vec<Vec<u64>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSamples("no probes".into()));
        }
        if labels.len() < 2 {
            return Err(Error::InvalidSamples("need at least two terminals".into()));
        }
        let s = Self { labels, n, columns };
        if s.count(0) != n {
            return Err(Error::InvalidSamples(format!(
                "column {:?} must be all ones",
                s.labels[0]
            )));
        }
        Ok(s)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Number of probes.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, probe: usize, column: usize) -> bool {
        self.columns[column][probe / 64] >> (probe % 64) & 1 == 1
    }

    /// Number of probes received at `column`.
    pub fn count(&self, column: usize) -> usize {
        self.columns[column]
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum()
    }

    /// Number of probes received at both columns.
    pub fn joint_count(&self, a: usize, b: usize) -> usize {
        self.columns[a]
            .iter()
            .zip(&self.columns[b])
            .map(|(x, y)| (x & y).count_ones() as usize)
            .sum()
    }

    /// Number of probes with `(X_a, X_b) = (va, vb)`.
    pub fn pattern_count(&self, a: usize, b: usize, va: bool, vb: bool) -> usize {
        let both = self.joint_count(a, b);
        let ca = self.count(a);
        let cb = self.count(b);
        match (va, vb) {
            (true, true) => both,
            (true, false) => ca - both,
            (false, true) => cb - both,
            (false, false) => self.n + both - ca - cb,
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<bool>> + '_ {
        (0..self.n).map(|t| (0..self.labels.len()).map(|c| self.get(t, c)).collect())
    }

    /// CSV: a header of labels, then one row of 0/1 per probe.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.labels)?;
        for row in self.rows() {
            out.write_record(row.iter().map(|&b| if b { "1" } else { "0" }))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(r);
        let labels: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (t, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| match f {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Error::InvalidSamples(format!(
                        "probe {t}: expected 0 or 1, got {other:?}"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(labels, &rows)
    }
}

/// Multicast probing from the root of a source-rooted tree.
pub fn simulate_multicast(
    tree: &RoutedTree,
    metric: &LinkMetric,
    n: usize,
    rng_seed: u64,
) -> Result<SampleSet> {
    if tree.orientation() != Orientation::SourceRooted {
        return Err(Error::WrongOrientation {
            expected: "source-rooted",
        });
    }
    propagate(tree, metric, n, rng_seed)
}

/// Reverse multicast probing from the leaves of a receiver-rooted tree.
pub fn simulate_reverse_multicast(
    tree: &RoutedTree,
    metric: &LinkMetric,
    n: usize,
    rng_seed: u64,
) -> Result<SampleSet> {
    if tree.orientation() != Orientation::ReceiverRooted {
        return Err(Error::WrongOrientation {
            expected: "receiver-rooted",
        });
    }
    propagate(tree, metric, n, rng_seed)
}

/// Probes in whichever direction the tree's orientation calls for.
pub fn simulate(tree: &RoutedTree, metric: &LinkMetric, n: usize, rng_seed: u64) -> Result<SampleSet> {
    propagate(tree, metric, n, rng_seed)
}

fn propagate(tree: &RoutedTree, metric: &LinkMetric, n: usize, rng_seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::InvalidSamples("no probes".into()));
    }
    let order: Vec<_> = tree.preorder()[1..].to_vec();
    let mut rates = vec![1.0; tree.node_count()];
    for &k in &order {
        rates[k] = metric.rate(k).ok_or(Error::MetricIncomplete(k))?;
        if !(0.0..=1.0).contains(&rates[k]) {
            return Err(Error::InvalidRate(rates[k]));
        }
    }
    let terminals = tree.terminals();
    let labels = terminals
        .iter()
        .map(|&k| tree.label(k).expect("terminals are labeled").to_string())
        .collect();

    let links: Vec<_> = order
        .iter()
        .map(|&k| {
            let p = tree.parent(k).expect("non-root");
            let z = Bernoulli::new(rates[k]).expect("rate checked");
            (k, p, z)
        })
        .collect();

    let mut rng = rng_from_seed(rng_seed);
    let mut state = vec![false; tree.node_count()];
    let mut columns = vec![vec![0u64; words(n)]; terminals.len()];
    state[tree.root()] = true;
    for t in 0..n {
        for (k, p, z) in &links {
            let up = z.sample(&mut rng);
            state[*k] = state[*p] && up;
        }
        let (w, bit) = (t / 64, 1u64 << (t % 64));
        for (c, &k) in terminals.iter().enumerate() {
            if state[k] {
                columns[c][w] |= bit;
            }
        }
    }
    SampleSet::from_columns(labels, n, columns)
}
