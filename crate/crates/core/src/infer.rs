//! Distance-based reconstruction of a source-rooted tree.
//!
//! All four algorithms agglomerate destinations bottom-up. Neighbor-joining
//! (NJ) picks the pair maximizing
//! `Q(i,j) = sum_k d(i,k) + sum_k d(j,k) - (|U|-2) d(i,j)` over `U = {s} + D`;
//! rooted neighbor-joining (RNJ) picks the pair whose nearest common ancestor
//! lies farthest from the source, `rho(i,j) = (d(s,i) + d(s,j) - d(i,j)) / 2`.
//! The general-tree variants additionally absorb every node `k` with
//! `rho(i*,j*) - rho(i*,k) <= delta / 2` as a further child of the new node.
//!
//! Ties are broken towards the pair whose smallest leaf labels sort first, so
//! every run is reproducible.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;

use crate::error::{Error, Result};
use crate::fmt::decimal;
use crate::metrics::DistanceMatrix;
use crate::tree::{LinkMetric, NodeId, Orientation, RoutedTree};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    /// Estimated minimum link length; half of it is the sibling threshold.
    pub delta: f64,
}

impl InferenceConfig {
    pub fn new(delta: f64) -> Result<Self> {
        let cfg = Self { delta };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.delta > 0.0 && self.delta.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "delta must be positive, got {}",
                self.delta
            )))
        }
    }
}

/// Reconstructed topology with its link lengths.
///
/// Lengths come straight from the algorithm and may be zero or negative
/// under noisy input.
#[derive(Debug, Clone)]
pub struct InferredTree {
    tree: RoutedTree,
    lengths: LinkMetric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub rate: f64,
    /// Set when the inferred length was not positive and the rate was clamped to 1.
    pub flagged: bool,
}

impl InferredTree {
    pub fn new(tree: RoutedTree, lengths: LinkMetric) -> Result<Self> {
        for k in tree.links() {
            if lengths.length(k).is_none() {
                return Err(Error::MetricIncomplete(k));
            }
        }
        Ok(Self { tree, lengths })
    }

    pub fn tree(&self) -> &RoutedTree {
        &self.tree
    }

    pub fn lengths(&self) -> &LinkMetric {
        &self.lengths
    }

    pub fn length(&self, link: NodeId) -> f64 {
        self.lengths.length(link).expect("checked on construction")
    }

    pub fn rates(&self) -> BTreeMap<NodeId, RateEstimate> {
        rates_from_tree(self)
    }

    pub fn into_parts(self) -> (RoutedTree, LinkMetric) {
        (self.tree, self.lengths)
    }

    /// Flat link table: `parent_label, child_label, length, rate, flag`.
    ///
    /// Unlabeled internal nodes are written as `n<id>`.
    pub fn write_link_table<W: Write>(&self, w: W) -> Result<()> {
        let name = |k: NodeId| {
            self.tree
                .label(k)
                .map(str::to_string)
                .unwrap_or_else(|| format!("n{k}"))
        };
        let rates = self.rates();
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["parent_label", "child_label", "length", "rate", "flag"])?;
        for &k in &self.tree.preorder()[1..] {
            let p = self.tree.parent(k).expect("non-root");
            let r = rates[&k];
            out.write_record([
                name(p),
                name(k),
                format!("{:.17e}", self.length(k)),
                decimal(r.rate, 17),
                if r.flagged { "nonpositive".into() } else { String::new() },
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Success rates `exp(-length)`; non-positive lengths give rate 1, flagged.
pub fn rates_from_tree(t: &InferredTree) -> BTreeMap<NodeId, RateEstimate> {
    t.tree
        .links()
        .map(|k| {
            let d = t.length(k);
            let est = if d > 0.0 {
                RateEstimate {
                    rate: (-d).exp(),
                    flagged: false,
                }
            } else {
                RateEstimate {
                    rate: 1.0,
                    flagged: true,
                }
            };
            (k, est)
        })
        .collect()
}

/// Depth of the nearest common ancestor of `i` and `j` below `source`.
pub fn rho(dist: &DistanceMatrix, source: &str, i: &str, j: &str) -> Result<f64> {
    let ds_i = dist.get_by_label(source, i)?;
    let ds_j = dist.get_by_label(source, j)?;
    let dij = dist.get_by_label(i, j)?;
    Ok((ds_i + ds_j - dij) / 2.0)
}

/// Neighbor-joining for binary trees.
pub fn nj_binary(dist: &DistanceMatrix) -> Result<InferredTree> {
    nj(dist, None)
}

/// Neighbor-joining with the rooted sibling threshold for general trees.
pub fn nj_general(dist: &DistanceMatrix, cfg: &InferenceConfig) -> Result<InferredTree> {
    cfg.validate()?;
    nj(dist, Some(cfg.delta))
}

/// Rooted neighbor-joining for binary trees.
pub fn rnj_binary(dist: &DistanceMatrix) -> Result<InferredTree> {
    rnj(dist, None)
}

/// Rooted neighbor-joining for general trees, with sibling threshold `delta / 2`.
pub fn rnj_general(dist: &DistanceMatrix, cfg: &InferenceConfig) -> Result<InferredTree> {
    cfg.validate()?;
    rnj(dist, Some(cfg.delta))
}

/// Arena shared by the agglomerative algorithms. Node 0 is the source, nodes
/// `1..m` are the destinations in matrix order, joins are appended.
struct Arena<'a> {
    dist: &'a DistanceMatrix,
    parent: Vec<Option<usize>>,
    length: Vec<f64>,
    rank: Vec<usize>,
    dead: Vec<bool>,
}

impl<'a> Arena<'a> {
    fn new(dist: &'a DistanceMatrix) -> Result<Self> {
        let m = dist.len();
        if m < 3 {
            return Err(Error::TooFewLeaves(m.saturating_sub(1)));
        }
        let mut order: Vec<usize> = (1..m).collect();
        order.sort_by(|&a, &b| dist.labels()[a].cmp(&dist.labels()[b]));
        // The source ranks after every destination.
        let mut rank = vec![usize::MAX; m];
        for (r, &k) in order.iter().enumerate() {
            rank[k] = r;
        }
        Ok(Self {
            dist,
            parent: vec![None; m],
            length: vec![0.0; m],
            rank,
            dead: vec![false; m],
        })
    }

    fn capacity(&self) -> usize {
        2 * self.dist.len()
    }

    fn join(&mut self) -> usize {
        self.parent.push(None);
        self.length.push(0.0);
        self.rank.push(usize::MAX);
        self.dead.push(false);
        self.parent.len() - 1
    }

    fn is_joined(&self, k: usize) -> bool {
        k >= self.dist.len()
    }

    /// Moves the children of `node` to `into`, keeping their path lengths
    /// from `into`, and drops `node`.
    fn dissolve(&mut self, node: usize, into: usize, gap: f64) {
        for c in 0..self.parent.len() {
            if self.parent[c] == Some(node) {
                self.parent[c] = Some(into);
                self.length[c] += gap;
            }
        }
        self.dead[node] = true;
    }

    fn attach(&mut self, child: usize, parent: usize, length: f64) {
        self.parent[child] = Some(parent);
        self.length[child] = length;
        self.rank[parent] = self.rank[parent].min(self.rank[child]);
    }

    /// Links without touching ranks.
    fn link(&mut self, child: usize, parent: usize, length: f64) {
        self.parent[child] = Some(parent);
        self.length[child] = length;
    }

    /// Orders a pair so the lower-ranked node comes first.
    fn ordered(&self, a: usize, b: usize) -> (usize, usize) {
        if self.rank[a] <= self.rank[b] {
            (a, b)
        } else {
            (b, a)
        }
    }

    fn rank_key(&self, a: usize, b: usize) -> (usize, usize) {
        let (a, b) = self.ordered(a, b);
        (self.rank[a], self.rank[b])
    }

    /// Compacts away dissolved nodes and builds the tree.
    fn finish(self) -> Result<InferredTree> {
        let labels = self.dist.labels();
        let mut new_id = vec![usize::MAX; self.parent.len()];
        let mut n = 0;
        for k in 0..self.parent.len() {
            if !self.dead[k] {
                new_id[k] = n;
                n += 1;
            }
        }
        let live = || (0..self.parent.len()).filter(|&k| !self.dead[k]);
        let parents = live().map(|k| self.parent[k].map(|p| new_id[p])).collect();
        let node_labels = live().map(|k| labels.get(k).cloned()).collect();
        let lengths = LinkMetric::from_estimates(live().skip(1).map(|k| (new_id[k], self.length[k])));
        let tree = RoutedTree::from_parents(parents, node_labels, Orientation::SourceRooted)?;
        InferredTree::new(tree, lengths)
    }
}

/// Square scratch table indexed by arena ids.
struct Table {
    n: usize,
    v: Vec<f64>,
}

impl Table {
    fn new(n: usize) -> Self {
        Self {
            n,
            v: vec![0.0; n * n],
        }
    }

    fn get(&self, a: usize, b: usize) -> f64 {
        self.v[a * self.n + b]
    }

    fn set(&mut self, a: usize, b: usize, x: f64) {
        self.v[a * self.n + b] = x;
        self.v[b * self.n + a] = x;
    }
}

/// Heap key: larger score first, then the smaller rank pair.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Score(f64);

impl Eq for Score {}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

type Entry = (Score, Reverse<(usize, usize)>, usize, usize);

fn rnj(dist: &DistanceMatrix, delta: Option<f64>) -> Result<InferredTree> {
    let mut arena = Arena::new(dist)?;
    let m = dist.len();
    let cap = arena.capacity();
    let mut ds = vec![0.0; cap];
    let mut rho = Table::new(cap);
    let mut alive = vec![false; cap];
    let mut active: Vec<usize> = (1..m).collect();
    let mut heap: BinaryHeap<Entry> = BinaryHeap::with_capacity(m * m / 2);

    for i in 1..m {
        ds[i] = dist.get(0, i);
        alive[i] = true;
    }
    for i in 1..m {
        for j in i + 1..m {
            let r = (ds[i] + ds[j] - dist.get(i, j)) / 2.0;
            rho.set(i, j, r);
            heap.push((Score(r), Reverse(arena.rank_key(i, j)), i, j));
        }
    }

    while active.len() > 1 {
        let (r, a, b) = loop {
            let (Score(r), _, a, b) = heap.pop().expect("active pairs are queued");
            if alive[a] && alive[b] {
                break (r, a, b);
            }
        };
        let (i, j) = arena.ordered(a, b);
        let f = arena.join();
        ds[f] = r;
        arena.attach(i, f, ds[i] - r);
        arena.attach(j, f, ds[j] - r);
        alive[i] = false;
        alive[j] = false;

        if let Some(delta) = delta {
            for &k in &active {
                if alive[k] && r - rho.get(i, k) <= delta / 2.0 {
                    arena.attach(k, f, ds[k] - r);
                    alive[k] = false;
                }
            }
        }
        active.retain(|&k| alive[k]);

        for &k in &active {
            let x = 0.5 * (rho.get(k, i) + rho.get(k, j));
            rho.set(k, f, x);
        }
        alive[f] = true;
        for &k in &active {
            heap.push((Score(rho.get(k, f)), Reverse(arena.rank_key(k, f)), k, f));
        }
        active.push(f);
    }
    let last = active[0];
    arena.link(last, 0, ds[last]);
    arena.finish()
}

fn nj(dist: &DistanceMatrix, delta: Option<f64>) -> Result<InferredTree> {
    let mut arena = Arena::new(dist)?;
    let m = dist.len();
    let mut d = Table::new(arena.capacity());
    for i in 0..m {
        for j in i + 1..m {
            d.set(i, j, dist.get(i, j));
        }
    }
    // Links no longer than this are contracted in general mode.
    let tol = delta.map(|x| x / 2.0);
    let short = |len: f64| tol.is_some_and(|t| len <= t);
    // `src` is the deepest node known to lie on the source side. It starts
    // at the source and moves down whenever it wins a join.
    let mut src = 0;
    let mut live: Vec<usize> = (1..m).collect();

    while live.len() > 1 {
        let nodes: Vec<usize> = std::iter::once(src).chain(live.iter().copied()).collect();
        let u = nodes.len() as f64;
        let sums: Vec<f64> = nodes
            .iter()
            .map(|&k| nodes.iter().map(|&l| d.get(k, l)).sum())
            .collect();

        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for x in 0..nodes.len() {
            for y in x + 1..nodes.len() {
                let (a, b) = (nodes[x], nodes[y]);
                let q = sums[x] + sums[y] - (u - 2.0) * d.get(a, b);
                let key = arena.rank_key(a, b);
                let better = match best {
                    None => true,
                    Some((bq, bkey, _, _)) => q > bq || (q == bq && key < bkey),
                };
                if better {
                    best = Some((q, key, a, b));
                }
            }
        }
        let (_, _, a, b) = best.expect("at least one pair");
        // The source side ranks last, so it is always `j` when involved.
        let (i, j) = arena.ordered(a, b);

        let rest: Vec<usize> = nodes.iter().copied().filter(|&k| k != i && k != j).collect();
        let dij = d.get(i, j);
        let n_rest = rest.len() as f64;
        let dfi = rest
            .iter()
            .map(|&k| (d.get(k, i) + dij - d.get(k, j)) / 2.0)
            .sum::<f64>()
            / n_rest;
        let dfj = rest
            .iter()
            .map(|&k| (d.get(k, j) + dij - d.get(k, i)) / 2.0)
            .sum::<f64>()
            / n_rest;
        live.retain(|&k| k != i);

        if j == src {
            if src != 0 && short(dfj) {
                arena.link(i, src, dij);
            } else if arena.is_joined(i) && short(dfi) {
                arena.link(i, src, dij);
                arena.rank[i] = usize::MAX;
                src = i;
            } else {
                let f = arena.join();
                arena.attach(i, f, dfi);
                arena.rank[f] = usize::MAX;
                arena.link(f, src, dfj);
                for &k in &live {
                    let x = 0.5 * (d.get(k, i) - dfi) + 0.5 * (d.get(k, j) - dfj);
                    d.set(k, f, x);
                }
                src = f;
            }
            continue;
        }
        live.retain(|&k| k != j);

        if let Some(t) = tol {
            let rho = |x: usize, y: usize| (d.get(src, x) + d.get(src, y) - d.get(x, y)) / 2.0;
            let r = rho(i, j);
            if src != 0 && r <= t {
                arena.link(i, src, d.get(src, i));
                arena.link(j, src, d.get(src, j));
                continue;
            }
            let into = [(i, dfi, j), (j, dfj, i)]
                .into_iter()
                .filter(|&(k, len, _)| arena.is_joined(k) && len <= t)
                .min_by(|x, y| x.1.total_cmp(&y.1));
            if let Some((host, _, other)) = into {
                arena.attach(other, host, dij);
                live.push(host);
                continue;
            }

            let f = arena.join();
            arena.attach(i, f, dfi);
            arena.attach(j, f, dfj);
            // A sibling must not pair more deeply with anything still unjoined.
            let absorbed: Vec<usize> = live
                .iter()
                .copied()
                .filter(|&k| {
                    r - rho(i, k) <= t
                        && live.iter().all(|&y| y == k || rho(k, y) - r <= t)
                })
                .collect();
            for &k in &absorbed {
                arena.attach(k, f, d.get(src, k) - r);
            }
            live.retain(|k| !absorbed.contains(k));
            for &k in std::iter::once(&src).chain(live.iter()) {
                let x = 0.5 * (d.get(k, i) - dfi) + 0.5 * (d.get(k, j) - dfj);
                d.set(k, f, x);
            }
            live.push(f);
            continue;
        }

        let f = arena.join();
        arena.attach(i, f, dfi);
        arena.attach(j, f, dfj);
        for &k in std::iter::once(&src).chain(live.iter()) {
            let x = 0.5 * (d.get(k, i) - dfi) + 0.5 * (d.get(k, j) - dfj);
            d.set(k, f, x);
        }
        live.push(f);
    }
    // Everything may already hang from the source side.
    if let Some(&last) = live.first() {
        let len = d.get(src, last);
        if src != 0 && arena.is_joined(last) && short(len) {
            arena.dissolve(last, src, len);
        } else {
            arena.link(last, src, len);
        }
    }
    arena.finish()
}
