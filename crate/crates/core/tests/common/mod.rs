#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treetomo::tree::{generate_tree, match_links, TreeGenConfig};
use treetomo::{DistanceMatrix, InferredTree, LinkMetric, NodeId, RoutedTree, TreeKind};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random tree with link lengths uniform on `[lo, hi]`.
pub fn instance(
    n_leaves: usize,
    kind: TreeKind,
    (lo, hi): (f64, f64),
    seed: u64,
) -> (RoutedTree, LinkMetric) {
    let cfg = TreeGenConfig {
        kind,
        max_children: 5,
        ..TreeGenConfig::default()
    };
    let tree = generate_tree(n_leaves, &cfg, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let links: Vec<NodeId> = tree.links().collect();
    let metric = LinkMetric::from_lengths(links.into_iter().map(|k| (k, r.gen_range(lo..=hi)))).unwrap();
    (tree, metric)
}

/// Path length between two nodes, by walking parent pointers.
pub fn path_length(tree: &RoutedTree, metric: &LinkMetric, a: NodeId, b: NodeId) -> f64 {
    let mut up = HashMap::new();
    let (mut v, mut acc) = (a, 0.0);
    loop {
        up.insert(v, acc);
        match tree.parent(v) {
            Some(p) => {
                acc += metric.length(v).unwrap();
                v = p;
            }
            None => break,
        }
    }
    let (mut v, mut acc) = (b, 0.0);
    loop {
        if let Some(x) = up.get(&v) {
            return acc + x;
        }
        acc += metric.length(v).unwrap();
        v = tree.parent(v).unwrap();
    }
}

/// Exact terminal distances, root first then leaves in id order.
pub fn exact_matrix(tree: &RoutedTree, metric: &LinkMetric) -> DistanceMatrix {
    let terms: Vec<NodeId> = std::iter::once(tree.root()).chain(tree.leaves()).collect();
    let labels = terms
        .iter()
        .map(|&k| tree.label(k).unwrap().to_string())
        .collect();
    DistanceMatrix::from_fn(labels, |i, j| path_length(tree, metric, terms[i], terms[j])).unwrap()
}

/// Four-point condition on every quadruple, up to `tol`.
pub fn four_point(d: &DistanceMatrix, tol: f64) -> bool {
    let n = d.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                for l in k + 1..n {
                    let mut s = [
                        d.get(i, j) + d.get(k, l),
                        d.get(i, k) + d.get(j, l),
                        d.get(i, l) + d.get(j, k),
                    ];
                    s.sort_by(f64::total_cmp);
                    if (s[2] - s[1]).abs() > tol {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Adds `+amount` or `-amount`, with random sign, to every off-diagonal pair.
pub fn perturb(d: &DistanceMatrix, amount: f64, seed: u64) -> DistanceMatrix {
    let mut r = rng(seed);
    DistanceMatrix::from_fn(d.labels().to_vec(), |i, j| {
        let sign = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
        d.get(i, j) + sign * amount
    })
    .unwrap()
}

/// Largest per-link length error after matching links by leaf set.
pub fn max_length_error(truth: &RoutedTree, metric: &LinkMetric, inferred: &InferredTree) -> f64 {
    match_links(truth, inferred.tree())
        .unwrap()
        .into_iter()
        .map(|(a, b)| (metric.length(a).unwrap() - inferred.length(b)).abs())
        .fold(0.0, f64::max)
}

/// Exact reception probabilities by enumerating every link-state vector.
///
/// Returns `(p, joint)` over terminals (root first, then leaves in id order),
/// with `joint` row-major.
pub fn brute_force_probabilities(tree: &RoutedTree, rates: &LinkMetric) -> (Vec<f64>, Vec<f64>) {
    let links: Vec<NodeId> = tree.links().collect();
    let terms: Vec<NodeId> = std::iter::once(tree.root()).chain(tree.leaves()).collect();
    let m = terms.len();
    let mut p = vec![0.0; m];
    let mut joint = vec![0.0; m * m];
    for mask in 0u64..(1 << links.len()) {
        let up: HashMap<NodeId, bool> = links
            .iter()
            .enumerate()
            .map(|(b, &k)| (k, mask >> b & 1 == 1))
            .collect();
        let prob: f64 = links
            .iter()
            .map(|k| {
                let a = rates.rate(*k).unwrap();
                if up[k] {
                    a
                } else {
                    1.0 - a
                }
            })
            .product();
        let received = |mut v: NodeId| {
            while let Some(p) = tree.parent(v) {
                if !up[&v] {
                    return false;
                }
                v = p;
            }
            true
        };
        let x: Vec<bool> = terms.iter().map(|&k| received(k)).collect();
        for i in 0..m {
            if x[i] {
                p[i] += prob;
                for j in 0..m {
                    if x[j] {
                        joint[i * m + j] += prob;
                    }
                }
            }
        }
    }
    // Summing every state can overshoot 1 by an ulp.
    p.iter_mut().chain(joint.iter_mut()).for_each(|x| *x = x.min(1.0));
    (p, joint)
}

/// Nearest common ancestor by walking parent pointers.
pub fn nca(tree: &RoutedTree, a: NodeId, b: NodeId) -> NodeId {
    let mut seen = std::collections::HashSet::new();
    let mut v = Some(a);
    while let Some(x) = v {
        seen.insert(x);
        v = tree.parent(x);
    }
    let mut v = b;
    while !seen.contains(&v) {
        v = tree.parent(v).unwrap();
    }
    v
}

/// True if `desc` is a proper descendant of `anc`.
pub fn strictly_below(tree: &RoutedTree, desc: NodeId, anc: NodeId) -> bool {
    let mut v = tree.parent(desc);
    while let Some(x) = v {
        if x == anc {
            return true;
        }
        v = tree.parent(x);
    }
    false
}
