//! Logical routing trees and additive link metrics.
//!
//! A [`RoutedTree`] is stored as an arena indexed by [`NodeId`]. The root is the
//! probe source (or, for reverse probing, the receiver) and has exactly one
//! child; every other internal node has at least two children. Links are
//! identified by their lower endpoint: link `k` joins `parent(k)` and `k`.
//!
//! Only the root and the leaves carry external labels. Internal nodes may hold
//! a display name (e.g. from Newick input) but are otherwise anonymous.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::metrics::DistanceMatrix;
use crate::newick;
use crate::rng::rng_from_seed;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    /// Root is the single source; leaves are destinations.
    SourceRooted,
    /// Root is the single receiver; leaves are sources.
    ReceiverRooted,
}

impl Orientation {
    pub fn flipped(self) -> Self {
        match self {
            Orientation::SourceRooted => Orientation::ReceiverRooted,
            Orientation::ReceiverRooted => Orientation::SourceRooted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TreeKind {
    Binary,
    General,
}

impl std::str::FromStr for TreeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(TreeKind::Binary),
            "general" => Ok(TreeKind::General),
            other => Err(Error::InvalidConfig(format!("unknown tree kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for TreeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TreeKind::Binary => "binary",
            TreeKind::General => "general",
        })
    }
}

#[derive(Debug, Clone)]
pub struct RoutedTree {
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    labels: Vec<Option<String>>,
    root: NodeId,
    orientation: Orientation,
    preorder: Vec<NodeId>,
    depth: Vec<usize>,
}

impl RoutedTree {
    /// Builds and validates a tree from a parent array.
    ///
    /// Children keep the order in which they appear in `parent`.
    pub fn from_parents(
        parent: Vec<Option<NodeId>>,
        labels: Vec<Option<String>>,
        orientation: Orientation,
    ) -> Result<Self> {
        let n = parent.len();
        if n != labels.len() {
            return Err(Error::InvalidTree(format!(
                "{n} parents but {} labels",
                labels.len()
            )));
        }
        let mut roots = parent.iter().enumerate().filter(|(_, p)| p.is_none());
        let root = match (roots.next(), roots.next()) {
            (Some((r, _)), None) => r,
            (None, _) => return Err(Error::InvalidTree("no root".into())),
            (Some(_), Some(_)) => return Err(Error::InvalidTree("more than one root".into())),
        };

        let mut children = vec![Vec::new(); n];
        for (k, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n || p == k {
                    return Err(Error::InvalidTree(format!("bad parent {p} for node {k}")));
                }
                children[p].push(k);
            }
        }

        let mut preorder = Vec::with_capacity(n);
        let mut depth = vec![0; n];
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            preorder.push(v);
            if preorder.len() > n {
                break;
            }
            for &c in children[v].iter().rev() {
                depth[c] = depth[v] + 1;
                stack.push(c);
            }
        }
        if preorder.len() != n {
            return Err(Error::InvalidTree("graph is not a connected tree".into()));
        }

        if children[root].len() != 1 {
            return Err(Error::InvalidTree(format!(
                "root must have exactly one child, has {}",
                children[root].len()
            )));
        }
        let mut seen = BTreeSet::new();
        for k in 0..n {
            if k != root && children[k].len() == 1 {
                return Err(Error::InvalidTree(format!(
                    "internal node {k} has a single child"
                )));
            }
            let terminal = k == root || children[k].is_empty();
            match &labels[k] {
                Some(l) if l.is_empty() => {
                    return Err(Error::InvalidTree(format!("node {k} has an empty label")))
                }
                Some(l) => {
                    if !seen.insert(l.as_str()) {
                        return Err(Error::InvalidTree(format!("duplicate label {l:?}")));
                    }
                }
                None if terminal => {
                    return Err(Error::InvalidTree(format!("terminal node {k} has no label")))
                }
                None => {}
            }
        }

        Ok(Self {
            parent,
            children,
            labels,
            root,
            orientation,
            preorder,
            depth,
        })
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, k: NodeId) -> Option<NodeId> {
        self.parent.get(k).copied().flatten()
    }

    pub fn children(&self, k: NodeId) -> &[NodeId] {
        &self.children[k]
    }

    pub fn label(&self, k: NodeId) -> Option<&str> {
        self.labels.get(k).and_then(|l| l.as_deref())
    }

    pub fn root_label(&self) -> &str {
        self.labels[self.root].as_deref().expect("validated")
    }

    pub fn is_leaf(&self, k: NodeId) -> bool {
        k != self.root && self.children[k].is_empty()
    }

    pub fn depth(&self, k: NodeId) -> usize {
        self.depth[k]
    }

    /// Nodes in depth-first preorder starting at the root.
    pub fn preorder(&self) -> &[NodeId] {
        &self.preorder
    }

    /// Leaves in node-id order.
    pub fn leaves(&self) -> Vec<NodeId> {
        (0..self.node_count()).filter(|&k| self.is_leaf(k)).collect()
    }

    /// Root followed by the leaves in node-id order.
    pub fn terminals(&self) -> Vec<NodeId> {
        std::iter::once(self.root).chain(self.leaves()).collect()
    }

    pub fn leaf_labels(&self) -> Vec<&str> {
        self.leaves()
            .into_iter()
            .map(|k| self.label(k).expect("validated"))
            .collect()
    }

    /// Every link, identified by its lower endpoint, in node-id order.
    pub fn links(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.node_count()).filter(move |&k| k != self.root)
    }

    pub fn link_count(&self) -> usize {
        self.node_count() - 1
    }

    pub fn find_label(&self, label: &str) -> Option<NodeId> {
        self.labels.iter().position(|l| l.as_deref() == Some(label))
    }

    pub fn is_binary(&self) -> bool {
        (0..self.node_count())
            .all(|k| k == self.root || self.children[k].is_empty() || self.children[k].len() == 2)
    }

    /// The same tree read in the opposite probing direction.
    ///
    /// Storage is shared: a receiver-rooted tree keeps each source's link toward
    /// the receiver as `parent(k) -> k`.
    pub fn mirrored(&self) -> Self {
        let mut t = self.clone();
        t.orientation = self.orientation.flipped();
        t
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    /// Replaces the root's label.
    pub fn with_root_label(mut self, label: &str) -> Result<Self> {
        if self
            .labels
            .iter()
            .enumerate()
            .any(|(k, l)| k != self.root && l.as_deref() == Some(label))
        {
            return Err(Error::InvalidTree(format!("duplicate label {label:?}")));
        }
        self.labels[self.root] = Some(label.to_string());
        Ok(self)
    }

    fn check(&self, k: NodeId) -> Result<()> {
        if k < self.node_count() {
            Ok(())
        } else {
            Err(Error::NodeNotFound(k))
        }
    }

    /// Sorted leaf labels below each node, indexed by node id.
    pub fn leaf_sets(&self) -> Vec<Vec<&str>> {
        let mut sets: Vec<Vec<&str>> = vec![Vec::new(); self.node_count()];
        for &v in self.preorder.iter().rev() {
            if self.is_leaf(v) {
                sets[v] = vec![self.label(v).expect("validated")];
            } else {
                let mut s: Vec<&str> = self.children[v]
                    .iter()
                    .flat_map(|&c| sets[c].iter().copied())
                    .collect();
                s.sort_unstable();
                sets[v] = s;
            }
        }
        sets
    }

    /// Canonical text of the rooted, leaf-labeled topology.
    ///
    /// Children are ordered by their sorted leaf-label sets; internal names and
    /// lengths are ignored.
    pub fn canonical_form(&self) -> String {
        let sets = self.leaf_sets();
        let mut out = newick::quote_label(self.root_label());
        out.push('(');
        self.write_canonical(self.children[self.root][0], &sets, &mut out);
        out.push(')');
        out
    }

    fn write_canonical(&self, v: NodeId, sets: &[Vec<&str>], out: &mut String) {
        if self.is_leaf(v) {
            out.push_str(&newick::quote_label(self.label(v).expect("validated")));
            return;
        }
        let mut kids = self.children[v].clone();
        kids.sort_by(|&a, &b| sets[a].cmp(&sets[b]));
        out.push('(');
        for (i, &c) in kids.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            self.write_canonical(c, sets, out);
        }
        out.push(')');
    }
}

/// Incremental construction of a [`RoutedTree`].
#[derive(Debug, Clone)]
pub struct TreeBuilder {
    parent: Vec<Option<NodeId>>,
    labels: Vec<Option<String>>,
}

impl TreeBuilder {
    pub fn new(root_label: &str) -> Self {
        Self {
            parent: vec![None],
            labels: vec![Some(root_label.to_string())],
        }
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn add_internal(&mut self, parent: NodeId) -> NodeId {
        self.push(parent, None)
    }

    pub fn add_leaf(&mut self, parent: NodeId, label: &str) -> NodeId {
        self.push(parent, Some(label.to_string()))
    }

    pub fn add_named(&mut self, parent: NodeId, label: Option<&str>) -> NodeId {
        self.push(parent, label.map(str::to_string))
    }

    fn push(&mut self, parent: NodeId, label: Option<String>) -> NodeId {
        self.parent.push(Some(parent));
        self.labels.push(label);
        self.parent.len() - 1
    }

    pub fn build(self) -> Result<RoutedTree> {
        self.build_with(Orientation::SourceRooted)
    }

    pub fn build_with(self, orientation: Orientation) -> Result<RoutedTree> {
        RoutedTree::from_parents(self.parent, self.labels, orientation)
    }
}

/// Per-link lengths and, optionally, success rates.
///
/// Validated constructors enforce `0 < length < inf` and `length = -ln(rate)`.
/// [`LinkMetric::for_simulation`] and [`LinkMetric::from_estimates`] relax this
/// for degenerate simulation inputs and for inferred lengths respectively.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkMetric {
    lengths: BTreeMap<NodeId, f64>,
    rates: Option<BTreeMap<NodeId, f64>>,
}

impl LinkMetric {
    pub fn from_lengths(lengths: impl IntoIterator<Item = (NodeId, f64)>) -> Result<Self> {
        let lengths: BTreeMap<_, _> = lengths.into_iter().collect();
        if let Some(&bad) = lengths.values().find(|&&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidLength(bad));
        }
        Ok(Self {
            lengths,
            rates: None,
        })
    }

    /// Loss metric: each length is `-ln(rate)`, rates strictly inside (0, 1).
    pub fn from_rates(rates: impl IntoIterator<Item = (NodeId, f64)>) -> Result<Self> {
        let rates: BTreeMap<_, _> = rates.into_iter().collect();
        let lengths = rates
            .iter()
            .map(|(&k, &a)| crate::metrics::loss_link_length(a).map(|d| (k, d)))
            .collect::<Result<_>>()?;
        Ok(Self {
            lengths,
            rates: Some(rates),
        })
    }

    /// Rates in the closed interval [0, 1]. Lengths exist only for rates in (0, 1).
    pub fn for_simulation(rates: impl IntoIterator<Item = (NodeId, f64)>) -> Result<Self> {
        let rates: BTreeMap<_, _> = rates.into_iter().collect();
        if let Some(&bad) = rates.values().find(|&&a| !(0.0..=1.0).contains(&a)) {
            return Err(Error::InvalidRate(bad));
        }
        let lengths = rates
            .iter()
            .filter(|(_, &a)| a > 0.0 && a < 1.0)
            .map(|(&k, &a)| (k, -a.ln()))
            .collect();
        Ok(Self {
            lengths,
            rates: Some(rates),
        })
    }

    /// Unvalidated lengths, e.g. the output of an inference algorithm.
    pub fn from_estimates(lengths: impl IntoIterator<Item = (NodeId, f64)>) -> Self {
        Self {
            lengths: lengths.into_iter().collect(),
            rates: None,
        }
    }

    pub fn length(&self, link: NodeId) -> Option<f64> {
        self.lengths.get(&link).copied()
    }

    pub fn rate(&self, link: NodeId) -> Option<f64> {
        self.rates.as_ref().and_then(|r| r.get(&link).copied())
    }

    pub fn has_rates(&self) -> bool {
        self.rates.is_some()
    }

    pub fn lengths(&self) -> &BTreeMap<NodeId, f64> {
        &self.lengths
    }

    pub fn rates(&self) -> Option<&BTreeMap<NodeId, f64>> {
        self.rates.as_ref()
    }

    pub fn min_length(&self) -> Option<f64> {
        self.lengths.values().copied().reduce(f64::min)
    }

    /// All lengths multiplied by `c`; rates are dropped.
    pub fn scaled(&self, c: f64) -> Self {
        Self::from_estimates(self.lengths.iter().map(|(&k, &d)| (k, d * c)))
    }

    fn require_length(&self, link: NodeId) -> Result<f64> {
        self.length(link).ok_or(Error::MetricIncomplete(link))
    }
}

/// Sum of link lengths along the unique path between `i` and `j`.
pub fn path_distance(tree: &RoutedTree, metric: &LinkMetric, i: NodeId, j: NodeId) -> Result<f64> {
    tree.check(i)?;
    tree.check(j)?;
    let (mut a, mut b) = (i, j);
    let mut total = 0.0;
    while tree.depth(a) > tree.depth(b) {
        total += metric.require_length(a)?;
        a = tree.parent(a).expect("deeper than another node");
    }
    while tree.depth(b) > tree.depth(a) {
        total += metric.require_length(b)?;
        b = tree.parent(b).expect("deeper than another node");
    }
    while a != b {
        total += metric.require_length(a)? + metric.require_length(b)?;
        a = tree.parent(a).expect("not root");
        b = tree.parent(b).expect("not root");
    }
    Ok(total)
}

/// Deepest common ancestor of `i` and `j`; a node is its own ancestor.
pub fn nearest_common_ancestor(tree: &RoutedTree, i: NodeId, j: NodeId) -> Result<NodeId> {
    tree.check(i)?;
    tree.check(j)?;
    let (mut a, mut b) = (i, j);
    while tree.depth(a) > tree.depth(b) {
        a = tree.parent(a).expect("deeper than another node");
    }
    while tree.depth(b) > tree.depth(a) {
        b = tree.parent(b).expect("deeper than another node");
    }
    while a != b {
        a = tree.parent(a).expect("not root");
        b = tree.parent(b).expect("not root");
    }
    Ok(a)
}

/// Exact additive distances between all terminals, root first.
pub fn terminal_distance_matrix(tree: &RoutedTree, metric: &LinkMetric) -> Result<DistanceMatrix> {
    let terms = tree.terminals();
    let labels = terms
        .iter()
        .map(|&k| tree.label(k).expect("validated").to_string())
        .collect();
    let n = terms.len();
    let mut values = vec![0.0; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let d = path_distance(tree, metric, terms[a], terms[b])?;
            values[a * n + b] = d;
            values[b * n + a] = d;
        }
    }
    DistanceMatrix::new(labels, values)
}

/// True iff the rooted, leaf-labeled topologies coincide.
pub fn trees_equal(a: &RoutedTree, b: &RoutedTree) -> Result<bool> {
    check_same_labels(a, b)?;
    Ok(a.canonical_form() == b.canonical_form())
}

fn check_same_labels(a: &RoutedTree, b: &RoutedTree) -> Result<()> {
    if a.root_label() != b.root_label() {
        return Err(Error::LabelMismatch(format!(
            "root {:?} vs {:?}",
            a.root_label(),
            b.root_label()
        )));
    }
    let la: BTreeSet<_> = a.leaf_labels().into_iter().collect();
    let lb: BTreeSet<_> = b.leaf_labels().into_iter().collect();
    if la != lb {
        let diff: Vec<_> = la.symmetric_difference(&lb).collect();
        return Err(Error::LabelMismatch(format!("leaves differ in {diff:?}")));
    }
    Ok(())
}

/// Pairs `(link in a, link in b)` that cut off the same leaf set.
///
/// Fails with [`Error::TopologyMismatch`] unless the topologies are equal.
pub fn match_links(a: &RoutedTree, b: &RoutedTree) -> Result<Vec<(NodeId, NodeId)>> {
    if !trees_equal(a, b)? {
        return Err(Error::TopologyMismatch);
    }
    let sets_b = b.leaf_sets();
    let by_set: HashMap<&[&str], NodeId> = b
        .links()
        .map(|k| (sets_b[k].as_slice(), k))
        .collect();
    let sets_a = a.leaf_sets();
    a.links()
        .map(|k| {
            by_set
                .get(sets_a[k].as_slice())
                .map(|&m| (k, m))
                .ok_or(Error::TopologyMismatch)
        })
        .collect()
}

/// Random logical-tree generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeGenConfig {
    pub kind: TreeKind,
    /// Upper bound on children per internal node (general trees only).
    pub max_children: usize,
    /// Probability of contracting each internal link (general trees only).
    pub contract_prob: f64,
    pub root_label: String,
}

impl Default for TreeGenConfig {
    fn default() -> Self {
        Self {
            kind: TreeKind::Binary,
            max_children: 2,
            contract_prob: 0.5,
            root_label: "s".to_string(),
        }
    }
}

/// Random tree with `n_leaves` leaves labeled `1..=n_leaves` and root `s`.
pub fn random_tree(
    n_leaves: usize,
    kind: TreeKind,
    max_children: usize,
    rng_seed: u64,
) -> Result<RoutedTree> {
    let cfg = TreeGenConfig {
        kind,
        max_children,
        ..TreeGenConfig::default()
    };
    generate_tree(n_leaves, &cfg, rng_seed)
}

/// Grows a uniformly random rooted binary tree by repeatedly splitting a
/// random link and hanging a new leaf there; general trees then contract each
/// internal link with probability `contract_prob`, subject to `max_children`.
pub fn generate_tree(n_leaves: usize, cfg: &TreeGenConfig, rng_seed: u64) -> Result<RoutedTree> {
    if n_leaves < 2 {
        return Err(Error::TooFewLeaves(n_leaves));
    }
    if cfg.kind == TreeKind::General && cfg.max_children < 2 {
        return Err(Error::InvalidConfig(format!(
            "max_children must be at least 2, got {}",
            cfg.max_children
        )));
    }
    if !(0.0..=1.0).contains(&cfg.contract_prob) {
        return Err(Error::InvalidConfig(format!(
            "contract_prob {} outside [0, 1]",
            cfg.contract_prob
        )));
    }
    let mut rng = rng_from_seed(rng_seed);

    // Working arena: 0 = root, 1 = root's child, 2 and 3 = first two leaves.
    let mut parent: Vec<Option<usize>> = vec![None, Some(0), Some(1), Some(1)];
    let mut children: Vec<Vec<usize>> = vec![vec![1], vec![2, 3], vec![], vec![]];
    let mut labels: Vec<Option<String>> = vec![
        Some(cfg.root_label.clone()),
        None,
        Some("1".into()),
        Some("2".into()),
    ];
    for leaf in 3..=n_leaves {
        let v = rng.gen_range(1..parent.len());
        let p = parent[v].expect("non-root");
        let w = parent.len();
        let l = w + 1;
        parent.push(Some(p));
        children.push(vec![v, l]);
        labels.push(None);
        parent.push(Some(w));
        children.push(vec![]);
        labels.push(Some(leaf.to_string()));
        let slot = children[p].iter().position(|&c| c == v).expect("child");
        children[p][slot] = w;
        parent[v] = Some(w);
    }

    let mut alive = vec![true; parent.len()];
    if cfg.kind == TreeKind::General {
        let order = preorder_of(&children, 0);
        for v in order {
            let Some(u) = parent[v] else { continue };
            if u == 0 || children[v].is_empty() {
                continue;
            }
            let contract = rng.gen_bool(cfg.contract_prob);
            if !contract || children[u].len() - 1 + children[v].len() > cfg.max_children {
                continue;
            }
            let moved = std::mem::take(&mut children[v]);
            for &c in &moved {
                parent[c] = Some(u);
            }
            let slot = children[u].iter().position(|&c| c == v).expect("child");
            children[u].splice(slot..=slot, moved);
            alive[v] = false;
        }
    }

    // Compact in preorder so parents precede children.
    let order = preorder_of(&children, 0);
    let mut new_id = vec![usize::MAX; parent.len()];
    for (i, &v) in order.iter().enumerate() {
        debug_assert!(alive[v]);
        new_id[v] = i;
    }
    let new_parent = order
        .iter()
        .map(|&v| parent[v].map(|p| new_id[p]))
        .collect();
    let new_labels = order.iter().map(|&v| labels[v].clone()).collect();
    RoutedTree::from_parents(new_parent, new_labels, Orientation::SourceRooted)
}

fn preorder_of(children: &[Vec<usize>], root: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        out.push(v);
        stack.extend(children[v].iter().rev());
    }
    out
}
