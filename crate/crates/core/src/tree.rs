//! CART decision-tree classifier with Gini impurity, plus the leaf regions
//! (hyperrectangles in the numeric encoding) that recourse generation
//! projects onto.
//!
//! Splits test `value <= threshold` (left) against `value > threshold`
//! (right), with thresholds at midpoints between adjacent distinct sorted
//! values. Categorical features split on their ordinal codes, so every leaf
//! region stays a hyperrectangle.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{ApplicantProfile, Feature, FeatureSchema, NUM_FEATURES};
use crate::synth::{Decision, LabeledProfile};

pub type NodeId = usize;

pub const TREE_FORMAT: &str = "recourse-tree";
pub const TREE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub min_samples_leaf: usize,
    #[serde(default)]
    pub max_depth: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { min_samples_leaf: 5, max_depth: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: Feature,
        threshold: f64,
        left: NodeId,
        right: NodeId,
        samples: usize,
    },
    Leaf {
        label: Decision,
        samples: usize,
        approved: usize,
    },
}

/// A feature interval with explicit endpoint openness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub lo_closed: bool,
    pub hi: f64,
    pub hi_closed: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Interval { lo, lo_closed: true, hi, hi_closed: true }
    }

    pub fn contains(&self, v: f64) -> bool {
        let above = if self.lo_closed { v >= self.lo } else { v > self.lo };
        let below = if self.hi_closed { v <= self.hi } else { v < self.hi };
        above && below
    }

    /// Smallest admissible integer, if any.
    pub fn min_integer(&self) -> Option<f64> {
        let lo = if self.lo_closed { self.lo.ceil() } else { self.lo.floor() + 1.0 };
        self.contains(lo).then_some(lo)
    }

    /// Largest admissible integer, if any.
    pub fn max_integer(&self) -> Option<f64> {
        let hi = if self.hi_closed { self.hi.floor() } else { self.hi.ceil() - 1.0 };
        self.contains(hi).then_some(hi)
    }

    pub fn is_empty(&self, integer: bool) -> bool {
        if integer {
            self.min_integer().is_none()
        } else {
            !(self.lo < self.hi || (self.lo == self.hi && self.lo_closed && self.hi_closed))
        }
    }

    /// A point well inside the interval: the midpoint, or the middle
    /// admissible integer for integer features.
    pub fn representative(&self, integer: bool) -> Option<f64> {
        if integer {
            let (lo, hi) = (self.min_integer()?, self.max_integer()?);
            Some(((lo + hi) / 2.0).floor())
        } else if self.is_empty(false) {
            None
        } else {
            Some((self.lo + self.hi) / 2.0)
        }
    }

    fn cut_left(&mut self, threshold: f64) {
        if threshold < self.hi || (threshold == self.hi && !self.hi_closed) {
            self.hi = threshold;
            self.hi_closed = true;
        }
    }

    fn cut_right(&mut self, threshold: f64) {
        if threshold >= self.lo {
            self.lo = threshold;
            self.lo_closed = false;
        }
    }
}

/// The feasible box of a tree node: all split constraints on its root path
/// intersected with the schema bounds.
pub type Region = [Interval; NUM_FEATURES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafRegion {
    pub leaf: NodeId,
    pub label: Decision,
    pub intervals: Region,
    pub samples: usize,
}

impl LeafRegion {
    pub fn contains(&self, x: &ApplicantProfile) -> bool {
        Feature::ALL.iter().all(|&f| self.intervals[f.index()].contains(x.value(f)))
    }

    /// A profile inside the region, built from per-feature representatives.
    pub fn midpoint(&self) -> Result<ApplicantProfile> {
        let mut values = [0.0; NUM_FEATURES];
        for f in Feature::ALL {
            values[f.index()] = self.intervals[f.index()]
                .representative(f.is_integer())
                .ok_or_else(|| Error::InvalidArtifact(format!("leaf {} has an empty {f} interval", self.leaf)))?;
        }
        ApplicantProfile::from_values(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub decision: Decision,
    pub leaf: NodeId,
}

#[derive(Serialize, Deserialize)]
struct TreeRepr {
    root: NodeId,
    nodes: Vec<Node>,
}

/// A trained tree. Nodes live in an arena; the root is node 0 and leaf ids
/// are arena indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "TreeRepr", into = "TreeRepr")]
pub struct DecisionTree {
    nodes: Vec<Node>,
    regions: Vec<Region>,
    leaves: OnceLock<Vec<LeafRegion>>,
}

impl From<DecisionTree> for TreeRepr {
    fn from(t: DecisionTree) -> Self {
        TreeRepr { root: 0, nodes: t.nodes }
    }
}

impl TryFrom<TreeRepr> for DecisionTree {
    type Error = Error;

    fn try_from(r: TreeRepr) -> Result<Self> {
        if r.root != 0 {
            return Err(Error::InvalidArtifact("root must be node 0".into()));
        }
        DecisionTree::from_nodes(r.nodes, &FeatureSchema::credit())
    }
}

impl PartialEq for DecisionTree {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
    }
}

impl DecisionTree {
    /// Builds a tree from an explicit arena, checking that every child id is
    /// in range and referenced once, thresholds lie strictly inside the
    /// schema bounds, and every node region is nonempty.
    pub fn from_nodes(nodes: Vec<Node>, schema: &FeatureSchema) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidArtifact("tree has no nodes".into()));
        }
        let mut parent_count = vec![0usize; nodes.len()];
        for node in &nodes {
            if let Node::Split { feature, threshold, left, right, .. } = *node {
                let (lo, hi) = schema.bounds(feature);
                if !(threshold > lo && threshold < hi) {
                    return Err(Error::InvalidArtifact(format!(
                        "threshold {threshold} for {feature} is not strictly inside [{lo}, {hi}]"
                    )));
                }
                for child in [left, right] {
                    if child == 0 || child >= nodes.len() {
                        return Err(Error::InvalidArtifact(format!("bad child id {child}")));
                    }
                    parent_count[child] += 1;
                }
            }
        }
        if parent_count.iter().skip(1).any(|&c| c != 1) {
            return Err(Error::InvalidArtifact("tree arena is not a tree".into()));
        }

        let root_region: Region = Feature::ALL.map(|f| {
            let (lo, hi) = schema.bounds(f);
            Interval::closed(lo, hi)
        });
        let mut regions = vec![root_region; nodes.len()];
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            for f in Feature::ALL {
                if regions[id][f.index()].is_empty(schema.spec(f).is_integer()) {
                    return Err(Error::InvalidArtifact(format!("node {id} has an empty {f} interval")));
                }
            }
            if let Node::Split { feature, threshold, left, right, .. } = nodes[id] {
                let mut l = regions[id];
                l[feature.index()].cut_left(threshold);
                let mut r = regions[id];
                r[feature.index()].cut_right(threshold);
                regions[left] = l;
                regions[right] = r;
                stack.push(right);
                stack.push(left);
            }
        }
        Ok(DecisionTree { nodes, regions, leaves: OnceLock::new() })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    /// Feasible box of any node (internal or leaf).
    pub fn region(&self, id: NodeId) -> &Region {
        &self.regions[id]
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], id: NodeId) -> usize {
            match nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Node ids visited from the root to the leaf reached by `values`.
    pub fn path_for_values(&self, values: &[f64; NUM_FEATURES]) -> Vec<NodeId> {
        let mut path = vec![0];
        let mut id = 0;
        while let Node::Split { feature, threshold, left, right, .. } = self.nodes[id] {
            id = if values[feature.index()] <= threshold { left } else { right };
            path.push(id);
        }
        path
    }

    pub fn decision_path(&self, x: &ApplicantProfile) -> Vec<NodeId> {
        self.path_for_values(&x.values())
    }

    pub fn predict_values(&self, values: &[f64; NUM_FEATURES]) -> Prediction {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Split { feature, threshold, left, right, .. } => {
                    id = if values[feature.index()] <= threshold { left } else { right };
                }
                Node::Leaf { label, .. } => return Prediction { decision: label, leaf: id },
            }
        }
    }

    pub fn predict(&self, x: &ApplicantProfile) -> Prediction {
        self.predict_values(&x.values())
    }

    /// All leaf regions ordered by leaf id.
    pub fn leaf_regions(&self) -> &[LeafRegion] {
        self.leaves.get_or_init(|| {
            self.nodes
                .iter()
                .enumerate()
                .filter_map(|(id, n)| match *n {
                    Node::Leaf { label, samples, .. } => Some(LeafRegion {
                        leaf: id,
                        label,
                        intervals: self.regions[id],
                        samples,
                    }),
                    Node::Split { .. } => None,
                })
                .collect()
        })
    }

    pub fn leaf_region(&self, leaf: NodeId) -> Option<&LeafRegion> {
        let leaves = self.leaf_regions();
        leaves.binary_search_by_key(&leaf, |l| l.leaf).ok().map(|i| &leaves[i])
    }

    /// Approving leaves ordered by leaf id.
    pub fn accepting_leaves(&self) -> Vec<&LeafRegion> {
        self.leaf_regions().iter().filter(|l| l.label == Decision::Approved).collect()
    }

    pub fn rejecting_leaves(&self) -> Vec<&LeafRegion> {
        self.leaf_regions().iter().filter(|l| l.label == Decision::Rejected).collect()
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub tree: DecisionTree,
    pub test_accuracy: f64,
    pub train_size: usize,
    pub test_size: usize,
}

/// Shuffled 80/20 split of `0..n` into train and test indices.
pub fn train_test_split(n: usize, split_seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let test = order.split_off((n * 4 / 5).max(1).min(n));
    (order, test)
}

/// CART on the 80% side of [`train_test_split`], accuracy on the 20%.
pub fn train(data: &[LabeledProfile], split_seed: u64, params: &TreeParams) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train_idx, test_idx) = train_test_split(data.len(), split_seed);

    let rows: Vec<[f64; NUM_FEATURES]> = train_idx.iter().map(|&i| data[i].profile.values()).collect();
    let labels: Vec<Decision> = train_idx.iter().map(|&i| data[i].decision).collect();
    let tree = fit(&rows, &labels, params)?;

    let correct = test_idx
        .iter()
        .filter(|&&i| tree.predict(&data[i].profile).decision == data[i].decision)
        .count();
    let test_accuracy = if test_idx.is_empty() { 1.0 } else { correct as f64 / test_idx.len() as f64 };
    Ok(TrainOutcome { tree, test_accuracy, train_size: train_idx.len(), test_size: test_idx.len() })
}

/// Grows a tree on all given rows. Nodes stop splitting when pure, when no
/// split leaves `min_samples_leaf` on both sides and lowers impurity, or at
/// `max_depth`.
pub fn fit(rows: &[[f64; NUM_FEATURES]], labels: &[Decision], params: &TreeParams) -> Result<DecisionTree> {
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(Error::EmptyDataset);
    }
    let positive: Vec<bool> = labels.iter().map(|&d| d == Decision::Approved).collect();
    if positive.iter().all(|&p| p) || positive.iter().all(|&p| !p) {
        return Err(Error::SingleClass);
    }
    let mut builder = Builder {
        rows,
        positive: &positive,
        min_leaf: params.min_samples_leaf.max(1),
        max_depth: params.max_depth,
        nodes: Vec::new(),
    };
    let all: Vec<u32> = (0..rows.len() as u32).collect();
    builder.grow(all, 0);
    DecisionTree::from_nodes(builder.nodes, &FeatureSchema::credit())
}

struct Builder<'a> {
    rows: &'a [[f64; NUM_FEATURES]],
    positive: &'a [bool],
    min_leaf: usize,
    max_depth: Option<usize>,
    nodes: Vec<Node>,
}

struct SplitChoice {
    feature: Feature,
    threshold: f64,
    impurity: f64,
}

fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

impl Builder<'_> {
    fn grow(&mut self, idx: Vec<u32>, depth: usize) -> NodeId {
        let id = self.nodes.len();
        let n = idx.len();
        let approved = idx.iter().filter(|&&i| self.positive[i as usize]).count();
        let label = if 2 * approved > n { Decision::Approved } else { Decision::Rejected };
        self.nodes.push(Node::Leaf { label, samples: n, approved });

        let pure = approved == 0 || approved == n;
        let depth_capped = self.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || n < 2 * self.min_leaf {
            return id;
        }
        let Some(split) = self.best_split(&idx, approved) else {
            return id;
        };
        let (left_idx, right_idx): (Vec<u32>, Vec<u32>) = idx
            .into_iter()
            .partition(|&i| self.rows[i as usize][split.feature.index()] <= split.threshold);
        let left = self.grow(left_idx, depth + 1);
        let right = self.grow(right_idx, depth + 1);
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left, right, samples: n };
        id
    }

    fn best_split(&self, idx: &[u32], approved: usize) -> Option<SplitChoice> {
        let n = idx.len();
        let nf = n as f64;
        let parent = gini(approved as f64, nf);
        let mut best: Option<SplitChoice> = None;
        let mut sorted = idx.to_vec();
        for feature in Feature::ALL {
            let f = feature.index();
            sorted.sort_unstable_by(|&a, &b| self.rows[a as usize][f].total_cmp(&self.rows[b as usize][f]));
            let mut left_pos = 0usize;
            for k in 0..n - 1 {
                let i = sorted[k] as usize;
                if self.positive[i] {
                    left_pos += 1;
                }
                let left_n = k + 1;
                if left_n < self.min_leaf || n - left_n < self.min_leaf {
                    continue;
                }
                let v = self.rows[i][f];
                let next = self.rows[sorted[k + 1] as usize][f];
                if v == next {
                    continue;
                }
                let ln = left_n as f64;
                let rn = nf - ln;
                let impurity = (ln * gini(left_pos as f64, ln) + rn * gini((approved - left_pos) as f64, rn)) / nf;
                if impurity < best.as_ref().map_or(parent - 1e-12, |b| b.impurity) {
                    let mut threshold = v + (next - v) / 2.0;
                    if threshold >= next {
                        threshold = v;
                    }
                    best = Some(SplitChoice { feature, threshold, impurity });
                }
            }
        }
        best
    }
}
