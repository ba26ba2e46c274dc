//! Counterfactual recourse generation.
//!
//! For a rejected profile, every approving leaf is a candidate target. The
//! cheapest move into a leaf's hyperrectangle under an (optionally weighted)
//! L1 cost is the coordinate-wise clamp, so candidates are projections sorted
//! by cost. A Floyd-Warshall route over the tree's node graph computes the
//! same costs as path lengths and exists for cross-checking.

use petgraph::algo::floyd_warshall;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{cost_report, CostReport, FeatureWeights};
use crate::schema::{ApplicantProfile, Feature, FeatureSchema, NUM_FEATURES};
use crate::synth::Decision;
use crate::tree::{DecisionTree, Interval, LeafRegion, Node, NodeId, Region};

/// Step sizes used by [`rounded_variant`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundingSteps {
    pub income: f64,
    pub credit_score: f64,
    pub loan_amount: f64,
}

impl Default for RoundingSteps {
    fn default() -> Self {
        RoundingSteps { income: 500.0, credit_score: 10.0, loan_amount: 500.0 }
    }
}

impl RoundingSteps {
    pub fn step(&self, feature: Feature) -> Option<f64> {
        match feature {
            Feature::Income => Some(self.income),
            Feature::CreditScore => Some(self.credit_score),
            Feature::LoanAmount => Some(self.loan_amount),
            Feature::EmploymentType | Feature::EducationLevel => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    #[default]
    Projection,
    FloydWarshall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub k: usize,
    /// Offset past a strict bound, as a fraction of the feature range.
    pub epsilon_fraction: f64,
    pub rounding: RoundingSteps,
    pub route: Route,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig { k: 15, epsilon_fraction: 1e-6, rounding: RoundingSteps::default(), route: Route::Projection }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.epsilon_fraction > 0.0 && self.epsilon_fraction < 1.0) {
            return Err(Error::InvalidConfig("epsilon_fraction must be in (0, 1)".into()));
        }
        let r = &self.rounding;
        if ![r.income, r.credit_score, r.loan_amount].iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidConfig("rounding steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recourse {
    pub source: ApplicantProfile,
    pub counterfactual: ApplicantProfile,
    pub target_leaf: NodeId,
    /// Signed raw changes `x′_i − x_i`.
    pub deltas: [f64; NUM_FEATURES],
    pub cost: CostReport,
}

impl Recourse {
    pub fn new(
        source: ApplicantProfile,
        counterfactual: ApplicantProfile,
        target_leaf: NodeId,
        schema: &FeatureSchema,
        w: &FeatureWeights,
    ) -> Self {
        let (a, b) = (source.values(), counterfactual.values());
        let deltas = std::array::from_fn(|i| b[i] - a[i]);
        let cost = cost_report(&source, &counterfactual, schema, w);
        Recourse { source, counterfactual, target_leaf, deltas, cost }
    }

    pub fn changed_features(&self) -> Vec<Feature> {
        self.source.changed_features(&self.counterfactual)
    }

    pub fn with_weights(&self, schema: &FeatureSchema, w: &FeatureWeights) -> Self {
        Recourse::new(self.source, self.counterfactual, self.target_leaf, schema, w)
    }
}

/// Nearest admissible value of one feature inside `iv`, or `None` when `iv`
/// has no admissible value.
fn clamp_feature(v: f64, iv: &Interval, integer: bool, eps: f64) -> Option<f64> {
    if iv.contains(v) && (!integer || v.fract() == 0.0) {
        return Some(v);
    }
    let below = v < iv.lo || (v == iv.lo && !iv.lo_closed);
    if integer {
        return if below { iv.min_integer() } else { iv.max_integer() };
    }
    let candidate = match (below, iv.lo_closed, iv.hi_closed) {
        (true, true, _) => iv.lo,
        (true, false, _) => iv.lo + eps,
        (false, _, true) => iv.hi,
        (false, _, false) => iv.hi - eps,
    };
    if iv.contains(candidate) {
        Some(candidate)
    } else {
        // interval narrower than the offset
        let mid = iv.lo + (iv.hi - iv.lo) / 2.0;
        iv.contains(mid).then_some(mid)
    }
}

/// Coordinate-wise clamp of `x` into `region`. `Err(feature)` names the
/// first feature whose required move breaks its direction constraint.
pub fn project_values(
    x: &ApplicantProfile,
    region: &Region,
    schema: &FeatureSchema,
    epsilon_fraction: f64,
) -> std::result::Result<[f64; NUM_FEATURES], Feature> {
    let mut out = x.values();
    for f in Feature::ALL {
        let i = f.index();
        let v = out[i];
        let spec = schema.spec(f);
        let target = clamp_feature(v, &region[i], spec.is_integer(), epsilon_fraction * spec.range()).ok_or(f)?;
        if !spec.direction.allows(v, target) {
            return Err(f);
        }
        out[i] = target;
    }
    Ok(out)
}

/// Minimal-cost move of `x` into an approving leaf, or `None` when the move
/// is infeasible under the direction constraints.
pub fn project_to_leaf(
    x: &ApplicantProfile,
    region: &LeafRegion,
    schema: &FeatureSchema,
    cfg: &GenerationConfig,
    w: Option<&FeatureWeights>,
) -> Option<Recourse> {
    let values = project_values(x, &region.intervals, schema, cfg.epsilon_fraction).ok()?;
    let cf = ApplicantProfile::from_values(values).ok()?;
    let uniform = FeatureWeights::uniform();
    Some(Recourse::new(*x, cf, region.leaf, schema, w.unwrap_or(&uniform)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub recourses: Vec<Recourse>,
    /// Fewer than K feasible recourses existed.
    pub exhausted: bool,
}

fn sort_key(r: &Recourse, weighted: bool) -> f64 {
    if weighted {
        r.cost.weighted_prox
    } else {
        r.cost.prox
    }
}

/// Every feasible recourse for `x`, sorted by cost then leaf id.
pub fn all_feasible(
    tree: &DecisionTree,
    x: &ApplicantProfile,
    schema: &FeatureSchema,
    cfg: &GenerationConfig,
    w: Option<&FeatureWeights>,
) -> Result<Vec<Recourse>> {
    cfg.validate()?;
    if tree.predict(x).decision != Decision::Rejected {
        return Err(Error::NotRejected);
    }
    match cfg.route {
        Route::Projection => {
            let mut out: Vec<Recourse> = tree
                .accepting_leaves()
                .into_iter()
                .filter_map(|region| project_to_leaf(x, region, schema, cfg, w))
                .collect();
            let weighted = w.is_some();
            out.sort_by(|a, b| {
                sort_key(a, weighted)
                    .total_cmp(&sort_key(b, weighted))
                    .then(a.target_leaf.cmp(&b.target_leaf))
            });
            Ok(out)
        }
        Route::FloydWarshall => floyd_warshall_route(tree, x, schema, cfg, w),
    }
}

/// The K cheapest recourses for a rejected profile.
pub fn generate_top_k(
    tree: &DecisionTree,
    x: &ApplicantProfile,
    schema: &FeatureSchema,
    cfg: &GenerationConfig,
    w: Option<&FeatureWeights>,
) -> Result<TopK> {
    let mut recourses = all_feasible(tree, x, schema, cfg, w)?;
    let exhausted = recourses.len() < cfg.k;
    recourses.truncate(cfg.k);
    Ok(TopK { recourses, exhausted })
}

/// Shortest paths from x's leaf over the tree's node graph. Entering a node
/// costs the increase in projection cost over its parent; moving up the
/// decision path of x is free. Path lengths to approving leaves then
/// telescope to their projection costs.
fn floyd_warshall_route(
    tree: &DecisionTree,
    x: &ApplicantProfile,
    schema: &FeatureSchema,
    cfg: &GenerationConfig,
    w: Option<&FeatureWeights>,
) -> Result<Vec<Recourse>> {
    let uniform = FeatureWeights::uniform();
    let weights = w.unwrap_or(&uniform);
    let n = tree.nodes().len();
    let node_cost: Vec<Option<f64>> = (0..n)
        .map(|id| {
            project_values(x, tree.region(id), schema, cfg.epsilon_fraction).ok().and_then(|v| {
                let cf = ApplicantProfile::from_values(v).ok()?;
                let c = cost_report(x, &cf, schema, weights);
                Some(if w.is_some() { c.weighted_prox } else { c.prox })
            })
        })
        .collect();

    let mut graph = DiGraph::<NodeId, f64>::with_capacity(n, 2 * n);
    let idx: Vec<NodeIndex> = (0..n).map(|id| graph.add_node(id)).collect();
    for (id, node) in tree.nodes().iter().enumerate() {
        if let Node::Split { left, right, .. } = *node {
            for child in [left, right] {
                let weight = match (node_cost[id], node_cost[child]) {
                    (Some(p), Some(c)) => c - p,
                    _ => f64::MAX,
                };
                graph.add_edge(idx[id], idx[child], weight);
            }
        }
    }
    let path = tree.decision_path(x);
    for pair in path.windows(2) {
        graph.add_edge(idx[pair[1]], idx[pair[0]], 0.0);
    }
    let dist = floyd_warshall(&graph, |e| *e.weight())
        .map_err(|_| Error::InvalidArtifact("negative cycle in node graph".into()))?;

    let source = idx[*path.last().expect("path is nonempty")];
    let mut ranked: Vec<(f64, &LeafRegion)> = tree
        .accepting_leaves()
        .into_iter()
        .filter_map(|region| {
            let d = *dist.get(&(source, idx[region.leaf]))?;
            (d.is_finite() && d < f64::MAX / 2.0).then_some(((d * 1e9).round() / 1e9, region))
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.leaf.cmp(&b.1.leaf)));
    Ok(ranked
        .into_iter()
        .filter_map(|(_, region)| project_to_leaf(x, region, schema, cfg, w))
        .collect())
}

/// Moves `target` away from `from` onto the next multiple of `step`.
pub fn round_away(from: f64, target: f64, step: f64) -> f64 {
    if target > from {
        (target / step).ceil() * step
    } else if target < from {
        (target / step).floor() * step
    } else {
        target
    }
}

/// The recourse with each changed stepped feature rounded away from the
/// source onto its step grid. `None` when the rounded profile is no longer
/// approved. The target leaf follows the rounded profile.
pub fn rounded_variant(
    r: &Recourse,
    cfg: &GenerationConfig,
    tree: &DecisionTree,
    schema: &FeatureSchema,
    w: &FeatureWeights,
) -> Option<Recourse> {
    let mut values = r.counterfactual.values();
    let source = r.source.values();
    for f in Feature::ALL {
        let Some(step) = cfg.rounding.step(f) else { continue };
        let i = f.index();
        if values[i] == source[i] {
            continue;
        }
        let (lo, hi) = schema.bounds(f);
        values[i] = round_away(source[i], values[i], step).clamp(lo, hi);
        if !schema.direction(f).allows(source[i], values[i]) {
            return None;
        }
    }
    let prediction = tree.predict_values(&values);
    if prediction.decision != Decision::Approved {
        return None;
    }
    let cf = ApplicantProfile::from_values(values).ok()?;
    Some(Recourse::new(r.source, cf, prediction.leaf, schema, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{credit_schema, Education, Employment};

    pub(crate) fn profile(income: f64, credit: i32, loan: f64) -> ApplicantProfile {
        ApplicantProfile {
            income,
            credit_score: credit,
            employment_type: Employment::Private,
            education_level: Education::Bachelor,
            loan_amount: loan,
        }
    }

    fn leaf(label: Decision) -> Node {
        Node::Leaf { label, samples: 1, approved: 0 }
    }

    /// income > 60_000 approves; otherwise loan > 20_000 approves.
    fn income_tree() -> DecisionTree {
        DecisionTree::from_nodes(
            vec![
                Node::Split { feature: Feature::Income, threshold: 60_000.0, left: 1, right: 2, samples: 2 },
                Node::Split { feature: Feature::LoanAmount, threshold: 20_000.0, left: 3, right: 4, samples: 1 },
                leaf(Decision::Approved),
                leaf(Decision::Rejected),
                leaf(Decision::Approved),
            ],
            credit_schema(),
        )
        .unwrap()
    }

    #[test]
    fn clamp_is_identity_inside_region() {
        let t = income_tree();
        let x = profile(70_000.0, 600, 10_000.0);
        let region = t.leaf_region(2).unwrap();
        let r = project_to_leaf(&x, region, credit_schema(), &GenerationConfig::default(), None).unwrap();
        assert_eq!(r.counterfactual, x);
        assert_eq!(r.cost.prox, 0.0);
    }

    #[test]
    fn strict_bound_gets_epsilon_offset() {
        let t = income_tree();
        let x = profile(50_000.0, 600, 10_000.0);
        let r = project_to_leaf(&x, t.leaf_region(2).unwrap(), credit_schema(), &GenerationConfig::default(), None)
            .unwrap();
        assert_eq!(r.counterfactual.income, 60_000.0 + 1e-6 * 490_000.0);
        assert_eq!(t.predict(&r.counterfactual).leaf, 2);
        assert_eq!(r.deltas[0], r.counterfactual.income - 50_000.0);
    }

    #[test]
    fn decrease_only_blocks_loan_increase() {
        let t = income_tree();
        let x = profile(50_000.0, 600, 10_000.0);
        assert!(project_to_leaf(&x, t.leaf_region(4).unwrap(), credit_schema(), &GenerationConfig::default(), None)
            .is_none());
        let top = generate_top_k(&t, &x, credit_schema(), &GenerationConfig::default(), None).unwrap();
        assert_eq!(top.recourses.len(), 1);
        assert!(top.exhausted);
    }

    #[test]
    fn integer_strict_bound_moves_to_next_integer() {
        let t = DecisionTree::from_nodes(
            vec![
                Node::Split { feature: Feature::CreditScore, threshold: 699.5, left: 1, right: 2, samples: 2 },
                leaf(Decision::Rejected),
                leaf(Decision::Approved),
            ],
            credit_schema(),
        )
        .unwrap();
        let x = profile(50_000.0, 640, 10_000.0);
        let top = generate_top_k(&t, &x, credit_schema(), &GenerationConfig::default(), None).unwrap();
        assert_eq!(top.recourses[0].counterfactual.credit_score, 700);
    }

    #[test]
    fn approved_profile_is_an_error() {
        let t = income_tree();
        let x = profile(70_000.0, 600, 10_000.0);
        assert!(matches!(
            generate_top_k(&t, &x, credit_schema(), &GenerationConfig::default(), None),
            Err(Error::NotRejected)
        ));
    }

    #[test]
    fn round_away_examples() {
        assert_eq!(round_away(5_000.0, 5_257.29, 500.0), 5_500.0);
        assert_eq!(round_away(5_000.0, 6_000.0, 500.0), 6_000.0);
        assert_eq!(round_away(20_000.0, 12_345.0, 500.0), 12_000.0);
        assert_eq!(round_away(600.0, 643.0, 10.0), 650.0);
    }

    #[test]
    fn rounded_variant_on_toy_tree() {
        let t = income_tree();
        let s = credit_schema();
        let x = profile(50_000.0, 600, 10_000.0);
        let top = generate_top_k(&t, &x, s, &GenerationConfig::default(), None).unwrap();
        let w = FeatureWeights::uniform();
        let v = rounded_variant(&top.recourses[0], &GenerationConfig::default(), &t, s, &w).unwrap();
        assert_eq!(v.counterfactual.income, 60_500.0);
        assert_eq!(t.predict(&v.counterfactual).decision, Decision::Approved);
        let again = rounded_variant(&v, &GenerationConfig::default(), &t, s, &w).unwrap();
        assert_eq!(again.counterfactual, v.counterfactual);
    }

    #[test]
    fn config_validation() {
        assert!(GenerationConfig { k: 0, ..Default::default() }.validate().is_err());
        assert!(GenerationConfig { epsilon_fraction: 0.0, ..Default::default() }.validate().is_err());
        assert!(GenerationConfig::default().validate().is_ok());
    }
}
