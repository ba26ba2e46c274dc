#![allow(dead_code)]

use std::sync::OnceLock;

use rand::Rng;
use recourse_core::schema::{ApplicantProfile, Education, Employment, Feature, FeatureSchema};
use recourse_core::synth::{self, Decision, LabeledProfile, LabelingConfig};
use recourse_core::tree::{self, DecisionTree, Node, TreeParams};

pub const DATA_SEED: u64 = 7;
pub const SPLIT_SEED: u64 = 7;

pub struct Fixture {
    pub data: Vec<LabeledProfile>,
    pub tree: DecisionTree,
    pub test_accuracy: f64,
    /// Held-out profiles the tree rejects.
    pub rejected_test: Vec<ApplicantProfile>,
}

/// The 100k-row dataset and its tree, built once per test binary.
pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let data = synth::synthesize(100_000, &LabelingConfig { seed: DATA_SEED, ..Default::default() }).unwrap();
        let out = tree::train(&data, SPLIT_SEED, &TreeParams::default()).unwrap();
        let (_, test) = tree::train_test_split(data.len(), SPLIT_SEED);
        let rejected_test = test
            .into_iter()
            .map(|i| data[i].profile)
            .filter(|p| out.tree.predict(p).decision == Decision::Rejected)
            .collect();
        Fixture { data, tree: out.tree, test_accuracy: out.test_accuracy, rejected_test }
    })
}

pub fn schema() -> FeatureSchema {
    FeatureSchema::credit()
}

/// A tree of at most `max_leaves` leaves splitting only income and loan
/// amount, every leaf at least `min_width` of each range wide, with both
/// labels present.
pub fn small_tree<R: Rng>(rng: &mut R, max_leaves: usize, min_width: f64) -> DecisionTree {
    let schema = schema();
    let features = [Feature::Income, Feature::LoanAmount];
    loop {
        let root = features.map(|f| schema.bounds(f));
        let mut nodes = vec![Node::Leaf { label: Decision::Rejected, samples: 0, approved: 0 }];
        let mut boxes = vec![Some(root)];
        let target = rng.random_range(2..=max_leaves);
        let mut leaves = 1;
        let mut attempts = 0;
        while leaves < target && attempts < 100 {
            attempts += 1;
            let leaf_ids: Vec<usize> = (0..nodes.len()).filter(|&i| matches!(nodes[i], Node::Leaf { .. })).collect();
            let id = leaf_ids[rng.random_range(0..leaf_ids.len())];
            let k = rng.random_range(0..2);
            let b = boxes[id].unwrap();
            let (lo, hi) = b[k];
            let w = min_width * schema.range(features[k]);
            if hi - lo < 2.0 * w {
                continue;
            }
            let t = rng.random_range(lo + w..hi - w);
            let (l, r) = (nodes.len(), nodes.len() + 1);
            let (mut bl, mut br) = (b, b);
            bl[k].1 = t;
            br[k].0 = t;
            nodes[id] = Node::Split { feature: features[k], threshold: t, left: l, right: r, samples: 0 };
            boxes[id] = None;
            for bx in [bl, br] {
                nodes.push(Node::Leaf { label: Decision::Rejected, samples: 0, approved: 0 });
                boxes.push(Some(bx));
            }
            leaves += 1;
        }
        let mut any = [false; 2];
        for node in nodes.iter_mut() {
            if let Node::Leaf { label, .. } = node {
                *label = if rng.random_bool(0.5) { Decision::Approved } else { Decision::Rejected };
                any[label.as_bit() as usize] = true;
            }
        }
        if any == [true, true] {
            return DecisionTree::from_nodes(nodes, &schema).unwrap();
        }
    }
}

/// A profile with fixed categorical and credit values.
pub fn profile(income: f64, loan_amount: f64) -> ApplicantProfile {
    ApplicantProfile {
        income,
        credit_score: 600,
        employment_type: Employment::Private,
        education_level: Education::Bachelor,
        loan_amount,
    }
}

/// A point strictly inside a random rejecting leaf of a [`small_tree`].
pub fn rejected_point<R: Rng>(rng: &mut R, tree: &DecisionTree) -> ApplicantProfile {
    let leaves = tree.rejecting_leaves();
    let leaf = leaves[rng.random_range(0..leaves.len())];
    let (inc, loan) = (leaf.intervals[Feature::Income.index()], leaf.intervals[Feature::LoanAmount.index()]);
    let x = profile(rng.random_range(inc.lo..inc.hi), rng.random_range(loan.lo..loan.hi));
    assert_eq!(tree.predict(&x).leaf, leaf.leaf);
    x
}

/// Smallest raw proximity over approved grid points reachable from `x`: income
/// stepped up and loan stepped down from x by `Range / divisions`.
pub fn grid_min_prox(tree: &DecisionTree, x: &ApplicantProfile, divisions: usize) -> Option<f64> {
    let schema = schema();
    let (inc_hi, loan_lo) = (schema.bounds(Feature::Income).1, schema.bounds(Feature::LoanAmount).0);
    let (ri, rl) = (schema.range(Feature::Income), schema.range(Feature::LoanAmount));
    let (si, sl) = (ri / divisions as f64, rl / divisions as f64);
    let mut values = x.values();
    let mut best: Option<f64> = None;
    for a in 0..=divisions {
        let income = x.income + a as f64 * si;
        if income > inc_hi {
            break;
        }
        let di = a as f64 * si / ri;
        if best.is_some_and(|b| di >= b) {
            break;
        }
        for b in 0..=divisions {
            let loan = x.loan_amount - b as f64 * sl;
            if loan < loan_lo {
                break;
            }
            let cost = di + b as f64 * sl / rl;
            if best.is_some_and(|v| cost >= v) {
                break;
            }
            values[Feature::Income.index()] = income;
            values[Feature::LoanAmount.index()] = loan;
            if tree.predict_values(&values).decision == Decision::Approved {
                best = Some(cost);
                break;
            }
        }
    }
    best
}
