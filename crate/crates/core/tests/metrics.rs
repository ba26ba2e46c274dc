use proptest::prelude::*;
use recourse_core::metrics::{cost_report, prox, sparsity, weighted_prox, FeatureWeights};
use recourse_core::schema::{ApplicantProfile, Education, Employment, FeatureSchema};

fn arb_profile() -> impl Strategy<Value = ApplicantProfile> {
    (10_000.0..=500_000.0f64, 300..=850i32, 0..4u8, 0..5u8, 1_000.0..=50_000.0f64).prop_map(|(i, c, e, d, l)| {
        ApplicantProfile {
            income: i,
            credit_score: c,
            employment_type: Employment::ALL[e as usize],
            education_level: Education::ALL[d as usize],
            loan_amount: l,
        }
    })
}

fn arb_weights() -> impl Strategy<Value = FeatureWeights> {
    prop::array::uniform5(0.05..10.0f64).prop_map(|w| FeatureWeights::new(w).unwrap())
}

fn argmin(x: &ApplicantProfile, cands: &[ApplicantProfile], s: &FeatureSchema, w: &FeatureWeights) -> usize {
    (0..cands.len())
        .min_by(|&i, &j| weighted_prox(x, &cands[i], s, w).total_cmp(&weighted_prox(x, &cands[j], s, w)).then(i.cmp(&j)))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn l1_laws(x in arb_profile(), y in arb_profile(), z in arb_profile(), w in arb_weights()) {
        let s = FeatureSchema::credit();
        for d in [
            |a: &ApplicantProfile, b: &ApplicantProfile, s: &FeatureSchema, _: &FeatureWeights| prox(a, b, s),
            |a: &ApplicantProfile, b: &ApplicantProfile, s: &FeatureSchema, w: &FeatureWeights| weighted_prox(a, b, s, w),
        ] {
            prop_assert!(d(&x, &y, &s, &w) >= 0.0);
            prop_assert_eq!(d(&x, &x, &s, &w), 0.0);
            prop_assert!((d(&x, &y, &s, &w) - d(&y, &x, &s, &w)).abs() <= 1e-12);
            prop_assert!(d(&x, &z, &s, &w) <= d(&x, &y, &s, &w) + d(&y, &z, &s, &w) + 1e-12);
            prop_assert_eq!(d(&x, &y, &s, &w) == 0.0, x == y);
        }
    }

    #[test]
    fn uniform_weights_reduce_to_prox(x in arb_profile(), y in arb_profile()) {
        let s = FeatureSchema::credit();
        prop_assert!((weighted_prox(&x, &y, &s, &FeatureWeights::uniform()) - prox(&x, &y, &s)).abs() <= 1e-12);
    }

    #[test]
    fn weighted_prox_scales_linearly(x in arb_profile(), y in arb_profile(), w in arb_weights(), c in 0.01..100.0f64) {
        let s = FeatureSchema::credit();
        let (a, b) = (weighted_prox(&x, &y, &s, &w.scaled(c)), c * weighted_prox(&x, &y, &s, &w));
        prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
    }

    #[test]
    fn argmin_is_scale_invariant(
        x in arb_profile(),
        cands in prop::collection::vec(arb_profile(), 2..12),
        w in arb_weights(),
        c in 0.01..100.0f64,
    ) {
        let s = FeatureSchema::credit();
        let i = argmin(&x, &cands, &s, &w);
        let j = argmin(&x, &cands, &s, &w.scaled(c));
        // a tie can only move between exactly equal costs
        let (ci, cj) = (weighted_prox(&x, &cands[i], &s, &w), weighted_prox(&x, &cands[j], &s, &w));
        prop_assert!(i == j || (ci - cj).abs() <= 1e-12 * ci.max(1.0));
    }

    #[test]
    fn sparsity_counts_changes(x in arb_profile(), y in arb_profile()) {
        let s = FeatureSchema::credit();
        let r = cost_report(&x, &y, &s, &FeatureWeights::uniform());
        prop_assert_eq!(r.sparsity, sparsity(&x, &y));
        prop_assert_eq!(r.sparsity, x.changed_features(&y).len());
        prop_assert!(r.sparsity <= 5);
        prop_assert_eq!(r.deltas.iter().filter(|d| **d != 0.0).count(), r.sparsity);
    }
}

#[test]
fn weights_reject_nonpositive_values() {
    assert!(FeatureWeights::new([1.0, 0.0, 1.0, 1.0, 1.0]).is_err());
    assert!(FeatureWeights::new([1.0, -1.0, 1.0, 1.0, 1.0]).is_err());
    assert!(FeatureWeights::new([1.0, f64::NAN, 1.0, 1.0, 1.0]).is_err());
    let w = FeatureWeights::new([1.0, 2.0, 3.0, 4.0, 5.0]).unwrap().normalized();
    assert!((w.sum() - 5.0).abs() < 1e-12);
}

#[test]
fn weights_serialize_by_feature_name() {
    let w = FeatureWeights::new([1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let v = serde_json::to_value(w).unwrap();
    assert_eq!(v["credit_score"], 2.0);
    assert_eq!(v["loan_amount"], 5.0);
    let back: FeatureWeights = serde_json::from_value(v).unwrap();
    assert_eq!(back, w);
    assert!(serde_json::from_str::<FeatureWeights>(r#"{"income": 1.0}"#).is_err());
}
