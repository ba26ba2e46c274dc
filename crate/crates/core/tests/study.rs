mod common;

use std::collections::HashSet;
use std::sync::OnceLock;

use proptest::prelude::*;
use recourse_core::awp::{Cap, Thresholds};
use recourse_core::metrics::{weighted_prox, FeatureWeights};
use recourse_core::schema::{Direction, Feature};
use recourse_core::study::*;

fn ctx() -> &'static StudyContext {
    static C: OnceLock<StudyContext> = OnceLock::new();
    C.get_or_init(|| {
        let f = common::fixture();
        StudyContext::new(f.tree.clone(), &f.data).unwrap()
    })
}

/// Runs a probing scenario to termination, checking each offer as it goes.
fn run_probe(s: &Scenario, user: &mut SimulatedUser, steps: EscalationSteps, w: &FeatureWeights) -> Vec<ThresholdInterval> {
    let ctx = ctx();
    let schema = &ctx.schema;
    let probed = s.meta.probed.unwrap();
    let bound = |f: Feature| (schema.range(f) / steps.step(f).unwrap()).ceil() as usize;
    let limit = bound(probed[0]) + bound(probed[1]) + 1;
    let mut session = ProbingSession::new(s, steps).unwrap();
    let mut prev: Option<ProbeOffer> = None;
    loop {
        let offer = session.current_offer().unwrap().clone();
        assert!(offer.step <= limit, "{} offers exceed {limit}", offer.step);
        for r in [&offer.a, &offer.b] {
            assert_eq!(ctx.tree.predict(&r.counterfactual).decision, recourse_core::synth::Decision::Approved);
        }
        if let Some(p) = &prev {
            let (side, f) = match offer.phase {
                Phase::EscalateA => ((&p.a, &offer.a), probed[0]),
                _ => ((&p.b, &offer.b), probed[1]),
            };
            if p.phase == offer.phase {
                let (before, after) = (side.0.counterfactual.value(f), side.1.counterfactual.value(f));
                let grew = (after - s.source.value(f)).abs() > (before - s.source.value(f)).abs();
                assert!(grew, "{f} did not escalate: {before} -> {after}");
                assert!(schema.direction(f).allows(s.source.value(f), after));
            }
        }
        let choice = user.probe_choice(&offer, schema);
        let status = session.step(choice, &ctx.tree, schema, w).unwrap();
        prev = Some(offer);
        if let ProbeStatus::Terminated(ivs) = status {
            assert!(session.step(choice, &ctx.tree, schema, w).is_err());
            return ivs;
        }
    }
}

fn true_cap(user: &SimulatedUser, f: Feature) -> f64 {
    match user.thresholds.get(f) {
        Cap::AtMost(v) | Cap::AtLeast(v) => *v,
        c => panic!("{f} has cap {c:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn probing_intervals_contain_the_true_threshold(
        seed in 0u64..10_000,
        income_step in 100.0..5_000.0f64,
        credit_step in 1.0..40.0f64,
        loan_step in 100.0..3_000.0f64,
    ) {
        let ctx = ctx();
        let steps = EscalationSteps { income: income_step, credit_score: credit_step.round(), loan_amount: loan_step, education_level: 1.0 };
        let mut user = SimulatedUser::random(seed, 0.0);
        let w = global_weights();
        let batch = build_probing_scenarios(ctx, &w, 6, seed, 0.0, "").unwrap();
        prop_assert!(!batch.partial);
        for s in &batch.scenarios {
            for iv in run_probe(s, &mut user, steps, &w) {
                prop_assert!(iv.is_ordered(), "{iv:?}");
                prop_assert!(iv.contains(true_cap(&user, iv.feature)), "{iv:?} vs {}", true_cap(&user, iv.feature));
            }
        }
    }
}

#[test]
fn inferred_caps_admit_only_acceptable_targets() {
    let ctx = ctx();
    for seed in 0..10 {
        let mut user = SimulatedUser::random(50 + seed, 0.0);
        let w = global_weights();
        let batch = build_probing_scenarios(ctx, &w, 10, seed, 0.0, "").unwrap();
        let ivs: Vec<_> = batch.scenarios.iter().flat_map(|s| run_probe(s, &mut user, EscalationSteps::default(), &w)).collect();
        let (merged, alpha_hat) = infer_thresholds(&ivs, &ctx.schema);
        let features: HashSet<Feature> = merged.iter().map(|m| m.feature).collect();
        assert_eq!(features.len(), merged.len());
        for m in &merged {
            assert!(m.contains(true_cap(&user, m.feature)));
        }
        assert_eq!(alpha_hat.get(Feature::EmploymentType), &Cap::Unbounded);
        for f in PROBEABLE {
            let (hat, truth) = (alpha_hat.get(f), true_cap(&user, f));
            match (ctx.schema.direction(f), hat) {
                (Direction::IncreaseOnly, Cap::AtMost(v)) => assert!(*v <= truth),
                (Direction::DecreaseOnly, Cap::AtLeast(v)) => assert!(*v >= truth),
                other => panic!("{f}: {other:?}"),
            }
        }
    }
}

#[test]
fn features_never_probed_admit_no_change() {
    let schema = &ctx().schema;
    let iv = ThresholdInterval {
        feature: Feature::Income,
        direction: Direction::IncreaseOnly,
        last_accepted: Some(60_000.0),
        first_rejected: Some(60_500.0),
        reached_bound: false,
    };
    let (_, alpha) = infer_thresholds(&[iv], schema);
    assert_eq!(alpha.get(Feature::Income), &Cap::AtMost(60_000.0));
    assert_eq!(alpha.get(Feature::CreditScore), &Cap::AtMost(300.0));
    assert_eq!(alpha.get(Feature::LoanAmount), &Cap::AtLeast(50_000.0));
    let (_, none) = infer_thresholds(&[], schema);
    assert_eq!(none.get(Feature::EducationLevel), &Cap::AtMost(0.0));
}

#[test]
fn paper_style_income_interval() {
    let iv = ThresholdInterval {
        feature: Feature::Income,
        direction: Direction::IncreaseOnly,
        last_accepted: Some(8_000.0),
        first_rejected: Some(8_500.0),
        reached_bound: false,
    };
    assert!(iv.contains(8_000.0) && iv.contains(8_200.0));
    assert!(!iv.contains(8_500.0) && !iv.contains(7_999.0));
    let loan = ThresholdInterval { feature: Feature::LoanAmount, direction: Direction::DecreaseOnly, last_accepted: Some(9_000.0), first_rejected: Some(8_500.0), reached_bound: false };
    assert!(loan.contains(9_000.0) && loan.contains(8_600.0) && !loan.contains(8_500.0) && loan.is_ordered());
}

#[test]
fn tradeoff_pairs_disagree_on_the_two_costs() {
    let ctx = ctx();
    let w = global_weights();
    let opts = TradeoffOptions { selection: PairSelection::Random, min_margin: 0.1 };
    let batch = build_tradeoff_scenarios(ctx, &w, 20, 3, &opts, "p-").unwrap();
    assert_eq!(batch.scenarios.len(), 20);
    let mut sources = HashSet::new();
    for s in &batch.scenarios {
        assert_eq!(s.kind, ScenarioKind::Tradeoff);
        assert!(s.diverges_under(&ctx.schema, &w));
        assert_ne!(s.meta.prox_winner, s.meta.weighted_winner);
        let (wa, wb) = (s.a.cost.weighted_prox, s.b.cost.weighted_prox);
        assert!((wa - wb).abs() / (wa + wb) >= 0.1);
        assert!(sources.insert(format!("{:?}", s.source)));
    }
    assert!(build_tradeoff_scenarios(ctx, &FeatureWeights::uniform(), 5, 3, &opts, "").unwrap().scenarios.is_empty());
    assert_eq!(build_tradeoff_scenarios(ctx, &w, 20, 3, &opts, "p-").unwrap(), batch);
}

#[test]
fn probing_and_rounding_pairs_have_their_shape() {
    let ctx = ctx();
    let w = global_weights();
    let probing = build_probing_scenarios(ctx, &w, 10, 5, 0.2, "").unwrap();
    assert_eq!(probing.scenarios.len(), 10);
    let mut covered = HashSet::new();
    for s in &probing.scenarios {
        let [fa, fb] = s.meta.probed.unwrap();
        assert_eq!(s.a.changed_features(), vec![fa]);
        assert_eq!(s.b.changed_features(), vec![fb]);
        covered.extend([fa, fb]);
        let (wa, wb) = (s.a.cost.weighted_prox, s.b.cost.weighted_prox);
        assert!((wa - wb).abs() / (wa + wb) >= 0.2);
    }
    assert_eq!(covered.len(), PROBEABLE.len());

    let rounding = build_rounding_scenarios(ctx, &w, 10, 5, "").unwrap();
    assert_eq!(rounding.scenarios.len(), 10);
    for s in &rounding.scenarios {
        assert_ne!(s.a.counterfactual, s.b.counterfactual);
        assert_eq!(s.meta.weighted_winner, Some(recourse_core::preference::Choice::A));
        for f in Feature::ALL {
            let x = s.source.value(f);
            assert!((s.b.counterfactual.value(f) - x).abs() >= (s.a.counterfactual.value(f) - x).abs());
        }
    }
}

#[test]
fn session_batches_fill_their_composition() {
    let ctx = ctx();
    for design in [Session1Design::GlobalTradeoff, Session1Design::RandomizedTradeoff, Session1Design::Mixed] {
        let b = build_session1(ctx, design, 25, 1).unwrap();
        assert_eq!(b.scenarios.len(), 25, "{design:?}");
        let ids: HashSet<_> = b.scenarios.iter().map(|s| s.id.clone()).collect();
        assert_eq!(ids.len(), 25);
        assert_eq!(b.scenarios.iter().any(|s| s.kind == ScenarioKind::Comparison), design == Session1Design::Mixed);
    }
    let w_hat = FeatureWeights::new([2.0, 0.5, 1.0, 1.0, 0.5]).unwrap().normalized();
    let s2 = build_session2(ctx, &w_hat, &Session2Options::default(), 2).unwrap();
    assert!(!s2.partial);
    let count = |k| s2.scenarios.iter().filter(|s| s.kind == k).count();
    assert_eq!((count(ScenarioKind::Tradeoff), count(ScenarioKind::Probing), count(ScenarioKind::Rounding)), (15, 10, 10));
}

#[test]
fn evaluation_bins_partition_the_scenarios() {
    let ctx = ctx();
    let mut user = SimulatedUser::random(4, 0.5);
    let w = global_weights();
    let s2 = build_session2(ctx, &w, &Session2Options::default(), 9).unwrap();
    let responses: Vec<ScenarioResponse> = s2
        .scenarios
        .iter()
        .map(|s| ScenarioResponse { scenario_id: s.id.clone(), answer: user.scenario_answer(s, &ctx.schema), reason: None })
        .collect();
    let alpha = Thresholds::unbounded();
    let report = evaluate_session(&s2.scenarios, &responses, &w, &alpha, &ctx.schema).unwrap();
    assert_eq!(report.total, s2.scenarios.len());
    assert_eq!(report.bins.total(), report.total);
    let by_kind: usize = report.by_kind.values().map(|b| b.total()).sum();
    assert_eq!(by_kind, report.total);
    assert!(report.awp_correct <= report.bins.both_acceptable);

    assert!(evaluate_session(&s2.scenarios, &responses[1..], &w, &alpha, &ctx.schema).is_err());
    let rejected: Vec<ScenarioResponse> =
        responses.iter().map(|r| ScenarioResponse { answer: Answer::RejectBoth, ..r.clone() }).collect();
    let empty = evaluate_session(&s2.scenarios, &rejected, &w, &alpha, &ctx.schema).unwrap();
    assert_eq!(empty.awp_accuracy, None);
    assert_eq!(empty.bins.none_acceptable, empty.total);
}

#[test]
fn scenarios_roundtrip_through_jsonl() {
    let ctx = ctx();
    let batch = build_session1(ctx, Session1Design::Mixed, 6, 8).unwrap();
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &batch.scenarios).unwrap();
    assert_eq!(buf.iter().filter(|b| **b == b'\n').count(), 6);
    buf.extend_from_slice(b"\n  \n");
    let back: Vec<Scenario> = read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back, batch.scenarios);
}

#[test]
fn noiseless_users_choose_the_cheaper_acceptable_side() {
    let ctx = ctx();
    let w = global_weights();
    let batch = build_tradeoff_scenarios(ctx, &w, 30, 12, &TradeoffOptions::default(), "").unwrap();
    let mut user = SimulatedUser::unconstrained(3, 0.0);
    for s in &batch.scenarios {
        let wa = weighted_prox(&s.source, &s.a.counterfactual, &ctx.schema, &user.weights);
        let wb = weighted_prox(&s.source, &s.b.counterfactual, &ctx.schema, &user.weights);
        let expected = if wa <= wb { Answer::A } else { Answer::B };
        assert_eq!(user.scenario_answer(s, &ctx.schema), expected);
        assert!(!user.compare(s, &ctx.schema).threshold_exceeded);
    }
}

#[test]
fn random_weights_span_at_least_double() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let w = random_weights(&mut rng).values();
        let (lo, hi) = w.iter().fold((f64::MAX, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
        assert!(hi / lo >= 2.0 - 1e-9 && hi / lo <= 4.0 + 1e-9);
        assert!((w.iter().sum::<f64>() - 5.0).abs() < 1e-9);
    }
}

#[test]
fn pipeline_is_deterministic() {
    let ctx = ctx();
    let cfg = PipelineConfig { seed: 3, session1: 40, ..Default::default() };
    let a = run_pipeline(ctx, &mut SimulatedUser::random(8, 1.0), &cfg).unwrap();
    let b = run_pipeline(ctx, &mut SimulatedUser::random(8, 1.0), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.session1.len(), 40);
    assert_eq!(a.responses.len(), a.session2.len());
    assert_eq!(a.model.comparisons, a.comparisons.iter().filter(|c| !c.threshold_exceeded).count());
}
