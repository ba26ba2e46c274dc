mod common;

use recourse_core::study::{Answer, ProbeChoice, ProbeStatus, ProbingSession, ScenarioKind, SimulatedUser};
use recourse_service::service::{Next, Service, ServiceError, SubmitRequest};
use recourse_service::session::{SessionConfig, SessionError, SessionPhase};

fn service() -> (tempfile::TempDir, Service) {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(common::context(), dir.path()).unwrap();
    (dir, svc)
}

fn answer(id: &str, answer: Answer) -> SubmitRequest {
    SubmitRequest { scenario_id: id.into(), answer, reason: None, threshold_exceeded: false }
}

fn next_scenario(svc: &Service, id: &str) -> recourse_service::service::ScenarioView {
    match svc.next(id).unwrap() {
        Next::Scenario(v) => v,
        other => panic!("expected a scenario, got {other:?}"),
    }
}

/// Answers Session 1 with A throughout.
fn finish_session1(svc: &Service, id: &str) {
    while svc.record(id).unwrap().phase == SessionPhase::Session1 {
        match svc.next(id).unwrap() {
            Next::Scenario(v) => {
                svc.submit(id, answer(&v.scenario.id, Answer::A)).unwrap();
            }
            Next::PhaseTransition { .. } => {}
            Next::Done => panic!("session ended during Session 1"),
        }
    }
}

#[test]
fn default_sessions_queue_25_scenarios_under_distinct_ids() {
    let (_dir, svc) = service();
    let a = svc.create(SessionConfig::default()).unwrap();
    let b = svc.create(SessionConfig::default()).unwrap();
    assert_ne!(a.id, b.id);
    assert_eq!((a.session1, a.phase), (25, SessionPhase::Session1));
    let r = svc.record(&a.id).unwrap();
    assert!(r.session1.iter().all(|s| s.kind == ScenarioKind::Tradeoff));
    assert!(r.config.seed.is_some());
    assert!(r.model.is_none() && r.weights.is_none());
}

#[test]
fn a_simulated_participant_completes_both_sessions() {
    let (_dir, svc) = service();
    let id = svc.create(common::config(3)).unwrap().id;
    let mut user = SimulatedUser::random(3, 0.0);
    let sent = common::drive(&svc, &id, &mut user, |_| {});
    let r = svc.record(&id).unwrap();
    assert_eq!(r.phase, SessionPhase::Complete);
    assert_eq!(r.responses.len(), sent);
    assert_eq!(r.session1_answered(), 25);
    assert_eq!(r.session2.len(), 35);
    let w = r.weights.unwrap();
    for s in &r.session2 {
        assert_eq!(s.meta.construction_weights, w);
        if s.kind == ScenarioKind::Tradeoff {
            assert!(s.diverges_under(&svc.context().schema, &w));
        }
    }
    assert!(r.responses.iter().all(|e| e.reason.as_deref() == Some(&format!("reason for {}", e.scenario_id)[..])));
    let report = svc.report(&id).unwrap();
    assert_eq!(report.session2.answered, 35);
    assert_eq!(report.session2.evaluation.as_ref().unwrap().total, 35);
    assert_eq!(report.session1.evaluation.as_ref().unwrap().total, 25);
    assert_eq!(report.weights, Some(w));
    assert!(!report.intervals.is_empty());
    assert_eq!(svc.next(&id).unwrap(), Next::Done);
}

#[test]
fn duplicate_unknown_and_undelivered_responses_are_rejected() {
    let (_dir, svc) = service();
    let id = svc.create(common::config(4)).unwrap().id;
    let first = next_scenario(&svc, &id).scenario;
    let ack = svc.submit(&id, answer(&first.id, Answer::B)).unwrap();
    assert_eq!(ack.responses, 1);

    let dup = svc.submit(&id, answer(&first.id, Answer::A));
    assert!(matches!(dup, Err(ServiceError::Session(SessionError::Duplicate(_)))));
    assert_eq!(svc.record(&id).unwrap().responses.len(), 1);

    let unknown = svc.submit(&id, answer("s1-999", Answer::A));
    assert!(matches!(unknown, Err(ServiceError::Session(SessionError::UnknownScenario(_)))));
    let later = svc.record(&id).unwrap().session1[3].id.clone();
    let undelivered = svc.submit(&id, answer(&later, Answer::A));
    assert!(matches!(undelivered, Err(ServiceError::Session(SessionError::NotDelivered(_)))));

    let second = next_scenario(&svc, &id).scenario;
    let both = svc.submit(&id, answer(&second.id, Answer::RejectBoth));
    assert!(matches!(both, Err(ServiceError::Session(SessionError::Invalid(_)))));
    assert_eq!(svc.record(&id).unwrap().responses.len(), 1);
    assert!(matches!(svc.next("nope"), Err(ServiceError::UnknownSession(_))));
}

#[test]
fn an_unanswered_scenario_is_delivered_again() {
    let (_dir, svc) = service();
    let id = svc.create(common::config(5)).unwrap().id;
    let a = next_scenario(&svc, &id);
    let b = next_scenario(&svc, &id);
    assert_eq!(a, b);
    assert_eq!((a.position, a.total), (1, 25));
    assert_eq!(svc.record(&id).unwrap().delivered.len(), 1);
    svc.submit(&id, answer(&a.scenario.id, Answer::A)).unwrap();
    assert_eq!(next_scenario(&svc, &id).position, 2);
}

#[test]
fn session2_opens_with_scenarios_built_from_the_fit() {
    let (_dir, svc) = service();
    let id = svc.create(common::config(6)).unwrap().id;
    let mut user = SimulatedUser::random(6, 0.0);
    let schema = svc.context().schema.clone();
    let w = loop {
        match svc.next(&id).unwrap() {
            Next::Scenario(v) => {
                let c = user.compare(&v.scenario, &schema);
                let req = SubmitRequest { threshold_exceeded: c.threshold_exceeded, ..answer(&v.scenario.id, c.choice.into()) };
                svc.submit(&id, req).unwrap();
            }
            Next::PhaseTransition { from, to, weights } => {
                assert_eq!((from, to), (SessionPhase::Session1, SessionPhase::Session2));
                break weights;
            }
            Next::Done => unreachable!(),
        }
    };
    let fitted = svc.weights(&id).unwrap();
    assert_eq!(fitted.weights, w);
    assert_eq!(fitted.model.comparisons, svc.record(&id).unwrap().comparisons().iter().filter(|c| !c.threshold_exceeded).count());
    let first = next_scenario(&svc, &id);
    assert_eq!(first.phase, SessionPhase::Session2);
    assert_eq!(first.scenario.kind, ScenarioKind::Tradeoff);
    assert_eq!(first.scenario.meta.construction_weights, w);
    assert!(first.scenario.diverges_under(&schema, &w));
}

#[test]
fn probing_reject_both_returns_the_terminal_intervals() {
    let (_dir, svc) = service();
    let id = svc.create(common::config(8)).unwrap().id;
    finish_session1(&svc, &id);
    let view = loop {
        let v = next_scenario(&svc, &id);
        if v.scenario.kind == ScenarioKind::Probing {
            break v;
        }
        svc.submit(&id, answer(&v.scenario.id, Answer::A)).unwrap();
    };
    assert_eq!(view.offer.as_ref().map(|o| (&o.a, &o.b)), Some((&view.scenario.a, &view.scenario.b)));
    let ctx = common::context();
    let r = svc.record(&id).unwrap();
    let choice = ProbeChoice { pick: Answer::RejectBoth, threshold_exceeded: true };
    let mut oracle = ProbingSession::new(&view.scenario, r.config.steps).unwrap();
    let ProbeStatus::Terminated(expected) = oracle.step(choice, &ctx.tree, &ctx.schema, &r.weights.unwrap()).unwrap() else {
        panic!("reject-both terminates");
    };
    let before = r.responses.len();
    let ack = svc
        .submit(&id, SubmitRequest { threshold_exceeded: true, ..answer(&view.scenario.id, Answer::RejectBoth) })
        .unwrap();
    assert_eq!(ack.responses, before + 1);
    assert_eq!(ack.offer, None);
    assert_eq!(ack.intervals, Some(expected));
    let again = svc.submit(&id, answer(&view.scenario.id, Answer::A));
    assert!(matches!(again, Err(ServiceError::Session(SessionError::Duplicate(_)))));
}

#[test]
fn probing_acks_carry_the_escalated_pair() {
    let (_dir, svc) = service();
    let id = svc.create(common::config(9)).unwrap().id;
    finish_session1(&svc, &id);
    let view = loop {
        let v = next_scenario(&svc, &id);
        if v.scenario.kind == ScenarioKind::Probing {
            break v;
        }
        svc.submit(&id, answer(&v.scenario.id, Answer::B)).unwrap();
    };
    let ack = svc.submit(&id, answer(&view.scenario.id, Answer::A)).unwrap();
    let offer = ack.offer.expect("accepting A escalates it");
    let f = view.scenario.meta.probed.unwrap()[0];
    assert!(offer.a.counterfactual.value(f) != view.scenario.a.counterfactual.value(f));
    assert_eq!(offer.b, view.scenario.b);
    // the pending view shows the live offer
    assert_eq!(next_scenario(&svc, &id).offer, Some(offer));
}

#[test]
fn an_early_fit_needs_the_configured_minimum() {
    let (_dir, svc) = service();
    let id = svc.create(SessionConfig { min_session1: Some(5), ..common::config(10) }).unwrap().id;
    assert!(matches!(svc.weights(&id), Err(ServiceError::Session(SessionError::NotFitted))));
    for _ in 0..3 {
        let v = next_scenario(&svc, &id);
        svc.submit(&id, answer(&v.scenario.id, Answer::A)).unwrap();
    }
    assert!(matches!(svc.fit(&id), Err(ServiceError::Session(SessionError::Invalid(_)))));
    assert!(svc.record(&id).unwrap().model.is_none());
    for _ in 0..2 {
        let v = next_scenario(&svc, &id);
        svc.submit(&id, answer(&v.scenario.id, Answer::B)).unwrap();
    }
    let pending = next_scenario(&svc, &id).scenario.id;
    let fitted = svc.fit(&id).unwrap();
    assert_eq!(fitted.model.comparisons, 5);
    assert_eq!(svc.fit(&id).unwrap(), fitted);
    let r = svc.record(&id).unwrap();
    assert_eq!(r.phase, SessionPhase::Session2);
    let late = svc.submit(&id, answer(&pending, Answer::A));
    assert!(matches!(late, Err(ServiceError::Session(SessionError::WrongPhase { .. }))));
    assert_eq!(next_scenario(&svc, &id).phase, SessionPhase::Session2);
}
