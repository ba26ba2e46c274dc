#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use recourse_core::study::{ScenarioKind, SimulatedUser, StudyContext};
use recourse_core::synth::{synthesize, LabelingConfig};
use recourse_core::tree::{train, TreeParams};
use recourse_service::service::{Next, Service, SubmitRequest};
use recourse_service::session::SessionConfig;

pub fn context() -> Arc<StudyContext> {
    static CTX: OnceLock<Arc<StudyContext>> = OnceLock::new();
    CTX.get_or_init(|| {
        let data = synthesize(20_000, &LabelingConfig { seed: 7, ..Default::default() }).unwrap();
        let tree = train(&data, 7, &TreeParams::default()).unwrap().tree;
        Arc::new(StudyContext::new(tree, &data).unwrap())
    })
    .clone()
}

pub fn config(seed: u64) -> SessionConfig {
    SessionConfig { participant: format!("p{seed}"), seed: Some(seed), ..Default::default() }
}

/// Answers whatever `next` returns, as a simulated participant would, and
/// calls `after` after every acknowledged write. Returns the number of
/// responses sent.
pub fn drive(svc: &Service, id: &str, user: &mut SimulatedUser, mut after: impl FnMut(&Service)) -> usize {
    let schema = svc.context().schema.clone();
    let mut sent = 0;
    loop {
        let next = svc.next(id).unwrap();
        after(svc);
        let view = match next {
            Next::Done => return sent,
            Next::PhaseTransition { .. } => continue,
            Next::Scenario(v) => v,
        };
        let s = &view.scenario;
        let req = |answer, threshold_exceeded| SubmitRequest {
            scenario_id: s.id.clone(),
            answer,
            reason: Some(format!("reason for {}", s.id)),
            threshold_exceeded,
        };
        if s.kind == ScenarioKind::Probing {
            let mut offer = view.offer.clone().expect("probing view carries an offer");
            loop {
                let c = user.probe_choice(&offer, &schema);
                let ack = svc.submit(id, req(c.pick, c.threshold_exceeded)).unwrap();
                sent += 1;
                after(svc);
                match ack.offer {
                    Some(o) => offer = o,
                    None => break,
                }
            }
        } else if view.phase == recourse_service::SessionPhase::Session1 {
            let c = user.compare(s, &schema);
            svc.submit(id, req(c.choice.into(), c.threshold_exceeded)).unwrap();
            sent += 1;
            after(svc);
        } else {
            let answer = user.scenario_answer(s, &schema);
            svc.submit(id, req(answer, false)).unwrap();
            sent += 1;
            after(svc);
        }
    }
}
