//! Session records and the events that change them.
//!
//! A record is a pure function of its event sequence: [`SessionRecord::apply`]
//! validates an event and folds it in, and replaying the log through it
//! rebuilds the record. Events carry derived data (built scenarios, the
//! fitted model) so replay never re-draws random numbers; probing steps are
//! recomputed, which is deterministic given the tree.

use std::collections::BTreeMap;

use recourse_core::metrics::FeatureWeights;
use recourse_core::preference::{BtModel, FitOptions, PairwiseComparison};
use recourse_core::study::{
    infer_thresholds, Answer, EscalationSteps, InferredInterval, ProbeChoice, ProbeOffer, ProbeStatus, ProbingSession,
    Scenario, ScenarioKind, ScenarioResponse, Session1Design, Session2Options, StudyContext, ThresholdInterval,
};
use recourse_core::awp::Thresholds;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub participant: String,
    pub session1: usize,
    pub session1_design: Session1Design,
    /// Session-1 answers needed before a fit; all of them when unset.
    pub min_session1: Option<usize>,
    pub session2: Session2Options,
    pub fit: FitOptions,
    pub steps: EscalationSteps,
    /// Drawn at creation when unset.
    pub seed: Option<u64>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            participant: String::new(),
            session1: 25,
            session1_design: Session1Design::GlobalTradeoff,
            min_session1: None,
            session2: Session2Options { min_margin: 0.2, ..Session2Options::default() },
            fit: FitOptions::default(),
            steps: EscalationSteps::default(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    Session1,
    Session2,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseEntry {
    pub scenario_id: String,
    pub phase: SessionPhase,
    pub answer: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default)]
    pub threshold_exceeded: bool,
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created { id: String, config: SessionConfig, session1: Vec<Scenario>, at: u64 },
    Delivered { scenario_id: String, at: u64 },
    Responded(ResponseEntry),
    Fitted { model: BtModel, weights: FeatureWeights, session2: Vec<Scenario>, at: u64 },
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("scenario `{0}` has not been delivered")]
    NotDelivered(String),
    #[error("scenario `{0}` was already delivered")]
    AlreadyDelivered(String),
    #[error("scenario `{0}` was already answered")]
    Duplicate(String),
    #[error("session is in {found:?}, expected {expected:?}")]
    WrongPhase { expected: SessionPhase, found: SessionPhase },
    #[error("no fitted model yet")]
    NotFitted,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] recourse_core::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub participant: String,
    pub config: SessionConfig,
    pub phase: SessionPhase,
    pub session1: Vec<Scenario>,
    pub session2: Vec<Scenario>,
    /// Scenario ids in delivery order.
    pub delivered: Vec<String>,
    pub responses: Vec<ResponseEntry>,
    pub model: Option<BtModel>,
    pub weights: Option<FeatureWeights>,
    pub probing: BTreeMap<String, ProbingSession>,
    pub intervals: Vec<ThresholdInterval>,
    pub created_at: u64,
    pub updated_at: u64,
}

impl SessionRecord {
    pub fn from_created(event: &Event) -> Result<Self, SessionError> {
        let Event::Created { id, config, session1, at } = event else {
            return Err(SessionError::Invalid("a session log must start with a creation event".into()));
        };
        Ok(SessionRecord {
            id: id.clone(),
            participant: config.participant.clone(),
            config: config.clone(),
            phase: SessionPhase::Session1,
            session1: session1.clone(),
            session2: Vec::new(),
            delivered: Vec::new(),
            responses: Vec::new(),
            model: None,
            weights: None,
            probing: BTreeMap::new(),
            intervals: Vec::new(),
            created_at: *at,
            updated_at: *at,
        })
    }

    fn queue(&self, phase: SessionPhase) -> &[Scenario] {
        match phase {
            SessionPhase::Session1 => &self.session1,
            SessionPhase::Session2 => &self.session2,
            SessionPhase::Complete => &[],
        }
    }

    /// The scenario and the phase whose queue holds it.
    pub fn scenario(&self, id: &str) -> Option<(SessionPhase, &Scenario)> {
        [SessionPhase::Session1, SessionPhase::Session2]
            .into_iter()
            .find_map(|p| self.queue(p).iter().find(|s| s.id == id).map(|s| (p, s)))
    }

    pub fn is_delivered(&self, id: &str) -> bool {
        self.delivered.iter().any(|d| d == id)
    }

    pub fn is_answered(&self, id: &str) -> bool {
        match self.probing.get(id) {
            Some(p) => p.current_offer().is_none(),
            None => self.responses.iter().any(|r| r.scenario_id == id),
        }
    }

    /// Delivered in the current phase but not yet answered.
    pub fn pending(&self) -> Option<&Scenario> {
        self.queue(self.phase).iter().find(|s| self.is_delivered(&s.id) && !self.is_answered(&s.id))
    }

    pub fn next_undelivered(&self) -> Option<&Scenario> {
        self.queue(self.phase).iter().find(|s| !self.is_delivered(&s.id))
    }

    /// Position (from 1) of a scenario within its phase queue.
    pub fn position(&self, id: &str) -> Option<(usize, usize)> {
        let (phase, _) = self.scenario(id)?;
        let q = self.queue(phase);
        q.iter().position(|s| s.id == id).map(|i| (i + 1, q.len()))
    }

    pub fn session1_answered(&self) -> usize {
        self.responses.iter().filter(|r| r.phase == SessionPhase::Session1).count()
    }

    pub fn min_session1(&self) -> usize {
        self.config.min_session1.unwrap_or(self.session1.len())
    }

    /// Session-1 answers as Bradley-Terry comparisons.
    pub fn comparisons(&self) -> Vec<PairwiseComparison> {
        self.responses
            .iter()
            .filter(|r| r.phase == SessionPhase::Session1)
            .filter_map(|r| {
                let (_, s) = self.scenario(&r.scenario_id)?;
                Some(PairwiseComparison {
                    scenario_id: s.id.clone(),
                    source: s.source,
                    a: s.a.counterfactual,
                    b: s.b.counterfactual,
                    choice: r.answer.choice()?,
                    reason: r.reason.clone(),
                    threshold_exceeded: r.threshold_exceeded,
                })
            })
            .collect()
    }

    /// One response per answered scenario of a phase; a probing scenario
    /// counts its opening answer.
    pub fn scenario_responses(&self, phase: SessionPhase) -> (Vec<Scenario>, Vec<ScenarioResponse>) {
        let mut scenarios = Vec::new();
        let mut responses = Vec::new();
        for s in self.queue(phase) {
            if !self.is_answered(&s.id) {
                continue;
            }
            if let Some(r) = self.responses.iter().find(|r| r.scenario_id == s.id) {
                scenarios.push(s.clone());
                responses.push(ScenarioResponse { scenario_id: s.id.clone(), answer: r.answer, reason: r.reason.clone() });
            }
        }
        (scenarios, responses)
    }

    /// Merged intervals and the thresholds inferred from them.
    pub fn thresholds(&self, ctx: &StudyContext) -> (Vec<InferredInterval>, Thresholds) {
        infer_thresholds(&self.intervals, &ctx.schema)
    }

    /// Validates and folds in one event. On error the record is unchanged.
    pub fn apply(&mut self, event: &Event, ctx: &StudyContext) -> Result<Option<ProbeStatus>, SessionError> {
        let mut next = self.clone();
        let status = next.apply_in_place(event, ctx)?;
        *self = next;
        Ok(status)
    }

    fn apply_in_place(&mut self, event: &Event, ctx: &StudyContext) -> Result<Option<ProbeStatus>, SessionError> {
        let mut status = None;
        match event {
            Event::Created { .. } => return Err(SessionError::Invalid("session already exists".into())),
            Event::Delivered { scenario_id, at } => {
                let (phase, scenario) =
                    self.scenario(scenario_id).ok_or_else(|| SessionError::UnknownScenario(scenario_id.clone()))?;
                self.expect_phase(phase)?;
                if self.is_delivered(scenario_id) {
                    return Err(SessionError::AlreadyDelivered(scenario_id.clone()));
                }
                if scenario.kind == ScenarioKind::Probing {
                    let p = ProbingSession::new(scenario, self.config.steps)?;
                    self.probing.insert(scenario_id.clone(), p);
                }
                self.delivered.push(scenario_id.clone());
                self.updated_at = *at;
            }
            Event::Responded(entry) => {
                let id = &entry.scenario_id;
                let (phase, _) = self.scenario(id).ok_or_else(|| SessionError::UnknownScenario(id.clone()))?;
                self.expect_phase(phase)?;
                if entry.phase != phase {
                    return Err(SessionError::Invalid(format!("response phase does not match scenario {id}")));
                }
                if !self.is_delivered(id) {
                    return Err(SessionError::NotDelivered(id.clone()));
                }
                if self.is_answered(id) {
                    return Err(SessionError::Duplicate(id.clone()));
                }
                if phase == SessionPhase::Session1 && entry.answer == Answer::RejectBoth {
                    return Err(SessionError::Invalid("Session-1 scenarios need a choice of A or B".into()));
                }
                if let Some(probe) = self.probing.get_mut(id) {
                    let w = self.weights.ok_or(SessionError::NotFitted)?;
                    let choice = ProbeChoice { pick: entry.answer, threshold_exceeded: entry.threshold_exceeded };
                    let s = probe.step(choice, &ctx.tree, &ctx.schema, &w)?;
                    if let ProbeStatus::Terminated(ivs) = &s {
                        self.intervals.extend(ivs.iter().copied());
                    }
                    status = Some(s);
                }
                self.responses.push(entry.clone());
                if self.phase == SessionPhase::Session2 && self.session2.iter().all(|s| self.is_answered(&s.id)) {
                    self.phase = SessionPhase::Complete;
                }
                self.updated_at = entry.at;
            }
            Event::Fitted { model, weights, session2, at } => {
                self.expect_phase(SessionPhase::Session1)?;
                if self.session1_answered() < self.min_session1() {
                    return Err(SessionError::Invalid(format!(
                        "{} Session-1 answers recorded, {} needed for a fit",
                        self.session1_answered(),
                        self.min_session1()
                    )));
                }
                if session2.iter().any(|s| s.meta.construction_weights != *weights) {
                    return Err(SessionError::Invalid("Session-2 scenarios must be built with the fitted weights".into()));
                }
                self.model = Some(model.clone());
                self.weights = Some(*weights);
                self.session2 = session2.clone();
                self.phase = if session2.is_empty() { SessionPhase::Complete } else { SessionPhase::Session2 };
                self.updated_at = *at;
            }
        }
        Ok(status)
    }

    fn expect_phase(&self, expected: SessionPhase) -> Result<(), SessionError> {
        if self.phase == expected {
            Ok(())
        } else {
            Err(SessionError::WrongPhase { expected, found: self.phase })
        }
    }

    /// The live probing offer for a scenario, if any.
    pub fn offer(&self, id: &str) -> Option<&ProbeOffer> {
        self.probing.get(id).and_then(|p| p.current_offer())
    }
}
