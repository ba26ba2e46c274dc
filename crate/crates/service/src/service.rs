//! Session operations over the store. Sessions are independent; each sits
//! behind its own lock, so requests within a session are serialized while
//! reads see the record as of the last acknowledged write.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::RwLock;
use recourse_core::awp::Thresholds;
use recourse_core::metrics::FeatureWeights;
use recourse_core::preference::{fit_bt, weights_from_beta, BtModel};
use recourse_core::study::{
    build_session1, build_session2, evaluate_session, global_weights, Answer, EvaluationReport, InferredInterval,
    ProbeOffer, ProbeStatus, Scenario, ScenarioKind, StudyContext, ThresholdInterval,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{Event, ResponseEntry, SessionConfig, SessionError, SessionPhase, SessionRecord};
use crate::store::{sessions_dir, SessionLog, StoreError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl From<recourse_core::Error> for ServiceError {
    fn from(e: recourse_core::Error) -> Self {
        ServiceError::Session(SessionError::Core(e))
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub phase: SessionPhase,
    pub session1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioView {
    pub phase: SessionPhase,
    pub position: usize,
    pub total: usize,
    pub scenario: Scenario,
    /// The pair to show now, for probing scenarios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offer: Option<ProbeOffer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Next {
    Scenario(ScenarioView),
    PhaseTransition { from: SessionPhase, to: SessionPhase, weights: FeatureWeights },
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub scenario_id: String,
    pub answer: Answer,
    #[serde(default)]
    pub reason: Option<String>,
    /// The side not chosen was turned down for going too far.
    #[serde(default)]
    pub threshold_exceeded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub scenario_id: String,
    pub responses: usize,
    pub phase: SessionPhase,
    /// Next escalated pair of a probing scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offer: Option<ProbeOffer>,
    /// Set when a probing scenario terminates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<Vec<ThresholdInterval>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsView {
    pub weights: FeatureWeights,
    pub model: BtModel,
    pub thresholds: Thresholds,
    pub intervals: Vec<InferredInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub scenarios: usize,
    pub answered: usize,
    pub evaluation: Option<EvaluationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportView {
    pub id: String,
    pub participant: String,
    pub phase: SessionPhase,
    pub responses: usize,
    /// Session-1 choices scored against the fitted (or, before a fit, the
    /// global) weights with no thresholds.
    pub session1: PhaseReport,
    pub session2: PhaseReport,
    pub weights: Option<FeatureWeights>,
    pub thresholds: Option<Thresholds>,
    pub intervals: Vec<InferredInterval>,
}

struct Slot {
    record: SessionRecord,
    log: SessionLog,
}

pub struct Service {
    ctx: Arc<StudyContext>,
    root: PathBuf,
    sessions: RwLock<HashMap<String, Arc<RwLock<Slot>>>>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl Service {
    /// Opens the data directory and replays every stored session.
    pub fn open(ctx: Arc<StudyContext>, root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let dir = sessions_dir(&root);
        fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if !path.is_dir() {
                continue;
            }
            let (record, log) = SessionLog::open(&path, &ctx)?;
            sessions.insert(record.id.clone(), Arc::new(RwLock::new(Slot { record, log })));
        }
        tracing::info!(sessions = sessions.len(), root = %root.display(), "session store opened");
        Ok(Service { ctx, root, sessions: RwLock::new(sessions) })
    }

    pub fn context(&self) -> &StudyContext {
        &self.ctx
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn slot(&self, id: &str) -> Result<Arc<RwLock<Slot>>> {
        self.sessions.read().get(id).cloned().ok_or_else(|| ServiceError::UnknownSession(id.to_owned()))
    }

    pub fn record(&self, id: &str) -> Result<SessionRecord> {
        Ok(self.slot(id)?.read().record.clone())
    }

    pub fn create(&self, mut config: SessionConfig) -> Result<Created> {
        if config.session1 == 0 {
            return Err(SessionError::Invalid("session1 must be at least 1".into()).into());
        }
        if config.min_session1.is_some_and(|m| m == 0 || m > config.session1) {
            return Err(SessionError::Invalid("min_session1 must lie in 1..=session1".into()).into());
        }
        let seed = *config.seed.get_or_insert_with(rand::random);
        let batch = build_session1(&self.ctx, config.session1_design, config.session1, seed)?;
        if batch.scenarios.is_empty() {
            return Err(SessionError::Invalid("no Session-1 scenarios could be built".into()).into());
        }
        if config.min_session1.is_some_and(|m| m > batch.scenarios.len()) {
            config.min_session1 = Some(batch.scenarios.len());
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let event = Event::Created { id: id.clone(), config, session1: batch.scenarios, at: now_ms() };
        let record = SessionRecord::from_created(&event)?;
        let log = SessionLog::create(&self.root, &id, &event)?;
        let created = Created { id: id.clone(), phase: record.phase, session1: record.session1.len() };
        self.sessions.write().insert(id, Arc::new(RwLock::new(Slot { record, log })));
        Ok(created)
    }

    /// Applies, logs durably, then publishes an event.
    fn commit(&self, slot: &mut Slot, event: Event) -> Result<Option<ProbeStatus>> {
        let mut next = slot.record.clone();
        let status = next.apply(&event, &self.ctx)?;
        slot.log.append(&event)?;
        slot.record = next;
        if let Err(e) = slot.log.maybe_snapshot(&slot.record) {
            tracing::warn!(error = %e, "snapshot failed; the event log still holds every event");
        }
        Ok(status)
    }

    fn view(&self, record: &SessionRecord, s: &Scenario) -> Result<ScenarioView> {
        if record.phase == SessionPhase::Session2 {
            let w = record.weights.ok_or_else(|| ServiceError::Invariant("Session 2 without weights".into()))?;
            if s.meta.construction_weights != w {
                return Err(ServiceError::Invariant(format!("{} was not built with the fitted weights", s.id)));
            }
            if s.kind == ScenarioKind::Tradeoff && !s.diverges_under(&self.ctx.schema, &w) {
                return Err(ServiceError::Invariant(format!("{} does not diverge under the fitted weights", s.id)));
            }
        }
        let (position, total) = record.position(&s.id).expect("scenario belongs to the session");
        Ok(ScenarioView {
            phase: record.phase,
            position,
            total,
            scenario: s.clone(),
            offer: record.offer(&s.id).cloned(),
        })
    }

    /// The pending scenario, else the next one delivered; at the end of
    /// Session 1 the fit runs and the phase changes.
    pub fn next(&self, id: &str) -> Result<Next> {
        let slot = self.slot(id)?;
        let mut slot = slot.write();
        if slot.record.phase == SessionPhase::Complete {
            return Ok(Next::Done);
        }
        if let Some(s) = slot.record.pending() {
            return Ok(Next::Scenario(self.view(&slot.record, s)?));
        }
        if let Some(s) = slot.record.next_undelivered().cloned() {
            self.view(&slot.record, &s)?;
            self.commit(&mut slot, Event::Delivered { scenario_id: s.id.clone(), at: now_ms() })?;
            return Ok(Next::Scenario(self.view(&slot.record, &s)?));
        }
        if slot.record.phase == SessionPhase::Session1 {
            let weights = self.fit_locked(&mut slot)?;
            return Ok(Next::PhaseTransition { from: SessionPhase::Session1, to: slot.record.phase, weights });
        }
        Ok(Next::Done)
    }

    fn fit_locked(&self, slot: &mut Slot) -> Result<FeatureWeights> {
        let r = &slot.record;
        if r.session1_answered() < r.min_session1() {
            return Err(SessionError::Invalid(format!(
                "{} Session-1 answers recorded, {} needed for a fit",
                r.session1_answered(),
                r.min_session1()
            ))
            .into());
        }
        let mut model = fit_bt(&r.comparisons(), &self.ctx.schema, &r.config.fit)?;
        model.objective_trace.clear();
        let weights = weights_from_beta(&model);
        let seed = r.config.seed.unwrap_or_default().wrapping_add(1);
        let batch = build_session2(&self.ctx, &weights, &r.config.session2, seed)?;
        self.commit(slot, Event::Fitted { model, weights, session2: batch.scenarios, at: now_ms() })?;
        Ok(weights)
    }

    pub fn submit(&self, id: &str, req: SubmitRequest) -> Result<SubmitAck> {
        let slot = self.slot(id)?;
        let mut slot = slot.write();
        let (phase, _) = slot
            .record
            .scenario(&req.scenario_id)
            .ok_or_else(|| SessionError::UnknownScenario(req.scenario_id.clone()))?;
        let entry = ResponseEntry {
            scenario_id: req.scenario_id.clone(),
            phase,
            answer: req.answer,
            reason: req.reason,
            threshold_exceeded: req.threshold_exceeded,
            at: now_ms(),
        };
        let status = self.commit(&mut slot, Event::Responded(entry))?;
        let (offer, intervals) = match status {
            Some(ProbeStatus::Offer(o)) => (Some(o), None),
            Some(ProbeStatus::Terminated(ivs)) => (None, Some(ivs)),
            None => (None, None),
        };
        Ok(SubmitAck {
            scenario_id: req.scenario_id,
            responses: slot.record.responses.len(),
            phase: slot.record.phase,
            offer,
            intervals,
        })
    }

    /// Fits now if still in Session 1, otherwise returns the existing fit.
    pub fn fit(&self, id: &str) -> Result<WeightsView> {
        let slot = self.slot(id)?;
        let mut slot = slot.write();
        if slot.record.phase == SessionPhase::Session1 {
            self.fit_locked(&mut slot)?;
        }
        self.weights_of(&slot.record)
    }

    pub fn weights(&self, id: &str) -> Result<WeightsView> {
        let slot = self.slot(id)?;
        let slot = slot.read();
        self.weights_of(&slot.record)
    }

    fn weights_of(&self, r: &SessionRecord) -> Result<WeightsView> {
        let (Some(model), Some(weights)) = (r.model.clone(), r.weights) else {
            return Err(SessionError::NotFitted.into());
        };
        let (intervals, thresholds) = r.thresholds(&self.ctx);
        Ok(WeightsView { weights, model, thresholds, intervals })
    }

    pub fn report(&self, id: &str) -> Result<ReportView> {
        let slot = self.slot(id)?;
        let r = &slot.read().record;
        let schema = &self.ctx.schema;
        let w1 = r.weights.unwrap_or_else(global_weights);
        let (s1, resp1) = r.scenario_responses(SessionPhase::Session1);
        let session1 = PhaseReport {
            scenarios: r.session1.len(),
            answered: s1.len(),
            evaluation: (!s1.is_empty())
                .then(|| evaluate_session(&s1, &resp1, &w1, &Thresholds::unbounded(), schema))
                .transpose()?,
        };
        let (intervals, thresholds) = r.thresholds(&self.ctx);
        let (s2, resp2) = r.scenario_responses(SessionPhase::Session2);
        let session2 = PhaseReport {
            scenarios: r.session2.len(),
            answered: s2.len(),
            evaluation: match r.weights {
                Some(w) if !s2.is_empty() => Some(evaluate_session(&s2, &resp2, &w, &thresholds, schema)?),
                _ => None,
            },
        };
        Ok(ReportView {
            id: r.id.clone(),
            participant: r.participant.clone(),
            phase: r.phase,
            responses: r.responses.len(),
            session1,
            session2,
            weights: r.weights,
            thresholds: r.weights.map(|_| thresholds),
            intervals,
        })
    }
}
