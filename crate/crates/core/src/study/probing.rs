//! The escalate-and-pivot probing protocol.
//!
//! The opening pair changes one feature on each side. Choosing A escalates
//! A's feature by one step; choosing B pivots to escalating B against the
//! last accepted A. Rejecting both, or choosing the non-escalated side in
//! the second phase, ends the session. Each probed feature ends with the
//! interval of target values its threshold must lie in.

use serde::{Deserialize, Serialize};

use super::{Answer, Scenario, ScenarioKind};
use crate::error::{Error, Result};
use crate::metrics::FeatureWeights;
use crate::recourse::Recourse;
use crate::schema::{Direction, Feature, FeatureSchema};
use crate::synth::Decision;
use crate::tree::DecisionTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscalationSteps {
    pub income: f64,
    pub credit_score: f64,
    pub loan_amount: f64,
    pub education_level: f64,
}

impl Default for EscalationSteps {
    fn default() -> Self {
        EscalationSteps { income: 500.0, credit_score: 20.0, loan_amount: 500.0, education_level: 1.0 }
    }
}

impl EscalationSteps {
    pub fn step(&self, feature: Feature) -> Option<f64> {
        match feature {
            Feature::Income => Some(self.income),
            Feature::CreditScore => Some(self.credit_score),
            Feature::LoanAmount => Some(self.loan_amount),
            Feature::EducationLevel => Some(self.education_level),
            Feature::EmploymentType => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    EscalateA,
    EscalateB,
    Terminated,
}

/// One answer to a probing offer. `threshold_exceeded` says the side not
/// picked was turned down because it went too far, not merely because the
/// picked side was preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeChoice {
    pub pick: Answer,
    #[serde(default)]
    pub threshold_exceeded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOffer {
    pub step: usize,
    pub phase: Phase,
    pub a: Recourse,
    pub b: Recourse,
}

/// Where a feature's threshold lies, as target values. A threshold `α` is
/// consistent when `last_accepted` is within `α` and `first_rejected` is
/// beyond it, in the feature's change direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdInterval {
    pub feature: Feature,
    pub direction: Direction,
    pub last_accepted: Option<f64>,
    pub first_rejected: Option<f64>,
    /// Escalation reached the schema bound without a rejection.
    pub reached_bound: bool,
}

impl ThresholdInterval {
    /// Whether a cap at `alpha` explains every observation.
    pub fn contains(&self, alpha: f64) -> bool {
        match self.direction {
            Direction::DecreaseOnly => {
                self.last_accepted.is_none_or(|v| alpha <= v) && self.first_rejected.is_none_or(|v| v < alpha)
            }
            _ => self.last_accepted.is_none_or(|v| v <= alpha) && self.first_rejected.is_none_or(|v| alpha < v),
        }
    }

    /// `last_accepted` is strictly closer to the source than `first_rejected`.
    pub fn is_ordered(&self) -> bool {
        match (self.last_accepted, self.first_rejected) {
            (Some(l), Some(r)) => match self.direction {
                Direction::DecreaseOnly => r < l,
                _ => l < r,
            },
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SideState {
    feature: Feature,
    initial: Recourse,
    current: Recourse,
    last_accepted: Option<Recourse>,
    first_rejected: Option<f64>,
    reached_bound: bool,
    recorded: bool,
}

impl SideState {
    fn new(feature: Feature, r: &Recourse) -> Self {
        SideState {
            feature,
            initial: r.clone(),
            current: r.clone(),
            last_accepted: None,
            first_rejected: None,
            reached_bound: false,
            recorded: false,
        }
    }

    fn value(r: &Recourse, f: Feature) -> f64 {
        r.counterfactual.value(f)
    }

    fn accept_current(&mut self) {
        self.last_accepted = Some(self.current.clone());
    }

    fn reject_current(&mut self) {
        if self.first_rejected.is_none() {
            self.first_rejected = Some(Self::value(&self.current, self.feature));
        }
        self.recorded = true;
    }

    fn interval(&self, schema: &FeatureSchema) -> ThresholdInterval {
        ThresholdInterval {
            feature: self.feature,
            direction: schema.direction(self.feature),
            last_accepted: self.last_accepted.as_ref().map(|r| Self::value(r, self.feature)),
            first_rejected: self.first_rejected,
            reached_bound: self.reached_bound,
        }
    }

    /// The side to show against an escalating opponent.
    fn standing(&self) -> &Recourse {
        self.last_accepted.as_ref().unwrap_or(&self.current)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProbeStatus {
    Offer(ProbeOffer),
    Terminated(Vec<ThresholdInterval>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbingSession {
    pub scenario_id: String,
    pub phase: Phase,
    pub steps: EscalationSteps,
    pub history: Vec<(ProbeOffer, ProbeChoice)>,
    a: SideState,
    b: SideState,
    offer: Option<ProbeOffer>,
}

impl ProbingSession {
    pub fn new(scenario: &Scenario, steps: EscalationSteps) -> Result<Self> {
        let probed = match (scenario.kind, scenario.meta.probed) {
            (ScenarioKind::Probing, Some(p)) if p[0] != p[1] => p,
            _ => return Err(Error::InvalidConfig(format!("scenario {} is not a probing scenario", scenario.id))),
        };
        for (r, f) in [(&scenario.a, probed[0]), (&scenario.b, probed[1])] {
            if r.changed_features() != [f] || steps.step(f).is_none() {
                return Err(Error::InvalidConfig(format!("scenario {} side does not change only {f}", scenario.id)));
            }
        }
        let offer = ProbeOffer { step: 0, phase: Phase::EscalateA, a: scenario.a.clone(), b: scenario.b.clone() };
        Ok(ProbingSession {
            scenario_id: scenario.id.clone(),
            phase: Phase::EscalateA,
            steps,
            history: Vec::new(),
            a: SideState::new(probed[0], &scenario.a),
            b: SideState::new(probed[1], &scenario.b),
            offer: Some(offer),
        })
    }

    pub fn current_offer(&self) -> Option<&ProbeOffer> {
        self.offer.as_ref()
    }

    /// Intervals recorded so far (after a pivot, a bound or a rejection).
    pub fn intervals(&self, schema: &FeatureSchema) -> Vec<ThresholdInterval> {
        [&self.a, &self.b].into_iter().filter(|s| s.recorded).map(|s| s.interval(schema)).collect()
    }

    /// One step further along the side's direction that the tree still
    /// approves; `None` at the schema bound.
    fn escalate(
        &self,
        side: &SideState,
        tree: &DecisionTree,
        schema: &FeatureSchema,
        w: &FeatureWeights,
    ) -> Option<Recourse> {
        let f = side.feature;
        let step = self.steps.step(f)?;
        let sign = if schema.direction(f) == Direction::DecreaseOnly { -1.0 } else { 1.0 };
        let (lo, hi) = schema.bounds(f);
        let mut values = side.current.counterfactual.values();
        loop {
            let v = values[f.index()];
            let next = (v + sign * step).clamp(lo, hi);
            if next == v {
                return None;
            }
            values[f.index()] = next;
            let p = tree.predict_values(&values);
            if p.decision == Decision::Approved {
                let cf = crate::schema::ApplicantProfile::from_values(values).ok()?;
                return Some(Recourse::new(side.current.source, cf, p.leaf, schema, w));
            }
        }
    }

    fn terminate(&mut self, schema: &FeatureSchema) -> ProbeStatus {
        self.phase = Phase::Terminated;
        self.offer = None;
        self.a.recorded = true;
        self.b.recorded = true;
        ProbeStatus::Terminated(self.intervals(schema))
    }

    fn offer_pair(&mut self, phase: Phase) -> ProbeStatus {
        let (a, b) = match phase {
            Phase::EscalateA => (self.a.current.clone(), self.b.current.clone()),
            _ => (self.a.standing().clone(), self.b.current.clone()),
        };
        let offer = ProbeOffer { step: self.history.len(), phase, a, b };
        self.phase = phase;
        self.offer = Some(offer.clone());
        ProbeStatus::Offer(offer)
    }

    /// Moves to escalating B, or ends when B cannot move.
    fn pivot_to_b(&mut self, tree: &DecisionTree, schema: &FeatureSchema, w: &FeatureWeights) -> ProbeStatus {
        match self.escalate(&self.b, tree, schema, w) {
            Some(next) => {
                self.b.current = next;
                self.offer_pair(Phase::EscalateB)
            }
            None => {
                self.b.reached_bound = true;
                self.terminate(schema)
            }
        }
    }

    pub fn step(
        &mut self,
        choice: ProbeChoice,
        tree: &DecisionTree,
        schema: &FeatureSchema,
        w: &FeatureWeights,
    ) -> Result<ProbeStatus> {
        let offer = self.offer.clone().ok_or(Error::SessionTerminated)?;
        self.history.push((offer, choice));
        match (self.phase, choice.pick) {
            (Phase::Terminated, _) => Err(Error::SessionTerminated),
            (Phase::EscalateA, Answer::A) => {
                self.a.accept_current();
                match self.escalate(&self.a, tree, schema, w) {
                    Some(next) => {
                        self.a.current = next;
                        Ok(self.offer_pair(Phase::EscalateA))
                    }
                    None => {
                        self.a.reached_bound = true;
                        self.a.recorded = true;
                        Ok(self.pivot_to_b(tree, schema, w))
                    }
                }
            }
            (Phase::EscalateA, Answer::B) => {
                self.b.accept_current();
                if choice.threshold_exceeded {
                    self.a.reject_current();
                }
                self.a.recorded = true;
                Ok(self.pivot_to_b(tree, schema, w))
            }
            (Phase::EscalateA, Answer::RejectBoth) => {
                self.a.reject_current();
                if self.b.last_accepted.is_none() {
                    self.b.reject_current();
                }
                Ok(self.terminate(schema))
            }
            (Phase::EscalateB, Answer::B) => {
                self.b.accept_current();
                match self.escalate(&self.b, tree, schema, w) {
                    Some(next) => {
                        self.b.current = next;
                        Ok(self.offer_pair(Phase::EscalateB))
                    }
                    None => {
                        self.b.reached_bound = true;
                        Ok(self.terminate(schema))
                    }
                }
            }
            (Phase::EscalateB, Answer::A) => {
                if self.a.last_accepted.is_none() {
                    self.a.accept_current();
                }
                if choice.threshold_exceeded {
                    self.b.reject_current();
                }
                Ok(self.terminate(schema))
            }
            (Phase::EscalateB, Answer::RejectBoth) => {
                self.b.reject_current();
                if self.a.last_accepted.is_none() {
                    self.a.reject_current();
                }
                Ok(self.terminate(schema))
            }
        }
    }
}
