//! Threshold inference, session evaluation and the simulated two-session
//! pipeline.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{
    build_session1, build_session2, scenario_sparsity, EscalationSteps, ProbeStatus, ProbingSession, Scenario,
    ScenarioKind, ScenarioResponse, Session1Design, PROBEABLE, Session2Options, SimulatedUser, StudyContext,
    ThresholdInterval,
};
use crate::awp::{stage2_select, Cap, Thresholds};
use crate::error::{Error, Result};
use crate::metrics::{prox, weighted_prox, FeatureWeights};
use crate::preference::{fit_bt, weights_from_beta, BtModel, Choice, FitOptions, PairwiseComparison};
use crate::schema::{Direction, Feature, FeatureSchema};

/// All observations for one feature, intersected.
pub type InferredInterval = ThresholdInterval;

/// Intersects intervals per feature and turns them into conservative caps:
/// the cap sits at the furthest accepted target, so only targets already
/// seen accepted pass. A probeable feature with no accepted target, probed
/// or not, admits no change; employment stays unbounded.
pub fn infer_thresholds(intervals: &[ThresholdInterval], schema: &FeatureSchema) -> (Vec<InferredInterval>, Thresholds) {
    let mut merged: BTreeMap<Feature, ThresholdInterval> = BTreeMap::new();
    for iv in intervals {
        let decreasing = iv.direction == Direction::DecreaseOnly;
        let further = |a: f64, b: f64| if decreasing { a.min(b) } else { a.max(b) };
        let nearer = |a: f64, b: f64| if decreasing { a.max(b) } else { a.min(b) };
        merged
            .entry(iv.feature)
            .and_modify(|m| {
                m.last_accepted = match (m.last_accepted, iv.last_accepted) {
                    (Some(a), Some(b)) => Some(further(a, b)),
                    (a, b) => a.or(b),
                };
                m.first_rejected = match (m.first_rejected, iv.first_rejected) {
                    (Some(a), Some(b)) => Some(nearer(a, b)),
                    (a, b) => a.or(b),
                };
                m.reached_bound |= iv.reached_bound;
            })
            .or_insert(*iv);
    }
    let mut alpha = Thresholds::unbounded();
    for f in PROBEABLE {
        let (lo, hi) = schema.bounds(f);
        let accepted = merged.get(&f).and_then(|iv| iv.last_accepted);
        let cap = match schema.direction(f) {
            Direction::IncreaseOnly => Cap::AtMost(accepted.unwrap_or(lo)),
            Direction::DecreaseOnly => Cap::AtLeast(accepted.unwrap_or(hi)),
            Direction::Any => Cap::Unbounded,
        };
        alpha.set(f, cap);
    }
    (merged.into_values().collect(), alpha)
}

/// Scenario counts by how many sides are known acceptable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bins {
    pub none_acceptable: usize,
    pub only_one_acceptable: usize,
    pub both_acceptable: usize,
}

impl Bins {
    pub fn total(&self) -> usize {
        self.none_acceptable + self.only_one_acceptable + self.both_acceptable
    }
}

/// How often the chosen side was the lower one on a metric, over scenarios
/// where the sides differ on it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub matched: usize,
    pub eligible: usize,
}

impl Rate {
    pub fn value(&self) -> Option<f64> {
        (self.eligible > 0).then(|| self.matched as f64 / self.eligible as f64)
    }

    fn record(&mut self, chosen: f64, other: f64) {
        if chosen != other {
            self.eligible += 1;
            if chosen < other {
                self.matched += 1;
            }
        }
    }

    fn merge(&mut self, other: &Rate) {
        self.matched += other.matched;
        self.eligible += other.eligible;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub total: usize,
    pub bins: Bins,
    pub awp_correct: usize,
    /// Over the both-acceptable bin; `None` when that bin is empty.
    pub awp_accuracy: Option<f64>,
    pub lower_prox: Rate,
    pub lower_weighted_prox: Rate,
    pub lower_sparsity: Rate,
    pub by_kind: BTreeMap<ScenarioKind, Bins>,
}

impl EvaluationReport {
    pub fn merge(&mut self, other: &EvaluationReport) {
        self.total += other.total;
        self.bins.none_acceptable += other.bins.none_acceptable;
        self.bins.only_one_acceptable += other.bins.only_one_acceptable;
        self.bins.both_acceptable += other.bins.both_acceptable;
        self.awp_correct += other.awp_correct;
        self.lower_prox.merge(&other.lower_prox);
        self.lower_weighted_prox.merge(&other.lower_weighted_prox);
        self.lower_sparsity.merge(&other.lower_sparsity);
        for (kind, b) in &other.by_kind {
            let e = self.by_kind.entry(*kind).or_default();
            e.none_acceptable += b.none_acceptable;
            e.only_one_acceptable += b.only_one_acceptable;
            e.both_acceptable += b.both_acceptable;
        }
        self.awp_accuracy = accuracy(self.awp_correct, self.bins.both_acceptable);
    }
}

fn accuracy(correct: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| correct as f64 / n as f64)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |v| format!("{:.2}%", 100.0 * v))
}

impl fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenarios               {:>8}", self.total)?;
        writeln!(f, "  none acceptable       {:>8}", self.bins.none_acceptable)?;
        writeln!(f, "  only one acceptable   {:>8}", self.bins.only_one_acceptable)?;
        writeln!(f, "  both acceptable       {:>8}", self.bins.both_acceptable)?;
        writeln!(f, "AWP accuracy (both)     {:>8}", pct(self.awp_accuracy))?;
        writeln!(f, "chose lower prox        {:>8}", pct(self.lower_prox.value()))?;
        writeln!(f, "chose lower w-prox      {:>8}", pct(self.lower_weighted_prox.value()))?;
        write!(f, "chose lower sparsity    {:>8}", pct(self.lower_sparsity.value()))
    }
}

/// Bins each answered scenario by how many sides are known acceptable (the
/// chosen side, plus any side passing `alpha_hat`) and scores the AWP
/// stage-2 pick under `w_hat` on the both-acceptable bin.
pub fn evaluate_session(
    scenarios: &[Scenario],
    responses: &[ScenarioResponse],
    w_hat: &FeatureWeights,
    alpha_hat: &Thresholds,
    schema: &FeatureSchema,
) -> Result<EvaluationReport> {
    let by_id: HashMap<&str, &ScenarioResponse> = responses.iter().map(|r| (r.scenario_id.as_str(), r)).collect();
    let mut report = EvaluationReport::default();
    for s in scenarios {
        let response = by_id
            .get(s.id.as_str())
            .ok_or_else(|| Error::InvalidArtifact(format!("no response for scenario {}", s.id)))?;
        report.total += 1;
        let kind_bins = report.by_kind.entry(s.kind).or_default();
        let Some(chosen) = response.answer.choice() else {
            report.bins.none_acceptable += 1;
            kind_bins.none_acceptable += 1;
            continue;
        };
        let other = match chosen {
            Choice::A => Choice::B,
            Choice::B => Choice::A,
        };
        let (c, o) = (s.side(chosen), s.side(other));
        let x = &s.source;
        report.lower_prox.record(prox(x, &c.counterfactual, schema), prox(x, &o.counterfactual, schema));
        report.lower_weighted_prox.record(
            weighted_prox(x, &c.counterfactual, schema, w_hat),
            weighted_prox(x, &o.counterfactual, schema, w_hat),
        );
        report
            .lower_sparsity
            .record(scenario_sparsity(s, chosen) as f64, scenario_sparsity(s, other) as f64);

        if alpha_hat.admits(x, &o.counterfactual) {
            report.bins.both_acceptable += 1;
            kind_bins.both_acceptable += 1;
            let pick = stage2_select(&[&s.a, &s.b], x, schema, w_hat)?;
            let predicted = if pick == 0 { Choice::A } else { Choice::B };
            if predicted == chosen {
                report.awp_correct += 1;
            }
        } else {
            report.bins.only_one_acceptable += 1;
            kind_bins.only_one_acceptable += 1;
        }
    }
    report.awp_accuracy = accuracy(report.awp_correct, report.bins.both_acceptable);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub session1: usize,
    pub session1_design: Session1Design,
    pub session2: Session2Options,
    pub fit: FitOptions,
    pub steps: EscalationSteps,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            session1: 200,
            session1_design: Session1Design::Mixed,
            session2: Session2Options { min_margin: 0.2, ..Session2Options::default() },
            fit: FitOptions::default(),
            steps: EscalationSteps::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub session1: Vec<Scenario>,
    pub comparisons: Vec<PairwiseComparison>,
    pub model: BtModel,
    pub w_hat: FeatureWeights,
    pub session2: Vec<Scenario>,
    pub responses: Vec<ScenarioResponse>,
    pub intervals: Vec<ThresholdInterval>,
    pub alpha_hat: Thresholds,
    pub report: EvaluationReport,
    pub partial: bool,
}

/// Runs both sessions for one simulated participant: forced choices on the
/// first batch, a Bradley-Terry fit, a personalized second batch (with
/// probing run to termination), threshold inference and evaluation.
pub fn run_pipeline(ctx: &StudyContext, user: &mut SimulatedUser, cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let schema = &ctx.schema;
    let s1 = build_session1(ctx, cfg.session1_design, cfg.session1, cfg.seed)?;
    let comparisons: Vec<PairwiseComparison> = s1.scenarios.iter().map(|s| user.compare(s, schema)).collect();
    let model = fit_bt(&comparisons, schema, &cfg.fit)?;
    let w_hat = weights_from_beta(&model);

    let s2 = build_session2(ctx, &w_hat, &cfg.session2, cfg.seed.wrapping_add(0x5eed))?;
    let mut responses = Vec::with_capacity(s2.scenarios.len());
    let mut intervals = Vec::new();
    for s in &s2.scenarios {
        let answer = if s.kind == ScenarioKind::Probing {
            let mut session = ProbingSession::new(s, cfg.steps)?;
            let mut first = None;
            loop {
                let offer = session.current_offer().expect("session is live").clone();
                let choice = user.probe_choice(&offer, schema);
                first.get_or_insert(choice.pick);
                if let ProbeStatus::Terminated(ivs) = session.step(choice, &ctx.tree, schema, &w_hat)? {
                    intervals.extend(ivs);
                    break;
                }
            }
            first.expect("at least one offer")
        } else {
            user.scenario_answer(s, schema)
        };
        responses.push(ScenarioResponse { scenario_id: s.id.clone(), answer, reason: None });
    }
    let (_, alpha_hat) = infer_thresholds(&intervals, schema);
    let report = evaluate_session(&s2.scenarios, &responses, &w_hat, &alpha_hat, schema)?;
    Ok(PipelineOutcome {
        session1: s1.scenarios,
        comparisons,
        model,
        w_hat,
        session2: s2.scenarios,
        responses,
        intervals,
        alpha_hat,
        report,
        partial: s1.partial || s2.partial,
    })
}
