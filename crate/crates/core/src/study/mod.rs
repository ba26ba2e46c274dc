//! Elicitation study machinery: scenario construction, the threshold-probing
//! protocol, simulated participants and evaluation of AWP predictions.

mod build;
mod eval;
mod probing;
mod sim;

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use build::{
    build_probing_scenarios, build_rounding_scenarios, build_session1, build_session2, build_tradeoff_scenarios,
    Batch, Composition, PairSelection, Session1Design, Session2Options, TradeoffOptions, PROBEABLE,
};
pub use eval::{
    evaluate_session, infer_thresholds, run_pipeline, Bins, EvaluationReport, InferredInterval, PipelineConfig,
    PipelineOutcome,
};
pub use probing::{EscalationSteps, Phase, ProbeChoice, ProbeOffer, ProbeStatus, ProbingSession, ThresholdInterval};
pub use sim::{random_weights, SimulatedUser, NOISE_SCALE};

use crate::error::{Error, Result};
use crate::metrics::{prox, sparsity, weighted_prox, FeatureWeights};
use crate::preference::Choice;
use crate::recourse::{GenerationConfig, Recourse};
use crate::schema::{validate_profile, ApplicantProfile, Feature, FeatureSchema};
use crate::synth::{Decision, LabeledProfile};
use crate::tree::DecisionTree;

/// Construction weights for Session-1 scenarios, before any personal
/// weights are known: loan, credit, income, employment, education from
/// cheapest to most expensive to change.
pub const GLOBAL_WEIGHTS: [f64; 5] = [1.0, 0.75, 1.25, 1.5, 0.5];

pub fn global_weights() -> FeatureWeights {
    FeatureWeights::new(GLOBAL_WEIGHTS).expect("constant weights are positive")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Tradeoff,
    /// Two top-K recourses with no construction constraint.
    Comparison,
    Probing,
    Rounding,
}

/// Which side wins on each metric; `None` on a tie.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub construction_weights: FeatureWeights,
    pub prox_winner: Option<Choice>,
    pub weighted_winner: Option<Choice>,
    pub sparsity_winner: Option<Choice>,
    /// Probed feature of A and of B.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probed: Option<[Feature; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub kind: ScenarioKind,
    pub source: ApplicantProfile,
    pub a: Recourse,
    pub b: Recourse,
    pub meta: ScenarioMeta,
}

fn winner(a: f64, b: f64) -> Option<Choice> {
    if a < b {
        Some(Choice::A)
    } else if b < a {
        Some(Choice::B)
    } else {
        None
    }
}

impl Scenario {
    pub fn new(
        id: String,
        kind: ScenarioKind,
        a: Recourse,
        b: Recourse,
        schema: &FeatureSchema,
        w: &FeatureWeights,
        probed: Option<[Feature; 2]>,
    ) -> Self {
        let source = a.source;
        let (a, b) = (a.with_weights(schema, w), b.with_weights(schema, w));
        let meta = ScenarioMeta {
            construction_weights: *w,
            prox_winner: winner(a.cost.prox, b.cost.prox),
            weighted_winner: winner(a.cost.weighted_prox, b.cost.weighted_prox),
            sparsity_winner: winner(a.cost.sparsity as f64, b.cost.sparsity as f64),
            probed,
        };
        Scenario { id, kind, source, a, b, meta }
    }

    pub fn side(&self, choice: Choice) -> &Recourse {
        match choice {
            Choice::A => &self.a,
            Choice::B => &self.b,
        }
    }

    /// Raw and weighted proximity disagree strictly under `w`.
    pub fn diverges_under(&self, schema: &FeatureSchema, w: &FeatureWeights) -> bool {
        diverges(&self.source, &self.a, &self.b, schema, w)
    }
}

pub(crate) fn diverges(x: &ApplicantProfile, a: &Recourse, b: &Recourse, schema: &FeatureSchema, w: &FeatureWeights) -> bool {
    let (pa, pb) = (prox(x, &a.counterfactual, schema), prox(x, &b.counterfactual, schema));
    let (wa, wb) = (
        weighted_prox(x, &a.counterfactual, schema, w),
        weighted_prox(x, &b.counterfactual, schema, w),
    );
    (pa < pb && wb < wa) || (pb < pa && wa < wb)
}

/// A participant's answer to a scenario (a probing offer uses the same set).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    A,
    B,
    RejectBoth,
}

impl Answer {
    pub fn choice(self) -> Option<Choice> {
        match self {
            Answer::A => Some(Choice::A),
            Answer::B => Some(Choice::B),
            Answer::RejectBoth => None,
        }
    }
}

impl From<Choice> for Answer {
    fn from(c: Choice) -> Self {
        match c {
            Choice::A => Answer::A,
            Choice::B => Answer::B,
        }
    }
}

/// The answer recorded for a scenario. For probing scenarios this is the
/// answer to the opening pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResponse {
    pub scenario_id: String,
    pub answer: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// A trained tree with the pool of rejected profiles that scenarios are
/// drawn from.
#[derive(Debug, Clone)]
pub struct StudyContext {
    pub tree: DecisionTree,
    pub schema: FeatureSchema,
    pub pool: Vec<ApplicantProfile>,
    pub generation: GenerationConfig,
}

impl StudyContext {
    pub fn new(tree: DecisionTree, dataset: &[LabeledProfile]) -> Result<Self> {
        Self::from_profiles(tree, dataset.iter().map(|lp| lp.profile))
    }

    /// Keeps the valid profiles the tree rejects.
    pub fn from_profiles(tree: DecisionTree, profiles: impl IntoIterator<Item = ApplicantProfile>) -> Result<Self> {
        let schema = FeatureSchema::credit();
        let pool: Vec<ApplicantProfile> = profiles
            .into_iter()
            .filter(|p| validate_profile(&schema, p).is_empty() && tree.predict(p).decision == Decision::Rejected)
            .collect();
        if pool.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(StudyContext { tree, schema, pool, generation: GenerationConfig::default() })
    }
}

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Blank lines are skipped.
pub fn read_jsonl<R: BufRead, T: DeserializeOwned>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Count of changed features, for pilot-style statistics.
pub(crate) fn scenario_sparsity(s: &Scenario, c: Choice) -> usize {
    sparsity(&s.source, &s.side(c).counterfactual)
}
