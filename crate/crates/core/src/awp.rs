//! Acceptability & Weighted Proximity: a two-stage model of which recourse a
//! user picks. Stage 1 drops recourses whose changed features cross the
//! user's per-feature thresholds; stage 2 takes the cheapest survivor under
//! the user's weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{prox, weighted_prox, FeatureWeights};
use crate::recourse::Recourse;
use crate::schema::{ApplicantProfile, Direction, Employment, Feature, FeatureSchema, NUM_FEATURES};

/// Acceptability cap on a feature's target value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cap {
    Unbounded,
    /// Target must not exceed this value.
    AtMost(f64),
    /// Target must not fall below this value.
    AtLeast(f64),
    /// Target must be one of these levels.
    Levels(Vec<Employment>),
}

impl Cap {
    pub fn admits(&self, value: f64) -> bool {
        match self {
            Cap::Unbounded => true,
            Cap::AtMost(c) => value <= *c,
            Cap::AtLeast(c) => value >= *c,
            Cap::Levels(levels) => levels.iter().any(|l| f64::from(l.code()) == value),
        }
    }
}

/// Per-feature caps in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds([Cap; NUM_FEATURES]);

impl Default for Thresholds {
    fn default() -> Self {
        Self::unbounded()
    }
}

impl Thresholds {
    pub fn unbounded() -> Self {
        Thresholds(std::array::from_fn(|_| Cap::Unbounded))
    }

    pub fn get(&self, feature: Feature) -> &Cap {
        &self.0[feature.index()]
    }

    pub fn set(&mut self, feature: Feature, cap: Cap) {
        self.0[feature.index()] = cap;
    }

    pub fn with(mut self, feature: Feature, cap: Cap) -> Self {
        self.set(feature, cap);
        self
    }

    /// Caps must point along the feature's change direction and lie within
    /// schema bounds.
    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        for f in Feature::ALL {
            let (lo, hi) = schema.bounds(f);
            let ok = match (self.get(f), schema.direction(f)) {
                (Cap::Unbounded, _) => true,
                (Cap::AtMost(c), Direction::IncreaseOnly) | (Cap::AtLeast(c), Direction::DecreaseOnly) => {
                    c.is_finite() && *c >= lo && *c <= hi
                }
                (Cap::Levels(_), Direction::Any) => f == Feature::EmploymentType,
                _ => false,
            };
            if !ok {
                return Err(Error::InvalidConfig(format!("threshold for {f} is inconsistent with the schema")));
            }
        }
        Ok(())
    }

    /// Changed features of `x → x′` whose target violates its cap.
    pub fn violations(&self, x: &ApplicantProfile, x_prime: &ApplicantProfile) -> Vec<Feature> {
        x.changed_features(x_prime)
            .into_iter()
            .filter(|&f| !self.get(f).admits(x_prime.value(f)))
            .collect()
    }

    pub fn admits(&self, x: &ApplicantProfile, x_prime: &ApplicantProfile) -> bool {
        self.violations(x, x_prime).is_empty()
    }
}

impl Serialize for Thresholds {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(NUM_FEATURES))?;
        for f in Feature::ALL {
            map.serialize_entry(f.name(), self.get(f))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Thresholds {
    /// Missing features are unbounded.
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<Feature, Cap>::deserialize(d)?;
        let mut t = Thresholds::unbounded();
        for (f, cap) in map {
            t.set(f, cap);
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub acceptable: bool,
    pub violations: Vec<Feature>,
}

pub fn stage1_filter(x: &ApplicantProfile, candidates: &[Recourse], alpha: &Thresholds) -> Vec<Verdict> {
    candidates
        .iter()
        .map(|r| {
            let violations = alpha.violations(x, &r.counterfactual);
            Verdict { acceptable: violations.is_empty(), violations }
        })
        .collect()
}

/// Index of the survivor with the lowest weighted proximity; ties go to
/// lower raw proximity, then lower target leaf id.
pub fn stage2_select(
    survivors: &[&Recourse],
    x: &ApplicantProfile,
    schema: &FeatureSchema,
    w: &FeatureWeights,
) -> Result<usize> {
    let key = |r: &Recourse| (weighted_prox(x, &r.counterfactual, schema, w), prox(x, &r.counterfactual, schema), r.target_leaf);
    survivors
        .iter()
        .enumerate()
        .map(|(i, r)| (i, key(r)))
        .min_by(|(_, a), (_, b)| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)))
        .map(|(i, _)| i)
        .ok_or(Error::NoSurvivors)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "index", rename_all = "snake_case")]
pub enum Outcome {
    /// Two or more survived; index of the stage-2 pick.
    Chosen(usize),
    OnlyOneAcceptable(usize),
    NoneAcceptable,
}

impl Outcome {
    pub fn index(self) -> Option<usize> {
        match self {
            Outcome::Chosen(i) | Outcome::OnlyOneAcceptable(i) => Some(i),
            Outcome::NoneAcceptable => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwpPrediction {
    #[serde(flatten)]
    pub outcome: Outcome,
    pub verdicts: Vec<Verdict>,
    /// Stage-2 cost per candidate; `None` for filtered candidates.
    pub weighted_prox: Vec<Option<f64>>,
}

pub fn predict(
    x: &ApplicantProfile,
    candidates: &[Recourse],
    schema: &FeatureSchema,
    w: &FeatureWeights,
    alpha: &Thresholds,
) -> Result<AwpPrediction> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let verdicts = stage1_filter(x, candidates, alpha);
    let surviving: Vec<usize> = (0..candidates.len()).filter(|&i| verdicts[i].acceptable).collect();
    let weighted = (0..candidates.len())
        .map(|i| verdicts[i].acceptable.then(|| weighted_prox(x, &candidates[i].counterfactual, schema, w)))
        .collect();
    let outcome = match surviving.len() {
        0 => Outcome::NoneAcceptable,
        1 => Outcome::OnlyOneAcceptable(surviving[0]),
        _ => {
            let refs: Vec<&Recourse> = surviving.iter().map(|&i| &candidates[i]).collect();
            Outcome::Chosen(surviving[stage2_select(&refs, x, schema, w)?])
        }
    };
    Ok(AwpPrediction { outcome, verdicts, weighted_prox: weighted })
}
