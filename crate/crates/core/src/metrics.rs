//! Recourse cost functions.
//!
//! `prox` is the unweighted normalized L1 distance; `weighted_prox` scales
//! each normalized delta by a per-feature weight.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{normalized_deltas, ApplicantProfile, Feature, FeatureSchema, NUM_FEATURES};

/// Positive per-feature weights in schema order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureWeights([f64; NUM_FEATURES]);

impl FeatureWeights {
    pub fn new(values: [f64; NUM_FEATURES]) -> Result<Self> {
        for f in Feature::ALL {
            let value = values[f.index()];
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::NonPositiveWeight { feature: f, value });
            }
        }
        Ok(FeatureWeights(values))
    }

    pub fn uniform() -> Self {
        FeatureWeights([1.0; NUM_FEATURES])
    }

    pub fn get(&self, feature: Feature) -> f64 {
        self.0[feature.index()]
    }

    pub fn values(&self) -> [f64; NUM_FEATURES] {
        self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Rescaled so the weights sum to the feature count.
    pub fn normalized(&self) -> Self {
        self.scaled(NUM_FEATURES as f64 / self.sum())
    }

    pub fn scaled(&self, c: f64) -> Self {
        FeatureWeights(self.0.map(|w| w * c))
    }

    pub fn is_uniform(&self) -> bool {
        self.0.iter().all(|&w| w == self.0[0])
    }
}

impl Default for FeatureWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

impl Serialize for FeatureWeights {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(NUM_FEATURES))?;
        for f in Feature::ALL {
            map.serialize_entry(f.name(), &self.0[f.index()])?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for FeatureWeights {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let map = BTreeMap::<Feature, f64>::deserialize(d)?;
        let mut values = [0.0; NUM_FEATURES];
        for f in Feature::ALL {
            values[f.index()] = *map
                .get(&f)
                .ok_or_else(|| D::Error::custom(format!("missing weight for {f}")))?;
        }
        FeatureWeights::new(values).map_err(D::Error::custom)
    }
}

/// Σ |x_i − x′_i| / Range_i.
pub fn prox(x: &ApplicantProfile, x_prime: &ApplicantProfile, schema: &FeatureSchema) -> f64 {
    normalized_deltas(schema, x, x_prime).iter().sum()
}

/// Σ w_i · |x_i − x′_i| / Range_i.
pub fn weighted_prox(
    x: &ApplicantProfile,
    x_prime: &ApplicantProfile,
    schema: &FeatureSchema,
    w: &FeatureWeights,
) -> f64 {
    normalized_deltas(schema, x, x_prime)
        .iter()
        .zip(w.0)
        .map(|(d, w)| d * w)
        .sum()
}

/// Number of features that differ.
pub fn sparsity(x: &ApplicantProfile, x_prime: &ApplicantProfile) -> usize {
    x.changed_features(x_prime).len()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub deltas: [f64; NUM_FEATURES],
    pub prox: f64,
    pub weighted_prox: f64,
    pub sparsity: usize,
}

pub fn cost_report(
    x: &ApplicantProfile,
    x_prime: &ApplicantProfile,
    schema: &FeatureSchema,
    w: &FeatureWeights,
) -> CostReport {
    let deltas = normalized_deltas(schema, x, x_prime);
    CostReport {
        deltas,
        prox: deltas.iter().sum(),
        weighted_prox: deltas.iter().zip(w.0).map(|(d, w)| d * w).sum(),
        sparsity: deltas.iter().filter(|&&d| d > 0.0).count(),
    }
}
