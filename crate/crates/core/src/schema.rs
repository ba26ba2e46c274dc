//! The five-feature credit schema, applicant profiles and per-feature
//! normalization ranges.
//!
//! Every feature has a numeric encoding: continuous features use their raw
//! value, categorical features use an ordinal code ordered by desirability.
//! Tree thresholds, leaf intervals and distances all live in this encoding.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of features in the credit schema.
pub const NUM_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Income,
    CreditScore,
    EmploymentType,
    EducationLevel,
    LoanAmount,
}

impl Feature {
    /// Schema order.
    pub const ALL: [Feature; NUM_FEATURES] = [
        Feature::Income,
        Feature::CreditScore,
        Feature::EmploymentType,
        Feature::EducationLevel,
        Feature::LoanAmount,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Feature> {
        Feature::ALL.get(i).copied().ok_or(Error::FeatureIndex(i))
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Income => "income",
            Feature::CreditScore => "credit_score",
            Feature::EmploymentType => "employment_type",
            Feature::EducationLevel => "education_level",
            Feature::LoanAmount => "loan_amount",
        }
    }

    /// Integer-valued in the numeric encoding (credit score and the two
    /// categorical codes).
    pub fn is_integer(self) -> bool {
        !matches!(self, Feature::Income | Feature::LoanAmount)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Employment {
    Unemployed,
    SelfEmployed,
    Private,
    Government,
}

impl Employment {
    pub const ALL: [Employment; 4] = [
        Employment::Unemployed,
        Employment::SelfEmployed,
        Employment::Private,
        Employment::Government,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: i64) -> Result<Self> {
        usize::try_from(code)
            .ok()
            .and_then(|c| Self::ALL.get(c).copied())
            .ok_or(Error::InvalidLevel {
                feature: Feature::EmploymentType,
                code,
            })
    }

    pub fn label(self) -> &'static str {
        match self {
            Employment::Unemployed => "Unemployed",
            Employment::SelfEmployed => "Self-employed",
            Employment::Private => "Private",
            Employment::Government => "Government",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Education {
    HighSchool,
    Associate,
    Bachelor,
    Master,
    Doctorate,
}

impl Education {
    pub const ALL: [Education; 5] = [
        Education::HighSchool,
        Education::Associate,
        Education::Bachelor,
        Education::Master,
        Education::Doctorate,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: i64) -> Result<Self> {
        usize::try_from(code)
            .ok()
            .and_then(|c| Self::ALL.get(c).copied())
            .ok_or(Error::InvalidLevel {
                feature: Feature::EducationLevel,
                code,
            })
    }

    pub fn label(self) -> &'static str {
        match self {
            Education::HighSchool => "High school",
            Education::Associate => "Associate",
            Education::Bachelor => "Bachelor",
            Education::Master => "Master",
            Education::Doctorate => "Doctorate",
        }
    }
}

/// One loan application.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApplicantProfile {
    /// USD per year.
    pub income: f64,
    pub credit_score: i32,
    pub employment_type: Employment,
    pub education_level: Education,
    /// USD requested.
    pub loan_amount: f64,
}

impl ApplicantProfile {
    /// Value of `feature` in the numeric encoding.
    pub fn value(&self, feature: Feature) -> f64 {
        match feature {
            Feature::Income => self.income,
            Feature::CreditScore => f64::from(self.credit_score),
            Feature::EmploymentType => f64::from(self.employment_type.code()),
            Feature::EducationLevel => f64::from(self.education_level.code()),
            Feature::LoanAmount => self.loan_amount,
        }
    }

    pub fn values(&self) -> [f64; NUM_FEATURES] {
        Feature::ALL.map(|f| self.value(f))
    }

    /// Copy with `feature` set from its numeric encoding. Integer features
    /// are rounded to the nearest integer.
    pub fn with_value(&self, feature: Feature, value: f64) -> Result<Self> {
        let mut out = *self;
        match feature {
            Feature::Income => out.income = value,
            Feature::CreditScore => out.credit_score = value.round() as i32,
            Feature::EmploymentType => out.employment_type = Employment::from_code(value.round() as i64)?,
            Feature::EducationLevel => out.education_level = Education::from_code(value.round() as i64)?,
            Feature::LoanAmount => out.loan_amount = value,
        }
        Ok(out)
    }

    pub fn from_values(values: [f64; NUM_FEATURES]) -> Result<Self> {
        Ok(ApplicantProfile {
            income: values[0],
            credit_score: values[1].round() as i32,
            employment_type: Employment::from_code(values[2].round() as i64)?,
            education_level: Education::from_code(values[3].round() as i64)?,
            loan_amount: values[4],
        })
    }

    /// Features whose values differ between the two profiles.
    pub fn changed_features(&self, other: &ApplicantProfile) -> Vec<Feature> {
        Feature::ALL
            .into_iter()
            .filter(|&f| self.value(f) != other.value(f))
            .collect()
    }
}

/// Which way a recourse may move a feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    IncreaseOnly,
    DecreaseOnly,
    Any,
}

impl Direction {
    pub fn allows(self, from: f64, to: f64) -> bool {
        match self {
            Direction::IncreaseOnly => to >= from,
            Direction::DecreaseOnly => to <= from,
            Direction::Any => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub name: String,
    pub code: u8,
    pub desirability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous { min: f64, max: f64, integer: bool },
    Categorical { levels: Vec<Level> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: Feature,
    #[serde(flatten)]
    pub kind: FeatureKind,
    pub direction: Direction,
    pub unit: String,
}

impl FeatureSpec {
    /// Bounds in the numeric encoding.
    pub fn bounds(&self) -> (f64, f64) {
        match &self.kind {
            FeatureKind::Continuous { min, max, .. } => (*min, *max),
            FeatureKind::Categorical { levels } => {
                let lo = levels.iter().map(|l| l.code).min().unwrap_or(0);
                let hi = levels.iter().map(|l| l.code).max().unwrap_or(0);
                (f64::from(lo), f64::from(hi))
            }
        }
    }

    /// Normalization range: max − min for continuous, levels − 1 for categorical.
    pub fn range(&self) -> f64 {
        match &self.kind {
            FeatureKind::Continuous { min, max, .. } => max - min,
            FeatureKind::Categorical { levels } => levels.len() as f64 - 1.0,
        }
    }

    pub fn is_integer(&self) -> bool {
        match &self.kind {
            FeatureKind::Continuous { integer, .. } => *integer,
            FeatureKind::Categorical { .. } => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
}

impl FeatureSchema {
    /// The credit schema: income, credit score, employment, education, loan amount.
    pub fn credit() -> Self {
        let levels = |names: &[(&str, f64)]| {
            names
                .iter()
                .enumerate()
                .map(|(code, (name, desirability))| Level {
                    name: (*name).to_owned(),
                    code: code as u8,
                    desirability: *desirability,
                })
                .collect::<Vec<_>>()
        };
        FeatureSchema {
            features: vec![
                FeatureSpec {
                    name: Feature::Income,
                    kind: FeatureKind::Continuous { min: 10_000.0, max: 500_000.0, integer: false },
                    direction: Direction::IncreaseOnly,
                    unit: "USD/year".into(),
                },
                FeatureSpec {
                    name: Feature::CreditScore,
                    kind: FeatureKind::Continuous { min: 300.0, max: 850.0, integer: true },
                    direction: Direction::IncreaseOnly,
                    unit: "points".into(),
                },
                FeatureSpec {
                    name: Feature::EmploymentType,
                    kind: FeatureKind::Categorical {
                        levels: levels(&[
                            ("unemployed", 0.0),
                            ("self_employed", 0.4),
                            ("private", 0.7),
                            ("government", 1.0),
                        ]),
                    },
                    direction: Direction::Any,
                    unit: "level".into(),
                },
                FeatureSpec {
                    name: Feature::EducationLevel,
                    kind: FeatureKind::Categorical {
                        levels: levels(&[
                            ("high_school", 0.0),
                            ("associate", 0.25),
                            ("bachelor", 0.5),
                            ("master", 0.75),
                            ("doctorate", 1.0),
                        ]),
                    },
                    direction: Direction::IncreaseOnly,
                    unit: "level".into(),
                },
                FeatureSpec {
                    name: Feature::LoanAmount,
                    kind: FeatureKind::Continuous { min: 1_000.0, max: 50_000.0, integer: false },
                    direction: Direction::DecreaseOnly,
                    unit: "USD".into(),
                },
            ],
        }
    }

    pub fn d(&self) -> usize {
        self.features.len()
    }

    pub fn spec(&self, feature: Feature) -> &FeatureSpec {
        &self.features[feature.index()]
    }

    pub fn range(&self, feature: Feature) -> f64 {
        self.spec(feature).range()
    }

    pub fn ranges(&self) -> [f64; NUM_FEATURES] {
        Feature::ALL.map(|f| self.range(f))
    }

    pub fn bounds(&self, feature: Feature) -> (f64, f64) {
        self.spec(feature).bounds()
    }

    pub fn direction(&self, feature: Feature) -> Direction {
        self.spec(feature).direction
    }

    /// Checks the structural invariants of the schema itself.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.features.len() != NUM_FEATURES {
            return bad(format!("schema must have {NUM_FEATURES} features, found {}", self.features.len()));
        }
        for (spec, expected) in self.features.iter().zip(Feature::ALL) {
            if spec.name != expected {
                return bad(format!("feature {} out of order, expected {}", spec.name, expected));
            }
            match &spec.kind {
                FeatureKind::Continuous { min, max, .. } => {
                    if !(min < max) {
                        return bad(format!("{}: min must be below max", spec.name));
                    }
                }
                FeatureKind::Categorical { levels } => {
                    if levels.len() < 2 {
                        return bad(format!("{}: needs at least two levels", spec.name));
                    }
                    for (i, level) in levels.iter().enumerate() {
                        if usize::from(level.code) != i {
                            return bad(format!("{}: level codes must be 0..n in order", spec.name));
                        }
                        if !(0.0..=1.0).contains(&level.desirability) {
                            return bad(format!("{}: desirability outside [0, 1]", spec.name));
                        }
                    }
                }
            }
            if !(spec.range() > 0.0) {
                return bad(format!("{}: range must be positive", spec.name));
            }
        }
        Ok(())
    }
}

/// Shared instance of [`FeatureSchema::credit`].
pub fn credit_schema() -> &'static FeatureSchema {
    static SCHEMA: OnceLock<FeatureSchema> = OnceLock::new();
    SCHEMA.get_or_init(FeatureSchema::credit)
}

/// `|x_i − x′_i| / Range_i` for feature index `i`.
pub fn normalized_delta(
    schema: &FeatureSchema,
    x: &ApplicantProfile,
    x_prime: &ApplicantProfile,
    i: usize,
) -> Result<f64> {
    let feature = Feature::from_index(i)?;
    Ok((x.value(feature) - x_prime.value(feature)).abs() / schema.range(feature))
}

/// All five normalized deltas in schema order.
pub fn normalized_deltas(
    schema: &FeatureSchema,
    x: &ApplicantProfile,
    x_prime: &ApplicantProfile,
) -> [f64; NUM_FEATURES] {
    Feature::ALL.map(|f| (x.value(f) - x_prime.value(f)).abs() / schema.range(f))
}

/// A single violated schema bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub feature: Feature,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Formats a bound with `_` thousands separators, e.g. `1_000`.
fn fmt_bound(v: f64) -> String {
    if v.fract() != 0.0 {
        return v.to_string();
    }
    let digits = format!("{}", v.abs() as u64);
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push('_');
        }
        out.push(c);
    }
    if v < 0.0 {
        out.insert(0, '-');
    }
    out
}

/// Every schema bound the profile violates; empty when the profile is valid.
/// Categorical levels are valid by construction.
pub fn validate_profile(schema: &FeatureSchema, x: &ApplicantProfile) -> Vec<Violation> {
    let mut out = Vec::new();
    for spec in &schema.features {
        if let FeatureKind::Continuous { min, max, .. } = spec.kind {
            let v = x.value(spec.name);
            let message = if !v.is_finite() {
                Some(format!("{} is not finite", spec.name))
            } else if v < min {
                Some(format!("{} < {}", spec.name, fmt_bound(min)))
            } else if v > max {
                Some(format!("{} > {}", spec.name, fmt_bound(max)))
            } else {
                None
            };
            if let Some(message) = message {
                out.push(Violation { feature: spec.name, message });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn profile() -> ApplicantProfile {
        ApplicantProfile {
            income: 50_000.0,
            credit_score: 700,
            employment_type: Employment::Private,
            education_level: Education::HighSchool,
            loan_amount: 10_000.0,
        }
    }

    #[test]
    fn credit_schema_is_valid() {
        let schema = FeatureSchema::credit();
        schema.validate().unwrap();
        assert_eq!(schema.d(), 5);
        assert_eq!(schema.ranges(), [490_000.0, 550.0, 3.0, 4.0, 49_000.0]);
    }

    #[test]
    fn identical_profiles_have_zero_delta() {
        let s = credit_schema();
        let x = profile();
        for i in 0..5 {
            assert_eq!(normalized_delta(s, &x, &x, i).unwrap(), 0.0);
        }
    }

    #[test]
    fn income_delta_is_normalized_by_range() {
        let s = credit_schema();
        let x = profile();
        let y = ApplicantProfile { income: 54_900.0, ..x };
        let d = normalized_delta(s, &x, &y, 0).unwrap();
        assert!((d - 0.01).abs() < 1e-15);
    }

    #[test]
    fn education_delta_uses_ordinal_codes() {
        let s = credit_schema();
        let x = profile();
        let y = ApplicantProfile { education_level: Education::Master, ..x };
        assert_eq!(normalized_delta(s, &x, &y, 3).unwrap(), 0.75);
    }

    #[test]
    fn feature_index_out_of_range() {
        let x = profile();
        assert!(matches!(normalized_delta(credit_schema(), &x, &x, 5), Err(Error::FeatureIndex(5))));
    }

    #[test]
    fn validation_messages() {
        let s = credit_schema();
        assert!(validate_profile(s, &profile()).is_empty());

        let v = validate_profile(s, &ApplicantProfile { credit_score: 900, ..profile() });
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, "credit_score > 850");

        let v = validate_profile(s, &ApplicantProfile { loan_amount: 0.0, ..profile() });
        assert_eq!(v[0].message, "loan_amount < 1_000");

        let v = validate_profile(
            s,
            &ApplicantProfile { income: 5.0, credit_score: 100, ..profile() },
        );
        assert_eq!(v.len(), 2);
        let v = validate_profile(s, &ApplicantProfile { income: f64::NAN, ..profile() });
        assert_eq!(v[0].message, "income is not finite");
    }

    #[test]
    fn numeric_encoding_roundtrip() {
        let x = ApplicantProfile { employment_type: Employment::Government, ..profile() };
        assert_eq!(ApplicantProfile::from_values(x.values()).unwrap(), x);
        assert!(x.with_value(Feature::EducationLevel, 7.0).is_err());
        let y = x.with_value(Feature::CreditScore, 701.0).unwrap();
        assert_eq!(x.changed_features(&y), vec![Feature::CreditScore]);
    }

    #[test]
    fn profile_json_is_flat() {
        let json = serde_json::to_value(profile()).unwrap();
        assert_eq!(json["employment_type"], "private");
        assert_eq!(json["education_level"], "high_school");
        assert_eq!(json["credit_score"], 700);
    }

    #[test]
    fn direction_rules() {
        let s = credit_schema();
        assert_eq!(s.direction(Feature::Income), Direction::IncreaseOnly);
        assert_eq!(s.direction(Feature::CreditScore), Direction::IncreaseOnly);
        assert_eq!(s.direction(Feature::LoanAmount), Direction::DecreaseOnly);
        assert_eq!(s.direction(Feature::EducationLevel), Direction::IncreaseOnly);
        assert_eq!(s.direction(Feature::EmploymentType), Direction::Any);
        assert!(!Direction::DecreaseOnly.allows(10.0, 11.0));
    }
}
