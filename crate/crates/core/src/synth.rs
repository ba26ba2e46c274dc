//! Synthetic loan-application dataset and its desirability-rank labeling.
//!
//! Profiles are sampled feature-by-feature and independently. Labels come
//! from a bank-side desirability score: credit score and the
//! income-to-loan ratio are min-max normalized over the dataset, the two
//! categorical features are mapped to fixed desirability scores, and the
//! weighted sum is ranked. The lower half is rejected, the upper half
//! approved.

use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{ApplicantProfile, Education, Employment};

pub const MEDIAN_INCOME: f64 = 42_000.0;
pub const INCOME_SIGMA: f64 = 0.8;
pub const INCOME_BOUNDS: (f64, f64) = (10_000.0, 500_000.0);
pub const LOAN_BOUNDS: (f64, f64) = (1_000.0, 50_000.0);

/// Binary loan decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Rejected,
    Approved,
}

impl Decision {
    pub fn as_bit(self) -> u8 {
        match self {
            Decision::Rejected => 0,
            Decision::Approved => 1,
        }
    }

    pub fn from_bit(bit: u8) -> Result<Self> {
        match bit {
            0 => Ok(Decision::Rejected),
            1 => Ok(Decision::Approved),
            other => Err(Error::InvalidArtifact(format!("decision must be 0 or 1, got {other}"))),
        }
    }
}

/// Marginal probabilities of the categorical levels, in ordinal-code order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    pub education: [f64; 5],
    pub employment: [f64; 4],
}

impl Default for Marginals {
    fn default() -> Self {
        Marginals {
            education: [0.40, 0.10, 0.30, 0.15, 0.05],
            employment: [0.05, 0.10, 0.70, 0.15],
        }
    }
}

impl Marginals {
    pub fn validate(&self) -> Result<()> {
        for (name, probs) in [("education", &self.education[..]), ("employment", &self.employment[..])] {
            if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidConfig(format!("{name} marginals must be nonnegative")));
            }
            if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!("{name} marginals must sum to 1")));
            }
        }
        Ok(())
    }
}

/// Bank-side weights of the four scoring components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelWeights {
    pub credit_score: f64,
    pub income_ratio: f64,
    pub education: f64,
    pub employment: f64,
}

impl Default for LabelWeights {
    fn default() -> Self {
        LabelWeights { credit_score: 0.40, income_ratio: 0.30, education: 0.15, employment: 0.15 }
    }
}

impl LabelWeights {
    fn as_array(&self) -> [f64; 4] {
        [self.credit_score, self.income_ratio, self.education, self.employment]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingConfig {
    #[serde(default)]
    pub feature_weights: LabelWeights,
    #[serde(default = "default_education_desirability")]
    pub education_desirability: [f64; 5],
    #[serde(default = "default_employment_desirability")]
    pub employment_desirability: [f64; 4],
    #[serde(default)]
    pub marginals: Marginals,
    #[serde(default)]
    pub seed: u64,
}

fn default_education_desirability() -> [f64; 5] {
    [0.0, 0.25, 0.5, 0.75, 1.0]
}

fn default_employment_desirability() -> [f64; 4] {
    [0.0, 0.4, 0.7, 1.0]
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig {
            feature_weights: LabelWeights::default(),
            education_desirability: default_education_desirability(),
            employment_desirability: default_employment_desirability(),
            marginals: Marginals::default(),
            seed: 0,
        }
    }
}

impl LabelingConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.feature_weights.as_array();
        if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig("label weights must be positive".into()));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("label weights must sum to 1".into()));
        }
        let scores = self.education_desirability.iter().chain(&self.employment_desirability);
        if scores.into_iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidConfig("desirability scores must lie in [0, 1]".into()));
        }
        self.marginals.validate()
    }
}

fn round_cents(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Untruncated income distribution: ln-median ln(42 000), σ = 0.8.
pub fn income_distribution() -> LogNormal<f64> {
    LogNormal::new(MEDIAN_INCOME.ln(), INCOME_SIGMA).expect("valid log-normal")
}

/// Samples `n` profiles with the default categorical marginals.
pub fn sample_profiles(n: usize, seed: u64) -> Result<Vec<ApplicantProfile>> {
    sample_profiles_with(n, seed, &Marginals::default())
}

/// Income is log-normal with median 42 000 and σ = 0.8, resampled until it
/// falls in [10 000, 500 000]. Credit score is 850 − 550·Beta(2, 4), which
/// is left-skewed with mean ≈ 667. Loan amount is uniform on
/// [1 000, 50 000]. Monetary values are rounded to cents.
pub fn sample_profiles_with(n: usize, seed: u64, marginals: &Marginals) -> Result<Vec<ApplicantProfile>> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    marginals.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let income = income_distribution();
    let beta = Beta::new(2.0, 4.0).expect("valid beta");
    let education = WeightedIndex::new(marginals.education).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let employment = WeightedIndex::new(marginals.employment).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let inc = loop {
            let v = round_cents(income.sample(&mut rng));
            if (INCOME_BOUNDS.0..=INCOME_BOUNDS.1).contains(&v) {
                break v;
            }
        };
        let b: f64 = beta.sample(&mut rng);
        let credit = (850.0 - 550.0 * b).round() as i32;
        let loan = round_cents(rng.random_range(LOAN_BOUNDS.0..=LOAN_BOUNDS.1));
        let edu = Education::ALL[education.sample(&mut rng)];
        let emp = Employment::ALL[employment.sample(&mut rng)];
        out.push(ApplicantProfile {
            income: inc,
            credit_score: credit,
            employment_type: emp,
            education_level: edu,
            loan_amount: loan,
        });
    }
    Ok(out)
}

/// Min-max statistics of the two continuous scoring components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub credit_min: f64,
    pub credit_max: f64,
}

impl NormStats {
    pub fn from_profiles(profiles: &[ApplicantProfile]) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut s = NormStats {
            ratio_min: f64::INFINITY,
            ratio_max: f64::NEG_INFINITY,
            credit_min: f64::INFINITY,
            credit_max: f64::NEG_INFINITY,
        };
        for p in profiles {
            let r = income_ratio(p);
            let c = f64::from(p.credit_score);
            s.ratio_min = s.ratio_min.min(r);
            s.ratio_max = s.ratio_max.max(r);
            s.credit_min = s.credit_min.min(c);
            s.credit_max = s.credit_max.max(c);
        }
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if !(self.ratio_max > self.ratio_min) {
            return Err(Error::ZeroRange("income_ratio"));
        }
        if !(self.credit_max > self.credit_min) {
            return Err(Error::ZeroRange("credit_score"));
        }
        Ok(())
    }
}

/// Income divided by the amount requested.
pub fn income_ratio(p: &ApplicantProfile) -> f64 {
    p.income / p.loan_amount
}

/// The four normalized scoring components in the order
/// (credit score, income ratio, education, employment). Continuous
/// components are clamped to [0, 1] so profiles outside the reference
/// dataset still score in range.
pub fn desirability_components(p: &ApplicantProfile, cfg: &LabelingConfig, norm: &NormStats) -> Result<[f64; 4]> {
    norm.check()?;
    let minmax = |v: f64, lo: f64, hi: f64| ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    Ok([
        minmax(f64::from(p.credit_score), norm.credit_min, norm.credit_max),
        minmax(income_ratio(p), norm.ratio_min, norm.ratio_max),
        cfg.education_desirability[usize::from(p.education_level.code())],
        cfg.employment_desirability[usize::from(p.employment_type.code())],
    ])
}

pub fn combine_components(components: [f64; 4], weights: &LabelWeights) -> f64 {
    components.iter().zip(weights.as_array()).map(|(c, w)| c * w).sum()
}

/// Bank-side desirability score in [0, 1].
pub fn desirability(p: &ApplicantProfile, cfg: &LabelingConfig, norm: &NormStats) -> Result<f64> {
    Ok(combine_components(desirability_components(p, cfg, norm)?, &cfg.feature_weights))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledProfile {
    pub profile: ApplicantProfile,
    pub desirability: f64,
    pub decision: Decision,
}

/// Labels by desirability rank: a stable ascending sort (ties keep input
/// order), lower half rejected. Output is in input order.
pub fn label_dataset(profiles: &[ApplicantProfile], cfg: &LabelingConfig) -> Result<Vec<LabeledProfile>> {
    cfg.validate()?;
    if profiles.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if profiles.len() % 2 != 0 {
        return Err(Error::OddCount(profiles.len()));
    }
    let norm = NormStats::from_profiles(profiles)?;
    let scores = profiles
        .iter()
        .map(|p| desirability(p, cfg, &norm))
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..profiles.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut decisions = vec![Decision::Approved; profiles.len()];
    for &idx in &order[..profiles.len() / 2] {
        decisions[idx] = Decision::Rejected;
    }
    Ok(profiles
        .iter()
        .zip(scores)
        .zip(decisions)
        .map(|((p, desirability), decision)| LabeledProfile { profile: *p, desirability, decision })
        .collect())
}

pub const DATASET_FORMAT: &str = "recourse-dataset";
pub const DATASET_VERSION: u32 = 1;

/// Provenance header written as the first (comment) line of a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub seed: u64,
    pub config: LabelingConfig,
}

impl DatasetMeta {
    pub fn new(n: usize, config: &LabelingConfig) -> Self {
        DatasetMeta {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            n,
            seed: config.seed,
            config: config.clone(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRow {
    income: f64,
    credit_score: i32,
    employment_type: Employment,
    education_level: Education,
    loan_amount: f64,
    desirability: f64,
    decision: u8,
}

/// Writes the dataset: a `# {meta json}` line, then a CSV header in schema
/// order followed by `desirability,decision`.
pub fn write_dataset_csv<W: Write>(mut w: W, meta: &DatasetMeta, rows: &[LabeledProfile]) -> Result<()> {
    writeln!(w, "# {}", serde_json::to_string(meta)?)?;
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        let p = r.profile;
        csv.serialize(DatasetRow {
            income: p.income,
            credit_score: p.credit_score,
            employment_type: p.employment_type,
            education_level: p.education_level,
            loan_amount: p.loan_amount,
            desirability: r.desirability,
            decision: r.decision.as_bit(),
        })?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: BufRead>(mut r: R) -> Result<(DatasetMeta, Vec<LabeledProfile>)> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let json = first
        .strip_prefix("# ")
        .ok_or_else(|| Error::InvalidArtifact("dataset is missing its provenance header".into()))?;
    let meta: DatasetMeta = serde_json::from_str(json.trim())?;
    if meta.format != DATASET_FORMAT || meta.version != DATASET_VERSION {
        return Err(Error::ArtifactVersion {
            expected: DATASET_FORMAT.into(),
            expected_version: DATASET_VERSION,
            found: meta.format,
            found_version: meta.version,
        });
    }
    let mut csv = csv::Reader::from_reader(r);
    let mut rows = Vec::with_capacity(meta.n);
    for rec in csv.deserialize::<DatasetRow>() {
        let row = rec?;
        rows.push(LabeledProfile {
            profile: ApplicantProfile {
                income: row.income,
                credit_score: row.credit_score,
                employment_type: row.employment_type,
                education_level: row.education_level,
                loan_amount: row.loan_amount,
            },
            desirability: row.desirability,
            decision: Decision::from_bit(row.decision)?,
        });
    }
    if rows.len() != meta.n {
        return Err(Error::InvalidArtifact(format!("header declares {} rows, found {}", meta.n, rows.len())));
    }
    Ok((meta, rows))
}

/// Samples and labels in one step.
pub fn synthesize(n: usize, cfg: &LabelingConfig) -> Result<Vec<LabeledProfile>> {
    let profiles = sample_profiles_with(n, cfg.seed, &cfg.marginals)?;
    label_dataset(&profiles, cfg)
}
