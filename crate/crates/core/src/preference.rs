//! Bradley-Terry preference learning over pairwise recourse choices.
//!
//! A recourse `r` has utility `s(r) = Σ β_i·Δ̃_i(r)` where `Δ̃_i` is the
//! normalized change of feature `i`, and `P(A over B) = σ(s(A) − s(B))`.
//! Features a user is happy to change get larger β; their cost weight is
//! `w_i = −β_i` after flooring and rescaling.

use nalgebra::{Matrix5, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::FeatureWeights;
use crate::schema::{normalized_deltas, ApplicantProfile, Feature, FeatureSchema, NUM_FEATURES};

/// Smallest weight after flooring.
pub const WEIGHT_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub scenario_id: String,
    pub source: ApplicantProfile,
    pub a: ApplicantProfile,
    pub b: ApplicantProfile,
    pub choice: Choice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// The other side was turned down as going too far, so the choice says
    /// nothing about relative costs.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub threshold_exceeded: bool,
}

impl PairwiseComparison {
    pub fn chosen(&self) -> &ApplicantProfile {
        match self.choice {
            Choice::A => &self.a,
            Choice::B => &self.b,
        }
    }

    pub fn other(&self) -> &ApplicantProfile {
        match self.choice {
            Choice::A => &self.b,
            Choice::B => &self.a,
        }
    }

    /// `Δ̃(chosen) − Δ̃(other)`; the model's log-odds of the observed choice
    /// is `β·z`.
    pub fn difference(&self, schema: &FeatureSchema) -> [f64; NUM_FEATURES] {
        let c = normalized_deltas(schema, &self.source, self.chosen());
        let o = normalized_deltas(schema, &self.source, self.other());
        std::array::from_fn(|i| c[i] - o[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// L2 strength on β.
    pub reg: f64,
    /// Gradient ∞-norm at which the fit stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { reg: 1e-3, tol: 1e-8, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtModel {
    pub beta: [f64; NUM_FEATURES],
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub reg: f64,
    pub comparisons: usize,
    /// Penalized objective after each accepted step, starting at β = 0.
    #[serde(default, skip_serializing)]
    pub objective_trace: Vec<f64>,
}

impl BtModel {
    pub fn beta_of(&self, feature: Feature) -> f64 {
        self.beta[feature.index()]
    }

    /// Probability of choosing `a` over `b` from `source`.
    pub fn prob_a(&self, schema: &FeatureSchema, source: &ApplicantProfile, a: &ApplicantProfile, b: &ApplicantProfile) -> f64 {
        let da = normalized_deltas(schema, source, a);
        let db = normalized_deltas(schema, source, b);
        let t: f64 = (0..NUM_FEATURES).map(|i| self.beta[i] * (da[i] - db[i])).sum();
        sigmoid(t)
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log σ(t)` without overflow.
fn log_sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

struct Problem {
    z: Vec<Vector5<f64>>,
    reg: f64,
}

impl Problem {
    fn log_likelihood(&self, beta: &Vector5<f64>) -> f64 {
        self.z.iter().map(|z| log_sigmoid(beta.dot(z))).sum()
    }

    fn objective(&self, beta: &Vector5<f64>) -> f64 {
        self.log_likelihood(beta) - self.reg * beta.norm_squared()
    }

    /// Gradient and negated Hessian of the objective.
    fn derivatives(&self, beta: &Vector5<f64>) -> (Vector5<f64>, Matrix5<f64>) {
        let mut g = -2.0 * self.reg * beta;
        let mut m = Matrix5::identity() * (2.0 * self.reg);
        for z in &self.z {
            let p = sigmoid(beta.dot(z));
            g += (1.0 - p) * z;
            m += (p * (1.0 - p)) * z * z.transpose();
        }
        (g, m)
    }
}

/// Penalized maximum-likelihood fit by damped Newton ascent from β = 0.
///
/// Comparisons flagged `threshold_exceeded` are left out. When every
/// remaining comparison has a zero difference vector the data carry no
/// information: β stays at 0 and `converged` is false.
pub fn fit_bt(comparisons: &[PairwiseComparison], schema: &FeatureSchema, opts: &FitOptions) -> Result<BtModel> {
    let comparisons: Vec<&PairwiseComparison> = comparisons.iter().filter(|c| !c.threshold_exceeded).collect();
    if comparisons.is_empty() {
        return Err(Error::EmptyComparisons);
    }
    if !(opts.reg >= 0.0 && opts.reg.is_finite()) || !(opts.tol > 0.0) {
        return Err(Error::InvalidConfig("reg must be >= 0 and tol > 0".into()));
    }
    for c in &comparisons {
        if c.a == c.b {
            return Err(Error::InvalidArtifact(format!("comparison {} offers identical recourses", c.scenario_id)));
        }
    }
    let problem = Problem {
        z: comparisons.iter().map(|c| Vector5::from(c.difference(schema))).collect(),
        reg: opts.reg,
    };
    let mut beta = Vector5::zeros();
    let mut objective = problem.objective(&beta);
    let mut trace = vec![objective];

    if problem.z.iter().all(|z| z.amax() == 0.0) {
        return Ok(BtModel {
            beta: [0.0; NUM_FEATURES],
            log_likelihood: problem.log_likelihood(&beta),
            iterations: 0,
            converged: false,
            reg: opts.reg,
            comparisons: comparisons.len(),
            objective_trace: trace,
        });
    }

    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let (g, m) = problem.derivatives(&beta);
        if g.amax() < opts.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let step = match m.cholesky() {
            Some(chol) => chol.solve(&g),
            None => g,
        };
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = beta + t * step;
            let value = problem.objective(&candidate);
            if value >= objective + 1e-4 * t * slope {
                accepted = Some((candidate, value));
                break;
            }
            t *= 0.5;
        }
        let Some((next, value)) = accepted else {
            // no ascent possible at floating-point resolution
            converged = g.amax() < opts.tol.sqrt();
            break;
        };
        beta = next;
        objective = value;
        trace.push(objective);
    }

    Ok(BtModel {
        beta: beta.into(),
        log_likelihood: problem.log_likelihood(&beta),
        iterations,
        converged,
        reg: opts.reg,
        comparisons: comparisons.len(),
        objective_trace: trace,
    })
}

/// Cost weights from a fitted model: `−β`, shifted to be nonnegative when
/// some entry is not positive, then floored at [`WEIGHT_FLOOR`] and rescaled
/// to sum to the feature count. A zero β gives uniform weights.
pub fn weights_from_beta(model: &BtModel) -> FeatureWeights {
    weights_from_raw(model.beta.map(|b| -b))
}

/// The flooring and rescaling step of [`weights_from_beta`], applied to raw
/// costs `−β`.
pub fn weights_from_raw(raw: [f64; NUM_FEATURES]) -> FeatureWeights {
    let d = NUM_FEATURES as f64;
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let v = if min > 0.0 { raw } else { raw.map(|r| r - min) };
    let sum: f64 = v.iter().sum();
    if !(sum > 0.0 && sum.is_finite()) {
        return FeatureWeights::uniform();
    }
    let m = v.iter().copied().fold(f64::INFINITY, f64::min);
    let c = if d * m / sum >= WEIGHT_FLOOR {
        0.0
    } else {
        (WEIGHT_FLOOR / d * sum - m) / (1.0 - WEIGHT_FLOOR)
    };
    let scale = d / (sum + d * c);
    let w = v.map(|vi| ((vi + c) * scale).max(WEIGHT_FLOOR));
    FeatureWeights::new(w).expect("weights are at least the floor")
}

/// Kendall rank correlation (tau-b) between two score vectors.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "kendall_tau needs equal-length inputs");
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = (a[i] - a[j]).partial_cmp(&0.0).unwrap_or(std::cmp::Ordering::Equal);
            let db = (b[i] - b[j]).partial_cmp(&0.0).unwrap_or(std::cmp::Ordering::Equal);
            use std::cmp::Ordering::Equal;
            match (da, db) {
                (Equal, Equal) => {}
                (Equal, _) => ties_a += 1,
                (_, Equal) => ties_b += 1,
                (x, y) if x == y => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (concordant + discordant + ties_a) as f64;
    let n1 = (concordant + discordant + ties_b) as f64;
    if n0 == 0.0 || n1 == 0.0 {
        return 0.0;
    }
    (concordant - discordant) as f64 / (n0 * n1).sqrt()
}
