//! Simulated participants that behave according to AWP with known weights
//! and thresholds, plus logistic choice noise among acceptable options.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Answer, ProbeChoice, ProbeOffer, Scenario};
use crate::awp::{stage2_select, Cap, Thresholds};
use crate::metrics::{weighted_prox, FeatureWeights};
use crate::preference::{Choice, PairwiseComparison};
use crate::recourse::Recourse;
use crate::schema::{ApplicantProfile, Employment, Feature, FeatureSchema};

/// Weighted-proximity difference that one unit of temperature blurs.
pub const NOISE_SCALE: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct SimulatedUser {
    pub weights: FeatureWeights,
    pub thresholds: Thresholds,
    /// Choice temperature; 0 picks the cheaper acceptable side every time.
    pub tau: f64,
    rng: ChaCha8Rng,
}

impl SimulatedUser {
    pub fn new(weights: FeatureWeights, thresholds: Thresholds, tau: f64, seed: u64) -> Self {
        SimulatedUser { weights, thresholds, tau, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Random weights (see [`random_weights`]) and thresholds drawn over
    /// plausible target ranges.
    pub fn random(seed: u64, tau: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = random_weights(&mut rng);
        let thresholds = Thresholds::unbounded()
            .with(Feature::Income, Cap::AtMost(rng.random_range(80_000.0..300_000.0f64).round()))
            .with(Feature::CreditScore, Cap::AtMost(rng.random_range(720..=850) as f64))
            .with(Feature::LoanAmount, Cap::AtLeast(rng.random_range(1_000.0..10_000.0f64).round()))
            .with(Feature::EducationLevel, Cap::AtMost(rng.random_range(2..=4) as f64))
            .with(Feature::EmploymentType, Cap::Levels(Employment::ALL.to_vec()));
        SimulatedUser { weights, thresholds, tau, rng }
    }

    /// A user with no thresholds, who only trades off costs.
    pub fn unconstrained(seed: u64, tau: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = random_weights(&mut rng);
        SimulatedUser { weights, thresholds: Thresholds::unbounded(), tau, rng }
    }

    pub fn acceptable(&self, x: &ApplicantProfile, r: &Recourse) -> bool {
        self.thresholds.admits(x, &r.counterfactual)
    }

    /// Preference between two options, both taken as acceptable.
    fn prefer(&mut self, x: &ApplicantProfile, a: &Recourse, b: &Recourse, schema: &FeatureSchema) -> Choice {
        if self.tau == 0.0 {
            let i = stage2_select(&[a, b], x, schema, &self.weights).expect("two survivors");
            return if i == 0 { Choice::A } else { Choice::B };
        }
        let wa = weighted_prox(x, &a.counterfactual, schema, &self.weights);
        let wb = weighted_prox(x, &b.counterfactual, schema, &self.weights);
        let p_a = 1.0 / (1.0 + ((wa - wb) / (self.tau * NOISE_SCALE)).exp());
        if self.rng.random_bool(p_a.clamp(0.0, 1.0)) {
            Choice::A
        } else {
            Choice::B
        }
    }

    /// AWP answer to a pair: reject both when neither is acceptable, take
    /// the only acceptable side, otherwise choose by cost.
    pub fn answer(&mut self, x: &ApplicantProfile, a: &Recourse, b: &Recourse, schema: &FeatureSchema) -> Answer {
        match (self.acceptable(x, a), self.acceptable(x, b)) {
            (false, false) => Answer::RejectBoth,
            (true, false) => Answer::A,
            (false, true) => Answer::B,
            (true, true) => self.prefer(x, a, b, schema).into(),
        }
    }

    /// Answer when rejecting both is not allowed: acceptability still
    /// decides when exactly one side passes.
    pub fn forced_choice(&mut self, scenario: &Scenario, schema: &FeatureSchema) -> Choice {
        let (x, a, b) = (&scenario.source, &scenario.a, &scenario.b);
        match (self.acceptable(x, a), self.acceptable(x, b)) {
            (true, false) => Choice::A,
            (false, true) => Choice::B,
            _ => self.prefer(x, a, b, schema),
        }
    }

    /// A forced choice recorded as a comparison, flagged when the other side
    /// was turned down for exceeding a threshold.
    pub fn compare(&mut self, scenario: &Scenario, schema: &FeatureSchema) -> PairwiseComparison {
        let choice = self.forced_choice(scenario, schema);
        let other = scenario.side(match choice {
            Choice::A => Choice::B,
            Choice::B => Choice::A,
        });
        PairwiseComparison {
            scenario_id: scenario.id.clone(),
            source: scenario.source,
            a: scenario.a.counterfactual,
            b: scenario.b.counterfactual,
            choice,
            reason: None,
            threshold_exceeded: self.acceptable(&scenario.source, scenario.side(choice)) && !self.acceptable(&scenario.source, other),
        }
    }

    pub fn scenario_answer(&mut self, scenario: &Scenario, schema: &FeatureSchema) -> Answer {
        self.answer(&scenario.source, &scenario.a, &scenario.b, schema)
    }

    pub fn probe_choice(&mut self, offer: &ProbeOffer, schema: &FeatureSchema) -> ProbeChoice {
        let x = offer.a.source;
        let pick = self.answer(&x, &offer.a, &offer.b, schema);
        let threshold_exceeded = match pick {
            Answer::A => !self.acceptable(&x, &offer.b),
            Answer::B => !self.acceptable(&x, &offer.a),
            Answer::RejectBoth => true,
        };
        ProbeChoice { pick, threshold_exceeded }
    }
}

/// A jittered geometric ladder from 1 up to a spread of 2x-4x, randomly
/// assigned to features and normalized to sum to 5. Adjacent weights differ
/// by at least 15%.
pub fn random_weights<R: Rng + ?Sized>(rng: &mut R) -> FeatureWeights {
    let spread: f64 = rng.random_range(2.0f64..4.0).ln();
    let gap = spread / 4.0;
    let mut ladder: Vec<f64> = (0..5)
        .map(|k| {
            let jitter = if k == 0 || k == 4 { 0.0 } else { rng.random_range(-0.1..0.1) * gap };
            (k as f64 * gap + jitter).exp()
        })
        .collect();
    ladder.shuffle(rng);
    let v: [f64; 5] = ladder.try_into().expect("five weights");
    FeatureWeights::new(v).expect("positive weights").normalized()
}
