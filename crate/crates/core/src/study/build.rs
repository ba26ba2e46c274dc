//! Scenario builders.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{diverges, global_weights, random_weights, Scenario, ScenarioKind, StudyContext};
use crate::error::Result;
use crate::metrics::{weighted_prox, FeatureWeights};
use crate::recourse::{all_feasible, generate_top_k, rounded_variant, Recourse};
use crate::schema::{ApplicantProfile, Feature};

/// Features whose thresholds the probing protocol can locate.
pub const PROBEABLE: [Feature; 4] = [Feature::Income, Feature::CreditScore, Feature::LoanAmount, Feature::EducationLevel];

/// Feature pairs cycled through by the probing builder. The first two
/// already cover every probeable feature.
const PROBE_PAIRS: [[Feature; 2]; 6] = [
    [Feature::Income, Feature::CreditScore],
    [Feature::LoanAmount, Feature::EducationLevel],
    [Feature::Income, Feature::LoanAmount],
    [Feature::CreditScore, Feature::EducationLevel],
    [Feature::Income, Feature::EducationLevel],
    [Feature::CreditScore, Feature::LoanAmount],
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSelection {
    /// Any qualifying pair, uniformly.
    #[default]
    Random,
    /// The qualifying pair whose weighted costs differ most, relative to
    /// their sum.
    MaxMargin,
}

/// How trade-off pairs are picked from a source's qualifying pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TradeoffOptions {
    pub selection: PairSelection,
    /// Smallest relative weighted-cost gap `|wa − wb| / (wa + wb)` a pair
    /// needs under the construction weights.
    pub min_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub scenarios: Vec<Scenario>,
    pub requested: usize,
    /// Fewer scenarios than requested could be built.
    pub partial: bool,
}

impl Batch {
    fn new(scenarios: Vec<Scenario>, requested: usize) -> Self {
        let partial = scenarios.len() < requested;
        Batch { scenarios, requested, partial }
    }
}

/// Candidate sources in a seeded random order.
fn sources(ctx: &StudyContext, rng: &mut ChaCha8Rng) -> Vec<ApplicantProfile> {
    sample(rng, ctx.pool.len(), ctx.pool.len()).into_iter().map(|i| ctx.pool[i]).collect()
}

fn relative_margin(x: &ApplicantProfile, a: &Recourse, b: &Recourse, ctx: &StudyContext, w: &FeatureWeights) -> f64 {
    let wa = weighted_prox(x, &a.counterfactual, &ctx.schema, w);
    let wb = weighted_prox(x, &b.counterfactual, &ctx.schema, w);
    (wa - wb).abs() / (wa + wb)
}

fn maybe_swap(a: Recourse, b: Recourse, rng: &mut ChaCha8Rng) -> (Recourse, Recourse) {
    if rng.random_bool(0.5) {
        (b, a)
    } else {
        (a, b)
    }
}

/// Pairs from the top-K (by raw proximity) recourses of rejected profiles
/// where raw and `w`-weighted proximity pick different sides. Each source
/// contributes at most one scenario. Uniform weights admit no such pair.
pub fn build_tradeoff_scenarios(
    ctx: &StudyContext,
    w: &FeatureWeights,
    n: usize,
    seed: u64,
    opts: &TradeoffOptions,
    id_prefix: &str,
) -> Result<Batch> {
    let mut out = Vec::with_capacity(n);
    if w.is_uniform() || n == 0 {
        return Ok(Batch::new(out, n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for x in sources(ctx, &mut rng) {
        if out.len() == n {
            break;
        }
        let top = generate_top_k(&ctx.tree, &x, &ctx.schema, &ctx.generation, None)?.recourses;
        let mut pairs = Vec::new();
        for i in 0..top.len() {
            for j in i + 1..top.len() {
                if diverges(&x, &top[i], &top[j], &ctx.schema, w)
                    && relative_margin(&x, &top[i], &top[j], ctx, w) >= opts.min_margin
                {
                    pairs.push((i, j));
                }
            }
        }
        if pairs.is_empty() {
            continue;
        }
        let (i, j) = match opts.selection {
            PairSelection::Random => pairs[rng.random_range(0..pairs.len())],
            PairSelection::MaxMargin => *pairs
                .iter()
                .max_by(|p, q| {
                    relative_margin(&x, &top[p.0], &top[p.1], ctx, w)
                        .total_cmp(&relative_margin(&x, &top[q.0], &top[q.1], ctx, w))
                })
                .expect("pairs is nonempty"),
        };
        let (a, b) = maybe_swap(top[i].clone(), top[j].clone(), &mut rng);
        let id = format!("{id_prefix}tradeoff-{:03}", out.len());
        out.push(Scenario::new(id, ScenarioKind::Tradeoff, a, b, &ctx.schema, w, None));
    }
    Ok(Batch::new(out, n))
}

/// Pairs of single-feature recourses on two different probeable features.
/// Each side is the cheapest single-feature recourse for its feature, and
/// the pair's relative weighted-cost gap is at least `min_margin`. Feature
/// pairs are cycled through; until every probeable feature is covered (or
/// `50·n` sources have been tried) pairs adding no new feature are held
/// back and only used to fill the batch at the end.
pub fn build_probing_scenarios(
    ctx: &StudyContext,
    w: &FeatureWeights,
    n: usize,
    seed: u64,
    min_margin: f64,
    id_prefix: &str,
) -> Result<Batch> {
    let mut picked: Vec<(Recourse, Recourse, [Feature; 2])> = Vec::with_capacity(n);
    let mut held = Vec::new();
    let mut covered: Vec<Feature> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (tried, x) in sources(ctx, &mut rng).into_iter().enumerate() {
        if picked.len() == n {
            break;
        }
        let mut cheapest: [Option<Recourse>; 5] = Default::default();
        for r in all_feasible(&ctx.tree, &x, &ctx.schema, &ctx.generation, None)? {
            if let [f] = r.changed_features()[..] {
                if PROBEABLE.contains(&f) && cheapest[f.index()].is_none() {
                    cheapest[f.index()] = Some(r);
                }
            }
        }
        let start = picked.len() % PROBE_PAIRS.len();
        let fresh = |p: &[Feature; 2]| p.iter().filter(|f| !covered.contains(f)).count();
        let candidates: Vec<[Feature; 2]> = (0..PROBE_PAIRS.len())
            .map(|k| PROBE_PAIRS[(start + k) % PROBE_PAIRS.len()])
            .filter(|[f, g]| match (&cheapest[f.index()], &cheapest[g.index()]) {
                (Some(a), Some(b)) => relative_margin(&x, a, b, ctx, w) >= min_margin,
                _ => false,
            })
            .collect();
        let Some(best) = candidates.iter().map(fresh).max() else { continue };
        let [f, g] = candidates.into_iter().find(|p| fresh(p) == best).expect("best is attained");
        let pair = (cheapest[f.index()].take().unwrap(), cheapest[g.index()].take().unwrap(), [f, g]);
        let searching = covered.len() < PROBEABLE.len() && tried < 50 * n;
        if best == 0 && searching {
            if held.len() < n {
                held.push(pair);
            }
            continue;
        }
        covered.extend([f, g].into_iter().filter(|f| !covered.contains(f)).collect::<Vec<_>>());
        picked.push(pair);
    }
    let room = n - picked.len();
    picked.extend(held.into_iter().take(room));
    let out = picked
        .into_iter()
        .enumerate()
        .map(|(k, (ra, rb, [f, g]))| {
            let (a, b, probed) = if rng.random_bool(0.5) { (rb, ra, [g, f]) } else { (ra, rb, [f, g]) };
            let id = format!("{id_prefix}probing-{k:03}");
            Scenario::new(id, ScenarioKind::Probing, a, b, &ctx.schema, w, Some(probed))
        })
        .collect();
    Ok(Batch::new(out, n))
}

/// A precise recourse (A) against its rounded variant (B). A is the
/// cheapest recourse under `w` whose rounded variant exists and differs.
pub fn build_rounding_scenarios(
    ctx: &StudyContext,
    w: &FeatureWeights,
    n: usize,
    seed: u64,
    id_prefix: &str,
) -> Result<Batch> {
    let mut out = Vec::with_capacity(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for x in sources(ctx, &mut rng) {
        if out.len() == n {
            break;
        }
        let top = generate_top_k(&ctx.tree, &x, &ctx.schema, &ctx.generation, Some(w))?.recourses;
        let pair = top.into_iter().find_map(|a| {
            let b = rounded_variant(&a, &ctx.generation, &ctx.tree, &ctx.schema, w)?;
            (b.counterfactual != a.counterfactual).then_some((a, b))
        });
        if let Some((a, b)) = pair {
            let id = format!("{id_prefix}rounding-{:03}", out.len());
            out.push(Scenario::new(id, ScenarioKind::Rounding, a, b, &ctx.schema, w, None));
        }
    }
    Ok(Batch::new(out, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Composition {
    pub tradeoff: usize,
    pub probing: usize,
    pub rounding: usize,
}

impl Default for Composition {
    fn default() -> Self {
        Composition { tradeoff: 15, probing: 10, rounding: 10 }
    }
}

impl Composition {
    pub fn total(&self) -> usize {
        self.tradeoff + self.probing + self.rounding
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Session2Options {
    pub composition: Composition,
    /// Relative weighted-cost gap required of trade-off and probing pairs
    /// under the learned weights. Rounding pairs are dominated on every
    /// changed feature and need none.
    pub min_margin: f64,
}

impl Default for Session2Options {
    fn default() -> Self {
        Session2Options { composition: Composition::default(), min_margin: 0.0 }
    }
}

/// The personalized second-session batch: trade-off pairs built with the
/// learned weights (largest-margin pair per source), then probing, then
/// rounding scenarios.
pub fn build_session2(ctx: &StudyContext, w_hat: &FeatureWeights, opts: &Session2Options, seed: u64) -> Result<Batch> {
    let c = &opts.composition;
    let tradeoff = TradeoffOptions { selection: PairSelection::MaxMargin, min_margin: opts.min_margin };
    let t = build_tradeoff_scenarios(ctx, w_hat, c.tradeoff, seed, &tradeoff, "s2-")?;
    let p = build_probing_scenarios(ctx, w_hat, c.probing, seed.wrapping_add(1), opts.min_margin, "s2-")?;
    let r = build_rounding_scenarios(ctx, w_hat, c.rounding, seed.wrapping_add(2), "s2-")?;
    let scenarios = t.scenarios.into_iter().chain(p.scenarios).chain(r.scenarios).collect();
    Ok(Batch::new(scenarios, c.total()))
}

/// How first-session pairs are generated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Session1Design {
    /// Trade-off pairs under the global construction weights.
    #[default]
    GlobalTradeoff,
    /// Trade-off pairs, each under its own random construction weights.
    RandomizedTradeoff,
    /// Alternating plain pairs of top-K recourses and randomized trade-off
    /// pairs.
    Mixed,
}

/// A plain pair of distinct top-K recourses of one source, sides in random
/// order.
fn plain_pair(ctx: &StudyContext, rng: &mut ChaCha8Rng, w: &FeatureWeights, id: String) -> Result<Option<Scenario>> {
    let x = ctx.pool[rng.random_range(0..ctx.pool.len())];
    let top = generate_top_k(&ctx.tree, &x, &ctx.schema, &ctx.generation, None)?.recourses;
    if top.len() < 2 {
        return Ok(None);
    }
    let picked = sample(rng, top.len(), 2);
    let (a, b) = (top[picked.index(0)].clone(), top[picked.index(1)].clone());
    Ok(Some(Scenario::new(id, ScenarioKind::Comparison, a, b, &ctx.schema, w, None)))
}

/// First-session scenarios. Sources are tried until `n` scenarios exist or
/// `50·n` attempts have been made.
pub fn build_session1(ctx: &StudyContext, design: Session1Design, n: usize, seed: u64) -> Result<Batch> {
    if design == Session1Design::GlobalTradeoff {
        return build_tradeoff_scenarios(ctx, &global_weights(), n, seed, &TradeoffOptions::default(), "s1-");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && attempts < 50 * n {
        attempts += 1;
        let id = format!("s1-{:03}", out.len());
        let plain = design == Session1Design::Mixed && out.len() % 2 == 0;
        let scenario = if plain {
            plain_pair(ctx, &mut rng, &global_weights(), id)?
        } else {
            let w = random_weights(&mut rng);
            let opts = TradeoffOptions::default();
            build_tradeoff_scenarios(ctx, &w, 1, rng.random(), &opts, "")?.scenarios.pop().map(|mut s| {
                s.id = id;
                s
            })
        };
        out.extend(scenario);
    }
    Ok(Batch::new(out, n))
}
