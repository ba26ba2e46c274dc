use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use recourse_core::artifact::Envelope;
use recourse_core::awp::{self, Thresholds};
use recourse_core::metrics::FeatureWeights;
use recourse_core::preference::{fit_bt, kendall_tau, weights_from_beta, PairwiseComparison};
use recourse_core::recourse::{generate_top_k, rounded_variant, GenerationConfig, Recourse};
use recourse_core::schema::{validate_profile, ApplicantProfile, Feature, FeatureSchema};
use recourse_core::study::{
    build_session1, build_session2, evaluate_session, run_pipeline, Answer, EvaluationReport, PipelineOutcome,
    Scenario, ScenarioResponse, Session1Design, Session2Options, SimulatedUser, StudyContext,
};
use recourse_core::synth::{synthesize, write_dataset_csv, DatasetMeta, Decision};
use recourse_core::tree::{self, DecisionTree, TreeParams};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifacts::{self as art, WeightsBody};
use crate::{
    CliError, EvaluateArgs, FitArgs, GenArgs, PredictArgs, ScenariosArgs, ServeArgs, SimulateArgs, SynthArgs,
    TrainArgs,
};

/// Simulated users draw from `USER_SEED_OFFSET + seed + i` so their streams
/// never coincide with the pipeline seeds `seed + i`.
pub const USER_SEED_OFFSET: u64 = 20_000;

const USER: (&str, u32) = ("recourse-simulated-user", 1);

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::from(e).context(path)
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let mut cfg = a.labeling.unwrap_or_default();
    cfg.seed = a.seed;
    cfg.validate()?;
    let rows = synthesize(a.n, &cfg)?;
    let file = File::create(&a.out).map_err(io_err(&a.out))?;
    write_dataset_csv(BufWriter::new(file), &DatasetMeta::new(a.n, &cfg), &rows).map_err(|e| CliError::from(e).context(&a.out))?;
    let approved = rows.iter().filter(|r| r.decision == Decision::Approved).count();
    println!(
        "wrote {} profiles to {} (seed {}, {:.1}% approved)",
        rows.len(),
        a.out.display(),
        a.seed,
        100.0 * approved as f64 / rows.len() as f64
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let (meta, rows) = art::load_dataset(&a.data)?;
    let params = TreeParams { min_samples_leaf: a.min_samples_leaf, max_depth: a.max_depth };
    let out = tree::train(&rows, a.split_seed, &params)?;
    let provenance = json!({
        "dataset": {"path": a.data, "seed": meta.seed, "n": meta.n},
        "split_seed": a.split_seed,
        "params": params,
        "test_accuracy": out.test_accuracy,
        "train_size": out.train_size,
        "test_size": out.test_size,
    });
    let (leaves, depth) = (out.tree.leaf_count(), out.tree.depth());
    art::save_json(&a.out, (tree::TREE_FORMAT, tree::TREE_VERSION), provenance, out.tree)?;
    println!("test accuracy {:.3}% on {} held-out rows", 100.0 * out.test_accuracy, out.test_size);
    println!("tree: {leaves} leaves, depth {depth}, written to {}", a.out.display());
    Ok(())
}

/// Refuses a tree trained on a different dataset than the one given.
fn check_pairing(tree: &Envelope<DecisionTree>, meta: &DatasetMeta) -> Result<(), CliError> {
    let Some(d) = tree.provenance.get("dataset") else { return Ok(()) };
    let same = d.get("seed").and_then(|v| v.as_u64()) == Some(meta.seed)
        && d.get("n").and_then(|v| v.as_u64()) == Some(meta.n as u64);
    if same {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "tree was trained on dataset {d}, not on seed {} with {} rows",
            meta.seed, meta.n
        )))
    }
}

fn context(data: &Path, tree: &Path) -> Result<StudyContext, CliError> {
    let (meta, rows) = art::load_dataset(data)?;
    let tree = art::load_tree(tree)?;
    check_pairing(&tree, &meta)?;
    Ok(StudyContext::new(tree.body, &rows)?)
}

fn describe(r: &Recourse) -> String {
    r.changed_features()
        .into_iter()
        .map(|f| format!("{f} {} -> {}", r.source.value(f), r.counterfactual.value(f)))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Serialize, Deserialize)]
struct RecourseSet {
    source: ApplicantProfile,
    recourses: Vec<Recourse>,
    /// Rounded variant of each recourse, where one exists.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    rounded: Vec<Option<Recourse>>,
    exhausted: bool,
}

pub fn gen(a: GenArgs) -> Result<(), CliError> {
    let schema = FeatureSchema::credit();
    let tree = art::load_tree(&a.tree)?;
    let x = match (a.row, &a.profile) {
        (Some(row), None) => {
            let (meta, rows) = art::load_dataset(&a.data)?;
            check_pairing(&tree, &meta)?;
            rows.get(row).map(|r| r.profile).ok_or_else(|| {
                CliError::Usage(format!("--row {row} is past the end of a {}-row dataset", rows.len()))
            })?
        }
        (None, Some(json)) => {
            let p: ApplicantProfile =
                serde_json::from_str(json).map_err(|e| CliError::Validation(format!("--profile: {e}")))?;
            let problems = validate_profile(&schema, &p);
            if !problems.is_empty() {
                return Err(CliError::Validation(format!("--profile: {problems:?}")));
            }
            p
        }
        _ => return Err(CliError::Usage("pass exactly one of --row or --profile".into())),
    };
    let w = a.weights.as_deref().map(art::load_weights).transpose()?.map(|b| b.weights);
    let cfg = GenerationConfig { k: a.k, ..GenerationConfig::default() };
    if cfg.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let top = generate_top_k(&tree.body, &x, &schema, &cfg, w.as_ref())?;
    let rounded: Vec<Option<Recourse>> = if a.rounded {
        let rw = w.unwrap_or_else(FeatureWeights::uniform);
        top.recourses.iter().map(|r| rounded_variant(r, &cfg, &tree.body, &schema, &rw)).collect()
    } else {
        Vec::new()
    };
    println!("{:>4} {:>9} {:>9} {:>4}  changes", "rank", "prox", "w-prox", "n");
    for (i, r) in top.recourses.iter().enumerate() {
        println!(
            "{:>4} {:>9.5} {:>9.5} {:>4}  {}",
            i + 1,
            r.cost.prox,
            r.cost.weighted_prox,
            r.cost.sparsity,
            describe(r)
        );
    }
    if top.exhausted {
        println!("only {} feasible recourses exist", top.recourses.len());
    }
    if let Some(out) = &a.out {
        let provenance = json!({"tree": a.tree, "k": a.k, "weights": a.weights});
        let body = RecourseSet { source: x, recourses: top.recourses, rounded, exhausted: top.exhausted };
        art::save_json(out, art::RECOURSES, provenance, body)?;
    }
    Ok(())
}

pub fn scenarios(a: ScenariosArgs) -> Result<(), CliError> {
    match (a.session, &a.weights) {
        (1, _) | (2, Some(_)) => {}
        (2, None) => return Err(CliError::Usage("Session 2 needs --weights".into())),
        (s, _) => return Err(CliError::Usage(format!("--session must be 1 or 2, got {s}"))),
    }
    let ctx = context(&a.data, &a.tree)?;
    let (batch, provenance) = match a.session {
        1 => {
            let design: Session1Design = serde_json::from_value(json!(a.design))
                .map_err(|_| CliError::Usage(format!("unknown --design `{}`", a.design)))?;
            let b = build_session1(&ctx, design, a.n, a.seed)?;
            (b, json!({"session": 1, "design": design, "n": a.n, "seed": a.seed}))
        }
        2 => {
            let w = art::load_weights(a.weights.as_ref().expect("checked above"))?.weights;
            let opts = Session2Options { composition: a.composition.unwrap_or_default(), min_margin: a.min_margin };
            let b = build_session2(&ctx, &w, &opts, a.seed)?;
            (b, json!({"session": 2, "options": opts, "weights": w, "seed": a.seed}))
        }
        _ => unreachable!("checked above"),
    };
    art::save_lines(&a.out, art::SCENARIOS, provenance, &batch.scenarios)?;
    println!("wrote {} of {} requested scenarios to {}", batch.scenarios.len(), batch.requested, a.out.display());
    if batch.partial {
        println!("warning: candidates ran out before the batch was full");
    }
    Ok(())
}

pub fn fit(a: FitArgs) -> Result<(), CliError> {
    let comparisons: Vec<PairwiseComparison> = art::load_lines(&a.comparisons, art::COMPARISONS)?;
    let mut opts = a.fit;
    if let Some(reg) = a.reg {
        opts.reg = reg;
    }
    let mut model = fit_bt(&comparisons, &FeatureSchema::credit(), &opts)?;
    model.objective_trace.clear();
    let weights = weights_from_beta(&model);
    println!(
        "fit {} comparisons ({} flagged and left out), converged: {}",
        model.comparisons,
        comparisons.len() - model.comparisons,
        model.converged
    );
    for f in Feature::ALL {
        println!("  {:<16} beta {:>9.4}  weight {:>7.4}", f.name(), model.beta_of(f), weights.get(f));
    }
    let provenance = json!({"comparisons": a.comparisons, "fit": opts});
    art::save_json(&a.out, art::WEIGHTS, provenance, WeightsBody { weights, model: Some(model) })
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    scenario_id: String,
    predicted: Answer,
    #[serde(flatten)]
    prediction: awp::AwpPrediction,
}

pub fn predict(a: PredictArgs) -> Result<(), CliError> {
    let schema = FeatureSchema::credit();
    let scenarios: Vec<Scenario> = art::load_lines(&a.scenarios, art::SCENARIOS)?;
    let w = art::load_weights(&a.weights)?.weights;
    let alpha = art::load_thresholds(a.thresholds.as_deref())?;
    alpha.validate(&schema)?;
    let mut lines = Vec::with_capacity(scenarios.len());
    for s in &scenarios {
        let p = awp::predict(&s.source, &[s.a.clone(), s.b.clone()], &schema, &w, &alpha)?;
        let predicted = match p.outcome.index() {
            Some(0) => Answer::A,
            Some(_) => Answer::B,
            None => Answer::RejectBoth,
        };
        lines.push(PredictionLine { scenario_id: s.id.clone(), predicted, prediction: p });
    }
    let count = |x: Answer| lines.iter().filter(|l| l.predicted == x).count();
    println!(
        "{} scenarios: A {}, B {}, reject both {}",
        lines.len(),
        count(Answer::A),
        count(Answer::B),
        count(Answer::RejectBoth)
    );
    let provenance = json!({"scenarios": a.scenarios, "weights": a.weights, "thresholds": a.thresholds});
    art::save_lines(&a.out, art::PREDICTIONS, provenance, &lines)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserSummary {
    pub user: usize,
    pub user_seed: u64,
    pub pipeline_seed: u64,
    pub awp_accuracy: Option<f64>,
    pub both_acceptable: usize,
    /// Rank agreement of fitted and true weights.
    pub kendall_tau: f64,
    pub partial: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortReport {
    pub users: usize,
    pub tau: f64,
    pub report: EvaluationReport,
    pub per_user: Vec<UserSummary>,
}

#[derive(Serialize)]
struct TrueUser<'a> {
    weights: &'a FeatureWeights,
    thresholds: &'a Thresholds,
    tau: f64,
}

fn write_user(dir: &Path, user: &SimulatedUser, out: &PipelineOutcome, provenance: &serde_json::Value) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = provenance.clone();
    art::save_lines(&dir.join("comparisons.jsonl"), art::COMPARISONS, p.clone(), &out.comparisons)?;
    art::save_lines(&dir.join("session1.jsonl"), art::SCENARIOS, p.clone(), &out.session1)?;
    art::save_lines(&dir.join("scenarios.jsonl"), art::SCENARIOS, p.clone(), &out.session2)?;
    art::save_lines(&dir.join("responses.jsonl"), art::RESPONSES, p.clone(), &out.responses)?;
    let weights = WeightsBody { weights: out.w_hat, model: Some(out.model.clone()) };
    art::save_json(&dir.join("weights.json"), art::WEIGHTS, p.clone(), weights)?;
    art::save_json(&dir.join("thresholds.json"), art::THRESHOLDS, p.clone(), out.alpha_hat.clone())?;
    let truth = TrueUser { weights: &user.weights, thresholds: &user.thresholds, tau: user.tau };
    art::save_json(&dir.join("truth.json"), USER, p, truth)
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    if a.users == 0 {
        return Err(CliError::Usage("--users must be at least 1".into()));
    }
    if !(a.tau >= 0.0 && a.tau.is_finite()) {
        return Err(CliError::Usage("--tau must be a finite number >= 0".into()));
    }
    let ctx = context(&a.data, &a.tree)?;
    let threads = a
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, a.users);
    let run_user = |i: usize| -> Result<(SimulatedUser, PipelineOutcome), CliError> {
        let user_seed = USER_SEED_OFFSET + a.seed + i as u64;
        let mut user = SimulatedUser::random(user_seed, a.tau);
        let cfg = recourse_core::study::PipelineConfig { seed: a.seed + i as u64, ..a.pipeline };
        let out = run_pipeline(&ctx, &mut user, &cfg)?;
        Ok((user, out))
    };
    let mut runs: Vec<(usize, Result<(SimulatedUser, PipelineOutcome), CliError>)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let run_user = &run_user;
                s.spawn(move || (t..a.users).step_by(threads).map(|i| (i, run_user(i))).collect::<Vec<_>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    runs.sort_by_key(|(i, _)| *i);

    let mut report = EvaluationReport::default();
    let mut per_user = Vec::with_capacity(a.users);
    for (i, run) in runs {
        let (user, out) = run?;
        report.merge(&out.report);
        per_user.push(UserSummary {
            user: i,
            user_seed: USER_SEED_OFFSET + a.seed + i as u64,
            pipeline_seed: a.seed + i as u64,
            awp_accuracy: out.report.awp_accuracy,
            both_acceptable: out.report.bins.both_acceptable,
            kendall_tau: kendall_tau(&out.w_hat.values(), &user.weights.values()),
            partial: out.partial,
        });
        if let Some(dir) = &a.out_dir {
            let provenance = json!({"user": i, "tau": a.tau, "seed": a.seed, "pipeline": a.pipeline});
            write_user(&dir.join(format!("u{i:03}")), &user, &out, &provenance)?;
        }
    }
    let perfect = per_user.iter().filter(|u| u.awp_accuracy == Some(1.0)).count();
    println!("simulated {} users at tau {} (seed {})", a.users, a.tau, a.seed);
    println!("{report}");
    println!("users at 100% AWP accuracy {perfect:>4} / {}", a.users);
    if let Some(path) = &a.report {
        let provenance = json!({"data": a.data, "tree": a.tree, "seed": a.seed, "pipeline": a.pipeline});
        let body = CohortReport { users: a.users, tau: a.tau, report, per_user };
        art::save_json(path, art::REPORT, provenance, body)?;
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let schema = FeatureSchema::credit();
    let scenarios: Vec<Scenario> = art::load_lines(&a.scenarios, art::SCENARIOS)?;
    let responses: Vec<ScenarioResponse> = art::load_lines(&a.responses, art::RESPONSES)?;
    let w = art::load_weights(&a.weights)?.weights;
    let alpha = art::load_thresholds(a.thresholds.as_deref())?;
    alpha.validate(&schema)?;
    let report = evaluate_session(&scenarios, &responses, &w, &alpha, &schema)?;
    println!("{report}");
    if let Some(path) = &a.report {
        let provenance = json!({"scenarios": a.scenarios, "responses": a.responses, "weights": a.weights});
        art::save_json(path, art::REPORT, provenance, report)?;
    }
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<(), CliError> {
    let cfg = recourse_service::ServeConfig { dataset: a.data, tree: a.tree, data_dir: a.data_dir, port: a.port }.with_env();
    let dataset = cfg.dataset.unwrap_or_else(|| PathBuf::from("dataset.csv"));
    let tree = cfg.tree.unwrap_or_else(|| PathBuf::from("tree.json"));
    let data_dir = cfg.data_dir.unwrap_or_else(|| PathBuf::from("sessions-data"));
    let port = cfg.port.unwrap_or(8080);
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .try_init();
    let ctx = context(&dataset, &tree)?;
    let svc = recourse_service::Service::open(Arc::new(ctx), &data_dir).map_err(|e| match e {
        recourse_service::store::StoreError::Io(e) => CliError::from(e).context(&data_dir),
        e => CliError::Validation(e.to_string()),
    })?;
    println!("serving {} sessions from {} on port {port}", svc.session_ids().len(), data_dir.display());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(recourse_service::serve(Arc::new(svc), port))?;
    Ok(())
}
