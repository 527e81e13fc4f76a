//! Stage runners behind the `kgh` subcommands.
//!
//! Every stage reads its inputs from the output directory and writes its
//! artifacts there, so any stage can be re-run on its own once earlier
//! artifacts exist. [`cmd_pipeline`] runs them all in order and writes a
//! manifest of artifact hashes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{OracleKind, ProviderKind, RunConfig};
use crate::embed::{build_features, EmbeddingProvider, FeatureMatrix, FileProvider, HashedProvider};
use crate::error::{Error, Result};
use crate::estimator::{predict, train, ModelKind, RegressorModel, TrainConfig, TrainReport};
use crate::graph::{read_scores_csv, KnowledgeGraph};
use crate::homophily::{
    degree_matched_baseline, entity_knowledgeability, node_homophily, sparsification_robustness, BaselineReport,
    HomophilyReport, RobustnessReport,
};
use crate::injection::{
    ceil_fraction, export_finetune_dataset, export_statements, holdout_split, plan_selection, random_plan,
    sample_anchors, selection_quality, AnchorSet, Budget, QualityScope, SelectionPlan, SelectionQualityReport,
};
use crate::labels::{EntityScoreTable, LabelSource, TripletLabelTable};
use crate::oracle::{
    HttpChatBackend, Labeler, LlmOracle, OracleConfig, PlantedOracle, ProbeCache, RecordedLabels, TemplateTable,
};
use crate::retrieval::{
    evaluate_retrieval, generate_questions, question_entities, read_questions, run_retrieval, write_questions,
    Question, RetrievalConfig, RetrievalReport, SearchMode,
};
use crate::svg::histogram_svg;

/// Artifact file names inside the output directory.
pub mod artifacts {
    pub const LABELS: &str = "labels.jsonl";
    pub const PROBE_LOG: &str = "probe_log.json";
    pub const SCORES: &str = "scores.csv";
    pub const HOMOPHILY: &str = "homophily.json";
    pub const HISTOGRAM: &str = "homophily.svg";
    pub const BASELINE: &str = "baseline.json";
    pub const ROBUSTNESS: &str = "robustness.json";
    pub const ANCHORS: &str = "anchors.json";
    pub const MODEL: &str = "model.json";
    pub const TRAIN_REPORT: &str = "train_report.json";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const PLAN: &str = "plan.json";
    pub const RANDOM_PLAN: &str = "random_plan.json";
    pub const QUALITY: &str = "quality.json";
    pub const HOLDOUT: &str = "holdout.json";
    pub const FINETUNE: &str = "finetune.jsonl";
    pub const HOLDOUT_EXPORT: &str = "holdout.jsonl";
    pub const QUESTIONS: &str = "questions.jsonl";
    pub const RETRIEVAL_SCORES: &str = "retrieval_scores.csv";
    pub const RETRIEVAL: &str = "retrieval.json";
    pub const SWEEP: &str = "sweep.json";
    pub const REPORT: &str = "report.md";
    pub const MANIFEST: &str = "manifest.json";
}

use artifacts as a;

enum OracleHolder {
    Planted(PlantedOracle),
    Llm {
        cfg: OracleConfig,
        backend: HttpChatBackend,
        cache: ProbeCache,
    },
}

/// A loaded graph plus everything the stages share.
pub struct Workspace {
    pub cfg: RunConfig,
    pub graph: KnowledgeGraph,
    pub templates: Option<TemplateTable>,
    oracle: OracleHolder,
}

impl Workspace {
    pub fn open(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let graph = KnowledgeGraph::load(&cfg.dataset.path, cfg.dataset.format)?;
        let templates = match &cfg.dataset.templates {
            Some(p) => Some(TemplateTable::load(p, &graph)?),
            None => None,
        };
        let oracle = match cfg.oracle.kind {
            OracleKind::Planted => {
                let mut pc = cfg.oracle.planted.clone();
                pc.seed = cfg.seeds.oracle;
                OracleHolder::Planted(PlantedOracle::new(&graph, &pc)?)
            }
            OracleKind::Llm => {
                let llm = cfg.oracle.llm.clone().with_env();
                llm.validate()?;
                let cache = match &llm.cache_path {
                    Some(p) => ProbeCache::open(p)?,
                    None => ProbeCache::in_memory(),
                };
                OracleHolder::Llm {
                    backend: HttpChatBackend::new(&llm),
                    cfg: llm,
                    cache,
                }
            }
        };
        std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
        Ok(Self {
            cfg,
            graph,
            templates,
            oracle,
        })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    /// The configured live oracle.
    pub fn labeler(&self) -> Result<Box<dyn Labeler + '_>> {
        Ok(match &self.oracle {
            OracleHolder::Planted(p) => Box::new(p),
            OracleHolder::Llm { cfg, backend, cache } => Box::new(LlmOracle {
                cfg: cfg.clone(),
                backend,
                cache,
                templates: self.require_templates()?,
                date_mode: self.cfg.oracle.date_mode,
            }),
        })
    }

    pub fn require_templates(&self) -> Result<&TemplateTable> {
        self.templates
            .as_ref()
            .ok_or_else(|| Error::Usage("this stage needs dataset.templates".into()))
    }

    fn features(&self) -> Result<FeatureMatrix> {
        match self.cfg.features.provider {
            ProviderKind::Hashed => build_features(&self.graph, &HashedProvider::new(self.cfg.features.dim)?),
            ProviderKind::File => {
                let p = self.cfg.features.path.as_ref().expect("validated");
                build_features(&self.graph, &FileProvider::load(p)?)
            }
        }
    }

    fn read<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let p = self.out(name);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn write<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        write_json(&self.out(name), value)
    }

    fn labels(&self) -> Result<TripletLabelTable> {
        TripletLabelTable::read_jsonl(&self.out(a::LABELS))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    info!("stage {name}");
    f().map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: name,
            source: Box::new(other),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeLog {
    pub oracle: OracleKind,
    pub source: LabelSource,
    pub n_requested: usize,
    pub n_labeled: usize,
    pub n_failed: usize,
    pub upstream_requests: usize,
    pub cache_hits: usize,
    /// Failure message counts, keyed by message.
    pub failures: BTreeMap<String, usize>,
}

/// Labels every triplet, or a seeded random sample of `sample` triplets.
pub fn cmd_probe(ws: &Workspace, sample: Option<usize>) -> Result<ProbeLog> {
    let n = ws.graph.num_triplets();
    let indices: Vec<usize> = match sample.or(ws.cfg.oracle.sample) {
        Some(k) if k < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(ws.cfg.seeds.probe_sample);
            let mut v = rand::seq::index::sample(&mut rng, n, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..n).collect(),
    };
    let labeler = ws.labeler()?;
    let outcome = labeler.label_batch(&ws.graph, &indices);
    outcome.labels.write_jsonl(&ws.out(a::LABELS))?;
    let mut failures = BTreeMap::new();
    for f in &outcome.errors {
        *failures.entry(f.error.to_string()).or_insert(0) += 1;
    }
    let log = ProbeLog {
        oracle: ws.cfg.oracle.kind,
        source: labeler.source(),
        n_requested: indices.len(),
        n_labeled: outcome.labels.len(),
        n_failed: outcome.errors.len(),
        upstream_requests: outcome.upstream_requests,
        cache_hits: outcome.cache_hits,
        failures,
    };
    ws.write(a::PROBE_LOG, &log)?;
    if !outcome.errors.is_empty() {
        warn!("{} of {} probes failed; see {}", log.n_failed, log.n_requested, a::PROBE_LOG);
        if outcome.labels.is_empty() {
            return Err(Error::Oracle(outcome.errors[0].error.clone()));
        }
    }
    Ok(log)
}

/// Entity scores from the recorded labels, written as CSV.
pub fn cmd_aggregate(ws: &Workspace) -> Result<EntityScoreTable> {
    let scores = entity_knowledgeability(&ws.graph, &ws.labels()?)?;
    ws.graph.export_scores_csv(&scores, &ws.out(a::SCORES))?;
    Ok(scores)
}

pub fn cmd_homophily(ws: &Workspace, bins: Option<usize>) -> Result<HomophilyReport> {
    let scores = entity_knowledgeability(&ws.graph, &ws.labels()?)?;
    let report = node_homophily(&ws.graph, &scores, bins.unwrap_or(ws.cfg.homophily.bins))?;
    ws.write(a::HOMOPHILY, &report)?;
    let svg = histogram_svg(&report.histogram, "Knowledge homophily per entity");
    let p = ws.out(a::HISTOGRAM);
    std::fs::write(&p, svg).map_err(|e| Error::io(&p, e))?;
    Ok(report)
}

pub fn cmd_baseline(ws: &Workspace, trials: Option<usize>) -> Result<BaselineReport> {
    let scores = entity_knowledgeability(&ws.graph, &ws.labels()?)?;
    let report = degree_matched_baseline(
        &ws.graph,
        &scores,
        trials.unwrap_or(ws.cfg.homophily.trials),
        ws.cfg.seeds.baseline,
    )?;
    ws.write(a::BASELINE, &report)?;
    Ok(report)
}

/// Robustness of entity scores to edge removal, using the recorded labels.
pub fn cmd_sparsify(ws: &Workspace, fractions: Option<&[f64]>) -> Result<RobustnessReport> {
    let labels = ws.labels()?;
    let fractions = fractions.unwrap_or(&ws.cfg.homophily.sparsify_fractions);
    let report = sparsification_robustness(
        &ws.graph,
        &RecordedLabels { table: &labels },
        fractions,
        ws.cfg.seeds.sparsify,
    )?;
    ws.write(a::ROBUSTNESS, &report)?;
    Ok(report)
}

fn budget_of(ws: &Workspace, total: Option<usize>) -> Result<Budget> {
    Budget::new(total.unwrap_or(ws.cfg.budget.total_triplets), ws.cfg.budget.anchor_fraction)
}

fn train_on(
    ws: &Workspace,
    kind: ModelKind,
    features: &FeatureMatrix,
    targets: &EntityScoreTable,
    cfg: &TrainConfig,
) -> Result<(RegressorModel, TrainReport, EntityScoreTable)> {
    let (model, report) = train(kind, &ws.graph, features, targets, cfg)?;
    let preds = predict(&model, &ws.graph, features, ws.graph.entities())?;
    Ok((model, report, preds))
}

fn train_config(ws: &Workspace) -> TrainConfig {
    TrainConfig {
        seed: ws.cfg.seeds.training,
        ..ws.cfg.estimator.train.clone()
    }
}

/// Probes an anchor set, fits the estimator to its scores and predicts
/// every entity.
pub fn cmd_train(ws: &Workspace, kind: Option<ModelKind>) -> Result<TrainReport> {
    let budget = budget_of(ws, None)?;
    let labeler = ws.labeler()?;
    let anchors = sample_anchors(&ws.graph, &budget, labeler.as_ref(), ws.cfg.seeds.anchors)?;
    ws.write(a::ANCHORS, &anchors)?;
    let features = ws.features()?;
    let kind = kind.unwrap_or(ws.cfg.estimator.kind);
    let (model, report, preds) = train_on(ws, kind, &features, &anchors.entity_scores, &train_config(ws))?;
    model.save(&ws.out(a::MODEL))?;
    ws.write(a::TRAIN_REPORT, &report)?;
    ws.graph.export_scores_csv(&preds, &ws.out(a::PREDICTIONS))?;
    Ok(report)
}

/// Builds the estimator-guided plan and the random baseline plan.
pub fn cmd_select(ws: &Workspace) -> Result<(SelectionPlan, SelectionPlan)> {
    let budget = budget_of(ws, None)?;
    let anchors: AnchorSet = ws.read(a::ANCHORS)?;
    let preds = read_scores_csv(&ws.out(a::PREDICTIONS))?;
    let plan = plan_selection(&ws.graph, &preds, &anchors, &budget)?;
    let rand_plan = random_plan(&ws.graph, &anchors, &budget, ws.cfg.seeds.random_plan)?;
    plan.write_json(&ws.out(a::PLAN))?;
    rand_plan.write_json(&ws.out(a::RANDOM_PLAN))?;
    Ok((plan, rand_plan))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityComparison {
    pub estimator: SelectionQualityReport,
    pub random: SelectionQualityReport,
}

pub fn cmd_quality(ws: &Workspace, scope: Option<QualityScope>) -> Result<QualityComparison> {
    let scope = scope.unwrap_or(ws.cfg.budget.quality_scope);
    let labeler = ws.labeler()?;
    let plan = SelectionPlan::read_json(&ws.out(a::PLAN))?;
    let rand_plan = SelectionPlan::read_json(&ws.out(a::RANDOM_PLAN))?;
    let report = QualityComparison {
        estimator: selection_quality(&ws.graph, &plan, labeler.as_ref(), scope)?,
        random: selection_quality(&ws.graph, &rand_plan, labeler.as_ref(), scope)?,
    };
    ws.write(a::QUALITY, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutArtifact {
    pub fraction: f64,
    pub triplets: Vec<usize>,
}

pub fn cmd_holdout(ws: &Workspace, fraction: Option<f64>) -> Result<HoldoutArtifact> {
    let fraction = fraction.unwrap_or(ws.cfg.budget.holdout_fraction);
    let plan = SelectionPlan::read_json(&ws.out(a::PLAN))?;
    let triplets = holdout_split(&ws.graph, &plan, fraction, ws.cfg.seeds.holdout)?;
    let out = HoldoutArtifact { fraction, triplets };
    ws.write(a::HOLDOUT, &out)?;
    Ok(out)
}

/// Writes the fine-tuning set and, when a holdout exists, its statements.
pub fn cmd_export(ws: &Workspace) -> Result<usize> {
    let templates = ws.require_templates()?;
    let plan = SelectionPlan::read_json(&ws.out(a::PLAN))?;
    let n = export_finetune_dataset(&ws.graph, &plan, templates, &ws.out(a::FINETUNE))?;
    let holdout_path = ws.out(a::HOLDOUT);
    if holdout_path.exists() {
        let h: HoldoutArtifact = ws.read(a::HOLDOUT)?;
        export_statements(
            &ws.graph,
            &h.triplets,
            &TripletLabelTable::new(),
            templates,
            &ws.out(a::HOLDOUT_EXPORT),
        )?;
    }
    Ok(n)
}

pub fn cmd_questions(ws: &Workspace, n_per_hop: Option<usize>) -> Result<Vec<Question>> {
    let qs = generate_questions(
        &ws.graph,
        ws.require_templates()?,
        n_per_hop.unwrap_or(ws.cfg.retrieval.n_per_hop),
        ws.cfg.seeds.questions,
    )?;
    write_questions(&qs, &ws.out(a::QUESTIONS))?;
    Ok(qs)
}

/// Flag overrides for the retrieve stage.
#[derive(Debug, Clone, Default)]
pub struct RetrieveOptions {
    pub alpha: Option<f64>,
    pub beam_width: Option<usize>,
    pub mode: Option<SearchMode>,
    pub hops: Option<usize>,
    /// Score file to use instead of training the retrieval estimator.
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalArtifact {
    pub config: RetrievalConfig,
    pub n_train_entities: usize,
    /// Keyed by search mode name.
    pub reports: BTreeMap<String, RetrievalReport>,
}

/// Knowledgeability scores for retrieval: an estimator trained on the
/// labeled triplets of a share of entities that appear in no question.
fn retrieval_scores(ws: &Workspace, questions: &[Question]) -> Result<(EntityScoreTable, usize)> {
    let excluded = question_entities(&ws.graph, questions)?;
    let mut pool: Vec<_> = ws.graph.entities().filter(|v| !excluded.contains(v)).collect();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(ws.cfg.seeds.retrieval_split));
    let take = ceil_fraction(ws.cfg.retrieval.train_fraction, ws.graph.num_entities()).min(pool.len());
    let chosen = &pool[..take];
    let mut indices: Vec<usize> = Vec::new();
    for &v in chosen {
        indices.extend_from_slice(ws.graph.incident_indices(v)?);
    }
    indices.sort_unstable();
    indices.dedup();
    let labeler = ws.labeler()?;
    let outcome = labeler.label_batch(&ws.graph, &indices);
    let observed = entity_knowledgeability(&ws.graph, &outcome.labels)?;
    let mut targets = EntityScoreTable::new();
    for &v in chosen {
        if let (Some(k), Some(s)) = (observed.get(v), observed.support(v)) {
            targets.insert(v, k, s);
        }
    }
    let features = ws.features()?;
    let (_, _, preds) = train_on(ws, ws.cfg.estimator.kind, &features, &targets, &train_config(ws))?;
    Ok((preds, targets.len()))
}

pub fn cmd_retrieve(ws: &Workspace, opts: &RetrieveOptions) -> Result<RetrievalArtifact> {
    let mut questions = read_questions(&ws.out(a::QUESTIONS))?;
    if let Some(h) = opts.hops {
        questions.retain(|q| q.gold.hops() == h);
    }
    let mut search = ws.cfg.retrieval.search.clone();
    if let Some(x) = opts.alpha {
        search.alpha = x;
    }
    if let Some(x) = opts.beam_width {
        search.beam_width = x;
    }
    if let Some(x) = opts.hops {
        search.max_hops = x;
    }
    search.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let modes = match opts.mode {
        Some(m) => vec![m],
        None => vec![SearchMode::Semantic, SearchMode::KnowledgeAware],
    };
    let needs_k = modes.contains(&SearchMode::KnowledgeAware);
    let (k_scores, n_train) = match (&opts.scores, needs_k) {
        (Some(p), _) => (Some(read_scores_csv(p)?), 0),
        (None, true) => {
            let (s, n) = retrieval_scores(ws, &questions)?;
            ws.graph.export_scores_csv(&s, &ws.out(a::RETRIEVAL_SCORES))?;
            (Some(s), n)
        }
        (None, false) => (None, 0),
    };
    let provider = HashedProvider::new(ws.cfg.retrieval.embedding_dim)?;
    let mut reports = BTreeMap::new();
    for mode in modes {
        let mut results = Vec::with_capacity(questions.len());
        // Each question is searched to its own depth.
        for hops in [2usize, 3] {
            let idx: Vec<usize> = (0..questions.len()).filter(|&i| questions[i].gold.hops() == hops).collect();
            if idx.is_empty() {
                continue;
            }
            let subset: Vec<Question> = idx.iter().map(|&i| questions[i].clone()).collect();
            let cfg = RetrievalConfig {
                mode,
                max_hops: hops,
                ..search.clone()
            };
            let found = run_retrieval(&ws.graph, &subset, &cfg, k_scores.as_ref(), &provider as &dyn EmbeddingProvider)?;
            results.extend(idx.into_iter().zip(found));
        }
        results.sort_by_key(|(i, _)| *i);
        let results: Vec<_> = results.into_iter().map(|(_, r)| r).collect();
        let name = serde_json::to_value(mode)?.as_str().unwrap_or_default().to_string();
        reports.insert(name, evaluate_retrieval(&results, &questions)?);
    }
    let artifact = RetrievalArtifact {
        config: search,
        n_train_entities: n_train,
        reports,
    };
    ws.write(a::RETRIEVAL, &artifact)?;
    Ok(artifact)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub budget_fraction: f64,
    pub total_triplets: usize,
    pub quality: Option<QualityComparison>,
    pub error: Option<String>,
}

/// Selection quality at each sweep budget, one report per budget.
pub fn cmd_sweep(ws: &Workspace) -> Result<Vec<SweepEntry>> {
    let dir = ws.out("sweep");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let labeler = ws.labeler()?;
    let features = ws.features()?;
    let mut entries = Vec::new();
    for &f in &ws.cfg.budget.sweep_fractions {
        let total = ceil_fraction(f, ws.graph.num_triplets());
        let run = || -> Result<QualityComparison> {
            let budget = budget_of(ws, Some(total))?;
            let anchors = sample_anchors(&ws.graph, &budget, labeler.as_ref(), ws.cfg.seeds.anchors)?;
            let (_, _, preds) =
                train_on(ws, ws.cfg.estimator.kind, &features, &anchors.entity_scores, &train_config(ws))?;
            let plan = plan_selection(&ws.graph, &preds, &anchors, &budget)?;
            let rp = random_plan(&ws.graph, &anchors, &budget, ws.cfg.seeds.random_plan)?;
            let scope = ws.cfg.budget.quality_scope;
            Ok(QualityComparison {
                estimator: selection_quality(&ws.graph, &plan, labeler.as_ref(), scope)?,
                random: selection_quality(&ws.graph, &rp, labeler.as_ref(), scope)?,
            })
        };
        let entry = match run() {
            Ok(q) => SweepEntry {
                budget_fraction: f,
                total_triplets: total,
                quality: Some(q),
                error: None,
            },
            Err(e) => SweepEntry {
                budget_fraction: f,
                total_triplets: total,
                quality: None,
                error: Some(e.to_string()),
            },
        };
        write_json(&dir.join(format!("budget_{:05.2}pct.json", f * 100.0)), &entry)?;
        entries.push(entry);
    }
    ws.write(a::SWEEP, &entries)?;
    Ok(entries)
}

/// Markdown summary of whatever artifacts exist.
pub fn cmd_report(ws: &Workspace) -> Result<String> {
    let g = &ws.graph;
    let mut s = String::new();
    let _ = writeln!(s, "# Run report\n");
    let _ = writeln!(
        s,
        "Graph: {} entities, {} relations, {} triplets.\n",
        g.num_entities(),
        g.num_relations(),
        g.num_triplets()
    );
    let has = |name: &str| ws.out(name).exists();
    if has(a::PROBE_LOG) {
        let p: ProbeLog = ws.read(a::PROBE_LOG)?;
        let _ = writeln!(
            s,
            "## Probing\n\n{} of {} triplets labeled ({} failed, {} upstream requests, {} cache hits).\n",
            p.n_labeled, p.n_requested, p.n_failed, p.upstream_requests, p.cache_hits
        );
    }
    if has(a::HOMOPHILY) {
        let h: HomophilyReport = ws.read(a::HOMOPHILY)?;
        let _ = writeln!(
            s,
            "## Homophily\n\nMean H(v) = {:.4} over {} entities (Citeseer reference {}).\n",
            h.graph_mean,
            h.per_node.len(),
            crate::homophily::CITESEER_REFERENCE
        );
    }
    if has(a::BASELINE) {
        let b: BaselineReport = ws.read(a::BASELINE)?;
        let _ = writeln!(
            s,
            "Degree-matched baseline over {} trials: mean {:.4}, std {:.4}, 99% CI [{:.4}, {:.4}], z = {:.2}, p = {:.3e}.\n",
            b.trials, b.baseline_mean, b.baseline_std, b.ci99.0, b.ci99.1, b.z, b.p_two_tailed
        );
    }
    if has(a::ROBUSTNESS) {
        let r: RobustnessReport = ws.read(a::ROBUSTNESS)?;
        let _ = writeln!(s, "## Sparsification\n\n| retained | pearson | spearman |\n|---|---|---|");
        for row in &r.per_fraction {
            let f = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(s, "| {} | {} | {} |", row.retain_fraction, f(row.pearson), f(row.spearman));
        }
        s.push('\n');
    }
    if has(a::QUALITY) {
        let q: QualityComparison = ws.read(a::QUALITY)?;
        let _ = writeln!(
            s,
            "## Selection quality\n\nEstimator-guided: {:.4} ({} / {}). Random: {:.4} ({} / {}).\n",
            q.estimator.quality,
            q.estimator.n_unknown,
            q.estimator.n_selected,
            q.random.quality,
            q.random.n_unknown,
            q.random.n_selected
        );
    }
    if has(a::HOLDOUT) {
        let h: HoldoutArtifact = ws.read(a::HOLDOUT)?;
        let _ = writeln!(s, "Holdout: {} entity-disjoint triplets.\n", h.triplets.len());
    }
    if has(a::RETRIEVAL) {
        let r: RetrievalArtifact = ws.read(a::RETRIEVAL)?;
        let _ = writeln!(
            s,
            "## Retrieval\n\nalpha {}, beam width {}.\n\n| mode | hops | questions | gold path | answer hit |\n|---|---|---|---|---|",
            r.config.alpha, r.config.beam_width
        );
        for (mode, rep) in &r.reports {
            for (h, b) in &rep.per_hop_breakdown {
                let _ = writeln!(
                    s,
                    "| {mode} | {h} | {} | {:.4} | {:.4} |",
                    b.n_questions, b.gold_path_recovery, b.answer_hit
                );
            }
        }
        s.push('\n');
    }
    if has(a::SWEEP) {
        let entries: Vec<SweepEntry> = ws.read(a::SWEEP)?;
        let _ = writeln!(s, "## Budget sweep\n\n| budget | triplets | estimator | random |\n|---|---|---|---|");
        for e in &entries {
            match &e.quality {
                Some(q) => {
                    let _ = writeln!(
                        s,
                        "| {}% | {} | {:.4} | {:.4} |",
                        e.budget_fraction * 100.0,
                        e.total_triplets,
                        q.estimator.quality,
                        q.random.quality
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        "| {}% | {} | error: {} | |",
                        e.budget_fraction * 100.0,
                        e.total_triplets,
                        e.error.as_deref().unwrap_or("")
                    );
                }
            }
        }
        s.push('\n');
    }
    let p = ws.out(a::REPORT);
    std::fs::write(&p, &s).map_err(|e| Error::io(&p, e))?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub kind: OracleKind,
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: crate::config::Seeds,
    pub oracle: OracleRecord,
    /// Relative path to SHA-256 for every artifact except the manifest.
    pub artifacts: BTreeMap<String, String>,
    pub created_at: String,
}

fn hash_artifacts(dir: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
                continue;
            }
            let rel = path.strip_prefix(root).expect("inside root").to_string_lossy().replace('\\', "/");
            if rel == a::MANIFEST {
                continue;
            }
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            out.insert(rel, hex::encode(Sha256::digest(bytes)));
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

/// Runs every stage in order and writes `manifest.json`. A failing stage
/// aborts the run; artifacts already written stay in place.
pub fn cmd_pipeline(ws: &Workspace, sweep: bool) -> Result<Manifest> {
    stage("probe", || cmd_probe(ws, None))?;
    stage("aggregate", || cmd_aggregate(ws))?;
    stage("homophily", || cmd_homophily(ws, None))?;
    stage("baseline", || cmd_baseline(ws, None))?;
    if !ws.cfg.homophily.sparsify_fractions.is_empty() {
        stage("sparsify", || cmd_sparsify(ws, None))?;
    }
    stage("train", || cmd_train(ws, None))?;
    stage("select", || cmd_select(ws))?;
    stage("quality", || cmd_quality(ws, None))?;
    stage("holdout", || cmd_holdout(ws, None))?;
    if ws.templates.is_some() {
        stage("export", || cmd_export(ws))?;
        stage("questions", || cmd_questions(ws, None))?;
        stage("retrieve", || cmd_retrieve(ws, &RetrieveOptions::default()))?;
    } else {
        warn!("no templates configured; skipping export and retrieval");
    }
    if sweep || ws.cfg.budget.sweep {
        stage("sweep", || cmd_sweep(ws))?;
    }
    stage("report", || cmd_report(ws))?;

    let manifest = Manifest {
        tool: "kgh".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: ws.cfg.hash(),
        seeds: ws.cfg.seeds.clone(),
        oracle: OracleRecord {
            kind: ws.cfg.oracle.kind,
            model: match ws.cfg.oracle.kind {
                OracleKind::Llm => Some(ws.cfg.oracle.llm.model_name.clone()),
                OracleKind::Planted => None,
            },
        },
        artifacts: hash_artifacts(&ws.cfg.output_dir)?,
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };
    ws.write(a::MANIFEST, &manifest)?;
    Ok(manifest)
}
