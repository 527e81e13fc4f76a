//! Multi-hop path retrieval over the graph.
//!
//! Questions are synthesized from random simple walks. Search starts at the
//! entity linked from the question text and expands a beam one hop at a
//! time. Each hop is scored by the similarity between the question and the
//! text "relation tail". The knowledge-aware mode multiplies that by
//! `1 - alpha * K(u)` so that less-known entities are explored first.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{dot, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId};
use crate::labels::EntityScoreTable;
use crate::oracle::TemplateTable;

/// K(u) assumed for entities without a score.
pub const MISSING_K: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldPath {
    /// Triplet indices in walk order.
    pub edges: Vec<usize>,
    pub start: EntityId,
    pub answer: EntityId,
}

impl GoldPath {
    pub fn hops(&self) -> usize {
        self.edges.len()
    }

    /// Entities along the walk, start first.
    pub fn entities(&self, g: &KnowledgeGraph) -> Result<Vec<EntityId>> {
        let mut out = vec![self.start];
        for &idx in &self.edges {
            let t = g.triplet(idx)?;
            let cur = *out.last().unwrap();
            if !t.involves(cur) {
                return Err(Error::InvalidArgument(format!("gold edge {idx} does not continue the walk")));
            }
            out.push(t.other(cur));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub text: String,
    #[serde(flatten)]
    pub gold: GoldPath,
}

/// Every entity on the gold paths of `questions`.
pub fn question_entities(g: &KnowledgeGraph, questions: &[Question]) -> Result<BTreeSet<EntityId>> {
    let mut out = BTreeSet::new();
    for q in questions {
        out.extend(q.gold.entities(g)?);
    }
    Ok(out)
}

pub fn write_questions(questions: &[Question], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for q in questions {
        serde_json::to_writer(&mut w, q)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_questions(path: &Path) -> Result<Vec<Question>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Samples `n_per_hop` distinct simple 2-hop walks, then as many 3-hop walks.
pub fn generate_questions(
    g: &KnowledgeGraph,
    templates: &TemplateTable,
    n_per_hop: usize,
    seed: u64,
) -> Result<Vec<Question>> {
    generate_questions_where(g, templates, n_per_hop, seed, |_| true)
}

/// Like [`generate_questions`], keeping only walks accepted by `keep`.
pub fn generate_questions_where(
    g: &KnowledgeGraph,
    templates: &TemplateTable,
    n_per_hop: usize,
    seed: u64,
    keep: impl Fn(&[EntityId]) -> bool,
) -> Result<Vec<Question>> {
    let starts: Vec<EntityId> = g.entities().filter(|&v| g.degree(v) > 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * n_per_hop);
    for hops in [2usize, 3] {
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        let max_attempts = 1000 + 200 * n_per_hop;
        let mut found = 0;
        let mut attempts = 0;
        while found < n_per_hop && attempts < max_attempts && !starts.is_empty() {
            attempts += 1;
            let Some((edges, walk)) = random_simple_walk(g, &starts, hops, &mut rng) else {
                continue;
            };
            if !keep(&walk) || !seen.insert(edges.clone()) {
                continue;
            }
            let gold = GoldPath {
                edges,
                start: walk[0],
                answer: walk[hops],
            };
            let text = render_question(g, templates, &gold, &walk)?;
            out.push(Question { text, gold });
            found += 1;
        }
        if found < n_per_hop {
            return Err(Error::NotEnoughPaths {
                hops,
                wanted: n_per_hop,
                found,
            });
        }
    }
    Ok(out)
}

fn random_simple_walk(
    g: &KnowledgeGraph,
    starts: &[EntityId],
    hops: usize,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<usize>, Vec<EntityId>)> {
    let mut walk = vec![starts[rng.gen_range(0..starts.len())]];
    let mut edges = Vec::with_capacity(hops);
    for _ in 0..hops {
        let cur = *walk.last().unwrap();
        let inc = g.incident_indices(cur).ok()?;
        if inc.is_empty() {
            return None;
        }
        let idx = inc[rng.gen_range(0..inc.len())];
        let next = g.triplets()[idx].other(cur);
        if walk.contains(&next) {
            return None;
        }
        edges.push(idx);
        walk.push(next);
    }
    Some((edges, walk))
}

/// Chains the hop templates. Only the start entity is named; intermediate
/// entities become `[X1]`, `[X2]` and the answer becomes `[?]`.
fn render_question(g: &KnowledgeGraph, templates: &TemplateTable, gold: &GoldPath, walk: &[EntityId]) -> Result<String> {
    let name = |i: usize| -> String {
        if i == 0 {
            g.entity_label(walk[0]).to_string()
        } else if i == walk.len() - 1 {
            "[?]".to_string()
        } else {
            format!("[X{i}]")
        }
    };
    let mut clauses = Vec::with_capacity(gold.edges.len());
    for (i, &idx) in gold.edges.iter().enumerate() {
        let t = g.triplet(idx)?;
        let tpl = templates.require(g, t.relation)?;
        let (sub, obj) = if t.head == walk[i] { (name(i), name(i + 1)) } else { (name(i + 1), name(i)) };
        clauses.push(tpl.fill(&sub, &obj).trim_end().trim_end_matches('.').to_string());
    }
    Ok(format!("{}. Which entity is [?]?", clauses.join("; then ")))
}

/// Entity whose label occurs verbatim in `text` (longest label wins), else
/// the entity whose label embedding is most similar to the text. Ties go to
/// the lowest id.
pub fn link_entity(text: &str, g: &KnowledgeGraph, provider: &dyn EmbeddingProvider) -> Result<EntityId> {
    if g.num_entities() == 0 {
        return Err(Error::InvalidArgument("cannot link against an empty graph".into()));
    }
    let exact = g
        .entities()
        .filter(|&v| !g.entity_label(v).is_empty() && text.contains(g.entity_label(v)))
        .max_by(|&a, &b| g.entity_label(a).len().cmp(&g.entity_label(b).len()).then(b.cmp(&a)));
    if let Some(v) = exact {
        return Ok(v);
    }
    let q = provider.embed_unit(text)?;
    let mut best: Option<(EntityId, f64)> = None;
    for v in g.entities() {
        let Ok(e) = provider.embed_unit(g.entity_label(v)) else {
            continue;
        };
        let c = dot(&q, &e);
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((v, c));
        }
    }
    best.map(|(v, _)| v)
        .ok_or_else(|| Error::InvalidArgument("no entity label has a usable embedding".into()))
}

/// Cosine similarity between the question and "relation tail", mapped to
/// [0, 1] via `(1 + cos) / 2` unless `raw` is set.
pub fn semantic_score(
    provider: &dyn EmbeddingProvider,
    g: &KnowledgeGraph,
    relation: RelationId,
    tail: EntityId,
    question: &str,
    raw: bool,
) -> Result<f64> {
    let q = provider.embed_unit(question)?;
    hop_similarity(provider, g, relation, tail, &q, raw)
}

fn hop_similarity(
    provider: &dyn EmbeddingProvider,
    g: &KnowledgeGraph,
    relation: RelationId,
    tail: EntityId,
    q_unit: &[f64],
    raw: bool,
) -> Result<f64> {
    let text = format!("{} {}", g.relation_label(relation), g.entity_label(tail));
    let c = dot(&provider.embed_unit(&text)?, q_unit).clamp(-1.0, 1.0);
    Ok(if raw { c } else { (1.0 + c) / 2.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Semantic,
    KnowledgeAware,
}

impl std::str::FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semantic" => Ok(Self::Semantic),
            "knowledge_aware" | "knowledge-aware" => Ok(Self::KnowledgeAware),
            other => Err(Error::Usage(format!("unknown search mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub beam_width: usize,
    pub max_hops: usize,
    pub alpha: f64,
    pub mode: SearchMode,
    /// Use raw cosine as the hop similarity instead of `(1 + cos) / 2`.
    pub raw_cosine: bool,
    /// Keep every expansion; the beam width is ignored.
    pub exhaustive: bool,
    /// Start from the gold start entity instead of linking from text.
    pub gold_start: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            beam_width: 8,
            max_hops: 2,
            alpha: 0.5,
            mode: SearchMode::Semantic,
            raw_cosine: false,
            exhaustive: false,
            gold_start: false,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::InvalidArgument("beam width must be at least 1".into()));
        }
        if !(2..=3).contains(&self.max_hops) {
            return Err(Error::InvalidArgument(format!("max_hops must be 2 or 3, got {}", self.max_hops)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathCandidate {
    pub edges: Vec<usize>,
    /// Start entity followed by the entity reached at each hop.
    pub entities: Vec<EntityId>,
    pub score: f64,
    pub per_hop_scores: Vec<f64>,
}

impl PathCandidate {
    pub fn end(&self) -> EntityId {
        *self.entities.last().expect("a candidate always holds its start entity")
    }
}

/// Hop score `S * (1 - alpha * K(u))`; `S` alone when `k` is `None`.
pub fn hop_score(s: f64, k: Option<f64>, alpha: f64) -> f64 {
    match k {
        Some(k) => s * (1.0 - alpha * k),
        None => s,
    }
}

fn rank(a: &PathCandidate, b: &PathCandidate) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.edges.cmp(&b.edges))
}

/// Level-synchronous beam search from `start`. Returns walks of length
/// `max_hops` sorted by descending score, or the longest shorter walks when
/// no walk can be extended that far.
pub fn beam_search(
    g: &KnowledgeGraph,
    start: EntityId,
    question: &str,
    cfg: &RetrievalConfig,
    k_scores: Option<&EntityScoreTable>,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<PathCandidate>> {
    cfg.validate()?;
    g.check_entity(start)?;
    let k_scores = match cfg.mode {
        SearchMode::Semantic => None,
        SearchMode::KnowledgeAware => Some(k_scores.ok_or_else(|| {
            Error::InvalidArgument("knowledge-aware search needs entity scores".into())
        })?),
    };
    let q = provider.embed_unit(question)?;

    let mut beam = vec![PathCandidate {
        edges: vec![],
        entities: vec![start],
        score: 1.0,
        per_hop_scores: vec![],
    }];
    for level in 0..cfg.max_hops {
        let mut next = Vec::new();
        for path in &beam {
            let frontier = path.end();
            for &idx in g.incident_indices(frontier)? {
                let t = &g.triplets()[idx];
                let u = t.other(frontier);
                if path.entities.contains(&u) {
                    continue;
                }
                let s = hop_similarity(provider, g, t.relation, u, &q, cfg.raw_cosine)?;
                let k = k_scores.map(|ks| ks.get(u).unwrap_or(MISSING_K));
                let h = hop_score(s, k, cfg.alpha);
                let mut c = path.clone();
                c.edges.push(idx);
                c.entities.push(u);
                c.score *= h;
                c.per_hop_scores.push(h);
                next.push(c);
            }
        }
        if next.is_empty() {
            if level == 0 {
                return Ok(vec![]);
            }
            break;
        }
        next.sort_by(rank);
        if !cfg.exhaustive {
            next.truncate(cfg.beam_width);
        }
        beam = next;
    }
    Ok(beam)
}

/// Runs linking and beam search for every question in parallel.
pub fn run_retrieval(
    g: &KnowledgeGraph,
    questions: &[Question],
    cfg: &RetrievalConfig,
    k_scores: Option<&EntityScoreTable>,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<Vec<PathCandidate>>> {
    questions
        .par_iter()
        .map(|q| {
            let start = if cfg.gold_start {
                q.gold.start
            } else {
                link_entity(&q.text, g, provider)?
            };
            beam_search(g, start, &q.text, cfg, k_scores, provider)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopBreakdown {
    pub n_questions: usize,
    pub gold_path_recovery: f64,
    pub answer_hit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub n_questions: usize,
    pub gold_path_recovery: f64,
    pub answer_hit: f64,
    /// Keyed by hop count.
    pub per_hop_breakdown: BTreeMap<usize, HopBreakdown>,
}

pub fn evaluate_retrieval(results: &[Vec<PathCandidate>], questions: &[Question]) -> Result<RetrievalReport> {
    if results.len() != questions.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} result lists for {} questions",
            results.len(),
            questions.len()
        )));
    }
    if questions.is_empty() {
        return Err(Error::InvalidArgument("no questions to evaluate".into()));
    }
    // (count, gold hits, answer hits) per hop count.
    let mut tally: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    for (cands, q) in results.iter().zip(questions) {
        let gold = cands.iter().any(|c| c.edges == q.gold.edges);
        let hit = cands.iter().any(|c| c.end() == q.gold.answer && !c.edges.is_empty());
        let e = tally.entry(q.gold.hops()).or_default();
        e.0 += 1;
        e.1 += usize::from(gold);
        e.2 += usize::from(hit);
    }
    let (n, gold, hit) = tally
        .values()
        .fold((0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    Ok(RetrievalReport {
        n_questions: n,
        gold_path_recovery: gold as f64 / n as f64,
        answer_hit: hit as f64 / n as f64,
        per_hop_breakdown: tally
            .into_iter()
            .map(|(h, (n, gold, hit))| {
                (
                    h,
                    HopBreakdown {
                        n_questions: n,
                        gold_path_recovery: gold as f64 / n as f64,
                        answer_hit: hit as f64 / n as f64,
                    },
                )
            })
            .collect(),
    })
}
