//! Budgeted triplet selection for knowledge injection.
//!
//! A small anchor set is probed to get ground-truth entity scores. An
//! estimator trained on those scores then ranks the remaining entities, and
//! the rest of the budget goes to triplets around the least-known entities.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph};
use crate::homophily::entity_knowledgeability;
use crate::labels::{EntityScoreTable, TripletLabelTable};
use crate::oracle::{verbalize, DateMode, Labeler, TemplateTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub total_triplets: usize,
    pub anchor_fraction: f64,
}

impl Budget {
    pub fn new(total_triplets: usize, anchor_fraction: f64) -> Result<Self> {
        let b = Self {
            total_triplets,
            anchor_fraction,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_triplets == 0 {
            return Err(Error::InvalidArgument("budget must cover at least one triplet".into()));
        }
        if !(self.anchor_fraction > 0.0 && self.anchor_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "anchor fraction must lie in (0, 1), got {}",
                self.anchor_fraction
            )));
        }
        Ok(())
    }

    /// Number of anchor triplets: the ceiling of `anchor_fraction * total_triplets`.
    pub fn anchor_quota(&self) -> usize {
        ceil_fraction(self.anchor_fraction, self.total_triplets)
    }
}

/// `ceil(fraction * n)`, guarded against float noise such as `0.2 * 4000 = 800.0000000000001`.
pub fn ceil_fraction(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    /// Entities in visiting order; each contributed at least one triplet.
    pub entities: Vec<EntityId>,
    /// Anchor triplet indices in the order they were taken.
    pub triplets: Vec<usize>,
    pub labels: TripletLabelTable,
    pub entity_scores: EntityScoreTable,
    /// Anchor triplets the oracle could not label, with the reason.
    #[serde(default)]
    pub failures: BTreeMap<usize, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub anchors: AnchorSet,
    pub selected: Vec<usize>,
    /// Entities by ascending predicted score; empty for random plans.
    pub ranking: Vec<(EntityId, f64)>,
}

impl SelectionPlan {
    /// Anchor triplets followed by selected triplets.
    pub fn all_triplets(&self) -> impl Iterator<Item = usize> + '_ {
        self.anchors.triplets.iter().chain(&self.selected).copied()
    }

    /// Every entity touched by an anchor or selected triplet.
    pub fn entities(&self, g: &KnowledgeGraph) -> Result<BTreeSet<EntityId>> {
        let mut out = BTreeSet::new();
        for idx in self.all_triplets() {
            let t = g.triplet(idx)?;
            out.insert(t.head);
            out.insert(t.tail);
        }
        Ok(out)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Entity-centric anchor sampling: walk a seeded permutation of entities and
/// take all incident triplets of each until the quota is reached. The last
/// entity is clipped to a prefix of its incident triplets in load order.
pub fn sample_anchors(g: &KnowledgeGraph, budget: &Budget, labeler: &dyn Labeler, seed: u64) -> Result<AnchorSet> {
    budget.validate()?;
    let quota = budget.anchor_quota();
    if g.num_triplets() < quota {
        return Err(Error::Shortfall {
            needed: quota,
            available: g.num_triplets(),
        });
    }
    let mut order: Vec<EntityId> = g.entities().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut taken = vec![false; g.num_triplets()];
    let mut entities = Vec::new();
    let mut triplets = Vec::with_capacity(quota);
    for v in order {
        if triplets.len() >= quota {
            break;
        }
        let before = triplets.len();
        for &idx in g.incident_indices(v)? {
            if triplets.len() >= quota {
                break;
            }
            if !taken[idx] {
                taken[idx] = true;
                triplets.push(idx);
            }
        }
        if triplets.len() > before {
            entities.push(v);
        }
    }

    let outcome = labeler.label_batch(g, &triplets);
    let failures = outcome
        .errors
        .iter()
        .map(|f| (f.triplet, f.error.to_string()))
        .collect();
    let entity_scores = entity_knowledgeability(g, &outcome.labels)?;
    Ok(AnchorSet {
        entities,
        triplets,
        labels: outcome.labels,
        entity_scores,
        failures,
    })
}

fn remaining_need(anchors: &AnchorSet, budget: &Budget) -> Result<usize> {
    budget.validate()?;
    budget
        .total_triplets
        .checked_sub(anchors.triplets.len())
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "anchor set ({}) exceeds the budget ({})",
                anchors.triplets.len(),
                budget.total_triplets
            ))
        })
}

/// Fills the rest of the budget with triplets around the lowest-scored
/// entities. Ties in score go to the lower entity id.
pub fn plan_selection(
    g: &KnowledgeGraph,
    predictions: &EntityScoreTable,
    anchors: &AnchorSet,
    budget: &Budget,
) -> Result<SelectionPlan> {
    let need = remaining_need(anchors, budget)?;
    let mut ranking: Vec<(EntityId, f64)> = predictions.iter().collect();
    for &(v, s) in &ranking {
        g.check_entity(v)?;
        if s.is_nan() {
            return Err(Error::InvalidArgument(format!("prediction for entity {v} is NaN")));
        }
    }
    ranking.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let mut blocked = vec![false; g.num_triplets()];
    for &idx in &anchors.triplets {
        blocked[idx] = true;
    }
    let mut selected = Vec::with_capacity(need);
    'walk: for &(v, _) in &ranking {
        for &idx in g.incident_indices(v)? {
            if selected.len() >= need {
                break 'walk;
            }
            if !blocked[idx] {
                blocked[idx] = true;
                selected.push(idx);
            }
        }
    }
    if selected.len() < need {
        return Err(Error::Shortfall {
            needed: need,
            available: selected.len(),
        });
    }
    Ok(SelectionPlan {
        anchors: anchors.clone(),
        selected,
        ranking,
    })
}

/// Uniform sample without replacement from the non-anchor triplets.
pub fn random_plan(g: &KnowledgeGraph, anchors: &AnchorSet, budget: &Budget, seed: u64) -> Result<SelectionPlan> {
    let need = remaining_need(anchors, budget)?;
    let anchor_set: BTreeSet<usize> = anchors.triplets.iter().copied().collect();
    let pool: Vec<usize> = (0..g.num_triplets()).filter(|i| !anchor_set.contains(i)).collect();
    if pool.len() < need {
        return Err(Error::Shortfall {
            needed: need,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let selected = rand::seq::index::sample(&mut rng, pool.len(), need)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    Ok(SelectionPlan {
        anchors: anchors.clone(),
        selected,
        ranking: Vec::new(),
    })
}

/// Samples `ceil(fraction * |T|)` triplets that share no entity with the
/// plan. The result is sorted ascending.
pub fn holdout_split(g: &KnowledgeGraph, plan: &SelectionPlan, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("holdout fraction must lie in (0, 1), got {fraction}")));
    }
    let wanted = ceil_fraction(fraction, g.num_triplets());
    let used = plan.entities(g)?;
    let pool: Vec<usize> = g
        .triplets()
        .iter()
        .enumerate()
        .filter(|(_, t)| !used.contains(&t.head) && !used.contains(&t.tail))
        .map(|(i, _)| i)
        .collect();
    if pool.len() < wanted {
        return Err(Error::Shortfall {
            needed: wanted,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), wanted)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityScope {
    /// Anchors plus selected triplets: the whole fine-tuning set.
    #[default]
    FineTuningSet,
    SelectedOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionQualityReport {
    pub scope: QualityScope,
    /// Triplets with a usable label.
    pub n_selected: usize,
    pub n_unknown: usize,
    pub n_unparseable: usize,
    pub quality: f64,
}

/// Fraction of the plan's triplets the oracle labels 0 (unknown).
pub fn selection_quality(
    g: &KnowledgeGraph,
    plan: &SelectionPlan,
    labeler: &dyn Labeler,
    scope: QualityScope,
) -> Result<SelectionQualityReport> {
    let indices: Vec<usize> = match scope {
        QualityScope::FineTuningSet => plan.all_triplets().collect(),
        QualityScope::SelectedOnly => plan.selected.clone(),
    };
    if indices.is_empty() {
        return Err(Error::InvalidArgument("plan has no triplets to evaluate".into()));
    }
    let outcome = labeler.label_batch(g, &indices);
    let n_selected = outcome.labels.len();
    if n_selected == 0 {
        return Err(Error::InvalidArgument(format!(
            "none of the {} plan triplets could be labeled",
            indices.len()
        )));
    }
    let n_unknown = outcome.labels.iter().filter(|l| l.value == 0).count();
    Ok(SelectionQualityReport {
        scope,
        n_selected,
        n_unknown,
        n_unparseable: outcome.errors.len(),
        quality: n_unknown as f64 / n_selected as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub statement: String,
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub label_if_known: Option<u8>,
}

/// Writes one verbalized record per plan triplet (anchors first) as JSON lines.
/// Nothing is written if any relation lacks a template.
pub fn export_finetune_dataset(
    g: &KnowledgeGraph,
    plan: &SelectionPlan,
    templates: &TemplateTable,
    path: &Path,
) -> Result<usize> {
    let indices: Vec<usize> = plan.all_triplets().collect();
    if indices.is_empty() {
        return Err(Error::InvalidArgument("cannot export an empty plan".into()));
    }
    export_statements(g, &indices, &plan.anchors.labels, templates, path)
}

/// Writes a [`FinetuneRecord`] line for each of `indices`, in order, taking
/// `label_if_known` from `known`. Returns the record count.
pub fn export_statements(
    g: &KnowledgeGraph,
    indices: &[usize],
    known: &TripletLabelTable,
    templates: &TemplateTable,
    path: &Path,
) -> Result<usize> {
    let mut records = Vec::with_capacity(indices.len());
    for &idx in indices {
        let t = g.triplet(idx)?;
        let statement = verbalize(g, idx, templates, DateMode::None)?;
        records.push(FinetuneRecord {
            statement: statement.text,
            head: g.entity_label(t.head).to_string(),
            relation: g.relation_label(t.relation).to_string(),
            tail: g.entity_label(t.tail).to_string(),
            label_if_known: known.get(idx),
        });
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in &records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}
