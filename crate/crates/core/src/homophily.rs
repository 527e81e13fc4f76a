//! Entity knowledgeability, node homophily, the degree-matched random
//! baseline and sparsification robustness.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph};
use crate::labels::{EntityScoreTable, TripletLabelTable};
use crate::oracle::Labeler;

pub const DEFAULT_BINS: usize = 20;
pub const Z_99: f64 = 2.576;
/// Label-homophily of the Citeseer citation graph, drawn as a reference line.
pub const CITESEER_REFERENCE: f64 = 0.74;

/// K(v): mean label over the labeled triplets incident to `v`.
pub fn entity_knowledgeability(g: &KnowledgeGraph, labels: &TripletLabelTable) -> Result<EntityScoreTable> {
    let mut sum = vec![0u64; g.num_entities()];
    let mut count = vec![0usize; g.num_entities()];
    for l in labels.iter() {
        let t = g.triplet(l.triplet)?;
        sum[t.head.index()] += u64::from(l.value);
        count[t.head.index()] += 1;
        if !t.is_self_loop() {
            sum[t.tail.index()] += u64::from(l.value);
            count[t.tail.index()] += 1;
        }
    }
    let mut out = EntityScoreTable::new();
    for v in g.entities() {
        let c = count[v.index()];
        if c > 0 {
            out.insert(v, sum[v.index()] as f64 / c as f64, c);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomophilyReport {
    pub per_node: BTreeMap<EntityId, f64>,
    pub graph_mean: f64,
    pub histogram: Vec<usize>,
}

impl HomophilyReport {
    pub fn bins(&self) -> usize {
        self.histogram.len()
    }
}

/// Scored neighbors of every node that has a score and at least one of them.
fn qualifying_nodes(g: &KnowledgeGraph, scores: &EntityScoreTable) -> Vec<(EntityId, f64, Vec<f64>)> {
    g.entities()
        .filter_map(|v| {
            let kv = scores.get(v)?;
            let ks: Vec<f64> = g.neighbors(v).ok()?.iter().filter_map(|&u| scores.get(u)).collect();
            (!ks.is_empty()).then_some((v, kv, ks))
        })
        .collect()
}

fn homophily_of(kv: f64, peers: &[f64]) -> f64 {
    1.0 - peers.iter().map(|k| (kv - k).abs()).sum::<f64>() / peers.len() as f64
}

pub fn histogram(values: impl IntoIterator<Item = f64>, bins: usize) -> Vec<usize> {
    let mut h = vec![0; bins];
    for x in values {
        let b = ((x.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        h[b] += 1;
    }
    h
}

/// H(v) = 1 − mean |K(v) − K(u)| over scored neighbors u.
pub fn node_homophily(g: &KnowledgeGraph, scores: &EntityScoreTable, bins: usize) -> Result<HomophilyReport> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let nodes = qualifying_nodes(g, scores);
    if nodes.is_empty() {
        return Err(Error::NoComputableHomophily);
    }
    let per_node: BTreeMap<EntityId, f64> =
        nodes.iter().map(|(v, kv, ks)| (*v, homophily_of(*kv, ks))).collect();
    let graph_mean = per_node.values().sum::<f64>() / per_node.len() as f64;
    let histogram = histogram(per_node.values().copied(), bins);
    Ok(HomophilyReport {
        per_node,
        graph_mean,
        histogram,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub true_mean: f64,
    pub trials: usize,
    pub trial_means: Vec<f64>,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub z: f64,
    pub p_two_tailed: f64,
    pub ci99: (f64, f64),
}

/// Compares true homophily with random peer groups of matching size.
///
/// Each qualifying node draws as many scored entities (excluding itself,
/// without replacement) as it has scored neighbors. Trial `i` uses its own
/// ChaCha stream derived from `(seed, i)`.
pub fn degree_matched_baseline(
    g: &KnowledgeGraph,
    scores: &EntityScoreTable,
    trials: usize,
    seed: u64,
) -> Result<BaselineReport> {
    if trials < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 trials, got {trials}")));
    }
    if scores.len() < 2 {
        return Err(Error::InvalidArgument("baseline needs at least 2 scored entities".into()));
    }
    let nodes = qualifying_nodes(g, scores);
    if nodes.is_empty() {
        return Err(Error::NoComputableHomophily);
    }
    let true_mean = nodes.iter().map(|(_, kv, ks)| homophily_of(*kv, ks)).sum::<f64>() / nodes.len() as f64;

    let pool: Vec<(EntityId, f64)> = scores.iter().collect();
    let position: BTreeMap<EntityId, usize> = pool.iter().enumerate().map(|(i, (v, _))| (*v, i)).collect();
    let trial_means: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let mut peers = Vec::new();
            let total: f64 = nodes
                .iter()
                .map(|(v, kv, ks)| {
                    let own = position[v];
                    let k = ks.len().min(pool.len() - 1);
                    peers.clear();
                    // sample from pool minus v by shifting indices past v's slot
                    for j in index::sample(&mut rng, pool.len() - 1, k) {
                        let j = if j >= own { j + 1 } else { j };
                        peers.push(pool[j].1);
                    }
                    homophily_of(*kv, &peers)
                })
                .sum();
            total / nodes.len() as f64
        })
        .collect();

    let n = trial_means.len() as f64;
    let mean = trial_means.iter().sum::<f64>() / n;
    let var = trial_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(Error::DegenerateVariance(format!(
            "all {trials} baseline trials produced mean homophily {mean}"
        )));
    }
    let z = (true_mean - mean) / std;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = (2.0 * (1.0 - normal.cdf(z.abs()))).clamp(0.0, 1.0);
    Ok(BaselineReport {
        true_mean,
        trials,
        trial_means,
        baseline_mean: mean,
        baseline_std: std,
        z,
        p_two_tailed: p,
        ci99: (mean - Z_99 * std, mean + Z_99 * std),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

pub fn correlation(xs: &[f64], ys: &[f64], method: CorrelationMethod) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::InvalidArgument("correlation needs at least 3 points".into()));
    }
    match method {
        CorrelationMethod::Pearson => pearson(xs, ys),
        CorrelationMethod::Spearman => pearson(&average_ranks(xs), &average_ranks(ys)),
    }
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateVariance("correlation input has zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; ties share their mean rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub retain_fraction: f64,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub n_common_entities: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub per_fraction: Vec<RobustnessRow>,
}

/// Correlates full-graph entity scores with scores recomputed on sparsified copies.
pub fn sparsification_robustness(
    g: &KnowledgeGraph,
    labeler: &dyn Labeler,
    fractions: &[f64],
    seed: u64,
) -> Result<RobustnessReport> {
    let all: Vec<usize> = (0..g.num_triplets()).collect();
    let full_labels = labeler.label_batch(g, &all).labels;
    let full = entity_knowledgeability(g, &full_labels)?;
    let mut rows = Vec::with_capacity(fractions.len());
    for (i, &f) in fractions.iter().enumerate() {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidArgument(format!("retain fraction {f} outside (0, 1]")));
        }
        let sparse = g.sparsify(f, seed.wrapping_add(i as u64))?;
        // reuse the full-graph labels through origin indices
        let mut labels = TripletLabelTable::new();
        for j in 0..sparse.num_triplets() {
            if let Some(l) = full_labels.label(sparse.origin_index(j)) {
                labels.insert(crate::labels::TripletLabel { triplet: j, ..*l });
            }
        }
        let scores = entity_knowledgeability(&sparse, &labels)?;
        let (xs, ys): (Vec<f64>, Vec<f64>) = full
            .iter()
            .filter_map(|(v, k)| scores.get(v).map(|s| (k, s)))
            .unzip();
        let n = xs.len();
        let row = if n < 3 {
            RobustnessRow {
                retain_fraction: f,
                pearson: None,
                spearman: None,
                n_common_entities: n,
                error: Some(format!("only {n} commonly scored entities")),
            }
        } else {
            let p = correlation(&xs, &ys, CorrelationMethod::Pearson);
            let s = correlation(&xs, &ys, CorrelationMethod::Spearman);
            let error = p.as_ref().err().or(s.as_ref().err()).map(|e| e.to_string());
            RobustnessRow {
                retain_fraction: f,
                pearson: p.ok(),
                spearman: s.ok(),
                n_common_entities: n,
                error,
            }
        };
        rows.push(row);
    }
    Ok(RobustnessReport { per_fraction: rows })
}
