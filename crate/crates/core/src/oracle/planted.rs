use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BatchOutcome, Labeler};
use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph};
use crate::labels::{LabelSource, TripletLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommunityAssignment {
    /// Contiguous blocks of a breadth-first ordering.
    #[default]
    BfsBlocks,
    /// Contiguous blocks of a seeded random permutation.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedOracleConfig {
    pub n_communities: usize,
    pub community_rates: Vec<f64>,
    #[serde(default)]
    pub assignment: CommunityAssignment,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl PlantedOracleConfig {
    pub fn two_communities(high: f64, low: f64, noise: f64, seed: u64) -> Self {
        Self {
            n_communities: 2,
            community_rates: vec![high, low],
            assignment: CommunityAssignment::BfsBlocks,
            noise,
            seed,
        }
    }

    fn validate(&self, g: &KnowledgeGraph) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_communities == 0 || self.community_rates.len() != self.n_communities {
            return bad(format!(
                "need one rate per community: {} communities, {} rates",
                self.n_communities,
                self.community_rates.len()
            ));
        }
        if self.n_communities > g.num_entities() {
            return bad(format!(
                "{} communities exceed {} entities",
                self.n_communities,
                g.num_entities()
            ));
        }
        if self.community_rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("community rates must lie in [0, 1]".into());
        }
        if !(0.0..0.5).contains(&self.noise) {
            return bad(format!("noise must lie in [0, 0.5), got {}", self.noise));
        }
        Ok(())
    }
}

/// Synthetic ground truth with community-structured Bernoulli rates.
///
/// Labels are drawn once for every triplet of the graph passed to
/// [`PlantedOracle::new`]; graphs derived from it by sparsification map back
/// through their origin indices and see the same labels.
#[derive(Debug, Clone)]
pub struct PlantedOracle {
    communities: Vec<usize>,
    rates: Vec<f64>,
    labels: Vec<u8>,
}

impl PlantedOracle {
    pub fn new(g: &KnowledgeGraph, cfg: &PlantedOracleConfig) -> Result<Self> {
        cfg.validate(g)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let order: Vec<EntityId> = match cfg.assignment {
            CommunityAssignment::BfsBlocks => bfs_order(g),
            CommunityAssignment::Random => {
                let mut v: Vec<EntityId> = g.entities().collect();
                v.shuffle(&mut rng);
                v
            }
        };
        let n = g.num_entities();
        let mut communities = vec![0; n];
        for (pos, v) in order.iter().enumerate() {
            communities[v.index()] = pos * cfg.n_communities / n;
        }
        let rates: Vec<f64> = g
            .triplets()
            .iter()
            .map(|t| {
                (cfg.community_rates[communities[t.head.index()]]
                    + cfg.community_rates[communities[t.tail.index()]])
                    / 2.0
            })
            .collect();
        let labels = rates
            .iter()
            .map(|&p| {
                let draw = rng.gen::<f64>() < p;
                let flip = rng.gen::<f64>() < cfg.noise;
                u8::from(draw ^ flip)
            })
            .collect();
        Ok(Self {
            communities,
            rates,
            labels,
        })
    }

    pub fn community(&self, v: EntityId) -> usize {
        self.communities[v.index()]
    }

    /// Bernoulli rate of a root-graph triplet before noise.
    pub fn rate(&self, root_idx: usize) -> f64 {
        self.rates[root_idx]
    }

    /// Label of triplet `idx` of `g`, which must be the root graph or derived from it.
    pub fn label(&self, g: &KnowledgeGraph, idx: usize) -> u8 {
        self.labels[g.origin_index(idx)]
    }

    /// Mean label of each entity's incident triplets in the root graph.
    pub fn true_scores(&self, g: &KnowledgeGraph) -> crate::labels::EntityScoreTable {
        let mut t = crate::labels::EntityScoreTable::new();
        for v in g.entities() {
            let inc = g.incident_indices(v).expect("valid");
            if inc.is_empty() {
                continue;
            }
            let s: f64 = inc.iter().map(|&i| f64::from(self.label(g, i))).sum();
            t.insert(v, s / inc.len() as f64, inc.len());
        }
        t
    }
}

impl Labeler for PlantedOracle {
    fn label_batch(&self, g: &KnowledgeGraph, indices: &[usize]) -> BatchOutcome {
        let mut out = BatchOutcome::default();
        for &i in indices {
            out.labels.insert(TripletLabel {
                triplet: i,
                value: self.label(g, i),
                source: LabelSource::Synthetic,
            });
        }
        out
    }

    fn source(&self) -> LabelSource {
        LabelSource::Synthetic
    }
}

/// Breadth-first order over all components, each started from its lowest id.
fn bfs_order(g: &KnowledgeGraph) -> Vec<EntityId> {
    let n = g.num_entities();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    for root in g.entities() {
        if seen[root.index()] {
            continue;
        }
        seen[root.index()] = true;
        queue.push_back(root);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &u in g.neighbors(v).expect("valid") {
                if !seen[u.index()] {
                    seen[u.index()] = true;
                    queue.push_back(u);
                }
            }
        }
    }
    order
}
