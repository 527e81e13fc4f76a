//! Synthetic knowledge graphs with spatial community structure.
//!
//! Entities sit in clusters arranged on a ring. Edges stay inside a cluster
//! or reach an adjacent one, so a breadth-first ordering sweeps contiguous
//! arcs of the ring and the planted oracle's `bfs_blocks` communities are
//! spatially coherent. Entity labels mix a topic word tied to the ring
//! position (with probability `topic_signal`) and a filler word, which gives
//! text features a weak, noisy hint of location.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, KnowledgeGraph};
use crate::oracle::{RelationTemplate, TemplateTable};

const TOPICS: [&str; 16] = [
    "Amber", "Basalt", "Cedar", "Dune", "Ember", "Fjord", "Garnet", "Harbor", "Iris", "Juniper",
    "Kestrel", "Lagoon", "Meadow", "Nimbus", "Onyx", "Prairie",
];

const FILLERS: [&str; 12] = [
    "Works", "Society", "Institute", "Records", "Studio", "Holdings", "Collective", "Archive",
    "Guild", "Foundry", "Press", "Labs",
];

/// Relation label and its verbalization template.
pub const RELATIONS: [(&str, &str); 12] = [
    ("works_with", "{SUB} works with {OBJ}."),
    ("located_in", "{SUB} is located in {OBJ}."),
    ("part_of", "{SUB} is part of {OBJ}."),
    ("founded_by", "{SUB} was founded by {OBJ}."),
    ("member_of", "{SUB} is a member of {OBJ}."),
    ("influenced_by", "{SUB} was influenced by {OBJ}."),
    ("supplies", "{SUB} supplies {OBJ}."),
    ("sponsors", "{SUB} sponsors {OBJ}."),
    ("borders", "{SUB} borders {OBJ}."),
    ("studied_at", "{SUB} studied at {OBJ}."),
    ("owned_by", "{SUB} is owned by {OBJ}."),
    ("competes_with", "{SUB} competes with {OBJ}."),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedGraphConfig {
    pub n_entities: usize,
    pub cluster_size: usize,
    /// Triplets emitted per entity; the mean degree is about twice this.
    pub edges_per_entity: usize,
    /// Probability an edge goes to an adjacent cluster instead of its own.
    pub cross_cluster: f64,
    pub n_relations: usize,
    pub n_topics: usize,
    pub topic_signal: f64,
    pub seed: u64,
}

impl Default for PlantedGraphConfig {
    fn default() -> Self {
        Self {
            n_entities: 1000,
            cluster_size: 25,
            edges_per_entity: 3,
            cross_cluster: 0.2,
            n_relations: 8,
            n_topics: 8,
            topic_signal: 0.6,
            seed: 0,
        }
    }
}

pub struct PlantedGraph {
    pub graph: KnowledgeGraph,
    pub templates: TemplateTable,
}

pub fn planted_graph(cfg: &PlantedGraphConfig) -> Result<PlantedGraph> {
    if cfg.n_entities < 2 || cfg.cluster_size < 2 || cfg.edges_per_entity == 0 {
        return Err(Error::InvalidArgument("planted graph needs >= 2 entities, cluster size >= 2 and edges".into()));
    }
    if cfg.n_relations == 0 || cfg.n_relations > RELATIONS.len() {
        return Err(Error::InvalidArgument(format!("n_relations must be in 1..={}", RELATIONS.len())));
    }
    if cfg.n_topics == 0 || cfg.n_topics > TOPICS.len() {
        return Err(Error::InvalidArgument(format!("n_topics must be in 1..={}", TOPICS.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_entities;
    let n_clusters = n.div_ceil(cfg.cluster_size).max(1);
    let cluster_of = |i: usize| i / cfg.cluster_size;
    let members = |c: usize| {
        let lo = c * cfg.cluster_size;
        lo..((c + 1) * cfg.cluster_size).min(n)
    };

    let labels: Vec<String> = (0..n)
        .map(|i| {
            let home = cluster_of(i) * cfg.n_topics / n_clusters;
            let topic = if rng.gen::<f64>() < cfg.topic_signal {
                home
            } else {
                rng.gen_range(0..cfg.n_topics)
            };
            let filler = FILLERS[rng.gen_range(0..FILLERS.len())];
            format!("{} {} {:04}", TOPICS[topic], filler, i)
        })
        .collect();

    // Ids follow first appearance, so the graph survives a TSV round trip unchanged.
    let mut b = GraphBuilder::new();
    for i in 0..n {
        let c = cluster_of(i);
        for _ in 0..cfg.edges_per_entity {
            let target_cluster = if n_clusters > 1 && rng.gen::<f64>() < cfg.cross_cluster {
                if rng.gen::<bool>() {
                    (c + 1) % n_clusters
                } else {
                    (c + n_clusters - 1) % n_clusters
                }
            } else {
                c
            };
            let range = members(target_cluster);
            let mut j = rng.gen_range(range.clone());
            if j == i {
                j = if j + 1 < range.end { j + 1 } else { range.start };
            }
            if j == i {
                continue;
            }
            let rel = RELATIONS[rng.gen_range(0..cfg.n_relations)].0;
            b.triplet(&labels[i], rel, &labels[j]);
        }
    }
    let graph = b.build();
    let mut templates = TemplateTable::new();
    for (name, pattern) in RELATIONS.iter().take(cfg.n_relations) {
        if let Some(r) = graph.relation_by_label(name) {
            templates.insert(RelationTemplate::new(r, pattern)?);
        }
    }
    Ok(PlantedGraph { graph, templates })
}

/// Writes the graph as TSV and its templates as `relation⇥pattern`.
pub fn write_planted(p: &PlantedGraph, graph_path: &std::path::Path, templates_path: &std::path::Path) -> Result<()> {
    use std::fmt::Write as _;
    p.graph.write_tsv(graph_path)?;
    let mut text = String::new();
    for r in 0..p.graph.num_relations() {
        let r = crate::graph::RelationId(r as u32);
        if let Some(t) = p.templates.get(r) {
            let _ = writeln!(text, "{}\t{}", p.graph.relation_label(r), t.pattern);
        }
    }
    std::fs::write(templates_path, text).map_err(|e| Error::io(templates_path, e))
}
