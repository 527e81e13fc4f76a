//! Knowledge-graph data model: dense entity/relation ids, triplets, and the
//! undirected neighbor and incidence indexes built at load time.
//!
//! A [`KnowledgeGraph`] is immutable once built. Direction is kept on each
//! [`Triplet`], while [`KnowledgeGraph::neighbors`] treats head and tail
//! symmetrically and deduplicates parallel edges.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::EntityScoreTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
    pub timestamp: Option<NaiveDate>,
}

impl Triplet {
    pub fn is_self_loop(&self) -> bool {
        self.head == self.tail
    }

    pub fn involves(&self, v: EntityId) -> bool {
        self.head == v || self.tail == v
    }

    /// The endpoint opposite `v`; `v` itself for a self-loop.
    pub fn other(&self, v: EntityId) -> EntityId {
        if self.head == v {
            self.tail
        } else {
            self.head
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphFormat {
    Tsv,
    TsvTemporal,
}

impl GraphFormat {
    fn field_count(self) -> usize {
        match self {
            GraphFormat::Tsv => 3,
            GraphFormat::TsvTemporal => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entity_labels: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_labels: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    triplets: Vec<Triplet>,
    neighbors: Vec<Vec<EntityId>>,
    incidence: Vec<Vec<usize>>,
    // Index of each triplet in the graph this one was derived from (identity when loaded).
    origin: Vec<usize>,
}

/// Incremental construction; ids are assigned in first-appearance order.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    entity_labels: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_labels: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    triplets: Vec<Triplet>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity(&mut self, label: &str) -> EntityId {
        if let Some(&id) = self.entity_index.get(label) {
            return id;
        }
        let id = EntityId(self.entity_labels.len() as u32);
        self.entity_labels.push(label.to_string());
        self.entity_index.insert(label.to_string(), id);
        id
    }

    pub fn relation(&mut self, label: &str) -> RelationId {
        if let Some(&id) = self.relation_index.get(label) {
            return id;
        }
        let id = RelationId(self.relation_labels.len() as u32);
        self.relation_labels.push(label.to_string());
        self.relation_index.insert(label.to_string(), id);
        id
    }

    pub fn triplet(&mut self, head: &str, relation: &str, tail: &str) -> usize {
        self.triplet_at(head, relation, tail, None)
    }

    pub fn triplet_at(
        &mut self,
        head: &str,
        relation: &str,
        tail: &str,
        timestamp: Option<NaiveDate>,
    ) -> usize {
        let head = self.entity(head);
        let relation = self.relation(relation);
        let tail = self.entity(tail);
        self.triplets.push(Triplet {
            head,
            relation,
            tail,
            timestamp,
        });
        self.triplets.len() - 1
    }

    pub fn build(self) -> KnowledgeGraph {
        let origin = (0..self.triplets.len()).collect();
        KnowledgeGraph::assemble(
            self.entity_labels,
            self.entity_index,
            self.relation_labels,
            self.relation_index,
            self.triplets,
            origin,
        )
    }
}

impl KnowledgeGraph {
    fn assemble(
        entity_labels: Vec<String>,
        entity_index: HashMap<String, EntityId>,
        relation_labels: Vec<String>,
        relation_index: HashMap<String, RelationId>,
        triplets: Vec<Triplet>,
        origin: Vec<usize>,
    ) -> Self {
        let n = entity_labels.len();
        let mut neighbors: Vec<Vec<EntityId>> = vec![Vec::new(); n];
        let mut incidence: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, t) in triplets.iter().enumerate() {
            incidence[t.head.index()].push(i);
            neighbors[t.head.index()].push(t.tail);
            if !t.is_self_loop() {
                incidence[t.tail.index()].push(i);
                neighbors[t.tail.index()].push(t.head);
            }
        }
        for set in &mut neighbors {
            set.sort_unstable();
            set.dedup();
        }
        Self {
            entity_labels,
            entity_index,
            relation_labels,
            relation_index,
            triplets,
            neighbors,
            incidence,
            origin,
        }
    }

    /// Reads a tab-separated triplet file. Blank lines and `#` comments are skipped.
    pub fn load(path: &Path, format: GraphFormat) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut builder = GraphBuilder::new();
        let expected = format.field_count();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != expected {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message: format!("expected {expected} tab-separated fields, found {}", fields.len()),
                });
            }
            let timestamp = match format {
                GraphFormat::Tsv => None,
                GraphFormat::TsvTemporal => {
                    let raw = fields[3].trim();
                    Some(NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|e| Error::Parse {
                        path: path.to_path_buf(),
                        line: n + 1,
                        message: format!("unparseable date `{raw}`: {e}"),
                    })?)
                }
            };
            builder.triplet_at(fields[0], fields[1], fields[2], timestamp);
        }
        if builder.triplets.is_empty() {
            return Err(Error::EmptyGraph(path.to_path_buf()));
        }
        Ok(builder.build())
    }

    pub fn num_entities(&self) -> usize {
        self.entity_labels.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_labels.len()
    }

    pub fn num_triplets(&self) -> usize {
        self.triplets.len()
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> + '_ {
        (0..self.entity_labels.len() as u32).map(EntityId)
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn triplet(&self, idx: usize) -> Result<&Triplet> {
        self.triplets.get(idx).ok_or(Error::UnknownTriplet(idx))
    }

    pub fn entity_label(&self, v: EntityId) -> &str {
        &self.entity_labels[v.index()]
    }

    pub fn relation_label(&self, r: RelationId) -> &str {
        &self.relation_labels[r.index()]
    }

    pub fn entity_labels(&self) -> &[String] {
        &self.entity_labels
    }

    pub fn relation_labels(&self) -> &[String] {
        &self.relation_labels
    }

    pub fn entity_by_label(&self, label: &str) -> Option<EntityId> {
        self.entity_index.get(label).copied()
    }

    pub fn relation_by_label(&self, label: &str) -> Option<RelationId> {
        self.relation_index.get(label).copied()
    }

    pub fn check_entity(&self, v: EntityId) -> Result<()> {
        if v.index() < self.entity_labels.len() {
            Ok(())
        } else {
            Err(Error::UnknownEntity(v.0))
        }
    }

    /// N(v): distinct entities joined to `v` by any triplet, ascending id.
    pub fn neighbors(&self, v: EntityId) -> Result<&[EntityId]> {
        self.check_entity(v)?;
        Ok(&self.neighbors[v.index()])
    }

    /// T(v) as triplet indices, in load order.
    pub fn incident_indices(&self, v: EntityId) -> Result<&[usize]> {
        self.check_entity(v)?;
        Ok(&self.incidence[v.index()])
    }

    pub fn incident_triplets(&self, v: EntityId) -> Result<Vec<Triplet>> {
        Ok(self
            .incident_indices(v)?
            .iter()
            .map(|&i| self.triplets[i])
            .collect())
    }

    pub fn degree(&self, v: EntityId) -> usize {
        self.neighbors[v.index()].len()
    }

    /// Index of triplet `idx` in the root graph this graph was derived from.
    pub fn origin_index(&self, idx: usize) -> usize {
        self.origin[idx]
    }

    /// Uniformly keeps ⌈fraction·|T|⌉ triplets without replacement, preserving
    /// load order and the full entity/relation id space.
    pub fn sparsify(&self, retain_fraction: f64, seed: u64) -> Result<KnowledgeGraph> {
        if !(retain_fraction > 0.0 && retain_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "retain_fraction must be in (0, 1], got {retain_fraction}"
            )));
        }
        let total = self.triplets.len();
        let keep = ((retain_fraction * total as f64).ceil() as usize).min(total);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, total, keep).into_vec();
        picked.sort_unstable();
        let triplets = picked.iter().map(|&i| self.triplets[i]).collect();
        let origin = picked.iter().map(|&i| self.origin[i]).collect();
        Ok(Self::assemble(
            self.entity_labels.clone(),
            self.entity_index.clone(),
            self.relation_labels.clone(),
            self.relation_index.clone(),
            triplets,
            origin,
        ))
    }

    /// Writes `entity_id,label,k_score,degree` for every scored entity.
    pub fn export_scores_csv(&self, scores: &EntityScoreTable, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
        w.write_record(["entity_id", "label", "k_score", "degree"])?;
        for (v, k) in scores.iter() {
            self.check_entity(v)?;
            w.write_record([
                v.0.to_string(),
                self.entity_label(v).to_string(),
                k.to_string(),
                self.degree(v).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes the graph back out in the TSV format `load` accepts.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for t in &self.triplets {
            let res = match t.timestamp {
                Some(d) => writeln!(
                    w,
                    "{}\t{}\t{}\t{}",
                    self.entity_label(t.head),
                    self.relation_label(t.relation),
                    self.entity_label(t.tail),
                    d.format("%Y-%m-%d")
                ),
                None => writeln!(
                    w,
                    "{}\t{}\t{}",
                    self.entity_label(t.head),
                    self.relation_label(t.relation),
                    self.entity_label(t.tail)
                ),
            };
            res.map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a score CSV written by [`KnowledgeGraph::export_scores_csv`].
/// Support is not stored in the file and comes back as 0.
pub fn read_scores_csv(path: &Path) -> Result<EntityScoreTable> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    let mut table = EntityScoreTable::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line: n + 2,
            message: m.to_string(),
        };
        let id: u32 = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad entity_id"))?;
        let k: f64 = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad k_score"))?;
        table.insert(EntityId(id), k, 0);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn ids(g: &KnowledgeGraph, labels: &[&str]) -> Vec<EntityId> {
        labels.iter().map(|l| g.entity_by_label(l).unwrap()).collect()
    }

    #[test]
    fn loads_three_line_file() {
        let f = write_tmp("a\tr1\tb\nb\tr1\tc\na\tr2\tc\n");
        let g = KnowledgeGraph::load(f.path(), GraphFormat::Tsv).unwrap();
        assert_eq!(g.num_entities(), 3);
        assert_eq!(g.num_triplets(), 3);
        let a = g.entity_by_label("a").unwrap();
        assert_eq!(g.neighbors(a).unwrap(), ids(&g, &["b", "c"]).as_slice());
        assert_eq!(a, EntityId(0));
        assert_eq!(g.entity_by_label("c"), Some(EntityId(2)));
    }

    #[test]
    fn wrong_field_count_reports_line() {
        let f = write_tmp("a\tr1\n");
        match KnowledgeGraph::load(f.path(), GraphFormat::Tsv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_tmp("# header\na\tr\tb\nx\ty\n");
        match KnowledgeGraph::load(f.path(), GraphFormat::Tsv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn temporal_line_keeps_date() {
        let f = write_tmp("Trump\tvisit\tChina\t2017-11-08\n");
        let g = KnowledgeGraph::load(f.path(), GraphFormat::TsvTemporal).unwrap();
        assert_eq!(
            g.triplets()[0].timestamp,
            Some(NaiveDate::from_ymd_opt(2017, 11, 8).unwrap())
        );
    }

    #[test]
    fn bad_date_and_empty_file_are_errors() {
        let f = write_tmp("a\tr\tb\t2017-13-45\n");
        assert!(matches!(
            KnowledgeGraph::load(f.path(), GraphFormat::TsvTemporal),
            Err(Error::Parse { line: 1, .. })
        ));
        let f = write_tmp("");
        assert!(matches!(
            KnowledgeGraph::load(f.path(), GraphFormat::Tsv),
            Err(Error::EmptyGraph(_))
        ));
        let f = write_tmp("# only a comment\n\n");
        assert!(matches!(
            KnowledgeGraph::load(f.path(), GraphFormat::Tsv),
            Err(Error::EmptyGraph(_))
        ));
    }

    #[test]
    fn neighbor_queries() {
        let mut b = GraphBuilder::new();
        b.triplet("a", "r", "b");
        b.triplet("b", "r", "c");
        let g = b.build();
        let [a, bb, c] = [EntityId(0), EntityId(1), EntityId(2)];
        assert_eq!(g.neighbors(bb).unwrap(), &[a, c]);
        assert_eq!(g.incident_triplets(bb).unwrap().len(), 2);
        assert!(matches!(g.neighbors(EntityId(9)), Err(Error::UnknownEntity(9))));
        assert!(g.incident_indices(EntityId(3)).is_err());

        let mut b = GraphBuilder::new();
        b.triplet("x", "r", "y");
        b.triplet("y", "r", "z");
        b.triplet("z", "r", "x");
        let tri = b.build();
        for v in tri.entities() {
            let others: Vec<_> = tri.entities().filter(|&u| u != v).collect();
            assert_eq!(tri.neighbors(v).unwrap(), others.as_slice());
        }
    }

    #[test]
    fn parallel_edges_dedup_in_neighbors_only() {
        let mut b = GraphBuilder::new();
        b.triplet("a", "r1", "b");
        b.triplet("a", "r2", "b");
        b.entity("lonely");
        let g = b.build();
        let a = EntityId(0);
        // brute force: unique partners over incident triplets
        let mut partners: Vec<EntityId> =
            g.triplets().iter().filter(|t| t.involves(a)).map(|t| t.other(a)).collect();
        partners.sort();
        partners.dedup();
        assert_eq!(g.neighbors(a).unwrap(), partners.as_slice());
        assert_eq!(g.incident_indices(a).unwrap(), &[0, 1]);
        assert!(g.incident_triplets(EntityId(2)).unwrap().is_empty());
        assert!(g.neighbors(EntityId(2)).unwrap().is_empty());
    }

    #[test]
    fn self_loop_listed_once() {
        let mut b = GraphBuilder::new();
        b.triplet("a", "r", "a");
        b.triplet("a", "r", "b");
        let g = b.build();
        let a = EntityId(0);
        let brute: Vec<usize> = (0..g.num_triplets())
            .filter(|&i| g.triplets()[i].involves(a))
            .collect();
        assert_eq!(g.incident_indices(a).unwrap(), brute.as_slice());
        assert_eq!(g.neighbors(a).unwrap(), &[a, EntityId(1)]);
    }

    #[test]
    fn sparsify_contracts() {
        let mut b = GraphBuilder::new();
        for i in 0..100 {
            b.triplet(&format!("e{i}"), "r", &format!("e{}", (i * 7 + 3) % 100));
        }
        let g = b.build();
        let full = g.sparsify(1.0, 3).unwrap();
        assert_eq!(full.triplets(), g.triplets());
        let s = g.sparsify(0.75, 3).unwrap();
        assert_eq!(s.num_triplets(), 75);
        assert_eq!(s.num_entities(), g.num_entities());
        let again = g.sparsify(0.75, 3).unwrap();
        assert_eq!(s.triplets(), again.triplets());
        for i in 0..s.num_triplets() {
            assert_eq!(s.triplets()[i], g.triplets()[s.origin_index(i)]);
        }
        assert!(g.sparsify(0.0, 1).is_err());
        assert!(g.sparsify(1.5, 1).is_err());
        assert!(g.sparsify(f64::NAN, 1).is_err());
    }

    #[test]
    fn scores_csv_round_trip() {
        let mut b = GraphBuilder::new();
        b.triplet("a", "r", "b");
        b.triplet("b", "r", "c,with comma");
        let g = b.build();
        let mut scores = EntityScoreTable::new();
        scores.insert(EntityId(0), 1.0 / 3.0, 3);
        scores.insert(EntityId(1), 0.1 + 0.2, 2);
        scores.insert(EntityId(2), 0.0, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        g.export_scores_csv(&scores, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("entity_id,label,k_score,degree\n"));
        let back = read_scores_csv(&path).unwrap();
        for (v, k) in scores.iter() {
            assert_eq!(back.get(v).unwrap().to_bits(), k.to_bits());
        }

        g.export_scores_csv(&EntityScoreTable::new(), &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
    }
}
