//! Triplet-level labels and entity-level scores shared by every stage.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EntityId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Llm,
    Cache,
    Synthetic,
}

/// Binary knowledgeability of one triplet: 1 if the model knows the fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletLabel {
    pub triplet: usize,
    pub value: u8,
    pub source: LabelSource,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<TripletLabel>", into = "Vec<TripletLabel>")]
pub struct TripletLabelTable {
    labels: BTreeMap<usize, TripletLabel>,
}

impl TripletLabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: TripletLabel) {
        debug_assert!(label.value <= 1);
        self.labels.insert(label.triplet, label);
    }

    pub fn get(&self, triplet: usize) -> Option<u8> {
        self.labels.get(&triplet).map(|l| l.value)
    }

    pub fn label(&self, triplet: usize) -> Option<&TripletLabel> {
        self.labels.get(&triplet)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels in ascending triplet order.
    pub fn iter(&self) -> impl Iterator<Item = &TripletLabel> + '_ {
        self.labels.values()
    }

    pub fn extend(&mut self, other: &TripletLabelTable) {
        for l in other.iter() {
            self.insert(*l);
        }
    }

    /// Writes one JSON record per line, ascending triplet order.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for l in self.iter() {
            serde_json::to_writer(&mut w, l)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table = Self::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let label: TripletLabel = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?;
            if label.value > 1 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message: format!("label value {} is not binary", label.value),
                });
            }
            table.insert(label);
        }
        Ok(table)
    }
}

impl From<Vec<TripletLabel>> for TripletLabelTable {
    fn from(v: Vec<TripletLabel>) -> Self {
        v.into_iter().collect()
    }
}

impl From<TripletLabelTable> for Vec<TripletLabel> {
    fn from(t: TripletLabelTable) -> Self {
        t.labels.into_values().collect()
    }
}

impl FromIterator<TripletLabel> for TripletLabelTable {
    fn from_iter<I: IntoIterator<Item = TripletLabel>>(iter: I) -> Self {
        let mut t = Self::new();
        for l in iter {
            t.insert(l);
        }
        t
    }
}

/// Per-entity knowledgeability K(v) with the number of labeled triplets behind it.
///
/// Entities with zero support are absent. Predicted tables carry support 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityScoreTable {
    scores: BTreeMap<EntityId, f64>,
    support: BTreeMap<EntityId, usize>,
}

impl EntityScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entity: EntityId, score: f64, support: usize) {
        self.scores.insert(entity, score);
        self.support.insert(entity, support);
    }

    pub fn get(&self, entity: EntityId) -> Option<f64> {
        self.scores.get(&entity).copied()
    }

    pub fn support(&self, entity: EntityId) -> Option<usize> {
        self.support.get(&entity).copied()
    }

    pub fn contains(&self, entity: EntityId) -> bool {
        self.scores.contains_key(&entity)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// (entity, score) in ascending entity order.
    pub fn iter(&self) -> impl Iterator<Item = (EntityId, f64)> + '_ {
        self.scores.iter().map(|(&e, &s)| (e, s))
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.scores.keys().copied()
    }
}
