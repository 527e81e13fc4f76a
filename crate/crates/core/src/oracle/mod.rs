//! Knowledgeability labeling: triplet verbalization, LLM probing with a
//! persistent cache, and a planted synthetic oracle for offline runs.

mod cache;
mod client;
mod planted;
mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CacheRecord, ProbeCache};
pub use client::{
    parse_label, probe_batch, probe_triplet, query_label, BatchOutcome, ChatBackend,
    HttpChatBackend, OracleConfig, ProbeFailure, SYSTEM_MESSAGE,
};
pub use planted::{CommunityAssignment, PlantedOracle, PlantedOracleConfig};
pub use template::{RelationTemplate, TemplateTable};

use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::labels::{LabelSource, TripletLabelTable};

#[derive(Debug, Clone, Error)]
pub enum OracleError {
    #[error("unparseable label after {attempts} attempt(s); last response: {response:?}")]
    UnparseableLabel { response: String, attempts: u32 },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("cannot verbalize triplet: {0}")]
    Verbalize(String),
    #[error("invalid oracle config: {0}")]
    Config(String),
    #[error("no recorded label for triplet {0}")]
    NotRecorded(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateMode {
    #[default]
    None,
    AppendDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub text: String,
    pub triplet_ref: usize,
    pub temporal: bool,
}

/// Renders triplet `idx` through its relation template, head as `{SUB}` and
/// tail as `{OBJ}`. With [`DateMode::AppendDate`] the statement ends in
/// ` on YYYY-MM-DD.`.
pub fn verbalize(
    g: &KnowledgeGraph,
    idx: usize,
    templates: &TemplateTable,
    date_mode: DateMode,
) -> Result<Statement> {
    let t = g.triplet(idx)?;
    let tpl = templates.require(g, t.relation)?;
    let mut text = tpl.fill(g.entity_label(t.head), g.entity_label(t.tail));
    let temporal = match date_mode {
        DateMode::None => false,
        DateMode::AppendDate => {
            let date = t.timestamp.ok_or(Error::MissingTimestamp(idx))?;
            let body = text.trim_end().trim_end_matches('.');
            text = format!("{body} on {}.", date.format("%Y-%m-%d"));
            true
        }
    };
    Ok(Statement {
        text,
        triplet_ref: idx,
        temporal,
    })
}

/// Anything that can assign binary knowledgeability labels to triplets of a graph.
pub trait Labeler: Sync {
    fn label_batch(&self, g: &KnowledgeGraph, indices: &[usize]) -> BatchOutcome;

    fn source(&self) -> LabelSource;
}

impl<L: Labeler + ?Sized> Labeler for &L {
    fn label_batch(&self, g: &KnowledgeGraph, indices: &[usize]) -> BatchOutcome {
        (**self).label_batch(g, indices)
    }

    fn source(&self) -> LabelSource {
        (**self).source()
    }
}

/// Labels triplets by verbalizing them and probing a chat backend.
pub struct LlmOracle<'a> {
    pub cfg: OracleConfig,
    pub backend: &'a dyn ChatBackend,
    pub cache: &'a ProbeCache,
    pub templates: &'a TemplateTable,
    pub date_mode: DateMode,
}

impl Labeler for LlmOracle<'_> {
    fn label_batch(&self, g: &KnowledgeGraph, indices: &[usize]) -> BatchOutcome {
        let mut statements = Vec::with_capacity(indices.len());
        let mut failures = Vec::new();
        for &i in indices {
            match verbalize(g, i, self.templates, self.date_mode) {
                Ok(s) => statements.push(s),
                Err(e) => failures.push(ProbeFailure {
                    triplet: i,
                    error: OracleError::Verbalize(e.to_string()),
                }),
            }
        }
        let mut out = probe_batch(&statements, &self.cfg, self.backend, self.cache);
        out.errors.extend(failures);
        out.errors.sort_by_key(|f| f.triplet);
        out
    }

    fn source(&self) -> LabelSource {
        LabelSource::Llm
    }
}

/// Serves labels from an existing table, for re-running stages offline.
/// Triplets missing from the table come back as failures.
pub struct RecordedLabels<'a> {
    pub table: &'a TripletLabelTable,
}

impl Labeler for RecordedLabels<'_> {
    fn label_batch(&self, _g: &KnowledgeGraph, indices: &[usize]) -> BatchOutcome {
        let mut out = BatchOutcome::default();
        for &i in indices {
            match self.table.label(i) {
                Some(l) => out.labels.insert(*l),
                None => out.errors.push(ProbeFailure {
                    triplet: i,
                    error: OracleError::NotRecorded(i),
                }),
            }
        }
        out
    }

    fn source(&self) -> LabelSource {
        LabelSource::Cache
    }
}
