//! Knowledge homophily toolkit: probe what a language model knows about the
//! facts of a knowledge graph, measure how that knowledge clusters along the
//! graph, learn to predict it for unprobed entities, and use the predictions
//! to pick fine-tuning triplets and to steer multi-hop path retrieval.

pub mod config;
pub mod embed;
pub mod error;
pub mod estimator;
pub mod graph;
pub mod homophily;
pub mod injection;
pub mod labels;
pub mod oracle;
pub mod pipeline;
pub mod retrieval;
pub mod svg;
pub mod synth;

pub use error::{Error, Result};
pub use graph::{EntityId, GraphBuilder, GraphFormat, KnowledgeGraph, RelationId, Triplet};
pub use labels::{EntityScoreTable, LabelSource, TripletLabel, TripletLabelTable};
