use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, RelationId};

pub const SUB: &str = "{SUB}";
pub const OBJ: &str = "{OBJ}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTemplate {
    pub relation: RelationId,
    pub pattern: String,
}

impl RelationTemplate {
    pub fn new(relation: RelationId, pattern: &str) -> Result<Self> {
        if pattern.matches(SUB).count() != 1 || pattern.matches(OBJ).count() != 1 {
            return Err(Error::InvalidArgument(format!(
                "template `{pattern}` must contain {SUB} and {OBJ} exactly once"
            )));
        }
        Ok(Self {
            relation,
            pattern: pattern.to_string(),
        })
    }

    pub fn fill(&self, sub: &str, obj: &str) -> String {
        // Split first so entity labels containing a placeholder are not re-expanded.
        let (before, after) = self.pattern.split_once(SUB).expect("validated");
        let render = |part: &str| part.replacen(OBJ, obj, 1);
        format!("{}{}{}", render(before), sub, render(after))
    }
}

#[derive(Debug, Clone, Default)]
pub struct TemplateTable {
    templates: BTreeMap<RelationId, RelationTemplate>,
}

impl TemplateTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, t: RelationTemplate) {
        self.templates.insert(t.relation, t);
    }

    pub fn get(&self, r: RelationId) -> Option<&RelationTemplate> {
        self.templates.get(&r)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Reads `relation⇥pattern` lines. Relations unknown to `g` are ignored.
    pub fn load(path: &Path, g: &KnowledgeGraph) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table = Self::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (rel, pattern) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: "expected relation<TAB>pattern".into(),
            })?;
            let Some(r) = g.relation_by_label(rel) else {
                continue;
            };
            let t = RelationTemplate::new(r, pattern).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?;
            table.insert(t);
        }
        Ok(table)
    }

    pub fn require(&self, g: &KnowledgeGraph, r: RelationId) -> Result<&RelationTemplate> {
        self.get(r)
            .ok_or_else(|| Error::MissingTemplate(g.relation_label(r).to_string()))
    }
}
