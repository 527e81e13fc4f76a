//! Text embedding providers used for node features and semantic scoring.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;

pub trait EmbeddingProvider: Sync {
    fn dim(&self) -> usize;

    /// Raw (not necessarily normalized) embedding of `text`.
    fn embed(&self, text: &str) -> Result<Vec<f64>>;

    /// Unit-length embedding; a zero vector is an error.
    fn embed_unit(&self, text: &str) -> Result<Vec<f64>> {
        let mut v = self.embed(text)?;
        normalize(&mut v).ok_or_else(|| Error::ZeroEmbedding(text.to_string()))?;
        Ok(v)
    }
}

/// Scales `v` to unit L2 norm; `None` when it is all zeros or not finite.
pub fn normalize(v: &mut [f64]) -> Option<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Signed feature hashing of character trigrams.
///
/// Text is lowercased, non-alphanumeric runs become single spaces, and the
/// result is padded with one space on each side before trigram extraction.
#[derive(Debug, Clone)]
pub struct HashedProvider {
    dim: usize,
}

impl HashedProvider {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be positive".into()));
        }
        Ok(Self { dim })
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn canonical(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push(' ');
    let mut gap = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if gap && out.len() > 1 {
                out.push(' ');
            }
            gap = false;
            out.extend(c.to_lowercase());
        } else {
            gap = true;
        }
    }
    out.push(' ');
    out
}

impl EmbeddingProvider for HashedProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.dim];
        let chars: Vec<char> = canonical(text).chars().collect();
        if chars.len() < 3 || chars.iter().all(|c| *c == ' ') {
            return Err(Error::ZeroEmbedding(text.to_string()));
        }
        let mut buf = String::new();
        for w in chars.windows(3) {
            buf.clear();
            buf.extend(w);
            let h = fnv1a(buf.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        Ok(v)
    }
}

/// Precomputed vectors keyed by exact label, read from `label⇥v1⇥…⇥v_dim` lines.
#[derive(Debug, Clone)]
pub struct FileProvider {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl FileProvider {
    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: m,
            };
            let mut fields = line.split('\t');
            let label = fields.next().unwrap_or_default().to_string();
            let v = fields
                .map(|s| s.trim().parse::<f64>().map_err(|e| bad(format!("bad component `{s}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                return Err(bad("vector must be non-empty and finite".into()));
            }
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(bad(format!("expected {d} components, found {}", v.len())))
                }
                _ => {}
            }
            vectors.insert(label, v);
        }
        let dim = dim.ok_or_else(|| Error::InvalidArgument(format!("{}: no vectors", path.display())))?;
        Ok(Self { dim, vectors })
    }

    pub fn from_vectors(vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        let dim = vectors
            .values()
            .next()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidArgument("no vectors".into()))?;
        if vectors.values().any(|v| v.len() != dim) {
            return Err(Error::ShapeMismatch("vectors differ in length".into()));
        }
        Ok(Self { dim, vectors })
    }
}

impl EmbeddingProvider for FileProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        self.vectors
            .get(text)
            .cloned()
            .ok_or_else(|| Error::MissingEmbeddings(vec![text.to_string()]))
    }
}

/// Row-per-entity node features, each row of unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Array2<f64>,
}

impl FeatureMatrix {
    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

pub fn build_features(g: &KnowledgeGraph, provider: &dyn EmbeddingProvider) -> Result<FeatureMatrix> {
    let dim = provider.dim();
    let mut rows = Array2::zeros((g.num_entities(), dim));
    let mut missing = Vec::new();
    for v in g.entities() {
        let label = g.entity_label(v);
        match provider.embed_unit(label) {
            Ok(e) => rows.row_mut(v.index()).assign(&ndarray::ArrayView1::from(&e)),
            Err(Error::MissingEmbeddings(m)) => missing.extend(m),
            Err(e) => return Err(e),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingEmbeddings(missing));
    }
    Ok(FeatureMatrix { rows })
}
