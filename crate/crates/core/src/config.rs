//! Run configuration: one TOML file describing data, oracle, seeds and every
//! stage's settings. Relative paths resolve against the file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimator::{ModelKind, TrainConfig};
use crate::graph::GraphFormat;
use crate::homophily::DEFAULT_BINS;
use crate::injection::QualityScope;
use crate::oracle::{DateMode, OracleConfig, PlantedOracleConfig};
use crate::retrieval::RetrievalConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub output_dir: PathBuf,
    pub seeds: Seeds,
    pub oracle: OracleSettings,
    pub features: FeatureSettings,
    pub homophily: HomophilySettings,
    pub budget: BudgetSettings,
    pub estimator: EstimatorSettings,
    pub retrieval: RetrievalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            output_dir: PathBuf::from("kgh-out"),
            seeds: Seeds::default(),
            oracle: OracleSettings::default(),
            features: FeatureSettings::default(),
            homophily: HomophilySettings::default(),
            budget: BudgetSettings::default(),
            estimator: EstimatorSettings::default(),
            retrieval: RetrievalSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub format: GraphFormat,
    /// `relation⇥pattern` file; needed by the LLM oracle, export and questions.
    pub templates: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("graph.tsv"),
            format: GraphFormat::Tsv,
            templates: None,
        }
    }
}

/// One explicit seed per random process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub oracle: u64,
    pub probe_sample: u64,
    pub baseline: u64,
    pub sparsify: u64,
    pub anchors: u64,
    pub training: u64,
    pub random_plan: u64,
    pub holdout: u64,
    pub questions: u64,
    pub retrieval_split: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            oracle: 0,
            probe_sample: 1,
            baseline: 2,
            sparsify: 3,
            anchors: 4,
            training: 5,
            random_plan: 6,
            holdout: 7,
            questions: 8,
            retrieval_split: 9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// Synthetic community-structured labels; no network access.
    #[default]
    Planted,
    Llm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub kind: OracleKind,
    /// Probe only this many randomly chosen triplets.
    pub sample: Option<usize>,
    pub date_mode: DateMode,
    pub llm: OracleConfig,
    pub planted: PlantedOracleConfig,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            kind: OracleKind::Planted,
            sample: None,
            date_mode: DateMode::None,
            llm: OracleConfig::default(),
            planted: PlantedOracleConfig::two_communities(0.9, 0.1, 0.05, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Hashed,
    File,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSettings {
    pub provider: ProviderKind,
    /// Bucket count for the hashed provider.
    pub dim: usize,
    /// Vector file for the file provider.
    pub path: Option<PathBuf>,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Hashed,
            dim: 64,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomophilySettings {
    pub bins: usize,
    pub trials: usize,
    pub sparsify_fractions: Vec<f64>,
}

impl Default for HomophilySettings {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            trials: 100,
            sparsify_fractions: vec![0.75, 0.5],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSettings {
    pub total_triplets: usize,
    pub anchor_fraction: f64,
    pub holdout_fraction: f64,
    pub quality_scope: QualityScope,
    /// Also run selection at each of `sweep_fractions` of |T|.
    pub sweep: bool,
    pub sweep_fractions: Vec<f64>,
}

impl Default for BudgetSettings {
    fn default() -> Self {
        Self {
            total_triplets: 400,
            anchor_fraction: 0.2,
            holdout_fraction: 0.02,
            quality_scope: QualityScope::FineTuningSet,
            sweep: false,
            sweep_fractions: vec![0.01, 0.02, 0.05, 0.10, 0.20, 0.40],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    pub kind: ModelKind,
    pub train: TrainConfig,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            kind: ModelKind::Gnn,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSettings {
    pub n_per_hop: usize,
    /// Fraction of non-question entities whose triplets are labeled to train
    /// the retrieval-side estimator.
    pub train_fraction: f64,
    /// Hashed embedding size used for semantic scores and linking.
    pub embedding_dim: usize,
    pub search: RetrievalConfig,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        Self {
            n_per_hop: 50,
            train_fraction: 0.4,
            embedding_dim: 256,
            search: RetrievalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML config. Relative paths inside it are made relative to
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.path);
        if let Some(t) = self.dataset.templates.as_mut() {
            fix(t);
        }
        if let Some(f) = self.features.path.as_mut() {
            fix(f);
        }
        if let Some(c) = self.oracle.llm.cache_path.as_mut() {
            fix(c);
        }
        fix(&mut self.output_dir);
    }

    /// Checks that referenced files exist and settings are in range.
    pub fn validate(&self) -> Result<()> {
        let must_exist = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Usage(format!("{what} `{}` does not exist", p.display())))
            }
        };
        must_exist(&self.dataset.path, "dataset")?;
        if let Some(t) = &self.dataset.templates {
            must_exist(t, "template file")?;
        }
        match (self.features.provider, &self.features.path) {
            (ProviderKind::File, None) => {
                return Err(Error::Usage("features.provider = \"file\" needs features.path".into()))
            }
            (ProviderKind::File, Some(p)) => must_exist(p, "embedding file")?,
            _ => {}
        }
        if self.oracle.kind == OracleKind::Llm && self.dataset.templates.is_none() {
            return Err(Error::Usage("the llm oracle needs dataset.templates".into()));
        }
        if self.features.dim == 0 || self.retrieval.embedding_dim == 0 {
            return Err(Error::Usage("embedding dimensions must be positive".into()));
        }
        if !(self.retrieval.train_fraction > 0.0 && self.retrieval.train_fraction < 1.0) {
            return Err(Error::Usage("retrieval.train_fraction must lie in (0, 1)".into()));
        }
        if self.budget.sweep_fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Usage("sweep fractions must lie in (0, 1)".into()));
        }
        crate::injection::Budget::new(self.budget.total_triplets, self.budget.anchor_fraction)
            .map_err(|e| Error::Usage(e.to_string()))?;
        self.retrieval
            .search
            .validate()
            .map_err(|e| Error::Usage(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the settings, ignoring where the outputs go.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
