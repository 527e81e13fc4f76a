//! Knowledgeability regression over node features.
//!
//! The GNN variant runs `n_layers` rounds of mean aggregation over
//! `{v} ∪ N(v)` followed by an affine map; hidden rounds use a rectifier and
//! the final round maps to one logit squashed by the logistic function. The
//! MLP variant is the same stack with aggregation replaced by the identity,
//! so it never sees the edge set.
//!
//! Training is full-batch gradient descent on the mean squared error over
//! the training entities, with gradients from hand-written backpropagation.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::FeatureMatrix;
use crate::error::{Error, Result};
use crate::graph::{EntityId, GraphBuilder, KnowledgeGraph};
use crate::labels::EntityScoreTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gnn,
    Mlp,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Gnn => "gnn",
            ModelKind::Mlp => "mlp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub weight_init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            epochs: 300,
            seed: 0,
            hidden_dim: 64,
            n_layers: 2,
            weight_init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.n_layers == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidArgument(
                "train config needs learning_rate > 0, epochs >= 1, n_layers >= 1, hidden_dim >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_curve: Vec<f64>,
    pub final_train_mse: f64,
}

/// Affine map `x·W + b` with `W` stored input-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub layers: Vec<DenseLayer>,
}

/// Row-mean over `{v} ∪ N(v)`.
#[derive(Debug, Clone)]
pub struct MeanAggregation {
    members: Vec<Vec<u32>>,
}

impl MeanAggregation {
    pub fn new(g: &KnowledgeGraph) -> Self {
        let members = g
            .entities()
            .map(|v| {
                let mut m: Vec<u32> = g.neighbors(v).expect("valid").iter().map(|u| u.0).collect();
                if let Err(pos) = m.binary_search(&v.0) {
                    m.insert(pos, v.0);
                }
                m
            })
            .collect();
        Self { members }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for (v, m) in self.members.iter().enumerate() {
            let mut row = out.row_mut(v);
            for &u in m {
                row += &x.row(u as usize);
            }
            row /= m.len() as f64;
        }
        out
    }

    /// Adjoint of [`apply`](Self::apply).
    pub fn apply_transpose(&self, grad: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(grad.raw_dim());
        for (v, m) in self.members.iter().enumerate() {
            let share = &grad.row(v) / m.len() as f64;
            for &u in m {
                let mut row = out.row_mut(u as usize);
                row += &share;
            }
        }
        out
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-layer intermediate values kept for backpropagation.
struct ForwardTrace {
    /// Input of each affine map (after aggregation).
    aggregated: Vec<Array2<f64>>,
    /// Affine outputs before the nonlinearity.
    pre: Vec<Array2<f64>>,
    output: Array1<f64>,
}

/// Parameter gradients, laid out like [`RegressorModel::layers`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
            .collect()
    }
}

impl RegressorModel {
    pub fn init(kind: ModelKind, input_dim: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(Error::ShapeMismatch("input dim is zero".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let fan_in = if l == 0 { input_dim } else { cfg.hidden_dim };
            let fan_out = if l + 1 == cfg.n_layers { 1 } else { cfg.hidden_dim };
            let s = cfg.weight_init_scale / (fan_in as f64).sqrt();
            let weight = Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-s..=s));
            layers.push(DenseLayer {
                weight,
                bias: Array1::zeros(fan_out),
            });
        }
        Ok(Self {
            kind,
            input_dim,
            hidden_dim: cfg.hidden_dim,
            layers,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_shapes(&self, g: &KnowledgeGraph, features: &FeatureMatrix) -> Result<()> {
        if features.dim() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "features have dim {}, model expects {}",
                features.dim(),
                self.input_dim
            )));
        }
        if features.len() != g.num_entities() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows for {} entities",
                features.len(),
                g.num_entities()
            )));
        }
        let mut width = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.nrows() != width || l.bias.len() != l.weight.ncols() {
                return Err(Error::ShapeMismatch(format!("layer {i} does not chain")));
            }
            width = l.weight.ncols();
        }
        if width != 1 {
            return Err(Error::ShapeMismatch("last layer must produce one output".into()));
        }
        Ok(())
    }

    fn aggregation(&self, g: &KnowledgeGraph) -> Option<MeanAggregation> {
        match self.kind {
            ModelKind::Gnn => Some(MeanAggregation::new(g)),
            ModelKind::Mlp => None,
        }
    }

    fn trace(&self, agg: Option<&MeanAggregation>, first_input: Array2<f64>) -> ForwardTrace {
        let last = self.layers.len() - 1;
        let mut aggregated = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut input = first_input;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = input.dot(&layer.weight) + &layer.bias;
            aggregated.push(input);
            if l < last {
                let h = z.mapv(|x| x.max(0.0));
                input = match agg {
                    Some(a) => a.apply(&h),
                    None => h,
                };
                pre.push(z);
            } else {
                pre.push(z);
                input = Array2::zeros((0, 0));
            }
        }
        let output = pre[last].column(0).mapv(sigmoid);
        ForwardTrace {
            aggregated,
            pre,
            output,
        }
    }

    fn first_input(&self, agg: Option<&MeanAggregation>, features: &FeatureMatrix) -> Array2<f64> {
        match agg {
            Some(a) => a.apply(&features.rows),
            None => features.rows.clone(),
        }
    }

    /// Predicted knowledgeability of every entity, indexed by entity id.
    pub fn forward(&self, g: &KnowledgeGraph, features: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_shapes(g, features)?;
        let agg = self.aggregation(g);
        let input = self.first_input(agg.as_ref(), features);
        Ok(self.trace(agg.as_ref(), input).output.to_vec())
    }

    /// MSE over `targets` and its gradient with respect to every parameter.
    fn backward(
        &self,
        agg: Option<&MeanAggregation>,
        trace: &ForwardTrace,
        targets: &[(usize, f64)],
    ) -> (f64, Gradients) {
        let n = trace.output.len();
        let scale = 1.0 / targets.len() as f64;
        let mut loss = 0.0;
        let mut dz = Array2::zeros((n, 1));
        for &(i, y) in targets {
            let p = trace.output[i];
            let err = p - y;
            loss += err * err;
            dz[[i, 0]] += 2.0 * scale * err * p * (1.0 - p);
        }
        loss *= scale;

        let mut grads: Vec<DenseLayer> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let dw = trace.aggregated[l].t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            grads.push(DenseLayer { weight: dw, bias: db });
            if l > 0 {
                let dm = dz.dot(&self.layers[l].weight.t());
                let mut dh = match agg {
                    Some(a) => a.apply_transpose(&dm),
                    None => dm,
                };
                Zip::from(&mut dh).and(&trace.pre[l - 1]).for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                dz = dh;
            }
        }
        grads.reverse();
        (loss, Gradients { layers: grads })
    }

    /// Loss and analytic gradients for `targets` (entity, score).
    pub fn loss_and_gradients(
        &self,
        g: &KnowledgeGraph,
        features: &FeatureMatrix,
        targets: &[(EntityId, f64)],
    ) -> Result<(f64, Gradients)> {
        self.check_shapes(g, features)?;
        let targets = index_targets(g, targets)?;
        let agg = self.aggregation(g);
        let trace = self.trace(agg.as_ref(), self.first_input(agg.as_ref(), features));
        Ok(self.backward(agg.as_ref(), &trace, &targets))
    }

    pub fn loss(&self, g: &KnowledgeGraph, features: &FeatureMatrix, targets: &[(EntityId, f64)]) -> Result<f64> {
        let preds = self.forward(g, features)?;
        let targets = index_targets(g, targets)?;
        Ok(mse(&preds, &targets))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile::from(self);
        let text = serde_json::to_string_pretty(&file)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        file.try_into()
    }
}

fn mse(preds: &[f64], targets: &[(usize, f64)]) -> f64 {
    targets.iter().map(|&(i, y)| (preds[i] - y).powi(2)).sum::<f64>() / targets.len() as f64
}

fn index_targets(g: &KnowledgeGraph, targets: &[(EntityId, f64)]) -> Result<Vec<(usize, f64)>> {
    targets
        .iter()
        .map(|&(v, y)| {
            g.check_entity(v)?;
            if !y.is_finite() {
                return Err(Error::InvalidArgument(format!("target for entity {v} is not finite")));
            }
            Ok((v.index(), y))
        })
        .collect()
}

/// Fits a fresh model to `train_scores` by full-batch gradient descent.
pub fn train(
    kind: ModelKind,
    g: &KnowledgeGraph,
    features: &FeatureMatrix,
    train_scores: &EntityScoreTable,
    cfg: &TrainConfig,
) -> Result<(RegressorModel, TrainReport)> {
    if train_scores.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut model = RegressorModel::init(kind, features.dim(), cfg)?;
    model.check_shapes(g, features)?;
    let targets: Vec<(EntityId, f64)> = train_scores.iter().collect();
    let targets = index_targets(g, &targets)?;
    let agg = model.aggregation(g);
    // Aggregated features never change, so aggregate once.
    let first = model.first_input(agg.as_ref(), features);

    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let trace = model.trace(agg.as_ref(), first.clone());
        let (loss, grads) = model.backward(agg.as_ref(), &trace, &targets);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        loss_curve.push(loss);
        for (layer, grad) in model.layers.iter_mut().zip(&grads.layers) {
            layer.weight.scaled_add(-cfg.learning_rate, &grad.weight);
            layer.bias.scaled_add(-cfg.learning_rate, &grad.bias);
        }
    }
    let trace = model.trace(agg.as_ref(), first);
    let final_train_mse = mse(trace.output.as_slice().expect("contiguous"), &targets);
    if !final_train_mse.is_finite() {
        return Err(Error::Divergence {
            epoch: cfg.epochs,
            loss: final_train_mse,
        });
    }
    Ok((
        model,
        TrainReport {
            loss_curve,
            final_train_mse,
        },
    ))
}

/// Predictions for `targets` only; support is recorded as 0.
pub fn predict(
    model: &RegressorModel,
    g: &KnowledgeGraph,
    features: &FeatureMatrix,
    targets: impl IntoIterator<Item = EntityId>,
) -> Result<EntityScoreTable> {
    let targets: Vec<EntityId> = targets.into_iter().collect();
    let mut out = EntityScoreTable::new();
    if targets.is_empty() {
        return Ok(out);
    }
    let preds = model.forward(g, features)?;
    for v in targets {
        g.check_entity(v)?;
        out.insert(v, preds[v.index()], 0);
    }
    Ok(out)
}

/// A small problem for checking gradients against finite differences.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub graph: KnowledgeGraph,
    pub features: FeatureMatrix,
    pub targets: Vec<(EntityId, f64)>,
    pub model: RegressorModel,
}

impl TinyInstance {
    /// 8 nodes (one isolated, one self-loop), 5-dim features, 2 layers of width 4.
    pub fn sample(kind: ModelKind, seed: u64) -> Self {
        let mut b = GraphBuilder::new();
        for (h, t) in [(0, 1), (1, 2), (2, 3), (3, 0), (2, 4), (4, 5), (5, 5), (1, 5), (0, 1)] {
            b.triplet(&format!("n{h}"), "r", &format!("n{t}"));
        }
        for i in 0..8 {
            b.entity(&format!("n{i}"));
        }
        let graph = b.build();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let features = FeatureMatrix {
            rows: Array2::from_shape_fn((graph.num_entities(), 5), |_| rng.gen_range(-1.0..1.0)),
        };
        let targets = (0..graph.num_entities() as u32)
            .step_by(1)
            .filter(|i| i % 3 != 2)
            .map(|i| (EntityId(i), rng.gen_range(0.0..1.0)))
            .collect();
        let cfg = TrainConfig {
            hidden_dim: 4,
            n_layers: 2,
            seed,
            weight_init_scale: 1.5,
            ..Default::default()
        };
        let mut model = RegressorModel::init(kind, 5, &cfg).expect("valid config");
        for l in &mut model.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
        }
        Self {
            graph,
            features,
            targets,
            model,
        }
    }
}

/// Worst relative error between analytic gradients and central differences.
///
/// Relative error is `|a − n| / max(|a|, |n|, 1e-6)`, so gradients smaller
/// than 1e-6 are compared absolutely.
pub fn gradient_check(instance: &TinyInstance, epsilon: f64) -> Result<f64> {
    let TinyInstance {
        graph,
        features,
        targets,
        model,
    } = instance;
    let (_, grads) = model.loss_and_gradients(graph, features, targets)?;
    let analytic = grads.flat();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let original = *probe.params_mut().nth(k).expect("in range");
        *probe.params_mut().nth(k).expect("in range") = original + epsilon;
        let up = probe.loss(graph, features, targets)?;
        *probe.params_mut().nth(k).expect("in range") = original - epsilon;
        let down = probe.loss(graph, features, targets)?;
        *probe.params_mut().nth(k).expect("in range") = original;
        let numeric = (up - down) / (2.0 * epsilon);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    kind: ModelKind,
    input_dim: usize,
    hidden_dim: usize,
    layers: Vec<LayerFile>,
}

const MODEL_FORMAT: &str = "kgh-regressor";
const MODEL_VERSION: u32 = 1;

impl From<&RegressorModel> for ModelFile {
    fn from(m: &RegressorModel) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            kind: m.kind,
            input_dim: m.input_dim,
            hidden_dim: m.hidden_dim,
            layers: m
                .layers
                .iter()
                .map(|l| LayerFile {
                    rows: l.weight.nrows(),
                    cols: l.weight.ncols(),
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for RegressorModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
            return Err(Error::Serde(format!(
                "unsupported model file {} v{}",
                f.format, f.version
            )));
        }
        let layers = f
            .layers
            .into_iter()
            .map(|l| {
                let weight = Array2::from_shape_vec((l.rows, l.cols), l.weight)
                    .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
                if l.bias.len() != l.cols {
                    return Err(Error::ShapeMismatch("bias length".into()));
                }
                Ok(DenseLayer {
                    weight,
                    bias: Array1::from(l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("model has no layers".into()));
        }
        Ok(Self {
            kind: f.kind,
            input_dim: f.input_dim,
            hidden_dim: f.hidden_dim,
            layers,
        })
    }
}
