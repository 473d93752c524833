//! Message-passing screening models over the expanded grid graph.
//!
//! Two models share one architecture: a stack of graph-convolution layers
//! `H <- relu(A H W + b)` over the normalized adjacency, followed by a
//! task head. The line model scores each line from its endpoint
//! embeddings through an endpoint-symmetric head; the generator model
//! scores each virtual node directly. The second stage consumes the first
//! stage's predicted congestion probabilities through the feature matrix,
//! so at inference the models run as a cascade.
//!
//! Everything here is deterministic: seeded initialization, full-batch
//! Adam, and gradient accumulation in fixed chunk order regardless of
//! thread count. Training the same config on the same dataset twice
//! produces bit-identical weights.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{Dataset, Sample, Split};
use crate::graph::{
    build_features, expand, normalize_adjacency, ExpandedGraph, FeatureError, FEAT_CONG_MAX,
    FEAT_CONG_MEAN,
};
use crate::grid::Network;

/// Format version of model files.
pub const MODEL_VERSION: u32 = 1;

/// Samples per parallel work unit during training and evaluation. Fixed
/// so the accumulation order, and therefore every float, never depends on
/// the thread count.
const CHUNK: usize = 64;

/// Which target family a model scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Line,
    Gen,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Line => "line",
            Stage::Gen => "gen",
        }
    }
}

/// Training objective. Binary cross-entropy is the default; the squared
/// error on probabilities exists for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    MseProb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden_dim: usize,
    pub n_layers: usize,
    /// Cap on the positive-class weight derived from label imbalance.
    pub pos_weight_cap: f64,
    pub seed: u64,
    pub loss: LossKind,
    /// Stage-2 ablation: feed true line labels instead of stage-1
    /// predictions while training the generator model.
    pub teacher_forcing: bool,
    pub decision_threshold: f64,
}

impl TrainConfig {
    pub fn new(stage: Stage, seed: u64) -> Self {
        TrainConfig {
            stage,
            epochs: 100,
            learning_rate: 1e-3,
            hidden_dim: 64,
            n_layers: 3,
            pos_weight_cap: 50.0,
            seed,
            loss: LossKind::Bce,
            teacher_forcing: false,
            decision_threshold: 0.5,
        }
    }
}

/// A trained screening model: the layer stack, the head, and the feature
/// standardization it was fitted with.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub stage: Stage,
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    /// One weight matrix per layer: `in_dim x hidden` first, then
    /// `hidden x hidden`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// Head weights: `2 * hidden` for the line head (sum part then
    /// absolute-difference part), `hidden` for the generator head.
    pub head_w: Array1<f64>,
    pub head_b: f64,
    /// Column means of the raw training features.
    pub feature_mean: Vec<f64>,
    /// Column standard deviations; constant columns are stored as 1 so
    /// standardization leaves them at zero.
    pub feature_std: Vec<f64>,
    pub decision_threshold: f64,
    pub seed: u64,
    /// The configuration the model was trained with.
    pub config: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

/// Per-epoch metrics evaluated on the weights at the start of each epoch,
/// plus the run's fixed facts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub pos_weight: f64,
    /// Worker threads available during the run. Results do not depend on
    /// it; recorded so a run can be audited.
    pub threads: usize,
    pub n_train: usize,
    pub n_val: usize,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training split has no positive {0} labels; nothing to learn")]
    NoPositiveExamples(&'static str),
    #[error("training split is empty")]
    EmptyTrainSplit,
    #[error("generator-stage training needs a line model unless teacher forcing is on")]
    MissingLineModel,
    #[error("line model passed for generator-stage training is a {0} model")]
    WrongLineModelStage(&'static str),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error("config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum PredictError {
    #[error("expected a {expected} model, got a {found} model")]
    WrongStage { expected: &'static str, found: &'static str },
    #[error(
        "generator model needs congestion features, but both congestion columns are zero \
         everywhere; build features with line probabilities or assert the bypass"
    )]
    MissingStageOneSignal,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Loss and logit-gradient for one target. `y` is 0 or 1; `w_pos` weighs
/// the positive class (binary cross-entropy only).
fn loss_and_dlogit(kind: LossKind, z: f64, y: f64, w_pos: f64) -> (f64, f64) {
    let p = sigmoid(z);
    match kind {
        LossKind::Bce => {
            // -w y ln p - (1 - y) ln(1 - p), in softplus form.
            let loss = w_pos * y * softplus(-z) + (1.0 - y) * softplus(z);
            let grad = p * (1.0 - y) + w_pos * (p - 1.0) * y;
            (loss, grad)
        }
        LossKind::MseProb => {
            let d = p - y;
            (d * d, 2.0 * d * p * (1.0 - p))
        }
    }
}

/// Standardize raw features with the model's stored column statistics.
fn standardize(model: &GnnModel, x_raw: &Array2<f64>) -> Array2<f64> {
    let mut h = x_raw.clone();
    for (c, mut col) in h.axis_iter_mut(Axis(1)).enumerate() {
        let mean = model.feature_mean[c];
        let std = model.feature_std[c];
        col.mapv_inplace(|v| (v - mean) / std);
    }
    h
}

fn check_forward_shapes(
    model: &GnnModel,
    a_hat: &Array2<f64>,
    x_raw: &Array2<f64>,
) -> Result<(), PredictError> {
    if x_raw.ncols() != model.in_dim {
        return Err(PredictError::Shape(format!(
            "feature matrix has {} columns, model expects {}",
            x_raw.ncols(),
            model.in_dim
        )));
    }
    if a_hat.nrows() != a_hat.ncols() || a_hat.nrows() != x_raw.nrows() {
        return Err(PredictError::Shape(format!(
            "adjacency is {}x{} against {} feature rows",
            a_hat.nrows(),
            a_hat.ncols(),
            x_raw.nrows()
        )));
    }
    Ok(())
}

/// Node embeddings after the full layer stack (standardization included).
pub fn forward(
    model: &GnnModel,
    a_hat: &Array2<f64>,
    x_raw: &Array2<f64>,
) -> Result<Array2<f64>, PredictError> {
    check_forward_shapes(model, a_hat, x_raw)?;
    let mut h = standardize(model, x_raw);
    for l in 0..model.n_layers {
        let z = a_hat.dot(&h).dot(&model.weights[l]) + &model.biases[l];
        h = z.mapv(|v| v.max(0.0));
    }
    Ok(h)
}

/// Forward pass that keeps every intermediate needed for backprop:
/// `h[0]` is the standardized input, `m[l] = A h[l]`, `z[l]` the
/// pre-activation, `h[l+1] = relu(z[l])`.
struct ForwardTrace {
    h: Vec<Array2<f64>>,
    m: Vec<Array2<f64>>,
    z: Vec<Array2<f64>>,
}

fn forward_trace(model: &GnnModel, a_hat: &Array2<f64>, h0: Array2<f64>) -> ForwardTrace {
    let mut h = vec![h0];
    let mut m = Vec::with_capacity(model.n_layers);
    let mut z = Vec::with_capacity(model.n_layers);
    for l in 0..model.n_layers {
        let ml = a_hat.dot(&h[l]);
        let zl = ml.dot(&model.weights[l]) + &model.biases[l];
        h.push(zl.mapv(|v| v.max(0.0)));
        m.push(ml);
        z.push(zl);
    }
    ForwardTrace { h, m, z }
}

/// One scoring target inside a sample: either a line (pair of endpoint
/// nodes) or a generator (one virtual node), with its 0/1 label.
#[derive(Debug, Clone, Copy)]
enum Target {
    Pair { f: usize, t: usize, y: f64 },
    Node { node: usize, y: f64 },
}

impl Target {
    fn label(&self) -> f64 {
        match *self {
            Target::Pair { y, .. } | Target::Node { y, .. } => y,
        }
    }
}

fn line_targets(net: &Network, graph: &ExpandedGraph, labels: &BTreeMap<u32, u8>) -> Vec<Target> {
    net.lines
        .iter()
        .map(|line| Target::Pair {
            f: graph.real_node_of_bus[&line.from_bus],
            t: graph.real_node_of_bus[&line.to_bus],
            y: labels[&line.id] as f64,
        })
        .collect()
}

fn gen_targets(net: &Network, graph: &ExpandedGraph, labels: &BTreeMap<u32, u8>) -> Vec<Target> {
    net.generators
        .iter()
        .map(|gen| Target::Node {
            node: graph.virtual_node_of_gen[&gen.id],
            y: labels[&gen.id] as f64,
        })
        .collect()
}

/// Head logit for one target given final embeddings. The line head sees
/// `[h_f + h_t, |h_f - h_t|]`, which a swap of the endpoints leaves
/// unchanged, so line scores cannot depend on line orientation.
fn target_logit(model: &GnnModel, h: &Array2<f64>, target: &Target) -> f64 {
    let d = model.hidden_dim;
    match *target {
        Target::Pair { f, t, .. } => {
            let mut z = model.head_b;
            for k in 0..d {
                let sum = h[(f, k)] + h[(t, k)];
                let diff = (h[(f, k)] - h[(t, k)]).abs();
                z += model.head_w[k] * sum + model.head_w[d + k] * diff;
            }
            z
        }
        Target::Node { node, .. } => {
            let mut z = model.head_b;
            for k in 0..d {
                z += model.head_w[k] * h[(node, k)];
            }
            z
        }
    }
}

/// Gradient sums over a set of samples, plus the bookkeeping needed for
/// loss and accuracy.
#[derive(Debug, Clone)]
struct Grad {
    dw: Vec<Array2<f64>>,
    db: Vec<Array1<f64>>,
    dhead_w: Array1<f64>,
    dhead_b: f64,
    loss_sum: f64,
    count: usize,
    correct: usize,
}

impl Grad {
    fn zeros(model: &GnnModel) -> Self {
        Grad {
            dw: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            db: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            dhead_w: Array1::zeros(model.head_w.raw_dim()),
            dhead_b: 0.0,
            loss_sum: 0.0,
            count: 0,
            correct: 0,
        }
    }

    fn add(&mut self, other: &Grad) {
        for (a, b) in self.dw.iter_mut().zip(&other.dw) {
            *a += b;
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            *a += b;
        }
        self.dhead_w += &other.dhead_w;
        self.dhead_b += other.dhead_b;
        self.loss_sum += other.loss_sum;
        self.count += other.count;
        self.correct += other.correct;
    }
}

/// Accumulate loss, accuracy, and (optionally) gradients for one sample.
fn accumulate_sample(
    model: &GnnModel,
    a_hat: &Array2<f64>,
    h0: &Array2<f64>,
    targets: &[Target],
    w_pos: f64,
    loss: LossKind,
    acc: &mut Grad,
    with_grad: bool,
) {
    let trace = forward_trace(model, a_hat, h0.clone());
    let h_final = &trace.h[model.n_layers];
    let d = model.hidden_dim;
    let n = h_final.nrows();

    let mut dh = Array2::<f64>::zeros((n, d));
    for target in targets {
        let z = target_logit(model, h_final, target);
        let y = target.label();
        let (l, g) = loss_and_dlogit(loss, z, y, w_pos);
        acc.loss_sum += l;
        acc.count += 1;
        let predicted = (sigmoid(z) >= model.decision_threshold) as u8;
        if predicted as f64 == y {
            acc.correct += 1;
        }
        if !with_grad {
            continue;
        }
        acc.dhead_b += g;
        match *target {
            Target::Pair { f, t, .. } => {
                for k in 0..d {
                    let hf = h_final[(f, k)];
                    let ht = h_final[(t, k)];
                    let diff = hf - ht;
                    // sign(0) = 0 so the kink contributes nothing.
                    let s = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    acc.dhead_w[k] += g * (hf + ht);
                    acc.dhead_w[d + k] += g * diff.abs();
                    dh[(f, k)] += g * (model.head_w[k] + model.head_w[d + k] * s);
                    dh[(t, k)] += g * (model.head_w[k] - model.head_w[d + k] * s);
                }
            }
            Target::Node { node, .. } => {
                for k in 0..d {
                    acc.dhead_w[k] += g * h_final[(node, k)];
                    dh[(node, k)] += g * model.head_w[k];
                }
            }
        }
    }
    if !with_grad {
        return;
    }

    // Backward through the layer stack; the adjacency is symmetric so its
    // transpose is itself.
    let mut g_h = dh;
    for l in (0..model.n_layers).rev() {
        let mut dz = g_h;
        dz.zip_mut_with(&trace.z[l], |gv, &zv| {
            if zv <= 0.0 {
                *gv = 0.0;
            }
        });
        acc.dw[l] += &trace.m[l].t().dot(&dz);
        acc.db[l] += &dz.sum_axis(Axis(0));
        if l > 0 {
            g_h = a_hat.dot(&dz).dot(&model.weights[l].t());
        } else {
            g_h = Array2::zeros((0, 0));
        }
    }
}

/// Chunked deterministic fold: each chunk of samples is accumulated
/// sequentially, chunks run in parallel, and the partial results are
/// combined in chunk order.
fn fold_samples(
    model: &GnnModel,
    a_hat: &Array2<f64>,
    prepared: &[(Array2<f64>, Vec<Target>)],
    indices: &[usize],
    w_pos: f64,
    loss: LossKind,
    with_grad: bool,
) -> Grad {
    let chunk_grads: Vec<Grad> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Grad::zeros(model);
            for &i in chunk {
                let (h0, targets) = &prepared[i];
                accumulate_sample(model, a_hat, h0, targets, w_pos, loss, &mut acc, with_grad);
            }
            acc
        })
        .collect();
    let mut total = Grad::zeros(model);
    for g in &chunk_grads {
        total.add(g);
    }
    total
}

fn init_model(config: &TrainConfig, in_dim: usize) -> GnnModel {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut uniform = |fan_in: usize, len: usize| -> Vec<f64> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        (0..len).map(|_| (2.0 * rng.random::<f64>() - 1.0) * bound).collect()
    };
    let mut weights = Vec::with_capacity(config.n_layers);
    let mut biases = Vec::with_capacity(config.n_layers);
    for l in 0..config.n_layers {
        let fan_in = if l == 0 { in_dim } else { config.hidden_dim };
        let data = uniform(fan_in, fan_in * config.hidden_dim);
        weights.push(Array2::from_shape_vec((fan_in, config.hidden_dim), data).expect("shape"));
        biases.push(Array1::zeros(config.hidden_dim));
    }
    let head_dim = match config.stage {
        Stage::Line => 2 * config.hidden_dim,
        Stage::Gen => config.hidden_dim,
    };
    let head_w = Array1::from_vec(uniform(head_dim, head_dim));
    GnnModel {
        stage: config.stage,
        in_dim,
        hidden_dim: config.hidden_dim,
        n_layers: config.n_layers,
        weights,
        biases,
        head_w,
        head_b: 0.0,
        feature_mean: vec![0.0; in_dim],
        feature_std: vec![1.0; in_dim],
        decision_threshold: config.decision_threshold,
        seed: config.seed,
        config: config.clone(),
    }
}

/// Column mean and standard deviation over every node of every training
/// sample; constant columns get a standard deviation of 1 so they map to
/// zero instead of exploding.
fn fit_feature_norm(raw: &[&Array2<f64>], in_dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; in_dim];
    let mut count = 0usize;
    for x in raw {
        for row in x.rows() {
            for c in 0..in_dim {
                mean[c] += row[c];
            }
            count += 1;
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = vec![0.0; in_dim];
    for x in raw {
        for row in x.rows() {
            for c in 0..in_dim {
                let d = row[c] - mean[c];
                var[c] += d * d;
            }
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = (v / count as f64).sqrt();
            if s < 1e-12 {
                1.0
            } else {
                s
            }
        })
        .collect();
    (mean, std)
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64, t: usize) {
    let b1t = 1.0 - ADAM_BETA1.powi(t as i32);
    let b2t = 1.0 - ADAM_BETA2.powi(t as i32);
    for i in 0..theta.len() {
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * grad[i];
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        let m_hat = state.m[i] / b1t;
        let v_hat = state.v[i] / b2t;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Flatten order shared by the optimizer and the finite-difference
/// checker: layer weights row-major, then layer biases, then the head.
fn flatten_params(model: &GnnModel) -> Vec<f64> {
    let mut out = Vec::new();
    for w in &model.weights {
        out.extend(w.iter());
    }
    for b in &model.biases {
        out.extend(b.iter());
    }
    out.extend(model.head_w.iter());
    out.push(model.head_b);
    out
}

fn unflatten_params(model: &mut GnnModel, theta: &[f64]) {
    let mut i = 0;
    for w in &mut model.weights {
        for v in w.iter_mut() {
            *v = theta[i];
            i += 1;
        }
    }
    for b in &mut model.biases {
        for v in b.iter_mut() {
            *v = theta[i];
            i += 1;
        }
    }
    for v in model.head_w.iter_mut() {
        *v = theta[i];
        i += 1;
    }
    model.head_b = theta[i];
    debug_assert_eq!(i + 1, theta.len());
}

fn flatten_grads(grad: &Grad) -> Vec<f64> {
    let mut out = Vec::new();
    for w in &grad.dw {
        out.extend(w.iter());
    }
    for b in &grad.db {
        out.extend(b.iter());
    }
    out.extend(grad.dhead_w.iter());
    out.push(grad.dhead_b);
    out
}

/// Line probabilities used as stage-2 input features for one sample:
/// model predictions normally, the true labels under teacher forcing.
fn stage1_probs(
    sample: &Sample,
    net: &Network,
    graph: &ExpandedGraph,
    a_hat: &Array2<f64>,
    line_model: Option<&GnnModel>,
    teacher_forcing: bool,
) -> Result<BTreeMap<u32, f64>, TrainError> {
    if teacher_forcing {
        return Ok(sample.line_labels.iter().map(|(&id, &y)| (id, y as f64)).collect());
    }
    let line_model = line_model.ok_or(TrainError::MissingLineModel)?;
    if line_model.stage != Stage::Line {
        return Err(TrainError::WrongLineModelStage(line_model.stage.as_str()));
    }
    let x = build_features(graph, net, &sample.loads_mw, None)?;
    Ok(predict_lines(line_model, graph, a_hat, &x, net)?)
}

/// Fit a screening model on the dataset's train split, tracking loss and
/// accuracy on both splits each epoch. Generator-stage training needs the
/// already-trained line model (or teacher forcing).
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    line_model: Option<&GnnModel>,
) -> Result<(GnnModel, TrainHistory), TrainError> {
    if config.hidden_dim == 0 || config.n_layers == 0 {
        return Err(TrainError::BadConfig("hidden_dim and n_layers must be positive".into()));
    }
    if !(config.learning_rate > 0.0) {
        return Err(TrainError::BadConfig("learning rate must be positive".into()));
    }
    if !(config.pos_weight_cap >= 1.0) {
        return Err(TrainError::BadConfig("pos_weight_cap must be at least 1".into()));
    }
    let net = &dataset.header.network;
    let graph = expand(net);
    let a_hat = normalize_adjacency(&graph);

    // Raw features and targets for every sample, split-tagged.
    let mut prepared_raw: Vec<(Array2<f64>, Vec<Target>)> = Vec::with_capacity(dataset.samples.len());
    for sample in &dataset.samples {
        let (x, targets) = match config.stage {
            Stage::Line => {
                let x = build_features(&graph, net, &sample.loads_mw, None)?;
                (x, line_targets(net, &graph, &sample.line_labels))
            }
            Stage::Gen => {
                let probs = stage1_probs(
                    sample,
                    net,
                    &graph,
                    &a_hat,
                    line_model,
                    config.teacher_forcing,
                )?;
                let x = build_features(&graph, net, &sample.loads_mw, Some(&probs))?;
                (x, gen_targets(net, &graph, &sample.gen_labels))
            }
        };
        prepared_raw.push((x, targets));
    }

    let train_idx: Vec<usize> = dataset
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    let val_idx: Vec<usize> = dataset
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split == Split::Val)
        .map(|(i, _)| i)
        .collect();
    if train_idx.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }

    // Class weight from the training split only.
    let mut pos = 0usize;
    let mut neg = 0usize;
    for &i in &train_idx {
        for t in &prepared_raw[i].1 {
            if t.label() > 0.5 {
                pos += 1;
            } else {
                neg += 1;
            }
        }
    }
    if pos == 0 {
        return Err(TrainError::NoPositiveExamples(config.stage.as_str()));
    }
    let w_pos = (neg as f64 / pos as f64).min(config.pos_weight_cap);

    let in_dim = prepared_raw[0].0.ncols();
    let mut model = init_model(config, in_dim);
    let train_raw: Vec<&Array2<f64>> = train_idx.iter().map(|&i| &prepared_raw[i].0).collect();
    let (mean, std) = fit_feature_norm(&train_raw, in_dim);
    model.feature_mean = mean;
    model.feature_std = std;

    // Standardize once; the statistics are frozen before training starts.
    let prepared: Vec<(Array2<f64>, Vec<Target>)> = prepared_raw
        .into_iter()
        .map(|(x, t)| (standardize(&model, &x), t))
        .collect();

    let mut theta = flatten_params(&model);
    let mut adam = AdamState { m: vec![0.0; theta.len()], v: vec![0.0; theta.len()] };
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let train_pass =
            fold_samples(&model, &a_hat, &prepared, &train_idx, w_pos, config.loss, true);
        let val_pass = if val_idx.is_empty() {
            None
        } else {
            Some(fold_samples(&model, &a_hat, &prepared, &val_idx, w_pos, config.loss, false))
        };
        history.push(EpochStats {
            train_loss: train_pass.loss_sum / train_pass.count as f64,
            val_loss: val_pass.as_ref().map_or(0.0, |v| v.loss_sum / v.count as f64),
            train_accuracy: train_pass.correct as f64 / train_pass.count as f64,
            val_accuracy: val_pass
                .as_ref()
                .map_or(0.0, |v| v.correct as f64 / v.count as f64),
        });

        let scale = 1.0 / train_pass.count as f64;
        let grad: Vec<f64> = flatten_grads(&train_pass).into_iter().map(|g| g * scale).collect();
        adam_step(&mut theta, &grad, &mut adam, config.learning_rate, epoch);
        unflatten_params(&mut model, &theta);
    }

    Ok((
        model,
        TrainHistory {
            epochs: history,
            pos_weight: w_pos,
            threads: rayon::current_num_threads(),
            n_train: train_idx.len(),
            n_val: val_idx.len(),
        },
    ))
}

/// Congestion probability for every line from its endpoint embeddings.
pub fn predict_lines(
    model: &GnnModel,
    graph: &ExpandedGraph,
    a_hat: &Array2<f64>,
    x_raw: &Array2<f64>,
    net: &Network,
) -> Result<BTreeMap<u32, f64>, PredictError> {
    if model.stage != Stage::Line {
        return Err(PredictError::WrongStage {
            expected: Stage::Line.as_str(),
            found: model.stage.as_str(),
        });
    }
    let h = forward(model, a_hat, x_raw)?;
    Ok(net
        .lines
        .iter()
        .map(|line| {
            let target = Target::Pair {
                f: graph.real_node_of_bus[&line.from_bus],
                t: graph.real_node_of_bus[&line.to_bus],
                y: 0.0,
            };
            (line.id, sigmoid(target_logit(model, &h, &target)))
        })
        .collect())
}

/// At-maximum probability for every generator from its virtual node
/// embedding. The feature matrix must normally carry the first stage's
/// congestion columns; a caller that really means "no congestion signal"
/// passes `stage1_bypass`.
pub fn predict_max_gens(
    model: &GnnModel,
    graph: &ExpandedGraph,
    a_hat: &Array2<f64>,
    x_raw: &Array2<f64>,
    net: &Network,
    stage1_bypass: bool,
) -> Result<BTreeMap<u32, f64>, PredictError> {
    if model.stage != Stage::Gen {
        return Err(PredictError::WrongStage {
            expected: Stage::Gen.as_str(),
            found: model.stage.as_str(),
        });
    }
    if !stage1_bypass {
        let signal = x_raw
            .rows()
            .into_iter()
            .any(|r| r[FEAT_CONG_MEAN] != 0.0 || r[FEAT_CONG_MAX] != 0.0);
        if !signal {
            return Err(PredictError::MissingStageOneSignal);
        }
    }
    let h = forward(model, a_hat, x_raw)?;
    Ok(net
        .generators
        .iter()
        .map(|gen| {
            let target = Target::Node {
                node: graph.virtual_node_of_gen[&gen.id],
                y: 0.0,
            };
            (gen.id, sigmoid(target_logit(model, &h, &target)))
        })
        .collect())
}

/// Threshold probabilities into 0/1 labels; the boundary rounds up.
pub fn classify(probs: &BTreeMap<u32, f64>, threshold: f64) -> BTreeMap<u32, u8> {
    probs.iter().map(|(&id, &p)| (id, (p >= threshold) as u8)).collect()
}

/// Compare the analytic gradient against central finite differences on
/// one small instance; returns the worst relative disagreement. Keep the
/// instance tiny: the cost is two forward passes per parameter.
pub fn grad_check(
    model: &GnnModel,
    graph: &ExpandedGraph,
    a_hat: &Array2<f64>,
    x_raw: &Array2<f64>,
    net: &Network,
    labels: &BTreeMap<u32, u8>,
    w_pos: f64,
    loss: LossKind,
) -> f64 {
    assert!(graph.n_nodes <= 12, "gradient checking is for toy instances");
    let targets = match model.stage {
        Stage::Line => line_targets(net, graph, labels),
        Stage::Gen => gen_targets(net, graph, labels),
    };
    let h0 = standardize(model, x_raw);

    let mut acc = Grad::zeros(model);
    accumulate_sample(model, a_hat, &h0, &targets, w_pos, loss, &mut acc, true);
    let scale = 1.0 / acc.count as f64;
    let analytic: Vec<f64> = flatten_grads(&acc).into_iter().map(|g| g * scale).collect();

    let loss_at = |m: &GnnModel| -> f64 {
        let mut probe = Grad::zeros(m);
        accumulate_sample(m, a_hat, &h0, &targets, w_pos, loss, &mut probe, false);
        probe.loss_sum / probe.count as f64
    };

    let theta = flatten_params(model);
    let step = 1e-4;
    let mut worst = 0.0_f64;
    let mut probe_model = model.clone();
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        plus[i] += step;
        unflatten_params(&mut probe_model, &plus);
        let lp = loss_at(&probe_model);
        let mut minus = theta.clone();
        minus[i] -= step;
        unflatten_params(&mut probe_model, &minus);
        let lm = loss_at(&probe_model);
        let numeric = (lp - lm) / (2.0 * step);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("model file is not valid JSON: {0}")]
    Syntax(String),
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model file does not match the schema: {0}")]
    Schema(String),
    #[error("model file is inconsistent: {0}")]
    Shape(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixData {
    rows: usize,
    cols: usize,
    /// Row-major values.
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    stage: Stage,
    in_dim: usize,
    hidden_dim: usize,
    n_layers: usize,
    weights: Vec<MatrixData>,
    biases: Vec<Vec<f64>>,
    head_w: Vec<f64>,
    head_b: f64,
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
    decision_threshold: f64,
    seed: u64,
    config: TrainConfig,
}

impl GnnModel {
    /// Serialize to the versioned model format. Floats round-trip
    /// bit-exactly through [`GnnModel::from_json`].
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            version: MODEL_VERSION,
            stage: self.stage,
            in_dim: self.in_dim,
            hidden_dim: self.hidden_dim,
            n_layers: self.n_layers,
            weights: self
                .weights
                .iter()
                .map(|w| MatrixData {
                    rows: w.nrows(),
                    cols: w.ncols(),
                    data: w.iter().copied().collect(),
                })
                .collect(),
            biases: self.biases.iter().map(|b| b.to_vec()).collect(),
            head_w: self.head_w.to_vec(),
            head_b: self.head_b,
            feature_mean: self.feature_mean.clone(),
            feature_std: self.feature_std.clone(),
            decision_threshold: self.decision_threshold,
            seed: self.seed,
            config: self.config.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("model serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<GnnModel, ModelError> {
        let probe: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ModelError::Syntax(e.to_string()))?;
        let found = probe
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| ModelError::Schema("missing numeric `version` field".into()))?
            as u32;
        if found != MODEL_VERSION {
            return Err(ModelError::VersionMismatch { found, expected: MODEL_VERSION });
        }
        let file: ModelFile =
            serde_json::from_value(probe).map_err(|e| ModelError::Schema(e.to_string()))?;

        if file.weights.len() != file.n_layers || file.biases.len() != file.n_layers {
            return Err(ModelError::Shape(format!(
                "{} layers declared but {} weight and {} bias blocks stored",
                file.n_layers,
                file.weights.len(),
                file.biases.len()
            )));
        }
        let mut weights = Vec::with_capacity(file.n_layers);
        for (l, m) in file.weights.iter().enumerate() {
            let expect_rows = if l == 0 { file.in_dim } else { file.hidden_dim };
            if m.rows != expect_rows || m.cols != file.hidden_dim {
                return Err(ModelError::Shape(format!(
                    "layer {l} weights are {}x{}, expected {expect_rows}x{}",
                    m.rows, m.cols, file.hidden_dim
                )));
            }
            if m.data.len() != m.rows * m.cols {
                return Err(ModelError::Shape(format!(
                    "layer {l} declares {}x{} but stores {} values",
                    m.rows,
                    m.cols,
                    m.data.len()
                )));
            }
            weights.push(
                Array2::from_shape_vec((m.rows, m.cols), m.data.clone()).expect("checked size"),
            );
        }
        for (l, b) in file.biases.iter().enumerate() {
            if b.len() != file.hidden_dim {
                return Err(ModelError::Shape(format!(
                    "layer {l} bias has {} values, expected {}",
                    b.len(),
                    file.hidden_dim
                )));
            }
        }
        let head_dim = match file.stage {
            Stage::Line => 2 * file.hidden_dim,
            Stage::Gen => file.hidden_dim,
        };
        if file.head_w.len() != head_dim {
            return Err(ModelError::Shape(format!(
                "head has {} weights, expected {head_dim}",
                file.head_w.len()
            )));
        }
        if file.feature_mean.len() != file.in_dim || file.feature_std.len() != file.in_dim {
            return Err(ModelError::Shape("feature statistics do not match in_dim".into()));
        }
        if file.config.stage != file.stage {
            return Err(ModelError::Shape("config stage disagrees with model stage".into()));
        }
        let finite = weights.iter().flat_map(|w| w.iter()).all(|v| v.is_finite())
            && file.biases.iter().flatten().all(|v| v.is_finite())
            && file.head_w.iter().all(|v| v.is_finite())
            && file.head_b.is_finite()
            && file.feature_std.iter().all(|v| v.is_finite() && *v > 0.0);
        if !finite {
            return Err(ModelError::Shape("non-finite or non-positive values".into()));
        }

        Ok(GnnModel {
            stage: file.stage,
            in_dim: file.in_dim,
            hidden_dim: file.hidden_dim,
            n_layers: file.n_layers,
            weights,
            biases: file.biases.into_iter().map(Array1::from_vec).collect(),
            head_w: Array1::from_vec(file.head_w),
            head_b: file.head_b,
            feature_mean: file.feature_mean,
            feature_std: file.feature_std,
            decision_threshold: file.decision_threshold,
            seed: file.seed,
            config: file.config,
        })
    }
}
