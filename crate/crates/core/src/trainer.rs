//! Toy embedding experiment: synthetic point clouds with per-class spread,
//! a small MLP that maps them to 2-D embeddings, and an SGD loop that trains
//! it together with a bias-free classification head under any loss in the
//! margin family.

use serde::{Deserialize, Serialize};

use crate::elastic::mean_std;
use crate::error::{Error, Result};
use crate::loss::{margin_softmax_loss, ClassWeights, EmbeddingBatch, MarginSpec, SIN_INSTABILITY};
use crate::matrix::{dot, l2_normalize_rows, norm, Matrix};
use crate::metrics::{geometry_report, GeometryReport};
use crate::rng::SeededStream;

/// Attempts allowed when placing class centers under the angle floor.
pub const MAX_CENTER_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyDatasetConfig {
    pub classes: usize,
    pub per_class: usize,
    /// Noise std of the first half of the classes.
    pub low_std: f64,
    /// Noise std of the second half of the classes.
    pub high_std: f64,
    pub input_dim: usize,
    /// Minimum angle between any two class centers, in degrees.
    pub min_center_angle_deg: f64,
    pub seed: u64,
}

impl Default for ToyDatasetConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            per_class: 400,
            low_std: 0.02,
            high_std: 0.2,
            input_dim: 16,
            min_center_angle_deg: 60.0,
            seed: 2021,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub points: Matrix,
    pub labels: Vec<usize>,
    /// Generative noise std per class.
    pub class_stds: Vec<f64>,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_stds.len()
    }

    pub fn input_dim(&self) -> usize {
        self.points.cols()
    }
}

/// Class centers on the unit sphere plus per-class noise levels. Sampling
/// several datasets from one generator gives train and held-out sets that
/// share the same classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGenerator {
    pub centers: Matrix,
    pub class_stds: Vec<f64>,
}

impl ToyGenerator {
    pub fn new(cfg: &ToyDatasetConfig, rng: &mut SeededStream) -> Result<Self> {
        if cfg.classes < 2 || cfg.classes % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "the half-low/half-high profile needs an even class count >= 2, got {}",
                cfg.classes
            )));
        }
        if cfg.input_dim < 2 {
            return Err(Error::InvalidArgument("input_dim must be >= 2".into()));
        }
        if !(cfg.low_std > 0.0 && cfg.high_std > 0.0) {
            return Err(Error::InvalidArgument("class stds must be positive".into()));
        }
        let max_cos = cfg.min_center_angle_deg.to_radians().cos();
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(cfg.classes);
        let mut attempts = 0;
        while centers.len() < cfg.classes {
            if attempts == MAX_CENTER_ATTEMPTS {
                return Err(Error::RejectionFailure {
                    classes: cfg.classes,
                    min_angle_deg: cfg.min_center_angle_deg,
                    attempts,
                });
            }
            attempts += 1;
            let mut v: Vec<f64> = (0..cfg.input_dim).map(|_| rng.standard_normal()).collect();
            let n = norm(&v);
            v.iter_mut().for_each(|x| *x /= n);
            if centers.iter().all(|c| dot(c, &v) <= max_cos) {
                centers.push(v);
            }
        }
        let half = cfg.classes / 2;
        let class_stds = (0..cfg.classes)
            .map(|k| if k < half { cfg.low_std } else { cfg.high_std })
            .collect();
        Ok(Self {
            centers: Matrix::from_rows(&centers)?,
            class_stds,
        })
    }

    /// `per_class` points per class, class-major order; noise scaled by
    /// `std_factor`.
    pub fn sample(&self, per_class: usize, std_factor: f64, rng: &mut SeededStream) -> Result<ToyDataset> {
        if per_class == 0 {
            return Err(Error::InvalidArgument("per_class must be >= 1".into()));
        }
        let (c, p) = self.centers.shape();
        let mut points = Matrix::zeros(c * per_class, p);
        let mut labels = Vec::with_capacity(c * per_class);
        for k in 0..c {
            let std = self.class_stds[k] * std_factor;
            for s in 0..per_class {
                let row = points.row_mut(k * per_class + s);
                for (x, &mu) in row.iter_mut().zip(self.centers.row(k)) {
                    *x = mu + std * rng.standard_normal();
                }
                labels.push(k);
            }
        }
        Ok(ToyDataset {
            points,
            labels,
            class_stds: self.class_stds.iter().map(|s| s * std_factor).collect(),
        })
    }
}

/// Centers and samples from one stream seeded by `cfg.seed`.
pub fn generate_toy_dataset(cfg: &ToyDatasetConfig) -> Result<ToyDataset> {
    let mut rng = SeededStream::new(cfg.seed);
    let generator = ToyGenerator::new(cfg, &mut rng)?;
    generator.sample(cfg.per_class, 1.0, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out × in`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn forward(&self, input: &Matrix) -> Matrix {
        let mut out = input
            .matmul_transposed(&self.weights)
            .expect("layer widths are checked at construction");
        for i in 0..out.rows() {
            for (z, b) in out.row_mut(i).iter_mut().zip(&self.bias) {
                *z += b;
            }
        }
        out
    }
}

/// Fully connected network; the activation sits between layers, the last
/// layer is linear and emits the embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Per-layer gradients, same shapes as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub layers: Vec<Dense>,
}

/// Inputs and pre-activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

impl EmbeddingModel {
    /// `widths = [input, hidden..., embedding]`. Weights are uniform on
    /// `±sqrt(3 / fan_in)` (unit gain), biases zero.
    pub fn new(widths: &[usize], activation: Activation, rng: &mut SeededStream) -> Result<Self> {
        Self::with_gain(widths, activation, 1.0, rng)
    }

    /// As [`EmbeddingModel::new`] with every weight bound multiplied by `gain`.
    pub fn with_gain(
        widths: &[usize],
        activation: Activation,
        gain: f64,
        rng: &mut SeededStream,
    ) -> Result<Self> {
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::InvalidArgument(format!("init gain must be positive, got {gain}")));
        }
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = gain * (3.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.uniform_range(-bound, bound))
                    .collect();
                Dense {
                    weights: Matrix::from_vec(fan_out, fan_in, data).unwrap(),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self { layers, activation })
    }

    /// One linear layer initialized to the identity.
    pub fn identity(dim: usize) -> Self {
        Self {
            layers: vec![Dense {
                weights: Matrix::identity(dim),
                bias: vec![0.0; dim],
            }],
            activation: Activation::Relu,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.rows()
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<Matrix> {
        self.forward_cached(inputs).map(|(out, _)| out)
    }

    pub fn forward_cached(&self, inputs: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} inputs, got {}",
                self.input_dim(),
                inputs.cols()
            )));
        }
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len()),
        };
        let mut a = inputs.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&a);
            cache.inputs.push(a);
            a = z.clone();
            if l != last {
                a.as_mut_slice().iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            cache.pre_activations.push(z);
        }
        if !a.is_finite() {
            return Err(Error::NonFinite("model output"));
        }
        Ok((a, cache))
    }

    /// Back-propagates `grad_output` (gradient w.r.t. the embeddings).
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Matrix) -> ModelGrads {
        let last = self.layers.len() - 1;
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut g = grad_output.clone();
        for l in (0..self.layers.len()).rev() {
            if l != last {
                let z = &cache.pre_activations[l];
                for (gv, &zv) in g.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *gv *= self.activation.derivative(zv);
                }
            }
            let input = &cache.inputs[l];
            let w = &self.layers[l].weights;
            let (out_dim, in_dim) = w.shape();
            let mut gw = Matrix::zeros(out_dim, in_dim);
            let mut gb = vec![0.0; out_dim];
            let mut g_prev = Matrix::zeros(g.rows(), in_dim);
            for i in 0..g.rows() {
                let gi = g.row(i);
                let xi = input.row(i);
                for o in 0..out_dim {
                    let go = gi[o];
                    if go == 0.0 {
                        continue;
                    }
                    gb[o] += go;
                    let wo = w.row(o);
                    let gwo = gw.row_mut(o);
                    for k in 0..in_dim {
                        gwo[k] += go * xi[k];
                    }
                    let gp = g_prev.row_mut(i);
                    for k in 0..in_dim {
                        gp[k] += go * wo[k];
                    }
                }
            }
            grads.push(Dense { weights: gw, bias: gb });
            g = g_prev;
        }
        grads.reverse();
        ModelGrads { layers: grads }
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for layer in &mut self.layers {
            out.push(layer.weights.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out
    }
}

impl ModelGrads {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for layer in &self.layers {
            out.push(layer.weights.as_slice());
            out.push(layer.bias.as_slice());
        }
        out
    }
}

/// Head rows drawn uniformly on the unit sphere.
pub fn init_head(classes: usize, dim: usize, rng: &mut SeededStream) -> Result<ClassWeights> {
    let data: Vec<f64> = (0..classes * dim).map(|_| rng.standard_normal()).collect();
    ClassWeights::new(l2_normalize_rows(&Matrix::from_vec(classes, dim, data)?)?)
}

/// SGD with classical momentum; weight decay is folded into the gradient:
/// `g ← g + wd·θ`, `v ← μ·v + g`, `θ ← θ − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) {
        assert_eq!(params.len(), grads.len());
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            assert_eq!(p.len(), g.len());
            for k in 0..p.len() {
                let gk = g[k] + self.weight_decay * p[k];
                v[k] = self.momentum * v[k] + gk;
                p[k] -= lr * v[k];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_iterations: usize,
    pub initial_lr: f64,
    pub lr_drop_iterations: Vec<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub scale: f64,
}

impl TrainConfig {
    /// Toy profile: batch 128, 11 200 iterations, lr 0.1 divided by 10 at
    /// 1680, 2800, 3360 and 8400.
    pub fn toy() -> Self {
        Self {
            batch_size: 128,
            total_iterations: 11_200,
            initial_lr: 0.1,
            lr_drop_iterations: vec![1680, 2800, 3360, 8400],
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            scale: 64.0,
        }
    }

    /// Full-scale schedule (batch 512, 295k iterations). Kept for reference;
    /// the toy MLP is not meant to run it.
    pub fn paper() -> Self {
        Self {
            batch_size: 512,
            total_iterations: 295_000,
            initial_lr: 0.1,
            lr_drop_iterations: vec![80_000, 140_000, 210_000, 280_000],
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            scale: 64.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.initial_lr > 0.0) || !(self.scale > 0.0) {
            return Err(Error::InvalidArgument("initial_lr and scale must be positive".into()));
        }
        let drops = &self.lr_drop_iterations;
        if drops.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("lr_drop_iterations must be strictly increasing".into()));
        }
        // The drop list is allowed to run past a shortened total_iterations
        // (e.g. a `--iterations` override); only the ordering is required.
        Ok(())
    }

    /// `initial_lr · 10^-k` where `k` counts drops at or before `iteration`.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        let k = self.lr_drop_iterations.iter().filter(|&&d| d <= iteration).count();
        self.initial_lr / 10f64.powi(k as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
    pub margin_mean: f64,
    pub margin_std: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

impl TrainingLog {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(r)?;
        }
        if self.records.is_empty() {
            w.write_record(["iteration", "loss", "lr", "margin_mean", "margin_std"])?;
        }
        w.flush().map_err(|e| Error::io("training log", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Mean loss over the first (or last) `window` records.
    pub fn window_mean(&self, window: usize, from_end: bool) -> f64 {
        let n = window.min(self.records.len());
        let slice = if from_end {
            &self.records[self.records.len() - n..]
        } else {
            &self.records[..n]
        };
        slice.iter().map(|r| r.loss).sum::<f64>() / n as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EmbeddingModel,
    pub head: ClassWeights,
    pub log: TrainingLog,
    pub final_accuracy: f64,
    /// Summed over all iterations.
    pub wrapped_targets: usize,
    /// Summed over all iterations.
    pub unstable_targets: usize,
}

/// Trains `model` and `head` jointly. Mini-batches are drawn from per-epoch
/// shuffles; margin draws use their own stream so the batch order does not
/// depend on the loss.
pub fn train(
    mut model: EmbeddingModel,
    mut head: ClassWeights,
    dataset: &ToyDataset,
    spec: &MarginSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    if dataset.input_dim() != model.input_dim() || model.output_dim() != head.dim() {
        return Err(Error::DimensionMismatch(format!(
            "dataset {}-D -> model {}-D..{}-D -> head {}-D",
            dataset.input_dim(),
            model.input_dim(),
            model.output_dim(),
            head.dim()
        )));
    }
    if dataset.num_classes() != head.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} classes, head has {}",
            dataset.num_classes(),
            head.num_classes()
        )));
    }

    let mut batch_rng = SeededStream::split(cfg.seed, 1);
    let mut margin_rng = SeededStream::split(cfg.seed, 2);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut cursor = order.len();
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut log = TrainingLog::default();
    let mut indices = Vec::with_capacity(cfg.batch_size);
    let (mut wrapped_targets, mut unstable_targets) = (0usize, 0usize);

    for iteration in 0..cfg.total_iterations {
        indices.clear();
        while indices.len() < cfg.batch_size {
            if cursor == order.len() {
                batch_rng.shuffle(&mut order);
                cursor = 0;
            }
            indices.push(order[cursor]);
            cursor += 1;
        }
        let inputs = dataset.points.select_rows(&indices);
        let labels: Vec<usize> = indices.iter().map(|&i| dataset.labels[i]).collect();

        let (embeddings, cache) = model.forward_cached(&inputs)?;
        let batch = EmbeddingBatch::new(embeddings, labels)?;
        let out = margin_softmax_loss(&batch, &head, spec, &mut margin_rng)?;
        if !out.mean_loss.is_finite() {
            return Err(Error::Divergence {
                iteration,
                loss: out.mean_loss,
            });
        }
        wrapped_targets += out.wrapped_targets;
        unstable_targets += out.unstable_targets;
        let model_grads = model.backward(&cache, &out.grad_features);
        let lr = cfg.lr_at(iteration);

        let mut params = model.param_slices_mut();
        params.push(head.weights.as_mut_slice());
        let mut grads = model_grads.slices();
        grads.push(out.grad_weights.as_slice());
        sgd.step(params, grads, lr);

        let (margin_mean, margin_std) = mean_std(&out.margins_used);
        log.records.push(LogRecord {
            iteration,
            loss: out.mean_loss,
            lr,
            margin_mean,
            margin_std,
        });
    }

    let final_accuracy = train_accuracy(&model, &head, dataset, spec)?;
    if unstable_targets > 0 {
        log::warn!(
            "{}: {unstable_targets} target(s) over the run had |sin theta| < {SIN_INSTABILITY} and passed no gradient",
            spec.label()
        );
    }
    Ok(TrainOutcome {
        model,
        head,
        log,
        final_accuracy,
        wrapped_targets,
        unstable_targets,
    })
}

/// Shape of the toy embedding network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyModelConfig {
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub activation: Activation,
    pub init_gain: f64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            embedding_dim: 2,
            activation: Activation::Relu,
            init_gain: TOY_INIT_GAIN,
        }
    }
}

pub const TOY_INIT_GAIN: f64 = 10.0;

impl ToyModelConfig {
    pub fn widths(&self, input_dim: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(input_dim);
        w.extend(&self.hidden);
        w.push(self.embedding_dim);
        w
    }

    /// Model and head for `seed`, both drawn from stream 0 of that seed.
    pub fn init(&self, input_dim: usize, classes: usize, seed: u64) -> Result<(EmbeddingModel, ClassWeights)> {
        let mut rng = SeededStream::split(seed, 0);
        let model = EmbeddingModel::with_gain(&self.widths(input_dim), self.activation, self.init_gain, &mut rng)?;
        let head = init_head(classes, self.embedding_dim, &mut rng)?;
        Ok((model, head))
    }
}

/// The three losses compared in the 2-D toy experiment: ArcFace (m = 0.5),
/// ElasticFace-Arc (m = 0.5, σ = 0.05) and ElasticFace-Arc+ (m = 0.5,
/// σ = 0.0175), all at s = 64.
pub fn fig2_specs() -> Vec<MarginSpec> {
    let s = crate::loss::DEFAULT_SCALE;
    vec![
        MarginSpec::arcface(0.5, s),
        MarginSpec::elastic_arc(0.5, 0.05, s),
        MarginSpec::elastic_arc_plus(0.5, 0.0175, s),
    ]
}

#[derive(Debug, Clone)]
pub struct ToyRun {
    pub spec: MarginSpec,
    pub outcome: TrainOutcome,
    pub embeddings: EmbeddingBatch,
    pub geometry: GeometryReport,
}

/// Initializes from `cfg.seed`, trains, embeds the training set and
/// measures its geometry.
pub fn run_toy(dataset: &ToyDataset, model_cfg: &ToyModelConfig, spec: &MarginSpec, cfg: &TrainConfig) -> Result<ToyRun> {
    let (model, head) = model_cfg.init(dataset.input_dim(), dataset.num_classes(), cfg.seed)?;
    let outcome = train(model, head, dataset, spec, cfg)?;
    let embeddings = embed(&outcome.model, dataset)?;
    let geometry = geometry_report(&embeddings.features, &embeddings.labels)?;
    Ok(ToyRun {
        spec: *spec,
        outcome,
        embeddings,
        geometry,
    })
}

/// Forward pass over the whole dataset; labels carried through.
pub fn embed(model: &EmbeddingModel, dataset: &ToyDataset) -> Result<EmbeddingBatch> {
    EmbeddingBatch::new(model.forward(&dataset.points)?, dataset.labels.clone())
}

/// Fraction of points whose highest logit (cosine, or raw dot product for
/// the plain softmax) is their own class. No margin is applied.
pub fn train_accuracy(
    model: &EmbeddingModel,
    head: &ClassWeights,
    dataset: &ToyDataset,
    spec: &MarginSpec,
) -> Result<f64> {
    let emb = model.forward(&dataset.points)?;
    let scores = if matches!(spec.family, crate::loss::MarginFamily::PlainSoftmax) {
        emb.matmul_transposed(&head.weights)?
    } else {
        l2_normalize_rows(&emb)?.matmul_transposed(&l2_normalize_rows(&head.weights)?)?
    };
    let correct = scores
        .iter_rows()
        .zip(&dataset.labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best == y
        })
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ToyDatasetConfig {
        ToyDatasetConfig {
            per_class: 20,
            input_dim: 6,
            ..ToyDatasetConfig::default()
        }
    }

    #[test]
    fn dataset_shape() {
        let d = generate_toy_dataset(&ToyDatasetConfig::default()).unwrap();
        assert_eq!(d.len(), 3200);
        assert_eq!(d.class_stds.iter().filter(|&&s| s == 0.02).count(), 4);
        assert_eq!(d.class_stds.iter().filter(|&&s| s == 0.2).count(), 4);
        for k in 0..8 {
            assert_eq!(d.labels.iter().filter(|&&y| y == k).count(), 400);
        }
    }

    #[test]
    fn single_point_per_class() {
        let cfg = ToyDatasetConfig {
            per_class: 1,
            ..ToyDatasetConfig::default()
        };
        let d = generate_toy_dataset(&cfg).unwrap();
        assert_eq!(d.len(), 8);
        assert_eq!(d.labels, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn empirical_std_matches_configuration() {
        let d = generate_toy_dataset(&ToyDatasetConfig::default()).unwrap();
        let p = d.input_dim();
        for k in 0..d.num_classes() {
            let rows: Vec<&[f64]> = d
                .points
                .iter_rows()
                .zip(&d.labels)
                .filter(|(_, &y)| y == k)
                .map(|(r, _)| r)
                .collect();
            let m = rows.len() as f64;
            let mut var = 0.0;
            for j in 0..p {
                let mean = rows.iter().map(|r| r[j]).sum::<f64>() / m;
                var += rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (m - 1.0);
            }
            let std = (var / p as f64).sqrt();
            assert!((std / d.class_stds[k] - 1.0).abs() < 0.05, "class {k}: {std}");
        }
    }

    #[test]
    fn impossible_angle_floor_fails() {
        let cfg = ToyDatasetConfig {
            input_dim: 2,
            min_center_angle_deg: 100.0,
            ..ToyDatasetConfig::default()
        };
        assert!(matches!(
            generate_toy_dataset(&cfg),
            Err(Error::RejectionFailure { .. })
        ));
    }

    #[test]
    fn odd_class_count_rejected() {
        let cfg = ToyDatasetConfig {
            classes: 7,
            ..ToyDatasetConfig::default()
        };
        assert!(generate_toy_dataset(&cfg).is_err());
    }

    #[test]
    fn identity_model_passes_inputs_through() {
        let x = Matrix::from_rows(&[[0.5, -1.0, 2.0], [3.0, 0.0, -0.25]]).unwrap();
        assert_eq!(EmbeddingModel::identity(3).forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_model_rejected_downstream() {
        let mut model = EmbeddingModel::new(&[4, 8, 2], Activation::Relu, &mut SeededStream::new(0)).unwrap();
        for layer in &mut model.layers {
            layer.weights.as_mut_slice().fill(0.0);
        }
        let x = Matrix::from_vec(3, 4, vec![1.0; 12]).unwrap();
        let emb = model.forward(&x).unwrap();
        assert!(emb.as_slice().iter().all(|&v| v == 0.0));
        assert!(matches!(l2_normalize_rows(&emb), Err(Error::ZeroRow { .. })));
    }

    #[test]
    fn forward_dimension_mismatch() {
        let model = EmbeddingModel::new(&[4, 2], Activation::Tanh, &mut SeededStream::new(0)).unwrap();
        assert!(matches!(
            model.forward(&Matrix::zeros(1, 3)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn forward_matches_scalar_loop() {
        let mut rng = SeededStream::new(5);
        for act in [Activation::Relu, Activation::Tanh] {
            let model = EmbeddingModel::new(&[5, 7, 6, 2], act, &mut rng).unwrap();
            let x = Matrix::from_vec(4, 5, (0..20).map(|_| rng.standard_normal()).collect()).unwrap();
            let out = model.forward(&x).unwrap();
            for i in 0..4 {
                let mut a: Vec<f64> = x.row(i).to_vec();
                for (l, layer) in model.layers.iter().enumerate() {
                    let mut next = Vec::new();
                    for o in 0..layer.weights.rows() {
                        let mut z = layer.bias[o];
                        for k in 0..a.len() {
                            z += layer.weights[(o, k)] * a[k];
                        }
                        if l + 1 < model.layers.len() {
                            z = match act {
                                Activation::Relu => if z > 0.0 { z } else { 0.0 },
                                Activation::Tanh => z.tanh(),
                            };
                        }
                        next.push(z);
                    }
                    a = next;
                }
                for j in 0..2 {
                    assert!((out[(i, j)] - a[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn model_backward_matches_finite_differences() {
        let mut rng = SeededStream::new(8);
        let model = EmbeddingModel::new(&[3, 5, 2], Activation::Tanh, &mut rng).unwrap();
        let x = Matrix::from_vec(4, 3, (0..12).map(|_| rng.standard_normal()).collect()).unwrap();
        let upstream = Matrix::from_vec(4, 2, (0..8).map(|_| rng.standard_normal()).collect()).unwrap();
        let objective = |m: &EmbeddingModel| -> f64 {
            let out = m.forward(&x).unwrap();
            out.as_slice().iter().zip(upstream.as_slice()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = model.forward_cached(&x).unwrap();
        let grads = model.backward(&cache, &upstream);
        let h = 1e-6;
        for l in 0..model.layers.len() {
            for idx in 0..model.layers[l].weights.as_slice().len() {
                let mut p = model.clone();
                p.layers[l].weights.as_mut_slice()[idx] += h;
                let mut q = model.clone();
                q.layers[l].weights.as_mut_slice()[idx] -= h;
                let fd = (objective(&p) - objective(&q)) / (2.0 * h);
                assert!((fd - grads.layers[l].weights.as_slice()[idx]).abs() < 1e-7);
            }
            for idx in 0..model.layers[l].bias.len() {
                let mut p = model.clone();
                p.layers[l].bias[idx] += h;
                let mut q = model.clone();
                q.layers[l].bias[idx] -= h;
                let fd = (objective(&p) - objective(&q)) / (2.0 * h);
                assert!((fd - grads.layers[l].bias[idx]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::toy();
        assert_eq!(cfg.lr_at(0), 0.1);
        assert_eq!(cfg.lr_at(1679), 0.1);
        assert_eq!(cfg.lr_at(1680), 0.1 / 10.0);
        assert_eq!(cfg.lr_at(2800), 0.1 / 100.0);
        assert_eq!(cfg.lr_at(3360), 0.1 / 1000.0);
        assert_eq!(cfg.lr_at(8400), 0.1 / 10_000.0);
        assert_eq!(cfg.lr_at(11_199), 0.1 / 10_000.0);
    }

    #[test]
    fn unsorted_drops_rejected() {
        let cfg = TrainConfig {
            lr_drop_iterations: vec![10, 5],
            ..TrainConfig::toy()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn weight_decay_shrinks_with_zero_gradient() {
        let mut sgd = Sgd::new(0.0, 5e-4);
        let mut p = vec![1.0, -2.0, 0.5];
        let zeros = vec![0.0; 3];
        let lr = 0.1;
        let mut expected = p.clone();
        for _ in 0..10 {
            sgd.step(vec![p.as_mut_slice()], vec![zeros.as_slice()], lr);
            expected.iter_mut().for_each(|v| *v *= 1.0 - lr * 5e-4);
        }
        for (a, b) in p.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-15 * b.abs());
        }
    }

    #[test]
    fn momentum_accumulates() {
        let mut sgd = Sgd::new(0.9, 0.0);
        let mut p = vec![0.0];
        let g = vec![1.0];
        sgd.step(vec![p.as_mut_slice()], vec![g.as_slice()], 1.0);
        assert_eq!(p[0], -1.0);
        sgd.step(vec![p.as_mut_slice()], vec![g.as_slice()], 1.0);
        assert_eq!(p[0], -1.0 - 1.9);
    }

    #[test]
    fn zero_iterations_returns_initial_parameters() {
        let d = generate_toy_dataset(&small_cfg()).unwrap();
        let mut rng = SeededStream::new(1);
        let model = EmbeddingModel::new(&[6, 16, 2], Activation::Relu, &mut rng).unwrap();
        let head = init_head(8, 2, &mut rng).unwrap();
        let cfg = TrainConfig {
            total_iterations: 0,
            ..TrainConfig::toy()
        };
        let out = train(model.clone(), head.clone(), &d, &MarginSpec::arcface(0.5, 64.0), &cfg).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.head, head);
        assert!(out.log.records.is_empty());
    }

    #[test]
    fn short_run_is_deterministic() {
        let d = generate_toy_dataset(&small_cfg()).unwrap();
        let run = || {
            let mut rng = SeededStream::new(3);
            let model = EmbeddingModel::new(&[6, 16, 2], Activation::Relu, &mut rng).unwrap();
            let head = init_head(8, 2, &mut rng).unwrap();
            let cfg = TrainConfig {
                batch_size: 32,
                total_iterations: 50,
                lr_drop_iterations: vec![30],
                ..TrainConfig::toy()
            };
            train(model, head, &d, &MarginSpec::elastic_arc_plus(0.5, 0.05, 64.0), &cfg).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model, b.model);
        assert_eq!(a.log.records[29].lr, 0.1);
        assert_eq!(a.log.records[30].lr, 0.01);
        assert!(a.log.records.iter().any(|r| r.margin_std > 0.0));
    }

    #[test]
    fn csv_header() {
        let log = TrainingLog {
            records: vec![LogRecord {
                iteration: 0,
                loss: 1.5,
                lr: 0.1,
                margin_mean: 0.5,
                margin_std: 0.0,
            }],
        };
        let s = log.to_csv_string().unwrap();
        assert_eq!(s, "iteration,loss,lr,margin_mean,margin_std\n0,1.5,0.1,0.5,0.0\n");
    }
}
