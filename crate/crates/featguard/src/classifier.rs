//! Feed-forward classifier with explicit forward and backward passes.
//!
//! The network is a stack of ReLU hidden layers, a tanh feature layer whose
//! output is the D-dimensional feature vector consumed by the density models,
//! and a linear softmax head. Backpropagation is written out by hand so input
//! gradients (for adversarial crafting) and parameter gradients (for SGD) are
//! exact, verifiable against finite differences.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;
use crate::seed::rng_from_seed;

const MODEL_FORMAT_VERSION: u32 = 1;

/// Multi-layer perceptron: ReLU hidden layers, tanh feature layer, linear
/// softmax head. The last weight matrix is `class_count x feature_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    /// One matrix per layer, each of shape `out x in`. The second-to-last
    /// layer produces features, the last is the classification head.
    pub layer_weights: Vec<Array2<f64>>,
    pub layer_biases: Vec<Array1<f64>>,
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub feature_dim: usize,
    pub class_count: usize,
}

/// One forward evaluation: bounded features, head logits, softmax probs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub features: Array1<f64>,
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
}

/// Gradients of the cross-entropy loss at a single sample.
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub input: Array1<f64>,
}

/// SGD hyperparameters. Momentum is classical (velocity accumulation);
/// the L2 penalty applies to weights only, never biases.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2_weight: f64,
    pub seed: u64,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::invalid(format!(
                "learning_rate = {} must be > 0",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum = {} not in [0, 1)",
                self.momentum
            )));
        }
        if self.l2_weight < 0.0 {
            return Err(Error::invalid("l2_weight must be >= 0"));
        }
        Ok(())
    }
}

/// Per-epoch training curves; every vector has length `epochs`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

/// Initialize a network with uniform weights in `[-1/sqrt(fan_in),
/// 1/sqrt(fan_in)]` and zero biases, deterministically from the seed.
pub fn init_mlp(
    input_dim: usize,
    hidden_sizes: &[usize],
    feature_dim: usize,
    class_count: usize,
    seed: u64,
) -> Result<MlpClassifier> {
    if input_dim < 1 || feature_dim < 1 || class_count < 1 {
        return Err(Error::invalid("all layer sizes must be >= 1"));
    }
    if hidden_sizes.iter().any(|&h| h < 1) {
        return Err(Error::invalid("hidden layer sizes must be >= 1"));
    }
    let mut dims = Vec::with_capacity(hidden_sizes.len() + 3);
    dims.push(input_dim);
    dims.extend_from_slice(hidden_sizes);
    dims.push(feature_dim);
    dims.push(class_count);

    let mut rng = rng_from_seed(seed);
    let mut layer_weights = Vec::with_capacity(dims.len() - 1);
    let mut layer_biases = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let scale = 1.0 / (fan_in as f64).sqrt();
        let mut weights = Array2::zeros((fan_out, fan_in));
        for v in weights.iter_mut() {
            *v = rng.random_range(-scale..=scale);
        }
        layer_weights.push(weights);
        layer_biases.push(Array1::zeros(fan_out));
    }
    Ok(MlpClassifier {
        layer_weights,
        layer_biases,
        input_dim,
        hidden_sizes: hidden_sizes.to_vec(),
        feature_dim,
        class_count,
    })
}

/// Numerically stable softmax (max subtraction before exponentiation).
pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let slice: Vec<f64> = logits.iter().copied().collect();
    let lse = log_sum_exp(&slice);
    logits.mapv(|v| (v - lse).exp())
}

impl MlpClassifier {
    fn layer_count(&self) -> usize {
        self.layer_weights.len()
    }

    fn check_input(&self, x: ArrayView1<'_, f64>) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::dims(format!(
                "input length {} != model input_dim {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Post-activation value of every layer: `[input, hidden..., features,
    /// logits]`. Shared by forward and backward passes.
    fn trace(&self, x: ArrayView1<'_, f64>) -> Vec<Array1<f64>> {
        let nl = self.layer_count();
        let mut acts = Vec::with_capacity(nl + 1);
        acts.push(x.to_owned());
        for (l, (w, b)) in self.layer_weights.iter().zip(&self.layer_biases).enumerate() {
            let z = w.dot(acts.last().unwrap()) + b;
            let a = if l < nl - 2 {
                z.mapv(|v| v.max(0.0)) // hidden: ReLU
            } else if l == nl - 2 {
                z.mapv(f64::tanh) // feature layer
            } else {
                z // head: linear logits
            };
            acts.push(a);
        }
        acts
    }

    /// Evaluate the network at one input.
    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<ForwardPass> {
        self.check_input(x)?;
        let acts = self.trace(x);
        let logits = acts[acts.len() - 1].clone();
        let features = acts[acts.len() - 2].clone();
        let probs = softmax(logits.view());
        Ok(ForwardPass {
            features,
            logits,
            probs,
        })
    }

    /// Predicted class: argmax of the softmax, ties toward the smaller index.
    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<usize> {
        let fwd = self.forward(x)?;
        Ok(argmax_first(fwd.logits.view()))
    }

    /// Cross-entropy loss `-log p(y | x)` computed in log space.
    pub fn loss(&self, x: ArrayView1<'_, f64>, y: usize) -> Result<f64> {
        self.check_label(y)?;
        self.check_input(x)?;
        let acts = self.trace(x);
        let logits = &acts[acts.len() - 1];
        Ok(log_sum_exp(logits.as_slice().unwrap()) - logits[y])
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.class_count {
            return Err(Error::invalid(format!(
                "label {y} out of range for {} classes",
                self.class_count
            )));
        }
        Ok(())
    }

    /// Exact gradients of the cross-entropy loss at `(x, y)` with respect to
    /// every parameter and the input.
    pub fn loss_gradients(&self, x: ArrayView1<'_, f64>, y: usize) -> Result<LossGradients> {
        self.check_label(y)?;
        self.check_input(x)?;
        let mut grads = LossGradients {
            weights: self
                .layer_weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            biases: self
                .layer_biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
            input: Array1::zeros(self.input_dim),
        };
        self.backprop_into(x, y, &mut grads.weights, &mut grads.biases, &mut grads.input);
        Ok(grads)
    }

    /// Gradient of the loss with respect to the input only.
    pub fn input_gradient(&self, x: ArrayView1<'_, f64>, y: usize) -> Result<Array1<f64>> {
        Ok(self.loss_gradients(x, y)?.input)
    }

    /// Backpropagate one sample, adding parameter gradients into the
    /// accumulators and overwriting `input_grad`. Returns the sample loss.
    fn backprop_into(
        &self,
        x: ArrayView1<'_, f64>,
        y: usize,
        acc_w: &mut [Array2<f64>],
        acc_b: &mut [Array1<f64>],
        input_grad: &mut Array1<f64>,
    ) -> f64 {
        let nl = self.layer_count();
        let acts = self.trace(x);
        let logits = &acts[nl];
        let lse = log_sum_exp(logits.as_slice().unwrap());
        let loss = lse - logits[y];

        // dL/dlogits = softmax(logits) - onehot(y)
        let mut dz: Array1<f64> = logits.mapv(|v| (v - lse).exp());
        dz[y] -= 1.0;

        for l in (0..nl).rev() {
            let a_prev = &acts[l];
            for (r, &dzr) in dz.iter().enumerate() {
                acc_w[l].row_mut(r).scaled_add(dzr, a_prev);
            }
            acc_b[l] += &dz;
            let da = self.layer_weights[l].t().dot(&dz);
            if l == 0 {
                *input_grad = da;
                break;
            }
            // Chain through the previous layer's activation.
            dz = if l - 1 == nl - 2 {
                // tanh': 1 - a^2
                let a = &acts[l];
                da.iter()
                    .zip(a.iter())
                    .map(|(&g, &v)| g * (1.0 - v * v))
                    .collect()
            } else {
                // ReLU': 1 where the activation is positive
                let a = &acts[l];
                da.iter()
                    .zip(a.iter())
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect()
            };
        }
        loss
    }

    /// Feature vectors for every row of an input matrix. Row `i` equals
    /// `forward(row i).features` exactly.
    pub fn extract_features(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.input_dim {
            return Err(Error::dims(format!(
                "input matrix has {} columns, model expects {}",
                inputs.ncols(),
                self.input_dim
            )));
        }
        let mut out = Array2::zeros((inputs.nrows(), self.feature_dim));
        for (i, row) in inputs.rows().into_iter().enumerate() {
            let acts = self.trace(row);
            out.row_mut(i).assign(&acts[acts.len() - 2]);
        }
        Ok(out)
    }

    /// Head logits for every row of an input matrix.
    pub fn logits_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.input_dim {
            return Err(Error::dims(format!(
                "input matrix has {} columns, model expects {}",
                inputs.ncols(),
                self.input_dim
            )));
        }
        let mut out = Array2::zeros((inputs.nrows(), self.class_count));
        for (i, row) in inputs.rows().into_iter().enumerate() {
            let acts = self.trace(row);
            out.row_mut(i).assign(&acts[acts.len() - 1]);
        }
        Ok(out)
    }

    /// Classify feature vectors with the final linear layer alone, skipping
    /// the hidden stack. Same tie rule as `predict`.
    pub fn classify_features(&self, features: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        if features.ncols() != self.feature_dim {
            return Err(Error::dims(format!(
                "feature matrix has {} columns, model expects {}",
                features.ncols(),
                self.feature_dim
            )));
        }
        let w = &self.layer_weights[self.layer_count() - 1];
        let b = &self.layer_biases[self.layer_count() - 1];
        Ok(features
            .rows()
            .into_iter()
            .map(|f| argmax_first((w.dot(&f) + b).view()))
            .collect())
    }

    /// Fraction of rows whose prediction matches the label.
    pub fn accuracy(&self, ds: &LabeledDataset) -> Result<f64> {
        if ds.is_empty() {
            return Err(Error::invalid("accuracy of an empty dataset"));
        }
        let mut hits = 0usize;
        for (row, &label) in ds.inputs.rows().into_iter().zip(&ds.labels) {
            if self.predict(row)? == label {
                hits += 1;
            }
        }
        Ok(hits as f64 / ds.len() as f64)
    }
}

fn argmax_first(v: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch SGD with classical momentum and L2 on weights. Mutates the
/// model in place; the config seed drives batch shuffling only.
pub fn train(
    m: &mut MlpClassifier,
    train_ds: &LabeledDataset,
    val_ds: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    for (name, ds) in [("train", train_ds), ("val", val_ds)] {
        if ds.is_empty() {
            return Err(Error::invalid(format!("{name} dataset is empty")));
        }
        if ds.dim() != m.input_dim {
            return Err(Error::dims(format!(
                "{name} dataset dim {} != model input_dim {}",
                ds.dim(),
                m.input_dim
            )));
        }
        if ds.class_count > m.class_count {
            return Err(Error::invalid(format!(
                "{name} dataset has {} classes, model has {}",
                ds.class_count, m.class_count
            )));
        }
    }

    let n = train_ds.len();
    let mut vel_w: Vec<Array2<f64>> = m
        .layer_weights
        .iter()
        .map(|w| Array2::zeros(w.raw_dim()))
        .collect();
    let mut vel_b: Vec<Array1<f64>> = m
        .layer_biases
        .iter()
        .map(|b| Array1::zeros(b.raw_dim()))
        .collect();
    let mut grad_w: Vec<Array2<f64>> = vel_w.clone();
    let mut grad_b: Vec<Array1<f64>> = vel_b.clone();
    let mut input_grad = Array1::zeros(m.input_dim);

    let mut rng = rng_from_seed(cfg.seed);
    let mut report = TrainReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        train_accuracy: Vec::with_capacity(cfg.epochs),
        val_accuracy: Vec::with_capacity(cfg.epochs),
    };
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for g in grad_w.iter_mut() {
                g.fill(0.0);
            }
            for g in grad_b.iter_mut() {
                g.fill(0.0);
            }
            for &i in batch {
                loss_sum += m.backprop_into(
                    train_ds.inputs.row(i),
                    train_ds.labels[i],
                    &mut grad_w,
                    &mut grad_b,
                    &mut input_grad,
                );
            }
            let inv = 1.0 / batch.len() as f64;
            for l in 0..m.layer_weights.len() {
                ndarray::azip!((v in &mut vel_w[l], &g in &grad_w[l], &w in &m.layer_weights[l]) {
                    *v = cfg.momentum * *v - cfg.learning_rate * (g * inv + cfg.l2_weight * w);
                });
                m.layer_weights[l] += &vel_w[l];
                ndarray::azip!((v in &mut vel_b[l], &g in &grad_b[l]) {
                    *v = cfg.momentum * *v - cfg.learning_rate * g * inv;
                });
                m.layer_biases[l] += &vel_b[l];
            }
        }
        report.train_loss.push(loss_sum / n as f64);
        report.train_accuracy.push(m.accuracy(train_ds)?);
        report.val_accuracy.push(m.accuracy(val_ds)?);
    }
    Ok(report)
}

// Serialized model layout. Weight arrays are row-major; serde_json prints
// f64 in shortest round-trip form, so save/load is bit-exact.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    input_dim: usize,
    hidden_sizes: Vec<usize>,
    feature_dim: usize,
    class_count: usize,
    hidden_activation: String,
    feature_activation: String,
    layer_shapes: Vec<[usize; 2]>,
    layer_weights: Vec<Vec<f64>>,
    layer_biases: Vec<Vec<f64>>,
}

impl MlpClassifier {
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            input_dim: self.input_dim,
            hidden_sizes: self.hidden_sizes.clone(),
            feature_dim: self.feature_dim,
            class_count: self.class_count,
            hidden_activation: "relu".to_string(),
            feature_activation: "tanh".to_string(),
            layer_shapes: self
                .layer_weights
                .iter()
                .map(|w| [w.nrows(), w.ncols()])
                .collect(),
            layer_weights: self
                .layer_weights
                .iter()
                .map(|w| w.iter().copied().collect())
                .collect(),
            layer_biases: self
                .layer_biases
                .iter()
                .map(|b| b.to_vec())
                .collect(),
        };
        serde_json::to_string_pretty(&file)
            .map_err(|e| Error::Numeric(format!("model not serializable: {e}")))
    }

    /// Parse and validate a serialized model. Rejects wrong versions,
    /// inconsistent shapes, and non-finite parameters.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            row: e.line(),
            message: e.to_string(),
        })?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format_version {}",
                file.format_version
            )));
        }
        if file.hidden_activation != "relu" || file.feature_activation != "tanh" {
            return Err(Error::invalid(format!(
                "unsupported activations ({}, {})",
                file.hidden_activation, file.feature_activation
            )));
        }
        if file.input_dim < 1 || file.feature_dim < 1 || file.class_count < 1 {
            return Err(Error::invalid("all layer sizes must be >= 1"));
        }
        if file.hidden_sizes.iter().any(|&h| h < 1) {
            return Err(Error::invalid("hidden layer sizes must be >= 1"));
        }
        let mut dims = Vec::with_capacity(file.hidden_sizes.len() + 3);
        dims.push(file.input_dim);
        dims.extend_from_slice(&file.hidden_sizes);
        dims.push(file.feature_dim);
        dims.push(file.class_count);
        let expected: Vec<[usize; 2]> = dims.windows(2).map(|w| [w[1], w[0]]).collect();
        if file.layer_shapes != expected {
            return Err(Error::dims(format!(
                "layer_shapes {:?} inconsistent with declared sizes (expected {:?})",
                file.layer_shapes, expected
            )));
        }
        if file.layer_weights.len() != expected.len() || file.layer_biases.len() != expected.len() {
            return Err(Error::dims("wrong number of weight or bias arrays"));
        }
        let mut layer_weights = Vec::with_capacity(expected.len());
        let mut layer_biases = Vec::with_capacity(expected.len());
        for (l, shape) in expected.iter().enumerate() {
            let flat = &file.layer_weights[l];
            if flat.len() != shape[0] * shape[1] {
                return Err(Error::dims(format!(
                    "layer {l} weight array has {} entries, expected {}",
                    flat.len(),
                    shape[0] * shape[1]
                )));
            }
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {l} has non-finite weights")));
            }
            layer_weights.push(
                Array2::from_shape_vec((shape[0], shape[1]), flat.clone()).expect("checked shape"),
            );
            let bias = &file.layer_biases[l];
            if bias.len() != shape[0] {
                return Err(Error::dims(format!(
                    "layer {l} bias has {} entries, expected {}",
                    bias.len(),
                    shape[0]
                )));
            }
            if bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {l} has non-finite biases")));
            }
            layer_biases.push(Array1::from_vec(bias.clone()));
        }
        Ok(MlpClassifier {
            layer_weights,
            layer_biases,
            input_dim: file.input_dim,
            hidden_sizes: file.hidden_sizes,
            feature_dim: file.feature_dim,
            class_count: file.class_count,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path.as_ref())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, BlobsConfig};
    use ndarray::{array, s};

    fn zeroed(m: &MlpClassifier) -> MlpClassifier {
        let mut z = m.clone();
        for w in z.layer_weights.iter_mut() {
            w.fill(0.0);
        }
        for b in z.layer_biases.iter_mut() {
            b.fill(0.0);
        }
        z
    }

    #[test]
    fn init_shapes() {
        let m = init_mlp(2, &[8], 4, 3, 1).unwrap();
        let shapes: Vec<_> = m.layer_weights.iter().map(|w| w.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![8, 2], vec![4, 8], vec![3, 4]]);
        assert!(m.layer_biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn init_deterministic() {
        assert_eq!(
            init_mlp(3, &[5, 4], 2, 2, 42).unwrap(),
            init_mlp(3, &[5, 4], 2, 2, 42).unwrap()
        );
    }

    #[test]
    fn init_rejects_zero_sizes() {
        assert!(init_mlp(0, &[4], 2, 2, 0).is_err());
        assert!(init_mlp(2, &[0], 2, 2, 0).is_err());
        assert!(init_mlp(2, &[4], 0, 2, 0).is_err());
    }

    #[test]
    fn zero_network_is_uniform() {
        let m = zeroed(&init_mlp(2, &[3], 4, 5, 0).unwrap());
        let fwd = m.forward(array![0.3, -0.7].view()).unwrap();
        assert!(fwd.features.iter().all(|&v| v == 0.0));
        assert!(fwd.logits.iter().all(|&v| v == 0.0));
        assert!(fwd.probs.iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax(array![0.0, 3.0f64.ln()].view());
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn probs_form_simplex_on_random_networks() {
        let mut rng = rng_from_seed(99);
        for trial in 0..1000 {
            let m = init_mlp(3, &[6], 4, 4, trial).unwrap();
            let x: Array1<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let fwd = m.forward(x.view()).unwrap();
            let sum: f64 = fwd.probs.sum();
            assert!((sum - 1.0).abs() < 1e-12, "trial {trial}: sum {sum}");
            assert!(fwd.probs.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn predict_ties_toward_smaller_index() {
        let m = zeroed(&init_mlp(2, &[3], 4, 2, 0).unwrap());
        assert_eq!(m.predict(array![1.0, 1.0].view()).unwrap(), 0);
    }

    #[test]
    fn predict_matches_probs_argmax() {
        let mut rng = rng_from_seed(5);
        for trial in 0..1000 {
            let m = init_mlp(2, &[5], 3, 3, trial + 10_000).unwrap();
            let x: Array1<f64> = (0..2).map(|_| rng.random_range(-5.0..5.0)).collect();
            let fwd = m.forward(x.view()).unwrap();
            // First-max oracle; exact prob ties must resolve the same way.
            let mut by_probs = 0;
            for (i, &p) in fwd.probs.iter().enumerate() {
                if p > fwd.probs[by_probs] {
                    by_probs = i;
                }
            }
            assert_eq!(m.predict(x.view()).unwrap(), by_probs);
        }
    }

    #[test]
    fn forward_rejects_wrong_dim() {
        let m = init_mlp(3, &[4], 2, 2, 0).unwrap();
        assert!(m.forward(array![1.0, 2.0].view()).is_err());
        assert!(m.predict(array![1.0].view()).is_err());
    }

    #[test]
    fn features_bounded_and_head_linear() {
        let m = init_mlp(4, &[7], 5, 3, 8).unwrap();
        let x = array![3.0, -2.0, 0.5, 9.0];
        let fwd = m.forward(x.view()).unwrap();
        assert!(fwd.features.iter().all(|&v| (-1.0..1.0).contains(&v)));
        // Features composed with the head reproduce the logits exactly.
        let recomputed = m.layer_weights.last().unwrap().dot(&fwd.features)
            + m.layer_biases.last().unwrap();
        assert_eq!(recomputed, fwd.logits);
    }

    #[test]
    fn extract_features_matches_forward() {
        let m = init_mlp(3, &[6], 4, 2, 3).unwrap();
        let ds = gen_blobs(&BlobsConfig::new(2, 10, 3, 1.0, 4)).unwrap();
        let batch = m.extract_features(ds.inputs.view()).unwrap();
        assert_eq!(batch.shape(), &[20, 4]);
        for (i, row) in ds.inputs.rows().into_iter().enumerate() {
            let single = m.forward(row).unwrap().features;
            assert_eq!(batch.row(i).to_owned(), single, "row {i}");
        }
        assert!(batch.iter().all(|&v| (-1.0..1.0).contains(&v)));
    }

    #[test]
    fn head_on_extracted_features_matches_predict() {
        let m = init_mlp(3, &[6], 4, 3, 9).unwrap();
        let ds = gen_blobs(&BlobsConfig::new(3, 8, 3, 1.2, 14)).unwrap();
        let feats = m.extract_features(ds.inputs.view()).unwrap();
        let via_head = m.classify_features(feats.view()).unwrap();
        for (i, row) in ds.inputs.rows().into_iter().enumerate() {
            assert_eq!(via_head[i], m.predict(row).unwrap(), "row {i}");
        }
        assert!(m.classify_features(feats.slice(s![.., ..2])).is_err());
    }

    #[test]
    fn input_gradient_zero_for_zero_network() {
        let m = zeroed(&init_mlp(3, &[4], 2, 2, 0).unwrap());
        let g = m.input_gradient(array![1.0, -2.0, 0.5].view(), 1).unwrap();
        assert_eq!(g.len(), 3);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_gradient_rejects_bad_label() {
        let m = init_mlp(2, &[3], 2, 2, 0).unwrap();
        assert!(m.input_gradient(array![0.0, 0.0].view(), 2).is_err());
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / f64::max(1e-6, f64::max(a.abs(), b.abs()))
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        // Oracle: central differences of the scalar loss, h = 1e-6.
        let mut rng = rng_from_seed(77);
        for trial in 0..20 {
            let m = init_mlp(2, &[8, 4], 4, 3, trial).unwrap();
            let x: Array1<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = (trial % 3) as usize;
            let grad = m.input_gradient(x.view(), y).unwrap();
            let h = 1e-6;
            for j in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd =
                    (m.loss(xp.view(), y).unwrap() - m.loss(xm.view(), y).unwrap()) / (2.0 * h);
                assert!(
                    rel_err(grad[j], fd) < 1e-4,
                    "trial {trial} coord {j}: analytic {} vs fd {fd}",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let m = init_mlp(3, &[5], 4, 3, 21).unwrap();
        let x = array![0.4, -1.2, 2.0];
        let y = 2;
        let grads = m.loss_gradients(x.view(), y).unwrap();
        let h = 1e-6;
        for l in 0..m.layer_weights.len() {
            for idx in 0..m.layer_weights[l].len() {
                let (r, c) = (idx / m.layer_weights[l].ncols(), idx % m.layer_weights[l].ncols());
                let mut mp = m.clone();
                let mut mm = m.clone();
                mp.layer_weights[l][[r, c]] += h;
                mm.layer_weights[l][[r, c]] -= h;
                let fd =
                    (mp.loss(x.view(), y).unwrap() - mm.loss(x.view(), y).unwrap()) / (2.0 * h);
                assert!(
                    rel_err(grads.weights[l][[r, c]], fd) < 1e-4,
                    "layer {l} weight ({r},{c})"
                );
            }
            for r in 0..m.layer_biases[l].len() {
                let mut mp = m.clone();
                let mut mm = m.clone();
                mp.layer_biases[l][r] += h;
                mm.layer_biases[l][r] -= h;
                let fd =
                    (mp.loss(x.view(), y).unwrap() - mm.loss(x.view(), y).unwrap()) / (2.0 * h);
                assert!(rel_err(grads.biases[l][r], fd) < 1e-4, "layer {l} bias {r}");
            }
        }
    }

    #[test]
    fn train_zero_epochs_is_noop() {
        let ds = gen_blobs(&BlobsConfig::new(2, 5, 2, 1.0, 1)).unwrap();
        let mut m = init_mlp(2, &[4], 3, 2, 2).unwrap();
        let before = m.clone();
        let report = train(
            &mut m,
            &ds,
            &ds,
            &TrainConfig {
                epochs: 0,
                batch_size: 4,
                learning_rate: 0.1,
                momentum: 0.9,
                l2_weight: 0.0,
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(m, before);
        assert!(report.train_loss.is_empty());
        assert!(report.train_accuracy.is_empty());
        assert!(report.val_accuracy.is_empty());
    }

    #[test]
    fn train_solves_separable_blobs() {
        // Means 4 * spread apart with spread 0.2: effectively separable.
        let ds = gen_blobs(&BlobsConfig::new(2, 50, 2, 0.2, 5).with_separation(20.0)).unwrap();
        let mut m = init_mlp(2, &[8], 4, 2, 6).unwrap();
        let report = train(
            &mut m,
            &ds,
            &ds,
            &TrainConfig {
                epochs: 50,
                batch_size: 10,
                learning_rate: 0.1,
                momentum: 0.9,
                l2_weight: 0.0,
                seed: 7,
            },
        )
        .unwrap();
        assert_eq!(report.train_accuracy.len(), 50);
        assert_eq!(*report.train_accuracy.last().unwrap(), 1.0);
    }

    #[test]
    fn first_epoch_loss_near_uniform_entropy() {
        // Small init weights and zero biases predict near-uniform over C=10.
        let mut rng = rng_from_seed(31);
        let inputs: Array2<f64> =
            Array2::from_shape_fn((200, 6), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..200).map(|_| rng.random_range(0..10)).collect();
        let ds = LabeledDataset::new(inputs, labels, (-1.0, 1.0), 10).unwrap();
        let mut m = init_mlp(6, &[16], 8, 10, 1).unwrap();
        let report = train(
            &mut m,
            &ds,
            &ds,
            &TrainConfig {
                epochs: 1,
                batch_size: 200,
                learning_rate: 1e-3,
                momentum: 0.0,
                l2_weight: 0.0,
                seed: 2,
            },
        )
        .unwrap();
        assert!(
            (report.train_loss[0] - 10.0f64.ln()).abs() < 0.05,
            "first epoch loss {}",
            report.train_loss[0]
        );
    }

    #[test]
    fn full_batch_loss_nonincreasing_at_small_lr() {
        let ds = gen_blobs(&BlobsConfig::new(3, 20, 2, 1.0, 9)).unwrap();
        let mut m = init_mlp(2, &[6], 4, 3, 10).unwrap();
        let report = train(
            &mut m,
            &ds,
            &ds,
            &TrainConfig {
                epochs: 10,
                batch_size: ds.len(),
                learning_rate: 1e-3,
                momentum: 0.0,
                l2_weight: 0.0,
                seed: 3,
            },
        )
        .unwrap();
        // Full-batch epoch loss is evaluated at pre-update parameters, so
        // the sequence tracks plain gradient descent.
        for w in report.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "loss increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn train_rejects_mismatched_data() {
        let ds2 = gen_blobs(&BlobsConfig::new(2, 5, 2, 1.0, 0)).unwrap();
        let ds3 = gen_blobs(&BlobsConfig::new(2, 5, 3, 1.0, 0)).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            learning_rate: 0.1,
            momentum: 0.0,
            l2_weight: 0.0,
            seed: 0,
        };
        let mut m = init_mlp(2, &[4], 3, 2, 2).unwrap();
        assert!(train(&mut m, &ds3, &ds2, &cfg).is_err());
        assert!(train(&mut m, &ds2, &ds3, &cfg).is_err());
        let mut bad = cfg.clone();
        bad.momentum = 1.0;
        assert!(train(&mut m, &ds2, &ds2, &bad).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut m = init_mlp(3, &[5, 4], 2, 3, 17).unwrap();
        // Give biases nontrivial values so the round trip exercises them.
        for b in m.layer_biases.iter_mut() {
            for v in b.iter_mut() {
                *v = 0.1234567890123456;
            }
        }
        let text = m.to_json().unwrap();
        let back = MlpClassifier::from_json(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn json_rejects_malformed_documents() {
        assert!(MlpClassifier::from_json("not json").is_err());
        assert!(MlpClassifier::from_json("{}").is_err());
        let m = init_mlp(2, &[3], 2, 2, 0).unwrap();
        let good = m.to_json().unwrap();
        let wrong_version = good.replace("\"format_version\": 1", "\"format_version\": 99");
        assert!(MlpClassifier::from_json(&wrong_version).is_err());
        let wrong_act = good.replace("relu", "gelu");
        assert!(MlpClassifier::from_json(&wrong_act).is_err());
    }
}
