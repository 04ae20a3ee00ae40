//! Three-layer MLP regressor trained with Adam on squared error.
//!
//! The regressor maps concatenated (tau_low, tau_high, response) embeddings
//! to the lambda that produced the response. Layers are fully connected with
//! rectifier activations on the two hidden layers and a linear scalar output.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RegressionSample, TwinError};

const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

/// Training hyperparameters. Defaults follow the crate conventions: hidden
/// sizes (256, 64), 100 epochs of minibatch Adam at learning rate 0.001 with
/// moments (0.9, 0.999).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpHyper {
    pub hidden: (usize, usize),
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub seed: u64,
    pub minibatch: usize,
}

impl Default for MlpHyper {
    fn default() -> Self {
        Self {
            hidden: (256, 64),
            epochs: 100,
            learning_rate: 0.001,
            adam_betas: (0.9, 0.999),
            seed: 0,
            minibatch: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Layer {
    /// Row-major (out x in).
    weights: Vec<f64>,
    biases: Vec<f64>,
    inputs: usize,
    outputs: usize,
}

impl Layer {
    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.biases[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Layer>,
    pub activation: Activation,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// Gradients aligned with the model's layers.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_train_mse: f64,
    /// Mean squared error measured on the full training set after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl MlpModel {
    /// Xavier-uniform initialization seeded for reproducibility.
    pub fn init(input_dim: usize, hidden: (usize, usize), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = [input_dim, hidden.0, hidden.1, 1];
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = (6.0 / (inputs + outputs) as f64).sqrt();
                Layer {
                    weights: (0..inputs * outputs)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect(),
                    biases: vec![0.0; outputs],
                    inputs,
                    outputs,
                }
            })
            .collect();
        Self {
            layers,
            activation: Activation::Relu,
            metadata: serde_json::Value::Null,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    fn forward_trace(&self, features: &[f64]) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut activations = vec![features.to_vec()];
        let mut buffer = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(activations.last().unwrap(), &mut buffer);
            pre_activations.push(buffer.clone());
            let activated = if i + 1 < self.layers.len() {
                buffer.iter().map(|z| z.max(0.0)).collect()
            } else {
                buffer.clone()
            };
            activations.push(activated);
        }
        let output = activations.last().unwrap()[0];
        (output, pre_activations, activations)
    }

    pub fn predict(&self, features: &[f64]) -> Result<f64, TwinError> {
        if features.len() != self.input_dim() {
            return Err(TwinError::DimensionMismatch {
                expected: self.input_dim(),
                got: features.len(),
            });
        }
        Ok(self.forward_trace(features).0)
    }

    /// Mean squared error over a batch.
    pub fn batch_loss(&self, batch: &[(&[f64], f64)]) -> Result<f64, TwinError> {
        let mut total = 0.0;
        for (features, target) in batch {
            let err = self.predict(features)? - target;
            total += err * err;
        }
        Ok(total / batch.len().max(1) as f64)
    }

    /// Analytic gradients of the batch MSE by backpropagation.
    #[allow(clippy::needless_range_loop)]
    pub fn batch_gradients(&self, batch: &[(&[f64], f64)]) -> Result<MlpGradients, TwinError> {
        let mut grads = MlpGradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        };
        let scale = 1.0 / batch.len().max(1) as f64;
        for (features, target) in batch {
            if features.len() != self.input_dim() {
                return Err(TwinError::DimensionMismatch {
                    expected: self.input_dim(),
                    got: features.len(),
                });
            }
            let (output, pre_activations, activations) = self.forward_trace(features);
            // d(mse)/d(output) for one sample of the batch mean.
            let mut delta = vec![2.0 * (output - target) * scale];
            for (i, layer) in self.layers.iter().enumerate().rev() {
                let input = &activations[i];
                for o in 0..layer.outputs {
                    grads.biases[i][o] += delta[o];
                    let row = &mut grads.weights[i][o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, xi) in row.iter_mut().zip(input) {
                        *g += delta[o] * xi;
                    }
                }
                if i == 0 {
                    break;
                }
                let mut next_delta = vec![0.0; layer.inputs];
                for o in 0..layer.outputs {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (nd, w) in next_delta.iter_mut().zip(row) {
                        *nd += delta[o] * w;
                    }
                }
                // Rectifier gate on the previous layer's pre-activation.
                for (nd, z) in next_delta.iter_mut().zip(&pre_activations[i - 1]) {
                    if *z <= 0.0 {
                        *nd = 0.0;
                    }
                }
                delta = next_delta;
            }
        }
        Ok(grads)
    }

    /// Adds `delta` to one weight; used by finite-difference gradient
    /// checks.
    pub fn perturb_weight(&mut self, layer: usize, index: usize, delta: f64) {
        self.layers[layer].weights[index] += delta;
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_weight_count(&self, layer: usize) -> usize {
        self.layers[layer].weights.len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TwinError> {
        let file = ModelFile::from_model(self);
        std::fs::write(
            path.as_ref(),
            serde_json::to_string_pretty(&file).expect("model serializes"),
        )
        .map_err(|e| TwinError::ModelIo(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TwinError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| TwinError::ModelIo(format!("{}: {e}", path.as_ref().display())))?;
        let file: ModelFile = serde_json::from_str(&text)
            .map_err(|e| TwinError::ModelIo(format!("bad model file: {e}")))?;
        file.into_model()
    }
}

/// On-disk model format: layer sizes, flattened weights, activation name,
/// and training metadata.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
    metadata: serde_json::Value,
}

impl ModelFile {
    fn from_model(model: &MlpModel) -> Self {
        Self {
            layer_sizes: model.layer_sizes(),
            weights: model.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: model.layers.iter().map(|l| l.biases.clone()).collect(),
            activation: model.activation,
            metadata: model.metadata.clone(),
        }
    }

    fn into_model(self) -> Result<MlpModel, TwinError> {
        if self.layer_sizes.len() != self.weights.len() + 1
            || self.weights.len() != self.biases.len()
        {
            return Err(TwinError::ModelIo("inconsistent layer counts".into()));
        }
        let layers = self
            .layer_sizes
            .windows(2)
            .zip(self.weights)
            .zip(self.biases)
            .map(|((w, weights), biases)| {
                let (inputs, outputs) = (w[0], w[1]);
                if weights.len() != inputs * outputs || biases.len() != outputs {
                    return Err(TwinError::ModelIo(format!(
                        "layer {inputs}x{outputs} has {} weights and {} biases",
                        weights.len(),
                        biases.len()
                    )));
                }
                Ok(Layer {
                    weights,
                    biases,
                    inputs,
                    outputs,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MlpModel {
            layers,
            activation: self.activation,
            metadata: self.metadata,
        })
    }
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    fn new(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    fn update(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        lr: f64,
        betas: (f64, f64),
    ) {
        self.step += 1;
        let bias1 = 1.0 - betas.0.powi(self.step as i32);
        let bias2 = 1.0 - betas.1.powi(self.step as i32);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = betas.0 * m[i] + (1.0 - betas.0) * g;
                v[i] = betas.1 * v[i] + (1.0 - betas.1) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                param[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            }
        }
    }
}

/// Trains an MLP on the samples for exactly `hyper.epochs` full passes of
/// seeded, shuffled minibatch Adam. Deterministic for a fixed seed.
pub fn mlp_train(
    samples: &[RegressionSample],
    hyper: &MlpHyper,
) -> Result<(MlpModel, TrainReport), TwinError> {
    if samples.len() < 2 {
        return Err(TwinError::InsufficientSamples(samples.len()));
    }
    let dim = samples[0].features.len();
    for s in samples {
        if s.features.len() != dim {
            return Err(TwinError::InconsistentFeatures {
                expected: dim,
                got: s.features.len(),
            });
        }
    }
    let mut model = MlpModel::init(dim, hyper.hidden, hyper.seed);
    let shapes: Vec<usize> = model
        .layers
        .iter()
        .flat_map(|l| [l.weights.len(), l.biases.len()])
        .collect();
    let mut adam = AdamState::new(&shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(1));
    let batch_size = hyper.minibatch.max(1).min(samples.len());

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    for _ in 0..hyper.epochs {
        // Fisher-Yates shuffle of the sample order.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(batch_size) {
            let batch: Vec<(&[f64], f64)> = chunk
                .iter()
                .map(|&i| (samples[i].features.as_slice(), samples[i].target_lambda))
                .collect();
            let grads = model.batch_gradients(&batch)?;
            let mut params: Vec<&mut [f64]> = Vec::new();
            let mut grad_refs: Vec<&[f64]> = Vec::new();
            for (layer, (gw, gb)) in model
                .layers
                .iter_mut()
                .zip(grads.weights.iter().zip(grads.biases.iter()))
            {
                params.push(&mut layer.weights);
                grad_refs.push(gw);
                params.push(&mut layer.biases);
                grad_refs.push(gb);
            }
            adam.update(&mut params, &grad_refs, hyper.learning_rate, hyper.adam_betas);
        }
        let full: Vec<(&[f64], f64)> = samples
            .iter()
            .map(|s| (s.features.as_slice(), s.target_lambda))
            .collect();
        epoch_losses.push(model.batch_loss(&full)?);
    }
    let final_train_mse = *epoch_losses.last().expect("at least one epoch");
    model.metadata = serde_json::json!({
        "epochs": hyper.epochs,
        "learning_rate": hyper.learning_rate,
        "adam_betas": [hyper.adam_betas.0, hyper.adam_betas.1],
        "hidden": [hyper.hidden.0, hyper.hidden.1],
        "minibatch": batch_size,
        "seed": hyper.seed,
        "n_samples": samples.len(),
        "final_train_mse": final_train_mse,
    });
    Ok((
        model,
        TrainReport {
            final_train_mse,
            epoch_losses,
        },
    ))
}

/// Forward pass of a trained model.
pub fn mlp_predict(model: &MlpModel, features: &[f64]) -> Result<f64, TwinError> {
    model.predict(features)
}

/// Mean squared error of the model over a sample set.
pub fn mlp_mse(model: &MlpModel, samples: &[RegressionSample]) -> Result<f64, TwinError> {
    let batch: Vec<(&[f64], f64)> = samples
        .iter()
        .map(|s| (s.features.as_slice(), s.target_lambda))
        .collect();
    model.batch_loss(&batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(features: Vec<f64>, lambda: f64) -> RegressionSample {
        RegressionSample {
            features,
            target_lambda: lambda,
            spectrum: "test".into(),
            scenario: "test".into(),
            seed: 0,
        }
    }

    #[test]
    fn zero_weight_model_predicts_bias() {
        let mut model = MlpModel::init(3, (4, 4), 0);
        for layer in &mut model.layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        model.layers[2].biases[0] = 0.7;
        assert!((model.predict(&[1.0, -2.0, 3.0]).unwrap() - 0.7).abs() < 1e-15);
        assert!((model.predict(&[0.0, 0.0, 0.0]).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn predict_checks_dimension() {
        let model = MlpModel::init(4, (4, 4), 0);
        assert!(matches!(
            model.predict(&[1.0]),
            Err(TwinError::DimensionMismatch { expected: 4, got: 1 })
        ));
    }

    #[test]
    fn constant_target_converges() {
        let samples: Vec<RegressionSample> = (0..256)
            .map(|_| sample(vec![0.3, -0.2, 0.5, 0.1], 0.7))
            .collect();
        let (model, report) = mlp_train(&samples, &MlpHyper::default()).unwrap();
        let prediction = model.predict(&[0.3, -0.2, 0.5, 0.1]).unwrap();
        assert!(
            (prediction - 0.7).abs() <= 0.05,
            "prediction {prediction} not within 0.05 of 0.7"
        );
        assert!(report.final_train_mse < 0.01);
    }

    #[test]
    fn constant_target_loss_non_increasing() {
        let samples: Vec<RegressionSample> = (0..32)
            .map(|_| sample(vec![0.5, 0.5], 0.7))
            .collect();
        let hyper = MlpHyper {
            hidden: (16, 8),
            epochs: 40,
            ..MlpHyper::default()
        };
        let (_, report) = mlp_train(&samples, &hyper).unwrap();
        for pair in report.epoch_losses.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-12,
                "loss increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let samples: Vec<RegressionSample> = (0..20)
            .map(|i| sample(vec![i as f64 / 20.0, 1.0 - i as f64 / 20.0], i as f64 / 10.0))
            .collect();
        let hyper = MlpHyper {
            hidden: (8, 4),
            epochs: 10,
            ..MlpHyper::default()
        };
        let (m1, r1) = mlp_train(&samples, &hyper).unwrap();
        let (m2, r2) = mlp_train(&samples, &hyper).unwrap();
        assert_eq!(r1.epoch_losses, r2.epoch_losses);
        assert_eq!(
            m1.predict(&[0.25, 0.75]).unwrap(),
            m2.predict(&[0.25, 0.75]).unwrap()
        );
    }

    #[test]
    fn rejects_inconsistent_features() {
        let samples = vec![sample(vec![1.0, 2.0], 0.5), sample(vec![1.0], 0.5)];
        assert!(matches!(
            mlp_train(&samples, &MlpHyper::default()),
            Err(TwinError::InconsistentFeatures { .. })
        ));
    }

    #[test]
    fn rejects_tiny_sample_sets() {
        let samples = vec![sample(vec![1.0], 0.5)];
        assert!(matches!(
            mlp_train(&samples, &MlpHyper::default()),
            Err(TwinError::InsufficientSamples(1))
        ));
    }

    #[test]
    fn gradients_match_central_differences() {
        // Small model, smooth region: relative error against a central
        // difference with step 1e-5 must stay within 1e-4.
        let mut model = MlpModel::init(5, (6, 4), 42);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inputs: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let batch: Vec<(&[f64], f64)> = inputs
            .iter()
            .zip(&targets)
            .map(|(x, t)| (x.as_slice(), *t))
            .collect();
        let analytic = model.batch_gradients(&batch).unwrap();

        let h = 1e-5;
        let mut checked = 0;
        for layer_idx in 0..model.layers.len() {
            for w_idx in (0..model.layers[layer_idx].weights.len()).step_by(5) {
                let original = model.layers[layer_idx].weights[w_idx];
                model.layers[layer_idx].weights[w_idx] = original + h;
                let plus = model.batch_loss(&batch).unwrap();
                model.layers[layer_idx].weights[w_idx] = original - h;
                let minus = model.batch_loss(&batch).unwrap();
                model.layers[layer_idx].weights[w_idx] = original;
                let numeric = (plus - minus) / (2.0 * h);
                let bp = analytic.weights[layer_idx][w_idx];
                let denominator = numeric.abs().max(1e-8);
                assert!(
                    (bp - numeric).abs() / denominator < 1e-4,
                    "layer {layer_idx} weight {w_idx}: backprop {bp} vs numeric {numeric}"
                );
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let samples: Vec<RegressionSample> = (0..16)
            .map(|i| sample(vec![i as f64 / 16.0, 0.5], i as f64 / 8.0))
            .collect();
        let hyper = MlpHyper {
            hidden: (6, 3),
            epochs: 5,
            ..MlpHyper::default()
        };
        let (model, _) = mlp_train(&samples, &hyper).unwrap();
        model.save(&path).unwrap();
        let loaded = MlpModel::load(&path).unwrap();
        assert_eq!(loaded.layer_sizes(), model.layer_sizes());
        let x = vec![0.3, 0.5];
        assert_eq!(loaded.predict(&x).unwrap(), model.predict(&x).unwrap());
        assert_eq!(loaded.metadata["epochs"], serde_json::json!(5));
    }
}
