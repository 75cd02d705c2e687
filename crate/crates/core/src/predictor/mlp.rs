use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of past samples the network sees.
pub const WINDOW: usize = 5;

/// `(outputs, inputs)` of each dense layer.
pub const LAYER_SHAPES: [(usize, usize); 3] = [(32, WINDOW), (16, 32), (1, 16)];

/// Dense layer `z = W x + b` with `W` stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            biases: vec![0.0; rows],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.cols + col]
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let w = &self.weights[r * self.cols..(r + 1) * self.cols];
            *o = self.biases[r] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn is_consistent(&self) -> bool {
        self.weights.len() == self.rows * self.cols && self.biases.len() == self.rows
    }
}

/// Per-feature affine maps taking raw windows and targets to zero mean and
/// unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub input_mean: [f64; WINDOW],
    pub input_scale: [f64; WINDOW],
    pub target_mean: f64,
    pub target_scale: f64,
}

impl Default for Standardizer {
    fn default() -> Self {
        Self {
            input_mean: [0.0; WINDOW],
            input_scale: [1.0; WINDOW],
            target_mean: 0.0,
            target_scale: 1.0,
        }
    }
}

fn mean_and_scale(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    // A constant feature carries no scale; leave it unscaled.
    let scale = if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 };
    (mean, scale)
}

impl Standardizer {
    pub fn fit(inputs: &[[f64; WINDOW]], targets: &[f64]) -> Result<Self> {
        if inputs.is_empty() || targets.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut s = Self::default();
        for j in 0..WINDOW {
            (s.input_mean[j], s.input_scale[j]) = mean_and_scale(inputs.iter().map(|x| x[j]));
        }
        (s.target_mean, s.target_scale) = mean_and_scale(targets.iter().copied());
        Ok(s)
    }

    pub fn standardize_input(&self, x: &[f64; WINDOW]) -> [f64; WINDOW] {
        std::array::from_fn(|j| (x[j] - self.input_mean[j]) / self.input_scale[j])
    }

    pub fn destandardize_input(&self, z: &[f64; WINDOW]) -> [f64; WINDOW] {
        std::array::from_fn(|j| z[j] * self.input_scale[j] + self.input_mean[j])
    }

    pub fn standardize_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_scale
    }

    pub fn destandardize_target(&self, z: f64) -> f64 {
        z * self.target_scale + self.target_mean
    }
}

/// Training outcome. MSE values are in raw current units.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_mse: Option<f64>,
    pub val_mse_history: Vec<f64>,
    pub best_val_mse: Option<f64>,
    pub test_mse: Option<f64>,
    pub test_r: Option<f64>,
    pub baseline_test_mse: Option<f64>,
}

/// The 5-32-16-1 ReLU network together with the standardisation it was trained under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Layer>,
    pub scaler: Standardizer,
    pub metadata: TrainingMetadata,
}

impl MlpModel {
    /// All weights and biases zero.
    pub fn zeros() -> Self {
        Self {
            layers: LAYER_SHAPES.iter().map(|&(r, c)| Layer::zeros(r, c)).collect(),
            scaler: Standardizer::default(),
            metadata: TrainingMetadata::default(),
        }
    }

    /// Weights uniform in `±√(6/(fan_in + fan_out))`, biases zero.
    pub fn initialize(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros();
        for layer in &mut model.layers {
            let limit = (6.0 / (layer.rows + layer.cols) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        model
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut Layer {
        &mut self.layers[index]
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter vector length");
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn validate_shapes(&self) -> Result<()> {
        if self.layers.len() != LAYER_SHAPES.len() {
            return Err(Error::Format(format!(
                "expected {} layers, found {}",
                LAYER_SHAPES.len(),
                self.layers.len()
            )));
        }
        for (i, (l, &shape)) in self.layers.iter().zip(&LAYER_SHAPES).enumerate() {
            if l.shape() != shape || !l.is_consistent() {
                return Err(Error::Format(format!(
                    "layer {i}: expected {}x{} weights and {} biases, found {}x{} with {} weights and {} biases",
                    shape.0,
                    shape.1,
                    shape.0,
                    l.rows,
                    l.cols,
                    l.weights.len(),
                    l.biases.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        model.validate_shapes()?;
        Ok(model)
    }

    fn activations(&self, x: &[f64; WINDOW]) -> Activations {
        let mut a = Activations::default();
        self.layers[0].apply(x, &mut a.z1);
        a.h1 = a.z1.map(relu);
        self.layers[1].apply(&a.h1, &mut a.z2);
        a.h2 = a.z2.map(relu);
        let mut y = [0.0];
        self.layers[2].apply(&a.h2, &mut y);
        a.y = y[0];
        a
    }
}

fn relu(z: f64) -> f64 {
    z.max(0.0)
}

/// ReLU slope, taken as 0 at exactly 0.
fn relu_slope(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

struct Activations {
    z1: [f64; 32],
    h1: [f64; 32],
    z2: [f64; 16],
    h2: [f64; 16],
    y: f64,
}

impl Default for Activations {
    fn default() -> Self {
        Self {
            z1: [0.0; 32],
            h1: [0.0; 32],
            z2: [0.0; 16],
            h2: [0.0; 16],
            y: 0.0,
        }
    }
}

/// Network output for an already standardised window.
pub fn forward(model: &MlpModel, x: &[f64; WINDOW]) -> f64 {
    model.activations(x).y
}

/// Mean squared error of the network on (standardised) inputs and targets.
pub fn loss_mse(model: &MlpModel, inputs: &[[f64; WINDOW]], targets: &[f64]) -> Result<f64> {
    if inputs.len() != targets.len() {
        return Err(Error::LengthMismatch(inputs.len(), targets.len()));
    }
    if inputs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = inputs
        .iter()
        .zip(targets)
        .map(|(x, y)| (forward(model, x) - y).powi(2))
        .sum();
    Ok(sum / inputs.len() as f64)
}

/// Gradient of [`loss_mse`] with respect to every weight and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    layers: Vec<Layer>,
}

impl Gradients {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Same ordering as [`MlpModel::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }
}

pub fn gradients(model: &MlpModel, inputs: &[[f64; WINDOW]], targets: &[f64]) -> Result<Gradients> {
    if inputs.len() != targets.len() {
        return Err(Error::LengthMismatch(inputs.len(), targets.len()));
    }
    if inputs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut g: Vec<Layer> = LAYER_SHAPES.iter().map(|&(r, c)| Layer::zeros(r, c)).collect();
    let scale = 2.0 / inputs.len() as f64;
    let (l2, l3) = (&model.layers[1], &model.layers[2]);

    for (x, &y) in inputs.iter().zip(targets) {
        let a = model.activations(x);
        let dy = scale * (a.y - y);

        g[2].biases[0] += dy;
        let mut d2 = [0.0; 16];
        for j in 0..16 {
            g[2].weights[j] += dy * a.h2[j];
            d2[j] = dy * l3.weights[j] * relu_slope(a.z2[j]);
        }

        let mut d1 = [0.0; 32];
        for (i, &di) in d2.iter().enumerate() {
            if di == 0.0 {
                continue;
            }
            g[1].biases[i] += di;
            let row = &mut g[1].weights[i * 32..(i + 1) * 32];
            for j in 0..32 {
                row[j] += di * a.h1[j];
                d1[j] += di * l2.weights[i * 32 + j];
            }
        }

        for (i, d) in d1.iter_mut().enumerate() {
            *d *= relu_slope(a.z1[i]);
            if *d == 0.0 {
                continue;
            }
            g[0].biases[i] += *d;
            for j in 0..WINDOW {
                g[0].weights[i * WINDOW + j] += *d * x[j];
            }
        }
    }
    Ok(Gradients { layers: g })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_batch(seed: u64, n: usize) -> (Vec<[f64; WINDOW]>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..n)
            .map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut rng)))
            .collect();
        let ys = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        (xs, ys)
    }

    /// Straightforward nested-loop evaluation, independent of `Layer::apply`.
    fn reference_forward(model: &MlpModel, x: &[f64]) -> f64 {
        let mut h = x.to_vec();
        for (k, l) in model.layers().iter().enumerate() {
            let (rows, cols) = l.shape();
            let mut next = vec![0.0; rows];
            for r in 0..rows {
                let mut acc = l.biases()[r];
                for c in 0..cols {
                    acc += l.weight(r, c) * h[c];
                }
                next[r] = if k < 2 && acc < 0.0 { 0.0 } else { acc };
            }
            h = next;
        }
        h[0]
    }

    #[test]
    fn shapes_are_fixed() {
        let m = MlpModel::initialize(1);
        let shapes: Vec<_> = m.layers().iter().map(Layer::shape).collect();
        assert_eq!(shapes, [(32, 5), (16, 32), (1, 16)]);
        assert_eq!(m.n_params(), 737);
    }

    #[test]
    fn initial_weights_respect_glorot_limits() {
        let m = MlpModel::initialize(2);
        for l in m.layers() {
            let (r, c) = l.shape();
            let lim = (6.0 / (r + c) as f64).sqrt();
            assert!(l.weights().iter().all(|w| w.abs() <= lim));
            assert!(l.biases().iter().all(|&b| b == 0.0));
        }
        assert_ne!(MlpModel::initialize(2), MlpModel::initialize(3));
        assert_eq!(MlpModel::initialize(2), MlpModel::initialize(2));
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = MlpModel::zeros();
        assert_eq!(forward(&m, &[1.0, -2.0, 3.0, 4.0, 5.0]), 0.0);
    }

    #[test]
    fn bias_only_model_outputs_its_bias() {
        let mut m = MlpModel::zeros();
        m.layer_mut(2).biases_mut()[0] = -0.75;
        assert_eq!(forward(&m, &[9.0, 1.0, 0.0, -3.0, 2.0]), -0.75);
    }

    #[test]
    fn forward_matches_reference_evaluation() {
        let m = MlpModel::initialize(4);
        let (xs, _) = random_batch(5, 50);
        for x in &xs {
            assert!((forward(&m, x) - reference_forward(&m, x)).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let zero = MlpModel::zeros();
        let xs = [[0.0; WINDOW]; 2];
        assert_eq!(loss_mse(&zero, &xs, &[1.0, -1.0]).unwrap(), 1.0);
        assert!(matches!(loss_mse(&zero, &[], &[]), Err(Error::EmptyBatch)));

        let m = MlpModel::initialize(6);
        let (xs, ys) = random_batch(7, 20);
        let own: Vec<f64> = xs.iter().map(|x| forward(&m, x)).collect();
        assert_eq!(loss_mse(&m, &xs, &own).unwrap(), 0.0);

        let brute = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (reference_forward(&m, x) - y).powi(2))
            .sum::<f64>()
            / 20.0;
        assert!((loss_mse(&m, &xs, &ys).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn zero_error_batch_has_zero_gradient() {
        let m = MlpModel::initialize(8);
        let (xs, _) = random_batch(9, 10);
        let own: Vec<f64> = xs.iter().map(|x| forward(&m, x)).collect();
        assert!(gradients(&m, &xs, &own).unwrap().flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn output_layer_gradient_matches_hand_formula() {
        // Only the output bias and one hidden path are live: ŷ = w·h + b.
        let mut m = MlpModel::zeros();
        m.layer_mut(0).biases_mut()[0] = 1.0;
        m.layer_mut(1).weights_mut()[0] = 1.0; // h2[0] = h1[0] = 1
        m.layer_mut(2).weights_mut()[0] = 0.5;
        m.layer_mut(2).biases_mut()[0] = 0.25;
        let x = [[0.3, -0.1, 0.2, 0.0, 0.4]];
        let y = [2.0];
        let g = gradients(&m, &x, &y).unwrap();
        let err = 0.75 - 2.0;
        assert!((g.layers()[2].weights()[0] - 2.0 * err * 1.0).abs() < 1e-15);
        assert!((g.layers()[2].biases()[0] - 2.0 * err).abs() < 1e-15);
        assert!(g.layers()[2].weights()[1..].iter().all(|&w| w == 0.0));
    }

    #[test]
    fn dead_units_pass_no_gradient() {
        // Pre-activation exactly 0: the subgradient is 0.
        let mut m = MlpModel::zeros();
        m.layer_mut(2).weights_mut().fill(1.0);
        m.layer_mut(1).weights_mut().fill(1.0);
        let g = gradients(&m, &[[1.0; WINDOW]], &[3.0]).unwrap();
        assert!(g.layers()[0].weights().iter().all(|&w| w == 0.0));
        assert!(g.layers()[1].weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn standardizer_round_trip() {
        let (xs, ys) = random_batch(10, 64);
        let s = Standardizer::fit(&xs, &ys).unwrap();
        for x in &xs {
            let back = s.destandardize_input(&s.standardize_input(x));
            for j in 0..WINDOW {
                assert!((back[j] - x[j]).abs() < 1e-12);
            }
        }
        for &y in &ys {
            assert!((s.destandardize_target(s.standardize_target(y)) - y).abs() < 1e-12);
        }
        let constant = Standardizer::fit(&[[2.0; WINDOW]; 3], &[4.0; 3]).unwrap();
        assert_eq!(constant.input_scale, [1.0; WINDOW]);
        assert_eq!(constant.target_scale, 1.0);
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let mut m = MlpModel::initialize(12);
        m.scaler.target_mean = 0.1 + 0.2;
        m.metadata.val_mse_history = vec![1.0 / 3.0, 2.0f64.sqrt()];
        m.metadata.test_r = Some(std::f64::consts::PI / 7.0);
        let back = MlpModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.params(), m.params());
    }

    #[test]
    fn malformed_model_files_rejected() {
        assert!(matches!(MlpModel::from_json("{"), Err(Error::Format(_))));
        let text = MlpModel::zeros().to_json().replacen("\"rows\": 32", "\"rows\": 31", 1);
        assert!(matches!(MlpModel::from_json(&text), Err(Error::Format(_))));
    }

    #[test]
    fn params_round_trip() {
        let a = MlpModel::initialize(13);
        let mut b = MlpModel::zeros();
        b.set_params(&a.params());
        assert_eq!(a.layers(), b.layers());
    }
}
