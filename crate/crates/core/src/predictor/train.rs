use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::WindowDataset;
use super::mlp::{gradients, loss_mse, MlpModel, Standardizer, WINDOW};
use super::correlation_r;
use crate::{Error, Result};

/// Optimiser and early-stopping settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    /// Share of the training half held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            patience: 20,
            max_epochs: 2000,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param("learning_rate", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::param("beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::param("beta2", "must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::param("epsilon", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::param("max_epochs", "must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::param("validation_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], hp: &Hyperparams) {
        self.t += 1;
        let c1 = 1.0 - hp.beta1.powi(self.t);
        let c2 = 1.0 - hp.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = hp.beta1 * self.m[i] + (1.0 - hp.beta1) * grad[i];
            self.v[i] = hp.beta2 * self.v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= hp.learning_rate * m_hat / (v_hat.sqrt() + hp.epsilon);
        }
    }
}

/// De-standardised network prediction for a raw five-sample window.
pub fn predict_next(model: &MlpModel, window: &[f64; WINDOW]) -> f64 {
    let z = model.scaler.standardize_input(window);
    model.scaler.destandardize_target(super::mlp::forward(model, &z))
}

fn raw_mse(model: &MlpModel, inputs: &[[f64; WINDOW]], targets: &[f64]) -> f64 {
    inputs
        .iter()
        .zip(targets)
        .map(|(x, y)| (predict_next(model, x) - y).powi(2))
        .sum::<f64>()
        / inputs.len() as f64
}

/// MSE of predicting each target by the last sample of its window.
pub fn last_value_mse(inputs: &[[f64; WINDOW]], targets: &[f64]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(inputs
        .iter()
        .zip(targets)
        .map(|(x, y)| (x[WINDOW - 1] - y).powi(2))
        .sum::<f64>()
        / inputs.len() as f64)
}

/// Trains from freshly initialised weights seeded by `hp.seed`.
pub fn fit_predictor(dataset: &WindowDataset, hp: &Hyperparams) -> Result<MlpModel> {
    train(&MlpModel::initialize(hp.seed), dataset, hp)
}

/// Mini-batch Adam on the training half, minus a validation tail used for
/// early stopping. Inputs and targets are standardised with statistics of
/// the fitted portion only. Returns the snapshot with the lowest validation
/// MSE, with test-half metrics filled in when a test half exists.
pub fn train(model: &MlpModel, dataset: &WindowDataset, hp: &Hyperparams) -> Result<MlpModel> {
    hp.validate()?;
    let val_start = dataset.validation_start(hp.validation_fraction);
    let split = dataset.split_index();
    if val_start == 0 || val_start == split {
        return Err(Error::RecordTooShort {
            len: dataset.len() + WINDOW,
            needed: WINDOW + 4,
        });
    }
    let (inputs, targets) = (dataset.inputs(), dataset.targets());
    let scaler = Standardizer::fit(&inputs[..val_start], &targets[..val_start])?;
    let std_inputs: Vec<[f64; WINDOW]> = inputs[..split]
        .iter()
        .map(|x| scaler.standardize_input(x))
        .collect();
    let std_targets: Vec<f64> = targets[..split]
        .iter()
        .map(|&y| scaler.standardize_target(y))
        .collect();
    let (fit_x, val_x) = std_inputs.split_at(val_start);
    let (fit_y, val_y) = std_targets.split_at(val_start);
    let target_var = scaler.target_scale * scaler.target_scale;

    let mut current = model.clone();
    current.scaler = scaler;
    current.metadata = Default::default();
    let mut params = current.params();
    let mut adam = Adam::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..fit_x.len()).collect();
    let mut batch_x = Vec::with_capacity(hp.batch_size);
    let mut batch_y = Vec::with_capacity(hp.batch_size);

    let mut best = current.clone();
    let mut best_val = loss_mse(&current, val_x, val_y)? * target_var;
    let mut history = Vec::new();
    let mut since_best = 0;
    let mut epochs_run = 0;

    for epoch in 1..=hp.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hp.batch_size) {
            batch_x.clear();
            batch_y.clear();
            batch_x.extend(chunk.iter().map(|&i| fit_x[i]));
            batch_y.extend(chunk.iter().map(|&i| fit_y[i]));
            let grad = gradients(&current, &batch_x, &batch_y)?.flatten();
            adam.step(&mut params, &grad, hp);
            current.set_params(&params);
        }
        epochs_run = epoch;
        let val = loss_mse(&current, val_x, val_y)? * target_var;
        if !val.is_finite() || !current.is_finite() {
            best.metadata.epochs_run = epoch;
            best.metadata.val_mse_history = history;
            return Err(Error::TrainingDiverged {
                epoch,
                last_finite: Box::new(best),
            });
        }
        history.push(val);
        if val < best_val {
            best_val = val;
            best = current.clone();
            best.metadata.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hp.patience {
                break;
            }
        }
    }
    log::debug!("training stopped after {epochs_run} epochs, best validation MSE {best_val:.4e}");

    let (test_x, test_y) = dataset.test();
    let mut meta = std::mem::take(&mut best.metadata);
    meta.epochs_run = epochs_run;
    meta.val_mse_history = history;
    meta.best_val_mse = Some(best_val);
    meta.train_mse = Some(raw_mse(&best, &inputs[..val_start], &targets[..val_start]));
    if !test_x.is_empty() {
        meta.test_mse = Some(raw_mse(&best, test_x, test_y));
        meta.baseline_test_mse = Some(last_value_mse(test_x, test_y)?);
        let predicted: Vec<f64> = test_x.iter().map(|x| predict_next(&best, x)).collect();
        meta.test_r = match correlation_r(&predicted, test_y) {
            Ok(r) => Some(r),
            Err(Error::ZeroVariance | Error::LengthMismatch(..)) => None,
            Err(e) => return Err(e),
        };
    }
    best.metadata = meta;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{build_dataset, forward, HomodyneRecord};
    use rand_distr::{Distribution, StandardNormal};

    fn damped_oscillation(n: usize) -> HomodyneRecord {
        let samples = (0..n)
            .map(|k| {
                let t = k as f64;
                (-0.0005 * t).exp() * (0.3 * t).cos()
            })
            .collect();
        HomodyneRecord::new(1.0, samples).unwrap()
    }

    #[test]
    fn constant_target_is_learned() {
        let rec = HomodyneRecord::new(1.0, vec![0.7; 300]).unwrap();
        let ds = build_dataset(&rec).unwrap();
        let m = fit_predictor(&ds, &Hyperparams::default()).unwrap();
        assert!(m.metadata.train_mse.unwrap() < 1e-6);
        assert!((predict_next(&m, &[0.7; WINDOW]) - 0.7).abs() < 1e-3);
    }

    #[test]
    fn best_validation_never_increases() {
        let ds = build_dataset(&damped_oscillation(400)).unwrap();
        let hp = Hyperparams {
            max_epochs: 60,
            ..Hyperparams::default()
        };
        let m = fit_predictor(&ds, &hp).unwrap();
        let hist = &m.metadata.val_mse_history;
        let mut running = f64::INFINITY;
        for &v in hist {
            running = running.min(v);
        }
        assert_eq!(m.metadata.best_val_mse.unwrap(), running.min(m.metadata.best_val_mse.unwrap()));
        assert!(m.metadata.best_epoch <= m.metadata.epochs_run);
        assert_eq!(hist.len(), m.metadata.epochs_run);
    }

    #[test]
    fn predict_next_is_forward_of_standardized_window() {
        let ds = build_dataset(&damped_oscillation(200)).unwrap();
        let hp = Hyperparams {
            max_epochs: 5,
            ..Hyperparams::default()
        };
        let m = fit_predictor(&ds, &hp).unwrap();
        let w = ds.inputs()[17];
        let direct = m.scaler.destandardize_target(forward(&m, &m.scaler.standardize_input(&w)));
        assert_eq!(predict_next(&m, &w), direct);
    }

    #[test]
    fn white_noise_gives_no_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ds = build_dataset(&HomodyneRecord::new(1.0, samples).unwrap()).unwrap();
        let m = fit_predictor(&ds, &Hyperparams::default()).unwrap();
        let n_test = ds.len() - ds.split_index();
        if let Some(r) = m.metadata.test_r {
            assert!(r.abs() <= 3.0 / (n_test as f64).sqrt(), "r = {r}");
        }
    }

    #[test]
    fn too_short_training_half_rejected() {
        let ds = build_dataset(&HomodyneRecord::new(1.0, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap())
            .unwrap();
        assert!(fit_predictor(&ds, &Hyperparams::default()).is_err());
    }

    #[test]
    fn divergence_is_reported_with_finite_snapshot() {
        let ds = build_dataset(&damped_oscillation(300)).unwrap();
        let hp = Hyperparams {
            learning_rate: 1e300,
            ..Hyperparams::default()
        };
        match fit_predictor(&ds, &hp) {
            Err(Error::TrainingDiverged { epoch, last_finite }) => {
                assert!(epoch >= 1);
                assert!(last_finite.is_finite());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_hyperparams_rejected() {
        let ds = build_dataset(&damped_oscillation(300)).unwrap();
        for hp in [
            Hyperparams { batch_size: 0, ..Default::default() },
            Hyperparams { learning_rate: -1.0, ..Default::default() },
            Hyperparams { beta2: 1.0, ..Default::default() },
            Hyperparams { validation_fraction: 0.0, ..Default::default() },
        ] {
            assert!(matches!(fit_predictor(&ds, &hp), Err(Error::InvalidParameter { .. })));
        }
    }
}
