use super::mlp::WINDOW;
use super::HomodyneRecord;
use crate::{Error, Result};

/// Overlapping (window, next sample) pairs. Pairs before `split_index` form
/// the training half, the rest the test half.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowDataset {
    inputs: Vec<[f64; WINDOW]>,
    targets: Vec<f64>,
    split_index: usize,
}

/// Slides a five-sample window along the record: pair `i` is
/// `([s_i, …, s_{i+4}], s_{i+5})`. The first half of the pairs is for training.
pub fn build_dataset(record: &HomodyneRecord) -> Result<WindowDataset> {
    let s = record.samples();
    if s.len() < WINDOW + 1 {
        return Err(Error::RecordTooShort {
            len: s.len(),
            needed: WINDOW + 1,
        });
    }
    let inputs: Vec<[f64; WINDOW]> = s
        .windows(WINDOW)
        .take(s.len() - WINDOW)
        .map(|w| w.try_into().expect("window width"))
        .collect();
    let targets = s[WINDOW..].to_vec();
    let split_index = inputs.len() / 2;
    Ok(WindowDataset {
        inputs,
        targets,
        split_index,
    })
}

impl WindowDataset {
    pub fn new(inputs: Vec<[f64; WINDOW]>, targets: Vec<f64>, split_index: usize) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch(inputs.len(), targets.len()));
        }
        if split_index > inputs.len() {
            return Err(Error::param("split_index", "beyond the end of the dataset"));
        }
        Ok(Self {
            inputs,
            targets,
            split_index,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    pub fn inputs(&self) -> &[[f64; WINDOW]] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn train(&self) -> (&[[f64; WINDOW]], &[f64]) {
        (&self.inputs[..self.split_index], &self.targets[..self.split_index])
    }

    pub fn test(&self) -> (&[[f64; WINDOW]], &[f64]) {
        (&self.inputs[self.split_index..], &self.targets[self.split_index..])
    }

    /// Index inside the training half at which the validation tail begins.
    pub fn validation_start(&self, fraction: f64) -> usize {
        let n_val = (self.split_index as f64 * fraction).round() as usize;
        self.split_index - n_val.min(self.split_index)
    }
}
