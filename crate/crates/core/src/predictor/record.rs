use crate::{Error, Result};

/// Homodyne current sampled every `sample_period` µs. Sample `k` covers the
/// window ending at `(k+1)·sample_period`.
#[derive(Clone, Debug, PartialEq)]
pub struct HomodyneRecord {
    sample_period: f64,
    samples: Vec<f64>,
}

impl HomodyneRecord {
    pub fn new(sample_period: f64, samples: Vec<f64>) -> Result<Self> {
        if !(sample_period > 0.0) || !sample_period.is_finite() {
            return Err(Error::param(
                "sample_period",
                format!("must be > 0, got {sample_period}"),
            ));
        }
        if let Some(k) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::param("samples", format!("sample {k} is not finite")));
        }
        Ok(Self {
            sample_period,
            samples,
        })
    }

    /// Builds a record from time-stamped samples on a uniform grid.
    pub fn from_timed(times: &[f64], samples: Vec<f64>) -> Result<Self> {
        if times.len() != samples.len() {
            return Err(Error::LengthMismatch(times.len(), samples.len()));
        }
        if times.len() < 2 {
            return Err(Error::RecordTooShort {
                len: times.len(),
                needed: 2,
            });
        }
        let period = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        for (k, w) in times.windows(2).enumerate() {
            if ((w[1] - w[0]) - period).abs() > 1e-6 * period.abs() {
                return Err(Error::param(
                    "time_us",
                    format!("non-uniform spacing between rows {} and {}", k + 1, k + 2),
                ));
            }
        }
        Self::new(period, samples)
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.samples.len()).map(move |k| k as f64 * self.sample_period)
    }
}
