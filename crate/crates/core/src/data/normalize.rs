use serde::{Deserialize, Serialize};

use super::{DataError, Result, RunToFailureCycle};
use crate::tensor::Tensor;

const STD_FLOOR: f64 = 1e-8;

/// Per-feature z-scoring fit on training cycles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, floored at 1e-8.
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(cycles: &[RunToFailureCycle]) -> Result<Self> {
        let f = cycles.first().ok_or(DataError::Empty)?.num_features();
        let mut n = 0usize;
        let mut mean = vec![0.0; f];
        for c in cycles {
            if c.num_features() != f {
                return Err(DataError::FeatureMismatch {
                    expected: f,
                    found: c.num_features(),
                });
            }
            for row in c.features.data().chunks_exact(f) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            n += c.len();
        }
        if n == 0 {
            return Err(DataError::Empty);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for c in cycles {
            for row in c.features.data().chunks_exact(f) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = var
            .iter()
            .map(|s| (s / n as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Normalizer { mean, std })
    }

    pub fn num_features(&self) -> usize {
        self.mean.len()
    }

    /// Features whose training spread is at the floor map to exactly zero.
    pub fn apply_tensor(&self, features: &Tensor) -> Result<Tensor> {
        let f = self.num_features();
        if features.ndim() != 2 || features.shape()[1] != f {
            return Err(DataError::FeatureMismatch {
                expected: f,
                found: features.shape().last().copied().unwrap_or(0),
            });
        }
        let mut out = features.to_vec();
        for row in out.chunks_exact_mut(f) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = if *s <= STD_FLOOR { 0.0 } else { (*v - m) / s };
            }
        }
        Ok(Tensor::new(features.shape().to_vec(), out)?)
    }

    pub fn apply(&self, cycle: &RunToFailureCycle) -> Result<RunToFailureCycle> {
        Ok(RunToFailureCycle {
            features: self.apply_tensor(&cycle.features)?,
            ..cycle.clone()
        })
    }
}
