//! Run-to-failure data: C-MAPSS ingestion, linear RUL labels, feature
//! normalization, sliding windows, prediction aggregation and a synthetic
//! generator with known structure.

mod cache;
mod cmapss;
mod normalize;
mod synth;
mod window;

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub use cache::{read_cache, write_cache, WindowCache};
pub use cmapss::{
    attach_test_rul, parse_cmapss, parse_rul_file, write_cmapss, write_rul_file, CMAPSS_COLUMNS,
};
pub use normalize::Normalizer;
pub use synth::{synth_generate, SynthData, SynthSpec};
pub use window::{aggregate_predictions, make_windows, window_count, WindowedSample};

/// Features per row: 3 operating settings and 21 sensors.
pub const CMAPSS_FEATURES: usize = 24;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: expected {expected} columns, found {found}")]
    ColumnCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: cannot parse {token:?} as a number")]
    Number { line: usize, token: String },
    #[error("line {line}: cycle index {cycle} of unit {unit} does not increase")]
    NonMonotone { line: usize, unit: u32, cycle: u32 },
    #[error("RUL value {0} is negative")]
    NegativeRul(f64),
    #[error("RUL file lists {rul} units but the test file has {units}")]
    RulCount { rul: usize, units: usize },
    #[error("timestep {0} is covered by no window")]
    Uncovered(usize),
    #[error("window at offset {offset} lies outside a cycle of length {len}")]
    BadOffset { offset: usize, len: usize },
    #[error("feature count mismatch: expected {expected}, found {found}")]
    FeatureMismatch { expected: usize, found: usize },
    #[error("no training data")]
    Empty,
    #[error("bad cache file: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One unit's sensor history with its RUL signal.
#[derive(Clone, Debug, PartialEq)]
pub struct RunToFailureCycle {
    pub unit_id: u32,
    /// `[T, F]`
    pub features: Tensor,
    /// `[T]`, decreasing by exactly one per step.
    pub rul: Tensor,
    /// Test cycles that stop before failure.
    pub truncated: bool,
}

impl RunToFailureCycle {
    /// Training cycle with labels `T - 1 - t`.
    pub fn new(unit_id: u32, features: Tensor) -> Result<Self> {
        if features.ndim() != 2 {
            return Err(TensorError::Invalid {
                op: "RunToFailureCycle",
                msg: format!("features must be [T, F], got {:?}", features.shape()),
            }
            .into());
        }
        let t = features.shape()[0];
        let rul = Tensor::from_vec((0..t).rev().map(|v| v as f64).collect());
        Ok(RunToFailureCycle {
            unit_id,
            features,
            rul,
            truncated: false,
        })
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_features(&self) -> usize {
        self.features.shape()[1]
    }

    /// Caps labels at `cap` (piecewise-linear target). `cap <= 0` leaves
    /// them unchanged.
    pub fn with_rul_cap(mut self, cap: f64) -> Self {
        if cap > 0.0 {
            self.rul = self.rul.map(|v| v.min(cap));
        }
        self
    }
}
