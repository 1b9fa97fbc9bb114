//! Seeded SQR training, checkpoints and quantile evaluation.

mod checkpoint;
mod eval;
mod optim;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{
    attach_test_rul, make_windows, parse_cmapss, parse_rul_file, synth_generate, DataError,
    Normalizer, RunToFailureCycle, SynthSpec, WindowedSample,
};
use crate::model::{build_model, ModelConfig, ModelError};
use crate::sqr::{masked_objective, sample_taus, MaskedTargets, SqrError};
use crate::tensor::{Graph, Tensor, TensorError};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use eval::{
    combine_reports, coverage, evaluate, rmse, run_seed_sweep, CycleSignal, EvalOptions,
    QuantileEvalReport, QuantileRow, Scoring, SeedResult,
};
pub use optim::{AdamW, OptimizerConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error("no valid entries to score")]
    NoValid,
    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    PathData {
        path: PathBuf,
        #[source]
        source: DataError,
    },
    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<TrainError>,
    },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sqr(#[from] SqrError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Where training and test cycles come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Synth(SynthSpec),
    /// C-MAPSS training file, test file and per-unit test RUL file.
    Cmapss {
        train: PathBuf,
        test: PathBuf,
        rul: PathBuf,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(SynthSpec::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// `model.seed` is replaced by `seed` when training.
    pub model: ModelConfig,
    pub data: DataSource,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub tau_range: [f64; 2],
    /// Drives initialization, shuffling, quantile sampling and dropout.
    pub seed: u64,
    /// Targets are divided by this during optimization; `0` means the
    /// largest training RUL.
    pub target_scale: f64,
    /// Piecewise-linear label cap; `0` disables it.
    pub rul_cap: f64,
    pub eval: EvalOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            data: DataSource::default(),
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            tau_range: [0.1, 0.9],
            seed: 0,
            target_scale: 0.0,
            rul_cap: 0.0,
            eval: EvalOptions::default(),
        }
    }
}

impl TrainConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        self.model.validate()?;
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.optimizer.ssm_learning_rate >= 0.0) || !(self.optimizer.weight_decay >= 0.0) {
            return bad("ssm_learning_rate and weight_decay must be nonnegative");
        }
        let [lo, hi] = self.tau_range;
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return bad("tau_range must satisfy 0 < lo < hi < 1");
        }
        if !(self.target_scale >= 0.0) || !(self.rul_cap >= 0.0) {
            return bad("target_scale and rul_cap must be nonnegative");
        }
        self.eval.validate()
    }

    /// Canonical JSON rendering; its SHA-256 is the config digest.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<RunToFailureCycle>,
    pub test: Vec<RunToFailureCycle>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| TrainError::Path {
            path: path.to_path_buf(),
            source,
        })
}

fn with_path<T>(path: &Path, r: std::result::Result<T, DataError>) -> Result<T> {
    r.map_err(|source| TrainError::PathData {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_dataset(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Synth(spec) => {
            let d = synth_generate(spec)?;
            Ok(Dataset {
                train: d.train,
                test: d.test,
            })
        }
        DataSource::Cmapss { train, test, rul } => {
            let tr = with_path(train, parse_cmapss(open(train)?))?;
            let te = with_path(test, parse_cmapss(open(test)?))?;
            let last = with_path(rul, parse_rul_file(open(rul)?))?;
            if last.len() != te.len() {
                return Err(TrainError::PathData {
                    path: rul.clone(),
                    source: DataError::RulCount {
                        rul: last.len(),
                        units: te.len(),
                    },
                });
            }
            let te = te
                .into_iter()
                .zip(last)
                .map(|(c, r)| attach_test_rul(c, r))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(Dataset {
                train: tr,
                test: te,
            })
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean masked pinball loss per epoch, in scaled target units.
    pub epoch_loss: Vec<f64>,
    pub steps: u64,
}

/// Loads the configured data and trains.
pub fn train(cfg: &TrainConfig) -> Result<(Checkpoint, TrainHistory)> {
    let data = load_dataset(&cfg.data)?;
    train_on(cfg, &data)
}

/// Random stream used for shuffling, quantile draws and dropout; model
/// initialization uses stream 0 of the same seed.
const TRAIN_STREAM: u64 = 1;

pub fn train_on(cfg: &TrainConfig, data: &Dataset) -> Result<(Checkpoint, TrainHistory)> {
    cfg.validate()?;
    let cycles: Vec<RunToFailureCycle> = data
        .train
        .iter()
        .map(|c| c.clone().with_rul_cap(cfg.rul_cap))
        .collect();
    let normalizer = Normalizer::fit(&cycles)?;
    if normalizer.num_features() != cfg.model.input_features {
        return Err(ModelError::FeatureMismatch {
            expected: cfg.model.input_features,
            got: normalizer.num_features(),
        }
        .into());
    }
    let target_scale = if cfg.target_scale > 0.0 {
        cfg.target_scale
    } else {
        cycles
            .iter()
            .flat_map(|c| c.rul.data().iter().copied())
            .fold(0.0, f64::max)
            .max(1.0)
    };
    let mut windows = Vec::new();
    for c in &cycles {
        windows.extend(make_windows(&normalizer.apply(c)?, cfg.model.window_len));
    }
    let mut model_cfg = cfg.model.clone();
    model_cfg.seed = cfg.seed;
    let mut model = build_model(&model_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TRAIN_STREAM);
    let mut opt = AdamW::new(cfg.optimizer.clone(), model.params());
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = TrainHistory::default();
    let [lo, hi] = cfg.tau_range;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, targets) = stack(&windows, chunk, target_scale)?;
            let taus = sample_taus(&mut rng, lo, hi, chunk.len())?;
            let g = Graph::new();
            let vars = model.params().bind(&g, true);
            let out = model.forward(&vars, g.constant(x), &taus, Some(&mut rng))?;
            let loss = masked_objective(&targets, out, &taus)?;
            let value = loss.value().item()?;
            if !value.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: bi });
            }
            let grads = g.backward(loss)?;
            let grads: Vec<Tensor> = vars
                .iter()
                .map(|v| {
                    grads
                        .get(v)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(&v.shape()))
                })
                .collect();
            opt.step(model.params_mut(), &grads).map_err(|e| match e {
                TrainError::Optimizer(_) => TrainError::NonFinite { epoch, batch: bi },
                e => e,
            })?;
            total += value;
            batches += 1;
        }
        history.epoch_loss.push(total / batches.max(1) as f64);
        log::debug!("epoch {epoch}: loss {:.6}", total / batches.max(1) as f64);
    }
    history.steps = opt.steps();
    let ckpt = Checkpoint {
        config: cfg.clone(),
        model,
        normalizer,
        target_scale,
        rng,
        steps: history.steps,
    };
    Ok((ckpt, history))
}

/// Stacks windows into `x: [B, L, F]` and scaled masked targets `[B, L]`.
fn stack(windows: &[WindowedSample], idx: &[usize], scale: f64) -> Result<(Tensor, MaskedTargets)> {
    let first = &windows[idx[0]];
    let (l, f) = (first.x.shape()[0], first.x.shape()[1]);
    let b = idx.len();
    let mut x = Vec::with_capacity(b * l * f);
    let mut y = Vec::with_capacity(b * l);
    let mut m = Vec::with_capacity(b * l);
    for &i in idx {
        let w = &windows[i];
        x.extend_from_slice(w.x.data());
        y.extend(w.y.data().iter().map(|v| v / scale));
        m.extend_from_slice(w.mask.data());
    }
    Ok((
        Tensor::new(vec![b, l, f], x)?,
        MaskedTargets::new(Tensor::new(vec![b, l], y)?, Tensor::new(vec![b, l], m)?)?,
    ))
}
