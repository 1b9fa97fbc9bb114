use serde::{Deserialize, Serialize};

use super::{load_dataset, train_on, Checkpoint, Result, TrainConfig, TrainError};
use crate::data::{aggregate_predictions, make_windows, RunToFailureCycle};
use crate::model::ModelError;
use crate::tensor::Tensor;

/// Which timesteps of a test cycle are scored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scoring {
    /// Every timestep; per-cycle RMSE averaged over cycles.
    #[default]
    Full,
    /// Final timestep of each cycle; RMSE over cycles.
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub taus: Vec<f64>,
    pub scoring: Scoring,
    /// Windows per forward pass.
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            taus: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            scoring: Scoring::Full,
            batch_size: 64,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.taus.is_empty() || self.taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(TrainError::Config(
                "eval taus must be nonempty and inside (0, 1)".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config(
                "eval batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub tau: f64,
    pub rmse: f64,
    /// Fraction of scored timesteps with target at or below the prediction.
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub rows: Vec<QuantileRow>,
}

/// Aggregated prediction signal of one test cycle, in cycles.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleSignal {
    pub unit_id: u32,
    pub rul: Vec<f64>,
    /// One signal per evaluated quantile level, in report order.
    pub preds: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileEvalReport {
    pub model: String,
    pub config_digest: String,
    pub scoring: Scoring,
    /// Mean over seeds.
    pub rows: Vec<QuantileRow>,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedResult>,
    pub param_count: usize,
    pub mult_adds: u64,
    /// Mean over seeds. Written separately as interval CSVs.
    #[serde(skip)]
    pub signals: Vec<CycleSignal>,
}

impl QuantileEvalReport {
    /// Row for `tau`, if evaluated.
    pub fn row(&self, tau: f64) -> Option<&QuantileRow> {
        self.rows.iter().find(|r| r.tau == tau)
    }

    /// Median-level RMSE (the row closest to 0.5).
    pub fn median_rmse(&self) -> f64 {
        self.rows
            .iter()
            .min_by(|a, b| (a.tau - 0.5).abs().total_cmp(&(b.tau - 0.5).abs()))
            .map_or(f64::NAN, |r| r.rmse)
    }
}

fn check_pair(y: &Tensor, yhat: &Tensor, mask: &Tensor) -> Result<()> {
    if y.shape() != yhat.shape() || y.shape() != mask.shape() {
        return Err(crate::tensor::TensorError::ShapeMismatch {
            op: "score",
            lhs: y.shape().to_vec(),
            rhs: yhat.shape().to_vec(),
        }
        .into());
    }
    Ok(())
}

/// Root mean squared error over entries with `mask != 0`.
pub fn rmse(y: &Tensor, yhat: &Tensor, mask: &Tensor) -> Result<f64> {
    check_pair(y, yhat, mask)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for ((a, b), m) in y.data().iter().zip(yhat.data()).zip(mask.data()) {
        if *m != 0.0 {
            sum += (a - b) * (a - b);
            n += 1;
        }
    }
    if n == 0 {
        return Err(TrainError::NoValid);
    }
    Ok((sum / n as f64).sqrt())
}

/// Fraction of entries with `mask != 0` whose target is at or below the
/// prediction.
pub fn coverage(preds: &Tensor, targets: &Tensor, mask: &Tensor) -> Result<f64> {
    check_pair(targets, preds, mask)?;
    let (mut hit, mut n) = (0usize, 0usize);
    for ((p, y), m) in preds.data().iter().zip(targets.data()).zip(mask.data()) {
        if *m != 0.0 {
            n += 1;
            hit += usize::from(y <= p);
        }
    }
    if n == 0 {
        return Err(TrainError::NoValid);
    }
    Ok(hit as f64 / n as f64)
}

/// Aggregated prediction signal for one cycle at one quantile level.
fn predict_cycle(
    ckpt: &Checkpoint,
    cycle: &RunToFailureCycle,
    tau: f64,
    batch: usize,
) -> Result<Vec<f64>> {
    let normed = ckpt.normalizer.apply(cycle)?;
    let l = ckpt.model.config().window_len;
    let windows = make_windows(&normed, l);
    let f = normed.num_features();
    let mut parts = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(batch) {
        let b = chunk.len();
        let x: Vec<f64> = chunk
            .iter()
            .flat_map(|w| w.x.data().iter().copied())
            .collect();
        let out = ckpt
            .model
            .predict(&Tensor::new(vec![b, l, f], x)?, &Tensor::full(&[b], tau))?;
        for (w, row) in chunk.iter().zip(out.data().chunks_exact(l)) {
            parts.push((
                w.offset,
                Tensor::from_vec(row.iter().map(|v| v * ckpt.target_scale).collect()),
            ));
        }
    }
    Ok(aggregate_predictions(&parts, cycle.len())?.into_vec())
}

/// Scores a checkpoint on test cycles at each quantile level.
pub fn evaluate(
    ckpt: &Checkpoint,
    test: &[RunToFailureCycle],
    opts: &EvalOptions,
) -> Result<QuantileEvalReport> {
    opts.validate()?;
    let f = ckpt.model.config().input_features;
    if let Some(c) = test.iter().find(|c| c.num_features() != f) {
        return Err(ModelError::FeatureMismatch {
            expected: f,
            got: c.num_features(),
        }
        .into());
    }
    if test.is_empty() {
        return Err(TrainError::NoValid);
    }
    let mut signals: Vec<CycleSignal> = test
        .iter()
        .map(|c| CycleSignal {
            unit_id: c.unit_id,
            rul: c.rul.to_vec(),
            preds: Vec::with_capacity(opts.taus.len()),
        })
        .collect();
    let mut rows = Vec::with_capacity(opts.taus.len());
    for (k, &tau) in opts.taus.iter().enumerate() {
        for (cycle, sig) in test.iter().zip(&mut signals) {
            sig.preds
                .push(predict_cycle(ckpt, cycle, tau, opts.batch_size)?);
        }
        rows.push(score(&signals, k, opts.scoring, tau)?);
    }
    let cfg = &ckpt.config;
    Ok(QuantileEvalReport {
        model: cfg.model.backbone.name().to_string(),
        config_digest: cfg.digest(),
        scoring: opts.scoring,
        rows: rows.clone(),
        seeds: vec![cfg.seed],
        per_seed: vec![SeedResult {
            seed: cfg.seed,
            rows,
        }],
        param_count: ckpt.model.count_params(),
        mult_adds: ckpt.model.count_mult_adds(cfg.model.window_len),
        signals,
    })
}

fn score(signals: &[CycleSignal], k: usize, scoring: Scoring, tau: f64) -> Result<QuantileRow> {
    match scoring {
        Scoring::Full => {
            let mut total = 0.0;
            let (mut hit, mut n) = (0.0, 0usize);
            for s in signals {
                let y = Tensor::from_vec(s.rul.clone());
                let p = Tensor::from_vec(s.preds[k].clone());
                let ones = Tensor::ones_like(&y);
                total += rmse(&y, &p, &ones)?;
                hit += coverage(&p, &y, &ones)? * y.numel() as f64;
                n += y.numel();
            }
            Ok(QuantileRow {
                tau,
                rmse: total / signals.len() as f64,
                coverage: hit / n as f64,
            })
        }
        Scoring::Last => {
            let last = |v: &Vec<f64>| *v.last().expect("cycles are nonempty");
            let y = Tensor::from_vec(signals.iter().map(|s| last(&s.rul)).collect());
            let p = Tensor::from_vec(signals.iter().map(|s| last(&s.preds[k])).collect());
            let ones = Tensor::ones_like(&y);
            Ok(QuantileRow {
                tau,
                rmse: rmse(&y, &p, &ones)?,
                coverage: coverage(&p, &y, &ones)?,
            })
        }
    }
}

/// Averages reports from different seeds of one configuration: RMSE,
/// coverage and prediction signals are means, per-seed rows are kept.
pub fn combine_reports(reports: &[QuantileEvalReport]) -> Result<QuantileEvalReport> {
    let first = reports.first().ok_or(TrainError::NoValid)?;
    let n = reports.len() as f64;
    let taus: Vec<f64> = first.rows.iter().map(|r| r.tau).collect();
    for r in reports {
        if r.rows.iter().map(|r| r.tau).collect::<Vec<_>>() != taus
            || r.signals.len() != first.signals.len()
        {
            return Err(TrainError::Config(
                "reports cover different quantiles or cycles".into(),
            ));
        }
    }
    let mean = |f: &dyn Fn(&QuantileEvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let rows = (0..taus.len())
        .map(|k| QuantileRow {
            tau: taus[k],
            rmse: mean(&|r| r.rows[k].rmse),
            coverage: mean(&|r| r.rows[k].coverage),
        })
        .collect();
    let signals = first
        .signals
        .iter()
        .enumerate()
        .map(|(c, s)| CycleSignal {
            unit_id: s.unit_id,
            rul: s.rul.clone(),
            preds: (0..s.preds.len())
                .map(|k| {
                    (0..s.preds[k].len())
                        .map(|t| mean(&|r| r.signals[c].preds[k][t]))
                        .collect()
                })
                .collect(),
        })
        .collect();
    Ok(QuantileEvalReport {
        rows,
        seeds: reports
            .iter()
            .flat_map(|r| r.seeds.iter().copied())
            .collect(),
        per_seed: reports
            .iter()
            .flat_map(|r| r.per_seed.iter().cloned())
            .collect(),
        signals,
        ..first.clone()
    })
}

/// Trains and evaluates once per seed, then averages.
pub fn run_seed_sweep(cfg: &TrainConfig, seeds: &[u64]) -> Result<QuantileEvalReport> {
    if seeds.is_empty() {
        return Err(TrainError::Config(
            "seed sweep needs at least one seed".into(),
        ));
    }
    let data = load_dataset(&cfg.data)?;
    let reports = seeds
        .iter()
        .map(|&seed| {
            let run = TrainConfig {
                seed,
                ..cfg.clone()
            };
            train_on(&run, &data)
                .and_then(|(ckpt, _)| evaluate(&ckpt, &data.test, &run.eval))
                .map_err(|e| TrainError::Seed {
                    seed,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    combine_reports(&reports)
}
