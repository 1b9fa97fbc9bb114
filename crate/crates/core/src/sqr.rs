//! Pinball loss and the masked simultaneous-quantile objective.

use rand::Rng;
use thiserror::Error;

use crate::tensor::{CustomOp, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SqrError {
    #[error("quantile level {0} is outside (0, 1)")]
    Tau(f64),
    #[error("invalid quantile range [{lo}, {hi}]: need 0 < lo < hi < 1")]
    Range { lo: f64, hi: f64 },
    #[error("every entry of the batch is masked")]
    AllMasked,
    #[error("empirical quantile of an empty sample")]
    Empty,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, SqrError>;

/// A quantile level strictly inside (0, 1).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(QuantileLevel(tau))
        } else {
            Err(SqrError::Tau(tau))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// `tau (y - yhat)` when `y >= yhat`, else `(1 - tau)(yhat - y)`.
pub fn pinball(y: f64, yhat: f64, tau: QuantileLevel) -> f64 {
    pinball_raw(y, yhat, tau.0)
}

fn pinball_raw(y: f64, yhat: f64, tau: f64) -> f64 {
    if y >= yhat {
        tau * (y - yhat)
    } else {
        (1.0 - tau) * (yhat - y)
    }
}

/// Slope in `yhat`: `-tau` when underestimating, `1 - tau` otherwise
/// (including the kink `y == yhat`).
fn pinball_slope(y: f64, yhat: f64, tau: f64) -> f64 {
    if y > yhat {
        -tau
    } else {
        1.0 - tau
    }
}

/// Targets with a validity mask, both `[B, L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedTargets {
    pub y: Tensor,
    pub mask: Tensor,
}

impl MaskedTargets {
    pub fn new(y: Tensor, mask: Tensor) -> Result<Self> {
        if y.shape() != mask.shape() || y.ndim() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "masked_targets",
                lhs: y.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            }
            .into());
        }
        Ok(MaskedTargets { y, mask })
    }

    pub fn valid_count(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m != 0.0).count()
    }
}

struct MaskedPinball {
    grad: Tensor,
}

impl CustomOp for MaskedPinball {
    fn name(&self) -> &'static str {
        "masked_pinball"
    }

    fn backward(&self, g: &Tensor) -> crate::tensor::Result<Vec<Option<Tensor>>> {
        let s = g.item()?;
        Ok(vec![Some(self.grad.map(|v| v * s))])
    }
}

/// Mean pinball loss over entries with `mask != 0`, each row at its own
/// `taus[b]`. Masked entries are skipped entirely: they add nothing to the
/// value and receive exactly zero gradient.
pub fn masked_objective<'g>(
    targets: &MaskedTargets,
    yhat: Var<'g>,
    taus: &Tensor,
) -> Result<Var<'g>> {
    let shape = targets.y.shape();
    if yhat.shape() != shape {
        return Err(TensorError::ShapeMismatch {
            op: "masked_objective",
            lhs: yhat.shape(),
            rhs: shape.to_vec(),
        }
        .into());
    }
    let (b, l) = (shape[0], shape[1]);
    if taus.shape() != [b] {
        return Err(TensorError::ShapeMismatch {
            op: "masked_objective",
            lhs: taus.shape().to_vec(),
            rhs: vec![b],
        }
        .into());
    }
    for &t in taus.data() {
        QuantileLevel::new(t)?;
    }
    let count = targets.valid_count();
    if count == 0 {
        return Err(SqrError::AllMasked);
    }
    let inv = 1.0 / count as f64;
    let pred = yhat.value();
    let (y, m, p) = (targets.y.data(), targets.mask.data(), pred.data());
    let mut total = 0.0;
    let mut grad = vec![0.0; b * l];
    for row in 0..b {
        let tau = taus.data()[row];
        for k in row * l..(row + 1) * l {
            if m[k] != 0.0 {
                total += pinball_raw(y[k], p[k], tau);
                grad[k] = pinball_slope(y[k], p[k], tau) * inv;
            }
        }
    }
    let op = MaskedPinball {
        grad: Tensor::new(vec![b, l], grad)?,
    };
    Ok(yhat
        .graph()
        .custom(&[yhat], Tensor::scalar(total * inv), Box::new(op)))
}

/// `n` i.i.d. uniform draws from `[lo, hi]`.
pub fn sample_taus<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64, n: usize) -> Result<Tensor> {
    if !(lo > 0.0 && lo < hi && hi < 1.0) {
        return Err(SqrError::Range { lo, hi });
    }
    Ok(Tensor::from_vec(
        (0..n).map(|_| rng.random_range(lo..=hi)).collect(),
    ))
}

/// `inf { y : F(y) >= tau }` for the empirical CDF of `samples`: the smallest
/// sorted sample whose rank `k` (1-based) has `k / n >= tau`.
pub fn empirical_quantile(samples: &[f64], tau: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(SqrError::Empty);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = (1..=n).find(|&k| k as f64 / n as f64 >= tau).unwrap_or(n);
    Ok(sorted[k - 1])
}
