use super::{DataError, Result, RunToFailureCycle};
use crate::tensor::Tensor;

/// A length-`L` slice of a cycle. Positions past the end of a short cycle
/// are zero in `x` and `y` and zero in `mask`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedSample {
    /// `[L, F]`
    pub x: Tensor,
    /// `[L]`
    pub y: Tensor,
    /// `[L]`, ones on real timesteps.
    pub mask: Tensor,
    pub unit_id: u32,
    pub offset: usize,
}

/// `max(T - L + 1, 1)`.
pub fn window_count(t: usize, l: usize) -> usize {
    if t > l {
        t - l + 1
    } else {
        1
    }
}

/// Stride-1 windows ordered by offset. A cycle no longer than `l` yields
/// a single tail-padded window.
///
/// # Panics
/// If `l == 0`.
pub fn make_windows(cycle: &RunToFailureCycle, l: usize) -> Vec<WindowedSample> {
    assert!(l >= 1, "window length must be positive");
    let t = cycle.len();
    let f = cycle.num_features();
    let feats = cycle.features.data();
    let rul = cycle.rul.data();
    (0..window_count(t, l))
        .map(|off| {
            let valid = l.min(t - off);
            let mut x = vec![0.0; l * f];
            x[..valid * f].copy_from_slice(&feats[off * f..(off + valid) * f]);
            let mut y = vec![0.0; l];
            y[..valid].copy_from_slice(&rul[off..off + valid]);
            let mut mask = vec![0.0; l];
            mask[..valid].fill(1.0);
            WindowedSample {
                x: Tensor::new(vec![l, f], x).expect("window shape"),
                y: Tensor::from_vec(y),
                mask: Tensor::from_vec(mask),
                unit_id: cycle.unit_id,
                offset: off,
            }
        })
        .collect()
}

/// Averages overlapping window predictions back onto a length-`t` signal.
/// Positions that fall past `t` (padding) are ignored.
pub fn aggregate_predictions(windows: &[(usize, Tensor)], t: usize) -> Result<Tensor> {
    // Running means: identical overlapping predictions come back bit-exact.
    let mut mean = vec![0.0; t];
    let mut count = vec![0usize; t];
    for (off, pred) in windows {
        if *off >= t.max(1) {
            return Err(DataError::BadOffset {
                offset: *off,
                len: t,
            });
        }
        for (i, &p) in pred.data().iter().enumerate() {
            let pos = off + i;
            if pos >= t {
                break;
            }
            count[pos] += 1;
            mean[pos] += (p - mean[pos]) / count[pos] as f64;
        }
    }
    if let Some(pos) = count.iter().position(|&c| c == 0) {
        return Err(DataError::Uncovered(pos));
    }
    Ok(Tensor::from_vec(mean))
}
