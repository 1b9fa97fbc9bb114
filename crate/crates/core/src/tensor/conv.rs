//! Causal convolution through zero-padded FFTs.
//!
//! Both operands are padded to the next power of two at or above `2L - 1`,
//! which makes the circular product equal the linear one on the first `L`
//! outputs. The gradient uses the adjoint of the convolution (a causal
//! correlation), evaluated with the same transforms.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::instrument;
use super::{Result, Tensor, TensorError};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plans(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    })
}

/// FFT length used for a causal convolution of length `l`.
pub fn fft_len(l: usize) -> usize {
    (2 * l.max(1) - 1).next_power_of_two()
}

/// Mult-adds charged for one channel of one sequence:
/// three transforms plus the pointwise product.
pub fn conv_mult_adds(l: usize) -> u64 {
    let n = fft_len(l) as u64;
    let log2 = n.trailing_zeros() as u64;
    3 * n * log2 + n
}

struct Transforms {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Transforms {
    fn new(l: usize) -> Self {
        let n = fft_len(l);
        let (fwd, inv) = plans(n);
        let len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        Transforms {
            n,
            fwd,
            inv,
            scratch: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    fn spectrum(&mut self, values: impl Iterator<Item = f64>) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        for (slot, v) in buf.iter_mut().zip(values) {
            slot.re = v;
        }
        self.fwd.process_with_scratch(&mut buf, &mut self.scratch);
        buf
    }

    /// Inverse transform, returning the real part of the first `l` samples.
    fn inverse_head(&mut self, mut buf: Vec<Complex64>, l: usize) -> Vec<f64> {
        self.inv.process_with_scratch(&mut buf, &mut self.scratch);
        let scale = 1.0 / self.n as f64;
        buf[..l].iter().map(|z| z.re * scale).collect()
    }
}

fn check_channels(u: &Tensor, k: &Tensor) -> Result<(usize, usize, usize)> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "causal_conv",
        lhs: u.shape().to_vec(),
        rhs: k.shape().to_vec(),
    };
    if u.ndim() != 3 || k.ndim() != 2 {
        return Err(mismatch());
    }
    let (b, l, h) = (u.shape()[0], u.shape()[1], u.shape()[2]);
    if k.shape() != [h, l] {
        return Err(mismatch());
    }
    Ok((b, l, h))
}

/// `y[b, t] = sum_{j <= t} k[j] * u[b, t - j]` for `u: [B, L]`, `k: [L]`.
pub fn fft_causal_conv(u: &Tensor, k: &Tensor) -> Result<Tensor> {
    if u.ndim() != 2 || k.ndim() != 1 || u.shape()[1] != k.shape()[0] {
        return Err(TensorError::ShapeMismatch {
            op: "fft_causal_conv",
            lhs: u.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let (b, l) = (u.shape()[0], u.shape()[1]);
    let y = causal_conv_channels(&u.reshape(&[b, l, 1])?, &k.reshape(&[1, l])?)?;
    y.reshape(&[b, l])
}

/// Channelwise causal convolution: `u: [B, L, H]` with per-channel kernels
/// `k: [H, L]`, returning `[B, L, H]`.
pub fn causal_conv_channels(u: &Tensor, k: &Tensor) -> Result<Tensor> {
    let (b, l, h) = check_channels(u, k)?;
    let mut out = vec![0.0; b * l * h];
    if b * l * h > 0 {
        let mut tf = Transforms::new(l);
        let ud = u.data();
        for c in 0..h {
            let kspec = tf.spectrum(k.data()[c * l..(c + 1) * l].iter().copied());
            for bi in 0..b {
                let mut spec = tf.spectrum((0..l).map(|t| ud[(bi * l + t) * h + c]));
                for (s, kk) in spec.iter_mut().zip(&kspec) {
                    *s *= kk;
                }
                let y = tf.inverse_head(spec, l);
                for (t, v) in y.into_iter().enumerate() {
                    out[(bi * l + t) * h + c] = v;
                }
            }
        }
        instrument::record(b as u64 * h as u64 * conv_mult_adds(l));
    }
    Tensor::new(vec![b, l, h], out)
}

/// Adjoint of [`causal_conv_channels`]: returns `(grad_u, grad_k)`.
pub(crate) fn causal_conv_channels_backward(
    u: &Tensor,
    k: &Tensor,
    grad: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (b, l, h) = check_channels(u, k)?;
    let mut gu = vec![0.0; b * l * h];
    let mut gk = vec![0.0; h * l];
    if b * l * h > 0 {
        let mut tf = Transforms::new(l);
        let (ud, gd) = (u.data(), grad.data());
        for c in 0..h {
            let kspec = tf.spectrum(k.data()[c * l..(c + 1) * l].iter().copied());
            let mut kacc = vec![Complex64::new(0.0, 0.0); tf.n];
            for bi in 0..b {
                let gspec = tf.spectrum((0..l).map(|t| gd[(bi * l + t) * h + c]));
                let uspec = tf.spectrum((0..l).map(|t| ud[(bi * l + t) * h + c]));
                let prod: Vec<Complex64> = gspec
                    .iter()
                    .zip(&kspec)
                    .map(|(g, kk)| g * kk.conj())
                    .collect();
                for (acc, (g, uu)) in kacc.iter_mut().zip(gspec.iter().zip(&uspec)) {
                    *acc += g * uu.conj();
                }
                let head = tf.inverse_head(prod, l);
                for (t, v) in head.into_iter().enumerate() {
                    gu[(bi * l + t) * h + c] = v;
                }
            }
            let head = tf.inverse_head(kacc, l);
            gk[c * l..(c + 1) * l].copy_from_slice(&head);
        }
    }
    Ok((
        Tensor::new(vec![b, l, h], gu)?,
        Tensor::new(vec![h, l], gk)?,
    ))
}
