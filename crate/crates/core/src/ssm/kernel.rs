use nalgebra::DVector;

use super::{DiscreteRepr, DiscreteSsm, Result, SsmError, Variant, C64};
use crate::tensor::conv::causal_conv_channels;
use crate::tensor::{instrument, ops, Tensor};

/// Impulse response of a discrete system. SISO layouts give `[H, L]`;
/// S5 gives `[H_out, H_in, L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    k: Tensor,
}

impl ConvKernel {
    pub fn new(k: Tensor) -> Result<Self> {
        if !(k.ndim() == 2 || (k.ndim() == 3 && k.shape()[0] == k.shape()[1])) {
            return Err(SsmError::Malformed(format!("kernel shape {:?}", k.shape())));
        }
        Ok(ConvKernel { k })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.k
    }

    pub fn len(&self) -> usize {
        *self.k.shape().last().expect("kernel has rank 2 or 3")
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.k.shape()[0]
    }

    pub fn is_mimo(&self) -> bool {
        self.k.ndim() == 3
    }
}

/// Mult-adds charged for materializing a kernel of length `l`: one complex
/// multiply-accumulate per mode and tap for diagonal systems, a dense
/// `M x M` matrix-vector product per tap for S4, and one per mode, tap and
/// input-output pair for S5.
pub fn kernel_mult_adds(variant: Variant, modes: usize, channels: usize, l: usize) -> u64 {
    let (m, h, l) = (modes as u64, channels as u64, l as u64);
    match variant {
        Variant::S4d => h * m * l,
        Variant::S4 => h * m * m * l,
        Variant::S5 => h * h * m * l,
    }
}

/// `K[h][j] = s Re(C_h Abar_h^j Bbar_h)` for `j < l`, with `s` the output
/// scale of the system.
pub fn materialize_kernel(d: &DiscreteSsm, l: usize) -> Result<ConvKernel> {
    if l == 0 {
        return Err(SsmError::ZeroLength);
    }
    let (h, m, s) = (d.channels, d.modes, d.output_scale());
    let k = match &d.repr {
        DiscreteRepr::Diagonal { abar, bbar, c } => {
            let mut out = vec![0.0; h * l];
            for ch in 0..h {
                for mi in ch * m..(ch + 1) * m {
                    let mut w = c[mi] * bbar[mi];
                    for slot in &mut out[ch * l..(ch + 1) * l] {
                        *slot += s * w.re;
                        w *= abar[mi];
                    }
                }
            }
            Tensor::new(vec![h, l], out)?
        }
        DiscreteRepr::Dense { abar, bbar, c } => {
            let mut out = vec![0.0; h * l];
            for ch in 0..h {
                let cv = DVector::from_column_slice(&c[ch * m..(ch + 1) * m]);
                let mut v = bbar[ch].clone();
                for j in 0..l {
                    out[ch * l + j] = s * cv.dot(&v).re;
                    v = &abar[ch] * v;
                }
            }
            Tensor::new(vec![h, l], out)?
        }
        DiscreteRepr::Mimo { abar, bbar, c } => {
            let mut out = vec![0.0; h * h * l];
            let mut pw = vec![C64::new(1.0, 0.0); m];
            for j in 0..l {
                for o in 0..h {
                    for i in 0..h {
                        let acc: C64 = (0..m)
                            .map(|mi| c[o * m + mi] * pw[mi] * bbar[mi * h + i])
                            .sum();
                        out[(o * h + i) * l + j] = s * acc.re;
                    }
                }
                for (p, z) in pw.iter_mut().zip(abar) {
                    *p *= z;
                }
            }
            Tensor::new(vec![h, h, l], out)?
        }
    };
    instrument::record(kernel_mult_adds(d.variant(), m, h, l));
    ConvKernel::new(k)
}

fn check_input(k: &ConvKernel, u: &Tensor, d: &[f64]) -> Result<(usize, usize, usize)> {
    if u.ndim() != 3 {
        return Err(SsmError::Malformed(format!(
            "input must be [B, L, H], got {:?}",
            u.shape()
        )));
    }
    let (b, l, h) = (u.shape()[0], u.shape()[1], u.shape()[2]);
    if h != k.channels() {
        return Err(SsmError::ChannelMismatch {
            expected: k.channels(),
            got: h,
        });
    }
    if d.len() != h {
        return Err(SsmError::ChannelMismatch {
            expected: h,
            got: d.len(),
        });
    }
    if l != k.len() {
        return Err(SsmError::LengthMismatch {
            kernel: k.len(),
            seq: l,
        });
    }
    Ok((b, l, h))
}

/// Convolutional evaluation `y = K * u + D u` over `u: [B, L, H]`.
pub fn conv_forward(k: &ConvKernel, u: &Tensor, d: &[f64]) -> Result<Tensor> {
    let (b, l, h) = check_input(k, u, d)?;
    let mut y = if k.is_mimo() {
        let mut y = vec![0.0; b * l * h];
        for o in 0..h {
            let ko = ops::select(k.tensor(), 0, o)?;
            let part = causal_conv_channels(u, &ko)?;
            for (row, chunk) in part.data().chunks_exact(h).enumerate() {
                y[row * h + o] = chunk.iter().sum();
            }
        }
        y
    } else {
        causal_conv_channels(u, k.tensor())?.into_vec()
    };
    for (row, chunk) in u.data().chunks_exact(h).enumerate() {
        for (c, &x) in chunk.iter().enumerate() {
            y[row * h + c] += d[c] * x;
        }
    }
    Ok(Tensor::new(vec![b, l, h], y)?)
}
