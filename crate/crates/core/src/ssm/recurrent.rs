use nalgebra::DVector;

use super::scan::associative_scan;
use super::{DiscreteRepr, DiscreteSsm, Result, SsmError, Variant, C64};
use crate::tensor::{instrument, ComplexTensor, Tensor};

/// Hidden state carried between recurrent calls: `[B, H, M]` for per-channel
/// systems, `[B, M]` for S5.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmState {
    pub x: ComplexTensor,
}

/// Mult-adds of one recurrent pass over `l` steps of a single sequence:
/// state update plus readout.
pub fn recurrent_mult_adds(variant: Variant, modes: usize, channels: usize, l: usize) -> u64 {
    let (m, h, l) = (modes as u64, channels as u64, l as u64);
    match variant {
        Variant::S4d => 2 * l * h * m,
        Variant::S4 => l * h * (m * m + 2 * m),
        Variant::S5 => l * (2 * m * h + m),
    }
}

fn dims(d: &DiscreteSsm, u: &Tensor) -> Result<(usize, usize, usize)> {
    if u.ndim() != 3 {
        return Err(SsmError::Malformed(format!(
            "input must be [B, L, H], got {:?}",
            u.shape()
        )));
    }
    let (b, l, h) = (u.shape()[0], u.shape()[1], u.shape()[2]);
    if h != d.channels {
        return Err(SsmError::ChannelMismatch {
            expected: d.channels,
            got: h,
        });
    }
    Ok((b, l, h))
}

fn state_shape(d: &DiscreteSsm, b: usize) -> Vec<usize> {
    match d.repr {
        DiscreteRepr::Mimo { .. } => vec![b, d.modes],
        _ => vec![b, d.channels, d.modes],
    }
}

/// `Bbar u_t` for S5: `out[m] = sum_i bbar[m, i] u_t[i]`.
fn mimo_drive(bbar: &[C64], u_t: &[f64], m: usize) -> Vec<C64> {
    let h = u_t.len();
    (0..m)
        .map(|mi| (0..h).map(|i| bbar[mi * h + i] * u_t[i]).sum())
        .collect()
}

fn mimo_readout(c: &[C64], x: &[C64], d: &[f64], u_t: &[f64], s: f64, y_t: &mut [f64]) {
    let m = x.len();
    for (o, y) in y_t.iter_mut().enumerate() {
        let acc: C64 = (0..m).map(|mi| c[o * m + mi] * x[mi]).sum();
        *y = s * acc.re + d[o] * u_t[o];
    }
}

/// Step-by-step evaluation `x_t = Abar x_{t-1} + Bbar u_t`,
/// `y_t = s Re(C x_t) + D u_t`, starting from `x0` (zero when `None`).
/// Returns the outputs and the final state.
pub fn recurrent_forward(
    d: &DiscreteSsm,
    u: &Tensor,
    x0: Option<&SsmState>,
) -> Result<(Tensor, SsmState)> {
    let (b, l, h) = dims(d, u)?;
    let m = d.modes;
    let shape = state_shape(d, b);
    let mut state = match x0 {
        Some(s) if s.x.shape() != shape.as_slice() => {
            return Err(SsmError::Malformed(format!(
                "initial state shape {:?}, expected {:?}",
                s.x.shape(),
                shape
            )))
        }
        Some(s) => s.x.clone(),
        None => ComplexTensor::zeros(&shape),
    };
    let s = d.output_scale();
    let ud = u.data();
    let mut y = vec![0.0; b * l * h];
    match &d.repr {
        DiscreteRepr::Diagonal { abar, bbar, c } => {
            let xs = state.data_mut();
            for bi in 0..b {
                for t in 0..l {
                    for ch in 0..h {
                        let ut = ud[(bi * l + t) * h + ch];
                        let mut acc = C64::new(0.0, 0.0);
                        for mi in ch * m..(ch + 1) * m {
                            let x = &mut xs[bi * h * m + mi];
                            *x = abar[mi] * *x + bbar[mi] * ut;
                            acc += c[mi] * *x;
                        }
                        y[(bi * l + t) * h + ch] = s * acc.re + d.d[ch] * ut;
                    }
                }
            }
        }
        DiscreteRepr::Dense { abar, bbar, c } => {
            let xs = state.data_mut();
            for bi in 0..b {
                for ch in 0..h {
                    let off = (bi * h + ch) * m;
                    let mut x = DVector::from_column_slice(&xs[off..off + m]);
                    let cv = DVector::from_column_slice(&c[ch * m..(ch + 1) * m]);
                    for t in 0..l {
                        let ut = ud[(bi * l + t) * h + ch];
                        x = &abar[ch] * x + &bbar[ch] * C64::new(ut, 0.0);
                        y[(bi * l + t) * h + ch] = s * cv.dot(&x).re + d.d[ch] * ut;
                    }
                    xs[off..off + m].copy_from_slice(x.as_slice());
                }
            }
        }
        DiscreteRepr::Mimo { abar, bbar, c } => {
            let xs = state.data_mut();
            for bi in 0..b {
                let x = &mut xs[bi * m..(bi + 1) * m];
                for t in 0..l {
                    let row = (bi * l + t) * h;
                    let u_t = &ud[row..row + h];
                    let drive = mimo_drive(bbar, u_t, m);
                    for ((xm, z), bu) in x.iter_mut().zip(abar).zip(drive) {
                        *xm = z * *xm + bu;
                    }
                    mimo_readout(c, x, &d.d, u_t, s, &mut y[row..row + h]);
                }
            }
        }
    }
    instrument::record(b as u64 * recurrent_mult_adds(d.variant(), m, h, l));
    Ok((Tensor::new(vec![b, l, h], y)?, SsmState { x: state }))
}

/// S5 evaluation through [`associative_scan`] over `(Abar, Bbar u_t)` pairs,
/// one scan per mode, from a zero initial state.
pub fn s5_scan(d: &DiscreteSsm, u: &Tensor) -> Result<Tensor> {
    let DiscreteRepr::Mimo { abar, bbar, c } = &d.repr else {
        return Err(SsmError::NotMimo(d.variant()));
    };
    let (b, l, h) = dims(d, u)?;
    let m = d.modes;
    let s = d.output_scale();
    let ud = u.data();
    let mut y = vec![0.0; b * l * h];
    for bi in 0..b {
        let drives: Vec<Vec<C64>> = (0..l)
            .map(|t| {
                let row = (bi * l + t) * h;
                mimo_drive(bbar, &ud[row..row + h], m)
            })
            .collect();
        // states[t][m]
        let mut states = vec![vec![C64::new(0.0, 0.0); m]; l];
        for mi in 0..m {
            let elems: Vec<_> = drives.iter().map(|dr| (abar[mi], dr[mi])).collect();
            for (t, e) in associative_scan(&elems).into_iter().enumerate() {
                states[t][mi] = e.1;
            }
        }
        for (t, x) in states.iter().enumerate() {
            let row = (bi * l + t) * h;
            mimo_readout(c, x, &d.d, &ud[row..row + h], s, &mut y[row..row + h]);
        }
    }
    instrument::record(b as u64 * recurrent_mult_adds(Variant::S5, m, h, l));
    Ok(Tensor::new(vec![b, l, h], y)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_half() -> DiscreteSsm {
        DiscreteSsm::scalar(
            C64::new(0.5, 0.0),
            C64::new(1.0, 0.0),
            C64::new(1.0, 0.0),
            0.0,
        )
    }

    #[test]
    fn hand_iteration() {
        let u = Tensor::new(vec![1, 3, 1], vec![1.0, 0.0, 0.0]).unwrap();
        let (y, xt) = recurrent_forward(&scalar_half(), &u, None).unwrap();
        assert_eq!(y.data(), &[1.0, 0.5, 0.25]);
        assert_eq!(xt.x.data()[0], C64::new(0.25, 0.0));
    }

    #[test]
    fn zero_in_zero_out() {
        let u = Tensor::zeros(&[2, 5, 1]);
        let (y, xt) = recurrent_forward(&scalar_half(), &u, None).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
        assert!(xt.x.data().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn single_step_is_cb_plus_d() {
        let d = DiscreteSsm::scalar(
            C64::new(0.3, 0.2),
            C64::new(2.0, 1.0),
            C64::new(0.5, -1.0),
            0.25,
        );
        let u = Tensor::new(vec![1, 1, 1], vec![3.0]).unwrap();
        let (y, _) = recurrent_forward(&d, &u, None).unwrap();
        let want = (C64::new(0.5, -1.0) * C64::new(2.0, 1.0)).re * 3.0 + 0.25 * 3.0;
        assert!((y.data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn streaming_matches_single_call() {
        let d = scalar_half();
        let u = Tensor::new(vec![1, 4, 1], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let (full, _) = recurrent_forward(&d, &u, None).unwrap();
        let (a, st) = recurrent_forward(
            &d,
            &Tensor::new(vec![1, 2, 1], vec![1.0, -2.0]).unwrap(),
            None,
        )
        .unwrap();
        let (b, _) = recurrent_forward(
            &d,
            &Tensor::new(vec![1, 2, 1], vec![0.5, 3.0]).unwrap(),
            Some(&st),
        )
        .unwrap();
        assert_eq!(&full.data()[..2], a.data());
        assert_eq!(&full.data()[2..], b.data());
    }

    #[test]
    fn scan_rejects_siso() {
        let u = Tensor::zeros(&[1, 3, 1]);
        assert_eq!(
            s5_scan(&scalar_half(), &u).unwrap_err(),
            SsmError::NotMimo(Variant::S4d)
        );
    }
}
