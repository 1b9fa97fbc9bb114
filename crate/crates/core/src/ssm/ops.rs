//! Graph operations for trainable SSM layers.
//!
//! Complex parameters enter as pairs of real tensors. The diagonal is
//! parameterized as `lambda = -exp(log_neg_re) + i im`, which keeps every
//! mode stable under any update, and the step size as `dt = exp(log_dt)`.
//!
//! Backward passes use the convention `g = dL/dRe + i dL/dIm` for a complex
//! intermediate. For a holomorphic `w = f(z)` this gives
//! `g_z = g_w conj(f'(z))`, and for a real input `r`,
//! `dL/dr = Re(conj(g_w) dw/dr)`.

use nalgebra::{DMatrix, DVector};

use super::discretize::dplr_bilinear;
use super::kernel::kernel_mult_adds;
use super::recurrent::recurrent_mult_adds;
use super::scan::associative_scan;
use super::{mode_step, Discretization, ModeStep, Result, SsmError, Variant, C64};
use crate::tensor::{instrument, CustomOp, Tensor, TensorError, Var};

/// Trainable parameters of one SSM layer as graph variables.
///
/// Shapes: SISO layouts use `[H, M]` for the spectrum, `p`, `b` and `c`,
/// and `[H]` for `log_dt`. S5 uses `[M]` for the spectrum, `[M, H]` for
/// `b`, `[H, M]` for `c` and `[1]` for `log_dt`.
#[derive(Clone, Copy, Debug)]
pub struct SsmVars<'g> {
    pub log_neg_re: Var<'g>,
    pub im: Var<'g>,
    pub p: Option<(Var<'g>, Var<'g>)>,
    pub b: (Var<'g>, Var<'g>),
    pub c: (Var<'g>, Var<'g>),
    pub log_dt: Var<'g>,
}

fn complex_of(re: &Tensor, im: &Tensor) -> Result<Vec<C64>> {
    if re.shape() != im.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "complex parameter",
            lhs: re.shape().to_vec(),
            rhs: im.shape().to_vec(),
        }
        .into());
    }
    Ok(re
        .data()
        .iter()
        .zip(im.data())
        .map(|(&a, &b)| C64::new(a, b))
        .collect())
}

/// `(lambda, exp(log_neg_re))`.
fn spectrum(log_neg_re: &Tensor, im: &Tensor) -> Result<(Vec<C64>, Vec<f64>)> {
    let neg: Vec<f64> = log_neg_re.data().iter().map(|v| v.exp()).collect();
    let lam = complex_of(&log_neg_re.map(|v| -v.exp()), im)?;
    Ok((lam, neg))
}

fn split(g: &[C64], shape: &[usize]) -> Result<(Tensor, Tensor)> {
    Ok((
        Tensor::new(shape.to_vec(), g.iter().map(|z| z.re).collect())?,
        Tensor::new(shape.to_vec(), g.iter().map(|z| z.im).collect())?,
    ))
}

fn lambda_grads(g: &[C64], neg: &[f64], shape: &[usize]) -> Result<(Tensor, Tensor)> {
    Ok((
        Tensor::new(
            shape.to_vec(),
            g.iter().zip(neg).map(|(z, n)| -z.re * n).collect(),
        )?,
        Tensor::new(shape.to_vec(), g.iter().map(|z| z.im).collect())?,
    ))
}

fn expect_shape(name: &str, t: &Tensor, want: &[usize]) -> Result<()> {
    if t.shape() == want {
        Ok(())
    } else {
        Err(SsmError::Malformed(format!(
            "{name} has shape {:?}, expected {want:?}",
            t.shape()
        )))
    }
}

/// Channel count and mode count of a SISO parameter set.
fn siso_dims(v: &SsmVars<'_>) -> Result<(usize, usize)> {
    let s = v.log_neg_re.shape();
    if s.len() != 2 {
        return Err(SsmError::Malformed(format!(
            "spectrum must be [H, M], got {s:?}"
        )));
    }
    let (h, m) = (s[0], s[1]);
    expect_shape("im", &v.im.value(), &[h, m])?;
    for (name, (re, im)) in [("b", v.b), ("c", v.c)]
        .into_iter()
        .chain(v.p.map(|p| ("p", p)))
    {
        expect_shape(name, &re.value(), &[h, m])?;
        expect_shape(name, &im.value(), &[h, m])?;
    }
    expect_shape("log_dt", &v.log_dt.value(), &[h])?;
    Ok((h, m))
}

struct DiagKernel {
    h: usize,
    m: usize,
    l: usize,
    scale: f64,
    neg: Vec<f64>,
    b: Vec<C64>,
    c: Vec<C64>,
    dt: Vec<f64>,
    steps: Vec<ModeStep>,
}

/// S4D kernel `K[h, j] = s Re sum_m c b f z^j` with `z`, `f` from the
/// chosen discretization. Returns `[H, L]`.
pub fn diagonal_kernel<'g>(
    v: &SsmVars<'g>,
    l: usize,
    method: Discretization,
    scale: f64,
) -> Result<Var<'g>> {
    if l == 0 {
        return Err(SsmError::ZeroLength);
    }
    let (h, m) = siso_dims(v)?;
    let (lam, neg) = spectrum(&v.log_neg_re.value(), &v.im.value())?;
    let b = complex_of(&v.b.0.value(), &v.b.1.value())?;
    let c = complex_of(&v.c.0.value(), &v.c.1.value())?;
    let dt: Vec<f64> = v.log_dt.value().data().iter().map(|x| x.exp()).collect();
    let mut steps = Vec::with_capacity(h * m);
    let mut k = vec![0.0; h * l];
    for ch in 0..h {
        for mi in ch * m..(ch + 1) * m {
            let st = mode_step(lam[mi], dt[ch], method)?;
            let mut w = c[mi] * st.f * b[mi];
            for slot in &mut k[ch * l..(ch + 1) * l] {
                *slot += scale * w.re;
                w *= st.z;
            }
            steps.push(st);
        }
    }
    instrument::record(kernel_mult_adds(Variant::S4d, m, h, l));
    let op = DiagKernel {
        h,
        m,
        l,
        scale,
        neg,
        b,
        c,
        dt,
        steps,
    };
    let out = Tensor::new(vec![h, l], k)?;
    let inputs = [v.log_neg_re, v.im, v.b.0, v.b.1, v.c.0, v.c.1, v.log_dt];
    Ok(v.log_dt.graph().custom(&inputs, out, Box::new(op)))
}

impl CustomOp for DiagKernel {
    fn name(&self) -> &'static str {
        "diagonal_kernel"
    }

    fn backward(&self, grad: &Tensor) -> crate::tensor::Result<Vec<Option<Tensor>>> {
        let (h, m, l, s) = (self.h, self.m, self.l, self.scale);
        let g = grad.data();
        let mut g_lam = vec![C64::new(0.0, 0.0); h * m];
        let mut g_b = g_lam.clone();
        let mut g_c = g_lam.clone();
        let mut g_dt = vec![0.0; h];
        for ch in 0..h {
            let gk = &g[ch * l..(ch + 1) * l];
            for mi in ch * m..(ch + 1) * m {
                let st = &self.steps[mi];
                // s0 = sum_j G_j z^j, s1 = sum_j j G_j z^(j-1)
                let (mut s0, mut s1) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
                let mut prev = C64::new(0.0, 0.0);
                let mut pw = C64::new(1.0, 0.0);
                for (j, &gj) in gk.iter().enumerate() {
                    s0 += gj * pw;
                    if j > 0 {
                        s1 += (j as f64 * gj) * prev;
                    }
                    prev = pw;
                    pw *= st.z;
                }
                let (b, c) = (self.b[mi], self.c[mi]);
                let w = c * st.f * b;
                let g_w = s * s0.conj();
                let g_z = s * (w * s1).conj();
                g_c[mi] = g_w * (st.f * b).conj();
                g_b[mi] = g_w * (c * st.f).conj();
                let g_f = g_w * (c * b).conj();
                g_lam[mi] = g_z * st.dz_dl.conj() + g_f * st.df_dl.conj();
                g_dt[ch] += (g_z.conj() * st.dz_ddt + g_f.conj() * st.df_ddt).re;
            }
        }
        let shape = [h, m];
        let (g_lnr, g_im) = lambda_grads(&g_lam, &self.neg, &shape).map_err(internal)?;
        let (g_bre, g_bim) = split(&g_b, &shape).map_err(internal)?;
        let (g_cre, g_cim) = split(&g_c, &shape).map_err(internal)?;
        let g_logdt = Tensor::from_vec(g_dt.iter().zip(&self.dt).map(|(g, d)| g * d).collect());
        Ok([g_lnr, g_im, g_bre, g_bim, g_cre, g_cim, g_logdt]
            .into_iter()
            .map(Some)
            .collect())
    }
}

fn internal(e: SsmError) -> TensorError {
    match e {
        SsmError::Tensor(t) => t,
        other => TensorError::Internal(other.to_string()),
    }
}

struct DplrChannel {
    a: DMatrix<C64>,
    minv: DMatrix<C64>,
    abar: DMatrix<C64>,
    p: DVector<C64>,
    b: DVector<C64>,
    c: DVector<C64>,
    dt: f64,
    /// `v_j = Abar^j Bbar` for `j < L`.
    powers: Vec<DVector<C64>>,
}

struct DplrKernel {
    h: usize,
    m: usize,
    l: usize,
    scale: f64,
    neg: Vec<f64>,
    chans: Vec<DplrChannel>,
}

/// S4 kernel for `A = diag(lambda) - p p^H`, bilinear discretization, by
/// dense power iteration: `K[h, j] = s Re(c^T Abar^j Bbar)`. Returns `[H, L]`.
pub fn dplr_kernel<'g>(v: &SsmVars<'g>, l: usize, scale: f64) -> Result<Var<'g>> {
    if l == 0 {
        return Err(SsmError::ZeroLength);
    }
    let (h, m) = siso_dims(v)?;
    let (p_re, p_im) =
        v.p.ok_or_else(|| SsmError::Malformed("S4 kernel needs the low-rank vector".into()))?;
    let (lam, neg) = spectrum(&v.log_neg_re.value(), &v.im.value())?;
    let p = complex_of(&p_re.value(), &p_im.value())?;
    let b = complex_of(&v.b.0.value(), &v.b.1.value())?;
    let c = complex_of(&v.c.0.value(), &v.c.1.value())?;
    let mut k = vec![0.0; h * l];
    let mut chans = Vec::with_capacity(h);
    for ch in 0..h {
        let r = ch * m..(ch + 1) * m;
        let dt = v.log_dt.value().data()[ch].exp();
        let (abar, bbar, minv) = dplr_bilinear(&lam[r.clone()], &p[r.clone()], &b[r.clone()], dt)?;
        let pv = DVector::from_column_slice(&p[r.clone()]);
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(&lam[r.clone()]))
            - &pv * pv.adjoint();
        let cv = DVector::from_column_slice(&c[r.clone()]);
        let mut powers = Vec::with_capacity(l);
        let mut x = bbar;
        for j in 0..l {
            k[ch * l + j] = scale * cv.dot(&x).re;
            let next = &abar * &x;
            powers.push(x);
            x = next;
        }
        chans.push(DplrChannel {
            a,
            minv,
            abar,
            p: pv,
            b: DVector::from_column_slice(&b[r]),
            c: cv,
            dt,
            powers,
        });
    }
    instrument::record(kernel_mult_adds(Variant::S4, m, h, l));
    let op = DplrKernel {
        h,
        m,
        l,
        scale,
        neg,
        chans,
    };
    let out = Tensor::new(vec![h, l], k)?;
    let inputs = [
        v.log_neg_re,
        v.im,
        p_re,
        p_im,
        v.b.0,
        v.b.1,
        v.c.0,
        v.c.1,
        v.log_dt,
    ];
    Ok(v.log_dt.graph().custom(&inputs, out, Box::new(op)))
}

impl CustomOp for DplrKernel {
    fn name(&self) -> &'static str {
        "dplr_kernel"
    }

    fn backward(&self, grad: &Tensor) -> crate::tensor::Result<Vec<Option<Tensor>>> {
        let (h, m, l, s) = (self.h, self.m, self.l, self.scale);
        let g = grad.data();
        let zero = C64::new(0.0, 0.0);
        let mut g_lam = vec![zero; h * m];
        let mut g_p = vec![zero; h * m];
        let mut g_b = vec![zero; h * m];
        let mut g_c = vec![zero; h * m];
        let mut g_logdt = vec![0.0; h];
        for (ch, st) in self.chans.iter().enumerate() {
            let gk = &g[ch * l..(ch + 1) * l];
            let c_conj = st.c.conjugate();
            let abar_h = st.abar.adjoint();
            let mut gc = DVector::from_element(m, zero);
            let mut g_abar = DMatrix::from_element(m, m, zero);
            let mut adj = DVector::from_element(m, zero);
            for j in (0..l).rev() {
                let gkj = C64::new(s * gk[j], 0.0);
                adj = &c_conj * gkj + &abar_h * &adj;
                gc += st.powers[j].conjugate() * gkj;
                if j > 0 {
                    g_abar += &adj * st.powers[j - 1].adjoint();
                }
            }
            let g_bbar = adj;
            let dt = C64::new(st.dt, 0.0);
            let g_minv = &g_abar * C64::new(2.0, 0.0) + &g_bbar * st.b.adjoint() * dt;
            let gb = st.minv.adjoint() * &g_bbar * dt;
            let minv_b = &st.minv * &st.b;
            let mut g_dt = g_bbar.dotc(&minv_b).re;
            let minv_h = st.minv.adjoint();
            let g_mm = -(&minv_h * g_minv * &minv_h);
            let g_a = &g_mm * C64::new(-0.5 * st.dt, 0.0);
            g_dt -= 0.5 * g_mm.dotc(&st.a).re;
            let gp = -((&g_a + g_a.adjoint()) * &st.p);
            for mi in 0..m {
                let idx = ch * m + mi;
                g_lam[idx] = g_a[(mi, mi)];
                g_p[idx] = gp[mi];
                g_b[idx] = gb[mi];
                g_c[idx] = gc[mi];
            }
            g_logdt[ch] = g_dt * st.dt;
        }
        let shape = [h, m];
        let (g_lnr, g_im) = lambda_grads(&g_lam, &self.neg, &shape).map_err(internal)?;
        let (g_pre, g_pim) = split(&g_p, &shape).map_err(internal)?;
        let (g_bre, g_bim) = split(&g_b, &shape).map_err(internal)?;
        let (g_cre, g_cim) = split(&g_c, &shape).map_err(internal)?;
        Ok([
            g_lnr,
            g_im,
            g_pre,
            g_pim,
            g_bre,
            g_bim,
            g_cre,
            g_cim,
            Tensor::from_vec(g_logdt),
        ]
        .into_iter()
        .map(Some)
        .collect())
    }
}

struct MimoScan {
    dims: (usize, usize, usize, usize),
    scale: f64,
    neg: Vec<f64>,
    u: Tensor,
    b: Vec<C64>,
    bbar: Vec<C64>,
    c: Vec<C64>,
    dt: f64,
    steps: Vec<ModeStep>,
    /// `[B, L, M]`
    states: Vec<C64>,
}

/// S5 layer output `y_t = s Re(C x_t)` (no feedthrough) for `u: [B, L, H]`,
/// with the state sequence produced by [`associative_scan`].
pub fn mimo_scan<'g>(
    u: Var<'g>,
    v: &SsmVars<'g>,
    method: Discretization,
    scale: f64,
) -> Result<Var<'g>> {
    let us = u.shape();
    if us.len() != 3 {
        return Err(SsmError::Malformed(format!(
            "input must be [B, L, H], got {us:?}"
        )));
    }
    let (bsz, l, h) = (us[0], us[1], us[2]);
    let m = v.log_neg_re.shape().first().copied().unwrap_or(0);
    expect_shape("log_neg_re", &v.log_neg_re.value(), &[m])?;
    expect_shape("im", &v.im.value(), &[m])?;
    expect_shape("b", &v.b.0.value(), &[m, h])?;
    expect_shape("b", &v.b.1.value(), &[m, h])?;
    expect_shape("c", &v.c.0.value(), &[h, m])?;
    expect_shape("c", &v.c.1.value(), &[h, m])?;
    expect_shape("log_dt", &v.log_dt.value(), &[1])?;
    let (lam, neg) = spectrum(&v.log_neg_re.value(), &v.im.value())?;
    let b = complex_of(&v.b.0.value(), &v.b.1.value())?;
    let c = complex_of(&v.c.0.value(), &v.c.1.value())?;
    let dt = v.log_dt.value().data()[0].exp();
    let steps = lam
        .iter()
        .map(|&x| mode_step(x, dt, method))
        .collect::<Result<Vec<_>>>()?;
    let bbar: Vec<C64> = (0..m * h).map(|k| steps[k / h].f * b[k]).collect();
    let uv = u.value();
    let ud = uv.data();
    let mut states = vec![C64::new(0.0, 0.0); bsz * l * m];
    let mut y = vec![0.0; bsz * l * h];
    for bi in 0..bsz {
        for mi in 0..m {
            let elems: Vec<_> = (0..l)
                .map(|t| {
                    let row = (bi * l + t) * h;
                    let drive: C64 = (0..h).map(|i| bbar[mi * h + i] * ud[row + i]).sum();
                    (steps[mi].z, drive)
                })
                .collect();
            for (t, e) in associative_scan(&elems).into_iter().enumerate() {
                states[(bi * l + t) * m + mi] = e.1;
            }
        }
        for t in 0..l {
            let x = &states[(bi * l + t) * m..(bi * l + t + 1) * m];
            for o in 0..h {
                let acc: C64 = (0..m).map(|mi| c[o * m + mi] * x[mi]).sum();
                y[(bi * l + t) * h + o] = scale * acc.re;
            }
        }
    }
    instrument::record(bsz as u64 * recurrent_mult_adds(Variant::S5, m, h, l));
    let op = MimoScan {
        dims: (bsz, l, h, m),
        scale,
        neg,
        u: uv.clone(),
        b,
        bbar,
        c,
        dt,
        steps,
        states,
    };
    let out = Tensor::new(vec![bsz, l, h], y)?;
    let inputs = [u, v.log_neg_re, v.im, v.b.0, v.b.1, v.c.0, v.c.1, v.log_dt];
    Ok(u.graph().custom(&inputs, out, Box::new(op)))
}

impl CustomOp for MimoScan {
    fn name(&self) -> &'static str {
        "mimo_scan"
    }

    fn backward(&self, grad: &Tensor) -> crate::tensor::Result<Vec<Option<Tensor>>> {
        let (bsz, l, h, m) = self.dims;
        let s = self.scale;
        let zero = C64::new(0.0, 0.0);
        let g = grad.data();
        let ud = self.u.data();
        let mut g_u = vec![0.0; bsz * l * h];
        let mut g_c = vec![zero; h * m];
        let mut g_bbar = vec![zero; m * h];
        let mut g_z = vec![zero; m];
        for bi in 0..bsz {
            let state = |t: usize, mi: usize| self.states[(bi * l + t) * m + mi];
            // direct state gradient s C^H G_t, and the readout gradient
            let mut g_x = vec![zero; l * m];
            for t in 0..l {
                for o in 0..h {
                    let go = s * g[(bi * l + t) * h + o];
                    if go == 0.0 {
                        continue;
                    }
                    for mi in 0..m {
                        g_x[t * m + mi] += go * self.c[o * m + mi].conj();
                        g_c[o * m + mi] += go * state(t, mi).conj();
                    }
                }
            }
            // adjoint recurrence mu_t = g_x_t + conj(z) mu_{t+1}, as a scan in reverse time
            let mut mu = vec![zero; l * m];
            for mi in 0..m {
                let zc = self.steps[mi].z.conj();
                let elems: Vec<_> = (0..l).rev().map(|t| (zc, g_x[t * m + mi])).collect();
                for (r, e) in associative_scan(&elems).into_iter().enumerate() {
                    mu[(l - 1 - r) * m + mi] = e.1;
                }
            }
            for t in 0..l {
                let row = (bi * l + t) * h;
                for mi in 0..m {
                    let mut_ = mu[t * m + mi];
                    if t > 0 {
                        g_z[mi] += mut_ * state(t - 1, mi).conj();
                    }
                    for i in 0..h {
                        g_bbar[mi * h + i] += mut_ * ud[row + i];
                        g_u[row + i] += (mut_ * self.bbar[mi * h + i].conj()).re;
                    }
                }
            }
        }
        let mut g_b = vec![zero; m * h];
        let mut g_lam = vec![zero; m];
        let mut g_dt = 0.0;
        for mi in 0..m {
            let st = &self.steps[mi];
            let mut g_f = zero;
            for i in 0..h {
                let k = mi * h + i;
                g_b[k] = g_bbar[k] * st.f.conj();
                g_f += g_bbar[k] * self.b[k].conj();
            }
            g_lam[mi] = g_z[mi] * st.dz_dl.conj() + g_f * st.df_dl.conj();
            g_dt += (g_z[mi].conj() * st.dz_ddt + g_f.conj() * st.df_ddt).re;
        }
        let (g_lnr, g_im) = lambda_grads(&g_lam, &self.neg, &[m]).map_err(internal)?;
        let (g_bre, g_bim) = split(&g_b, &[m, h]).map_err(internal)?;
        let (g_cre, g_cim) = split(&g_c, &[h, m]).map_err(internal)?;
        Ok([
            Tensor::new(vec![bsz, l, h], g_u)?,
            g_lnr,
            g_im,
            g_bre,
            g_bim,
            g_cre,
            g_cim,
            Tensor::from_vec(vec![g_dt * self.dt]),
        ]
        .into_iter()
        .map(Some)
        .collect())
    }
}
