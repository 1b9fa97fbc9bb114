use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamGroup, ParamId, ParamStore};
use super::ModelError;
use crate::ssm::ops::{diagonal_kernel, dplr_kernel, mimo_scan, SsmVars};
use crate::ssm::{
    init_ssm, kernel_mult_adds, recurrent_mult_adds, ContinuousRepr, ContinuousSsm, Discretization,
    Variant, C64,
};
use crate::tensor::conv::conv_mult_adds;
use crate::tensor::{Graph, Tensor, Var};

type Result<T> = std::result::Result<T, ModelError>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

/// `y = x W + b` over the last axis, `W: [in, out]`.
#[derive(Clone, Debug)]
pub(crate) struct Affine {
    w: ParamId,
    b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Affine {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = store.add(
            format!("{name}.weight"),
            uniform(rng, &[fan_in, fan_out], bound),
            ParamGroup::Standard,
        );
        let b = store.add(
            format!("{name}.bias"),
            Tensor::zeros(&[fan_out]),
            ParamGroup::Standard,
        );
        Affine {
            w,
            b,
            fan_in,
            fan_out,
        }
    }

    pub fn apply<'g>(&self, vars: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        Ok(x.matmul(vars[self.w.0])?.add(vars[self.b.0])?)
    }

    pub fn mult_adds(&self, l: usize) -> u64 {
        (self.fan_in * self.fan_out * l) as u64
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
    dim: usize,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(
            format!("{name}.gamma"),
            Tensor::ones(&[dim]),
            ParamGroup::Standard,
        );
        let beta = store.add(
            format!("{name}.beta"),
            Tensor::zeros(&[dim]),
            ParamGroup::Standard,
        );
        LayerNorm { gamma, beta, dim }
    }

    pub fn apply<'g>(&self, vars: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        let inv = 1.0 / self.dim as f64;
        let centered = x.sub(x.sum_last().scale(inv))?;
        let var = centered.square().sum_last().scale(inv);
        let normed = centered.div(var.add_scalar(LN_EPS).sqrt())?;
        Ok(normed.mul(vars[self.gamma.0])?.add(vars[self.beta.0])?)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct SsmIds {
    log_neg_re: ParamId,
    im: ParamId,
    p: Option<(ParamId, ParamId)>,
    b: (ParamId, ParamId),
    c: (ParamId, ParamId),
    log_dt: ParamId,
    d: ParamId,
}

impl SsmIds {
    fn register(store: &mut ParamStore, name: &str, ssm: &ContinuousSsm) -> Self {
        let (h, m) = (ssm.channels, ssm.modes);
        let mimo = ssm.variant() == Variant::S5;
        let lam_shape = if mimo { vec![m] } else { vec![h, m] };
        let (b_shape, c_shape) = if mimo {
            (vec![m, h], vec![h, m])
        } else {
            (vec![h, m], vec![h, m])
        };
        let lam = ssm.lambda();
        let mut add = |suffix: &str, shape: &[usize], data: Vec<f64>, group: ParamGroup| {
            store.add(
                format!("{name}.{suffix}"),
                Tensor::new(shape.to_vec(), data).expect("init shapes"),
                group,
            )
        };
        let re = |v: &[C64]| v.iter().map(|z| z.re).collect::<Vec<_>>();
        let im = |v: &[C64]| v.iter().map(|z| z.im).collect::<Vec<_>>();
        let log_neg_re = add(
            "log_neg_re",
            &lam_shape,
            lam.iter().map(|z| (-z.re).ln()).collect(),
            ParamGroup::Ssm,
        );
        let im_id = add("im", &lam_shape, im(lam), ParamGroup::Ssm);
        let (p, b, c) = match &ssm.repr {
            ContinuousRepr::Dplr { p, b, c, .. } => (Some(p), b, c),
            ContinuousRepr::Diagonal { b, c, .. } | ContinuousRepr::Mimo { b, c, .. } => {
                (None, b, c)
            }
        };
        let p = p.map(|p| {
            (
                add("p_re", &lam_shape, re(p), ParamGroup::Ssm),
                add("p_im", &lam_shape, im(p), ParamGroup::Ssm),
            )
        });
        let b = (
            add("b_re", &b_shape, re(b), ParamGroup::Standard),
            add("b_im", &b_shape, im(b), ParamGroup::Standard),
        );
        let c = (
            add("c_re", &c_shape, re(c), ParamGroup::Standard),
            add("c_im", &c_shape, im(c), ParamGroup::Standard),
        );
        let dt_shape = [ssm.log_dt.len()];
        let log_dt = add("log_dt", &dt_shape, ssm.log_dt.clone(), ParamGroup::Ssm);
        let d = add("d", &[h], ssm.d.clone(), ParamGroup::Standard);
        SsmIds {
            log_neg_re,
            im: im_id,
            p,
            b,
            c,
            log_dt,
            d,
        }
    }

    fn vars<'g>(&self, vars: &[Var<'g>]) -> SsmVars<'g> {
        SsmVars {
            log_neg_re: vars[self.log_neg_re.0],
            im: vars[self.im.0],
            p: self.p.map(|(a, b)| (vars[a.0], vars[b.0])),
            b: (vars[self.b.0 .0], vars[self.b.1 .0]),
            c: (vars[self.c.0 .0], vars[self.c.1 .0]),
            log_dt: vars[self.log_dt.0],
        }
    }

    /// Current values as a continuous system.
    fn system(&self, store: &ParamStore, variant: Variant, channels: usize) -> ContinuousSsm {
        let val = |id: ParamId| store.get(id).value.clone();
        let cplx = |(a, b): (ParamId, ParamId)| -> Vec<C64> {
            val(a)
                .data()
                .iter()
                .zip(val(b).data())
                .map(|(&x, &y)| C64::new(x, y))
                .collect()
        };
        let lambda: Vec<C64> = val(self.log_neg_re)
            .data()
            .iter()
            .zip(val(self.im).data())
            .map(|(&l, &i)| C64::new(-l.exp(), i))
            .collect();
        let (b, c) = (cplx(self.b), cplx(self.c));
        let modes = match variant {
            Variant::S5 => lambda.len(),
            _ => lambda.len() / channels,
        };
        let repr = match variant {
            Variant::S4 => ContinuousRepr::Dplr {
                lambda,
                p: cplx(self.p.expect("S4 layers register p")),
                b,
                c,
            },
            Variant::S4d => ContinuousRepr::Diagonal { lambda, b, c },
            Variant::S5 => ContinuousRepr::Mimo { lambda, b, c },
        };
        ContinuousSsm {
            repr,
            modes,
            channels,
            d: val(self.d).to_vec(),
            log_dt: val(self.log_dt).to_vec(),
            conjugate_pairs: true,
        }
    }
}

/// LSTM cell over the whole window: gates `[i, f, g, o]` from
/// `x_t W_x + h_{t-1} W_h + b`.
#[derive(Clone, Debug)]
pub(crate) struct Lstm {
    w_x: ParamId,
    w_h: ParamId,
    bias: ParamId,
    input: usize,
    hidden: usize,
}

impl Lstm {
    fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_x = store.add(
            format!("{name}.w_x"),
            uniform(rng, &[input, 4 * hidden], bound),
            ParamGroup::Standard,
        );
        let w_h = store.add(
            format!("{name}.w_h"),
            uniform(rng, &[hidden, 4 * hidden], bound),
            ParamGroup::Standard,
        );
        let mut b = uniform(rng, &[4 * hidden], bound).into_vec();
        // forget gate starts open
        for v in &mut b[hidden..2 * hidden] {
            *v += 1.0;
        }
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::from_vec(b),
            ParamGroup::Standard,
        );
        Lstm {
            w_x,
            w_h,
            bias,
            input,
            hidden,
        }
    }

    fn apply<'g>(&self, vars: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        let shape = x.shape();
        let (b, l) = (shape[0], shape[1]);
        let hsz = self.hidden;
        let g = x.graph();
        let proj = x.matmul(vars[self.w_x.0])?.add(vars[self.bias.0])?;
        let mut h = g.constant(Tensor::zeros(&[b, hsz]));
        let mut c = g.constant(Tensor::zeros(&[b, hsz]));
        let mut outs = Vec::with_capacity(l);
        for t in 0..l {
            let gates = proj.select(1, t)?.add(h.matmul(vars[self.w_h.0])?)?;
            let i = gates.slice_last(0, hsz)?.sigmoid();
            let f = gates.slice_last(hsz, hsz)?.sigmoid();
            let gg = gates.slice_last(2 * hsz, hsz)?.tanh();
            let o = gates.slice_last(3 * hsz, hsz)?.sigmoid();
            c = f.mul(c)?.add(i.mul(gg)?)?;
            h = o.mul(c.tanh())?;
            outs.push(h);
        }
        Ok(Var::stack(&outs, 1)?)
    }

    /// `4 L (h^2 + h i)`.
    fn mult_adds(&self, l: usize) -> u64 {
        let (h, i) = (self.hidden as u64, self.input as u64);
        4 * l as u64 * (h * h + h * i)
    }
}

#[derive(Clone, Debug)]
pub(crate) enum SeqLayer {
    /// Per-channel SSM convolution plus feedthrough, then a channel-mixing affine.
    Siso {
        variant: Variant,
        ids: SsmIds,
        mix: Affine,
        channels: usize,
    },
    Mimo {
        ids: SsmIds,
        channels: usize,
    },
    Lstm(Lstm),
}

pub(crate) struct SsmSpec {
    pub variant: Variant,
    pub state_dim: usize,
}

impl SeqLayer {
    pub fn new_ssm(
        store: &mut ParamStore,
        name: &str,
        spec: &SsmSpec,
        h: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let ssm = init_ssm(spec.variant, spec.state_dim, h, rng.random())?;
        let ids = SsmIds::register(store, &format!("{name}.ssm"), &ssm);
        Ok(match spec.variant {
            Variant::S5 => SeqLayer::Mimo { ids, channels: h },
            v => SeqLayer::Siso {
                variant: v,
                ids,
                mix: Affine::new(store, &format!("{name}.mix"), h, h, rng),
                channels: h,
            },
        })
    }

    pub fn new_lstm(store: &mut ParamStore, name: &str, h: usize, rng: &mut ChaCha8Rng) -> Self {
        SeqLayer::Lstm(Lstm::new(store, &format!("{name}.lstm"), h, h, rng))
    }

    pub fn apply<'g>(
        &self,
        vars: &[Var<'g>],
        x: Var<'g>,
        method: Discretization,
    ) -> Result<Var<'g>> {
        let l = x.shape()[1];
        match self {
            SeqLayer::Siso {
                variant, ids, mix, ..
            } => {
                let v = ids.vars(vars);
                let k = match variant {
                    Variant::S4 => dplr_kernel(&v, l, 2.0)?,
                    _ => diagonal_kernel(&v, l, method, 2.0)?,
                };
                let y = x.causal_conv(k)?.add(x.mul(vars[ids.d.0])?)?;
                mix.apply(vars, y)
            }
            SeqLayer::Mimo { ids, .. } => {
                let v = ids.vars(vars);
                Ok(mimo_scan(x, &v, method, 2.0)?.add(x.mul(vars[ids.d.0])?)?)
            }
            SeqLayer::Lstm(cell) => cell.apply(vars, x),
        }
    }

    pub fn mult_adds(&self, store: &ParamStore, l: usize) -> u64 {
        match self {
            SeqLayer::Siso {
                variant,
                ids,
                mix,
                channels,
            } => {
                let modes = store.get(ids.log_neg_re).value.shape()[1];
                kernel_mult_adds(*variant, modes, *channels, l)
                    + *channels as u64 * conv_mult_adds(l)
                    + mix.mult_adds(l)
            }
            SeqLayer::Mimo { ids, channels } => {
                let modes = store.get(ids.log_neg_re).value.shape()[0];
                recurrent_mult_adds(Variant::S5, modes, *channels, l)
            }
            SeqLayer::Lstm(cell) => cell.mult_adds(l),
        }
    }

    pub fn system(&self, store: &ParamStore) -> Option<ContinuousSsm> {
        match self {
            SeqLayer::Siso {
                variant,
                ids,
                channels,
                ..
            } => Some(ids.system(store, *variant, *channels)),
            SeqLayer::Mimo { ids, channels } => Some(ids.system(store, Variant::S5, *channels)),
            SeqLayer::Lstm(_) => None,
        }
    }
}

/// Inverted dropout with a fresh Bernoulli mask.
pub(crate) fn dropout<'g>(x: Var<'g>, p: f64, rng: &mut ChaCha8Rng) -> Result<Var<'g>> {
    let keep = 1.0 - p;
    let shape = x.shape();
    let n = shape.iter().product();
    let mask: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    let g: &Graph = x.graph();
    Ok(x.mul(g.constant(Tensor::new(shape, mask)?))?)
}
