//! Encoder, stacked sequence backbone and decoder with quantile conditioning.
//!
//! Blocks are pre-norm residual: `h + dropout(act(layer(norm(h))))`. The
//! decoder output passes through a softplus so predictions are nonnegative.
//!
//! Conditioning modes:
//!
//! * `multiplicative`: output times `2 tau`, so `tau = 0.5` is the identity.
//! * `multiplicative_raw`: output times `tau`.
//! * `learned`: output times `exp(w (tau - 1/2))`, `w` learnable, starting at 1.
//! * `concat`: `tau` appended to the input features as a constant channel.

mod layers;
mod params;

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ssm::{ContinuousSsm, Discretization, SsmError, Variant};
use crate::tensor::{Graph, Tensor, TensorError, Unary, Var};
use layers::{dropout, Affine, LayerNorm, SeqLayer, SsmSpec};
pub use params::{Param, ParamGroup, ParamId, ParamStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown backbone {0:?} (expected s4, s4d, s5 or lstm)")]
    UnknownBackbone(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("quantile level {0} is outside (0, 1)")]
    TauOutOfRange(f64),
    #[error("input has {got} features, model expects {expected}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("bad input shape {0:?}")]
    InputShape(Vec<usize>),
    #[error(transparent)]
    Ssm(#[from] SsmError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    S4,
    S4d,
    S5,
    Lstm,
}

impl Backbone {
    pub fn name(self) -> &'static str {
        match self {
            Backbone::S4 => "s4",
            Backbone::S4d => "s4d",
            Backbone::S5 => "s5",
            Backbone::Lstm => "lstm",
        }
    }

    fn variant(self) -> Option<Variant> {
        match self {
            Backbone::S4 => Some(Variant::S4),
            Backbone::S4d => Some(Variant::S4d),
            Backbone::S5 => Some(Variant::S5),
            Backbone::Lstm => None,
        }
    }
}

impl FromStr for Backbone {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s4" => Ok(Backbone::S4),
            "s4d" => Ok(Backbone::S4d),
            "s5" => Ok(Backbone::S5),
            "lstm" => Ok(Backbone::Lstm),
            _ => Err(ModelError::UnknownBackbone(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    Multiplicative,
    MultiplicativeRaw,
    Learned,
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Layernorm,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub input_features: usize,
    pub latent_dim: usize,
    pub state_dim: usize,
    pub layers: usize,
    pub window_len: usize,
    pub dropout: f64,
    pub conditioning: Conditioning,
    pub activation: Activation,
    pub norm: Norm,
    pub discretization: Discretization,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: Backbone::S4,
            input_features: 24,
            latent_dim: 64,
            state_dim: 16,
            layers: 2,
            window_len: 100,
            dropout: 0.1,
            conditioning: Conditioning::Concat,
            activation: Activation::Gelu,
            norm: Norm::Layernorm,
            discretization: Discretization::Bilinear,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if self.input_features == 0 {
            return bad("input_features must be at least 1");
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1");
        }
        if self.layers == 0 {
            return bad("layers must be at least 1");
        }
        if self.window_len == 0 {
            return bad("window_len must be at least 1");
        }
        if self.state_dim == 0 && self.backbone != Backbone::Lstm {
            return bad("state_dim must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.backbone == Backbone::S4 && self.discretization == Discretization::Zoh {
            return bad("the s4 backbone supports only bilinear discretization");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Block {
    norm: Option<LayerNorm>,
    layer: SeqLayer,
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamStore,
    encoder: Affine,
    blocks: Vec<Block>,
    decoder: Affine,
    cond_w: Option<ParamId>,
}

/// Deterministic model construction from `cfg.seed`.
pub fn build_model(cfg: &ModelConfig) -> Result<Model> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let h = cfg.latent_dim;
    let enc_in = cfg.input_features + usize::from(cfg.conditioning == Conditioning::Concat);
    let encoder = Affine::new(&mut store, "encoder", enc_in, h, &mut rng);
    let mut blocks = Vec::with_capacity(cfg.layers);
    for i in 0..cfg.layers {
        let name = format!("blocks.{i}");
        let norm = (cfg.norm == Norm::Layernorm)
            .then(|| LayerNorm::new(&mut store, &format!("{name}.norm"), h));
        let layer = match cfg.backbone.variant() {
            Some(variant) => {
                let spec = SsmSpec {
                    variant,
                    state_dim: cfg.state_dim,
                };
                SeqLayer::new_ssm(&mut store, &name, &spec, h, &mut rng)?
            }
            None => SeqLayer::new_lstm(&mut store, &name, h, &mut rng),
        };
        blocks.push(Block { norm, layer });
    }
    let decoder = Affine::new(&mut store, "decoder", h, 1, &mut rng);
    let cond_w = (cfg.conditioning == Conditioning::Learned).then(|| {
        store.add(
            "conditioning.w",
            Tensor::from_vec(vec![1.0]),
            ParamGroup::Standard,
        )
    });
    Ok(Model {
        cfg: cfg.clone(),
        params: store,
        encoder,
        blocks,
        decoder,
        cond_w,
    })
}

fn check_taus(tau: &Tensor, batch: usize) -> Result<()> {
    if tau.shape() != [batch] {
        return Err(ModelError::InputShape(tau.shape().to_vec()));
    }
    match tau.data().iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
        Some(&t) => Err(ModelError::TauOutOfRange(t)),
        None => Ok(()),
    }
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Continuous-time system currently held by block `i` (SSM backbones).
    pub fn block_system(&self, i: usize) -> Option<ContinuousSsm> {
        self.blocks
            .get(i)
            .and_then(|b| b.layer.system(&self.params))
    }

    /// Forward pass on graph variables. `vars` are the parameters in store
    /// order (see [`ParamStore::bind`]), `x: [B, L, F]`, `tau: [B]`.
    /// Dropout is applied only when `rng` is given.
    pub fn forward<'g>(
        &self,
        vars: &[Var<'g>],
        x: Var<'g>,
        tau: &Tensor,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var<'g>> {
        let shape = x.shape();
        if shape.len() != 3 {
            return Err(ModelError::InputShape(shape));
        }
        let (b, l, f) = (shape[0], shape[1], shape[2]);
        if f != self.cfg.input_features {
            return Err(ModelError::FeatureMismatch {
                expected: self.cfg.input_features,
                got: f,
            });
        }
        if vars.len() != self.params.len() {
            return Err(ModelError::InvalidConfig(format!(
                "{} parameter variables for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        check_taus(tau, b)?;
        let g: &'g Graph = x.graph();
        let input = if self.cfg.conditioning == Conditioning::Concat {
            let col: Vec<f64> = tau
                .data()
                .iter()
                .flat_map(|&t| std::iter::repeat_n(t, l))
                .collect();
            Var::concat_last(&[x, g.constant(Tensor::new(vec![b, l, 1], col)?)])?
        } else {
            x
        };
        let mut h = self.encoder.apply(vars, input)?;
        let act = match self.cfg.activation {
            Activation::Gelu => Unary::Gelu,
            Activation::Relu => Unary::Relu,
        };
        for block in &self.blocks {
            let z = match &block.norm {
                Some(n) => n.apply(vars, h)?,
                None => h,
            };
            let mut z = block
                .layer
                .apply(vars, z, self.cfg.discretization)?
                .unary(act);
            if let Some(r) = rng.as_deref_mut() {
                if self.cfg.dropout > 0.0 {
                    z = dropout(z, self.cfg.dropout, r)?;
                }
            }
            h = h.add(z)?;
        }
        let out = self.decoder.apply(vars, h)?.reshape(&[b, l])?.softplus();
        let col = |f: &dyn Fn(f64) -> f64| -> Result<Var<'g>> {
            Ok(g.constant(Tensor::new(
                vec![b, 1],
                tau.data().iter().map(|&t| f(t)).collect(),
            )?))
        };
        Ok(match self.cfg.conditioning {
            Conditioning::Concat => out,
            Conditioning::Multiplicative => out.mul(col(&|t| 2.0 * t)?)?,
            Conditioning::MultiplicativeRaw => out.mul(col(&|t| t)?)?,
            Conditioning::Learned => {
                let w = vars[self.cond_w.expect("learned conditioning registers w").0];
                out.mul(col(&|t| t - 0.5)?.mul(w)?.exp())?
            }
        })
    }

    /// Inference without dropout: `x: [B, L, F]`, `tau: [B]` to `[B, L]`.
    pub fn predict(&self, x: &Tensor, tau: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let vars = self.params.bind(&g, false);
        let out = self.forward(&vars, g.constant(x.clone()), tau, None)?;
        Ok(out.value())
    }

    /// Number of learnable scalars; complex parameters count twice.
    pub fn count_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Analytic mult-adds of one forward pass over a single window of length
    /// `l`: `in * out * L` per affine map, `4 L (h^2 + h i)` per LSTM layer,
    /// kernel generation plus `H (3 n log2 n + n)` (FFT size `n`) plus the
    /// mixing affine per S4/S4D layer, and the scan cost per S5 layer.
    /// Elementwise work, normalization and activations are not counted.
    pub fn count_mult_adds(&self, l: usize) -> u64 {
        self.encoder.mult_adds(l)
            + self
                .blocks
                .iter()
                .map(|b| b.layer.mult_adds(&self.params, l))
                .sum::<u64>()
            + self.decoder.mult_adds(l)
    }
}

/// Free-function form of [`Model::count_params`].
pub fn count_params(m: &Model) -> usize {
    m.count_params()
}

/// Free-function form of [`Model::count_mult_adds`].
pub fn count_mult_adds(m: &Model, l: usize) -> u64 {
    m.count_mult_adds(l)
}
