//! Structured state space layers in continuous and discrete form.
//!
//! Three layouts are supported:
//!
//! * S4: one single-input single-output system per channel with
//!   `A = diag(lambda) - p p^H` (diagonal plus rank one).
//! * S4D: one diagonal single-input single-output system per channel.
//! * S5: one diagonal system with `H` inputs and `H` outputs.
//!
//! A state dimension `N` is stored as `M = ceil(N / 2)` complex modes. When
//! `conjugate_pairs` is set the conjugate half is implicit and every readout
//! is `2 Re(C x)`; systems built by hand for checking can clear the flag to
//! read `Re(C x)` instead.

mod discretize;
mod hippo;
mod init;
mod kernel;
pub mod ops;
mod recurrent;
pub mod scan;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::TensorError;

pub use discretize::discretize;
pub(crate) use discretize::{mode_step, ModeStep};
pub use hippo::{hippo_legs, hippo_normal_part};
pub use init::{hippo_dplr, init_ssm, s4d_lin};
pub use kernel::{conv_forward, kernel_mult_adds, materialize_kernel, ConvKernel};
pub use recurrent::{recurrent_forward, recurrent_mult_adds, s5_scan, SsmState};

pub type C64 = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SsmError {
    #[error("state dimension must be at least 1")]
    ZeroStateDim,
    #[error("channel count must be at least 1")]
    ZeroChannels,
    #[error("sequence length must be at least 1")]
    ZeroLength,
    #[error("bilinear discretization is singular: |1 - dt*lambda/2| = {0:e}")]
    BilinearSingular(f64),
    #[error("zero-order hold needs a diagonal state matrix")]
    ZohNeedsDiagonal,
    #[error("parallel scan needs an S5 system, got {0:?}")]
    NotMimo(Variant),
    #[error("channel mismatch: system has {expected}, input has {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("kernel length {kernel} does not match sequence length {seq}")]
    LengthMismatch { kernel: usize, seq: usize },
    #[error("malformed system: {0}")]
    Malformed(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, SsmError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    S4,
    S4d,
    S5,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    #[default]
    Bilinear,
    Zoh,
}

/// Number of stored complex modes for state dimension `n`.
pub fn stored_modes(n: usize) -> usize {
    n.div_ceil(2)
}

/// Continuous-time parameters. Flat vectors are row-major:
/// per-channel quantities are `[H * M]` indexed `h * M + m`; the S5 input
/// matrix is `[M * H]` indexed `m * H + i`, its output matrix `[H * M]`.
#[derive(Clone, Debug, PartialEq)]
pub enum ContinuousRepr {
    Dplr {
        lambda: Vec<C64>,
        p: Vec<C64>,
        b: Vec<C64>,
        c: Vec<C64>,
    },
    Diagonal {
        lambda: Vec<C64>,
        b: Vec<C64>,
        c: Vec<C64>,
    },
    Mimo {
        lambda: Vec<C64>,
        b: Vec<C64>,
        c: Vec<C64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousSsm {
    pub repr: ContinuousRepr,
    pub modes: usize,
    pub channels: usize,
    /// Feedthrough, one per channel.
    pub d: Vec<f64>,
    /// Log step size: one per channel for S4/S4D, a single value for S5.
    pub log_dt: Vec<f64>,
    pub conjugate_pairs: bool,
}

impl ContinuousSsm {
    pub fn variant(&self) -> Variant {
        match self.repr {
            ContinuousRepr::Dplr { .. } => Variant::S4,
            ContinuousRepr::Diagonal { .. } => Variant::S4d,
            ContinuousRepr::Mimo { .. } => Variant::S5,
        }
    }

    pub fn output_scale(&self) -> f64 {
        if self.conjugate_pairs {
            2.0
        } else {
            1.0
        }
    }

    /// Diagonal of the state matrix, `[H * M]` or `[M]` for S5.
    pub fn lambda(&self) -> &[C64] {
        match &self.repr {
            ContinuousRepr::Dplr { lambda, .. }
            | ContinuousRepr::Diagonal { lambda, .. }
            | ContinuousRepr::Mimo { lambda, .. } => lambda,
        }
    }

    pub fn dt(&self, channel: usize) -> f64 {
        match self.repr {
            ContinuousRepr::Mimo { .. } => self.log_dt[0].exp(),
            _ => self.log_dt[channel].exp(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, m) = (self.channels, self.modes);
        if m == 0 {
            return Err(SsmError::ZeroStateDim);
        }
        if h == 0 {
            return Err(SsmError::ZeroChannels);
        }
        let check = |name: &str, len: usize, want: usize| {
            if len == want {
                Ok(())
            } else {
                Err(SsmError::Malformed(format!(
                    "{name} has {len} entries, expected {want}"
                )))
            }
        };
        check("d", self.d.len(), h)?;
        match &self.repr {
            ContinuousRepr::Dplr { lambda, p, b, c } => {
                check("lambda", lambda.len(), h * m)?;
                check("p", p.len(), h * m)?;
                check("b", b.len(), h * m)?;
                check("c", c.len(), h * m)?;
                check("log_dt", self.log_dt.len(), h)?;
            }
            ContinuousRepr::Diagonal { lambda, b, c } => {
                check("lambda", lambda.len(), h * m)?;
                check("b", b.len(), h * m)?;
                check("c", c.len(), h * m)?;
                check("log_dt", self.log_dt.len(), h)?;
            }
            ContinuousRepr::Mimo { lambda, b, c } => {
                check("lambda", lambda.len(), m)?;
                check("b", b.len(), m * h)?;
                check("c", c.len(), h * m)?;
                check("log_dt", self.log_dt.len(), 1)?;
            }
        }
        if self.log_dt.iter().any(|v| !v.is_finite()) {
            return Err(SsmError::Malformed("log_dt must be finite".into()));
        }
        Ok(())
    }
}

/// Discrete-time parameters in the same layouts as [`ContinuousRepr`].
/// The S4 transition is dense per channel.
#[derive(Clone, Debug, PartialEq)]
pub enum DiscreteRepr {
    Dense {
        abar: Vec<DMatrix<C64>>,
        bbar: Vec<DVector<C64>>,
        c: Vec<C64>,
    },
    Diagonal {
        abar: Vec<C64>,
        bbar: Vec<C64>,
        c: Vec<C64>,
    },
    Mimo {
        abar: Vec<C64>,
        bbar: Vec<C64>,
        c: Vec<C64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSsm {
    pub repr: DiscreteRepr,
    pub modes: usize,
    pub channels: usize,
    pub d: Vec<f64>,
    pub dt: Vec<f64>,
    pub conjugate_pairs: bool,
}

impl DiscreteSsm {
    /// Per-channel diagonal system from already discretized values
    /// (`abar`, `bbar`, `c` are `[H * M]`, `d` is `[H]`).
    pub fn diagonal(
        abar: Vec<C64>,
        bbar: Vec<C64>,
        c: Vec<C64>,
        d: Vec<f64>,
        conjugate_pairs: bool,
    ) -> Result<Self> {
        let h = d.len();
        if h == 0 {
            return Err(SsmError::ZeroChannels);
        }
        let m = abar.len() / h;
        if m == 0 || abar.len() != h * m || bbar.len() != h * m || c.len() != h * m {
            return Err(SsmError::Malformed(
                "diagonal system arrays must all be [H * M]".into(),
            ));
        }
        Ok(DiscreteSsm {
            repr: DiscreteRepr::Diagonal { abar, bbar, c },
            modes: m,
            channels: h,
            dt: vec![f64::NAN; h],
            d,
            conjugate_pairs,
        })
    }

    /// Single-mode, single-channel system read out as `Re(c x) + d u`.
    pub fn scalar(abar: C64, bbar: C64, c: C64, d: f64) -> Self {
        Self::diagonal(vec![abar], vec![bbar], vec![c], vec![d], false)
            .expect("one mode, one channel")
    }

    pub fn variant(&self) -> Variant {
        match self.repr {
            DiscreteRepr::Dense { .. } => Variant::S4,
            DiscreteRepr::Diagonal { .. } => Variant::S4d,
            DiscreteRepr::Mimo { .. } => Variant::S5,
        }
    }

    pub fn output_scale(&self) -> f64 {
        if self.conjugate_pairs {
            2.0
        } else {
            1.0
        }
    }
}
