use nalgebra::{DMatrix, DVector};

use super::{
    ContinuousRepr, ContinuousSsm, DiscreteRepr, DiscreteSsm, Discretization, Result, SsmError, C64,
};

const SINGULAR: f64 = 1e-12;

/// One discretized diagonal mode: `abar = z`, `bbar = f * b`, with the
/// partial derivatives of `z` and `f` in `lambda` and `dt`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ModeStep {
    pub z: C64,
    pub f: C64,
    pub dz_dl: C64,
    pub dz_ddt: C64,
    pub df_dl: C64,
    pub df_ddt: C64,
}

pub(crate) fn mode_step(lambda: C64, dt: f64, method: Discretization) -> Result<ModeStep> {
    match method {
        Discretization::Bilinear => {
            let den = 1.0 - 0.5 * dt * lambda;
            if den.norm() < SINGULAR {
                return Err(SsmError::BilinearSingular(den.norm()));
            }
            let den2 = den * den;
            Ok(ModeStep {
                z: (1.0 + 0.5 * dt * lambda) / den,
                f: dt / den,
                dz_dl: dt / den2,
                dz_ddt: lambda / den2,
                df_dl: 0.5 * dt * dt / den2,
                df_ddt: 1.0 / den2,
            })
        }
        Discretization::Zoh => {
            let z = (dt * lambda).exp();
            let (f, df_dl) = if lambda.norm() < 1e-300 {
                (C64::new(dt, 0.0), C64::new(0.5 * dt * dt, 0.0))
            } else {
                (
                    (z - 1.0) / lambda,
                    (dt * lambda * z - z + 1.0) / (lambda * lambda),
                )
            };
            Ok(ModeStep {
                z,
                f,
                dz_dl: dt * z,
                dz_ddt: lambda * z,
                df_dl,
                df_ddt: z,
            })
        }
    }
}

/// Bilinear discretization of `A = diag(lambda) - p p^H` with input `b`.
/// Returns `(abar, bbar, minv)` where `minv = (I - dt/2 A)^-1`.
pub(crate) fn dplr_bilinear(
    lambda: &[C64],
    p: &[C64],
    b: &[C64],
    dt: f64,
) -> Result<(DMatrix<C64>, DVector<C64>, DMatrix<C64>)> {
    let m = lambda.len();
    if let Some(worst) = lambda
        .iter()
        .map(|&l| (1.0 - 0.5 * dt * l).norm())
        .min_by(f64::total_cmp)
        .filter(|&w| w < SINGULAR)
    {
        return Err(SsmError::BilinearSingular(worst));
    }
    let pv = DVector::from_column_slice(p);
    let a = DMatrix::from_diagonal(&DVector::from_column_slice(lambda)) - &pv * pv.adjoint();
    let lhs = DMatrix::<C64>::identity(m, m) - a * C64::new(0.5 * dt, 0.0);
    let minv = lhs.try_inverse().ok_or(SsmError::BilinearSingular(0.0))?;
    let abar = &minv * C64::new(2.0, 0.0) - DMatrix::<C64>::identity(m, m);
    let bbar = &minv * DVector::from_column_slice(b) * C64::new(dt, 0.0);
    Ok((abar, bbar, minv))
}

/// Converts a continuous system to discrete time with step `exp(log_dt)`.
/// Zero-order hold is only defined here for diagonal state matrices.
pub fn discretize(ssm: &ContinuousSsm, method: Discretization) -> Result<DiscreteSsm> {
    ssm.validate()?;
    let (h, m) = (ssm.channels, ssm.modes);
    let diag = |lambda: &[C64],
                b: &[C64],
                chan_of: &dyn Fn(usize) -> usize,
                b_per_mode: usize|
     -> Result<(Vec<C64>, Vec<C64>)> {
        let mut abar = Vec::with_capacity(lambda.len());
        let mut bbar = Vec::with_capacity(b.len());
        for (k, &l) in lambda.iter().enumerate() {
            let st = mode_step(l, ssm.dt(chan_of(k)), method)?;
            abar.push(st.z);
            bbar.extend(
                b[k * b_per_mode..(k + 1) * b_per_mode]
                    .iter()
                    .map(|&bb| st.f * bb),
            );
        }
        Ok((abar, bbar))
    };
    let repr = match &ssm.repr {
        ContinuousRepr::Diagonal { lambda, b, c } => {
            let (abar, bbar) = diag(lambda, b, &|k| k / m, 1)?;
            DiscreteRepr::Diagonal {
                abar,
                bbar,
                c: c.clone(),
            }
        }
        ContinuousRepr::Mimo { lambda, b, c } => {
            let (abar, bbar) = diag(lambda, b, &|_| 0, h)?;
            DiscreteRepr::Mimo {
                abar,
                bbar,
                c: c.clone(),
            }
        }
        ContinuousRepr::Dplr { lambda, p, b, c } => {
            if method != Discretization::Bilinear {
                return Err(SsmError::ZohNeedsDiagonal);
            }
            let mut abars = Vec::with_capacity(h);
            let mut bbars = Vec::with_capacity(h);
            for ch in 0..h {
                let r = ch * m..(ch + 1) * m;
                let (a, bb, _) =
                    dplr_bilinear(&lambda[r.clone()], &p[r.clone()], &b[r], ssm.dt(ch))?;
                abars.push(a);
                bbars.push(bb);
            }
            DiscreteRepr::Dense {
                abar: abars,
                bbar: bbars,
                c: c.clone(),
            }
        }
    };
    Ok(DiscreteSsm {
        repr,
        modes: m,
        channels: h,
        d: ssm.d.clone(),
        dt: (0..ssm.log_dt.len()).map(|i| ssm.log_dt[i].exp()).collect(),
        conjugate_pairs: ssm.conjugate_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(lambda: f64, dt: f64) -> ContinuousSsm {
        ContinuousSsm {
            repr: ContinuousRepr::Diagonal {
                lambda: vec![C64::new(lambda, 0.0)],
                b: vec![C64::new(1.0, 0.0)],
                c: vec![C64::new(1.0, 0.0)],
            },
            modes: 1,
            channels: 1,
            d: vec![0.0],
            log_dt: vec![dt.ln()],
            conjugate_pairs: false,
        }
    }

    fn abar_bbar(d: &DiscreteSsm) -> (C64, C64) {
        match &d.repr {
            DiscreteRepr::Diagonal { abar, bbar, .. } => (abar[0], bbar[0]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn bilinear_scalar_closed_form() {
        let d = discretize(&scalar(-1.0, 0.1), Discretization::Bilinear).unwrap();
        let (a, b) = abar_bbar(&d);
        assert!((a.re - 0.95 / 1.05).abs() < 1e-14 && a.im == 0.0);
        assert!((b.re - 0.1 / 1.05).abs() < 1e-14);
    }

    #[test]
    fn zoh_scalar_closed_form() {
        let d = discretize(&scalar(-1.0, 0.1), Discretization::Zoh).unwrap();
        let (a, b) = abar_bbar(&d);
        assert!((a.re - (-0.1f64).exp()).abs() < 1e-15);
        assert!((b.re - (1.0 - (-0.1f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn vanishing_step_tends_to_identity() {
        for method in [Discretization::Bilinear, Discretization::Zoh] {
            let d = discretize(&scalar(-1.0, 1e-12), method).unwrap();
            let (a, b) = abar_bbar(&d);
            assert!((a - 1.0).norm() < 1e-11);
            assert!(b.norm() < 1e-11);
        }
    }

    #[test]
    fn bilinear_singularity_reported() {
        // 1 - dt*lambda/2 = 0 at lambda = 2/dt
        let err = discretize(&scalar(20.0, 0.1), Discretization::Bilinear).unwrap_err();
        assert!(matches!(err, SsmError::BilinearSingular(_)));
    }

    #[test]
    fn zoh_rejected_for_dplr() {
        let ssm = super::super::init_ssm(super::super::Variant::S4, 4, 1, 0).unwrap();
        assert_eq!(
            discretize(&ssm, Discretization::Zoh).unwrap_err(),
            SsmError::ZohNeedsDiagonal
        );
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let l = C64::new(-0.7, 2.3);
        let dt = 0.13;
        let h = 1e-6;
        for method in [Discretization::Bilinear, Discretization::Zoh] {
            let s = mode_step(l, dt, method).unwrap();
            let lp = mode_step(l + h, dt, method).unwrap();
            let lm = mode_step(l - h, dt, method).unwrap();
            let tp = mode_step(l, dt + h, method).unwrap();
            let tm = mode_step(l, dt - h, method).unwrap();
            assert!(((lp.z - lm.z) / (2.0 * h) - s.dz_dl).norm() < 1e-7);
            assert!(((lp.f - lm.f) / (2.0 * h) - s.df_dl).norm() < 1e-7);
            assert!(((tp.z - tm.z) / (2.0 * h) - s.dz_ddt).norm() < 1e-7);
            assert!(((tp.f - tm.f) / (2.0 * h) - s.df_ddt).norm() < 1e-7);
        }
    }
}
