use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::hippo::hippo_normal_part;
use super::{stored_modes, ContinuousRepr, ContinuousSsm, Result, SsmError, Variant, C64};

const LOG_DT_MIN: f64 = -3.0 * std::f64::consts::LN_10; // ln 0.001
const LOG_DT_MAX: f64 = -std::f64::consts::LN_10; // ln 0.1

/// S4D-Lin eigenvalues `-1/2 + i pi n` for `n = 0..count`.
pub fn s4d_lin(count: usize) -> Vec<C64> {
    (0..count)
        .map(|n| C64::new(-0.5, std::f64::consts::PI * n as f64))
        .collect()
}

/// Diagonal-plus-low-rank form of HiPPO-LegS of size `n`: the
/// `ceil(n/2)` eigenvalues of `A + P P^T` with nonnegative imaginary part
/// (largest first) and `p = V^H P` in the matching eigenbasis.
pub fn hippo_dplr(n: usize) -> Result<(Vec<C64>, Vec<C64>)> {
    let s = hippo_normal_part(n)?;
    // S is real skew-symmetric, so -iS is Hermitian with eigenvalues w where
    // S v = i w v.
    let herm: DMatrix<C64> = s.map(|x| C64::new(0.0, -x));
    let eig = herm.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (_, p_real) = super::hippo_legs(n)?;
    let p_c = p_real.map(|x| C64::new(x, 0.0));
    let m = stored_modes(n);
    let mut lambda = Vec::with_capacity(m);
    let mut p = Vec::with_capacity(m);
    for &j in order.iter().take(m) {
        let v = eig.eigenvectors.column(j);
        lambda.push(C64::new(-0.5, eig.eigenvalues[j].max(0.0)));
        p.push(v.dotc(&p_c));
    }
    Ok((lambda, p))
}

fn complex_normal(rng: &mut ChaCha8Rng, var: f64) -> C64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

/// Random stable system of state dimension `n` over `h` channels.
///
/// S4 uses the HiPPO-LegS eigenbasis, S4D and S5 the S4D-Lin spectrum.
/// B and C entries are circular complex Gaussians with unit variance, except
/// the S5 input matrix, whose variance is `1/H`. D starts at one.
pub fn init_ssm(variant: Variant, n: usize, h: usize, seed: u64) -> Result<ContinuousSsm> {
    if n == 0 {
        return Err(SsmError::ZeroStateDim);
    }
    if h == 0 {
        return Err(SsmError::ZeroChannels);
    }
    let m = stored_modes(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |count: usize, var: f64, rng: &mut ChaCha8Rng| -> Vec<C64> {
        (0..count).map(|_| complex_normal(rng, var)).collect()
    };
    let (repr, dt_count) = match variant {
        Variant::S4 => {
            let (lam, p) = hippo_dplr(n)?;
            let b = draw(h * m, 1.0, &mut rng);
            let c = draw(h * m, 1.0, &mut rng);
            (
                ContinuousRepr::Dplr {
                    lambda: lam.repeat(h),
                    p: p.repeat(h),
                    b,
                    c,
                },
                h,
            )
        }
        Variant::S4d => {
            let b = draw(h * m, 1.0, &mut rng);
            let c = draw(h * m, 1.0, &mut rng);
            (
                ContinuousRepr::Diagonal {
                    lambda: s4d_lin(m).repeat(h),
                    b,
                    c,
                },
                h,
            )
        }
        Variant::S5 => {
            let b = draw(m * h, 1.0 / h as f64, &mut rng);
            let c = draw(h * m, 1.0, &mut rng);
            (
                ContinuousRepr::Mimo {
                    lambda: s4d_lin(m),
                    b,
                    c,
                },
                1,
            )
        }
    };
    let log_dt = (0..dt_count)
        .map(|_| rng.random_range(LOG_DT_MIN..LOG_DT_MAX))
        .collect();
    let ssm = ContinuousSsm {
        repr,
        modes: m,
        channels: h,
        d: vec![1.0; h],
        log_dt,
        conjugate_pairs: true,
    };
    ssm.validate()?;
    Ok(ssm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn s4d_lin_three() {
        let l = s4d_lin(3);
        assert_eq!(
            l,
            vec![
                C64::new(-0.5, 0.0),
                C64::new(-0.5, PI),
                C64::new(-0.5, 2.0 * PI)
            ]
        );
    }

    #[test]
    fn all_variants_stable_and_deterministic() {
        for v in [Variant::S4, Variant::S4d, Variant::S5] {
            let a = init_ssm(v, 16, 3, 7).unwrap();
            assert!(a.lambda().iter().all(|l| l.re == -0.5));
            assert_eq!(a, init_ssm(v, 16, 3, 7).unwrap());
            assert_ne!(a, init_ssm(v, 16, 3, 8).unwrap());
            for &ld in &a.log_dt {
                assert!((LOG_DT_MIN..LOG_DT_MAX).contains(&ld));
            }
        }
    }

    #[test]
    fn dplr_reconstructs_hippo_spectrum() {
        // Eigenvalues of the full normal part come in conjugate pairs; the
        // kept half must be the nonnegative-frequency ones.
        let n = 6;
        let (lam, p) = hippo_dplr(n).unwrap();
        assert_eq!(lam.len(), 3);
        for w in lam.windows(2) {
            assert!(w[0].im >= w[1].im);
        }
        assert!(lam.iter().all(|l| l.im > 0.0));
        assert!(p.iter().all(|z| z.norm().is_finite()));
    }
}
