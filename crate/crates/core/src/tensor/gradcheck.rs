use super::{Graph, Tensor, TensorError, Var};

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the reverse-mode gradient of `f` at `params` with central
/// differences `(f(p + eps e_i) - f(p - eps e_i)) / (2 eps)` for every
/// coordinate. Relative error uses `max(|analytic|, |numeric|, 1e-8)` as the
/// denominator; the worst coordinate is reported.
pub fn finite_difference_check<F, E>(
    f: F,
    params: &Tensor,
    eps: f64,
) -> std::result::Result<GradCheckReport, E>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> std::result::Result<Var<'g>, E>,
    E: From<TensorError>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(TensorError::Invalid {
            op: "finite_difference_check",
            msg: format!("eps must be positive, got {eps}"),
        }
        .into());
    }

    let analytic = {
        let g = Graph::new();
        let p = g.param(params.clone());
        let out = f(&g, p)?;
        let grads = g.backward(out)?;
        grads
            .get(&p)
            .cloned()
            .ok_or_else(|| TensorError::Internal("parameter leaf lost its gradient".into()))?
    };

    let eval = |values: Vec<f64>| -> std::result::Result<f64, E> {
        let g = Graph::new();
        let p = g.constant(Tensor::new(params.shape().to_vec(), values)?);
        let out = f(&g, p)?;
        Ok(out.value().item()?)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let base = params.to_vec();
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        let mut minus = base.clone();
        minus[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_error || i == 0 {
            report = GradCheckReport {
                max_rel_error: rel.max(report.max_rel_error),
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let p = Tensor::from_vec(vec![0.3, -1.2, 2.0, 0.0]);
        let r = finite_difference_check::<_, TensorError>(|_, x| Ok(x.square().sum()), &p, 1e-5)
            .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn zero_eps_rejected() {
        let p = Tensor::from_vec(vec![1.0]);
        let r = finite_difference_check::<_, TensorError>(|_, x| Ok(x.sum()), &p, 0.0);
        assert!(r.is_err());
    }

    #[test]
    fn smooth_composite() {
        let p = Tensor::from_vec(vec![0.4, -0.9, 1.3]);
        let r = finite_difference_check::<_, TensorError>(
            |g, x| {
                let w = g.constant(Tensor::from_vec(vec![1.5, -0.5, 0.25]));
                let h = x.mul(w)?.gelu().tanh().add_scalar(2.0).ln();
                let s = x.sigmoid().softplus().exp();
                Ok(h.add(s)?.sum())
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
