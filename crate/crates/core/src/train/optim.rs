use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::model::{ParamGroup, ParamStore};
use crate::tensor::Tensor;

/// Adam with decoupled weight decay. The `Ssm` group uses its own learning
/// rate and is never decayed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub ssm_learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub grad_clip: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-3,
            ssm_learning_rate: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    cfg: OptimizerConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(cfg: OptimizerConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        AdamW {
            cfg,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update from `grads` (store order). Returns the gradient norm
    /// before clipping.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<f64> {
        if grads.len() != self.m.len() || grads.len() != params.len() {
            return Err(TrainError::Optimizer(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        let norm = grads
            .iter()
            .flat_map(|g| g.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(TrainError::Optimizer("non-finite gradient".into()));
        }
        let clip = if self.cfg.grad_clip > 0.0 && norm > self.cfg.grad_clip {
            self.cfg.grad_clip / norm
        } else {
            1.0
        };
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            if p.value.shape() != g.shape() {
                return Err(TrainError::Optimizer(format!(
                    "gradient shape mismatch for {}",
                    p.name
                )));
            }
            let (lr, wd) = match p.group {
                ParamGroup::Standard => (c.learning_rate, c.weight_decay),
                ParamGroup::Ssm => (c.ssm_learning_rate, 0.0),
            };
            let mut w = p.value.to_vec();
            for i in 0..w.len() {
                let gi = g.data()[i] * clip;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                w[i] -= lr * (update + wd * w[i]);
            }
            p.value = Tensor::new(p.value.shape().to_vec(), w)?;
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_vec(vec![1.0, -2.0]), ParamGroup::Standard);
        s.add("lam", Tensor::from_vec(vec![0.5]), ParamGroup::Ssm);
        s
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut s = store();
        let before = s.flatten();
        let cfg = OptimizerConfig {
            learning_rate: 0.0,
            ssm_learning_rate: 0.0,
            ..OptimizerConfig::default()
        };
        let mut opt = AdamW::new(cfg, &s);
        let g = vec![
            Tensor::from_vec(vec![3.0, -1.0]),
            Tensor::from_vec(vec![2.0]),
        ];
        opt.step(&mut s, &g).unwrap();
        assert_eq!(s.flatten(), before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Bias-corrected first step is lr * sign(g) (up to eps), plus decay.
        let mut s = store();
        let cfg = OptimizerConfig {
            grad_clip: 0.0,
            ..OptimizerConfig::default()
        };
        let mut opt = AdamW::new(cfg.clone(), &s);
        let g = vec![
            Tensor::from_vec(vec![3.0, -1.0]),
            Tensor::from_vec(vec![2.0]),
        ];
        opt.step(&mut s, &g).unwrap();
        let w = s.flatten();
        let lr = cfg.learning_rate;
        assert!((w.data()[0] - (1.0 - lr * (1.0 + 0.01))).abs() < 1e-10);
        assert!((w.data()[1] - (-2.0 + lr * (1.0 + 0.02))).abs() < 1e-10);
        assert!((w.data()[2] - (0.5 - cfg.ssm_learning_rate)).abs() < 1e-10);
    }

    #[test]
    fn clipping_scales_gradients() {
        let mut a = store();
        let mut b = store();
        let cfg = OptimizerConfig {
            grad_clip: 1.0,
            ..OptimizerConfig::default()
        };
        let mut oa = AdamW::new(cfg.clone(), &a);
        let mut ob = AdamW::new(
            OptimizerConfig {
                grad_clip: 0.0,
                ..cfg
            },
            &b,
        );
        let big = vec![
            Tensor::from_vec(vec![30.0, -10.0]),
            Tensor::from_vec(vec![20.0]),
        ];
        let small = vec![
            Tensor::from_vec(vec![0.1, 0.2]),
            Tensor::from_vec(vec![-0.3]),
        ];
        let norm = oa.step(&mut a, &big).unwrap();
        assert!((norm - 1400f64.sqrt()).abs() < 1e-12);
        oa.step(&mut a, &small).unwrap();
        let scaled: Vec<Tensor> = big.iter().map(|t| t.map(|x| x / norm)).collect();
        ob.step(&mut b, &scaled).unwrap();
        ob.step(&mut b, &small).unwrap();
        assert!(a.flatten().max_abs_diff(&b.flatten()).unwrap() < 1e-15);
        let mut c = store();
        let mut oc = AdamW::new(
            OptimizerConfig {
                grad_clip: 0.0,
                ..OptimizerConfig::default()
            },
            &c,
        );
        oc.step(&mut c, &big).unwrap();
        oc.step(&mut c, &small).unwrap();
        assert!(a.flatten().max_abs_diff(&c.flatten()).unwrap() > 1e-6);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut s = store();
        let mut opt = AdamW::new(OptimizerConfig::default(), &s);
        let g = vec![
            Tensor::from_vec(vec![f64::NAN, 0.0]),
            Tensor::from_vec(vec![0.0]),
        ];
        assert!(opt.step(&mut s, &g).is_err());
    }
}
