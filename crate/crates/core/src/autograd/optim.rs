use crate::autograd::param::ParamStore;
use crate::error::{invalid, Result};

/// SGD with momentum and L2 weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl OptimizerConfig {
    pub fn new(learning_rate: f32) -> Self {
        OptimizerConfig {
            learning_rate,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return invalid(format!("learning rate {} must be >= 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid(format!("momentum {} must be in [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return invalid(format!("weight decay {} must be >= 0", self.weight_decay));
        }
        Ok(())
    }
}

/// `v <- momentum * v + grad + weight_decay * value; value <- value - lr * v`,
/// then zeroes the gradients. Non-trainable entries are left alone.
pub fn sgd_step(store: &mut ParamStore, cfg: &OptimizerConfig) -> Result<()> {
    cfg.validate()?;
    let (lr, mu, wd) = (cfg.learning_rate as f64, cfg.momentum as f64, cfg.weight_decay as f64);
    for p in store.iter_mut().filter(|p| p.trainable) {
        let value = p.value.data_mut();
        let grad = p.grad.data_mut();
        let buf = p.momentum.data_mut();
        for ((x, g), v) in value.iter_mut().zip(grad.iter_mut()).zip(buf.iter_mut()) {
            let nv = mu * *v as f64 + *g as f64 + wd * *x as f64;
            *v = nv as f32;
            *x = (*x as f64 - lr * nv) as f32;
            *g = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with(value: f32, grad: f32) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::full([3, 1, 1, 1], value), true).unwrap();
        s.get_mut(id).grad = Tensor::full([3, 1, 1, 1], grad);
        s
    }

    #[test]
    fn zero_lr_keeps_values_but_moves_momentum() {
        let mut s = store_with(1.5, 2.0);
        let cfg = OptimizerConfig {
            learning_rate: 0.0,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        sgd_step(&mut s, &cfg).unwrap();
        let p = s.by_name("w").unwrap();
        assert!(p.value.data().iter().all(|&v| v == 1.5));
        assert!(p.momentum.data().iter().all(|&v| v == 2.0));
        assert!(p.grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn plain_sgd() {
        let mut s = store_with(1.0, 0.5);
        let cfg = OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        sgd_step(&mut s, &cfg).unwrap();
        assert!(s
            .by_name("w")
            .unwrap()
            .value
            .data()
            .iter()
            .all(|&v| (v - 0.95).abs() < 1e-7));
    }

    #[test]
    fn two_momentum_steps_follow_recurrence() {
        let (lr, g) = (0.01f64, 0.3f64);
        let mut s = store_with(0.0, g as f32);
        let cfg = OptimizerConfig {
            learning_rate: lr as f32,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        sgd_step(&mut s, &cfg).unwrap();
        let id = s.id("w").unwrap();
        s.get_mut(id).grad = Tensor::full([3, 1, 1, 1], g as f32);
        sgd_step(&mut s, &cfg).unwrap();
        // v1 = g, v2 = 0.9 g + g
        let expected = -lr * (g + 1.9 * g);
        for &v in s.value(id).data() {
            assert!((v as f64 - expected).abs() < 1e-7, "{v} vs {expected}");
        }
    }

    #[test]
    fn non_trainable_untouched_and_config_checked() {
        let mut s = ParamStore::new();
        s.add("running_mean", Tensor::full([2, 1, 1, 1], 3.0), false).unwrap();
        sgd_step(&mut s, &OptimizerConfig::new(1.0)).unwrap();
        assert!(s
            .by_name("running_mean")
            .unwrap()
            .value
            .data()
            .iter()
            .all(|&v| v == 3.0));
        let bad = OptimizerConfig {
            momentum: 1.0,
            ..OptimizerConfig::new(0.1)
        };
        assert!(sgd_step(&mut s, &bad).is_err());
        assert!(OptimizerConfig::new(-0.1).validate().is_err());
    }
}
