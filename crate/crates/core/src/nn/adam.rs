use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::param::Param;
use crate::tensor::Scalar;

/// Adam hyper-parameters plus the global update counter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        OptimizerConfig {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate > 0.0)
            || !in_unit(self.beta1)
            || !in_unit(self.beta2)
            || !(self.epsilon > 0.0)
        {
            return Err(invalid!("invalid optimizer configuration {self:?}"));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update over `params`; increments `cfg.step`.
///
/// Every parameter must carry a gradient produced since the previous update.
pub fn adam_step<T: Scalar>(params: &mut [&mut Param<T>], cfg: &mut OptimizerConfig) -> Result<()> {
    cfg.validate()?;
    if let Some(pos) = params.iter().position(|p| !p.has_fresh_grad()) {
        return Err(Error::Contract(format!(
            "adam step with a stale gradient (parameter #{pos})"
        )));
    }
    cfg.step += 1;
    let t = cfg.step as i32;
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let one = T::one();
    let c1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(t));
    let c2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(t));
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let eps = T::from_f64_lossy(cfg.epsilon);
    for p in params.iter_mut() {
        let p = &mut **p;
        let grad = p.grad.data();
        let m = p.first_moment.data_mut();
        for (mi, &g) in m.iter_mut().zip(grad) {
            *mi = b1 * *mi + (one - b1) * g;
        }
        let v = p.second_moment.data_mut();
        for (vi, &g) in v.iter_mut().zip(grad) {
            *vi = b2 * *vi + (one - b2) * g * g;
        }
        let m = p.first_moment.data();
        let v = p.second_moment.data();
        let values = p.value.data_mut();
        for ((w, &mi), &vi) in values.iter_mut().zip(m).zip(v) {
            let mh = mi / c1;
            let vh = vi / c2;
            *w -= lr * mh / (vh.sqrt() + eps);
        }
        p.mark_consumed();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn param(values: &[f64]) -> Param<f64> {
        Param::new(Tensor::from_vec(&[values.len()], values.to_vec()).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut p = param(&[1.0, -2.0]);
        let mut cfg = OptimizerConfig::with_learning_rate(0.1);
        p.accumulate(&[0.5, 0.5]).unwrap();
        adam_step(&mut [&mut p], &mut cfg).unwrap();
        let m_before = p.first_moment.clone();
        let v_before = p.second_moment.clone();
        p.zero_grad();
        p.accumulate(&[0.0, 0.0]).unwrap();
        adam_step(&mut [&mut p], &mut cfg).unwrap();
        for (a, b) in p.first_moment.data().iter().zip(m_before.data()) {
            assert!((a - 0.9 * b).abs() < 1e-15);
        }
        for (a, b) in p.second_moment.data().iter().zip(v_before.data()) {
            assert!((a - 0.999 * b).abs() < 1e-15);
        }

        let mut q = param(&[3.0]);
        let mut cfg = OptimizerConfig::default();
        q.accumulate(&[0.0]).unwrap();
        adam_step(&mut [&mut q], &mut cfg).unwrap();
        assert_eq!(q.value.data(), &[3.0]);
        assert_eq!(cfg.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        let mut p = param(&[0.0, 0.0, 0.0]);
        let mut cfg = OptimizerConfig::with_learning_rate(1e-3);
        p.accumulate(&[2.5, -1e-3, 40.0]).unwrap();
        adam_step(&mut [&mut p], &mut cfg).unwrap();
        let expect = [-1e-3, 1e-3, -1e-3];
        for (v, e) in p.value.data().iter().zip(expect) {
            assert!((v - e).abs() < 1e-3 * 1e-4, "{v} vs {e}");
        }
    }

    #[test]
    fn stale_gradient_is_a_contract_violation() {
        let mut p = param(&[1.0]);
        let mut cfg = OptimizerConfig::default();
        assert!(matches!(
            adam_step(&mut [&mut p], &mut cfg),
            Err(Error::Contract(_))
        ));
        p.accumulate(&[1.0]).unwrap();
        adam_step(&mut [&mut p], &mut cfg).unwrap();
        // consumed: a second update without a new backward pass fails
        assert!(adam_step(&mut [&mut p], &mut cfg).is_err());
        assert_eq!(cfg.step, 1);
    }

    #[test]
    fn step_counter_increases_by_one() {
        let mut p = param(&[1.0]);
        let mut cfg = OptimizerConfig::default();
        for i in 1..=5 {
            p.zero_grad();
            p.accumulate(&[0.1]).unwrap();
            adam_step(&mut [&mut p], &mut cfg).unwrap();
            assert_eq!(cfg.step, i);
        }
    }
}
