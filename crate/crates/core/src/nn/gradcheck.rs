//! Central finite-difference verification of analytic gradients (64-bit only).

use crate::error::{Error, Result};
use crate::nn::param::Param;
use crate::tensor::Tensor;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// A scalar loss over an input tensor and a set of parameters.
pub trait Objective {
    fn loss(&mut self, input: &Tensor<f64>) -> Result<f64>;

    /// Evaluates the loss, leaves fresh parameter gradients in place and returns the
    /// gradient with respect to `input`.
    fn loss_and_grad(&mut self, input: &Tensor<f64>) -> Result<(f64, Tensor<f64>)>;

    fn params_mut(&mut self) -> Vec<&mut Param<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Location of the worst disagreement, e.g. `param[2][17]` or `input[5]`.
    pub worst: String,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares every parameter and input gradient of `obj` against central differences.
pub fn grad_check(obj: &mut dyn Objective, input: &Tensor<f64>) -> Result<GradCheckReport> {
    for p in obj.params_mut() {
        p.zero_grad();
    }
    let (_, grad_input) = obj.loss_and_grad(input)?;
    let analytic: Vec<Vec<f64>> = obj
        .params_mut()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();
    if !grad_input.is_finite() || analytic.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite analytic gradient".into()));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |err: f64, at: String| {
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst = at;
        }
    };

    for (pi, grads) in analytic.iter().enumerate() {
        for (ei, &a) in grads.iter().enumerate() {
            let original = obj.params_mut()[pi].value.data()[ei];
            obj.params_mut()[pi].value.data_mut()[ei] = original + STEP;
            let plus = obj.loss(input)?;
            obj.params_mut()[pi].value.data_mut()[ei] = original - STEP;
            let minus = obj.loss(input)?;
            obj.params_mut()[pi].value.data_mut()[ei] = original;
            let numeric = (plus - minus) / (2.0 * STEP);
            if !numeric.is_finite() {
                return Err(Error::Numeric(format!("non-finite difference at param[{pi}][{ei}]")));
            }
            record(relative_error(a, numeric), format!("param[{pi}][{ei}]"));
        }
    }

    let mut x = input.clone();
    for (i, &a) in grad_input.data().iter().enumerate() {
        let original = x.data()[i];
        x.data_mut()[i] = original + STEP;
        let plus = obj.loss(&x)?;
        x.data_mut()[i] = original - STEP;
        let minus = obj.loss(&x)?;
        x.data_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * STEP);
        if !numeric.is_finite() {
            return Err(Error::Numeric(format!("non-finite difference at input[{i}]")));
        }
        record(relative_error(a, numeric), format!("input[{i}]"));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f(w, x) = sum(w * x^2)
    struct Quadratic {
        w: Param<f64>,
        wrong: bool,
    }

    impl Objective for Quadratic {
        fn loss(&mut self, input: &Tensor<f64>) -> Result<f64> {
            Ok(self
                .w
                .value
                .data()
                .iter()
                .zip(input.data())
                .map(|(w, x)| w * x * x)
                .sum())
        }

        fn loss_and_grad(&mut self, input: &Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
            let l = self.loss(input)?;
            let gw: Vec<f64> = input.data().iter().map(|x| x * x).collect();
            self.w.accumulate(&gw)?;
            let k = if self.wrong { 3.0 } else { 2.0 };
            let gx = self
                .w
                .value
                .data()
                .iter()
                .zip(input.data())
                .map(|(w, x)| k * w * x)
                .collect();
            Ok((l, Tensor::from_vec(input.shape(), gx)?))
        }

        fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
            vec![&mut self.w]
        }
    }

    #[test]
    fn accepts_correct_and_flags_wrong_gradients() {
        let x = Tensor::from_vec(&[3], vec![0.5, -1.5, 2.0]).unwrap();
        let mut ok = Quadratic {
            w: Param::new(Tensor::from_vec(&[3], vec![1.0, 2.0, -0.5]).unwrap()),
            wrong: false,
        };
        let r = grad_check(&mut ok, &x).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 6);

        let mut bad = Quadratic {
            w: Param::new(Tensor::from_vec(&[3], vec![1.0, 2.0, -0.5]).unwrap()),
            wrong: true,
        };
        let r = grad_check(&mut bad, &x).unwrap();
        assert!(r.max_rel_error > 0.3);
        assert!(r.worst.starts_with("input"));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
