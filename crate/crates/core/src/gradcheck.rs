//! Finite-difference validation of analytic gradients.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Compares the tape gradient of a scalar-valued function against central
/// finite differences at `step`, returning the worst relative error
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)` over all
/// coordinates of `point`.
pub fn grad_check<S, F>(f: F, point: &Tensor<S>, step: f64) -> Result<f64>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &Tensor<S>) -> Result<Tensor<S>>,
{
    let mut tape = Tape::active();
    let x = tape.leaf(point, true);
    let loss = f(&mut tape, &x)?;
    if loss.numel() != 1 {
        return Err(Error::contract("grad_check expects a scalar-valued function"));
    }
    let grads = tape.backward(&loss)?;
    let analytic = grads
        .get(&x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape().to_vec()));

    let eval = |values: Vec<S>| -> Result<f64> {
        let t = Tensor::from_parts(point.shape().to_vec(), values);
        let mut tape = Tape::inactive();
        let x = tape.leaf(&t, false);
        Ok(f(&mut tape, &x)?.value().to_double())
    };

    let h = S::from_lit(step);
    let mut worst = 0.0f64;
    for i in 0..point.numel() {
        let mut plus = point.values().to_vec();
        plus[i] = plus[i] + h;
        let mut minus = point.values().to_vec();
        minus[i] = minus[i] - h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic.values()[i].to_double();
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact_under_central_differences() {
        // f(x) = 0.5 * ||x||^2 has gradient x; central differences are exact
        // for quadratics up to rounding.
        let point = Tensor::from_vec(vec![4], vec![0.7, -1.9, 0.2, 1.1]).unwrap();
        let err = grad_check(
            |tape, x| {
                let sq = tape.square(x)?;
                let s = tape.sum_all(&sq)?;
                tape.mul(&Tensor::scalar(0.5), &s)
            },
            &point,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn softplus_affine_composition_passes() {
        let point = Tensor::from_vec(vec![3], vec![0.3, -0.8, 1.4]).unwrap();
        let w = Tensor::from_vec(vec![3], vec![1.2, -0.4, 0.9]).unwrap();
        let err = grad_check(
            |tape, x| {
                let wx = tape.mul(x, &w)?;
                let sp = tape.softplus(&wx)?;
                tape.sum_all(&sp)
            },
            &point,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn broken_adjoint_is_detected() {
        // negative control: forward is x^3 but the registered derivative is
        // the one for x^2.
        let point = Tensor::from_vec(vec![3], vec![0.9, -1.2, 0.5]).unwrap();
        let err = grad_check(
            |tape, x| {
                let y = tape.custom_unary(x, |v| v * v * v, |v| 2.0 * v)?;
                tape.sum_all(&y)
            },
            &point,
            1e-4,
        )
        .unwrap();
        assert!(err > 1e-2, "broken adjoint slipped through: err = {err}");
    }

    #[test]
    fn non_scalar_function_rejected() {
        let point = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let res = grad_check(|tape, x| tape.square(x), &point, 1e-4);
        assert!(res.is_err());
    }
}
