//! Central-difference gradient verification.

use super::tape::{Tape, ValueId};
use super::tensor::Tensor;
use super::AutodiffError;

/// Relative error between an analytic and a numeric derivative:
/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (1e-8_f64).max(analytic.abs() + numeric.abs())
}

/// Compare the tape gradient of a scalar-valued function against central
/// finite differences, coordinate by coordinate. Returns the worst relative
/// error. `f` must be deterministic.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, ValueId) -> Result<ValueId, AutodiffError>,
{
    assert!(eps > 0.0, "grad_check requires a positive eps");

    let mut probe = x.clone();
    probe.set_requires_grad(true);
    let mut tape = Tape::new();
    let id = tape.leaf(&probe);
    let loss = f(&mut tape, id)?;
    tape.backward(loss)?;
    let analytic: Vec<f64> = tape
        .grad(id)
        .map(|g| g.to_vec())
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |values: Vec<f64>| -> Result<f64, AutodiffError> {
        let probe = Tensor::new(x.shape(), values)?;
        let mut tape = Tape::new();
        let id = tape.leaf(&probe);
        let loss = f(&mut tape, id)?;
        tape.scalar_value(loss)
    };

    let mut worst = 0.0_f64;
    for k in 0..x.numel() {
        let mut plus = x.values().to_vec();
        plus[k] += eps;
        let mut minus = x.values().to_vec();
        minus[k] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[k], numeric));
    }
    Ok(worst)
}

/// Multi-tensor variant: `f` evaluates a scalar loss from a full parameter
/// set, `analytic` holds one gradient vector per tensor (zeros where the
/// tape produced none). Used for end-to-end objective checks.
pub fn grad_check_many<F>(
    f: F,
    tensors: &[Tensor],
    analytic: &[Vec<f64>],
    eps: f64,
) -> Result<f64, AutodiffError>
where
    F: Fn(&[Tensor]) -> Result<f64, AutodiffError>,
{
    assert!(eps > 0.0, "grad_check_many requires a positive eps");
    assert_eq!(tensors.len(), analytic.len());

    let mut worst = 0.0_f64;
    for (ti, tensor) in tensors.iter().enumerate() {
        for k in 0..tensor.numel() {
            let mut shifted: Vec<Tensor> = tensors.to_vec();
            shifted[ti].values_mut()[k] += eps;
            let plus = f(&shifted)?;
            shifted[ti].values_mut()[k] -= 2.0 * eps;
            let minus = f(&shifted)?;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[ti][k], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::new(&[3], vec![0.3, -1.2, 0.7]).unwrap();
        let err = grad_check(|tape, id| tape.sum_all(id), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "sum gradient should be exact, err={err}");
    }

    #[test]
    fn quadratic_function_checks_out() {
        let x = Tensor::new(&[4], vec![0.5, -0.25, 1.5, -1.0]).unwrap();
        let err = grad_check(
            |tape, id| {
                let sq = tape.mul(id, id)?;
                tape.sum_all(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err={err}");
    }

    #[test]
    fn composite_exp_log_tanh_checks_out() {
        let x = Tensor::new(&[3], vec![0.8, 1.4, 0.2]).unwrap();
        let err = grad_check(
            |tape, id| {
                let e = tape.exp(id)?;
                let l = tape.log(e)?;
                let t = tape.unary(super::super::tape::UnaryKind::Tanh, l)?;
                tape.mean_all(t)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err={err}");
    }
}
