use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient estimate of a scalar function,
/// `(f(x + εe_i) − f(x − εe_i)) / 2ε` for every coordinate.
pub fn numeric_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f32) -> Result<Tensor> {
    numeric_grad_at(f, x, eps, 0..x.numel())
}

/// Like [`numeric_grad`] but only for the listed coordinates; the others
/// are left at zero.
pub fn numeric_grad_at(
    f: impl Fn(&Tensor) -> f64,
    x: &Tensor,
    eps: f32,
    coords: impl IntoIterator<Item = usize>,
) -> Result<Tensor> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        // the perturbation actually applied after f32 rounding
        let h = ((orig + eps) as f64) - ((orig - eps) as f64);
        grad.data_mut()[i] = ((plus - minus) / h) as f32;
    }
    Ok(grad)
}

/// Relative error used by gradient checks: `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f32, numeric: f32, floor: f32) -> f32 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::new(&[4], vec![0.3, -1.0, 2.0, 7.5]).unwrap();
        let g = numeric_grad(|t| t.data().iter().map(|&v| v as f64).sum(), &x, 1e-2).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-5, "{v}");
        }
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::new(&[1], vec![3.0]).unwrap();
        let g = numeric_grad(|t| (t.data()[0] as f64).powi(2), &x, 1e-3).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-5, "{}", g.data()[0]);
    }

    #[test]
    fn nonpositive_eps_rejected() {
        let x = Tensor::new(&[1], vec![3.0]).unwrap();
        assert!(numeric_grad(|_| 0.0, &x, 0.0).is_err());
    }
}
