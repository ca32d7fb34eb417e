use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of scalar `f` at `x` with central finite
/// differences and returns `||fd - grad|| / max(||fd||, ||grad||)` in the
/// Euclidean norm, or 0 when both vanish.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: for<'g> Fn(Var<'g, f64>) -> Result<Var<'g, f64>>,
{
    if h <= 0.0 {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let graph = Graph::new();
    let leaf = graph.leaf(x.clone());
    let out = f(leaf)?;
    out.backward()?;
    let grad = leaf
        .grad()
        .map(|g| g.to_f64_vec())
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |data: Vec<f64>| -> Result<f64> {
        let g = Graph::new();
        let v = g.constant(Tensor::new(x.shape().to_vec(), data)?);
        Ok(f(v)?.item())
    };
    let base = x.to_f64_vec();
    let (mut diff, mut fd_norm, mut grad_norm) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * h);
        diff += (fd - grad[i]).powi(2);
        fd_norm += fd * fd;
        grad_norm += grad[i] * grad[i];
    }
    let scale = fd_norm.max(grad_norm).sqrt();
    Ok(if scale == 0.0 { 0.0 } else { diff.sqrt() / scale })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_exact_gradient() {
        let x = Tensor::from_f64(vec![3], &[0.3, -1.2, 2.0]).unwrap();
        let err = finite_diff_check(|v| v.sum(), &x, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn logsumexp_closed_form() {
        let x = Tensor::from_f64(vec![2], &[0.0, 0.0]).unwrap();
        let g = Graph::new();
        let v = g.leaf(x.clone());
        v.logsumexp().unwrap().sum().unwrap().backward().unwrap();
        let grad = v.grad().unwrap().to_f64_vec();
        assert!((grad[0] - 0.5).abs() < 1e-15 && (grad[1] - 0.5).abs() < 1e-15);
        let err = finite_diff_check(|v| v.logsumexp()?.sum(), &x, 1e-5).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn layernorm_then_weighted_sum() {
        // a plain sum of normalized rows is constant
        let x = Tensor::from_f64(vec![2, 4], &[0.1, 0.7, -0.4, 1.3, 2.0, -1.0, 0.5, 0.25]).unwrap();
        let w = Tensor::from_f64(vec![2, 4], &[1.0, -2.0, 0.5, 3.0, -1.0, 0.25, 2.0, 1.5]).unwrap();
        let err = finite_diff_check(
            |v| v.layernorm(1e-5)?.mul(&v.graph().constant(w.clone()))?.sum(),
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::from_f64(vec![1], &[1.0]).unwrap();
        assert!(finite_diff_check(|v| v.sum(), &x, 0.0).is_err());
    }
}
