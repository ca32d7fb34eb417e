use crate::error::{Error, Result};
use crate::tensor::{kernels, Real, Var};

fn check_normalized<S: Real>(v: &Var<'_, S>, which: &str) -> Result<()> {
    let value = v.value();
    let (_, cols) = value.rows_cols();
    for (r, row) in value.data().chunks(cols).enumerate() {
        let lse = kernels::logsumexp(row).f64();
        if lse.abs() > 1e-4 {
            return Err(Error::contract(format!(
                "{which} row {r} is not a log-distribution (logsumexp {lse:.3e})"
            )));
        }
    }
    Ok(())
}

/// `KL(sg(target) || model)` summed over frames: the target side is
/// detached, so only `model` receives gradient.
fn stopped_kl<'g, S: Real>(target: &Var<'g, S>, model: &Var<'g, S>) -> Result<Var<'g, S>> {
    let target = target.detach();
    target.exp()?.mul(&target.sub(model)?)?.sum()
}

/// Symmetric consistency loss between two views' frame log-posteriors:
/// `1/2 * sum_t [KL(sg(p_b) || p_a) + KL(sg(p_a) || p_b)]`.
pub fn cr_kl<'g, S: Real>(logp_a: &Var<'g, S>, logp_b: &Var<'g, S>) -> Result<Var<'g, S>> {
    if logp_a.shape() != logp_b.shape() {
        return Err(Error::dim(format!(
            "consistency views {:?} and {:?}",
            logp_a.shape(),
            logp_b.shape()
        )));
    }
    check_normalized(logp_a, "view a")?;
    check_normalized(logp_b, "view b")?;
    let toward_b = stopped_kl(logp_b, logp_a)?;
    let toward_a = stopped_kl(logp_a, logp_b)?;
    toward_b.add(&toward_a)?.scale(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, Tensor};

    fn logs(shape: &[usize], p: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), p.iter().map(|x| x.ln()).collect()).unwrap()
    }

    #[test]
    fn closed_form_two_class() {
        let g = Graph::new();
        let a = g.leaf(logs(&[1, 2], &[0.5, 0.5]));
        let b = g.leaf(logs(&[1, 2], &[0.9, 0.1]));
        let v = cr_kl(&a, &b).unwrap().item();
        let kl_ba = 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
        let kl_ab = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((v - 0.5 * (kl_ba + kl_ab)).abs() < 1e-12);
        assert!((v - 0.4394).abs() < 1e-4);
    }

    #[test]
    fn identical_views_give_zero() {
        let g = Graph::new();
        let a = g.leaf(logs(&[2, 3], &[0.2, 0.3, 0.5, 0.6, 0.3, 0.1]));
        assert_eq!(cr_kl(&a, &a).unwrap().item(), 0.0);
    }

    #[test]
    fn symmetric() {
        let g = Graph::new();
        let a = g.leaf(logs(&[1, 3], &[0.2, 0.3, 0.5]));
        let b = g.leaf(logs(&[1, 3], &[0.7, 0.2, 0.1]));
        assert_eq!(cr_kl(&a, &b).unwrap().item(), cr_kl(&b, &a).unwrap().item());
    }

    #[test]
    fn rejects_unnormalized_rows() {
        let g = Graph::new();
        let a = g.leaf(logs(&[1, 2], &[0.5, 0.6]));
        let b = g.leaf(logs(&[1, 2], &[0.5, 0.5]));
        assert!(matches!(cr_kl(&a, &b), Err(Error::Contract(_))));
    }

    #[test]
    fn stopped_side_gets_no_gradient() {
        let g = Graph::new();
        let a = g.leaf(logs(&[1, 3], &[0.2, 0.3, 0.5]));
        let b = g.leaf(logs(&[1, 3], &[0.7, 0.2, 0.1]));
        stopped_kl(&b, &a).unwrap().backward().unwrap();
        assert!(b.grad().is_none());
        let ga = a.grad().unwrap().to_f64_vec();
        for (x, p) in ga.iter().zip([0.7, 0.2, 0.1]) {
            assert!((x + p).abs() < 1e-12);
        }
    }
}
