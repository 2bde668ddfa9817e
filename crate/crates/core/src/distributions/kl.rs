use super::special::{digamma_unchecked, lgamma_unchecked, trigamma_unchecked};
use super::DirichletParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_dims<S: Scalar>(q: &DirichletParams<S>, p: &DirichletParams<S>) -> Result<()> {
    if q.len() == p.len() {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "KL between Dirichlets of dimension {} and {}",
            q.len(),
            p.len()
        )))
    }
}

/// Closed-form `KL(Dir(q) ‖ Dir(p))`.
pub fn kl_dirichlet<S: Scalar>(q: &DirichletParams<S>, p: &DirichletParams<S>) -> Result<S> {
    check_dims(q, p)?;
    let q_sum = q.total();
    let p_sum = p.total();
    let psi_q_sum = digamma_unchecked(q_sum);
    let mut kl = lgamma_unchecked(q_sum) - lgamma_unchecked(p_sum);
    for (&qi, &pi) in q.concentration.iter().zip(&p.concentration) {
        kl += lgamma_unchecked(pi) - lgamma_unchecked(qi)
            + (qi - pi) * (digamma_unchecked(qi) - psi_q_sum);
    }
    Ok(kl)
}

/// Gradients of [`kl_dirichlet`] with respect to `q` and `p`.
pub fn kl_dirichlet_grad<S: Scalar>(
    q: &DirichletParams<S>,
    p: &DirichletParams<S>,
) -> Result<(Vec<S>, Vec<S>)> {
    check_dims(q, p)?;
    let q_sum = q.total();
    let psi_q_sum = digamma_unchecked(q_sum);
    let psi_p_sum = digamma_unchecked(p.total());
    let tri_q_sum = trigamma_unchecked(q_sum);
    let excess: S = q
        .concentration
        .iter()
        .zip(&p.concentration)
        .fold(S::zero(), |a, (&qi, &pi)| a + (qi - pi));
    let mut grad_q = Vec::with_capacity(q.len());
    let mut grad_p = Vec::with_capacity(q.len());
    for (&qi, &pi) in q.concentration.iter().zip(&p.concentration) {
        grad_q.push((qi - pi) * trigamma_unchecked(qi) - tri_q_sum * excess);
        grad_p.push(digamma_unchecked(pi) - psi_p_sum - digamma_unchecked(qi) + psi_q_sum);
    }
    Ok((grad_q, grad_p))
}
