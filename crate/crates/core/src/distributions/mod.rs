//! Special functions, samplers, reparameterization gradients and the
//! Dirichlet KL divergence.

mod gamma;
mod gumbel;
mod kl;
mod noise;
pub mod special;

pub use gamma::{
    dirichlet_implicit_grad, dirichlet_implicit_grad_log, dirichlet_sample,
    gamma_ln_shape_derivative, gamma_sample, gamma_sample_ln, DirichletSample, MIN_CONCENTRATION,
};
pub use gumbel::{gumbel_softmax_backward, gumbel_softmax_sample, gumbel_softmax_with, sample_gumbel};
pub(crate) use gumbel::check_temperature;
pub use kl::{kl_dirichlet, kl_dirichlet_grad};
pub use noise::{BaseNoise, StreamId};
pub use special::{digamma, lgamma, trigamma};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Strictly positive Dirichlet concentration vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletParams<S> {
    pub concentration: Vec<S>,
}

impl<S: Scalar> DirichletParams<S> {
    pub fn new(concentration: Vec<S>) -> Result<Self> {
        if concentration.is_empty() {
            return Err(Error::Domain("Dirichlet needs at least one component".into()));
        }
        if let Some(bad) = concentration.iter().find(|c| !(**c > S::zero() && c.is_finite())) {
            return Err(Error::Domain(format!(
                "Dirichlet concentration must be positive and finite, got {bad}"
            )));
        }
        Ok(Self { concentration })
    }

    pub fn len(&self) -> usize {
        self.concentration.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concentration.is_empty()
    }

    pub fn total(&self) -> S {
        self.concentration.iter().fold(S::zero(), |a, &b| a + b)
    }

    /// Log density at a point of the open simplex given as `ln θ`.
    pub fn log_density(&self, log_theta: &[S]) -> S {
        use special::lgamma_unchecked;
        let mut lp = lgamma_unchecked(self.total());
        for (&a, &l) in self.concentration.iter().zip(log_theta) {
            lp += (a - S::one()) * l - lgamma_unchecked(a);
        }
        lp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_concentration() {
        assert!(DirichletParams::<f64>::new(vec![]).is_err());
        assert!(DirichletParams::new(vec![1.0, 0.0]).is_err());
        assert!(DirichletParams::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn uniform_density() {
        // Dir(1,1,1) is uniform on the 2-simplex with density Γ(3) = 2
        let p = DirichletParams::new(vec![1.0_f64; 3]).unwrap();
        let lt = [0.2_f64.ln(), 0.3_f64.ln(), 0.5_f64.ln()];
        assert!((p.log_density(&lt) - 2f64.ln()).abs() < 1e-14);
    }
}
