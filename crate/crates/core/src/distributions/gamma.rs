//! Gamma and Dirichlet sampling with implicit reparameterization gradients.

use rand::distr::{Distribution, Open01};
use rand::Rng;
use rand_distr::StandardNormal;

use super::special::{digamma_unchecked, incomplete_gamma_tail, lgamma_unchecked, Tail};
use super::{BaseNoise, DirichletParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower clamp applied to concentrations before sampling.
pub const MIN_CONCENTRATION: f64 = 1e-6;

/// Draws `Gamma(shape, 1)`.
pub fn gamma_sample<S: Scalar>(shape: S, noise: &BaseNoise) -> Result<S> {
    Ok(gamma_sample_ln(shape, noise)?.exp())
}

/// Draws `ln X` for `X ~ Gamma(shape, 1)`.
///
/// Marsaglia–Tsang squeeze for `shape ≥ 1`; below that the draw for
/// `shape + 1` is scaled by `u^(1/shape)`, done in log space so tiny shapes
/// do not underflow.
pub fn gamma_sample_ln<S: Scalar>(shape: S, noise: &BaseNoise) -> Result<S> {
    if !(shape > S::zero() && shape.is_finite()) {
        return Err(Error::Domain(format!(
            "gamma shape must be positive, got {shape}"
        )));
    }
    let mut rng = noise.rng();
    if shape >= S::one() {
        Ok(marsaglia_tsang_ln(shape, &mut rng))
    } else {
        let boosted = marsaglia_tsang_ln(shape + S::one(), &mut rng);
        let u: f64 = Open01.sample(&mut rng);
        let u = u.clamp(1e-300, 1.0 - f64::EPSILON);
        Ok(boosted + S::lit(u.ln()) / shape)
    }
}

fn marsaglia_tsang_ln<S: Scalar, R: Rng + ?Sized>(shape: S, rng: &mut R) -> S {
    let d = shape - S::lit(1.0 / 3.0);
    let c = (S::lit(9.0) * d).sqrt().recip();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let x = S::lit(x);
        let v = S::one() + c * x;
        if v <= S::zero() {
            continue;
        }
        let v = v * v * v;
        let u: f64 = Open01.sample(rng);
        let u = S::lit(u);
        let x2 = x * x;
        if u < S::one() - S::lit(0.0331) * x2 * x2
            || u.ln() < S::lit(0.5) * x2 + d * (S::one() - v + v.ln())
        {
            return d.ln() + v.ln();
        }
    }
}

/// `d ln x / d shape` along the implicit reparameterization of
/// `x ~ Gamma(shape, 1)`: `−(∂F/∂shape) / (x · p(x))` with `F` the
/// regularized lower incomplete gamma and `p` the density.
///
/// `∂F/∂shape` is a central difference with step `1e-4·max(1, shape)`
/// (relative step `1e-2` below `shape = 0.01`), differencing whichever
/// tail of `F` is free of cancellation.
pub fn gamma_ln_shape_derivative<S: Scalar>(shape: S, ln_x: S) -> Result<S> {
    if !(shape > S::zero()) {
        return Err(Error::Domain(format!("gamma shape must be positive, got {shape}")));
    }
    if ln_x < S::lit(-500.0) {
        // F(shape, x) ≈ x^shape / Γ(shape + 1) as x → 0.
        return Ok(-(ln_x - digamma_unchecked(shape + S::one())) / shape);
    }
    let x = ln_x.exp();
    let step = if shape >= S::lit(0.01) {
        S::lit(1e-4) * crate::scalar::max_of(shape, S::one())
    } else {
        S::lit(1e-2) * shape
    };
    let (tail_up, up) = incomplete_gamma_tail(shape + step, x)?;
    let (tail_down, down) = incomplete_gamma_tail(shape - step, x)?;
    let dfd_shape = match (tail_up, tail_down) {
        (Tail::Lower, Tail::Lower) => (up - down) / (step + step),
        (Tail::Upper, Tail::Upper) => -(up - down) / (step + step),
        // the two evaluations straddle x = a + 1; convert to the lower tail
        _ => {
            let lower = |t: Tail, v: S| if t == Tail::Lower { v } else { S::one() - v };
            (lower(tail_up, up) - lower(tail_down, down)) / (step + step)
        }
    };
    let ln_density_times_x = shape * ln_x - x - lgamma_unchecked(shape);
    let value = -dfd_shape / ln_density_times_x.exp();
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!(
            "implicit gamma derivative not finite at shape={shape}, ln x={ln_x}"
        )))
    }
}

/// One Dirichlet draw with the unnormalized gamma variates kept for the
/// implicit gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletSample<S> {
    pub log_gamma: Vec<S>,
    pub theta: Vec<S>,
    pub log_theta: Vec<S>,
}

impl<S: Scalar> DirichletSample<S> {
    /// Builds the normalized sample from log gamma variates.
    pub fn from_log_gamma(log_gamma: Vec<S>) -> Self {
        let lse = crate::scalar::log_sum_exp(&log_gamma);
        let log_theta: Vec<S> = log_gamma.iter().map(|&l| l - lse).collect();
        let theta = log_theta.iter().map(|&l| l.exp()).collect();
        Self {
            log_gamma,
            theta,
            log_theta,
        }
    }
}

/// Draws `θ = γ / Σγ` with `γ_t ~ Gamma(ν_t)`, component `t` using the
/// child stream `t` of `noise`.
pub fn dirichlet_sample<S: Scalar>(
    params: &DirichletParams<S>,
    noise: &BaseNoise,
) -> Result<DirichletSample<S>> {
    let floor = S::lit(MIN_CONCENTRATION);
    let log_gamma = params
        .concentration
        .iter()
        .enumerate()
        .map(|(t, &nu)| gamma_sample_ln(crate::scalar::max_of(nu, floor), &noise.child(t as u64)))
        .collect::<Result<Vec<S>>>()?;
    Ok(DirichletSample::from_log_gamma(log_gamma))
}

/// Implicit reparameterization gradient `dL/dν` given `dL/dθ`.
pub fn dirichlet_implicit_grad<S: Scalar>(
    params: &DirichletParams<S>,
    sample: &DirichletSample<S>,
    upstream: &[S],
) -> Result<Vec<S>> {
    let upstream_log: Vec<S> = upstream
        .iter()
        .zip(&sample.theta)
        .map(|(&g, &th)| g * th)
        .collect();
    dirichlet_implicit_grad_log(params, sample, &upstream_log)
}

/// As [`dirichlet_implicit_grad`] but given `dL/d ln θ`, which stays finite
/// when components of θ underflow.
pub fn dirichlet_implicit_grad_log<S: Scalar>(
    params: &DirichletParams<S>,
    sample: &DirichletSample<S>,
    upstream_log: &[S],
) -> Result<Vec<S>> {
    let k = params.len();
    if sample.theta.len() != k || upstream_log.len() != k {
        return Err(Error::Shape(format!(
            "dirichlet gradient over {k} components given {} / {}",
            sample.theta.len(),
            upstream_log.len()
        )));
    }
    let total: S = upstream_log.iter().fold(S::zero(), |a, &b| a + b);
    let floor = S::lit(MIN_CONCENTRATION);
    let mut grad = Vec::with_capacity(k);
    for t in 0..k {
        let nu = params.concentration[t];
        if nu < floor {
            grad.push(S::zero());
            continue;
        }
        // d ln θ_s / d ln γ_t = δ_st − θ_t
        let d_log_gamma = upstream_log[t] - sample.theta[t] * total;
        grad.push(d_log_gamma * gamma_ln_shape_derivative(nu, sample.log_gamma[t])?);
    }
    Ok(grad)
}
