use rand::distr::{Distribution, Open01};
use rand::Rng;

use super::BaseNoise;
use crate::error::{Error, Result};
use crate::numkernel::ops::softmax_in_place;
use crate::scalar::Scalar;

/// Standard Gumbel variate `−ln(−ln u)`, `u ~ Uniform(0, 1)`.
pub fn sample_gumbel<S: Scalar, R: Rng + ?Sized>(rng: &mut R) -> S {
    let u: f64 = Open01.sample(rng);
    S::lit(-(-u.ln()).ln())
}

/// Relaxed one-hot sample `softmax((logits + g) / τ)` for fixed Gumbel
/// noise `g`, written into `out`.
pub fn gumbel_softmax_with<S: Scalar>(logits: &[S], gumbels: &[S], temperature: S, out: &mut [S]) {
    for ((o, &l), &g) in out.iter_mut().zip(logits).zip(gumbels) {
        *o = l + g;
    }
    softmax_in_place(out, temperature);
}

/// Draws a Gumbel-Softmax sample over `logits.len()` categories.
pub fn gumbel_softmax_sample<S: Scalar>(
    logits: &[S],
    temperature: S,
    noise: &BaseNoise,
) -> Result<Vec<S>> {
    check_temperature(temperature)?;
    let mut rng = noise.rng();
    let gumbels: Vec<S> = (0..logits.len()).map(|_| sample_gumbel(&mut rng)).collect();
    let mut out = vec![S::zero(); logits.len()];
    gumbel_softmax_with(logits, &gumbels, temperature, &mut out);
    Ok(out)
}

/// Pathwise gradient of a Gumbel-Softmax sample with respect to its logits.
pub fn gumbel_softmax_backward<S: Scalar>(sample: &[S], grad_sample: &[S], temperature: S) -> Vec<S> {
    let inner = crate::numkernel::ops::dot(sample, grad_sample);
    sample
        .iter()
        .zip(grad_sample)
        .map(|(&m, &g)| m * (g - inner) / temperature)
        .collect()
}

pub(crate) fn check_temperature<S: Scalar>(temperature: S) -> Result<()> {
    if temperature > S::zero() && temperature.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "temperature must be positive, got {temperature}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    #[cfg(feature = "quad")]
    use crate::numkernel::{grad_check, DenseMatrix, Differentiable};

    #[test]
    fn sample_is_on_simplex() {
        let noise = BaseNoise::new(1, 0, 0);
        let mu = gumbel_softmax_sample(&[0.3_f64, -1.0, 2.0, 0.0], 0.5, &noise).unwrap();
        assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(mu.iter().all(|&m| m > 0.0 && m < 1.0));
    }

    #[test]
    fn rejects_nonpositive_temperature() {
        let noise = BaseNoise::new(1, 0, 0);
        assert!(matches!(
            gumbel_softmax_sample(&[0.0_f64, 0.0], 0.0, &noise),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn equal_logits_have_uniform_mean() {
        let k = 4;
        let n = 100_000;
        let mut sums = vec![0.0; k];
        let mut sq = vec![0.0; k];
        for i in 0..n {
            let mu =
                gumbel_softmax_sample(&[0.7_f64; 4], 0.8, &BaseNoise::new(5, 0, i)).unwrap();
            for t in 0..k {
                sums[t] += mu[t];
                sq[t] += mu[t] * mu[t];
            }
        }
        for t in 0..k {
            let mean = sums[t] / n as f64;
            let se = ((sq[t] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!((mean - 0.25).abs() < 3.0 * se, "topic {t}: {mean} ± {se}");
        }
    }

    #[cfg(feature = "quad")]
    struct FixedNoise<S> {
        gumbels: Vec<S>,
        weights: Vec<S>,
        temperature: S,
    }

    #[cfg(feature = "quad")]
    impl<S: Scalar> Differentiable<S> for FixedNoise<S> {
        fn value(&self, p: &[DenseMatrix<S>]) -> Result<S> {
            let mut mu = vec![S::zero(); self.gumbels.len()];
            gumbel_softmax_with(p[0].data(), &self.gumbels, self.temperature, &mut mu);
            Ok(crate::numkernel::ops::dot(&mu, &self.weights))
        }

        fn gradient(&self, p: &[DenseMatrix<S>]) -> Result<Vec<DenseMatrix<S>>> {
            let mut mu = vec![S::zero(); self.gumbels.len()];
            gumbel_softmax_with(p[0].data(), &self.gumbels, self.temperature, &mut mu);
            let g = gumbel_softmax_backward(&mu, &self.weights, self.temperature);
            Ok(vec![DenseMatrix::from_vec(1, g.len(), g)?])
        }
    }

    #[cfg(feature = "quad")]
    fn pathwise_check<S: Scalar>() -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..100u64 {
            let mut rng = BaseNoise::new(77, 0, i).rng();
            let k = 5;
            let f = FixedNoise::<S> {
                gumbels: (0..k).map(|_| sample_gumbel(&mut rng)).collect(),
                weights: (0..k).map(|_| S::lit(rng.random_range(-2.0..2.0))).collect(),
                temperature: S::lit(rng.random_range(0.3..1.0)),
            };
            let logits: Vec<S> = (0..k).map(|_| S::lit(rng.random_range(-2.0..2.0))).collect();
            let p = vec![DenseMatrix::from_vec(1, k, logits).unwrap()];
            worst = worst.max(grad_check(&f, &p, S::lit(1e-5)).unwrap());
        }
        worst
    }

    // Saturated samples have gradients near 1e-10, below the rounding noise
    // of f64 central differences, so the check runs in quad precision.
    #[cfg(feature = "quad")]
    #[test]
    fn pathwise_gradient_matches_finite_differences() {
        let err = pathwise_check::<f128::f128>();
        assert!(err < 1e-4, "{err}");
    }
}
