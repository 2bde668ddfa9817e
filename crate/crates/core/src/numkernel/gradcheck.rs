use super::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Scalar function of a list of matrices with an analytic gradient.
pub trait Differentiable<S: Scalar> {
    fn value(&self, params: &[DenseMatrix<S>]) -> Result<S>;
    fn gradient(&self, params: &[DenseMatrix<S>]) -> Result<Vec<DenseMatrix<S>>>;
}

/// Central differences `(f(x+h) − f(x−h)) / 2h` for every parameter entry.
pub fn central_differences<S: Scalar>(
    f: impl Fn(&[DenseMatrix<S>]) -> Result<S>,
    params: &[DenseMatrix<S>],
    step: S,
) -> Result<Vec<DenseMatrix<S>>> {
    let mut work = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = DenseMatrix::zeros(params[p].rows(), params[p].cols());
        for i in 0..params[p].data().len() {
            let base = params[p].data()[i];
            work[p].data_mut()[i] = base + step;
            let up = finite(f(&work)?)?;
            work[p].data_mut()[i] = base - step;
            let down = finite(f(&work)?)?;
            work[p].data_mut()[i] = base;
            g.data_mut()[i] = (up - down) / (step + step);
        }
        grads.push(g);
    }
    Ok(grads)
}

fn finite<S: Scalar>(v: S) -> Result<S> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("objective evaluated to {v}")))
    }
}

/// `max |a − c| / max(|a|, |c|, 1e-12)` over all entries.
pub fn max_relative_error<A: Scalar, C: Scalar>(
    analytic: &[DenseMatrix<A>],
    numeric: &[DenseMatrix<C>],
) -> Result<f64> {
    if analytic.len() != numeric.len() {
        return Err(Error::Shape("gradient list lengths differ".into()));
    }
    let mut worst = 0.0_f64;
    for (a, c) in analytic.iter().zip(numeric) {
        if a.shape() != c.shape() {
            return Err(Error::Shape("gradient shapes differ".into()));
        }
        for (&x, &y) in a.data().iter().zip(c.data()) {
            let (x, y) = (x.as_f64(), y.as_f64());
            let denom = x.abs().max(y.abs()).max(1e-12);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    Ok(worst)
}

/// Largest relative disagreement between the analytic gradient and central
/// differences of the value.
pub fn grad_check<S: Scalar, F: Differentiable<S>>(
    f: &F,
    params: &[DenseMatrix<S>],
    step: S,
) -> Result<f64> {
    let analytic = f.gradient(params)?;
    let numeric = central_differences(|p| f.value(p), params, step)?;
    max_relative_error(&analytic, &numeric)
}
