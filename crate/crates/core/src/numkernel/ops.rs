use super::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Matrix product `a · b`.
pub fn matmul<S: Scalar>(a: &DenseMatrix<S>, b: &DenseMatrix<S>) -> Result<DenseMatrix<S>> {
    if a.cols() != b.rows() {
        return Err(Error::Shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        let a_row = a.row(i);
        let out_row = out.row_mut(i);
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == S::zero() {
                continue;
            }
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Product `a · bᵀ`.
pub fn matmul_transpose_b<S: Scalar>(
    a: &DenseMatrix<S>,
    b: &DenseMatrix<S>,
) -> Result<DenseMatrix<S>> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "matmul {}x{} by transpose of {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut out = DenseMatrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            out[(i, j)] = dot(a.row(i), b.row(j));
        }
    }
    Ok(out)
}

/// Gradients of `a · b` given the upstream gradient: `(g·bᵀ, aᵀ·g)`.
pub fn matmul_backward<S: Scalar>(
    a: &DenseMatrix<S>,
    b: &DenseMatrix<S>,
    grad_out: &DenseMatrix<S>,
) -> Result<(DenseMatrix<S>, DenseMatrix<S>)> {
    if grad_out.shape() != (a.rows(), b.cols()) || a.cols() != b.rows() {
        return Err(Error::Shape("matmul_backward operand shapes".into()));
    }
    let grad_a = matmul_transpose_b(grad_out, b)?;
    let grad_b = matmul(&a.transpose(), grad_out)?;
    Ok((grad_a, grad_b))
}

#[inline]
pub(crate) fn dot<S: Scalar>(x: &[S], y: &[S]) -> S {
    x.iter().zip(y).fold(S::zero(), |acc, (&a, &b)| acc + a * b)
}

/// Row-wise `softmax(x / τ)` with max subtraction.
pub fn softmax_rows<S: Scalar>(x: &DenseMatrix<S>, temperature: S) -> Result<DenseMatrix<S>> {
    if !(temperature > S::zero()) {
        return Err(Error::Domain(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r), temperature);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S], temperature: S) {
    let max = row.iter().copied().fold(S::neg_infinity(), crate::scalar::max_of);
    let mut total = S::zero();
    for v in row.iter_mut() {
        *v = ((*v - max) / temperature).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Backward rule for [`softmax_rows`] given its output `y`.
pub fn softmax_rows_backward<S: Scalar>(
    y: &DenseMatrix<S>,
    grad_out: &DenseMatrix<S>,
    temperature: S,
) -> Result<DenseMatrix<S>> {
    if y.shape() != grad_out.shape() {
        return Err(Error::Shape("softmax_rows_backward shapes".into()));
    }
    let mut out = DenseMatrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yr = y.row(r);
        let gr = grad_out.row(r);
        let inner = dot(yr, gr);
        for ((o, &yi), &gi) in out.row_mut(r).iter_mut().zip(yr).zip(gr) {
            *o = yi * (gi - inner) / temperature;
        }
    }
    Ok(out)
}

pub fn relu<S: Scalar>(x: &DenseMatrix<S>) -> DenseMatrix<S> {
    x.map(|v| crate::scalar::max_of(v, S::zero()))
}

/// Passes gradient where the forward input was positive.
pub fn relu_backward<S: Scalar>(x: &DenseMatrix<S>, grad_out: &DenseMatrix<S>) -> DenseMatrix<S> {
    let mut out = grad_out.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(x.data()) {
        if v <= S::zero() {
            *g = S::zero();
        }
    }
    out
}
