use super::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Whether batch normalization uses the batch statistics or the running ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Infer,
}

/// Learnable affine map plus exponential running statistics, one entry per
/// feature (column).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<S> {
    pub gamma: Vec<S>,
    pub shift: Vec<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub momentum: S,
    pub eps: S,
}

impl<S: Scalar> BatchNormState<S> {
    pub const DEFAULT_MOMENTUM: f64 = 0.99;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(features: usize) -> Self {
        Self::with_eps(features, S::lit(Self::DEFAULT_EPS))
    }

    pub fn with_eps(features: usize, eps: S) -> Self {
        Self {
            gamma: vec![S::one(); features],
            shift: vec![S::zero(); features],
            running_mean: vec![S::zero(); features],
            running_var: vec![S::one(); features],
            momentum: S::lit(Self::DEFAULT_MOMENTUM),
            eps,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Folds one batch's statistics into the running averages.
    pub fn absorb(&mut self, batch_mean: &[S], batch_var: &[S]) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(batch_mean) {
            *r = m * *r + (S::one() - m) * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(batch_var) {
            *r = m * *r + (S::one() - m) * b;
        }
    }

    pub fn cast<T: Scalar>(&self) -> BatchNormState<T> {
        use crate::scalar::cast_slice;
        BatchNormState {
            gamma: cast_slice(&self.gamma),
            shift: cast_slice(&self.shift),
            running_mean: cast_slice(&self.running_mean),
            running_var: cast_slice(&self.running_var),
            momentum: T::lit(self.momentum.as_f64()),
            eps: T::lit(self.eps.as_f64()),
        }
    }
}

/// Values retained by the forward pass for the backward rule.
#[derive(Clone, Debug)]
pub struct BatchNormCache<S> {
    pub mode: NormMode,
    pub x_hat: DenseMatrix<S>,
    pub inv_std: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct BatchNormOutput<S> {
    pub y: DenseMatrix<S>,
    pub cache: BatchNormCache<S>,
    /// Biased batch mean and variance (train mode only, empty otherwise).
    pub batch_mean: Vec<S>,
    pub batch_var: Vec<S>,
}

/// Normalizes each column of `x`.
///
/// Train mode uses the biased batch statistics; the caller folds them into
/// the running averages with [`BatchNormState::absorb`]. Infer mode uses the
/// running statistics.
pub fn batchnorm_forward<S: Scalar>(
    x: &DenseMatrix<S>,
    state: &BatchNormState<S>,
    mode: NormMode,
) -> Result<BatchNormOutput<S>> {
    let (n, f) = x.shape();
    if f != state.features() {
        return Err(Error::Shape(format!(
            "batchnorm over {} features given {f} columns",
            state.features()
        )));
    }
    let (mean, var) = match mode {
        NormMode::Train => {
            if n < 2 {
                return Err(Error::DegenerateBatch(format!(
                    "batch normalization needs at least 2 rows in train mode, got {n}"
                )));
            }
            column_moments(x)
        }
        NormMode::Infer => (state.running_mean.clone(), state.running_var.clone()),
    };
    let inv_std: Vec<S> = var.iter().map(|&v| (v + state.eps).sqrt().recip()).collect();
    let mut x_hat = DenseMatrix::zeros(n, f);
    let mut y = DenseMatrix::zeros(n, f);
    for r in 0..n {
        for c in 0..f {
            let h = (x[(r, c)] - mean[c]) * inv_std[c];
            x_hat[(r, c)] = h;
            y[(r, c)] = state.gamma[c] * h + state.shift[c];
        }
    }
    let (batch_mean, batch_var) = match mode {
        NormMode::Train => (mean, var),
        NormMode::Infer => (Vec::new(), Vec::new()),
    };
    Ok(BatchNormOutput {
        y,
        cache: BatchNormCache {
            mode,
            x_hat,
            inv_std,
        },
        batch_mean,
        batch_var,
    })
}

/// Column means and biased variances.
pub(crate) fn column_moments<S: Scalar>(x: &DenseMatrix<S>) -> (Vec<S>, Vec<S>) {
    let (n, f) = x.shape();
    let nf = S::from_count(n);
    let mut mean = vec![S::zero(); f];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= nf;
    }
    let mut var = vec![S::zero(); f];
    for r in 0..n {
        for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    for s in &mut var {
        *s /= nf;
    }
    (mean, var)
}

/// Returns `(grad_x, grad_gamma, grad_shift)`.
///
/// In train mode the gradient flows through the batch mean and variance.
pub fn batchnorm_backward<S: Scalar>(
    state: &BatchNormState<S>,
    cache: &BatchNormCache<S>,
    grad_out: &DenseMatrix<S>,
) -> Result<(DenseMatrix<S>, Vec<S>, Vec<S>)> {
    let (n, f) = grad_out.shape();
    if cache.x_hat.shape() != (n, f) || f != state.features() {
        return Err(Error::Shape("batchnorm_backward shapes".into()));
    }
    let mut grad_gamma = vec![S::zero(); f];
    let mut grad_shift = vec![S::zero(); f];
    for r in 0..n {
        for c in 0..f {
            let g = grad_out[(r, c)];
            grad_gamma[c] += g * cache.x_hat[(r, c)];
            grad_shift[c] += g;
        }
    }
    let mut grad_x = DenseMatrix::zeros(n, f);
    match cache.mode {
        NormMode::Infer => {
            for r in 0..n {
                for c in 0..f {
                    grad_x[(r, c)] = grad_out[(r, c)] * state.gamma[c] * cache.inv_std[c];
                }
            }
        }
        NormMode::Train => {
            // dx = inv_std/N · (N·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)), with dx̂ = γ·dy
            let nf = S::from_count(n);
            for c in 0..f {
                let scale = state.gamma[c] * cache.inv_std[c] / nf;
                let sum_g = grad_shift[c];
                let sum_gx = grad_gamma[c];
                for r in 0..n {
                    grad_x[(r, c)] =
                        scale * (nf * grad_out[(r, c)] - sum_g - cache.x_hat[(r, c)] * sum_gx);
                }
            }
        }
    }
    Ok((grad_x, grad_gamma, grad_shift))
}
