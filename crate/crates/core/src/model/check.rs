use super::batch::DocBatch;
use super::forward::{forward_batch_with, ForwardOptions};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Central differences of the batch loss for every trainable entry, in the
/// order of [`ModelParams::trainable_mut`]. Step `h·max(1, |x|)`.
///
/// Meant for gradient checks: pass frozen noise through `opts`
/// (`fixed_gumbel`, `fixed_log_theta`) or use infer mode.
pub fn numeric_gradients<S: Scalar>(
    params: &ModelParams<S>,
    batch: &DocBatch,
    opts: &ForwardOptions<S>,
    h: S,
) -> Result<Vec<Vec<S>>> {
    let mut work = params.clone();
    let sizes: Vec<usize> = work.trainable_mut().iter().map(|b| b.len()).collect();
    let mut out = Vec::with_capacity(sizes.len());
    let loss = |p: &ModelParams<S>| -> Result<S> {
        let l = forward_batch_with(p, batch, opts)?.loss();
        if l.is_finite() {
            Ok(l)
        } else {
            Err(Error::Numerical(format!("loss evaluated to {l}")))
        }
    };
    for (block, &n) in sizes.iter().enumerate() {
        let mut g = Vec::with_capacity(n);
        for i in 0..n {
            let base = work.trainable_mut()[block][i];
            let step = h * crate::scalar::max_of(base.abs(), S::one());
            work.trainable_mut()[block][i] = base + step;
            let up = loss(&work)?;
            work.trainable_mut()[block][i] = base - step;
            let down = loss(&work)?;
            work.trainable_mut()[block][i] = base;
            g.push((up - down) / (step + step));
        }
        out.push(g);
    }
    Ok(out)
}
