use super::batch::DocBatch;
use super::forward::{ForwardTrace, HiddenCache, ThetaPath};
use super::params::{ContextNet, Gradients, ModelParams};
use crate::distributions::{
    dirichlet_implicit_grad_log, kl_dirichlet_grad, DirichletParams, MIN_CONCENTRATION,
};
use crate::error::{Error, Result};
use crate::numkernel::{batchnorm_backward, matmul_backward, relu_backward, DenseMatrix};
use crate::scalar::{sigmoid, softplus, Scalar};

/// Gradient of the mean negative ELBO of `trace` with respect to every
/// trainable parameter, the sampled noise held fixed.
///
/// With `alpha_trainable == false` the prior gets a zero gradient.
pub fn backward<S: Scalar>(
    params: &ModelParams<S>,
    batch: &DocBatch,
    trace: &ForwardTrace<S>,
    alpha_trainable: bool,
) -> Result<Gradients<S>> {
    let nb = trace.batch_size();
    let matches = batch.len() == nb
        && batch.docs.iter().enumerate().all(|(d, doc)| {
            let span = &trace.entries[trace.doc_offsets[d]..trace.doc_offsets[d + 1]];
            span.len() == doc.len()
                && span
                    .iter()
                    .zip(doc)
                    .all(|(e, &(w, c))| e.word == w && e.count == c)
        });
    if !matches {
        return Err(Error::Input("trace was not produced from this batch".into()));
    }
    let k = params.topics();
    let v = params.vocab_size();
    if trace.eta.shape() != (nb, k) || trace.beta.shape() != (k, v) {
        return Err(Error::Shape("trace does not match the model".into()));
    }
    let mut grads = params.zeros_like();
    let tau = trace.temperature;

    // Topic-word path. C[t][v] = Σ w μ over entries of word v.
    let mut c = DenseMatrix::zeros(k, v);
    for (e, entry) in trace.entries.iter().enumerate() {
        let w = S::lit(f64::from(entry.count));
        for t in 0..k {
            c[(t, entry.word)] += w * trace.mu[(e, t)];
        }
    }
    let mut g_logits = c;
    for t in 0..k {
        let total = g_logits.row(t).iter().fold(S::zero(), |a, &x| a + x);
        for (g, &b) in g_logits.row_mut(t).iter_mut().zip(trace.beta.row(t)) {
            *g -= b * total;
        }
    }
    match (&params.beta_bn, &trace.beta_bn) {
        (Some(state), Some(out)) => {
            let (gx, g_gamma, _) = batchnorm_backward(state, &out.cache, &g_logits.transpose())?;
            grads.beta_tilde = gx.transpose();
            if let Some(bn) = grads.beta_bn.as_mut() {
                bn.gamma = g_gamma;
            }
        }
        (None, None) => grads.beta_tilde = g_logits,
        _ => return Err(Error::Shape("trace and model disagree on β normalization".into())),
    }

    // Document-level path: θ, ν, η.
    let floor = S::lit(MIN_CONCENTRATION);
    let prior = DirichletParams {
        concentration: trace.alpha.clone(),
    };
    let mut g_alpha = vec![S::zero(); k];
    let mut g_eta = DenseMatrix::zeros(nb, k);
    for d in 0..nb {
        let nu = DirichletParams {
            concentration: trace.nu.row(d).to_vec(),
        };
        let (gq, gp) = kl_dirichlet_grad(&nu, &prior)?;
        let mut g_nu: Vec<S> = gq.iter().map(|&g| -g).collect();
        for (acc, &g) in g_alpha.iter_mut().zip(&gp) {
            *acc -= g;
        }
        let upstream = trace.eta.row(d);
        match &trace.theta_path {
            ThetaPath::Implicit(samples) => {
                let g = dirichlet_implicit_grad_log(&nu, &samples[d], upstream)?;
                for (acc, x) in g_nu.iter_mut().zip(g) {
                    *acc += x;
                }
            }
            ThetaPath::Normalized => {
                let su = upstream.iter().fold(S::zero(), |a, &x| a + x);
                let sn = nu.total();
                for t in 0..k {
                    g_nu[t] += upstream[t] / nu.concentration[t] - su / sn;
                }
            }
            ThetaPath::Fixed => {}
        }
        for t in 0..k {
            let pre = trace.nu_pre[(d, t)];
            let g_pre = if softplus(pre) < floor {
                S::zero()
            } else {
                g_nu[t] * sigmoid(pre)
            };
            grads.a += g_pre * trace.eta[(d, t)];
            grads.b += g_pre;
            g_eta[(d, t)] = trace.log_theta[(d, t)] + params.a * g_pre;
        }
    }
    if alpha_trainable {
        for t in 0..k {
            grads.alpha_hat[t] = g_alpha[t] * sigmoid(params.alpha_hat[t]);
        }
    }

    // Word-level path: μ, π.
    let train_emb = params.config.train_embeddings;
    let dim = params.embedding_dim();
    let mut g_context = DenseMatrix::zeros(nb, k);
    let mut g_mu = vec![S::zero(); k];
    let mut g_pi = vec![S::zero(); k];
    for (e, entry) in trace.entries.iter().enumerate() {
        let d = entry.doc;
        let w = S::lit(f64::from(entry.count));
        for t in 0..k {
            g_mu[t] = w
                * (trace.log_beta[(t, entry.word)] + g_eta[(d, t)]
                    - trace.log_mu[(e, t)]
                    - S::one());
        }
        let inner = (0..k).fold(S::zero(), |a, t| a + trace.mu[(e, t)] * g_mu[t]);
        for t in 0..k {
            g_pi[t] = trace.mu[(e, t)] * (g_mu[t] - inner) / tau;
            g_context[(d, t)] += g_pi[t];
        }
        let emb = params.omega.row(entry.word);
        for t in 0..k {
            for (g, &x) in grads.rho.row_mut(t).iter_mut().zip(emb) {
                *g += g_pi[t] * x;
            }
        }
        if train_emb {
            for t in 0..k {
                let rho = params.rho.row(t);
                let row = grads.omega.row_mut(entry.word);
                for j in 0..dim {
                    row[j] += g_pi[t] * rho[j];
                }
            }
        }
    }

    let g_omega_bar = context_backward(
        &params.context,
        &mut grads.context,
        &trace.hidden,
        &trace.context_input,
        &g_context,
    )?;
    if train_emb {
        for entry in &trace.entries {
            let scale = S::lit(f64::from(entry.count)) / trace.doc_lengths[entry.doc];
            let src = g_omega_bar.row(entry.doc);
            for (g, &x) in grads.omega.row_mut(entry.word).iter_mut().zip(src) {
                *g += scale * x;
            }
        }
    }

    grads.scale(-S::one() / S::from_count(nb));
    Ok(grads)
}

fn context_backward<S: Scalar>(
    net: &ContextNet<S>,
    grads: &mut ContextNet<S>,
    caches: &[HiddenCache<S>],
    last_hidden: &DenseMatrix<S>,
    g_out: &DenseMatrix<S>,
) -> Result<DenseMatrix<S>> {
    let (mut g_h, g_w) = matmul_backward(last_hidden, &net.output.weight, g_out)?;
    grads.output.weight = g_w;
    if let Some(b) = grads.output.bias.as_mut() {
        *b = column_sums(g_out);
    }
    for ((layer, g_layer), cache) in net
        .hidden
        .iter()
        .zip(grads.hidden.iter_mut())
        .zip(caches)
        .rev()
    {
        let g_y = relu_backward(&cache.pre_relu, &g_h);
        let g_z = match (&layer.bn, &cache.bn) {
            (Some(state), Some(out)) => {
                let (g_z, g_gamma, g_shift) = batchnorm_backward(state, &out.cache, &g_y)?;
                if let Some(bn) = g_layer.bn.as_mut() {
                    bn.gamma = g_gamma;
                    bn.shift = g_shift;
                }
                g_z
            }
            _ => g_y,
        };
        let (g_in, g_w) = matmul_backward(&cache.input, &layer.linear.weight, &g_z)?;
        g_layer.linear.weight = g_w;
        if let Some(b) = g_layer.linear.bias.as_mut() {
            *b = column_sums(&g_z);
        }
        g_h = g_in;
    }
    Ok(g_h)
}

fn column_sums<S: Scalar>(m: &DenseMatrix<S>) -> Vec<S> {
    let mut out = vec![S::zero(); m.cols()];
    for r in 0..m.rows() {
        for (o, &x) in out.iter_mut().zip(m.row(r)) {
            *o += x;
        }
    }
    out
}
