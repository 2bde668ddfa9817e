use super::forward::ForwardTrace;
use crate::distributions::{kl_dirichlet, DirichletParams};
use crate::error::Result;
use crate::scalar::Scalar;

/// Per-document pieces of the evidence lower bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms<S> {
    /// `-Σ_i w_i Σ_t μ_it ln μ_it`.
    pub entropy: S,
    /// `KL(Dir(ν) ‖ Dir(α))`.
    pub kl: S,
    /// `Σ_i w_i Σ_t μ_it ln β_{t,v_i}`.
    pub reconstruction: S,
    /// `Σ_t η_t ln θ_t`.
    pub topic_prior: S,
}

impl<S: Scalar> ElboTerms<S> {
    pub fn elbo(&self) -> S {
        self.entropy - self.kl + self.reconstruction + self.topic_prior
    }
}

pub(crate) fn elbo_terms<S: Scalar>(trace: &ForwardTrace<S>) -> Result<Vec<ElboTerms<S>>> {
    let k = trace.eta.cols();
    let prior = DirichletParams {
        concentration: trace.alpha.clone(),
    };
    let mut terms = Vec::with_capacity(trace.batch_size());
    for d in 0..trace.batch_size() {
        let mut entropy = S::zero();
        let mut reconstruction = S::zero();
        for e in trace.doc_offsets[d]..trace.doc_offsets[d + 1] {
            let entry = trace.entries[e];
            let w = S::lit(f64::from(entry.count));
            for t in 0..k {
                let m = trace.mu[(e, t)];
                entropy -= w * m * trace.log_mu[(e, t)];
                reconstruction += w * m * trace.log_beta[(t, entry.word)];
            }
        }
        let posterior = DirichletParams {
            concentration: trace.nu.row(d).to_vec(),
        };
        let kl = kl_dirichlet(&posterior, &prior)?;
        let topic_prior = (0..k).fold(S::zero(), |acc, t| {
            acc + trace.eta[(d, t)] * trace.log_theta[(d, t)]
        });
        terms.push(ElboTerms {
            entropy,
            kl,
            reconstruction,
            topic_prior,
        });
    }
    Ok(terms)
}

/// Mean ELBO of the documents in a trace.
pub fn elbo<S: Scalar>(trace: &ForwardTrace<S>) -> S {
    -trace.loss()
}
