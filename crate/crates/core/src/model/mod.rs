//! The N-VAE: variational posterior over word topics and document topic
//! proportions, its evidence lower bound, and hand-derived gradients.
//!
//! For document `d` with word counts `w_{d,i}`:
//!
//! * `π_{d,i} = ρ·ω_i + g(ω̄_d)`, where `ω̄_d` is the count-weighted mean
//!   embedding and `g` a small fully connected network;
//! * `μ_{d,i}` is a Gumbel-Softmax sample of `softmax(π_{d,i} / τ)`;
//! * `η_d = Σ_i w_{d,i} μ_{d,i}` (soft topic counts) and
//!   `ν_d = softplus(a·η_d + b)`;
//! * `θ_d ~ Dir(ν_d)`, reparameterized implicitly;
//! * `β = softmax_rows(BN(β̃))` with normalization across the vocabulary.

mod backward;
mod batch;
mod check;
mod elbo;
mod forward;
mod infer;
mod params;

pub use backward::backward;
pub use batch::DocBatch;
pub use check::numeric_gradients;
pub use elbo::{elbo, ElboTerms};
pub use forward::{
    forward_batch, forward_batch_with, Entry, ForwardOptions, ForwardTrace, Mode, ThetaPath,
};
pub use infer::{export_topics, infer_theta, top_words, TopicAssignment};
pub(crate) use infer::argmax;
pub use params::{
    ContextNet, Gradients, HiddenLayer, Linear, ModelConfig, ModelParams, NamedTensor,
    BETA_BN_EPS, INITIAL_ALPHA, INITIAL_B,
};

#[cfg(test)]
mod tests;
