//! Nested variational autoencoder (N-VAE) topic model for short texts.
//!
//! The encoder assigns each word of a document a relaxed topic sample from
//! the affinity between its pretrained embedding and learned topic vectors,
//! pools the samples into Dirichlet parameters for the document's topic
//! proportions, and the whole posterior is fit by maximizing the evidence
//! lower bound of LDA with pathwise gradients: Gumbel-Softmax for the word
//! topics and implicit reparameterization for the Dirichlet.
//!
//! Alongside the model the crate carries a collapsed Gibbs LDA baseline,
//! corpus and embedding ingestion, and clustering/coherence metrics.
//!
//! Numerical code is generic over [`Scalar`]; the aliases below fix it to
//! `f64`, the working precision.

pub mod corpus;
pub mod distributions;
pub mod error;
pub mod eval;
pub mod formats;
pub mod gibbs;
pub mod model;
pub mod numkernel;
pub mod scalar;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = numkernel::DenseMatrix<f64>;
pub type Params = model::ModelParams<f64>;
pub type Grads = model::Gradients<f64>;
pub type Trace = model::ForwardTrace<f64>;
pub type Embeddings = corpus::EmbeddingMatrix<f64>;
pub type Dirichlet = distributions::DirichletParams<f64>;
