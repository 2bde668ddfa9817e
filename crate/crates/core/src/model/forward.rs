use super::batch::DocBatch;
use super::elbo::{elbo_terms, ElboTerms};
use super::params::{ContextNet, ModelParams};
use crate::distributions::{
    check_temperature, dirichlet_sample, sample_gumbel, BaseNoise, DirichletParams,
    DirichletSample, MIN_CONCENTRATION,
};
use crate::error::{Error, Result};
use crate::numkernel::{batchnorm_forward, relu, BatchNormOutput, DenseMatrix, NormMode};
use crate::numkernel::ops::dot;
use crate::scalar::{log_sum_exp, max_of, softplus, Scalar};

/// Training draws noise and uses batch statistics. Inference is
/// deterministic: no Gumbel noise, running statistics, and `θ = ν / Σν`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

impl Mode {
    fn norm(self) -> NormMode {
        match self {
            Mode::Train => NormMode::Train,
            Mode::Infer => NormMode::Infer,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOptions<S> {
    pub temperature: S,
    pub mode: Mode,
    /// Required in train mode.
    pub noise: Option<BaseNoise>,
    /// Replays Gumbel perturbations (`E × K`, entries in batch order)
    /// instead of drawing them. Train mode only.
    pub fixed_gumbel: Option<DenseMatrix<S>>,
    /// Overrides the Dirichlet draw with the given `ln θ` (`B × K`).
    pub fixed_log_theta: Option<DenseMatrix<S>>,
}

impl<S: Scalar> ForwardOptions<S> {
    pub fn train(temperature: S, noise: BaseNoise) -> Self {
        Self {
            temperature,
            mode: Mode::Train,
            noise: Some(noise),
            fixed_gumbel: None,
            fixed_log_theta: None,
        }
    }

    pub fn infer(temperature: S) -> Self {
        Self {
            temperature,
            mode: Mode::Infer,
            noise: None,
            fixed_gumbel: None,
            fixed_log_theta: None,
        }
    }
}

/// One `(document, word, count)` triple of the flattened batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Entry {
    pub doc: usize,
    pub word: usize,
    pub count: u32,
}

/// How `θ` was obtained, which decides its backward rule.
#[derive(Clone, Debug)]
pub enum ThetaPath<S> {
    Implicit(Vec<DirichletSample<S>>),
    Normalized,
    Fixed,
}

#[derive(Clone, Debug)]
pub(crate) struct HiddenCache<S> {
    pub input: DenseMatrix<S>,
    pub pre_relu: DenseMatrix<S>,
    pub bn: Option<BatchNormOutput<S>>,
}

/// Every intermediate of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<S> {
    pub mode: Mode,
    pub temperature: S,
    pub entries: Vec<Entry>,
    /// Entries of document `d` are `doc_offsets[d]..doc_offsets[d + 1]`.
    pub doc_offsets: Vec<usize>,
    pub doc_lengths: Vec<S>,
    pub omega_bar: DenseMatrix<S>,
    pub(crate) hidden: Vec<HiddenCache<S>>,
    pub(crate) context_input: DenseMatrix<S>,
    /// Context vectors `c_d`, `B × K`.
    pub context: DenseMatrix<S>,
    /// Per entry, `E × K`.
    pub pi: DenseMatrix<S>,
    pub gumbel: Option<DenseMatrix<S>>,
    pub mu: DenseMatrix<S>,
    pub log_mu: DenseMatrix<S>,
    /// Per document, `B × K`.
    pub eta: DenseMatrix<S>,
    pub nu_pre: DenseMatrix<S>,
    pub nu: DenseMatrix<S>,
    pub theta: DenseMatrix<S>,
    pub log_theta: DenseMatrix<S>,
    pub theta_path: ThetaPath<S>,
    pub alpha: Vec<S>,
    pub(crate) beta_bn: Option<BatchNormOutput<S>>,
    /// Topic-word matrices, `K × V`.
    pub beta: DenseMatrix<S>,
    pub log_beta: DenseMatrix<S>,
    pub terms: Vec<ElboTerms<S>>,
}

impl<S: Scalar> ForwardTrace<S> {
    pub fn batch_size(&self) -> usize {
        self.doc_lengths.len()
    }

    /// Mean negative ELBO over the batch.
    pub fn loss(&self) -> S {
        let total = self.terms.iter().fold(S::zero(), |acc, t| acc + t.elbo());
        -total / S::from_count(self.terms.len())
    }
}

/// Training-mode forward pass with fresh noise.
pub fn forward_batch<S: Scalar>(
    params: &ModelParams<S>,
    batch: &DocBatch,
    temperature: S,
    noise: BaseNoise,
) -> Result<ForwardTrace<S>> {
    forward_batch_with(params, batch, &ForwardOptions::train(temperature, noise))
}

impl<S: Scalar> ContextNet<S> {
    pub(crate) fn forward(
        &self,
        x: &DenseMatrix<S>,
        mode: NormMode,
    ) -> Result<(DenseMatrix<S>, Vec<HiddenCache<S>>, DenseMatrix<S>)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let z = layer.linear.apply(&h)?;
            let (pre_relu, bn) = match &layer.bn {
                Some(state) => {
                    let out = batchnorm_forward(&z, state, mode)?;
                    (out.y.clone(), Some(out))
                }
                None => (z, None),
            };
            let next = relu(&pre_relu);
            caches.push(HiddenCache {
                input: h,
                pre_relu,
                bn,
            });
            h = next;
        }
        let c = self.output.apply(&h)?;
        Ok((c, caches, h))
    }
}

/// `β = softmax_rows(BN(β̃))` with its normalizer output, or plain softmax
/// without normalization. Returns `(β, ln β, bn)`.
pub(crate) fn topic_word<S: Scalar>(
    params: &ModelParams<S>,
) -> Result<(DenseMatrix<S>, DenseMatrix<S>, Option<BatchNormOutput<S>>)> {
    let (logits, bn) = match &params.beta_bn {
        Some(state) => {
            // Normalizes each topic across the vocabulary: vocabulary entries
            // are the "batch", topics the features. Always batch statistics.
            let out = batchnorm_forward(&params.beta_tilde.transpose(), state, NormMode::Train)?;
            (out.y.transpose(), Some(out))
        }
        None => (params.beta_tilde.clone(), None),
    };
    let mut log_beta = logits;
    for t in 0..log_beta.rows() {
        let row = log_beta.row_mut(t);
        let lse = log_sum_exp(row);
        for x in row.iter_mut() {
            *x -= lse;
        }
    }
    let beta = log_beta.map(|x| x.exp());
    Ok((beta, log_beta, bn))
}

pub fn forward_batch_with<S: Scalar>(
    params: &ModelParams<S>,
    batch: &DocBatch,
    opts: &ForwardOptions<S>,
) -> Result<ForwardTrace<S>> {
    check_temperature(opts.temperature)?;
    let v = params.vocab_size();
    batch.validate(v)?;
    let (nb, k, dim) = (batch.len(), params.topics(), params.embedding_dim());
    let tau = opts.temperature;
    let noise = match (opts.mode, opts.noise) {
        (Mode::Train, Some(n)) => Some(n),
        (Mode::Train, None) => return Err(Error::Input("train mode needs a noise stream".into())),
        (Mode::Infer, _) => None,
    };
    if let Some(f) = &opts.fixed_log_theta {
        if f.shape() != (nb, k) {
            return Err(Error::Shape(format!(
                "fixed ln θ is {:?}, batch needs ({nb}, {k})",
                f.shape()
            )));
        }
    }

    let mut entries = Vec::new();
    let mut doc_offsets = Vec::with_capacity(nb + 1);
    let mut doc_lengths = Vec::with_capacity(nb);
    let mut omega_bar = DenseMatrix::zeros(nb, dim);
    for (d, doc) in batch.docs.iter().enumerate() {
        doc_offsets.push(entries.len());
        let mut n = S::zero();
        for &(word, count) in doc {
            entries.push(Entry { doc: d, word, count });
            let w = S::lit(f64::from(count));
            n += w;
            for (acc, &x) in omega_bar.row_mut(d).iter_mut().zip(params.omega.row(word)) {
                *acc += w * x;
            }
        }
        for acc in omega_bar.row_mut(d) {
            *acc /= n;
        }
        doc_lengths.push(n);
    }
    doc_offsets.push(entries.len());

    let (context, hidden, context_input) = params.context.forward(&omega_bar, opts.mode.norm())?;

    let ne = entries.len();
    let mut pi = DenseMatrix::zeros(ne, k);
    let replay = opts.mode == Mode::Train && opts.fixed_gumbel.is_some();
    let mut gumbel = match (&opts.fixed_gumbel, noise) {
        (Some(g), Some(_)) if g.shape() == (ne, k) => Some(g.clone()),
        (Some(g), Some(_)) => {
            return Err(Error::Shape(format!(
                "fixed Gumbel noise is {:?}, batch needs ({ne}, {k})",
                g.shape()
            )))
        }
        (_, n) => n.map(|_| DenseMatrix::zeros(ne, k)),
    };
    let mut mu = DenseMatrix::zeros(ne, k);
    let mut log_mu = DenseMatrix::zeros(ne, k);
    let mut eta = DenseMatrix::zeros(nb, k);
    for d in 0..nb {
        let mut rng = noise.filter(|_| !replay).map(|n| n.child(2 * d as u64).rng());
        for e in doc_offsets[d]..doc_offsets[d + 1] {
            let word = entries[e].word;
            let w = S::lit(f64::from(entries[e].count));
            let emb = params.omega.row(word);
            for t in 0..k {
                pi[(e, t)] = dot(params.rho.row(t), emb) + context[(d, t)];
            }
            let row = log_mu.row_mut(e);
            for t in 0..k {
                row[t] = pi[(e, t)];
            }
            if let Some(g) = gumbel.as_mut() {
                for t in 0..k {
                    if let Some(rng) = rng.as_mut() {
                        g[(e, t)] = sample_gumbel(rng);
                    }
                    row[t] += g[(e, t)];
                }
            }
            for x in row.iter_mut() {
                *x /= tau;
            }
            let lse = log_sum_exp(row);
            for x in row.iter_mut() {
                *x -= lse;
            }
            for t in 0..k {
                let m = log_mu[(e, t)].exp();
                mu[(e, t)] = m;
                eta[(d, t)] += w * m;
            }
        }
    }

    let floor = S::lit(MIN_CONCENTRATION);
    let nu_pre = eta.map(|x| params.a * x + params.b);
    let nu = nu_pre.map(|x| max_of(softplus(x), floor));

    let mut theta = DenseMatrix::zeros(nb, k);
    let mut log_theta = DenseMatrix::zeros(nb, k);
    let theta_path = if let Some(fixed) = &opts.fixed_log_theta {
        log_theta = fixed.clone();
        ThetaPath::Fixed
    } else {
        match noise {
            Some(n) => {
                let mut samples = Vec::with_capacity(nb);
                for d in 0..nb {
                    let params = DirichletParams {
                        concentration: nu.row(d).to_vec(),
                    };
                    let s = dirichlet_sample(&params, &n.child(2 * d as u64 + 1))?;
                    log_theta.row_mut(d).copy_from_slice(&s.log_theta);
                    samples.push(s);
                }
                ThetaPath::Implicit(samples)
            }
            None => {
                for d in 0..nb {
                    let ln_total = nu.row(d).iter().fold(S::zero(), |a, &x| a + x).ln();
                    for t in 0..k {
                        log_theta[(d, t)] = nu[(d, t)].ln() - ln_total;
                    }
                }
                ThetaPath::Normalized
            }
        }
    };
    for (o, &l) in theta.data_mut().iter_mut().zip(log_theta.data()) {
        *o = l.exp();
    }

    let (beta, log_beta, beta_bn) = topic_word(params)?;
    let alpha = params.alpha();

    let mut trace = ForwardTrace {
        mode: opts.mode,
        temperature: tau,
        entries,
        doc_offsets,
        doc_lengths,
        omega_bar,
        hidden,
        context_input,
        context,
        pi,
        gumbel,
        mu,
        log_mu,
        eta,
        nu_pre,
        nu,
        theta,
        log_theta,
        theta_path,
        alpha,
        beta_bn,
        beta,
        log_beta,
        terms: Vec::new(),
    };
    trace.terms = elbo_terms(&trace)?;
    Ok(trace)
}

impl<S: Scalar> ModelParams<S> {
    /// Folds the batch statistics seen by a training forward pass into the
    /// running averages of the context network's normalizers.
    pub fn absorb_running_stats(&mut self, trace: &ForwardTrace<S>) {
        for (layer, cache) in self.context.hidden.iter_mut().zip(&trace.hidden) {
            if let (Some(state), Some(out)) = (layer.bn.as_mut(), cache.bn.as_ref()) {
                if !out.batch_mean.is_empty() {
                    state.absorb(&out.batch_mean, &out.batch_var);
                }
            }
        }
    }

    /// Current topic-word distributions, `K × V`.
    pub fn topic_word_matrix(&self) -> Result<DenseMatrix<S>> {
        Ok(topic_word(self)?.0)
    }
}
