//! Collapsed Gibbs sampling for LDA, the count-based baseline.
//!
//! Each token's topic is resampled from
//! `p(z = k | rest) ∝ (n_dk + α)(n_kw + β̂) / (n_k + Vβ̂)` with the token's own
//! assignment removed from the counts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::BaseNoise;
use crate::error::{Error, Result};
use crate::model::argmax;
use crate::numkernel::DenseMatrix;

/// Sampler settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub topics: usize,
    pub alpha: f64,
    pub beta_prior: f64,
    pub sweeps: usize,
    /// When set, estimates are averaged over every state after this many
    /// sweeps instead of read from the final state.
    pub average_after: Option<usize>,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            topics: 6,
            alpha: 0.1,
            beta_prior: 0.01,
            sweeps: 1500,
            average_after: None,
            seed: 0,
        }
    }
}

fn check_priors(topics: usize, alpha: f64, beta_prior: f64) -> Result<()> {
    if topics == 0 {
        return Err(Error::Input("number of topics must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) || !(beta_prior > 0.0 && beta_prior.is_finite()) {
        return Err(Error::Domain(format!(
            "priors must be positive, got alpha={alpha} beta={beta_prior}"
        )));
    }
    Ok(())
}

/// Token assignments and the count tables they imply.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsState {
    /// Word id of every token, documents expanded in bag order.
    pub words: Vec<Vec<usize>>,
    pub z: Vec<Vec<usize>>,
    /// `D × K`, row-major.
    pub n_dk: Vec<u32>,
    /// `K × V`, row-major.
    pub n_kw: Vec<u32>,
    pub n_k: Vec<u32>,
    pub topics: usize,
    pub vocab_size: usize,
    pub alpha: f64,
    pub beta_prior: f64,
}

/// Posterior-mean estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsEstimate {
    /// `D × K`.
    pub theta: DenseMatrix<f64>,
    /// `K × V`.
    pub phi: DenseMatrix<f64>,
}

impl GibbsEstimate {
    pub fn clusters(&self) -> Vec<usize> {
        (0..self.theta.rows()).map(|d| argmax(self.theta.row(d))).collect()
    }
}

impl GibbsState {
    /// Uniformly random initial assignments.
    pub fn init(
        docs: &[Vec<(usize, u32)>],
        vocab_size: usize,
        topics: usize,
        alpha: f64,
        beta_prior: f64,
        seed: u64,
    ) -> Result<Self> {
        check_priors(topics, alpha, beta_prior)?;
        let mut words = Vec::with_capacity(docs.len());
        for (d, doc) in docs.iter().enumerate() {
            let mut tokens = Vec::new();
            for &(w, c) in doc {
                if w >= vocab_size {
                    return Err(Error::Input(format!(
                        "document {d} has word id {w} outside a vocabulary of {vocab_size}"
                    )));
                }
                tokens.extend(std::iter::repeat_n(w, c as usize));
            }
            words.push(tokens);
        }
        let mut rng = BaseNoise::new(seed, u64::MAX, 0).rng();
        let z: Vec<Vec<usize>> = words
            .iter()
            .map(|doc| doc.iter().map(|_| rng.random_range(0..topics)).collect())
            .collect();
        let mut state = Self {
            words,
            z,
            n_dk: Vec::new(),
            n_kw: Vec::new(),
            n_k: Vec::new(),
            topics,
            vocab_size,
            alpha,
            beta_prior,
        };
        state.recount();
        Ok(state)
    }

    /// Rebuilds every count table from `z`.
    pub fn recount(&mut self) {
        let (k, v) = (self.topics, self.vocab_size);
        self.n_dk = vec![0; self.words.len() * k];
        self.n_kw = vec![0; k * v];
        self.n_k = vec![0; k];
        for (d, (ws, zs)) in self.words.iter().zip(&self.z).enumerate() {
            for (&w, &t) in ws.iter().zip(zs) {
                self.n_dk[d * k + t] += 1;
                self.n_kw[t * v + w] += 1;
                self.n_k[t] += 1;
            }
        }
    }

    /// True when the tables agree with a recount from `z`.
    pub fn is_consistent(&self) -> bool {
        let mut fresh = self.clone();
        fresh.recount();
        fresh.n_dk == self.n_dk && fresh.n_kw == self.n_kw && fresh.n_k == self.n_k
    }

    /// Normalized conditional over topics for word `w` in document `d`,
    /// evaluated on the counts as they stand (a sweep removes the token
    /// first).
    pub fn conditional(&self, d: usize, w: usize, out: &mut [f64]) {
        let (k, v) = (self.topics, self.vocab_size);
        let vb = v as f64 * self.beta_prior;
        let mut total = 0.0;
        for t in 0..k {
            let p = (f64::from(self.n_dk[d * k + t]) + self.alpha)
                * (f64::from(self.n_kw[t * v + w]) + self.beta_prior)
                / (f64::from(self.n_k[t]) + vb);
            out[t] = p;
            total += p;
        }
        out.iter_mut().for_each(|p| *p /= total);
    }

    /// Resamples every token once, in document order.
    pub fn sweep(&mut self, noise: &BaseNoise) {
        let (k, v) = (self.topics, self.vocab_size);
        let mut rng = noise.rng();
        let mut probs = vec![0.0; k];
        for d in 0..self.words.len() {
            for i in 0..self.words[d].len() {
                let w = self.words[d][i];
                let old = self.z[d][i];
                self.n_dk[d * k + old] -= 1;
                self.n_kw[old * v + w] -= 1;
                self.n_k[old] -= 1;
                self.conditional(d, w, &mut probs);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut new = k - 1;
                for (t, &p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        new = t;
                        break;
                    }
                }
                self.z[d][i] = new;
                self.n_dk[d * k + new] += 1;
                self.n_kw[new * v + w] += 1;
                self.n_k[new] += 1;
            }
        }
    }

    /// `θ̂[d,k] = (n_dk+α)/(N_d+Kα)`, `φ̂[k,w] = (n_kw+β̂)/(n_k+Vβ̂)`.
    pub fn estimate(&self) -> GibbsEstimate {
        let (k, v) = (self.topics, self.vocab_size);
        let n_docs = self.words.len();
        let mut theta = DenseMatrix::zeros(n_docs, k);
        for d in 0..n_docs {
            let denom = self.words[d].len() as f64 + k as f64 * self.alpha;
            for t in 0..k {
                theta[(d, t)] = (f64::from(self.n_dk[d * k + t]) + self.alpha) / denom;
            }
        }
        let mut phi = DenseMatrix::zeros(k, v);
        for t in 0..k {
            let denom = f64::from(self.n_k[t]) + v as f64 * self.beta_prior;
            for w in 0..v {
                phi[(t, w)] = (f64::from(self.n_kw[t * v + w]) + self.beta_prior) / denom;
            }
        }
        GibbsEstimate { theta, phi }
    }
}

/// Initializes and runs `config.sweeps` sweeps; sweep `s` draws from
/// `BaseNoise::new(seed, s, 0)`.
pub fn run_gibbs(docs: &[Vec<(usize, u32)>], vocab_size: usize, config: &GibbsConfig) -> Result<GibbsEstimate> {
    let mut state = GibbsState::init(
        docs,
        vocab_size,
        config.topics,
        config.alpha,
        config.beta_prior,
        config.seed,
    )?;
    let mut sum: Option<(GibbsEstimate, usize)> = None;
    for s in 0..config.sweeps {
        state.sweep(&BaseNoise::new(config.seed, s as u64, 0));
        if config.average_after.is_some_and(|b| s + 1 > b) {
            let e = state.estimate();
            match &mut sum {
                None => sum = Some((e, 1)),
                Some((acc, n)) => {
                    for (a, x) in acc.theta.data_mut().iter_mut().zip(e.theta.data()) {
                        *a += x;
                    }
                    for (a, x) in acc.phi.data_mut().iter_mut().zip(e.phi.data()) {
                        *a += x;
                    }
                    *n += 1;
                }
            }
        }
    }
    Ok(match sum {
        None => state.estimate(),
        Some((acc, n)) => {
            let scale = 1.0 / n as f64;
            GibbsEstimate {
                theta: acc.theta.map(|x| x * scale),
                phi: acc.phi.map(|x| x * scale),
            }
        }
    })
}
