use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::distributions::BaseNoise;
use crate::error::{Error, Result};
use crate::numkernel::{BatchNormState, DenseMatrix};
use crate::scalar::{cast_slice, softplus, softplus_inv, Scalar};

/// Normalizer epsilon at the topic-word site. The per-topic variance of `β̃`
/// starts near `0.02²`, so the usual `1e-5` would dominate it.
pub const BETA_BN_EPS: f64 = 1e-12;

/// Initial offset in `ν = softplus(a·η + b)`; `a` starts at one.
pub const INITIAL_B: f64 = 0.01;

/// Initial value of every entry of the Dirichlet prior `α`.
pub const INITIAL_ALPHA: f64 = 0.1;

/// Architecture and switches. Vocabulary size and embedding dimension are
/// taken from the embedding matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub topics: usize,
    pub hidden: Vec<usize>,
    pub fc_batchnorm: bool,
    pub beta_batchnorm: bool,
    pub train_embeddings: bool,
}

impl ModelConfig {
    pub fn new(topics: usize) -> Self {
        Self {
            topics,
            hidden: vec![128, 128],
            fc_batchnorm: true,
            beta_batchnorm: true,
            train_embeddings: false,
        }
    }
}

/// Affine layer `x·W + b` with `W` stored as `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<S> {
    pub weight: DenseMatrix<S>,
    pub bias: Option<Vec<S>>,
}

impl<S: Scalar> Linear<S> {
    fn zeros(inputs: usize, outputs: usize, bias: bool) -> Self {
        Self {
            weight: DenseMatrix::zeros(inputs, outputs),
            bias: bias.then(|| vec![S::zero(); outputs]),
        }
    }

    fn init(inputs: usize, outputs: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let mut layer = Self::zeros(inputs, outputs, bias);
        for w in layer.weight.data_mut() {
            *w = S::lit(u.sample(rng));
        }
        if let Some(b) = layer.bias.as_mut() {
            for x in b {
                *x = S::lit(u.sample(rng));
            }
        }
        layer
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub(crate) fn apply(&self, x: &DenseMatrix<S>) -> Result<DenseMatrix<S>> {
        let mut z = crate::numkernel::matmul(x, &self.weight)?;
        if let Some(b) = &self.bias {
            for r in 0..z.rows() {
                for (v, &bb) in z.row_mut(r).iter_mut().zip(b) {
                    *v += bb;
                }
            }
        }
        Ok(z)
    }

    fn cast<T: Scalar>(&self) -> Linear<T> {
        Linear {
            weight: self.weight.cast(),
            bias: self.bias.as_ref().map(|b| cast_slice(b)),
        }
    }
}

/// Linear, optional batch normalization, ReLU.
///
/// With normalization the linear bias is dropped: the normalizer's shift
/// takes its place and a bias would receive an identically zero gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenLayer<S> {
    pub linear: Linear<S>,
    pub bn: Option<BatchNormState<S>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextNet<S> {
    pub hidden: Vec<HiddenLayer<S>>,
    pub output: Linear<S>,
}

/// All state of an N-VAE.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub config: ModelConfig,
    /// Word embeddings, `V × D`.
    pub omega: DenseMatrix<S>,
    /// Topic embeddings, `K × D`.
    pub rho: DenseMatrix<S>,
    pub context: ContextNet<S>,
    pub a: S,
    pub b: S,
    /// Topic-word logits, `K × V`.
    pub beta_tilde: DenseMatrix<S>,
    /// Per-topic normalization of `β̃` across the vocabulary. The shift is
    /// held at zero: softmax over the same axis cancels it.
    pub beta_bn: Option<BatchNormState<S>>,
    /// `α = softplus(alpha_hat)`.
    pub alpha_hat: Vec<S>,
}

/// One named parameter block.
#[derive(Debug)]
pub struct NamedTensor<'a, S> {
    pub name: String,
    pub shape: (usize, usize),
    pub trainable: bool,
    pub data: &'a [S],
}

/// Gradient of the loss, laid out like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<S>(pub ModelParams<S>);

impl<S: Scalar> Gradients<S> {
    /// Views the gradient of every trainable block, in the order of
    /// [`ModelParams::trainable_mut`].
    pub fn trainable(&self) -> Vec<&[S]> {
        self.0
            .tensors()
            .into_iter()
            .filter(|t| t.trainable)
            .map(|t| t.data)
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.trainable()
            .iter()
            .all(|d| d.iter().all(|x| x.is_finite()))
    }

    pub(crate) fn scale(&mut self, factor: S) {
        for block in self.0.trainable_mut() {
            for x in block {
                *x *= factor;
            }
        }
    }
}

impl<S: Scalar> std::ops::Deref for Gradients<S> {
    type Target = ModelParams<S>;
    fn deref(&self) -> &ModelParams<S> {
        &self.0
    }
}

impl<S: Scalar> std::ops::DerefMut for Gradients<S> {
    fn deref_mut(&mut self) -> &mut ModelParams<S> {
        &mut self.0
    }
}

impl<S: Scalar> ModelParams<S> {
    /// Randomly initialized parameters around fixed embeddings.
    ///
    /// Linear layers are uniform in `±1/√fan_in`, `β̃` is `N(0, 0.02²)`, and
    /// topic embeddings are Gaussian scaled by the inverse mean word-embedding
    /// norm so that `ρ·ω` starts at unit scale.
    pub fn init(config: ModelConfig, embeddings: DenseMatrix<S>, seed: u64) -> Result<Self> {
        let (v, d) = embeddings.shape();
        let k = config.topics;
        if k == 0 || v == 0 || d == 0 {
            return Err(Error::Input(format!(
                "model needs positive sizes, got V={v} K={k} D={d}"
            )));
        }
        if config.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Input("hidden layer of width zero".into()));
        }
        if !embeddings.all_finite() {
            return Err(Error::Input("embeddings contain non-finite values".into()));
        }
        let mut rng = BaseNoise::new(seed, u64::MAX, u64::MAX).rng();
        let mean_norm = (0..v).map(|r| embeddings.row_norm(r).as_f64()).sum::<f64>() / v as f64;
        let rho_std = if mean_norm > 0.0 { 1.0 / mean_norm } else { 1.0 };
        let mut rho = DenseMatrix::zeros(k, d);
        for x in rho.data_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = S::lit(rho_std * z);
        }
        let mut hidden = Vec::with_capacity(config.hidden.len());
        let mut width = d;
        for &h in &config.hidden {
            hidden.push(HiddenLayer {
                linear: Linear::init(width, h, !config.fc_batchnorm, &mut rng),
                bn: config.fc_batchnorm.then(|| BatchNormState::new(h)),
            });
            width = h;
        }
        let output = Linear::init(width, k, true, &mut rng);
        let mut beta_tilde = DenseMatrix::zeros(k, v);
        for x in beta_tilde.data_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = S::lit(0.02 * z);
        }
        Ok(Self {
            omega: embeddings,
            rho,
            context: ContextNet { hidden, output },
            a: S::one(),
            b: S::lit(INITIAL_B),
            beta_tilde,
            beta_bn: config
                .beta_batchnorm
                .then(|| BatchNormState::with_eps(k, S::lit(BETA_BN_EPS))),
            alpha_hat: vec![softplus_inv(S::lit(INITIAL_ALPHA)); k],
            config,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.omega.rows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.omega.cols()
    }

    pub fn topics(&self) -> usize {
        self.config.topics
    }

    /// Current Dirichlet prior `α`.
    pub fn alpha(&self) -> Vec<S> {
        self.alpha_hat.iter().map(|&x| softplus(x)).collect()
    }

    /// A zero gradient container with this architecture.
    pub fn zeros_like(&self) -> Gradients<S> {
        let zero_bn = |bn: &BatchNormState<S>| {
            let n = bn.features();
            BatchNormState {
                gamma: vec![S::zero(); n],
                shift: vec![S::zero(); n],
                running_mean: vec![S::zero(); n],
                running_var: vec![S::zero(); n],
                momentum: bn.momentum,
                eps: bn.eps,
            }
        };
        let (v, d) = self.omega.shape();
        let k = self.topics();
        Gradients(ModelParams {
            config: self.config.clone(),
            omega: DenseMatrix::zeros(v, d),
            rho: DenseMatrix::zeros(k, d),
            context: ContextNet {
                hidden: self
                    .context
                    .hidden
                    .iter()
                    .map(|h| HiddenLayer {
                        linear: Linear::zeros(
                            h.linear.inputs(),
                            h.linear.outputs(),
                            h.linear.bias.is_some(),
                        ),
                        bn: h.bn.as_ref().map(zero_bn),
                    })
                    .collect(),
                output: Linear::zeros(self.context.output.inputs(), k, true),
            },
            a: S::zero(),
            b: S::zero(),
            beta_tilde: DenseMatrix::zeros(k, v),
            beta_bn: self.beta_bn.as_ref().map(zero_bn),
            alpha_hat: vec![S::zero(); k],
        })
    }

    /// Every parameter block and buffer, in a fixed order.
    pub fn tensors<'a>(&'a self) -> Vec<NamedTensor<'a, S>> {
        let mut out = Vec::new();
        let mut push = |name: String, shape: (usize, usize), trainable: bool, data: &'a [S]| {
            out.push(NamedTensor {
                name,
                shape,
                trainable,
                data,
            })
        };
        let train_emb = self.config.train_embeddings;
        push("omega".into(), self.omega.shape(), train_emb, self.omega.data());
        push("rho".into(), self.rho.shape(), true, self.rho.data());
        for (i, h) in self.context.hidden.iter().enumerate() {
            push(format!("context.{i}.weight"), h.linear.weight.shape(), true, h.linear.weight.data());
            if let Some(b) = &h.linear.bias {
                push(format!("context.{i}.bias"), (1, b.len()), true, b);
            }
            if let Some(bn) = &h.bn {
                let n = (1, bn.features());
                push(format!("context.{i}.bn.gamma"), n, true, &bn.gamma);
                push(format!("context.{i}.bn.shift"), n, true, &bn.shift);
                push(format!("context.{i}.bn.running_mean"), n, false, &bn.running_mean);
                push(format!("context.{i}.bn.running_var"), n, false, &bn.running_var);
            }
        }
        let out_layer = &self.context.output;
        push("context.out.weight".into(), out_layer.weight.shape(), true, out_layer.weight.data());
        if let Some(b) = &out_layer.bias {
            push("context.out.bias".into(), (1, b.len()), true, b);
        }
        push("a".into(), (1, 1), true, std::slice::from_ref(&self.a));
        push("b".into(), (1, 1), true, std::slice::from_ref(&self.b));
        push("beta_tilde".into(), self.beta_tilde.shape(), true, self.beta_tilde.data());
        if let Some(bn) = &self.beta_bn {
            let n = (1, bn.features());
            push("beta_bn.gamma".into(), n, true, &bn.gamma);
            push("beta_bn.shift".into(), n, false, &bn.shift);
        }
        push("alpha_hat".into(), (1, self.alpha_hat.len()), true, &self.alpha_hat);
        out
    }

    /// Mutable view of every block in the order of [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut out: Vec<&mut [S]> = Vec::new();
        out.push(self.omega.data_mut());
        out.push(self.rho.data_mut());
        for h in &mut self.context.hidden {
            out.push(h.linear.weight.data_mut());
            if let Some(b) = &mut h.linear.bias {
                out.push(b);
            }
            if let Some(bn) = &mut h.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.shift);
                out.push(&mut bn.running_mean);
                out.push(&mut bn.running_var);
            }
        }
        out.push(self.context.output.weight.data_mut());
        if let Some(b) = &mut self.context.output.bias {
            out.push(b);
        }
        out.push(std::slice::from_mut(&mut self.a));
        out.push(std::slice::from_mut(&mut self.b));
        out.push(self.beta_tilde.data_mut());
        if let Some(bn) = &mut self.beta_bn {
            out.push(&mut bn.gamma);
            out.push(&mut bn.shift);
        }
        out.push(&mut self.alpha_hat);
        out
    }

    /// Trainable blocks only, in the order of [`Gradients::trainable`].
    pub fn trainable_mut(&mut self) -> Vec<&mut [S]> {
        let flags: Vec<bool> = self.tensors().iter().map(|t| t.trainable).collect();
        self.tensors_mut()
            .into_iter()
            .zip(flags)
            .filter_map(|(t, f)| f.then_some(t))
            .collect()
    }

    /// Names of the trainable blocks.
    pub fn trainable_names(&self) -> Vec<String> {
        self.tensors()
            .into_iter()
            .filter(|t| t.trainable)
            .map(|t| t.name)
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Converts every value to another scalar type.
    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            config: self.config.clone(),
            omega: self.omega.cast(),
            rho: self.rho.cast(),
            context: ContextNet {
                hidden: self
                    .context
                    .hidden
                    .iter()
                    .map(|h| HiddenLayer {
                        linear: h.linear.cast(),
                        bn: h.bn.as_ref().map(|b| b.cast()),
                    })
                    .collect(),
                output: self.context.output.cast(),
            },
            a: T::lit(self.a.as_f64()),
            b: T::lit(self.b.as_f64()),
            beta_tilde: self.beta_tilde.cast(),
            beta_bn: self.beta_bn.as_ref().map(|b| b.cast()),
            alpha_hat: cast_slice(&self.alpha_hat),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn embeddings(v: usize, d: usize) -> DenseMatrix<f64> {
        DenseMatrix::from_vec(v, d, (0..v * d).map(|i| ((i * 7 % 11) as f64) - 5.0).collect())
            .unwrap()
    }

    #[test]
    fn layout_follows_switches() {
        let mut cfg = ModelConfig::new(3);
        cfg.hidden = vec![4, 5];
        let p = ModelParams::init(cfg.clone(), embeddings(6, 2), 1).unwrap();
        let names = p.trainable_names();
        assert!(!names.contains(&"omega".to_string()));
        assert!(!names.contains(&"context.0.bias".to_string()));
        assert!(names.contains(&"context.1.bn.gamma".to_string()));
        assert!(!names.contains(&"beta_bn.shift".to_string()));
        assert_eq!(names.last().unwrap(), "alpha_hat");

        cfg.fc_batchnorm = false;
        cfg.beta_batchnorm = false;
        cfg.train_embeddings = true;
        let mut q = ModelParams::init(cfg, embeddings(6, 2), 1).unwrap();
        let names = q.trainable_names();
        assert_eq!(names[0], "omega");
        assert!(names.contains(&"context.0.bias".to_string()));
        assert!(!names.iter().any(|n| n.contains("bn")));
        let sizes: Vec<usize> = q.tensors().iter().filter(|t| t.trainable).map(|t| t.data.len()).collect();
        let mut_sizes: Vec<usize> = q.trainable_mut().iter().map(|t| t.len()).collect();
        assert_eq!(sizes, mut_sizes);
        assert_eq!(q.tensors().len(), q.tensors_mut().len());
    }

    #[test]
    fn init_values() {
        let p = ModelParams::init(ModelConfig::new(4), embeddings(30, 3), 9).unwrap();
        for a in p.alpha() {
            assert!((a - 0.1).abs() < 1e-12);
        }
        assert_eq!((p.a, p.b), (1.0, 0.01));
        let q = ModelParams::init(ModelConfig::new(4), embeddings(30, 3), 9).unwrap();
        assert_eq!(p, q);
        let r = ModelParams::init(ModelConfig::new(4), embeddings(30, 3), 10).unwrap();
        assert_ne!(p.rho, r.rho);
        let bt = p.beta_tilde.data();
        let sd = (bt.iter().map(|x| x * x).sum::<f64>() / bt.len() as f64).sqrt();
        assert!((sd - 0.02).abs() < 0.005, "{sd}");
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(ModelParams::init(ModelConfig::new(0), embeddings(3, 2), 0).is_err());
        let mut cfg = ModelConfig::new(2);
        cfg.hidden = vec![0];
        assert!(ModelParams::init(cfg, embeddings(3, 2), 0).is_err());
    }

    #[test]
    fn cast_round_trip() {
        let p = ModelParams::init(ModelConfig::new(2), embeddings(5, 2), 3).unwrap();
        let q: ModelParams<f64> = p.cast::<f64>();
        assert_eq!(p, q);
        let g = p.zeros_like();
        assert!(g.trainable().iter().all(|t| t.iter().all(|&x| x == 0.0)));
    }
}
