//! Adam training loop with a first-epoch warm-up, a burn-in period before
//! the Dirichlet prior is learned, per-epoch metrics and per-step gradient
//! diagnostics.

mod checkpoint;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use crate::corpus::{Corpus, EmbeddingMatrix};
use crate::distributions::BaseNoise;
use crate::error::{Error, Result};
use crate::model::{backward, forward_batch, DocBatch, Gradients, ModelConfig, ModelParams};
use crate::scalar::{softplus, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub topics: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub burn_in_epochs: usize,
    pub min_temperature: f64,
    pub layer_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub train_embeddings: bool,
    pub fc_batchnorm: bool,
    pub beta_batchnorm: bool,
    pub seed: u64,
    /// Emit a gradient record after every step.
    pub diagnostics: bool,
}

impl Default for TrainConfig {
    /// Microtext settings: 256 epochs, batch 256, burn-in 128, minimum
    /// temperature 0.7, two hidden layers of 128.
    fn default() -> Self {
        Self {
            topics: 6,
            epochs: 256,
            batch_size: 256,
            burn_in_epochs: 128,
            min_temperature: 0.7,
            layer_sizes: vec![128, 128],
            learning_rate: 8e-3,
            adam_beta1: 0.0,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            train_embeddings: false,
            fc_batchnorm: true,
            beta_batchnorm: true,
            seed: 0,
            diagnostics: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Input(msg));
        if self.topics == 0 {
            return bad("topics must be at least 1".into());
        }
        if self.burn_in_epochs > self.epochs {
            return bad(format!(
                "burn-in epochs {} exceed epochs {}",
                self.burn_in_epochs, self.epochs
            ));
        }
        if !(self.min_temperature > 0.0 && self.min_temperature <= 1.0) {
            return bad(format!("min temperature {} not in (0, 1]", self.min_temperature));
        }
        if self.batch_size < 2 {
            return bad(format!("batch size {} below 2", self.batch_size));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam decay rates must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("Adam epsilon must be positive".into());
        }
        if self.layer_sizes.contains(&0) {
            return bad("layer sizes must be positive".into());
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            topics: self.topics,
            hidden: self.layer_sizes.clone(),
            fc_batchnorm: self.fc_batchnorm,
            beta_batchnorm: self.beta_batchnorm,
            train_embeddings: self.train_embeddings,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub global_step: u64,
    pub steps_per_epoch: u64,
    pub epochs_completed: u64,
    pub learning_rate: f64,
    pub temperature: f64,
}

/// Learning rate and temperature at a global step: linear from `(0, 1)` at
/// step 0 to `(learning_rate, min_temperature)` at the last step of the
/// first epoch, constant afterwards.
pub fn schedule_at(config: &TrainConfig, steps_per_epoch: u64, step: u64) -> (f64, f64) {
    let frac = if steps_per_epoch <= 1 {
        1.0
    } else {
        (step as f64 / (steps_per_epoch - 1) as f64).min(1.0)
    };
    (
        config.learning_rate * frac,
        1.0 + (config.min_temperature - 1.0) * frac,
    )
}

/// First and second moment estimates per trainable block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub names: Vec<String>,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    /// Updates applied to each block so far.
    pub t: Vec<u64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ModelParams<S>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let blocks: Vec<(String, usize)> = params
            .tensors()
            .into_iter()
            .filter(|t| t.trainable)
            .map(|t| (t.name, t.data.len()))
            .collect();
        Self {
            names: blocks.iter().map(|b| b.0.clone()).collect(),
            m: blocks.iter().map(|b| vec![S::zero(); b.1]).collect(),
            v: blocks.iter().map(|b| vec![S::zero(); b.1]).collect(),
            t: vec![0; blocks.len()],
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update of every trainable block whose name is
/// not in `frozen`. Frozen blocks keep both their values and their moments.
///
/// Fails without touching anything if a gradient is not finite.
pub fn adam_step<S: Scalar>(
    state: &mut AdamState<S>,
    params: &mut ModelParams<S>,
    grads: &Gradients<S>,
    lr: f64,
    frozen: &[&str],
) -> Result<()> {
    let g_blocks = grads.trainable();
    if g_blocks.len() != state.names.len() {
        return Err(Error::Shape("gradient blocks do not match the optimizer".into()));
    }
    let bad: Vec<String> = state
        .names
        .iter()
        .zip(&g_blocks)
        .filter_map(|(n, g)| {
            let count = g.iter().filter(|x| !x.is_finite()).count();
            (count > 0).then(|| format!("{n}: {count} of {}", g.len()))
        })
        .collect();
    if !bad.is_empty() {
        return Err(Error::Numerical(format!(
            "non-finite gradient entries ({})",
            bad.join("; ")
        )));
    }
    let (b1, b2) = (S::lit(state.beta1), S::lit(state.beta2));
    let eps = S::lit(state.eps);
    let lr = S::lit(lr);
    for (i, p) in params.trainable_mut().into_iter().enumerate() {
        if frozen.contains(&state.names[i].as_str()) {
            continue;
        }
        let g = g_blocks[i];
        if p.len() != g.len() {
            return Err(Error::Shape(format!("block {} size changed", state.names[i])));
        }
        state.t[i] += 1;
        let t = state.t[i] as i32;
        let c1 = S::one() - b1.powi(t);
        let c2 = S::one() - b2.powi(t);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (S::one() - b1) * g[j];
            v[j] = b2 * v[j] + (S::one() - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Mean per-document ELBO terms over an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub step: u64,
    pub loss: f64,
    pub entropy_term: f64,
    pub kl_term: f64,
    pub rec_term: f64,
    pub eta_logtheta_term: f64,
    pub lr: f64,
    pub tau: f64,
    pub alpha: Vec<f64>,
}

/// Gradient magnitudes after one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: u64,
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub tau: f64,
    /// L2 norm of each topic's row of the `β̃` gradient.
    pub beta_grad_norms: Vec<f64>,
    pub alpha: Vec<f64>,
    /// L2 norm of each output column of the last linear layer's weight
    /// gradient, and of the whole matrix.
    pub fc_grad_norms: Vec<f64>,
    pub fc_grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Epoch(EpochRecord),
    Step(StepRecord),
}

impl LogRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log records serialize")
    }
}

/// Model, optimizer and schedule after training.
#[derive(Clone, Debug)]
pub struct Trained<S> {
    pub params: ModelParams<S>,
    pub adam: AdamState<S>,
    pub schedule: ScheduleState,
}

/// Splits `n` items into runs of `batch_size`; a final run shorter than two
/// joins the previous one.
pub fn batch_bounds(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n)
        .step_by(batch_size.max(1))
        .map(|s| (s, (s + batch_size).min(n)))
        .collect();
    if out.len() > 1 {
        let (s, e) = out[out.len() - 1];
        if e - s < 2 {
            out.pop();
            out.last_mut().expect("at least one batch").1 = e;
        }
    }
    out
}

fn norm<S: Scalar>(xs: impl Iterator<Item = S>) -> f64 {
    xs.fold(0.0, |acc, x| acc + x.as_f64() * x.as_f64()).sqrt()
}

fn step_record<S: Scalar>(
    params: &ModelParams<S>,
    grads: &Gradients<S>,
    epoch: u64,
    step: u64,
    loss: f64,
    lr: f64,
    tau: f64,
) -> StepRecord {
    let k = params.topics();
    let w = &grads.context.output.weight;
    StepRecord {
        epoch,
        step,
        loss,
        lr,
        tau,
        beta_grad_norms: (0..k)
            .map(|t| norm(grads.beta_tilde.row(t).iter().copied()))
            .collect(),
        alpha: params.alpha().iter().map(|a| a.as_f64()).collect(),
        fc_grad_norms: (0..k)
            .map(|t| norm((0..w.rows()).map(|r| w[(r, t)])))
            .collect(),
        fc_grad_norm: norm(w.data().iter().copied()),
    }
}

/// Summary of a diagnostics run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagSummary {
    /// Largest over smallest per-topic `β̃` gradient norm, each averaged
    /// over the final epoch's steps.
    pub beta_grad_ratio: f64,
    /// Coefficient of variation of `α` after the last step.
    pub alpha_cv: f64,
    /// Median over all steps of the last linear layer's gradient norm.
    pub fc_grad_median: f64,
}

pub fn summarize_diagnostics(steps: &[StepRecord]) -> Option<DiagSummary> {
    let last = steps.last()?;
    let final_epoch: Vec<&StepRecord> = steps.iter().filter(|s| s.epoch == last.epoch).collect();
    let k = last.beta_grad_norms.len();
    let mean_norms: Vec<f64> = (0..k)
        .map(|t| final_epoch.iter().map(|s| s.beta_grad_norms[t]).sum::<f64>() / final_epoch.len() as f64)
        .collect();
    let hi = mean_norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = mean_norms.iter().copied().fold(f64::INFINITY, f64::min);
    let n = last.alpha.len() as f64;
    let mean = last.alpha.iter().sum::<f64>() / n;
    let var = last.alpha.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let mut fc: Vec<f64> = steps.iter().map(|s| s.fc_grad_norm).collect();
    fc.sort_by(f64::total_cmp);
    let mid = fc.len() / 2;
    let fc_grad_median = if fc.len() % 2 == 1 { fc[mid] } else { 0.5 * (fc[mid - 1] + fc[mid]) };
    Some(DiagSummary {
        beta_grad_ratio: if lo > 0.0 { hi / lo } else { f64::INFINITY },
        alpha_cv: var.sqrt() / mean,
        fc_grad_median,
    })
}

/// Trains a fresh model on `corpus`.
///
/// Documents are reshuffled every epoch from the seed. The prior `α` is held
/// at its initial value for the first `burn_in_epochs` epochs. `sink`
/// receives one record per epoch, plus one per step with diagnostics on.
pub fn train<S: Scalar>(
    corpus: &Corpus,
    embeddings: &EmbeddingMatrix<S>,
    config: &TrainConfig,
    sink: &mut dyn FnMut(&LogRecord) -> Result<()>,
) -> Result<Trained<S>> {
    config.validate()?;
    if corpus.len() < 2 {
        return Err(Error::Input(format!(
            "training needs at least 2 documents, corpus has {}",
            corpus.len()
        )));
    }
    if embeddings.vectors.rows() != corpus.vocab.len() {
        return Err(Error::Input(format!(
            "embeddings have {} rows for a vocabulary of {}",
            embeddings.vectors.rows(),
            corpus.vocab.len()
        )));
    }
    let params = ModelParams::init(config.model_config(), embeddings.vectors.clone(), config.seed)?;
    let adam = AdamState::new(&params, config.adam_beta1, config.adam_beta2, config.adam_eps);
    let bounds = batch_bounds(corpus.len(), config.batch_size);
    let schedule = ScheduleState {
        global_step: 0,
        steps_per_epoch: bounds.len() as u64,
        epochs_completed: 0,
        learning_rate: 0.0,
        temperature: 1.0,
    };
    let mut state = Trained {
        params,
        adam,
        schedule,
    };
    resume(&mut state, corpus, config, config.epochs, sink)?;
    Ok(state)
}

/// Continues training until `until_epoch` epochs are complete.
pub fn resume<S: Scalar>(
    state: &mut Trained<S>,
    corpus: &Corpus,
    config: &TrainConfig,
    until_epoch: usize,
    sink: &mut dyn FnMut(&LogRecord) -> Result<()>,
) -> Result<()> {
    config.validate()?;
    let bounds = batch_bounds(corpus.len(), config.batch_size);
    let steps_per_epoch = bounds.len() as u64;
    if steps_per_epoch != state.schedule.steps_per_epoch {
        return Err(Error::Input("corpus or batch size changed since the checkpoint".into()));
    }
    let k = config.topics;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in state.schedule.epochs_completed..until_epoch as u64 {
        let alpha_trainable = epoch >= config.burn_in_epochs as u64;
        let frozen: &[&str] = if alpha_trainable { &[] } else { &["alpha_hat"] };
        order.sort_unstable();
        order.shuffle(&mut BaseNoise::new(config.seed, epoch, u64::MAX).rng());
        let mut sums = [0.0_f64; 4];
        let (mut lr, mut tau) = (0.0, 1.0);
        for (b, &(start, end)) in bounds.iter().enumerate() {
            let step = state.schedule.global_step;
            (lr, tau) = schedule_at(config, steps_per_epoch, step);
            let batch = DocBatch::new(order[start..end].iter().map(|&d| corpus.docs[d].clone()).collect());
            let noise = BaseNoise::new(config.seed, epoch, b as u64);
            let trace = forward_batch(&state.params, &batch, S::lit(tau), noise)?;
            let grads = backward(&state.params, &batch, &trace, alpha_trainable)?;
            for term in &trace.terms {
                sums[0] += term.entropy.as_f64();
                sums[1] += term.kl.as_f64();
                sums[2] += term.reconstruction.as_f64();
                sums[3] += term.topic_prior.as_f64();
            }
            adam_step(&mut state.adam, &mut state.params, &grads, lr, frozen).map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!(
                    "epoch {epoch} step {step}: {msg}; loss {}",
                    trace.loss().as_f64()
                )),
                other => other,
            })?;
            state.params.absorb_running_stats(&trace);
            if config.diagnostics {
                let rec = step_record(&state.params, &grads, epoch + 1, step, trace.loss().as_f64(), lr, tau);
                sink(&LogRecord::Step(rec))?;
            }
            state.schedule.global_step += 1;
        }
        state.schedule.epochs_completed = epoch + 1;
        state.schedule.learning_rate = lr;
        state.schedule.temperature = tau;
        let n = corpus.len() as f64;
        let [entropy, kl, rec, prior] = sums.map(|s| s / n);
        let alpha: Vec<f64> = state.params.alpha_hat.iter().map(|&a| softplus(a).as_f64()).collect();
        debug_assert_eq!(alpha.len(), k);
        sink(&LogRecord::Epoch(EpochRecord {
            epoch: epoch + 1,
            step: state.schedule.global_step,
            loss: -(entropy - kl + rec + prior),
            entropy_term: entropy,
            kl_term: kl,
            rec_term: rec,
            eta_logtheta_term: prior,
            lr,
            tau,
            alpha,
        }))?;
    }
    Ok(())
}
