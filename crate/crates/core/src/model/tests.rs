use super::*;
use crate::distributions::BaseNoise;
use crate::numkernel::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn embeddings(v: usize, d: usize, seed: u64) -> DenseMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseMatrix::from_vec(v, d, (0..v * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_batch(docs: usize, v: usize, seed: u64) -> DocBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DocBatch::new(
        (0..docs)
            .map(|_| {
                let n = rng.random_range(1..6usize).min(v);
                let mut ids: Vec<usize> = (0..v).collect();
                for i in 0..n {
                    let j = rng.random_range(i..v);
                    ids.swap(i, j);
                }
                ids[..n].iter().map(|&w| (w, rng.random_range(1..4))).collect()
            })
            .collect(),
    )
}

fn config(k: usize, fc: bool, bn: bool, train_emb: bool) -> ModelConfig {
    ModelConfig {
        topics: k,
        hidden: vec![6, 5],
        fc_batchnorm: fc,
        beta_batchnorm: bn,
        train_embeddings: train_emb,
    }
}

/// Moves every parameter off its initial value so that no symmetry hides
/// a wrong gradient.
fn perturb(p: &mut ModelParams<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for block in p.trainable_mut() {
        for x in block {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    for layer in &mut p.context.hidden {
        if let Some(bn) = layer.bn.as_mut() {
            for (m, v) in bn.running_mean.iter_mut().zip(bn.running_var.iter_mut()) {
                *m = rng.random_range(-0.5..0.5);
                *v = rng.random_range(0.5..2.0);
            }
        }
    }
}

#[cfg(feature = "quad")]
fn max_rel(analytic: &[&[f64]], numeric: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0_f64;
    for (a, c) in analytic.iter().zip(numeric) {
        assert_eq!(a.len(), c.len());
        for (&x, &y) in a.iter().zip(c) {
            worst = worst.max((x - y).abs() / x.abs().max(y.abs()).max(1e-12));
        }
    }
    worst
}

#[test]
fn trace_invariants() {
    let p = ModelParams::init(config(4, true, true, false), embeddings(20, 3, 1), 2).unwrap();
    let batch = random_batch(6, 20, 3);
    let trace = forward_batch(&p, &batch, 0.7, BaseNoise::new(5, 0, 0)).unwrap();
    for e in 0..trace.entries.len() {
        let s: f64 = trace.mu.row(e).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
    for d in 0..batch.len() {
        let s: f64 = trace.theta.row(d).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        let eta: f64 = trace.eta.row(d).iter().sum();
        assert!((eta - batch.token_count(d) as f64).abs() < 1e-9);
        assert!(trace.nu.row(d).iter().all(|&x| x >= 1e-6));
    }
    for t in 0..4 {
        let s: f64 = trace.beta.row(t).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
    assert!(trace.loss().is_finite());
    assert_eq!(elbo(&trace), -trace.loss());
}

#[test]
fn same_noise_same_trace() {
    let p = ModelParams::init(config(3, true, true, false), embeddings(10, 3, 1), 2).unwrap();
    let batch = random_batch(4, 10, 3);
    let a = forward_batch(&p, &batch, 1.0, BaseNoise::new(5, 1, 2)).unwrap();
    let b = forward_batch(&p, &batch, 1.0, BaseNoise::new(5, 1, 2)).unwrap();
    let c = forward_batch(&p, &batch, 1.0, BaseNoise::new(5, 1, 3)).unwrap();
    assert_eq!(a.loss(), b.loss());
    assert_eq!(a.theta, b.theta);
    assert_ne!(a.theta, c.theta);
}

#[test]
fn single_topic_degenerates() {
    let p = ModelParams::init(config(1, true, true, false), embeddings(8, 2, 1), 2).unwrap();
    let batch = random_batch(3, 8, 4);
    let trace = forward_batch(&p, &batch, 0.5, BaseNoise::new(1, 0, 0)).unwrap();
    assert!(trace.mu.data().iter().all(|&m| m == 1.0));
    assert!(trace.theta.data().iter().all(|&t| (t - 1.0).abs() < 1e-12));
    for term in &trace.terms {
        assert_eq!(term.entropy, 0.0);
        assert!(term.topic_prior.abs() < 1e-9);
        assert!(term.kl.abs() < 1e-12);
    }
}

#[test]
fn constant_output_bias_shift_leaves_mu_unchanged() {
    let mut p = ModelParams::init(config(3, true, true, false), embeddings(10, 3, 1), 2).unwrap();
    let batch = random_batch(4, 10, 3);
    let opts = ForwardOptions::infer(0.8);
    let before = forward_batch_with(&p, &batch, &opts).unwrap();
    for b in p.context.output.bias.as_mut().unwrap() {
        *b += 2.5;
    }
    let after = forward_batch_with(&p, &batch, &opts).unwrap();
    for (x, y) in before.mu.data().iter().zip(after.mu.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn beta_normalizer_row_statistics() {
    let mut p = ModelParams::init(config(3, true, true, false), embeddings(40, 3, 1), 2).unwrap();
    p.beta_bn.as_mut().unwrap().gamma = vec![0.5, 1.0, 3.0];
    let batch = random_batch(2, 40, 3);
    let trace = forward_batch(&p, &batch, 1.0, BaseNoise::new(1, 0, 0)).unwrap();
    let logits = trace.beta_bn.as_ref().unwrap().y.transpose();
    for (t, &g) in [0.5, 1.0, 3.0].iter().enumerate() {
        let row = logits.row(t);
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / row.len() as f64;
        assert!(mean.abs() < 1e-8);
        assert!((var - g * g).abs() < 1e-6, "{var} vs {}", g * g);
    }
}

#[test]
fn infer_is_deterministic_and_noise_free() {
    let p = ModelParams::init(config(3, true, true, false), embeddings(10, 3, 1), 2).unwrap();
    let batch = random_batch(5, 10, 3);
    let a = infer_theta(&p, &batch.docs, 0.7).unwrap();
    let b = infer_theta(&p, &batch.docs, 0.7).unwrap();
    assert_eq!(a, b);
    let single = infer_theta(&p, &batch.docs[..1], 0.7).unwrap();
    assert_eq!(single.proportions.row(0), a.proportions.row(0));
    for d in 0..5 {
        let row = a.proportions.row(d);
        assert_eq!(a.clusters[d], infer::argmax(row));
    }
}

#[test]
fn argmax_prefers_lowest_index() {
    assert_eq!(infer::argmax(&[0.2, 0.4, 0.4]), 1);
    assert_eq!(infer::argmax(&[0.5, 0.5]), 0);
}

#[test]
fn export_orders_by_weight_then_id() {
    let mut p = ModelParams::init(config(2, true, false, false), embeddings(4, 2, 1), 2).unwrap();
    p.beta_tilde = DenseMatrix::from_rows(&[vec![0.0, 1.0, 1.0, -1.0], vec![3.0, 0.0, 0.0, 0.0]])
        .unwrap();
    let words: Vec<String> = ["w0", "w1", "w2", "w3"].iter().map(|s| s.to_string()).collect();
    let topics = export_topics(&p, &words, 3).unwrap();
    assert_eq!(topics[0], vec!["w1", "w2", "w0"]);
    assert_eq!(topics[1], vec!["w0", "w1", "w2"]);
    assert!(export_topics(&p, &words, 5).is_err());
}

#[test]
fn running_stats_move_only_on_absorb() {
    let mut p = ModelParams::init(config(3, true, true, false), embeddings(10, 3, 1), 2).unwrap();
    let batch = random_batch(4, 10, 3);
    let before = p.context.hidden[0].bn.clone().unwrap();
    let trace = forward_batch(&p, &batch, 1.0, BaseNoise::new(1, 0, 0)).unwrap();
    assert_eq!(p.context.hidden[0].bn.as_ref().unwrap(), &before);
    p.absorb_running_stats(&trace);
    assert_ne!(p.context.hidden[0].bn.as_ref().unwrap().running_mean, before.running_mean);
}

#[test]
fn frozen_alpha_gets_zero_gradient() {
    let p = ModelParams::init(config(3, true, true, false), embeddings(10, 3, 1), 2).unwrap();
    let batch = random_batch(4, 10, 3);
    let trace = forward_batch(&p, &batch, 1.0, BaseNoise::new(1, 0, 0)).unwrap();
    let g = backward(&p, &batch, &trace, false).unwrap();
    assert!(g.alpha_hat.iter().all(|&x| x == 0.0));
    let g = backward(&p, &batch, &trace, true).unwrap();
    assert!(g.alpha_hat.iter().any(|&x| x != 0.0));
}

#[cfg(feature = "quad")]
mod quad {
    use super::*;
    use crate::scalar::Scalar;
    use f128::f128;

    /// Analytic f64 gradient against quad-precision central differences
    /// with the Gumbel perturbations and `θ` frozen.
    fn check_frozen(cfg: ModelConfig, seed: u64) -> f64 {
        let mut p = ModelParams::init(cfg, embeddings(12, 4, seed), seed).unwrap();
        perturb(&mut p, seed + 100);
        let batch = random_batch(5, 12, seed + 200);
        let noise = BaseNoise::new(seed, 0, 0);
        let drawn = forward_batch(&p, &batch, 0.8, noise).unwrap();
        let mut opts = ForwardOptions::train(0.8, noise);
        opts.fixed_gumbel = drawn.gumbel.clone();
        opts.fixed_log_theta = Some(drawn.log_theta.clone());
        let trace = forward_batch_with(&p, &batch, &opts).unwrap();
        let grads = backward(&p, &batch, &trace, true).unwrap();

        let pq: ModelParams<f128> = p.cast();
        let opts_q = ForwardOptions {
            temperature: f128::from(0.8),
            mode: Mode::Train,
            noise: Some(noise),
            fixed_gumbel: opts.fixed_gumbel.as_ref().map(|g| g.cast()),
            fixed_log_theta: opts.fixed_log_theta.as_ref().map(|g| g.cast()),
        };
        let numeric = numeric_gradients(&pq, &batch, &opts_q, f128::from(1e-12)).unwrap();
        let numeric: Vec<Vec<f64>> = numeric
            .iter()
            .map(|b| b.iter().map(|x| x.as_f64()).collect())
            .collect();
        max_rel(&grads.trainable(), &numeric)
    }

    #[test]
    fn gradients_all_switches() {
        let mut seed = 1;
        for fc in [true, false] {
            for bn in [true, false] {
                for emb in [false, true] {
                    let err = check_frozen(config(3, fc, bn, emb), seed);
                    assert!(err < 1e-4, "fc={fc} bn={bn} emb={emb}: {err}");
                    seed += 1;
                }
            }
        }
    }

    #[test]
    fn gradients_infer_path() {
        let mut p = ModelParams::init(config(3, true, true, true), embeddings(12, 4, 7), 7).unwrap();
        perturb(&mut p, 8);
        let batch = random_batch(4, 12, 9);
        let trace = forward_batch_with(&p, &batch, &ForwardOptions::infer(0.9)).unwrap();
        let grads = backward(&p, &batch, &trace, true).unwrap();
        let pq: ModelParams<f128> = p.cast();
        let numeric = numeric_gradients(
            &pq,
            &batch,
            &ForwardOptions::infer(f128::from(0.9)),
            f128::from(1e-12),
        )
        .unwrap();
        let numeric: Vec<Vec<f64>> = numeric
            .iter()
            .map(|b| b.iter().map(|x| x.as_f64()).collect())
            .collect();
        let err = max_rel(&grads.trainable(), &numeric);
        assert!(err < 1e-4, "{err}");
    }
}

fn zero_logits(p: &mut ModelParams<f64>) {
    p.rho = DenseMatrix::zeros(p.rho.rows(), p.rho.cols());
    for layer in &mut p.context.hidden {
        layer.linear.weight = layer.linear.weight.map(|_| 0.0);
        if let Some(b) = layer.linear.bias.as_mut() {
            b.iter_mut().for_each(|x| *x = 0.0);
        }
        if let Some(bn) = layer.bn.as_mut() {
            bn.shift.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    p.context.output.weight = p.context.output.weight.map(|_| 0.0);
    if let Some(b) = p.context.output.bias.as_mut() {
        b.iter_mut().for_each(|x| *x = 0.0);
    }
}

#[test]
fn symmetric_logits_give_uniform_mu() {
    let mut p = ModelParams::init(config(4, true, true, false), embeddings(10, 3, 1), 2).unwrap();
    zero_logits(&mut p);
    let batch = random_batch(3, 10, 3);
    let infer = forward_batch_with(&p, &batch, &ForwardOptions::infer(0.7)).unwrap();
    for d in 0..3 {
        let n = batch.token_count(d) as f64;
        assert!((infer.terms[d].entropy - n * 4f64.ln()).abs() < 1e-10);
    }
    let mut mean = [0.0; 4];
    let draws = 4000;
    for s in 0..draws {
        let t = forward_batch(&p, &batch, 0.7, BaseNoise::new(9, 0, s)).unwrap();
        for (m, x) in mean.iter_mut().zip(t.mu.row(0)) {
            *m += x / draws as f64;
        }
    }
    for m in mean {
        assert!((m - 0.25).abs() < 0.02, "{m}");
    }
}

/// Term-by-term re-evaluation of the bound from the trace values alone.
#[test]
fn elbo_matches_independent_evaluation() {
    use crate::distributions::special::{digamma, lgamma};
    let mut p = ModelParams::init(config(3, true, true, false), embeddings(15, 3, 4), 5).unwrap();
    perturb(&mut p, 6);
    let batch = random_batch(5, 15, 7);
    let trace = forward_batch(&p, &batch, 0.9, BaseNoise::new(1, 2, 3)).unwrap();
    let alpha: Vec<f64> = p.alpha_hat.iter().map(|&x| (1.0 + x.exp()).ln()).collect();
    let mut total = 0.0;
    for (d, doc) in batch.docs.iter().enumerate() {
        let mut value = 0.0;
        for (j, &(word, count)) in doc.iter().enumerate() {
            let e = trace.doc_offsets[d] + j;
            for t in 0..3 {
                let m = trace.mu[(e, t)];
                value += count as f64 * m * (trace.beta[(t, word)].ln() - m.ln());
            }
        }
        let nu = trace.nu.row(d);
        let (sn, sa): (f64, f64) = (nu.iter().sum(), alpha.iter().sum());
        let mut kl = lgamma(sn).unwrap() - lgamma(sa).unwrap();
        for t in 0..3 {
            kl += lgamma(alpha[t]).unwrap() - lgamma(nu[t]).unwrap()
                + (nu[t] - alpha[t]) * (digamma(nu[t]).unwrap() - digamma(sn).unwrap());
            value += trace.eta[(d, t)] * trace.theta[(d, t)].ln();
        }
        value -= kl;
        assert!((value - trace.terms[d].elbo()).abs() < 1e-10);
        total += value;
    }
    assert!((trace.loss() + total / 5.0).abs() < 1e-10);
}

#[test]
fn loss_finite_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..10_000u64 {
        let k = rng.random_range(1..5);
        let v = rng.random_range(2..12);
        let mut cfg = config(k, rng.random(), rng.random(), rng.random());
        cfg.hidden = vec![3];
        let mut p = ModelParams::init(cfg, embeddings(v, 2, trial), trial).unwrap();
        let scale = [0.1, 1.0, 5.0][trial as usize % 3];
        for block in p.trainable_mut() {
            for x in block {
                *x *= scale;
            }
        }
        let docs = rng.random_range(2..5);
        let mut batch = random_batch(docs, v, trial);
        batch.docs[0].truncate(1);
        batch.docs[0][0].1 = 1;
        let tau = rng.random_range(0.1..1.0);
        let trace = forward_batch(&p, &batch, tau, BaseNoise::new(trial, 0, 0)).unwrap();
        assert!(trace.loss().is_finite(), "trial {trial}");
        let g = backward(&p, &batch, &trace, true).unwrap();
        assert!(g.all_finite(), "trial {trial}");
    }
}

#[test]
fn single_topic_rho_gradient_is_zero() {
    let p = ModelParams::init(config(1, true, true, false), embeddings(8, 2, 1), 2).unwrap();
    let batch = random_batch(3, 8, 4);
    let trace = forward_batch(&p, &batch, 0.5, BaseNoise::new(1, 0, 0)).unwrap();
    let g = backward(&p, &batch, &trace, true).unwrap();
    assert!(g.rho.data().iter().all(|&x| x == 0.0));
    let a = infer_theta(&p, &batch.docs, 0.5).unwrap();
    assert!(a.clusters.iter().all(|&c| c == 0));
    assert!(a.proportions.data().iter().all(|&x| x == 1.0));
}

#[test]
fn absent_words_get_no_embedding_gradient() {
    let mut p = ModelParams::init(config(3, true, true, true), embeddings(10, 3, 1), 2).unwrap();
    perturb(&mut p, 3);
    let batch = DocBatch::new(vec![vec![(0, 2), (3, 1)], vec![(3, 1), (5, 4)]]);
    let trace = forward_batch(&p, &batch, 0.8, BaseNoise::new(1, 0, 0)).unwrap();
    let g = backward(&p, &batch, &trace, true).unwrap();
    for w in 0..10 {
        let zero = g.omega.row(w).iter().all(|&x| x == 0.0);
        assert_eq!(zero, ![0, 3, 5].contains(&w), "word {w}");
    }
    let other = DocBatch::new(vec![vec![(0, 2), (3, 1)], vec![(3, 1), (6, 4)]]);
    assert!(backward(&p, &other, &trace, true).is_err());
}

#[test]
fn margin_document_goes_to_its_topic() {
    let mut p = ModelParams::init(config(3, true, true, false), embeddings(6, 3, 1), 2).unwrap();
    zero_logits(&mut p);
    p.rho[(2, 0)] = 50.0;
    p.omega = DenseMatrix::from_rows(&vec![vec![1.0, 0.0, 0.0]; 6]).unwrap();
    let a = infer_theta(&p, &[vec![(1, 3), (4, 1)], vec![(0, 1)]], 0.7).unwrap();
    assert_eq!(a.clusters, vec![2, 2]);
    let twins = infer_theta(&p, &[vec![(1, 1)], vec![(1, 1)]], 0.7).unwrap();
    assert_eq!(twins.proportions.row(0), twins.proportions.row(1));
}

#[test]
fn export_matches_full_sort() {
    let mut p = ModelParams::init(config(4, true, true, false), embeddings(30, 2, 1), 2).unwrap();
    perturb(&mut p, 5);
    let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
    let beta = p.topic_word_matrix().unwrap();
    let topics = export_topics(&p, &words, 15).unwrap();
    for t in 0..4 {
        let mut order: Vec<(f64, usize)> = beta.row(t).iter().copied().zip(0..).collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let want: Vec<String> = order[..15].iter().map(|&(_, i)| format!("w{i}")).collect();
        assert_eq!(topics[t], want);
    }
    let all = export_topics(&p, &words, 30).unwrap();
    for t in all {
        let mut sorted = t.clone();
        sorted.sort();
        let mut expect = words.clone();
        expect.sort();
        assert_eq!(sorted, expect);
    }
}
