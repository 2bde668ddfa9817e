//! Planted-topic corpora for end-to-end checks.
//!
//! Topic `k` owns a disjoint block of `vocab_per_topic` words whose
//! embeddings scatter with unit variance around `(separation/√2)·e_k`, so
//! cluster centers sit `separation` apart. Each document has a labeled
//! topic; its proportions are drawn from a sparse `Dir(0.1)` with the
//! largest entry moved onto the label, and every token follows LDA's
//! generative story.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{build_corpus, Corpus, EmbeddingMatrix};
use crate::distributions::BaseNoise;
use crate::error::{Error, Result};
use crate::formats::{write_atomic, write_lines};
use crate::numkernel::DenseMatrix;

pub const DOC_ALPHA: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub topics: usize,
    pub docs_per_topic: usize,
    pub doc_length: usize,
    pub vocab_per_topic: usize,
    pub embed_dim: usize,
    pub separation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            topics: 3,
            docs_per_topic: 200,
            doc_length: 12,
            vocab_per_topic: 100,
            embed_dim: 10,
            separation: 5.0,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub docs: Vec<Vec<String>>,
    /// Planted topic of every document.
    pub labels: Vec<usize>,
    /// Topic-major: word `i` belongs to topic `i / vocab_per_topic`.
    pub words: Vec<String>,
    pub embeddings: DenseMatrix<f64>,
}

fn sample_dirichlet(rng: &mut impl Rng, alpha: f64, n: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    let mut x: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = x.iter().sum();
    if total > 0.0 {
        x.iter_mut().for_each(|v| *v /= total);
    } else {
        // Every draw underflowed; put the mass on one coordinate.
        x[rng.random_range(0..n)] = 1.0;
    }
    x
}

fn categorical(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    let SynthConfig {
        topics: k,
        docs_per_topic,
        doc_length,
        vocab_per_topic: vpt,
        embed_dim: dim,
        separation,
        seed,
    } = *cfg;
    if k == 0 || docs_per_topic == 0 || doc_length == 0 || vpt == 0 || dim == 0 {
        return Err(Error::Input("synthetic corpus sizes must all be at least 1".into()));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::Input(format!("separation must be >= 0, got {separation}")));
    }
    if dim < k && separation > 0.0 {
        return Err(Error::Input(format!(
            "embedding dimension {dim} cannot hold {k} orthogonal cluster centers"
        )));
    }
    let base = BaseNoise::new(seed, 0, 0);
    let words: Vec<String> = (0..k * vpt).map(|i| format!("t{}w{}", i / vpt, i % vpt)).collect();

    let offset = separation / std::f64::consts::SQRT_2;
    let mut rng = base.child(0).rng();
    let mut embeddings = DenseMatrix::zeros(k * vpt, dim);
    for i in 0..k * vpt {
        for j in 0..dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            embeddings[(i, j)] = noise + if j == i / vpt { offset } else { 0.0 };
        }
    }

    let mut rng = base.child(1).rng();
    let topic_words: Vec<Vec<f64>> = (0..k).map(|_| sample_dirichlet(&mut rng, 1.0, vpt)).collect();

    let mut rng = base.child(2).rng();
    let mut docs = Vec::with_capacity(k * docs_per_topic);
    let mut labels = Vec::with_capacity(k * docs_per_topic);
    for label in 0..k {
        for _ in 0..docs_per_topic {
            let mut theta = sample_dirichlet(&mut rng, DOC_ALPHA, k);
            let top = crate::model::argmax(&theta);
            theta.swap(top, label);
            let doc = (0..doc_length)
                .map(|_| {
                    let z = categorical(&mut rng, &theta);
                    words[z * vpt + categorical(&mut rng, &topic_words[z])].clone()
                })
                .collect();
            docs.push(doc);
            labels.push(label);
        }
    }
    Ok(SynthCorpus {
        docs,
        labels,
        words,
        embeddings,
    })
}

impl SynthCorpus {
    /// The encoded corpus, labels attached, with embedding rows aligned to
    /// its vocabulary.
    pub fn to_corpus(&self) -> Result<(Corpus, EmbeddingMatrix<f64>)> {
        let names: Vec<String> = self.labels.iter().map(usize::to_string).collect();
        let corpus = build_corpus(&self.docs, Some(&names))?;
        let vpt = self.words.len() / self.labels.iter().max().map_or(1, |m| m + 1);
        let mut vectors = DenseMatrix::zeros(corpus.vocab.len(), self.embeddings.cols());
        for (id, w) in corpus.vocab.words().iter().enumerate() {
            let (t, i) = w[1..].split_once('w').expect("synthetic word name");
            let src = t.parse::<usize>().expect("topic") * vpt + i.parse::<usize>().expect("index");
            vectors.row_mut(id).copy_from_slice(self.embeddings.row(src));
        }
        Ok((corpus, EmbeddingMatrix { vectors }))
    }

    /// Writes `corpus.txt`, `labels.txt` and `embeddings.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let lines: Vec<String> = self.docs.iter().map(|d| d.join(" ")).collect();
        write_lines(&dir.join("corpus.txt"), &lines)?;
        write_lines(&dir.join("labels.txt"), &self.labels)?;
        let mut text = String::new();
        for (i, w) in self.words.iter().enumerate() {
            text.push_str(w);
            for x in self.embeddings.row(i) {
                text.push(' ');
                text.push_str(&x.to_string());
            }
            text.push('\n');
        }
        write_atomic(&dir.join("embeddings.txt"), text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_embeddings;
    use crate::corpus::read_lines;

    fn small() -> SynthConfig {
        SynthConfig {
            topics: 3,
            docs_per_topic: 20,
            doc_length: 8,
            vocab_per_topic: 10,
            embed_dim: 4,
            separation: 5.0,
            seed: 1,
        }
    }

    fn center(c: &SynthCorpus, topic: usize, vpt: usize) -> Vec<f64> {
        let dim = c.embeddings.cols();
        (0..dim)
            .map(|j| (0..vpt).map(|i| c.embeddings[(topic * vpt + i, j)]).sum::<f64>() / vpt as f64)
            .collect()
    }

    #[test]
    fn shape_and_planted_structure() {
        let cfg = small();
        let c = synth_corpus(&cfg).unwrap();
        assert_eq!(c.docs.len(), 60);
        assert!(c.docs.iter().all(|d| d.len() == 8));
        assert_eq!(c.embeddings.shape(), (30, 4));
        // Most tokens come from the labeled topic.
        let own: usize = c
            .docs
            .iter()
            .zip(&c.labels)
            .map(|(d, &l)| d.iter().filter(|w| w.starts_with(&format!("t{l}w"))).count())
            .sum();
        assert!(own as f64 > 0.6 * 480.0, "{own}");
        assert_eq!(c, synth_corpus(&cfg).unwrap());
        assert_ne!(c, synth_corpus(&SynthConfig { seed: 2, ..cfg }).unwrap());
    }

    #[test]
    fn separation_controls_clusters() {
        let wide = SynthConfig {
            vocab_per_topic: 400,
            ..small()
        };
        let c = synth_corpus(&wide).unwrap();
        let (a, b) = (center(&c, 0, 400), center(&c, 1, 400));
        let dist = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!((dist - 5.0).abs() < 0.5, "{dist}");
        let flat = synth_corpus(&SynthConfig { separation: 0.0, ..wide }).unwrap();
        for t in 0..3 {
            assert!(center(&flat, t, 400).iter().all(|x| x.abs() < 0.25));
        }
        assert!(synth_corpus(&SynthConfig { embed_dim: 2, ..small() }).is_err());
        assert!(synth_corpus(&SynthConfig { doc_length: 0, ..small() }).is_err());
    }

    #[test]
    fn files_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let c = synth_corpus(&small()).unwrap();
        c.write(dir.path()).unwrap();
        let lines = read_lines(&dir.path().join("corpus.txt")).unwrap();
        let tokens: Vec<Vec<String>> = lines.iter().map(|l| l.split_whitespace().map(String::from).collect()).collect();
        assert_eq!(tokens, c.docs);
        let labels = read_lines(&dir.path().join("labels.txt")).unwrap();
        let corpus = build_corpus(&tokens, Some(&labels)).unwrap();
        let emb = load_embeddings::<f64>(&dir.path().join("embeddings.txt"), &corpus.vocab).unwrap();
        assert!(emb.missing.is_empty());
        let (direct, vectors) = c.to_corpus().unwrap();
        assert_eq!(direct, corpus);
        assert_eq!(emb.embeddings, vectors);
    }
}
