use super::batch::DocBatch;
use super::forward::{forward_batch_with, ForwardOptions};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::numkernel::DenseMatrix;
use crate::scalar::Scalar;

const INFER_CHUNK: usize = 1024;

/// Deterministic topic proportions and the hard cluster of every document.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicAssignment<S> {
    /// `N × K`, rows sum to one.
    pub proportions: DenseMatrix<S>,
    /// Arg-max topic, the lowest index on ties.
    pub clusters: Vec<usize>,
}

/// `θ_d = ν_d / Σν_d` with noise off and running normalizer statistics.
pub fn infer_theta<S: Scalar>(
    params: &ModelParams<S>,
    docs: &[Vec<(usize, u32)>],
    temperature: S,
) -> Result<TopicAssignment<S>> {
    let k = params.topics();
    let mut proportions = DenseMatrix::zeros(docs.len(), k);
    let mut clusters = Vec::with_capacity(docs.len());
    let opts = ForwardOptions::infer(temperature);
    for (chunk_index, chunk) in docs.chunks(INFER_CHUNK).enumerate() {
        let trace = forward_batch_with(params, &DocBatch::new(chunk.to_vec()), &opts)?;
        for d in 0..chunk.len() {
            let row = trace.theta.row(d);
            proportions
                .row_mut(chunk_index * INFER_CHUNK + d)
                .copy_from_slice(row);
            clusters.push(argmax(row));
        }
    }
    Ok(TopicAssignment {
        proportions,
        clusters,
    })
}

pub(crate) fn argmax<S: Scalar>(xs: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Top `top_n` words per topic by `β`, the lower word id first on ties.
pub fn export_topics<S: Scalar>(
    params: &ModelParams<S>,
    words: &[String],
    top_n: usize,
) -> Result<Vec<Vec<String>>> {
    top_words(&params.topic_word_matrix()?, words, top_n)
}

/// Ranks the columns of every row of a `K × V` topic-word matrix.
pub fn top_words<S: Scalar>(
    topic_word: &DenseMatrix<S>,
    words: &[String],
    top_n: usize,
) -> Result<Vec<Vec<String>>> {
    let v = topic_word.cols();
    if words.len() != v {
        return Err(Error::Shape(format!(
            "{} vocabulary words for a model over {v}",
            words.len()
        )));
    }
    if top_n == 0 || top_n > v {
        return Err(Error::Input(format!("top_n must be in 1..={v}, got {top_n}")));
    }
    Ok((0..topic_word.rows())
        .map(|t| {
            let row = topic_word.row(t);
            let mut ids: Vec<usize> = (0..v).collect();
            ids.sort_by(|&i, &j| row[j].partial_cmp(&row[i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
            ids.into_iter().take(top_n).map(|i| words[i].clone()).collect()
        })
        .collect())
}
