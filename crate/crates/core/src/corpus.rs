//! Preprocessing, vocabulary, bag-of-words corpora and embedding files.
//!
//! Text inputs are one document per line, tokens separated by whitespace.
//! Embedding files hold one word per line followed by its `D` components;
//! a leading `N D` header line (word2vec text format) is accepted.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkernel::DenseMatrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_word: Vec<String>,
    word_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from a list of distinct words; ids follow list order.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut vocab = Self::new();
        for w in words {
            if vocab.word_to_id.contains_key(&w) {
                return Err(Error::Input(format!("duplicate vocabulary word {w:?}")));
            }
            vocab.insert(&w);
        }
        Ok(vocab)
    }

    /// Id of `word`, adding it if new.
    pub fn insert(&mut self, word: &str) -> usize {
        if let Some(&id) = self.word_to_id.get(word) {
            return id;
        }
        let id = self.id_to_word.len();
        self.id_to_word.push(word.to_string());
        self.word_to_id.insert(word.to_string(), id);
        id
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.word_to_id.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.id_to_word.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.id_to_word
    }

    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_word.is_empty()
    }

    /// Counts of known tokens in first-occurrence order, plus the number
    /// of tokens not in the vocabulary.
    pub fn encode<T: AsRef<str>>(&self, tokens: &[T]) -> (Vec<(usize, u32)>, usize) {
        let mut doc: Vec<(usize, u32)> = Vec::new();
        let mut unknown = 0;
        for t in tokens {
            match self.id(t.as_ref()) {
                None => unknown += 1,
                Some(id) => match doc.iter_mut().find(|e| e.0 == id) {
                    Some(e) => e.1 += 1,
                    None => doc.push((id, 1)),
                },
            }
        }
        (doc, unknown)
    }
}

/// Bag-of-words documents over a shared vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    /// Per document `(word id, count)` in first-occurrence order.
    pub docs: Vec<Vec<(usize, u32)>>,
    /// Per document label id into `label_names`.
    pub labels: Option<Vec<usize>>,
    pub label_names: Vec<String>,
    pub vocab: Vocabulary,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn token_count(&self) -> u64 {
        self.docs
            .iter()
            .flat_map(|d| d.iter().map(|&(_, c)| u64::from(c)))
            .sum()
    }
}

/// Output of [`preprocess`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Preprocessed {
    pub docs: Vec<Vec<String>>,
    /// Input line index of every kept document.
    pub kept: Vec<usize>,
}

impl Preprocessed {
    /// Picks the entries of a per-input-line list (labels) that belong to
    /// kept documents.
    pub fn select<T: Clone>(&self, per_line: &[T]) -> Result<Vec<T>> {
        self.kept
            .iter()
            .map(|&i| {
                per_line.get(i).cloned().ok_or_else(|| {
                    Error::Input(format!("no entry for input line {} ({} given)", i + 1, per_line.len()))
                })
            })
            .collect()
    }
}

/// Lowercases and splits on whitespace, then removes stopwords, words absent
/// from `embedding_vocab` (when given) and words with fewer than
/// `min_count` occurrences, and finally drops documents left empty.
pub fn preprocess<L: AsRef<str>>(
    raw_docs: &[L],
    stopwords: &HashSet<String>,
    min_count: u32,
    embedding_vocab: Option<&HashSet<String>>,
) -> Preprocessed {
    let tokenized: Vec<Vec<String>> = raw_docs
        .iter()
        .map(|line| {
            line.as_ref()
                .to_lowercase()
                .split_whitespace()
                .filter(|t| !stopwords.contains(*t))
                .filter(|t| embedding_vocab.is_none_or(|e| e.contains(*t)))
                .map(str::to_string)
                .collect()
        })
        .collect();
    let mut counts: HashMap<&str, u32> = HashMap::new();
    for doc in &tokenized {
        for t in doc {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let keep: HashSet<String> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .map(|(w, _)| w.to_string())
        .collect();
    let mut out = Preprocessed {
        docs: Vec::new(),
        kept: Vec::new(),
    };
    for (i, doc) in tokenized.into_iter().enumerate() {
        let doc: Vec<String> = doc.into_iter().filter(|t| keep.contains(t)).collect();
        if !doc.is_empty() {
            out.docs.push(doc);
            out.kept.push(i);
        }
    }
    out
}

/// Encodes token lists as counts; vocabulary ids in order of first
/// occurrence. Labels are mapped to ids the same way.
pub fn build_corpus<T: AsRef<str>>(
    token_docs: &[Vec<T>],
    labels: Option<&[String]>,
) -> Result<Corpus> {
    if token_docs.is_empty() {
        return Err(Error::Input("corpus has no documents".into()));
    }
    let mut vocab = Vocabulary::new();
    let mut docs = Vec::with_capacity(token_docs.len());
    for (d, tokens) in token_docs.iter().enumerate() {
        if tokens.is_empty() {
            return Err(Error::Input(format!("document {d} is empty")));
        }
        let mut doc: Vec<(usize, u32)> = Vec::new();
        let mut slot: HashMap<usize, usize> = HashMap::new();
        for t in tokens {
            let id = vocab.insert(t.as_ref());
            match slot.get(&id) {
                Some(&s) => doc[s].1 += 1,
                None => {
                    slot.insert(id, doc.len());
                    doc.push((id, 1));
                }
            }
        }
        docs.push(doc);
    }
    let (labels, label_names) = match labels {
        None => (None, Vec::new()),
        Some(l) if l.len() != docs.len() => {
            return Err(Error::Input(format!(
                "{} labels for {} documents",
                l.len(),
                docs.len()
            )))
        }
        Some(l) => {
            let mut names = Vocabulary::new();
            let ids = l.iter().map(|s| names.insert(s)).collect();
            (Some(ids), names.id_to_word)
        }
    };
    Ok(Corpus {
        docs,
        labels,
        label_names,
        vocab,
    })
}

/// Reads a text file into lines (without terminators).
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .map(|l| l.map_err(|e| Error::io(path, e)))
        .collect()
}

/// Non-empty trimmed lines of a word-list file (stopwords).
pub fn read_word_set(path: &Path) -> Result<HashSet<String>> {
    Ok(read_lines(path)?
        .into_iter()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

/// Word vectors aligned to a vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix<S> {
    pub vectors: DenseMatrix<S>,
}

impl<S: Scalar> EmbeddingMatrix<S> {
    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

/// Result of [`load_embeddings`].
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedEmbeddings<S> {
    pub embeddings: EmbeddingMatrix<S>,
    /// Vocabulary words with no line in the file; their rows are zero.
    pub missing: Vec<String>,
}

fn is_header(fields: &[&str]) -> bool {
    fields.len() == 2 && fields.iter().all(|f| f.parse::<u64>().is_ok())
}

fn for_each_entry(
    path: &Path,
    mut f: impl FnMut(usize, &str, &[&str]) -> Result<()>,
) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() || (i == 0 && is_header(&fields)) {
            continue;
        }
        f(i + 1, fields[0], &fields[1..])?;
    }
    Ok(())
}

/// The set of words that have a vector in an embedding file.
pub fn read_embedding_vocab(path: &Path) -> Result<HashSet<String>> {
    let mut words = HashSet::new();
    for_each_entry(path, |_, w, _| {
        words.insert(w.to_string());
        Ok(())
    })?;
    Ok(words)
}

/// Loads the vectors of `vocab`'s words from a text embedding file. Lines
/// for other words are checked for dimension but not kept; a repeated word
/// keeps its first vector.
pub fn load_embeddings<S: Scalar>(path: &Path, vocab: &Vocabulary) -> Result<LoadedEmbeddings<S>> {
    let file_name = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        file: file_name.clone(),
        line,
        msg,
    };
    let mut dim: Option<usize> = None;
    let mut rows: Vec<Option<Vec<S>>> = vec![None; vocab.len()];
    for_each_entry(path, |line, word, nums| {
        let d = *dim.get_or_insert(nums.len());
        if nums.len() != d || d == 0 {
            return Err(parse_err(
                line,
                format!("expected {d} components after {word:?}, found {}", nums.len()),
            ));
        }
        let Some(id) = vocab.id(word) else {
            return Ok(());
        };
        if rows[id].is_some() {
            return Ok(());
        }
        let mut v = Vec::with_capacity(d);
        for (j, n) in nums.iter().enumerate() {
            let x: f64 = n
                .parse()
                .map_err(|_| parse_err(line, format!("component {} is not a number: {n:?}", j + 1)))?;
            if !x.is_finite() {
                return Err(parse_err(line, format!("component {} is not finite", j + 1)));
            }
            v.push(S::lit(x));
        }
        rows[id] = Some(v);
        Ok(())
    })?;
    let d = dim.ok_or_else(|| Error::Input(format!("{file_name} holds no vectors")))?;
    let mut vectors = DenseMatrix::zeros(vocab.len(), d);
    let mut missing = Vec::new();
    for (id, row) in rows.into_iter().enumerate() {
        match row {
            Some(v) => vectors.row_mut(id).copy_from_slice(&v),
            None => missing.push(vocab.words()[id].clone()),
        }
    }
    Ok(LoadedEmbeddings {
        embeddings: EmbeddingMatrix { vectors },
        missing,
    })
}
