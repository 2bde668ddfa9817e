use crate::error::{Error, Result};

/// Bag-of-words mini-batch: per document a list of `(word id, count)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DocBatch {
    pub docs: Vec<Vec<(usize, u32)>>,
}

impl DocBatch {
    pub fn new(docs: Vec<Vec<(usize, u32)>>) -> Self {
        Self { docs }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Checks ids against the vocabulary size and rejects empty documents,
    /// zero counts and repeated ids.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.docs.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let mut seen = vec![usize::MAX; vocab_size];
        for (d, doc) in self.docs.iter().enumerate() {
            if doc.is_empty() {
                return Err(Error::Input(format!("document {d} of the batch is empty")));
            }
            for &(w, c) in doc {
                if w >= vocab_size {
                    return Err(Error::Input(format!(
                        "document {d}: word id {w} outside vocabulary of {vocab_size}"
                    )));
                }
                if c == 0 {
                    return Err(Error::Input(format!("document {d}: zero count for word {w}")));
                }
                if seen[w] == d {
                    return Err(Error::Input(format!("document {d}: word {w} listed twice")));
                }
                seen[w] = d;
            }
        }
        Ok(())
    }

    pub fn token_count(&self, d: usize) -> u64 {
        self.docs[d].iter().map(|&(_, c)| u64::from(c)).sum()
    }
}
