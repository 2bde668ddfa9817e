//! Clustering agreement (purity, NMI) and NPMI topic coherence.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Maps arbitrary ids to `0..n` in first-occurrence order.
fn densify<T: Eq + Hash>(items: &[T]) -> (Vec<usize>, usize) {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    let dense = items
        .iter()
        .map(|x| {
            let next = ids.len();
            *ids.entry(x).or_insert(next)
        })
        .collect();
    (dense, ids.len())
}

/// `C × L` contingency table.
fn contingency<C: Eq + Hash, L: Eq + Hash>(clusters: &[C], labels: &[L]) -> Result<Vec<Vec<usize>>> {
    if clusters.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} cluster ids for {} labels",
            clusters.len(),
            labels.len()
        )));
    }
    if clusters.is_empty() {
        return Err(Error::Input("no documents to evaluate".into()));
    }
    let (c, nc) = densify(clusters);
    let (l, nl) = densify(labels);
    let mut table = vec![vec![0; nl]; nc];
    for (&i, &j) in c.iter().zip(&l) {
        table[i][j] += 1;
    }
    Ok(table)
}

/// `(1/N) Σ_k max_label |cluster_k ∩ label|`.
pub fn purity<C: Eq + Hash, L: Eq + Hash>(clusters: &[C], labels: &[L]) -> Result<f64> {
    let table = contingency(clusters, labels)?;
    let hit: usize = table.iter().map(|row| row.iter().copied().max().unwrap_or(0)).sum();
    Ok(hit as f64 / clusters.len() as f64)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(C;L) / ((H(C)+H(L))/2)` in nats. Two single-block partitions score
/// 1; a single block against anything else scores 0.
pub fn nmi<C: Eq + Hash, L: Eq + Hash>(clusters: &[C], labels: &[L]) -> Result<f64> {
    let table = contingency(clusters, labels)?;
    let n = clusters.len() as f64;
    let nl = table[0].len();
    let row_sums: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<usize> = (0..nl).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let hc = entropy(row_sums.iter().copied(), n);
    let hl = entropy(col_sums.iter().copied(), n);
    if table.len() == 1 && nl == 1 {
        return Ok(1.0);
    }
    if hc == 0.0 || hl == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (n * c / (row_sums[i] as f64 * col_sums[j] as f64)).ln();
            }
        }
    }
    Ok((mi / ((hc + hl) / 2.0)).clamp(0.0, 1.0))
}

/// Boolean sliding-window occurrence counts over a reference corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoocStats {
    pub window_count: u64,
    vocab: HashMap<String, usize>,
    single: Vec<u64>,
    pair: HashMap<(usize, usize), u64>,
}

impl CoocStats {
    fn id(&self, word: &str) -> Option<usize> {
        self.vocab.get(word).copied()
    }

    /// Windows containing `word`.
    pub fn single(&self, word: &str) -> u64 {
        self.id(word).map_or(0, |i| self.single[i])
    }

    /// Windows containing both words.
    pub fn pair(&self, a: &str, b: &str) -> u64 {
        match (self.id(a), self.id(b)) {
            (Some(i), Some(j)) if i == j => self.single[i],
            (Some(i), Some(j)) => self.pair.get(&(i.min(j), i.max(j))).copied().unwrap_or(0),
            _ => 0,
        }
    }
}

/// Windows of `window` tokens advance one token at a time inside each
/// document; a document shorter than the window is a single window.
pub fn cooc_counts<T: AsRef<str>>(docs: &[Vec<T>], window: usize) -> Result<CoocStats> {
    if window < 2 {
        return Err(Error::Input(format!("window must be at least 2, got {window}")));
    }
    let mut stats = CoocStats::default();
    let mut present: Vec<usize> = Vec::new();
    for doc in docs {
        let ids: Vec<usize> = doc
            .iter()
            .map(|w| {
                let next = stats.vocab.len();
                let id = *stats.vocab.entry(w.as_ref().to_string()).or_insert(next);
                if id == stats.single.len() {
                    stats.single.push(0);
                }
                id
            })
            .collect();
        if ids.is_empty() {
            continue;
        }
        let starts = ids.len().saturating_sub(window) + 1;
        for s in 0..starts {
            present.clear();
            present.extend_from_slice(&ids[s..(s + window).min(ids.len())]);
            present.sort_unstable();
            present.dedup();
            stats.window_count += 1;
            for (a, &i) in present.iter().enumerate() {
                stats.single[i] += 1;
                for &j in &present[a + 1..] {
                    *stats.pair.entry((i, j)).or_insert(0) += 1;
                }
            }
        }
    }
    if stats.window_count == 0 {
        return Err(Error::Input("reference corpus has no tokens".into()));
    }
    Ok(stats)
}

/// NPMI of one pair from window counts: `−1` without co-occurrence, `+1`
/// when the pair fills every window.
pub fn npmi_pair(joint: u64, a: u64, b: u64, windows: u64) -> f64 {
    if joint == 0 {
        return -1.0;
    }
    if joint == windows {
        return 1.0;
    }
    let w = windows as f64;
    let pij = joint as f64 / w;
    let pmi = (pij / ((a as f64 / w) * (b as f64 / w))).ln();
    (pmi / -pij.ln()).clamp(-1.0, 1.0)
}

/// Mean NPMI over the unordered pairs of `top_words` found in `stats`.
/// Absent words and repeats are skipped.
pub fn npmi_topic<T: AsRef<str>>(top_words: &[T], stats: &CoocStats) -> Result<f64> {
    let mut words: Vec<&str> = Vec::new();
    for w in top_words {
        let w = w.as_ref();
        if stats.single(w) > 0 && !words.contains(&w) {
            words.push(w);
        }
    }
    if words.len() < 2 {
        return Err(Error::Domain(format!(
            "undefined score: {} of the top words occur in the reference corpus",
            words.len()
        )));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..words.len() {
        for j in i + 1..words.len() {
            total += npmi_pair(
                stats.pair(words[i], words[j]),
                stats.single(words[i]),
                stats.single(words[j]),
                stats.window_count,
            );
            n += 1;
        }
    }
    Ok(total / n as f64)
}

/// Per-topic NPMI and their mean over the topics that have a score.
#[derive(Clone, Debug, PartialEq)]
pub struct NpmiReport {
    pub per_topic: Vec<Option<f64>>,
    pub mean: f64,
}

pub fn npmi_model<T: AsRef<str>>(topics: &[Vec<T>], stats: &CoocStats) -> Result<NpmiReport> {
    let per_topic: Vec<Option<f64>> = topics.iter().map(|t| npmi_topic(t, stats).ok()).collect();
    let scored: Vec<f64> = per_topic.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(Error::Domain("undefined score: no topic has two words in the reference corpus".into()));
    }
    Ok(NpmiReport {
        mean: scored.iter().sum::<f64>() / scored.len() as f64,
        per_topic,
    })
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Brute-force reference implementations.
    use std::collections::BTreeSet;

    pub fn purity(c: &[usize], l: &[usize]) -> f64 {
        let mut hit = 0;
        for k in c.iter().collect::<BTreeSet<_>>() {
            let best = l
                .iter()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .map(|lab| c.iter().zip(l).filter(|(x, y)| *x == k && *y == lab).count())
                .max()
                .unwrap();
            hit += best;
        }
        hit as f64 / c.len() as f64
    }

    pub fn nmi(c: &[usize], l: &[usize]) -> f64 {
        let n = c.len() as f64;
        let cs: BTreeSet<_> = c.iter().collect();
        let ls: BTreeSet<_> = l.iter().collect();
        let p = |f: &dyn Fn(usize) -> bool| (0..c.len()).filter(|&i| f(i)).count() as f64 / n;
        let h = |set: &BTreeSet<&usize>, v: &[usize]| -> f64 {
            set.iter()
                .map(|&&k| {
                    let q = p(&|i| v[i] == k);
                    -q * q.ln()
                })
                .sum()
        };
        let (hc, hl) = (h(&cs, c), h(&ls, l));
        if cs.len() == 1 && ls.len() == 1 {
            return 1.0;
        }
        if hc == 0.0 || hl == 0.0 {
            return 0.0;
        }
        let mut mi = 0.0;
        for &&a in &cs {
            for &&b in &ls {
                let pab = p(&|i| c[i] == a && l[i] == b);
                if pab > 0.0 {
                    mi += pab * (pab / (p(&|i| c[i] == a) * p(&|i| l[i] == b))).ln();
                }
            }
        }
        mi / ((hc + hl) / 2.0)
    }

    /// Every window as a set of words.
    pub fn windows(docs: &[Vec<String>], window: usize) -> Vec<BTreeSet<String>> {
        let mut out = Vec::new();
        for d in docs.iter().filter(|d| !d.is_empty()) {
            if d.len() <= window {
                out.push(d.iter().cloned().collect());
            } else {
                for s in 0..=d.len() - window {
                    out.push(d[s..s + window].iter().cloned().collect());
                }
            }
        }
        out
    }

    pub fn npmi(top: &[String], docs: &[Vec<String>], window: usize) -> Option<f64> {
        let ws = windows(docs, window);
        let n = ws.len() as f64;
        let mut words: Vec<&String> = Vec::new();
        for w in top {
            if ws.iter().any(|s| s.contains(w)) && !words.contains(&w) {
                words.push(w);
            }
        }
        let mut vals = Vec::new();
        for i in 0..words.len() {
            for j in i + 1..words.len() {
                let pi = ws.iter().filter(|s| s.contains(words[i])).count() as f64 / n;
                let pj = ws.iter().filter(|s| s.contains(words[j])).count() as f64 / n;
                let pij = ws.iter().filter(|s| s.contains(words[i]) && s.contains(words[j])).count() as f64 / n;
                vals.push(if pij == 0.0 {
                    -1.0
                } else if pij == 1.0 {
                    1.0
                } else {
                    (pij / (pi * pj)).ln() / -pij.ln()
                });
            }
        }
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}
