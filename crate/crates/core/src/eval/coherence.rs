use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::Serialize;

use crate::corpus::{tokenize, Vocabulary, NUM_SPECIAL};
use crate::diffcore::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorSource {
    ModelExport,
    External(String),
}

/// Word vectors keyed by surface token. Missing tokens map to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    pub source: VectorSource,
}

impl WordVectorTable {
    pub fn new(dim: usize, source: VectorSource) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
            source,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape {
                op: "word vector",
                left: vec![vector.len()],
                right: vec![self.dim],
            });
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Rows of the word embedding table for every non-special token.
    pub fn from_embeddings(params: &ParamStore, vocab: &Vocabulary) -> Result<Self> {
        let we = params
            .get("embed.word")
            .ok_or_else(|| Error::UnknownParam("embed.word".into()))?;
        if we.rows() != vocab.len() {
            return Err(Error::VocabMismatch(format!(
                "embedding has {} rows, vocabulary {} entries",
                we.rows(),
                vocab.len()
            )));
        }
        let mut t = Self::new(we.cols(), VectorSource::ModelExport);
        for id in NUM_SPECIAL..vocab.len() {
            t.insert(vocab.token(id as u32).unwrap_or_default(), we.row(id).to_vec())?;
        }
        Ok(t)
    }

    /// `dim N` on the first line, then `token v1 ... vN` per line.
    pub fn read(r: impl BufRead, source: VectorSource) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| Error::Invalid("empty word-vector file".into()))??;
        let dim: usize = first
            .strip_prefix("dim ")
            .and_then(|d| d.trim().parse().ok())
            .ok_or_else(|| Error::Invalid(format!("expected `dim N`, got `{first}`")))?;
        let mut t = Self::new(dim, source);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap_or_default().to_owned();
            let v: Vec<f64> = parts
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Invalid(format!("line {}: {e}", i + 2)))?;
            t.insert(token, v)?;
        }
        Ok(t)
    }

    /// Writes tokens in sorted order with round-trip float formatting.
    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "dim {}", self.dim)?;
        let mut keys: Vec<&String> = self.vectors.keys().collect();
        keys.sort();
        for k in keys {
            write!(w, "{k}")?;
            for x in &self.vectors[k] {
                write!(w, " {x:?}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Mean vector over the tokens, counting missing tokens as zeros.
    pub fn sentence_vector(&self, tokens: &[String]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        if tokens.is_empty() {
            return acc;
        }
        for t in tokens {
            if let Some(v) = self.get(t) {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
            }
        }
        let n = tokens.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Cosine of the mean word vectors of two sentences; 0 if either mean is
/// the zero vector.
pub fn coherence(candidate: &str, preceding: &str, table: &WordVectorTable) -> f64 {
    let a = table.sentence_vector(&tokenize(candidate));
    let b = table.sentence_vector(&tokenize(preceding));
    cosine(&a, &b)
}

/// Mean coherence between each hypothesis and the reference utterance `k`
/// turns earlier, for `k = 1..=max_k`.
///
/// `hyps[i]` translates turn `u_i` (1-based) of a conversation whose
/// target-side references are `history[i]`. Distances without a preceding
/// utterance are skipped; a `k` with no pairs at all is omitted.
pub fn coherence_by_distance(
    hyps: &[String],
    turns: &[usize],
    history: &[&[String]],
    table: &WordVectorTable,
    max_k: usize,
) -> Result<BTreeMap<usize, f64>> {
    if hyps.len() != turns.len() || hyps.len() != history.len() {
        return Err(Error::Invalid("hypotheses, turns and histories differ in length".into()));
    }
    let mut out = BTreeMap::new();
    for k in 1..=max_k {
        let mut sum = 0.0;
        let mut n = 0usize;
        for ((h, &u), hist) in hyps.iter().zip(turns).zip(history) {
            if u > k {
                let prev = hist
                    .get(u - k - 1)
                    .ok_or_else(|| Error::Invalid(format!("turn {} missing from history", u - k)))?;
                sum += coherence(h, prev, table);
                n += 1;
            }
        }
        if n > 0 {
            out.insert(k, sum / n as f64);
        }
    }
    Ok(out)
}
