use std::collections::HashMap;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BleuMode {
    /// Whitespace-separated tokens.
    Word,
    /// Individual non-whitespace characters.
    Char,
}

impl FromStr for BleuMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Self::Word),
            "char" => Ok(Self::Char),
            _ => Err(Error::Config(format!("unknown BLEU mode `{s}`"))),
        }
    }
}

/// Treatment of n-gram orders with no matches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Smoothing {
    /// Any zero precision makes the score zero.
    None,
    /// The k-th zero precision becomes `1 / (2^k · total)`.
    Exp,
    /// Zero precisions become `floor / total`.
    Floor(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BleuReport {
    /// Percentage in `[0, 100]`.
    pub bleu: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn units(s: &str, mode: BleuMode) -> Vec<String> {
    match mode {
        BleuMode::Word => s.split_whitespace().map(str::to_owned).collect(),
        BleuMode::Char => s.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
    }
}

fn ngram_counts(toks: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU with exponential smoothing.
pub fn corpus_bleu(hyps: &[String], refs: &[String], max_n: usize, mode: BleuMode) -> Result<f64> {
    Ok(corpus_bleu_with(hyps, refs, max_n, mode, Smoothing::Exp)?.bleu)
}

/// Corpus BLEU: clipped n-gram matches and totals are pooled over the
/// corpus, then combined as a geometric mean times the brevity penalty.
/// Orders with no hypothesis n-grams at all count as one unmatched n-gram.
pub fn corpus_bleu_with(
    hyps: &[String],
    refs: &[String],
    max_n: usize,
    mode: BleuMode,
    smoothing: Smoothing,
) -> Result<BleuReport> {
    if hyps.is_empty() {
        return Err(Error::Invalid("empty hypothesis set".into()));
    }
    if hyps.len() != refs.len() {
        return Err(Error::Invalid(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::Config("max_n must be >= 1".into()));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        let (h, r) = (units(h, mode), units(r, mode));
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            totals[n - 1] += h.len().saturating_sub(n - 1);
            matches[n - 1] += hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }

    let mut precisions = Vec::with_capacity(max_n);
    let mut zero_run = 1.0;
    for n in 0..max_n {
        let total = totals[n].max(1) as f64;
        let p = if matches[n] > 0 {
            matches[n] as f64 / total
        } else {
            match smoothing {
                Smoothing::None => 0.0,
                Smoothing::Exp => {
                    zero_run *= 2.0;
                    1.0 / (zero_run * total)
                }
                Smoothing::Floor(f) => f / total,
            }
        };
        precisions.push(p);
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let bleu = if precisions.iter().any(|&p| p <= 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        matches,
        totals,
        hyp_len,
        ref_len,
    })
}
