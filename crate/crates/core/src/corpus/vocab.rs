use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const BOS: u32 = 3;
pub const EOS: u32 = 4;
pub const UNK: u32 = 5;
pub const NUM_SPECIAL: usize = 6;

/// Surface forms of the reserved ids, in id order.
pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["<pad>", "[CLS]", "[SEP]", "<s>", "</s>", "<unk>"];

/// Lowercases and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Shared source/target vocabulary. Ids `0..6` are the special tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    min_frequency: usize,
}

impl Vocabulary {
    /// Keeps every token seen at least `min_freq` times. Ids are assigned by
    /// descending frequency, ties broken lexicographically.
    pub fn build<I, S>(tokens: I, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_freq == 0 {
            return Err(Error::Config("min_freq must be >= 1".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t.as_ref().to_owned()).or_default() += 1;
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq && !SPECIAL_TOKENS.contains(&t.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_tokens(kept.into_iter().map(|(t, _)| t), min_freq))
    }

    /// Vocabulary holding only the special tokens.
    pub fn specials_only() -> Self {
        Self::from_tokens(std::iter::empty::<String>(), 1)
    }

    fn from_tokens(tokens: impl IntoIterator<Item = String>, min_frequency: usize) -> Self {
        let mut id_to_token: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            token_to_id,
            id_to_token,
            min_frequency,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.len() == NUM_SPECIAL
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id
            .get(token)
            .is_some_and(|&id| id as usize >= NUM_SPECIAL)
    }

    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Joins non-special tokens with single spaces; UNK is kept as `<unk>`.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| id == UNK || id as usize >= NUM_SPECIAL)
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line; line `k` holds id `k + 6`.
    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        for t in &self.id_to_token[NUM_SPECIAL..] {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read(r: impl BufRead) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in r.lines() {
            let line = line?;
            let t = line.trim_end_matches(['\r', '\n']);
            if t.is_empty() {
                return Err(Error::Invalid(format!(
                    "vocabulary line {} is empty",
                    tokens.len() + 1
                )));
            }
            tokens.push(t.to_owned());
        }
        let v = Self::from_tokens(tokens, 1);
        if v.token_to_id.len() != v.id_to_token.len() {
            return Err(Error::Invalid("vocabulary file has duplicate tokens".into()));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn threshold_keeps_frequent_tokens_only() {
        let corpus = ["a", "a", "a", "b"];
        let v = Vocabulary::build(corpus, 2).unwrap();
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn min_freq_one_keeps_everything() {
        let corpus = ["x", "y", "z", "x"];
        let v = Vocabulary::build(corpus, 1).unwrap();
        for t in ["x", "y", "z"] {
            assert!(v.contains(t));
        }
        assert_eq!(v.len(), NUM_SPECIAL + 3);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let err = Vocabulary::build(Vec::<String>::new(), 1).unwrap_err();
        assert_eq!(err.to_string(), "empty corpus");
    }

    #[test]
    fn specials_occupy_lowest_ids() {
        let v = Vocabulary::build(["hello"], 1).unwrap();
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            assert_eq!(v.id(s), i as u32);
        }
        assert_eq!(v.id("hello"), NUM_SPECIAL as u32);
    }

    #[test]
    fn zipf_corpus_size_matches_brute_force_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // 1000 distinct token types with Zipf-like weights 1/rank.
        let weights: Vec<f64> = (1..=1000).map(|r| 1.0 / r as f64).collect();
        let total: f64 = weights.iter().sum();
        let mut stream = Vec::new();
        for _ in 0..20_000 {
            let mut x = rng.gen::<f64>() * total;
            let mut k = 0;
            while k < 999 && x >= weights[k] {
                x -= weights[k];
                k += 1;
            }
            stream.push(format!("w{k}"));
        }
        // Independent pass: count by sorting.
        let mut sorted = stream.clone();
        sorted.sort();
        let mut expected = 0;
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j < sorted.len() && sorted[j] == sorted[i] {
                j += 1;
            }
            if j - i >= 5 {
                expected += 1;
            }
            i = j;
        }
        let v = Vocabulary::build(&stream, 5).unwrap();
        assert_eq!(v.len() - NUM_SPECIAL, expected);
    }

    #[test]
    fn file_round_trip() {
        let v = Vocabulary::build(["b", "a", "a", "c", "c", "c"], 1).unwrap();
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "c\na\nb\n");
        let back = Vocabulary::read(&buf[..]).unwrap();
        for t in ["a", "b", "c"] {
            assert_eq!(back.id(t), v.id(t));
        }
    }

    #[test]
    fn decode_skips_structural_specials() {
        let v = Vocabulary::build(["hi", "there"], 1).unwrap();
        let ids = [BOS, v.id("hi"), SEP, v.id("there"), EOS];
        assert_eq!(v.decode(&ids), "hi there");
    }
}
