//! Bilingual conversations: vocabulary, dialogue windowing, deduplication,
//! context construction and next-utterance sampling.

mod context;
mod nud;
mod vocab;

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

pub use context::{context_only, make_context, standalone, ContextLimits, ContextWindow};
pub use nud::{sample_nud, NudSample};
pub use vocab::{tokenize, Vocabulary, BOS, CLS, EOS, NUM_SPECIAL, PAD, SEP, SPECIAL_TOKENS, UNK};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    /// 1-based turn index.
    pub turn_index: usize,
    pub language: Side,
    pub tokens: Vec<u32>,
    pub raw_text: String,
}

/// A tokenized bilingual conversation with aligned turns.
#[derive(Clone, Debug, PartialEq)]
pub struct Conversation {
    pub id: String,
    pub source: Vec<Utterance>,
    pub target: Vec<Utterance>,
}

impl Conversation {
    pub fn from_record(record: &ConversationRecord, vocab: &Vocabulary) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidConversation {
            id: record.id.clone(),
            reason,
        };
        if record.src.len() != record.tgt.len() {
            return Err(invalid(format!(
                "{} source turns vs {} target turns",
                record.src.len(),
                record.tgt.len()
            )));
        }
        let side = |texts: &[String], language: Side| -> Result<Vec<Utterance>> {
            texts
                .iter()
                .enumerate()
                .map(|(i, text)| {
                    let tokens = vocab.encode(text);
                    if tokens.is_empty() {
                        return Err(invalid(format!("empty utterance at turn {}", i + 1)));
                    }
                    Ok(Utterance {
                        turn_index: i + 1,
                        language,
                        tokens,
                        raw_text: text.clone(),
                    })
                })
                .collect()
        };
        Ok(Self {
            id: record.id.clone(),
            source: side(&record.src, Side::Source)?,
            target: side(&record.tgt, Side::Target)?,
        })
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn side(&self, side: Side) -> &[Utterance] {
        match side {
            Side::Source => &self.source,
            Side::Target => &self.target,
        }
    }

    /// Utterance at 1-based turn `u`.
    pub fn utterance(&self, side: Side, u: usize) -> Result<&Utterance> {
        if u == 0 || u > self.len() {
            return Err(Error::OutOfRange {
                what: "turn",
                index: u,
                len: self.len(),
            });
        }
        Ok(&self.side(side)[u - 1])
    }
}

/// One line of the corpus JSONL file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationRecord {
    pub id: String,
    pub src: Vec<String>,
    pub tgt: Vec<String>,
}

/// Key used for deduplication.
pub trait DialogueKey {
    fn dialogue_key(&self) -> String;
}

impl DialogueKey for ConversationRecord {
    fn dialogue_key(&self) -> String {
        self.src.join("\u{1f}")
    }
}

impl DialogueKey for Conversation {
    fn dialogue_key(&self) -> String {
        self.source
            .iter()
            .map(|u| u.raw_text.as_str())
            .collect::<Vec<_>>()
            .join("\u{1f}")
    }
}

/// Non-overlapping windows of `window` aligned pairs; a short tail is dropped.
pub fn window_dialogues(pairs: &[(String, String)], window: usize) -> Result<Vec<ConversationRecord>> {
    window_dialogues_with_stride(pairs, window, window)
}

/// Windows of `window` consecutive pairs starting every `stride` pairs.
pub fn window_dialogues_with_stride(
    pairs: &[(String, String)],
    window: usize,
    stride: usize,
) -> Result<Vec<ConversationRecord>> {
    if window < 2 {
        return Err(Error::Config(format!("window must be >= 2, got {window}")));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= pairs.len() {
        let chunk = &pairs[start..start + window];
        out.push(ConversationRecord {
            id: format!("dlg-{}", out.len()),
            src: chunk.iter().map(|p| p.0.clone()).collect(),
            tgt: chunk.iter().map(|p| p.1.clone()).collect(),
        });
        start += stride;
    }
    Ok(out)
}

/// Keeps the first occurrence of every distinct dialogue, preserving order.
pub fn dedup<T: DialogueKey>(items: Vec<T>) -> Vec<T> {
    let mut seen = HashSet::new();
    items
        .into_iter()
        .filter(|c| seen.insert(c.dialogue_key()))
        .collect()
}

pub fn read_corpus(r: impl BufRead) -> Result<Vec<ConversationRecord>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ConversationRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Invalid(format!("corpus line {}: {e}", n + 1)))?;
        if rec.src.len() != rec.tgt.len() {
            return Err(Error::InvalidConversation {
                id: rec.id,
                reason: "src and tgt differ in length".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_corpus(w: &mut impl Write, records: &[ConversationRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads tab-separated aligned utterance pairs (`source<TAB>target`).
pub fn read_aligned_pairs(r: impl BufRead) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (s, t) = line
            .split_once('\t')
            .ok_or_else(|| Error::Invalid(format!("line {}: expected source<TAB>target", n + 1)))?;
        out.push((s.trim().to_owned(), t.trim().to_owned()));
    }
    Ok(out)
}

pub fn encode_corpus(records: &[ConversationRecord], vocab: &Vocabulary) -> Result<Vec<Conversation>> {
    records.iter().map(|r| Conversation::from_record(r, vocab)).collect()
}

/// All tokens of both sides, for vocabulary building.
pub fn corpus_tokens(records: &[ConversationRecord]) -> impl Iterator<Item = String> + '_ {
    records
        .iter()
        .flat_map(|r| r.src.iter().chain(&r.tgt))
        .flat_map(|t| tokenize(t))
}

/// Shape of a synthetic copy corpus: every target utterance repeats its
/// source utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CopyCorpusSpec {
    pub conversations: usize,
    pub turns: usize,
    /// Words are `w0 .. w{words-1}`.
    pub words: usize,
    pub min_len: usize,
    pub max_len: usize,
}

/// Random copy conversations with uniformly drawn words and lengths.
pub fn copy_corpus<R: rand::Rng + ?Sized>(spec: &CopyCorpusSpec, rng: &mut R) -> Vec<ConversationRecord> {
    (0..spec.conversations)
        .map(|i| {
            let src: Vec<String> = (0..spec.turns)
                .map(|_| {
                    let n = rng.gen_range(spec.min_len..=spec.max_len);
                    (0..n)
                        .map(|_| format!("w{}", rng.gen_range(0..spec.words)))
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            ConversationRecord {
                id: format!("copy-{i}"),
                tgt: src.clone(),
                src,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pairs(n: usize) -> Vec<(String, String)> {
        (0..n).map(|i| (format!("s{i}"), format!("t{i}"))).collect()
    }

    fn rec(id: &str, src: &[&str]) -> ConversationRecord {
        ConversationRecord {
            id: id.into(),
            src: src.iter().map(|s| s.to_string()).collect(),
            tgt: src.iter().map(|s| s.to_uppercase()).collect(),
        }
    }

    #[test]
    fn nine_pairs_make_two_windows_of_four() {
        let out = window_dialogues(&pairs(9), 4).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].src, vec!["s4", "s5", "s6", "s7"]);
    }

    #[test]
    fn exact_window_makes_one_conversation() {
        assert_eq!(window_dialogues(&pairs(4), 4).unwrap().len(), 1);
    }

    #[test]
    fn short_stream_yields_nothing() {
        assert!(window_dialogues(&pairs(3), 4).unwrap().is_empty());
    }

    #[test]
    fn window_below_two_is_rejected() {
        assert!(window_dialogues(&pairs(3), 1).is_err());
    }

    #[test]
    fn stride_one_gives_sliding_windows() {
        assert_eq!(window_dialogues_with_stride(&pairs(10), 4, 1).unwrap().len(), 7);
    }

    #[test]
    fn dedup_keeps_first_occurrence() {
        let a = rec("a", &["x y", "z"]);
        let b = rec("b", &["q", "r"]);
        let a2 = rec("a2", &["x y", "z"]);
        let out = dedup(vec![a.clone(), b.clone(), a2]);
        assert_eq!(out, vec![a, b]);
    }

    #[test]
    fn dedup_of_distinct_input_is_identity() {
        let input: Vec<_> = (0..5).map(|i| rec(&i.to_string(), &[&format!("u{i}"), "x"])).collect();
        assert_eq!(dedup(input.clone()), input);
    }

    #[test]
    fn dedup_matches_hash_set_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut items: Vec<ConversationRecord> = Vec::new();
        for i in 0..10_000 {
            if i > 0 && rng.gen_bool(0.1) {
                let j = rng.gen_range(0..items.len());
                let dup = items[j].clone();
                items.push(dup);
            } else {
                let a = rng.gen_range(0..1_000_000u32);
                let b = rng.gen_range(0..1_000_000u32);
                items.push(rec(&i.to_string(), &[&a.to_string(), &b.to_string()]));
            }
        }
        let expected: HashSet<Vec<String>> = items.iter().map(|r| r.src.clone()).collect();
        assert_eq!(dedup(items).len(), expected.len());
    }

    #[test]
    fn corpus_jsonl_round_trip() {
        let recs = vec![rec("a", &["hello there", "hi"]), rec("b", &["x", "y"])];
        let mut buf = Vec::new();
        write_corpus(&mut buf, &recs).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with(r#"{"id":"a","src":["hello there","hi"],"tgt":"#));
        assert_eq!(read_corpus(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn unequal_sides_are_rejected() {
        let line = r#"{"id":"x","src":["a","b"],"tgt":["a"]}"#;
        assert!(read_corpus(line.as_bytes()).is_err());
    }

    #[test]
    fn from_record_rejects_empty_utterance() {
        let v = Vocabulary::build(["a"], 1).unwrap();
        let r = ConversationRecord {
            id: "e".into(),
            src: vec!["a".into(), "  ".into()],
            tgt: vec!["a".into(), "a".into()],
        };
        assert!(Conversation::from_record(&r, &v).is_err());
    }

    proptest! {
        #[test]
        fn window_then_dedup_is_idempotent(
            tokens in proptest::collection::vec(0u8..4, 0..60),
            window in 2usize..6,
        ) {
            let ps: Vec<(String, String)> = tokens.iter().map(|t| (t.to_string(), t.to_string())).collect();
            let convs = window_dialogues(&ps, window).unwrap();
            prop_assert_eq!(convs.len(), ps.len() / window);
            let once = dedup(convs);
            let twice = dedup(once.clone());
            prop_assert_eq!(once, twice);
        }
    }
}
