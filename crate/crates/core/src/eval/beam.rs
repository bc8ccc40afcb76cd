use serde::Serialize;

use crate::corpus::{ContextWindow, EOS};
use crate::diffcore::{Graph, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::model::{Dropout, GenHead, NctModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub length_penalty: f64,
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 4,
            length_penalty: 0.6,
            max_len: 64,
        }
    }
}

/// `((5 + len) / 6)^penalty`.
pub fn length_penalty(len: usize, penalty: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(penalty)
}

/// Next-token log-probabilities given a prefix of generated tokens.
pub trait StepScorer {
    fn log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Hypothesis {
    /// Generated tokens, without the end marker.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
    /// `log_prob / lp(len)`, where `len` counts the end marker if present.
    pub score: f64,
}

impl Hypothesis {
    fn new(tokens: Vec<u32>, log_prob: f64, finished: bool, penalty: f64) -> Self {
        let len = tokens.len() + usize::from(finished);
        Self {
            score: log_prob / length_penalty(len, penalty),
            tokens,
            log_prob,
            finished,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BeamResult {
    pub best: Hypothesis,
    /// Every hypothesis that reached the end marker, in completion order.
    pub finished: Vec<Hypothesis>,
}

/// Beam search over `scorer`.
///
/// Each step keeps the `beam_size − finished` highest cumulative
/// log-probability expansions; those ending in `eos` retire to the finished
/// list. Search stops when the beam is full of finished hypotheses, no live
/// ones remain, or `max_len` tokens have been generated. The result is the
/// best finished hypothesis by length-penalised score, or the best live one
/// if none finished.
pub fn beam_search(scorer: &mut dyn StepScorer, eos: u32, cfg: &BeamConfig) -> Result<BeamResult> {
    if cfg.beam_size == 0 {
        return Err(Error::Config("beam_size must be >= 1".into()));
    }
    let mut live: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..cfg.max_len {
        let room = cfg.beam_size - finished.len();
        if room == 0 || live.is_empty() {
            break;
        }
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (i, (prefix, lp)) in live.iter().enumerate() {
            let next = scorer.log_probs(prefix)?;
            cands.extend(next.iter().enumerate().map(|(v, &l)| (lp + l, i, v as u32)));
        }
        // Highest log-probability first; ties keep beam then token order.
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next_live = Vec::with_capacity(room);
        for &(lp, i, v) in cands.iter().take(room) {
            if lp == f64::NEG_INFINITY {
                break;
            }
            let prefix = &live[i].0;
            if v == eos {
                finished.push(Hypothesis::new(prefix.clone(), lp, true, cfg.length_penalty));
            } else {
                let mut p = prefix.clone();
                p.push(v);
                next_live.push((p, lp));
            }
        }
        live = next_live;
    }
    let pool: Vec<Hypothesis> = if finished.is_empty() {
        live.into_iter()
            .map(|(t, lp)| Hypothesis::new(t, lp, false, cfg.length_penalty))
            .collect()
    } else {
        finished.clone()
    };
    let best = pool
        .into_iter()
        .reduce(|a, b| if b.score > a.score { b } else { a })
        .ok_or_else(|| Error::Invalid("beam search produced no hypothesis".into()))?;
    Ok(BeamResult { best, finished })
}

/// Scores prefixes with a trained model for one encoded window.
pub struct ModelScorer<'a> {
    model: &'a NctModel,
    params: &'a ParamStore,
    memory: Tensor,
    head: GenHead,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a NctModel, params: &'a ParamStore, window: &ContextWindow, head: GenHead) -> Result<Self> {
        let mut g = Graph::new(params);
        let enc = model.encode(&mut g, window, &mut Dropout::off())?;
        Ok(Self {
            model,
            params,
            memory: g.value(enc.output).clone(),
            head,
        })
    }
}

impl StepScorer for ModelScorer<'_> {
    fn log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>> {
        let mut g = Graph::new(self.params);
        let memory = g.constant(self.memory.clone());
        self.model.next_token_log_probs(&mut g, memory, prefix, self.head)
    }
}

/// Translates one window with the translation head.
pub fn beam_decode(model: &NctModel, params: &ParamStore, window: &ContextWindow, cfg: &BeamConfig) -> Result<Vec<u32>> {
    let mut scorer = ModelScorer::new(model, params, window, GenHead::Nct)?;
    Ok(beam_search(&mut scorer, EOS, cfg)?.best.tokens)
}
