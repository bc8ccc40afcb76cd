use super::vocab::{CLS, SEP};
use super::{Conversation, Side};
use crate::error::{Error, Result};

/// Encoder input: `[CLS] ctx_1 [SEP] ... ctx_k [SEP] utterance`.
///
/// Positions before `utterance_start` belong to the context (including CLS).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextWindow {
    pub token_ids: Vec<u32>,
    pub turn_ids: Vec<u32>,
    pub utterance_start: usize,
    pub side: Side,
    /// Number of context utterances kept after truncation.
    pub context_utterances: usize,
}

impl ContextWindow {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn utterance(&self) -> &[u32] {
        &self.token_ids[self.utterance_start..]
    }

    /// Length of the masked context segment: zero when no context utterance
    /// is present, in which case CLS is treated as part of the utterance
    /// segment and the encoder runs unmasked.
    pub fn context_len(&self) -> usize {
        if self.context_utterances == 0 {
            0
        } else {
            self.utterance_start
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextLimits {
    /// Budget for context tokens, counting each utterance plus its SEP.
    pub max_ctx_tokens: usize,
    /// Number of turn-embedding rows; turn ids are clipped to `max_turns - 1`.
    pub max_turns: usize,
}

impl Default for ContextLimits {
    fn default() -> Self {
        Self {
            max_ctx_tokens: 256,
            max_turns: 10,
        }
    }
}

fn turn_id(k: usize, limits: &ContextLimits) -> u32 {
    k.min(limits.max_turns.saturating_sub(1)) as u32
}

/// `[C; X_u]` for turn `u` (1-based) on `side`. The oldest context
/// utterances are dropped first when the budget is exceeded.
pub fn make_context(conv: &Conversation, u: usize, side: Side, limits: &ContextLimits) -> Result<ContextWindow> {
    if limits.max_ctx_tokens == 0 {
        return Err(Error::Config("max_ctx_tokens must be >= 1".into()));
    }
    let current = conv.utterance(side, u)?;
    let history = &conv.side(side)[..u - 1];

    let mut first_kept = history.len();
    let mut budget = 0;
    for (i, utt) in history.iter().enumerate().rev() {
        let cost = utt.tokens.len() + 1;
        if budget + cost > limits.max_ctx_tokens {
            break;
        }
        budget += cost;
        first_kept = i;
    }

    let mut token_ids = vec![CLS];
    let mut turn_ids = vec![0];
    for utt in &history[first_kept..] {
        let t = turn_id(utt.turn_index, limits);
        token_ids.extend_from_slice(&utt.tokens);
        token_ids.push(SEP);
        turn_ids.extend(std::iter::repeat(t).take(utt.tokens.len() + 1));
    }
    let utterance_start = token_ids.len();
    token_ids.extend_from_slice(&current.tokens);
    turn_ids.extend(std::iter::repeat(turn_id(u, limits)).take(current.tokens.len()));
    Ok(ContextWindow {
        token_ids,
        turn_ids,
        utterance_start,
        side,
        context_utterances: history.len() - first_kept,
    })
}

/// The context `C_u` alone, i.e. utterances `1..u-1` of `side`.
///
/// Laid out exactly like [`make_context`] at turn `u - 1`, with the most
/// recent context utterance in the utterance slot. At `u = 1` the window is
/// just `[CLS]`.
pub fn context_only(conv: &Conversation, u: usize, side: Side, limits: &ContextLimits) -> Result<ContextWindow> {
    if u == 0 || u > conv.len() {
        return Err(Error::OutOfRange {
            what: "turn",
            index: u,
            len: conv.len(),
        });
    }
    if u == 1 {
        return Ok(ContextWindow {
            token_ids: vec![CLS],
            turn_ids: vec![0],
            utterance_start: 1,
            side,
            context_utterances: 0,
        });
    }
    make_context(conv, u - 1, side, limits)
}

/// `[CLS] tokens` with no context.
pub fn standalone(tokens: &[u32], side: Side) -> ContextWindow {
    let mut token_ids = Vec::with_capacity(tokens.len() + 1);
    token_ids.push(CLS);
    token_ids.extend_from_slice(tokens);
    let mut turn_ids = vec![1; token_ids.len()];
    turn_ids[0] = 0;
    ContextWindow {
        token_ids,
        turn_ids,
        utterance_start: 1,
        side,
        context_utterances: 0,
    }
}
