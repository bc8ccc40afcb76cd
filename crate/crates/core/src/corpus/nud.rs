use rand::Rng;

use super::context::{context_only, ContextLimits, ContextWindow};
use super::{Conversation, Side};
use crate::error::{Error, Result};

/// One next-utterance discrimination example.
#[derive(Clone, Debug, PartialEq)]
pub struct NudSample {
    pub context: ContextWindow,
    pub candidate: Vec<u32>,
    /// 1 when `candidate` is the true next utterance.
    pub label: u8,
    pub cross_lingual: bool,
    /// Target-side turn the candidate was taken from.
    pub candidate_turn: usize,
}

/// Positive and negative samples for turn `u`.
///
/// The negative candidate is a target utterance drawn uniformly from turns
/// `1..u-1`. The context is `C_{Y_u}`, or `C_{X_u}` when `cross_lingual`.
pub fn sample_nud<R: Rng + ?Sized>(
    conv: &Conversation,
    u: usize,
    rng: &mut R,
    cross_lingual: bool,
    limits: &ContextLimits,
) -> Result<(NudSample, NudSample)> {
    if u < 2 {
        return Err(Error::NoPrecedingUtterance);
    }
    let side = if cross_lingual { Side::Source } else { Side::Target };
    let context = context_only(conv, u, side, limits)?;
    let positive = conv.utterance(Side::Target, u)?;
    let j = rng.gen_range(1..u);
    let negative = conv.utterance(Side::Target, j)?;
    Ok((
        NudSample {
            context: context.clone(),
            candidate: positive.tokens.clone(),
            label: 1,
            cross_lingual,
            candidate_turn: u,
        },
        NudSample {
            context,
            candidate: negative.tokens.clone(),
            label: 0,
            cross_lingual,
            candidate_turn: j,
        },
    ))
}
