use serde::Serialize;

use super::{Dropout, NctModel};
use crate::corpus::{context_only, make_context, standalone, ContextLimits, Conversation, NudSample, Side, EOS};
use crate::diffcore::{Graph, Var};
use crate::error::{Error, Result};

/// Output layer used by a generation loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GenHead {
    Nct,
    Mrg,
    Xrg,
}

impl GenHead {
    pub fn param_names(self) -> (&'static str, &'static str) {
        match self {
            GenHead::Nct => ("head.nct.w", "head.nct.b"),
            GenHead::Mrg => ("head.mrg.w", "head.mrg.b"),
            GenHead::Xrg => ("head.xrg.w", "head.xrg.b"),
        }
    }
}

/// Two-way classifier used by a discrimination loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ClsHead {
    Nud,
    Xnud,
}

impl ClsHead {
    pub fn param_name(self) -> &'static str {
        match self {
            ClsHead::Nud => "head.nud.w",
            ClsHead::Xnud => "head.xnud.w",
        }
    }
}

/// One encoder window and the target utterance to generate from it.
#[derive(Clone, Debug, PartialEq)]
pub struct GenExample {
    pub window: crate::corpus::ContextWindow,
    pub target: Vec<u32>,
}

impl GenExample {
    /// Source context plus source utterance, generating the target utterance.
    pub fn nct(conv: &Conversation, u: usize, limits: &ContextLimits) -> Result<Self> {
        Ok(Self {
            window: make_context(conv, u, Side::Source, limits)?,
            target: conv.utterance(Side::Target, u)?.tokens.clone(),
        })
    }

    /// Target-side context only, generating the target utterance.
    pub fn mrg(conv: &Conversation, u: usize, limits: &ContextLimits) -> Result<Self> {
        Ok(Self {
            window: context_only(conv, u, Side::Target, limits)?,
            target: conv.utterance(Side::Target, u)?.tokens.clone(),
        })
    }

    /// Source-side context only, generating the target utterance.
    pub fn xrg(conv: &Conversation, u: usize, limits: &ContextLimits) -> Result<Self> {
        Ok(Self {
            window: context_only(conv, u, Side::Source, limits)?,
            target: conv.utterance(Side::Target, u)?.tokens.clone(),
        })
    }

    /// A context-free sentence pair.
    pub fn sentence(source: &[u32], target: &[u32]) -> Self {
        Self {
            window: standalone(source, Side::Source),
            target: target.to_vec(),
        }
    }

    /// Decoder input (`BOS` + target) and output (target + `EOS`).
    pub fn teacher_forcing(&self) -> (Vec<u32>, Vec<usize>) {
        let mut input = Vec::with_capacity(self.target.len() + 1);
        input.push(crate::corpus::BOS);
        input.extend_from_slice(&self.target);
        let mut output: Vec<usize> = self.target.iter().map(|&t| t as usize).collect();
        output.push(EOS as usize);
        (input, output)
    }
}

/// Token-summed label-smoothed negative log-likelihood of one example.
pub fn generation_loss(
    model: &NctModel,
    g: &mut Graph,
    example: &GenExample,
    head: GenHead,
    dropout: &mut Dropout,
) -> Result<Var> {
    let enc = model.encode(g, &example.window, dropout)?;
    let (input, output) = example.teacher_forcing();
    let states = model.decode(g, enc.output, &input, dropout)?;
    let logits = model.generation_logits(g, states, head)?;
    g.cross_entropy_with_label_smoothing(logits, &output, model.config().label_smoothing)
}

fn mean_generation_loss(
    model: &NctModel,
    g: &mut Graph,
    batch: &[GenExample],
    head: GenHead,
    dropout: &mut Dropout,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total: Option<Var> = None;
    for ex in batch {
        let l = generation_loss(model, g, ex, head, dropout)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    g.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64)
}

/// Translation loss, averaged over the batch.
pub fn nct_loss(model: &NctModel, g: &mut Graph, batch: &[GenExample], dropout: &mut Dropout) -> Result<Var> {
    mean_generation_loss(model, g, batch, GenHead::Nct, dropout)
}

/// Monolingual response generation: batch windows hold target-side context.
pub fn mrg_loss(model: &NctModel, g: &mut Graph, batch: &[GenExample], dropout: &mut Dropout) -> Result<Var> {
    mean_generation_loss(model, g, batch, GenHead::Mrg, dropout)
}

/// Cross-lingual response generation: batch windows hold source-side context.
pub fn xrg_loss(model: &NctModel, g: &mut Graph, batch: &[GenExample], dropout: &mut Dropout) -> Result<Var> {
    mean_generation_loss(model, g, batch, GenHead::Xrg, dropout)
}

/// Sentence-level translation loss over context-free pairs.
pub fn sent_nmt_loss(
    model: &NctModel,
    g: &mut Graph,
    pairs: &[(Vec<u32>, Vec<u32>)],
    dropout: &mut Dropout,
) -> Result<Var> {
    let batch: Vec<GenExample> = pairs.iter().map(|(x, y)| GenExample::sentence(x, y)).collect();
    mean_generation_loss(model, g, &batch, GenHead::Nct, dropout)
}

/// `[H_Y; H_C]` for one sample: the candidate's mean top state (encoded as
/// CLS + candidate) next to the context window's top state at CLS.
fn nud_features(model: &NctModel, g: &mut Graph, sample: &NudSample, dropout: &mut Dropout) -> Result<Var> {
    if sample.candidate.is_empty() {
        return Err(Error::Invalid("empty candidate utterance".into()));
    }
    let ctx = model.encode(g, &sample.context, dropout)?;
    let h_c = g.slice_rows(ctx.output, 0, 1)?;
    let cand = standalone(&sample.candidate, Side::Target);
    let enc = model.encode(g, &cand, dropout)?;
    let utt = g.slice_rows(enc.output, 1, sample.candidate.len())?;
    let h_y = g.mean_rows(utt)?;
    g.concat_cols(&[h_y, h_c])
}

fn discrimination_loss(
    model: &NctModel,
    g: &mut Graph,
    positives: &[NudSample],
    negatives: &[NudSample],
    head: ClsHead,
    dropout: &mut Dropout,
) -> Result<Var> {
    if positives.len() != negatives.len() {
        return Err(Error::Invalid(format!(
            "unmatched discrimination pairs: {} positives, {} negatives",
            positives.len(),
            negatives.len()
        )));
    }
    if positives.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let w = g.param(head.param_name())?;
    let mut total: Option<Var> = None;
    for sample in positives.iter().chain(negatives) {
        let feat = nud_features(model, g, sample, dropout)?;
        let logits = g.matmul_t(feat, w)?;
        let l = g.cross_entropy_with_label_smoothing(logits, &[sample.label as usize], 0.0)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    g.scale(total.expect("non-empty batch"), 1.0 / positives.len() as f64)
}

/// Next-utterance discrimination against target-side context.
pub fn nud_loss(
    model: &NctModel,
    g: &mut Graph,
    positives: &[NudSample],
    negatives: &[NudSample],
    dropout: &mut Dropout,
) -> Result<Var> {
    discrimination_loss(model, g, positives, negatives, ClsHead::Nud, dropout)
}

/// Next-utterance discrimination against source-side context.
pub fn xnud_loss(
    model: &NctModel,
    g: &mut Graph,
    positives: &[NudSample],
    negatives: &[NudSample],
    dropout: &mut Dropout,
) -> Result<Var> {
    discrimination_loss(model, g, positives, negatives, ClsHead::Xnud, dropout)
}
