use rand::Rng;

use super::StageConfig;
use crate::corpus::{sample_nud, ContextLimits, Conversation, NudSample, Side};
use crate::diffcore::{Graph, GradVector, ParamStore, Var};
use crate::error::{Error, Result};
use crate::model::{
    mrg_loss, nct_loss, nud_loss, sent_nmt_loss, xnud_loss, xrg_loss, Dropout, GenExample, NctModel,
};
use crate::task::Task;

/// Examples for every task of one training step, all drawn from the same
/// conversation turns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    /// `(conversation index, turn)` pairs the batch was built from.
    pub turns: Vec<(usize, usize)>,
    pub sentences: Vec<(Vec<u32>, Vec<u32>)>,
    pub nct: Vec<GenExample>,
    pub mrg: Vec<GenExample>,
    pub xrg: Vec<GenExample>,
    pub nud: (Vec<NudSample>, Vec<NudSample>),
    pub xnud: (Vec<NudSample>, Vec<NudSample>),
}

/// Every `(conversation index, turn)` of a corpus, turns 1-based.
pub fn all_turns(data: &[Conversation]) -> Vec<(usize, usize)> {
    data.iter()
        .enumerate()
        .flat_map(|(i, c)| (1..=c.len()).map(move |u| (i, u)))
        .collect()
}

impl Batch {
    /// Draws turns uniformly with replacement until their source and
    /// target tokens reach `cfg.batch_tokens`.
    pub fn sample<R: Rng + ?Sized>(
        data: &[Conversation],
        turns: &[(usize, usize)],
        cfg: &StageConfig,
        limits: &ContextLimits,
        rng: &mut R,
    ) -> Result<Self> {
        if turns.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut chosen = Vec::new();
        let mut tokens = 0;
        while tokens < cfg.batch_tokens || chosen.is_empty() {
            let (i, u) = turns[rng.gen_range(0..turns.len())];
            let conv = &data[i];
            tokens += conv.source[u - 1].tokens.len() + conv.target[u - 1].tokens.len();
            chosen.push((i, u));
        }
        Self::from_turns(data, &chosen, &cfg.tasks, limits, rng)
    }

    /// Builds examples for `tasks` from explicit turns. Discrimination
    /// samples use only turns with a preceding utterance.
    pub fn from_turns<R: Rng + ?Sized>(
        data: &[Conversation],
        turns: &[(usize, usize)],
        tasks: &[Task],
        limits: &ContextLimits,
        rng: &mut R,
    ) -> Result<Self> {
        let mut b = Batch {
            turns: turns.to_vec(),
            ..Batch::default()
        };
        for &task in tasks {
            for &(i, u) in turns {
                let conv = &data[i];
                match task {
                    Task::SentNmt => b.sentences.push((
                        conv.utterance(Side::Source, u)?.tokens.clone(),
                        conv.utterance(Side::Target, u)?.tokens.clone(),
                    )),
                    Task::Nct => b.nct.push(GenExample::nct(conv, u, limits)?),
                    Task::Mrg => b.mrg.push(GenExample::mrg(conv, u, limits)?),
                    Task::Xrg => b.xrg.push(GenExample::xrg(conv, u, limits)?),
                    Task::Nud | Task::Xnud if u >= 2 => {
                        let (p, n) = sample_nud(conv, u, rng, task == Task::Xnud, limits)?;
                        let dst = if task == Task::Nud { &mut b.nud } else { &mut b.xnud };
                        dst.0.push(p);
                        dst.1.push(n);
                    }
                    Task::Nud | Task::Xnud => {}
                    Task::Synthetic(_) => return Err(Error::UnknownTask(task.to_string())),
                }
            }
        }
        Ok(b)
    }

    /// Whether the batch holds any examples for `task`.
    pub fn has(&self, task: Task) -> bool {
        match task {
            Task::SentNmt => !self.sentences.is_empty(),
            Task::Nct => !self.nct.is_empty(),
            Task::Mrg => !self.mrg.is_empty(),
            Task::Xrg => !self.xrg.is_empty(),
            Task::Nud => !self.nud.0.is_empty(),
            Task::Xnud => !self.xnud.0.is_empty(),
            Task::Synthetic(_) => false,
        }
    }
}

/// Records the loss of `task` on `batch`, or `None` if the batch holds no
/// examples for it.
pub fn task_loss(
    model: &NctModel,
    g: &mut Graph,
    batch: &Batch,
    task: Task,
    dropout: &mut Dropout,
) -> Result<Option<Var>> {
    if !batch.has(task) {
        return Ok(None);
    }
    let v = match task {
        Task::SentNmt => sent_nmt_loss(model, g, &batch.sentences, dropout)?,
        Task::Nct => nct_loss(model, g, &batch.nct, dropout)?,
        Task::Mrg => mrg_loss(model, g, &batch.mrg, dropout)?,
        Task::Xrg => xrg_loss(model, g, &batch.xrg, dropout)?,
        Task::Nud => nud_loss(model, g, &batch.nud.0, &batch.nud.1, dropout)?,
        Task::Xnud => xnud_loss(model, g, &batch.xnud.0, &batch.xnud.1, dropout)?,
        Task::Synthetic(_) => return Err(Error::UnknownTask(task.to_string())),
    };
    Ok(Some(v))
}

/// Loss value and flat gradient of `task` on `batch`.
pub fn task_gradient(
    model: &NctModel,
    params: &ParamStore,
    batch: &Batch,
    task: Task,
    dropout: &mut Dropout,
) -> Result<Option<(f64, GradVector)>> {
    let mut g = Graph::new(params);
    match task_loss(model, &mut g, batch, task, dropout)? {
        Some(l) => Ok(Some((g.scalar(l), g.backward(l)?))),
        None => Ok(None),
    }
}

/// Mean loss of `task` over every turn of `data`, without dropout,
/// evaluated in chunks of `chunk` turns and weighted by chunk size.
pub fn evaluate_loss(
    model: &NctModel,
    params: &ParamStore,
    data: &[Conversation],
    task: Task,
    limits: &ContextLimits,
    chunk: usize,
) -> Result<f64> {
    let turns = all_turns(data);
    if turns.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if matches!(task, Task::Nud | Task::Xnud) {
        return Err(Error::Invalid("evaluate_loss covers generation tasks only".into()));
    }
    let mut rng = rand::rngs::mock::StepRng::new(0, 1);
    let mut total = 0.0;
    for part in turns.chunks(chunk.max(1)) {
        let batch = Batch::from_turns(data, part, &[task], limits, &mut rng)?;
        let mut g = Graph::new(params);
        let l = task_loss(model, &mut g, &batch, task, &mut Dropout::off())?.expect("non-empty chunk");
        total += g.scalar(l) * part.len() as f64;
    }
    Ok(total / turns.len() as f64)
}
