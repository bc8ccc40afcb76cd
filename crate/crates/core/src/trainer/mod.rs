//! Three-stage training: general pre-training on sentence pairs, in-domain
//! pre-training and fine-tuning on conversations with auxiliary tasks.

mod batch;
mod config;
mod state;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

pub use batch::{all_turns, evaluate_loss, task_gradient, task_loss, Batch};
pub use config::{LrSchedule, Stage, StageConfig};
pub use state::{load_checkpoint, save_checkpoint, save_params, TrainState, ADAM_EPS, BETA1, BETA2};

use crate::corpus::{copy_corpus, encode_corpus, ContextLimits, Conversation, CopyCorpusSpec, Vocabulary};
use crate::diffcore::{grad_check, GradCheckConfig, GradCheckReport, GradVector};
use crate::error::{Error, Result};
use crate::model::{Dropout, NctConfig, NctModel};
use crate::scheduler::{alpha_at, combine_selected, select_tasks, TaskGradient};
use crate::task::Task;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogEvent {
    pub step: usize,
    pub stage: Stage,
    pub task: Task,
    pub loss: f64,
    pub alpha: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Return once the stage step counter reaches this value.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StageSummary {
    pub steps_run: usize,
    pub skipped: usize,
    /// Main-task loss of every step run, in order.
    pub main_losses: Vec<f64>,
}

/// Losses and combined update of one step, before the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct StepUpdate {
    pub alpha: f64,
    pub main: (Task, f64, GradVector),
    pub aux: Vec<(Task, f64, GradVector)>,
    pub delta: GradVector,
}

pub fn context_limits(model: &NctModel, cfg: &StageConfig) -> ContextLimits {
    ContextLimits {
        max_ctx_tokens: cfg.max_ctx_tokens,
        max_turns: model.config().max_turns,
    }
}

fn dropout_for(model: &NctModel, rng: &mut ChaCha8Rng) -> Dropout {
    let rate = model.config().dropout;
    let seed: u64 = rng.gen();
    if rate > 0.0 {
        Dropout::new(rate, ChaCha8Rng::seed_from_u64(seed))
    } else {
        Dropout::off()
    }
}

/// Computes the update direction for one step on `batch`: the main-task
/// gradient, the auxiliary gradients the strategy selects, and their
/// combination at `alpha`. Randomness comes from `rng`.
pub fn compute_update(
    model: &NctModel,
    cfg: &StageConfig,
    params: &crate::diffcore::ParamStore,
    batch: &Batch,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<StepUpdate> {
    let main_task = cfg.main_task();
    let (main_loss, g_main) = task_gradient(model, params, batch, main_task, &mut dropout_for(model, rng))?
        .ok_or_else(|| Error::Invalid(format!("batch has no {main_task} examples")))?;
    let selected = select_tasks(
        cfg.schedule.strategy,
        &cfg.auxiliary_tasks(),
        &cfg.schedule.prior_active_tasks,
        rng,
    );
    let mut aux = Vec::with_capacity(selected.len());
    for task in selected {
        let mut dropout = dropout_for(model, rng);
        if let Some((loss, grad)) = task_gradient(model, params, batch, task, &mut dropout)? {
            aux.push((task, loss, grad));
        }
    }
    let tg: Vec<TaskGradient> = aux
        .iter()
        .map(|(task, _, grad)| TaskGradient {
            task: *task,
            grad: grad.clone(),
        })
        .collect();
    let delta = combine_selected(&g_main, &tg, alpha, cfg.schedule.strategy)?;
    Ok(StepUpdate {
        alpha,
        main: (main_task, main_loss, g_main),
        aux,
        delta,
    })
}

/// Checks everything `run_stage` needs before it touches the state.
pub fn check_stage_inputs(model: &NctModel, cfg: &StageConfig, data: &[Conversation], state: &TrainState) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if &state.model != model.config() {
        return Err(Error::Config("training state was created for a different model config".into()));
    }
    model.check_params(&state.params)?;
    let vocab = model.config().vocab;
    for conv in data {
        for utt in conv.source.iter().chain(&conv.target) {
            if let Some(&t) = utt.tokens.iter().find(|&&t| t as usize >= vocab) {
                return Err(Error::VocabMismatch(format!(
                    "conversation {} uses token id {t} but the model vocabulary has {vocab} entries",
                    conv.id
                )));
            }
        }
    }
    Ok(())
}

/// Runs the remaining steps of `cfg.stage` on `state`, calling `sink` for
/// every log event.
pub fn run_stage(
    model: &NctModel,
    cfg: &StageConfig,
    data: &[Conversation],
    state: &mut TrainState,
    opts: RunOptions,
    sink: &mut dyn FnMut(&LogEvent),
) -> Result<StageSummary> {
    check_stage_inputs(model, cfg, data, state)?;
    state.enter_stage(cfg.stage);
    let limits = context_limits(model, cfg);
    let lr = cfg.lr_schedule(model.config().hidden);
    let turns = all_turns(data);
    let stop = opts.stop_after.unwrap_or(cfg.steps).min(cfg.steps);
    let mut summary = StageSummary::default();

    while state.step < stop {
        let s = state.step;
        let alpha = alpha_at(s, &cfg.schedule);
        let batch = Batch::sample(data, &turns, cfg, &limits, &mut state.rng)?;
        let update = compute_update(model, cfg, &state.params, &batch, alpha, &mut state.rng)?;
        let applied = state.adam_update(&update.delta, lr.lr(s + 1))?;
        summary.steps_run += 1;
        summary.skipped += usize::from(!applied);
        summary.main_losses.push(update.main.1);

        let done = state.step;
        if done % cfg.log_every == 0 || done == cfg.steps {
            let (task, loss, grad) = &update.main;
            sink(&LogEvent {
                step: done,
                stage: cfg.stage,
                task: *task,
                loss: *loss,
                alpha,
                grad_norm: grad.norm(),
            });
            for (task, loss, grad) in &update.aux {
                sink(&LogEvent {
                    step: done,
                    stage: cfg.stage,
                    task: *task,
                    loss: *loss,
                    alpha,
                    grad_norm: grad.norm(),
                });
            }
        }
    }
    Ok(summary)
}

/// Finite-difference check of each task loss in `tasks` on `batch`,
/// with dropout off. Tasks without examples in the batch are skipped.
pub fn check_task_gradients(
    model: &NctModel,
    params: &crate::diffcore::ParamStore,
    batch: &Batch,
    tasks: &[Task],
    cfg: &GradCheckConfig,
) -> Result<Vec<(Task, GradCheckReport)>> {
    let mut out = Vec::new();
    for &task in tasks.iter().filter(|&&t| batch.has(t)) {
        let report = grad_check(
            params,
            |g| Ok(task_loss(model, g, batch, task, &mut Dropout::off())?.expect("batch has the task")),
            cfg,
        )?;
        out.push((task, report));
    }
    Ok(out)
}

/// A model, perturbed parameters and a batch holding every task, for
/// gradient checks. Parameters get extra `N(0, 0.3)` noise so that no
/// layer sits at its symmetric initial point.
pub fn gradcheck_fixture(config: NctConfig, seed: u64) -> Result<(NctModel, crate::diffcore::ParamStore, Batch)> {
    let model = NctModel::new(config)?;
    let words = model.config().vocab - crate::corpus::NUM_SPECIAL;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = CopyCorpusSpec {
        conversations: 2,
        turns: 3,
        words,
        min_len: 1,
        max_len: 4,
    };
    let mut records = copy_corpus(&spec, &mut rng);
    // Make the target side differ from the source so the generation heads
    // see distinct inputs and outputs.
    for r in &mut records {
        r.tgt.reverse();
    }
    let vocab = Vocabulary::build((0..words).map(|i| format!("w{i}")), 1)?;
    let data = encode_corpus(&records, &vocab)?;
    let limits = ContextLimits {
        max_ctx_tokens: 64,
        max_turns: model.config().max_turns,
    };
    let turns = all_turns(&data);
    let tasks = [Task::SentNmt, Task::Nct, Task::Mrg, Task::Xrg, Task::Nud, Task::Xnud];
    let batch = Batch::from_turns(&data, &turns, &tasks, &limits, &mut rng)?;

    let mut params = model.init_params(&mut rng);
    let noise = Normal::new(0.0, 0.3).expect("valid std");
    let flat: Vec<f64> = params.flatten().iter().map(|v| v + noise.sample(&mut rng)).collect();
    params.unflatten(&flat)?;
    Ok((model, params, batch))
}

/// Reads and encodes a JSONL conversation corpus.
pub fn load_corpus(path: &std::path::Path, vocab: &crate::corpus::Vocabulary) -> Result<Vec<Conversation>> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open corpus {}: {e}", path.display())))?;
    let records = crate::corpus::read_corpus(std::io::BufReader::new(f))?;
    crate::corpus::encode_corpus(&records, vocab)
}

#[cfg(test)]
mod tests;
