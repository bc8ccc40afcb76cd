use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sml_core::corpus::encode_corpus;
use sml_core::fsio::write_atomic;
use sml_core::kv;
use sml_core::model::{NctConfig, NctModel};
use sml_core::scheduler::StrategyKind;
use sml_core::trainer::{load_checkpoint, run_stage, save_checkpoint, LogEvent, RunOptions, Stage, StageConfig, TrainState};

use super::{create_dir, read_records, read_vocab};
use crate::manifest::ManifestBuilder;
use crate::TrainArgs;

pub const LOG_FILE: &str = "train-log.jsonl";

pub fn checkpoint_name(stage: u32, stopped_at: Option<usize>) -> String {
    match stopped_at {
        Some(step) => format!("stage{stage}-step{step}.ckpt"),
        None => format!("stage{stage}.ckpt"),
    }
}

/// Parses `STEP` or `STAGE:STEP`.
fn parse_stop(spec: &str) -> Result<(Option<Stage>, usize)> {
    let (stage, step) = match spec.split_once(':') {
        Some((st, n)) => (Some(st.parse::<Stage>()?), n),
        None => (None, spec),
    };
    let step = step
        .parse()
        .with_context(|| format!("bad --stop-after `{spec}`: expected [STAGE:]STEP"))?;
    Ok((stage, step))
}

fn flag_overrides(args: &TrainArgs) -> Result<String> {
    let mut text = String::new();
    if let Some(s) = &args.strategy {
        let kind: StrategyKind = s.parse()?;
        text.push_str(&format!("strategy={}\n", kind.name()));
    }
    if let Some(n) = args.steps {
        text.push_str(&format!("steps={n}\n"));
    }
    for o in &args.overrides {
        if !o.contains('=') {
            bail!("override `{o}` is not KEY=VALUE");
        }
        text.push_str(o);
        text.push('\n');
    }
    Ok(text)
}

/// Reads a stage file; a relative corpus path is taken relative to the
/// file's directory.
fn load_stage(path: &Path, overrides: &str) -> Result<StageConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read stage config {}", path.display()))?;
    let mut cfg = StageConfig::parse(&text).with_context(|| format!("in {}", path.display()))?;
    cfg.apply(&kv::parse(overrides)?)?;
    if let Some(corpus) = &cfg.corpus_path {
        if corpus.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.corpus_path = Some(base.join(corpus));
        }
    }
    cfg.validate().with_context(|| format!("in {}", path.display()))?;
    Ok(cfg)
}

fn load_model_config(path: &Path, vocab_len: usize) -> Result<NctConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read model config {}", path.display()))?;
    let mut cfg = NctConfig::parse(&text).with_context(|| format!("in {}", path.display()))?;
    if cfg.vocab == 0 {
        cfg.vocab = vocab_len;
    } else if cfg.vocab != vocab_len {
        bail!("model config says vocab={} but the vocabulary has {vocab_len} entries", cfg.vocab);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: &TrainArgs, seed: u64) -> Result<()> {
    let mut manifest = ManifestBuilder::new("train");
    manifest.seed(seed).config(&args.model);
    let vocab = read_vocab(&args.vocab)?;
    let model_cfg = load_model_config(&args.model, vocab.len())?;
    let model = NctModel::new(model_cfg.clone())?;

    let overrides = flag_overrides(args)?;
    let mut stages = Vec::with_capacity(args.stages.len());
    for p in &args.stages {
        manifest.config(p);
        stages.push(load_stage(p, &overrides)?);
    }
    for w in stages.windows(2) {
        if w[1].stage.number() <= w[0].stage.number() {
            bail!("stages must be given in order: {} follows {}", w[1].stage, w[0].stage);
        }
    }

    let mut state = match &args.resume {
        Some(p) => {
            let st = load_checkpoint(p).with_context(|| format!("resuming from {}", p.display()))?;
            if st.model != model_cfg {
                bail!("checkpoint {} was trained with a different model config", p.display());
            }
            manifest.config(p);
            st
        }
        None => {
            let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
            let params = model.init_params(&mut init_rng);
            TrainState::new(model_cfg.clone(), params, init_rng.gen())
        }
    };

    create_dir(&args.out_dir)?;
    let log_path = args.out_dir.join(LOG_FILE);
    let mut log_text = match (&args.resume, std::fs::read_to_string(&log_path)) {
        (Some(_), Ok(existing)) => existing,
        _ => String::new(),
    };
    let mut summaries = Vec::new();
    let stop = args.stop_after.as_deref().map(parse_stop).transpose()?;
    let mut first_run = true;

    for cfg in &stages {
        if let Some(current) = state.stage {
            if cfg.stage.number() < current.number() {
                info!("skipping {}: checkpoint is already in {current}", cfg.stage);
                continue;
            }
        }
        let corpus: PathBuf = cfg
            .corpus_path
            .clone()
            .with_context(|| format!("stage {} has no corpus", cfg.stage))?;
        let data = encode_corpus(&read_records(&corpus)?, &vocab)?;
        info!("{}: {} conversations, {} steps, strategy {}", cfg.stage, data.len(), cfg.steps, cfg.schedule.strategy);

        let mut sink = |e: &LogEvent| {
            log_text.push_str(&serde_json::to_string(e).expect("log event serializes"));
            log_text.push('\n');
            if e.task == cfg.main_task() {
                info!("{} step {} {} loss {:.4} alpha {:.3}", e.stage, e.step, e.task, e.loss, e.alpha);
            }
        };
        let stop_after = match stop {
            Some((Some(stage), n)) if stage == cfg.stage => Some(n),
            Some((None, n)) if first_run => Some(n),
            _ => None,
        };
        first_run = false;
        let opts = RunOptions { stop_after };
        let summary = run_stage(&model, cfg, &data, &mut state, opts, &mut sink)?;
        write_atomic(&log_path, log_text.as_bytes())?;

        let stopped = state.step < cfg.steps;
        let ckpt = args
            .out_dir
            .join(checkpoint_name(cfg.stage.number(), stopped.then_some(state.step)));
        save_checkpoint(&state, &ckpt)?;
        manifest.output(&ckpt);
        summaries.push(json!({
            "stage": cfg.stage.name(),
            "steps_run": summary.steps_run,
            "skipped_updates": summary.skipped,
            "final_main_loss": summary.main_losses.last(),
            "checkpoint": ckpt,
        }));
        if stopped {
            info!("stopped {} at step {}", cfg.stage, state.step);
            break;
        }
    }
    manifest.output(&log_path).summary(json!({ "stages": summaries }));
    manifest.finish(&args.out_dir.join("manifest.json"))?;
    Ok(())
}
