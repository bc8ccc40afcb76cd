use std::collections::BTreeMap;

use anyhow::{bail, Result};
use serde_json::json;
use sml_core::eval::{coherence_by_distance, corpus_bleu_with, BleuMode, Smoothing, VectorSource, WordVectorTable};
use sml_core::fsio::write_atomic;
use sml_core::trainer::load_checkpoint;

use super::{open, read_lines, read_records, read_vocab};
use crate::manifest::{manifest_path_for_file, ManifestBuilder};
use crate::EvalArgs;

fn vector_table(args: &EvalArgs) -> Result<Option<WordVectorTable>> {
    if let Some(p) = &args.vectors {
        return Ok(Some(WordVectorTable::read(open(p)?, VectorSource::External(p.display().to_string()))?));
    }
    match (&args.checkpoint, &args.vocab) {
        (Some(c), Some(v)) => {
            let state = load_checkpoint(c)?;
            Ok(Some(WordVectorTable::from_embeddings(&state.params, &read_vocab(v)?)?))
        }
        _ => Ok(None),
    }
}

pub fn run(args: &EvalArgs, seed: u64) -> Result<()> {
    let mut manifest = ManifestBuilder::new("eval");
    manifest.seed(seed);
    let mode: BleuMode = args.mode.parse()?;
    let hyps = read_lines(&args.hyps)?;
    let refs = read_lines(&args.refs)?;
    if hyps.len() != refs.len() {
        bail!("{} hypotheses but {} references", hyps.len(), refs.len());
    }
    let report = corpus_bleu_with(&hyps, &refs, 4, mode, Smoothing::Exp)?;

    let mut coherence_at = BTreeMap::new();
    if let Some(corpus) = &args.corpus {
        let table = vector_table(args)?;
        let Some(table) = table else {
            bail!("coherence needs --vectors or --checkpoint with --vocab");
        };
        let records = read_records(corpus)?;
        let mut turns = Vec::new();
        let mut history: Vec<&[String]> = Vec::new();
        for r in &records {
            for u in 1..=r.tgt.len() {
                turns.push(u);
                history.push(&r.tgt);
            }
        }
        if turns.len() != hyps.len() {
            bail!("corpus has {} turns but there are {} hypotheses", turns.len(), hyps.len());
        }
        coherence_at = coherence_by_distance(&hyps, &turns, &history, &table, args.max_k)?;
    }

    let metrics = json!({
        "bleu": report.bleu,
        "mode": mode,
        "coherence_at": coherence_at,
        "n_examples": hyps.len(),
        "precisions": report.precisions,
        "brevity_penalty": report.brevity_penalty,
    });
    let text = serde_json::to_string_pretty(&metrics)?;
    println!("{text}");
    write_atomic(&args.out, format!("{text}\n").as_bytes())?;
    manifest.output(&args.out).summary(metrics);
    manifest.finish(&manifest_path_for_file(&args.out))?;
    Ok(())
}
