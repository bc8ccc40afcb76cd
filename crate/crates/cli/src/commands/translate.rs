use anyhow::{Context, Result};
use log::info;
use serde_json::json;
use sml_core::corpus::{encode_corpus, make_context, ContextLimits, Side};
use sml_core::eval::{beam_decode, BeamConfig};
use sml_core::fsio::write_atomic;
use sml_core::model::NctModel;
use sml_core::trainer::load_checkpoint;

use super::{lines_bytes, read_records, read_vocab};
use crate::manifest::{manifest_path_for_file, ManifestBuilder};
use crate::TranslateArgs;

pub fn run(args: &TranslateArgs, seed: u64) -> Result<()> {
    let mut manifest = ManifestBuilder::new("translate");
    manifest.seed(seed).config(&args.checkpoint);
    let state = load_checkpoint(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let vocab = read_vocab(&args.vocab)?;
    let model = NctModel::new(state.model.clone())?;
    model.check_params(&state.params)?;
    if model.config().vocab != vocab.len() {
        anyhow::bail!(
            "checkpoint vocabulary has {} entries, {} has {}",
            model.config().vocab,
            args.vocab.display(),
            vocab.len()
        );
    }
    let records = read_records(&args.corpus)?;
    let convs = encode_corpus(&records, &vocab)?;
    let limits = ContextLimits {
        max_ctx_tokens: args.max_ctx_tokens,
        max_turns: model.config().max_turns,
    };
    let beam = BeamConfig {
        beam_size: args.beam_size,
        length_penalty: args.length_penalty,
        max_len: args.max_len,
    };

    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for (rec, conv) in records.iter().zip(&convs) {
        for u in 1..=conv.len() {
            let window = make_context(conv, u, Side::Source, &limits)?;
            let out = beam_decode(&model, &state.params, &window, &beam)?;
            hyps.push(vocab.decode(&out));
            refs.push(rec.tgt[u - 1].clone());
        }
    }
    info!("decoded {} turns from {} conversations", hyps.len(), records.len());

    write_atomic(&args.out, &lines_bytes(&hyps))?;
    manifest.output(&args.out);
    if let Some(p) = &args.refs_out {
        write_atomic(p, &lines_bytes(&refs))?;
        manifest.output(p);
    }
    manifest.summary(json!({ "turns": hyps.len(), "beam": beam }));
    manifest.finish(&manifest_path_for_file(&args.out))?;
    Ok(())
}
