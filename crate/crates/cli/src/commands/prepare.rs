use anyhow::{Context, Result};
use log::{info, warn};
use serde_json::json;
use sml_core::corpus::{corpus_tokens, dedup, read_aligned_pairs, window_dialogues_with_stride, write_corpus, Vocabulary};
use sml_core::fsio::write_atomic;

use super::{create_dir, open};
use crate::manifest::ManifestBuilder;
use crate::PrepareArgs;

pub fn run(args: &PrepareArgs, seed: u64) -> Result<()> {
    let mut manifest = ManifestBuilder::new("prepare");
    manifest.seed(seed);
    let pairs = read_aligned_pairs(open(&args.input)?)
        .with_context(|| format!("reading pairs from {}", args.input.display()))?;
    if pairs.is_empty() {
        warn!("{} holds no utterance pairs; writing empty outputs", args.input.display());
    }
    let windows = window_dialogues_with_stride(&pairs, args.window, args.stride.unwrap_or(args.window))?;
    let windowed = windows.len();
    let mut records = dedup(windows);
    for (i, r) in records.iter_mut().enumerate() {
        r.id = format!("dlg-{i}");
    }
    let duplicates = windowed - records.len();

    let vocab = if records.is_empty() {
        Vocabulary::specials_only()
    } else {
        Vocabulary::build(corpus_tokens(&records), args.min_freq)?
    };

    create_dir(&args.out_dir)?;
    let corpus_path = args.out_dir.join("corpus.jsonl");
    let vocab_path = args.out_dir.join("vocab.txt");
    let mut buf = Vec::new();
    write_corpus(&mut buf, &records)?;
    write_atomic(&corpus_path, &buf)?;
    let mut buf = Vec::new();
    vocab.write(&mut buf)?;
    write_atomic(&vocab_path, &buf)?;

    let summary = json!({
        "pairs": pairs.len(),
        "windows": windowed,
        "duplicates_removed": duplicates,
        "conversations": records.len(),
        "vocab_size": vocab.len(),
    });
    info!(
        "{} pairs -> {} conversations ({} duplicates removed), vocabulary of {}",
        pairs.len(),
        records.len(),
        duplicates,
        vocab.len()
    );
    println!("{summary}");
    manifest.output(&corpus_path).output(&vocab_path).summary(summary);
    manifest.finish(&args.out_dir.join("manifest.json"))?;
    Ok(())
}
