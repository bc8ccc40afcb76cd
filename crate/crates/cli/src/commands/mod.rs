use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{Context, Result};
use sml_core::corpus::{read_corpus, ConversationRecord, Vocabulary};

pub mod evaluate;
pub mod prepare;
pub mod tools;
pub mod train;
pub mod translate;

pub fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::read(open(path)?).with_context(|| format!("reading vocabulary {}", path.display()))
}

pub fn read_records(path: &Path) -> Result<Vec<ConversationRecord>> {
    read_corpus(open(path)?).with_context(|| format!("reading corpus {}", path.display()))
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(text.lines().map(str::to_owned).collect())
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

pub fn lines_bytes(lines: &[String]) -> Vec<u8> {
    let mut out = Vec::new();
    for l in lines {
        out.extend_from_slice(l.as_bytes());
        out.push(b'\n');
    }
    out
}
