//! Flat `key=value` text files used for model and stage configs.

use indexmap::IndexMap;

use crate::error::{Error, Result};

/// Parses `key=value` lines. Blank lines and `#` comments are skipped;
/// repeated keys keep the last value.
pub fn parse(text: &str) -> Result<IndexMap<String, String>> {
    let mut out = IndexMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{raw}`", n + 1)))?;
        out.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(out)
}

pub fn get_parsed<T: std::str::FromStr>(map: &IndexMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("bad value for `{key}`: `{v}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let m = parse("# model\nlayers = 2\n\nhidden=16 # small\n").unwrap();
        assert_eq!(m["layers"], "2");
        assert_eq!(m["hidden"], "16");
        assert_eq!(get_parsed::<usize>(&m, "layers").unwrap(), Some(2));
        assert_eq!(get_parsed::<usize>(&m, "heads").unwrap(), None);
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(parse("layers 2").is_err());
    }
}
