//! `key = value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored, as is anything after
//! a `#` that follows whitespace. Keys are case-sensitive and may appear
//! once.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |message: String| Error::Syntax {
            line: i + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| syntax(format!("expected `key = value`, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(syntax(format!("bad key {key:?}")));
        }
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return Err(syntax(format!("duplicate key {key:?}")));
        }
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    if line.trim_start().starts_with('#') {
        return "";
    }
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && i > 0 && bytes[i - 1].is_ascii_whitespace() {
            return &line[..i];
        }
    }
    line
}

pub fn load_config(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_comments() {
        let cfg = parse_config("# header\n\nalgo = birfr\nradius=3   # inline\n  path = a#b\n").unwrap();
        assert_eq!(cfg["algo"], "birfr");
        assert_eq!(cfg["radius"], "3");
        assert_eq!(cfg["path"], "a#b");
        assert_eq!(cfg.len(), 3);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(parse_config("a = 1\nnonsense\n"), Err(Error::Syntax { line: 2, .. })));
        assert!(matches!(parse_config("a = 1\na = 2\n"), Err(Error::Syntax { line: 2, .. })));
        assert!(parse_config(" = 4\n").is_err());
        assert!(parse_config("two words = 4\n").is_err());
        assert!(parse_config("empty =\n").unwrap()["empty"].is_empty());
    }
}
