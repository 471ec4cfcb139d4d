//! Line-oriented `key=value` text used for configs, stats files and reports.
//!
//! Blank lines and lines starting with `#` are ignored. Keys and values are
//! trimmed. Later duplicates override earlier ones.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::{Error, Result};

pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1))
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn render<'a, I>(pairs: I) -> String
where
    I: IntoIterator<Item = (&'a str, String)>,
{
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

pub fn get_f64(map: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    let raw = map
        .get(key)
        .ok_or_else(|| Error::Config(format!("missing key `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::Config(format!("key `{key}`: `{raw}` is not a number")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let m = parse("# hi\n a = 1 \n\nb=two=2\n").unwrap();
        assert_eq!(m["a"], "1");
        assert_eq!(m["b"], "two=2");
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(parse("oops\n").is_err());
        assert!(parse("=3\n").is_err());
    }
}
