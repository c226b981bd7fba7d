//! Flat `key = value` text with `#` comments.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format("key-value file", format!("line {}: expected `key = value`", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::format("key-value file", format!("line {}: empty key", n + 1)));
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::format("key-value file", format!("line {}: duplicate key `{k}`", n + 1)));
        }
    }
    Ok(map)
}

pub fn format_kv<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Entries whose key starts with `prefix.`, with the prefix removed.
pub fn section(map: &BTreeMap<String, String>, prefix: &str) -> BTreeMap<String, String> {
    map.iter()
        .filter_map(|(k, v)| {
            k.strip_prefix(prefix)
                .and_then(|rest| rest.strip_prefix('.'))
                .map(|rest| (rest.to_string(), v.clone()))
        })
        .collect()
}
