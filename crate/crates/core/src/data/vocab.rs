use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Bidirectional token/id map with the four reserved ids fixed at 0–3.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>()).expect("reserved tokens are distinct")
    }
}

impl Vocabulary {
    /// Reserved entries followed by `tokens` in the given order.
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED.iter().map(|s| s.to_string()).chain(tokens.into_iter().map(Into::into)) {
            if v.index.contains_key(&t) {
                return Err(Error::format("vocabulary", format!("duplicate token `{t}`")));
            }
            v.index.insert(t.clone(), v.tokens.len());
            v.tokens.push(t);
        }
        Ok(v)
    }

    /// Most frequent tokens first (ties in byte order), keeping at most
    /// `max_size` entries including the reserved ones. `None` keeps all.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a [String]>, max_size: Option<usize>) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sentence in sentences {
            for tok in sentence {
                if !RESERVED.contains(&tok.as_str()) {
                    *counts.entry(tok.as_str()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let keep = max_size.map_or(ranked.len(), |m| m.saturating_sub(RESERVED.len()));
        Self::from_tokens(ranked.into_iter().take(keep).map(|(t, _)| t.to_string())).expect("counted tokens are unique")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Maps ids back to tokens; ids outside the vocabulary become `<unk>`.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }

    /// One token per line, reserved entries first.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED.len() || lines[..RESERVED.len()] != RESERVED {
            return Err(Error::format("vocabulary", "missing reserved header"));
        }
        Self::from_tokens(lines[RESERVED.len()..].iter().copied())
    }
}
