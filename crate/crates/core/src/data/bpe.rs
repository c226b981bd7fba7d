use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

/// Marks the last symbol of a word during learning and application.
pub const END_OF_WORD: &str = "</w>";
/// Suffix on every subword that is continued by the next one.
pub const CONTINUATION: &str = "@@";

const HEADER: &str = "#bpe v1";

/// Ordered merge table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    /// Learning stops once the best pair occurs fewer times than this.
    pub min_frequency: usize,
}

/// Initial segmentation: one symbol per character, the last carrying the
/// end-of-word marker.
pub fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == chars.len() {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

/// Replaces every non-overlapping occurrence of `pair`, left to right.
pub fn merge_pair(symbols: &[String], pair: (&str, &str)) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            out.push(format!("{}{}", pair.0, pair.1));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Frequency of every adjacent symbol pair, weighted by word counts.
pub fn pair_counts(words: &[(Vec<String>, usize)]) -> BTreeMap<(String, String), usize> {
    let mut counts = BTreeMap::new();
    for (symbols, freq) in words {
        for w in symbols.windows(2) {
            *counts.entry((w[0].clone(), w[1].clone())).or_insert(0) += freq;
        }
    }
    counts
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>, min_frequency: usize) -> Self {
        let ranks = merges.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        Self {
            merges,
            ranks,
            min_frequency,
        }
    }

    /// Learns up to `num_merges` merges from tokenized sentences. At each
    /// step the most frequent pair is merged; ties go to the
    /// lexicographically smallest pair.
    pub fn learn<'a>(sentences: impl IntoIterator<Item = &'a [String]>, num_merges: usize, min_frequency: usize) -> Self {
        let mut vocab: BTreeMap<&str, usize> = BTreeMap::new();
        for sentence in sentences {
            for tok in sentence {
                *vocab.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(Vec<String>, usize)> = vocab.into_iter().map(|(w, c)| (word_symbols(w), c)).collect();
        let mut counts = pair_counts(&words);
        let mut merges = Vec::new();
        while merges.len() < num_merges {
            let best = counts
                .iter()
                .filter(|(_, &c)| c > 0)
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                .map(|(p, &c)| (p.clone(), c));
            let Some((pair, count)) = best else { break };
            if count < min_frequency.max(1) {
                break;
            }
            let (a, b) = (pair.0.as_str(), pair.1.as_str());
            for (symbols, freq) in words.iter_mut() {
                if !symbols.windows(2).any(|w| w[0] == a && w[1] == b) {
                    continue;
                }
                for w in symbols.windows(2) {
                    let e = counts.get_mut(&(w[0].clone(), w[1].clone())).expect("counted pair");
                    *e -= *freq;
                }
                *symbols = merge_pair(symbols, (a, b));
                for w in symbols.windows(2) {
                    *counts.entry((w[0].clone(), w[1].clone())).or_insert(0) += *freq;
                }
            }
            counts.retain(|_, c| *c > 0);
            merges.push(pair);
        }
        Self::from_merges(merges, min_frequency)
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Symbols of one word after applying the merges in learned order.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols = word_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w)))
                .min_by_key(|(r, _)| *r);
            let Some((rank, _)) = best else { break };
            let (a, b) = &self.merges[rank];
            symbols = merge_pair(&symbols, (a, b));
        }
        symbols
    }

    /// Subword tokens: every piece but the last of a word gets the `@@`
    /// suffix and the end-of-word marker is dropped.
    pub fn apply<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        let mut cache: HashMap<&str, Vec<String>> = HashMap::new();
        let mut out = Vec::new();
        for tok in tokens {
            let tok = tok.as_ref();
            let pieces = cache.entry(tok).or_insert_with(|| {
                let symbols = self.segment_word(tok);
                let last = symbols.len().saturating_sub(1);
                symbols
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| {
                        if i == last {
                            s.strip_suffix(END_OF_WORD).unwrap_or(&s).to_string()
                        } else {
                            format!("{s}{CONTINUATION}")
                        }
                    })
                    .collect()
            });
            out.extend(pieces.iter().cloned());
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER} min_frequency={}\n", self.min_frequency);
        for (a, b) in &self.merges {
            s.push_str(a);
            s.push(' ');
            s.push_str(b);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let min_frequency = header
            .strip_prefix(HEADER)
            .and_then(|rest| rest.trim().strip_prefix("min_frequency="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format("BPE table", "missing header"))?;
        let mut merges = Vec::new();
        for (n, line) in lines.enumerate() {
            let (a, b) = line
                .split_once(' ')
                .filter(|(a, b)| !a.is_empty() && !b.is_empty() && !b.contains(' '))
                .ok_or_else(|| Error::format("BPE table", format!("line {}: expected two symbols", n + 2)))?;
            merges.push((a.to_string(), b.to_string()));
        }
        Ok(Self::from_merges(merges, min_frequency))
    }
}

/// Inverse of [`BpeModel::apply`]: glues `@@`-suffixed pieces to their
/// successor.
pub fn join<S: AsRef<str>>(subwords: &[S]) -> Vec<String> {
    let mut out = Vec::new();
    let mut pending = String::new();
    for piece in subwords {
        let piece = piece.as_ref();
        match piece.strip_suffix(CONTINUATION) {
            Some(stem) => pending.push_str(stem),
            None => {
                pending.push_str(piece);
                out.push(std::mem::take(&mut pending));
            }
        }
    }
    if !pending.is_empty() {
        out.push(pending);
    }
    out
}
