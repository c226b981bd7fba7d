use std::collections::HashMap;

use serde::Serialize;

use super::bpe::{join, BpeModel};
use super::tokenize::tokenize;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// Sentences longer than this many subwords are dropped.
pub const DEFAULT_MAX_LEN: usize = 80;

/// One id-mapped training example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingTriple {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
    pub image_id: Option<String>,
    /// 1-based line number in the input files.
    pub line: usize,
}

/// A dropped line and the reason for dropping it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Discard {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub num_merges: usize,
    pub min_frequency: usize,
    /// Caps include the four reserved entries; `None` keeps every type.
    pub src_vocab_size: Option<usize>,
    pub tgt_vocab_size: Option<usize>,
    pub max_len: usize,
    /// One vocabulary over both languages instead of one per side.
    pub shared_vocab: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            num_merges: 10_000,
            min_frequency: 2,
            src_vocab_size: None,
            tgt_vocab_size: None,
            max_len: DEFAULT_MAX_LEN,
            shared_vocab: false,
        }
    }
}

/// Tokenizer, BPE table and vocabularies needed to map text to ids and
/// back.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessor {
    pub bpe: BpeModel,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub max_len: usize,
}

impl Preprocessor {
    pub fn subwords(&self, line: &str) -> Vec<String> {
        self.bpe.apply(&tokenize(line))
    }

    pub fn encode_source(&self, line: &str) -> Vec<usize> {
        self.src_vocab.encode(&self.subwords(line))
    }

    pub fn encode_target(&self, line: &str) -> Vec<usize> {
        self.tgt_vocab.encode(&self.subwords(line))
    }

    /// Target ids to a space-joined tokenized line with subwords merged.
    pub fn decode_target(&self, ids: &[usize]) -> String {
        join(&self.tgt_vocab.decode(ids)).join(" ")
    }

    pub fn decode_source(&self, ids: &[usize]) -> String {
        join(&self.src_vocab.decode(ids)).join(" ")
    }

    /// Maps aligned lines to triples, discarding (and reporting) empty or
    /// over-long sentences and, when `index` is given, lines without an
    /// image.
    pub fn encode_pairs<S: AsRef<str>>(
        &self,
        src_lines: &[S],
        tgt_lines: &[S],
        index: Option<&HashMap<usize, String>>,
    ) -> Result<(Vec<TrainingTriple>, Vec<Discard>)> {
        check_line_counts(src_lines.len(), tgt_lines.len())?;
        let mut triples = Vec::new();
        let mut discards = Vec::new();
        for (i, (s, t)) in src_lines.iter().zip(tgt_lines).enumerate() {
            let line = i + 1;
            let src = self.subwords(s.as_ref());
            let tgt = self.subwords(t.as_ref());
            match screen(line, src.len(), tgt.len(), self.max_len, index) {
                Err(reason) => discards.push(Discard { line, reason }),
                Ok(image_id) => triples.push(TrainingTriple {
                    src: self.src_vocab.encode(&src),
                    tgt: self.tgt_vocab.encode(&tgt),
                    image_id,
                    line,
                }),
            }
        }
        Ok((triples, discards))
    }
}

fn check_line_counts(src: usize, tgt: usize) -> Result<()> {
    if src != tgt {
        return Err(Error::Input(format!("source has {src} lines, target has {tgt}")));
    }
    Ok(())
}

fn screen(
    line: usize,
    src_len: usize,
    tgt_len: usize,
    max_len: usize,
    index: Option<&HashMap<usize, String>>,
) -> std::result::Result<Option<String>, String> {
    if src_len == 0 || tgt_len == 0 {
        return Err("empty sentence".into());
    }
    if src_len > max_len {
        return Err(format!("source has {src_len} subwords (limit {max_len})"));
    }
    if tgt_len > max_len {
        return Err(format!("target has {tgt_len} subwords (limit {max_len})"));
    }
    match index {
        None => Ok(None),
        Some(map) => map
            .get(&line)
            .cloned()
            .map(Some)
            .ok_or_else(|| "no image in index".to_string()),
    }
}

/// Training data with the preprocessing that produced it.
#[derive(Clone, Debug)]
pub struct PreparedCorpus {
    pub preprocessor: Preprocessor,
    pub triples: Vec<TrainingTriple>,
    pub discards: Vec<Discard>,
}

/// Tokenizes both sides, learns a joint BPE table, filters by length and
/// builds the vocabularies from the kept sentences.
pub fn build_corpus<S: AsRef<str>>(
    src_lines: &[S],
    tgt_lines: &[S],
    index: Option<&HashMap<usize, String>>,
    config: &CorpusConfig,
) -> Result<PreparedCorpus> {
    check_line_counts(src_lines.len(), tgt_lines.len())?;
    let src_tok: Vec<Vec<String>> = src_lines.iter().map(|l| tokenize(l.as_ref())).collect();
    let tgt_tok: Vec<Vec<String>> = tgt_lines.iter().map(|l| tokenize(l.as_ref())).collect();
    let bpe = BpeModel::learn(
        src_tok.iter().chain(&tgt_tok).map(Vec::as_slice),
        config.num_merges,
        config.min_frequency,
    );

    let mut kept = Vec::new();
    let mut discards = Vec::new();
    for (i, (s, t)) in src_tok.iter().zip(&tgt_tok).enumerate() {
        let line = i + 1;
        let (s, t) = (bpe.apply(s), bpe.apply(t));
        match screen(line, s.len(), t.len(), config.max_len, index) {
            Err(reason) => discards.push(Discard { line, reason }),
            Ok(image_id) => kept.push((line, s, t, image_id)),
        }
    }

    let (src_vocab, tgt_vocab) = if config.shared_vocab {
        let cap = match (config.src_vocab_size, config.tgt_vocab_size) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        let v = Vocabulary::build(
            kept.iter().flat_map(|(_, s, t, _)| [s.as_slice(), t.as_slice()]),
            cap,
        );
        (v.clone(), v)
    } else {
        (
            Vocabulary::build(kept.iter().map(|(_, s, _, _)| s.as_slice()), config.src_vocab_size),
            Vocabulary::build(kept.iter().map(|(_, _, t, _)| t.as_slice()), config.tgt_vocab_size),
        )
    };

    let triples = kept
        .into_iter()
        .map(|(line, s, t, image_id)| TrainingTriple {
            src: src_vocab.encode(&s),
            tgt: tgt_vocab.encode(&t),
            image_id,
            line,
        })
        .collect();
    Ok(PreparedCorpus {
        preprocessor: Preprocessor {
            bpe,
            src_vocab,
            tgt_vocab,
            max_len: config.max_len,
        },
        triples,
        discards,
    })
}
