//! Text preparation: tokenization, subwords, vocabularies, corpus
//! filtering, back-translation and attention dumps.

pub mod attention_dump;
pub mod backtranslate;
pub mod bpe;
pub mod corpus;
pub mod tokenize;
pub mod vocab;

pub use attention_dump::{dump_attention, AttentionRecord, DumpSummary, StepRecord};
pub use backtranslate::{back_translate, ImageLookup};
pub use bpe::{join, BpeModel};
pub use corpus::{build_corpus, CorpusConfig, Discard, PreparedCorpus, Preprocessor, TrainingTriple};
pub use tokenize::tokenize;
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};
