//! Corpus-level BLEU4, chrF, TER and approximate randomization.

pub mod bleu;
pub mod chrf;
pub mod significance;
pub mod ter;

pub use bleu::{bleu4, BleuStats, NGramCounts};
pub use chrf::{chrf, ChrfScore, ChrfStats};
pub use significance::{approx_randomization, exact_randomization, Metric, SignificanceResult};
pub use ter::{ter, ter_script, EditOp, EditScript, TerStats};
