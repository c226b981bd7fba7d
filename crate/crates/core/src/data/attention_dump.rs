use serde::Serialize;

use super::corpus::Preprocessor;
use super::vocab::EOS;
use crate::error::Result;
use crate::model::Model;
use crate::search::greedy_trace;
use crate::tensor::{Real, Tensor};
use crate::training::beta_fractions;

/// Attention weights and gate value for one emitted target token.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub token: usize,
    pub alpha_src: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_img: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

/// Greedy translation of one sentence with every step's alignments.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionRecord {
    pub sentence: usize,
    pub source_ids: Vec<usize>,
    /// Emitted ids, including the final end-of-sentence marker if produced.
    pub target_ids: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub source_tokens: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub target_tokens: Vec<String>,
    pub steps: Vec<StepRecord>,
}

impl AttentionRecord {
    /// Fills the subword strings from the vocabularies.
    pub fn with_tokens(mut self, pre: &Preprocessor) -> Self {
        self.source_tokens = pre.src_vocab.decode(&self.source_ids);
        self.target_tokens = pre.tgt_vocab.decode(&self.target_ids);
        self
    }

    pub fn betas(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().filter_map(|s| s.beta)
    }
}

/// Corpus-level gate statistics over every dumped step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DumpSummary {
    pub sentences: usize,
    pub steps: usize,
    pub beta_mean: Option<f64>,
    pub beta_above_05: Option<f64>,
    pub beta_above_08: Option<f64>,
}

impl DumpSummary {
    pub fn from_records(records: &[AttentionRecord]) -> Self {
        let betas: Vec<f64> = records.iter().flat_map(AttentionRecord::betas).collect();
        let has = !betas.is_empty();
        let (a, b) = beta_fractions(&betas);
        Self {
            sentences: records.len(),
            steps: records.iter().map(|r| r.steps.len()).sum(),
            beta_mean: has.then(|| betas.iter().sum::<f64>() / betas.len() as f64),
            beta_above_05: has.then_some(a),
            beta_above_08: has.then_some(b),
        }
    }
}

fn to_f64<T: Real>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.as_f64()).collect()
}

/// Decodes greedily and records what each step attended to.
pub fn dump_attention<T: Real>(
    model: &Model<T>,
    sentence: usize,
    src: &[usize],
    image: Option<&Tensor<T>>,
    max_len: usize,
) -> Result<AttentionRecord> {
    let memory = model.prepare(src, image)?;
    let (hyp, trace) = greedy_trace(model, &memory, max_len)?;
    let mut target_ids = hyp.tokens.clone();
    if hyp.finished {
        target_ids.push(EOS);
    }
    let steps = trace
        .iter()
        .zip(&target_ids)
        .map(|(s, &token)| StepRecord {
            token,
            alpha_src: to_f64(&s.alpha_src.weights),
            alpha_img: s.alpha_img.as_ref().map(|a| to_f64(&a.weights)),
            beta: s.beta.map(Real::as_f64),
        })
        .collect();
    Ok(AttentionRecord {
        sentence,
        source_ids: src.to_vec(),
        target_ids,
        source_tokens: Vec::new(),
        target_tokens: Vec::new(),
        steps,
    })
}
