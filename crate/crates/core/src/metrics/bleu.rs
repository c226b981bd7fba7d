use std::collections::HashMap;
use std::hash::Hash;
use std::ops::AddAssign;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Per-order n-gram tallies for one hypothesis/reference pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NGramCounts<W: Eq + Hash> {
    pub hypothesis: Vec<HashMap<Vec<W>, usize>>,
    pub reference: Vec<HashMap<Vec<W>, usize>>,
    /// `min(hypothesis count, reference count)` per n-gram.
    pub clipped: Vec<HashMap<Vec<W>, usize>>,
}

fn ngrams<W: Eq + Hash + Clone>(tokens: &[W], n: usize) -> HashMap<Vec<W>, usize> {
    let mut map = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *map.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    map
}

impl<W: Eq + Hash + Clone> NGramCounts<W> {
    pub fn new(hyp: &[W], reference: &[W]) -> Self {
        let hypothesis: Vec<_> = (1..=MAX_ORDER).map(|n| ngrams(hyp, n)).collect();
        let reference: Vec<_> = (1..=MAX_ORDER).map(|n| ngrams(reference, n)).collect();
        let clipped = hypothesis
            .iter()
            .zip(&reference)
            .map(|(h, r)| {
                h.iter()
                    .filter_map(|(g, &c)| r.get(g).map(|&rc| (g.clone(), c.min(rc))))
                    .collect()
            })
            .collect();
        Self {
            hypothesis,
            reference,
            clipped,
        }
    }
}

/// Sufficient statistics for corpus BLEU; they add across sentences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

impl BleuStats {
    pub fn sentence<W: Eq + Hash + Clone>(hyp: &[W], reference: &[W]) -> Self {
        let counts = NGramCounts::new(hyp, reference);
        let mut s = Self {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Self::default()
        };
        for n in 0..MAX_ORDER {
            s.matches[n] = counts.clipped[n].values().sum();
            s.totals[n] = counts.hypothesis[n].values().sum();
        }
        s
    }

    /// Unsmoothed BLEU on a 0–100 scale.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches.contains(&0) {
            return 0.0;
        }
        let log_precision: f64 = (0..MAX_ORDER)
            .map(|n| (self.matches[n] as f64 / self.totals[n] as f64).ln())
            .sum::<f64>()
            / MAX_ORDER as f64;
        100.0 * self.brevity_penalty() * log_precision.exp()
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len >= self.ref_len {
            1.0
        } else if self.hyp_len == 0 {
            0.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }
}

pub(crate) fn check_aligned(hyps: usize, refs: usize) -> Result<()> {
    if hyps != refs {
        return Err(Error::Input(format!("{hyps} hypotheses but {refs} references")));
    }
    Ok(())
}

/// Corpus-level BLEU with clipped 1–4-gram precisions and brevity
/// penalty, on a 0–100 scale.
pub fn bleu4<W: Eq + Hash + Clone>(hyps: &[Vec<W>], refs: &[Vec<W>]) -> Result<f64> {
    Ok(corpus_stats(hyps, refs)?.score())
}

pub fn corpus_stats<W: Eq + Hash + Clone>(hyps: &[Vec<W>], refs: &[Vec<W>]) -> Result<BleuStats> {
    check_aligned(hyps.len(), refs.len())?;
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total += BleuStats::sentence(h, r);
    }
    Ok(total)
}
