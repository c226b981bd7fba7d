use std::collections::HashMap;
use std::ops::AddAssign;

use super::bleu::check_aligned;
use crate::error::Result;

pub const DEFAULT_BETA: f64 = 3.0;
pub const DEFAULT_ORDER: usize = 6;

/// Character n-gram statistics for orders `1..=max_n`; additive across
/// sentences.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChrfStats {
    pub matches: Vec<usize>,
    pub hyp_totals: Vec<usize>,
    pub ref_totals: Vec<usize>,
}

impl AddAssign for ChrfStats {
    fn add_assign(&mut self, o: Self) {
        let n = self.matches.len().max(o.matches.len());
        for v in [&mut self.matches, &mut self.hyp_totals, &mut self.ref_totals] {
            v.resize(n, 0);
        }
        for i in 0..o.matches.len() {
            self.matches[i] += o.matches[i];
            self.hyp_totals[i] += o.hyp_totals[i];
            self.ref_totals[i] += o.ref_totals[i];
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChrfScore {
    pub f_score: f64,
    pub precision: f64,
    pub recall: f64,
}

fn char_ngrams(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut map = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *map.entry(w).or_insert(0) += 1;
        }
    }
    map
}

impl ChrfStats {
    /// Whitespace is removed before n-grams are extracted.
    pub fn sentence(hyp: &str, reference: &str, max_n: usize) -> Self {
        let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
        let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
        let mut s = Self {
            matches: vec![0; max_n],
            hyp_totals: vec![0; max_n],
            ref_totals: vec![0; max_n],
        };
        for n in 1..=max_n {
            let hg = char_ngrams(&h, n);
            let rg = char_ngrams(&r, n);
            s.hyp_totals[n - 1] = hg.values().sum();
            s.ref_totals[n - 1] = rg.values().sum();
            s.matches[n - 1] = hg.iter().map(|(g, &c)| c.min(rg.get(g).copied().unwrap_or(0))).sum();
        }
        s
    }

    /// Precision and recall are averaged over the orders whose
    /// denominators are nonzero; all values are on a 0–100 scale.
    pub fn score(&self, beta: f64) -> ChrfScore {
        fn average(matches: &[usize], totals: &[usize]) -> f64 {
            let ratios: Vec<f64> = matches
                .iter()
                .zip(totals)
                .filter(|(_, &t)| t > 0)
                .map(|(&m, &t)| m as f64 / t as f64)
                .collect();
            if ratios.is_empty() {
                0.0
            } else {
                ratios.iter().sum::<f64>() / ratios.len() as f64
            }
        }
        let p = average(&self.matches, &self.hyp_totals);
        let r = average(&self.matches, &self.ref_totals);
        let b2 = beta * beta;
        let f = if p + r == 0.0 { 0.0 } else { (1.0 + b2) * p * r / (b2 * p + r) };
        ChrfScore {
            f_score: 100.0 * f,
            precision: 100.0 * p,
            recall: 100.0 * r,
        }
    }
}

pub fn corpus_stats<S: AsRef<str>>(hyps: &[S], refs: &[S], max_n: usize) -> Result<ChrfStats> {
    check_aligned(hyps.len(), refs.len())?;
    let mut total = ChrfStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total += ChrfStats::sentence(h.as_ref(), r.as_ref(), max_n);
    }
    Ok(total)
}

/// Corpus chrF_β with character precision and recall.
pub fn chrf<S: AsRef<str>>(hyps: &[S], refs: &[S], beta: f64, max_n: usize) -> Result<ChrfScore> {
    Ok(corpus_stats(hyps, refs, max_n)?.score(beta))
}
