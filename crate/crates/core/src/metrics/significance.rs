use std::ops::AddAssign;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::bleu::{check_aligned, BleuStats};
use super::chrf::{ChrfStats, DEFAULT_BETA, DEFAULT_ORDER};
use super::ter::TerStats;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Bleu,
    Chrf,
    Ter,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "bleu" | "bleu4" => Ok(Metric::Bleu),
            "chrf" | "chrf3" => Ok(Metric::Chrf),
            "ter" => Ok(Metric::Ter),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Bleu => "bleu",
            Metric::Chrf => "chrf",
            Metric::Ter => "ter",
        })
    }
}

/// Per-sentence sufficient statistics of any supported metric.
#[derive(Clone, Debug, PartialEq)]
pub enum SentenceStats {
    Bleu(BleuStats),
    Chrf(ChrfStats),
    Ter(TerStats),
}

impl SentenceStats {
    /// BLEU and TER split on whitespace; chrF sees the raw line.
    pub fn compute(metric: Metric, hyp: &str, reference: &str) -> Self {
        let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        match metric {
            Metric::Bleu => SentenceStats::Bleu(BleuStats::sentence(&words(hyp), &words(reference))),
            Metric::Chrf => SentenceStats::Chrf(ChrfStats::sentence(hyp, reference, DEFAULT_ORDER)),
            Metric::Ter => SentenceStats::Ter(TerStats::sentence(&words(hyp), &words(reference))),
        }
    }

    fn zero(metric: Metric) -> Self {
        match metric {
            Metric::Bleu => SentenceStats::Bleu(BleuStats::default()),
            Metric::Chrf => SentenceStats::Chrf(ChrfStats::default()),
            Metric::Ter => SentenceStats::Ter(TerStats::default()),
        }
    }

    pub fn score(&self) -> f64 {
        match self {
            SentenceStats::Bleu(s) => s.score(),
            SentenceStats::Chrf(s) => s.score(DEFAULT_BETA).f_score,
            SentenceStats::Ter(s) => s.score(),
        }
    }
}

impl AddAssign<&SentenceStats> for SentenceStats {
    fn add_assign(&mut self, o: &SentenceStats) {
        match (self, o) {
            (SentenceStats::Bleu(a), SentenceStats::Bleu(b)) => *a += *b,
            (SentenceStats::Chrf(a), SentenceStats::Chrf(b)) => *a += b.clone(),
            (SentenceStats::Ter(a), SentenceStats::Ter(b)) => *a += *b,
            _ => panic!("mixed metric statistics"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignificanceResult {
    pub metric: Metric,
    pub score_a: f64,
    pub score_b: f64,
    pub observed_delta: f64,
    pub p_value: f64,
    pub trials: usize,
}

fn sentence_stats(metric: Metric, sys: &[String], refs: &[String]) -> Vec<SentenceStats> {
    sys.iter().zip(refs).map(|(h, r)| SentenceStats::compute(metric, h, r)).collect()
}

fn corpus_delta(metric: Metric, a: &[SentenceStats], b: &[SentenceStats], swap: impl Fn(usize) -> bool) -> f64 {
    let mut ta = SentenceStats::zero(metric);
    let mut tb = SentenceStats::zero(metric);
    for i in 0..a.len() {
        let (x, y) = if swap(i) { (&b[i], &a[i]) } else { (&a[i], &b[i]) };
        ta += x;
        tb += y;
    }
    ta.score() - tb.score()
}

struct Prepared {
    a: Vec<SentenceStats>,
    b: Vec<SentenceStats>,
    observed: f64,
    score_a: f64,
    score_b: f64,
}

fn prepare(metric: Metric, a: &[String], b: &[String], refs: &[String]) -> Result<Prepared> {
    check_aligned(a.len(), refs.len())?;
    check_aligned(b.len(), refs.len())?;
    let a = sentence_stats(metric, a, refs);
    let b = sentence_stats(metric, b, refs);
    let total = |s: &[SentenceStats]| {
        let mut t = SentenceStats::zero(metric);
        s.iter().for_each(|x| t += x);
        t.score()
    };
    let (score_a, score_b) = (total(&a), total(&b));
    Ok(Prepared {
        observed: score_a - score_b,
        a,
        b,
        score_a,
        score_b,
    })
}

/// Approximate randomization: each trial swaps every sentence pair
/// between the systems with probability 1/2 and recomputes the corpus
/// metrics from summed statistics. `p = (c + 1)/(trials + 1)` where `c`
/// counts trials with `|Δ| ≥ |observed Δ|`.
pub fn approx_randomization(
    metric: Metric,
    system_a: &[String],
    system_b: &[String],
    refs: &[String],
    trials: usize,
    seed: u64,
) -> Result<SignificanceResult> {
    if trials == 0 {
        return Err(Error::Input("at least one trial is required".into()));
    }
    let p = prepare(metric, system_a, system_b, refs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = p.observed.abs();
    let mut count = 0usize;
    let mut swaps = vec![false; p.a.len()];
    for _ in 0..trials {
        swaps.iter_mut().for_each(|s| *s = rng.random_bool(0.5));
        if corpus_delta(metric, &p.a, &p.b, |i| swaps[i]).abs() >= target {
            count += 1;
        }
    }
    Ok(SignificanceResult {
        metric,
        score_a: p.score_a,
        score_b: p.score_b,
        observed_delta: p.observed,
        p_value: (count + 1) as f64 / (trials + 1) as f64,
        trials,
    })
}

/// Exact permutation p-value over all `2^n` swap patterns (small `n`
/// only): the fraction of patterns with `|Δ| ≥ |observed Δ|`.
pub fn exact_randomization(metric: Metric, system_a: &[String], system_b: &[String], refs: &[String]) -> Result<f64> {
    let p = prepare(metric, system_a, system_b, refs)?;
    let n = p.a.len();
    if n > 20 {
        return Err(Error::Input("exact enumeration is limited to 20 sentences".into()));
    }
    let target = p.observed.abs();
    let patterns = 1usize << n;
    let count = (0..patterns)
        .filter(|&mask| corpus_delta(metric, &p.a, &p.b, |i| mask >> i & 1 == 1).abs() >= target)
        .count();
    Ok(count as f64 / patterns as f64)
}
