use std::ops::AddAssign;

use super::bleu::check_aligned;
use crate::error::Result;

/// Longest block considered for a single shift.
pub const MAX_SHIFT_LEN: usize = 10;

/// One step of turning a hypothesis into its reference.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EditOp<W> {
    /// Moves `len` hypothesis words starting at `start` so that they begin
    /// at `dest` in the original indexing (see [`shift_words`]).
    Shift { start: usize, len: usize, dest: usize },
    Match,
    Substitute(W),
    /// Inserts a reference word missing from the hypothesis.
    Insert(W),
    /// Drops a hypothesis word.
    Delete,
}

/// All shifts first, then word-level edits over the shifted hypothesis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EditScript<W> {
    pub ops: Vec<EditOp<W>>,
}

impl<W: Clone> EditScript<W> {
    pub fn shifts(&self) -> usize {
        self.ops.iter().filter(|o| matches!(o, EditOp::Shift { .. })).count()
    }

    /// Number of shifts, substitutions, insertions and deletions.
    pub fn cost(&self) -> usize {
        self.ops.iter().filter(|o| !matches!(o, EditOp::Match)).count()
    }

    /// Replays the script on `hyp`; a valid script yields the reference.
    pub fn apply(&self, hyp: &[W]) -> Vec<W> {
        let mut words = hyp.to_vec();
        let mut out = Vec::new();
        let mut pos = 0;
        for op in &self.ops {
            match op {
                EditOp::Shift { start, len, dest } => words = shift_words(&words, *start, *len, *dest),
                EditOp::Match => {
                    out.push(words[pos].clone());
                    pos += 1;
                }
                EditOp::Substitute(w) => {
                    out.push(w.clone());
                    pos += 1;
                }
                EditOp::Insert(w) => out.push(w.clone()),
                EditOp::Delete => pos += 1,
            }
        }
        out
    }
}

/// Moves `words[start..start+len]` so that it is placed before what was
/// originally `words[dest]` (`dest` outside the block).
pub fn shift_words<W: Clone>(words: &[W], start: usize, len: usize, dest: usize) -> Vec<W> {
    let block = &words[start..start + len];
    let mut out = Vec::with_capacity(words.len());
    if dest <= start {
        out.extend_from_slice(&words[..dest]);
        out.extend_from_slice(block);
        out.extend_from_slice(&words[dest..start]);
        out.extend_from_slice(&words[start + len..]);
    } else {
        out.extend_from_slice(&words[..start]);
        out.extend_from_slice(&words[start + len..dest]);
        out.extend_from_slice(block);
        out.extend_from_slice(&words[dest..]);
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Step {
    Match,
    Sub,
    /// hypothesis word without counterpart
    Del,
    /// reference word without counterpart
    Ins,
}

/// Word-level Levenshtein distance with a backtrace.
fn align<W: PartialEq>(hyp: &[W], reference: &[W]) -> (usize, Vec<Step>) {
    let (n, m) = (hyp.len(), reference.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for (j, cell) in d.iter_mut().take(w).enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            d[i * w + j] = diag.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }
    let mut steps = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = hyp[i - 1] == reference[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(!same) {
                steps.push(if same { Step::Match } else { Step::Sub });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            steps.push(Step::Del);
            i -= 1;
        } else {
            steps.push(Step::Ins);
            j -= 1;
        }
    }
    steps.reverse();
    (d[n * w + m], steps)
}

pub fn edit_distance<W: PartialEq>(hyp: &[W], reference: &[W]) -> usize {
    align(hyp, reference).0
}

struct Alignment {
    hyp_err: Vec<bool>,
    ref_err: Vec<bool>,
    /// Hypothesis position aligned to each reference position (`-1` before
    /// the first hypothesis word).
    ref_to_hyp: Vec<isize>,
}

fn alignment(steps: &[Step], n: usize, m: usize) -> Alignment {
    let mut a = Alignment {
        hyp_err: vec![false; n],
        ref_err: vec![false; m],
        ref_to_hyp: vec![-1; m],
    };
    let (mut h, mut r) = (-1isize, -1isize);
    for s in steps {
        match s {
            Step::Match | Step::Sub => {
                h += 1;
                r += 1;
                a.ref_to_hyp[r as usize] = h;
                if *s == Step::Sub {
                    a.hyp_err[h as usize] = true;
                    a.ref_err[r as usize] = true;
                }
            }
            Step::Del => {
                h += 1;
                a.hyp_err[h as usize] = true;
            }
            Step::Ins => {
                r += 1;
                a.ref_to_hyp[r as usize] = h;
                a.ref_err[r as usize] = true;
            }
        }
    }
    a
}

/// Best single shift: largest reduction in edit distance, then leftmost
/// start, then shortest block, then leftmost destination.
fn best_shift<W: PartialEq + Clone>(hyp: &[W], reference: &[W]) -> Option<(usize, usize, usize, Vec<W>)> {
    let (cost, steps) = align(hyp, reference);
    let al = alignment(&steps, hyp.len(), reference.len());
    let mut best: Option<(usize, usize, usize, usize, Vec<W>)> = None;
    for start in 0..hyp.len() {
        for rstart in 0..reference.len() {
            let mut len = 0;
            while len < MAX_SHIFT_LEN
                && start + len < hyp.len()
                && rstart + len < reference.len()
                && hyp[start + len] == reference[rstart + len]
            {
                len += 1;
                if !al.hyp_err[start..start + len].iter().any(|&e| e)
                    || !al.ref_err[rstart..rstart + len].iter().any(|&e| e)
                {
                    continue;
                }
                let anchor = al.ref_to_hyp[rstart];
                if anchor >= start as isize && anchor < (start + len) as isize {
                    continue;
                }
                // destinations: just after the hypothesis word aligned to
                // each reference position in rstart−1 ..= rstart+len−1
                let mut last = None;
                for offset in -1..len as isize {
                    let r = rstart as isize + offset;
                    let dest = if r < 0 { 0 } else { (al.ref_to_hyp[r as usize] + 1) as usize };
                    if last == Some(dest) || (dest > start && dest < start + len) {
                        continue;
                    }
                    last = Some(dest);
                    if dest == start || dest == start + len {
                        continue;
                    }
                    let shifted = shift_words(hyp, start, len, dest);
                    let new_cost = edit_distance(&shifted, reference);
                    if new_cost >= cost {
                        continue;
                    }
                    let gain = cost - new_cost;
                    let better = match &best {
                        None => true,
                        Some((g, s, l, d, _)) => (gain, std::cmp::Reverse((start, len, dest))) > (*g, std::cmp::Reverse((*s, *l, *d))),
                    };
                    if better {
                        best = Some((gain, start, len, dest, shifted));
                    }
                }
            }
        }
    }
    best.map(|(_, s, l, d, w)| (s, l, d, w))
}

/// Greedy shift search followed by word-level edit distance.
pub fn ter_script<W: PartialEq + Clone>(hyp: &[W], reference: &[W]) -> EditScript<W> {
    let mut words = hyp.to_vec();
    let mut ops = Vec::new();
    while let Some((start, len, dest, shifted)) = best_shift(&words, reference) {
        ops.push(EditOp::Shift { start, len, dest });
        words = shifted;
    }
    let (_, steps) = align(&words, reference);
    let mut r = 0;
    for s in steps {
        ops.push(match s {
            Step::Match => EditOp::Match,
            Step::Sub => EditOp::Substitute(reference[r].clone()),
            Step::Del => EditOp::Delete,
            Step::Ins => EditOp::Insert(reference[r].clone()),
        });
        if s != Step::Del {
            r += 1;
        }
    }
    EditScript { ops }
}

/// Edit count and reference length; additive across sentences.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TerStats {
    pub edits: f64,
    pub ref_len: f64,
}

impl AddAssign for TerStats {
    fn add_assign(&mut self, o: Self) {
        self.edits += o.edits;
        self.ref_len += o.ref_len;
    }
}

impl TerStats {
    pub fn sentence<W: PartialEq + Clone>(hyp: &[W], reference: &[W]) -> Self {
        Self {
            edits: ter_script(hyp, reference).cost() as f64,
            ref_len: reference.len() as f64,
        }
    }

    /// Edits per reference word; an empty reference scores 1 if any edit
    /// was needed and 0 otherwise.
    pub fn score(&self) -> f64 {
        if self.ref_len > 0.0 {
            self.edits / self.ref_len
        } else if self.edits > 0.0 {
            1.0
        } else {
            0.0
        }
    }
}

pub fn corpus_stats<W: PartialEq + Clone>(hyps: &[Vec<W>], refs: &[Vec<W>]) -> Result<TerStats> {
    check_aligned(hyps.len(), refs.len())?;
    let mut total = TerStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total += TerStats::sentence(h, r);
    }
    Ok(total)
}

/// Corpus TER: total edits (shifts included) over total reference length.
pub fn ter<W: PartialEq + Clone>(hyps: &[Vec<W>], refs: &[Vec<W>]) -> Result<f64> {
    Ok(corpus_stats(hyps, refs)?.score())
}
