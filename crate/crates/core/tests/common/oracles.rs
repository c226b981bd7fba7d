//! Brute-force reference implementations used as test oracles.

use std::collections::BTreeMap;

fn brute_merge(symbols: &[String], a: &str, b: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
            out.push(format!("{a}{b}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// BPE merge table that recounts every pair from scratch at each step.
pub fn brute_force_merges(corpus: &[Vec<String>], num_merges: usize, min_frequency: usize) -> Vec<(String, String)> {
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for s in corpus {
        for w in s {
            *freq.entry(w.clone()).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<String>, usize)> = freq
        .into_iter()
        .map(|(w, c)| {
            let mut sym: Vec<String> = w.chars().map(|c| c.to_string()).collect();
            let last = sym.len() - 1;
            sym[last].push_str("</w>");
            (sym, c)
        })
        .collect();
    let mut merges = Vec::new();
    for _ in 0..num_merges {
        let mut counts: Vec<((String, String), usize)> = Vec::new();
        for (sym, c) in &words {
            for w in sym.windows(2) {
                let key = (w[0].clone(), w[1].clone());
                match counts.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, n)) => *n += c,
                    None => counts.push((key, *c)),
                }
            }
        }
        let Some(max) = counts.iter().map(|(_, n)| *n).max() else { break };
        if max < min_frequency {
            break;
        }
        let best = counts.iter().filter(|(_, n)| *n == max).map(|(k, _)| k.clone()).min().unwrap();
        for (sym, _) in words.iter_mut() {
            *sym = brute_merge(sym, &best.0, &best.1);
        }
        merges.push(best);
    }
    merges
}

pub fn plain_edit_distance<W: PartialEq>(a: &[W], b: &[W]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            cur[j] = (prev[j - 1] + usize::from(a[i - 1] != b[j - 1])).min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Every sequence of up to `depth` block moves (any block, any target
/// position); minimum of shifts plus remaining edit distance.
pub fn exhaustive_ter_edits<W: PartialEq + Clone>(hyp: &[W], reference: &[W], depth: usize) -> usize {
    let mut best = plain_edit_distance(hyp, reference);
    if depth == 0 {
        return best;
    }
    let n = hyp.len();
    for start in 0..n {
        for len in 1..=n - start {
            let block = &hyp[start..start + len];
            let rest: Vec<W> = hyp[..start].iter().chain(&hyp[start + len..]).cloned().collect();
            for pos in 0..=rest.len() {
                if pos == start {
                    continue;
                }
                let mut moved = rest[..pos].to_vec();
                moved.extend_from_slice(block);
                moved.extend_from_slice(&rest[pos..]);
                best = best.min(1 + exhaustive_ter_edits(&moved, reference, depth - 1));
            }
        }
    }
    best
}
