//! Greedy and beam-search decoding with length-normalised scores.

use crate::data::vocab::EOS;
use crate::decoder::DecoderState;
use crate::error::{Error, Result};
use crate::model::{Model, SentenceMemory, StepOutcome};
use crate::tensor::{Real, Tensor};

/// A finished translation. `tokens` excludes the end-of-sentence marker;
/// `score` is `log_prob` divided by the number of emitted tokens
/// (including that marker when it was produced).
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub score: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn new(tokens: Vec<usize>, log_prob: f64, finished: bool) -> Self {
        let emitted = tokens.len() + usize::from(finished);
        Self {
            score: log_prob / emitted.max(1) as f64,
            tokens,
            log_prob,
            finished,
        }
    }
}

fn check_args(src: &[usize], beam: usize, max_len: usize) -> Result<()> {
    if src.is_empty() {
        return Err(Error::Input("cannot translate an empty source sentence".into()));
    }
    if beam == 0 || max_len == 0 {
        return Err(Error::Input("beam and max_len must be at least 1".into()));
    }
    Ok(())
}

fn log_probs<T: Real>(dist: &Tensor<T>) -> Vec<f64> {
    dist.data().iter().map(|p| p.as_f64().ln()).collect()
}

/// Step-by-step argmax decoding.
pub fn greedy_decode<T: Real>(
    model: &Model<T>,
    src: &[usize],
    image: Option<&Tensor<T>>,
    max_len: usize,
) -> Result<Hypothesis> {
    check_args(src, 1, max_len)?;
    let memory = model.prepare(src, image)?;
    greedy_from(model, &memory, max_len)
}

fn greedy_from<T: Real>(model: &Model<T>, memory: &SentenceMemory<T>, max_len: usize) -> Result<Hypothesis> {
    Ok(greedy_trace(model, memory, max_len)?.0)
}

/// Greedy decoding from a prepared memory, also returning the
/// introspection record of every step taken.
pub fn greedy_trace<T: Real>(
    model: &Model<T>,
    memory: &SentenceMemory<T>,
    max_len: usize,
) -> Result<(Hypothesis, Vec<StepOutcome<T>>)> {
    let mut state = model.initial_state(memory);
    let mut tokens = Vec::new();
    let mut trace = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let out = model.decode_step(memory, &state)?;
        let best = out.distribution.argmax();
        log_prob += out.distribution.data()[best].as_f64().ln();
        state = out.state.clone();
        trace.push(out);
        if best == EOS {
            return Ok((Hypothesis::new(tokens, log_prob, true), trace));
        }
        tokens.push(best);
        state.prev_token = best;
    }
    Ok((Hypothesis::new(tokens, log_prob, false), trace))
}

struct Partial<T> {
    tokens: Vec<usize>,
    log_prob: f64,
    state: DecoderState<T>,
}

/// Beam search maximising the length-normalised log-probability. The
/// greedy hypothesis is always a candidate, so widening the beam never
/// lowers the returned score and `beam = 1` is exactly greedy decoding.
pub fn beam_search<T: Real>(
    model: &Model<T>,
    src: &[usize],
    image: Option<&Tensor<T>>,
    beam: usize,
    max_len: usize,
) -> Result<Hypothesis> {
    check_args(src, beam, max_len)?;
    let memory = model.prepare(src, image)?;
    let greedy = greedy_from(model, &memory, max_len)?;
    if beam == 1 {
        return Ok(greedy);
    }

    let mut alive = vec![Partial {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: model.initial_state(&memory),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        let mut next_states = Vec::with_capacity(alive.len());
        for (h, partial) in alive.iter().enumerate() {
            let out = model.decode_step(&memory, &partial.state)?;
            let lp = log_probs(&out.distribution);
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
            for &tok in order.iter().take(beam) {
                candidates.push((partial.log_prob + lp[tok], h, tok));
            }
            next_states.push(out.state);
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut next = Vec::with_capacity(beam);
        for (log_prob, h, tok) in candidates.into_iter().take(beam) {
            if tok == EOS {
                finished.push(Hypothesis::new(alive[h].tokens.clone(), log_prob, true));
            } else {
                let mut tokens = alive[h].tokens.clone();
                tokens.push(tok);
                let mut state = next_states[h].clone();
                state.prev_token = tok;
                next.push(Partial { tokens, log_prob, state });
            }
        }
        alive = next;
        if alive.is_empty() || finished.len() >= beam {
            alive.clear();
            break;
        }
    }
    // only hypotheses cut off by `max_len` compete unfinished
    finished.extend(alive.into_iter().map(|p| Hypothesis::new(p.tokens, p.log_prob, false)));
    finished.push(greedy);

    let mut best = finished.swap_remove(0);
    for h in finished {
        if h.score > best.score {
            best = h;
        }
    }
    Ok(best)
}
