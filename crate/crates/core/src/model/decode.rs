//! Greedy and beam search over any next-token scorer.

use std::collections::HashMap;

use ndarray::Array2;

use super::net::{Dropout, Encoded};
use super::seq2seq::Seq2Seq;
use super::tape::{AttnMask, Tape};
use crate::coref::NormalizedAdjacency;
use crate::error::Result;
use crate::tokenizer::EOS;

/// Next-token log-probabilities given the tokens generated so far
/// (without the leading `<bos>`).
pub trait StepScorer {
    fn log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, excluding `<eos>`.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Log-probability per emitted token, `<eos>` included.
    pub fn score(&self) -> f64 {
        let len = self.tokens.len() + usize::from(self.finished);
        if len == 0 {
            0.0
        } else {
            self.log_prob / len as f64
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Highest-probability token at each step; ties go to the lowest id.
pub fn greedy_search(scorer: &mut dyn StepScorer, max_len: usize) -> Result<Hypothesis> {
    let mut h = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while h.tokens.len() < max_len {
        let lp = scorer.log_probs(&h.tokens)?;
        let tok = argmax(&lp);
        h.log_prob += lp[tok];
        if tok as u32 == EOS {
            h.finished = true;
            break;
        }
        h.tokens.push(tok as u32);
    }
    Ok(h)
}

/// Beam search with candidates ranked by cumulative log-probability and the
/// final choice by [`Hypothesis::score`]. The greedy path is always among the
/// final candidates, so the result never scores below it.
pub fn beam_search(scorer: &mut dyn StepScorer, beam: usize, max_len: usize) -> Result<Hypothesis> {
    let beam = beam.max(1);
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (hi, h) in live.iter().enumerate() {
            let lp = scorer.log_probs(&h.tokens)?;
            cands.extend(lp.iter().enumerate().map(|(tok, &l)| (h.log_prob + l, hi, tok as u32)));
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(beam);
        for &(lp, hi, tok) in cands.iter().take(beam) {
            let mut tokens = live[hi].tokens.clone();
            if tok == EOS {
                finished.push(Hypothesis {
                    tokens,
                    log_prob: lp,
                    finished: true,
                });
            } else {
                tokens.push(tok);
                next.push(Hypothesis {
                    tokens,
                    log_prob: lp,
                    finished: false,
                });
            }
        }
        live = next;
        if live.is_empty() || finished.len() >= beam {
            break;
        }
    }
    let mut pool = if finished.is_empty() { live } else { finished };
    if beam > 1 {
        pool.push(greedy_search(scorer, max_len)?);
    }
    let mut best = pool.swap_remove(0);
    for h in pool {
        let better = h.score() > best.score() || (h.score() == best.score() && h.finished && !best.finished);
        if better {
            best = h;
        }
    }
    Ok(best)
}

/// Scores prefixes with a [`Seq2Seq`] model, encoding the input once.
pub struct ModelScorer<'a> {
    model: &'a Seq2Seq,
    memory: Array2<f64>,
    mask: AttnMask,
    cache: HashMap<Vec<u32>, Vec<f64>>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Seq2Seq, input: &[u32], adj: Option<&NormalizedAdjacency>) -> Result<Self> {
        let mut t = Tape::new();
        let enc = model.encode(&mut t, input, adj, &mut Dropout::off())?;
        Ok(ModelScorer {
            model,
            memory: t.value(enc.hidden).clone(),
            mask: enc.mask,
            cache: HashMap::new(),
        })
    }
}

impl StepScorer for ModelScorer<'_> {
    fn log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>> {
        if let Some(lp) = self.cache.get(prefix) {
            return Ok(lp.clone());
        }
        let mut t = Tape::new();
        let memory = Encoded {
            hidden: t.constant(self.memory.clone()),
            mask: self.mask.clone(),
        };
        let mut ids = Vec::with_capacity(prefix.len() + 1);
        ids.push(crate::tokenizer::BOS);
        ids.extend_from_slice(prefix);
        let logits = self.model.decode(&mut t, &memory, &ids, &mut Dropout::off())?;
        let row = t.value(logits).row(ids.len() - 1).to_owned();
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let lp: Vec<f64> = row.iter().map(|x| x - lse).collect();
        self.cache.insert(prefix.to_vec(), lp.clone());
        Ok(lp)
    }
}

/// Greedy summary ids (without `<eos>`).
pub fn greedy_decode(model: &Seq2Seq, input: &[u32], adj: Option<&NormalizedAdjacency>, max_len: usize) -> Result<Vec<u32>> {
    let mut s = ModelScorer::new(model, input, adj)?;
    Ok(greedy_search(&mut s, max_len)?.tokens)
}

pub fn beam_decode(
    model: &Seq2Seq,
    input: &[u32],
    adj: Option<&NormalizedAdjacency>,
    beam: usize,
    max_len: usize,
) -> Result<Vec<u32>> {
    let mut s = ModelScorer::new(model, input, adj)?;
    Ok(beam_search(&mut s, beam, max_len)?.tokens)
}
