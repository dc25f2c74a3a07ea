//! Exhaustive reference decoder for tiny instances.
//!
//! Enumerates every information word and, per read, every channel event
//! sequence of the truncated IDS process (at most `i_max` consecutive
//! insertions per queued symbol), accumulating exact probabilities by
//! total-probability summation. Deliberately independent of the lattice
//! and forward/backward machinery it is used to check; feasible only for
//! tiny codes and `M <= 2`.

use crate::alphabet::Symbol;
use crate::app::{AppMatrix, PriorMatrix};
use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::inner::{apply_offset, InnerCode, OffsetSequence};

/// Hard cap on `2^(k * N_o)`, the number of enumerated words.
const MAX_WORDS: u64 = 1 << 16;

/// Probability that transmitting `x` through the truncated IDS channel
/// yields exactly `y`, by direct recursion over event sequences.
pub fn sequence_likelihood(
    x: &[Symbol],
    y: &[Symbol],
    params: &ChannelParams,
    i_max: usize,
) -> f64 {
    fn rec(
        x: &[Symbol],
        y: &[Symbol],
        i: usize,
        j: usize,
        run: usize,
        params: &ChannelParams,
        i_max: usize,
    ) -> f64 {
        let remaining_out = y.len() - j;
        let remaining_in = x.len() - i;
        // cannot emit more than (i_max + 1) symbols per remaining input
        if remaining_out > remaining_in * (i_max + 1) {
            return 0.0;
        }
        if i == x.len() {
            return if j == y.len() { 1.0 } else { 0.0 };
        }
        let mut total = 0.0;
        if run < i_max && j < y.len() {
            total += params.p_i / params.q as f64
                * rec(x, y, i, j + 1, run + 1, params, i_max);
        }
        total += params.p_d * rec(x, y, i + 1, j, 0, params, i_max);
        if j < y.len() {
            total += params.p_t()
                * params.sub_prob(x[i], y[j])
                * rec(x, y, i + 1, j + 1, 0, params, i_max);
        }
        total
    }
    rec(x, y, 0, 0, 0, params, i_max)
}

/// Output of the exhaustive decoder.
#[derive(Clone, Debug)]
pub struct BruteForceOutput {
    /// Exact symbolwise posteriors `p(w_i | y_1, ..., y_M)`.
    pub app: AppMatrix,
    /// `ln p(y_1, ..., y_M)` under the truncated channel law.
    pub log_evidence: f64,
    /// Posterior of each full information word, indexed by the radix-`2^k`
    /// value of the word (first symbol most significant).
    pub word_posteriors: Vec<f64>,
}

/// Exact APPs for `n_outer` information symbols given `M` reads, by
/// enumerating all words and all event sequences.
pub fn brute_force_app(
    ys: &[Vec<Symbol>],
    code: &InnerCode,
    offset: &OffsetSequence,
    params: &ChannelParams,
    i_max: usize,
    prior: &PriorMatrix,
) -> Result<BruteForceOutput> {
    if ys.is_empty() {
        return Err(Error::InvalidInput("need at least one read".into()));
    }
    let k = code.k();
    let n_inputs = 1usize << k;
    let n_outer = prior.rows();
    if prior.cols() != n_inputs {
        return Err(Error::LengthMismatch {
            context: "prior columns",
            expected: n_inputs,
            actual: prior.cols(),
        });
    }
    let words = (n_inputs as u64).checked_pow(n_outer as u32).filter(|&w| w <= MAX_WORDS);
    let Some(words) = words else {
        return Err(Error::InstanceTooLarge(format!(
            "{n_inputs}^{n_outer} information words"
        )));
    };

    let mut word_joint = Vec::with_capacity(words as usize);
    let mut evidence = 0.0;
    for widx in 0..words {
        let w = word_from_index(widx, n_outer, n_inputs);
        let mut p = 1.0;
        for (i, &wi) in w.iter().enumerate() {
            p *= prior.row(i)[wi as usize];
        }
        if p > 0.0 {
            let x = apply_offset(&code.encode(&w)?, offset)?;
            for y in ys {
                p *= sequence_likelihood(&x, y, params, i_max);
                if p == 0.0 {
                    break;
                }
            }
        }
        evidence += p;
        word_joint.push(p);
    }
    if evidence <= 0.0 {
        return Err(Error::NoSurvivingPath { step: 0 });
    }

    let mut app = AppMatrix::zeros(n_outer, n_inputs);
    for (widx, &p) in word_joint.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let w = word_from_index(widx as u64, n_outer, n_inputs);
        for (i, &wi) in w.iter().enumerate() {
            app.row_mut(i)[wi as usize] += p;
        }
    }
    app.normalize_rows()?;
    let word_posteriors = word_joint.iter().map(|&p| p / evidence).collect();
    Ok(BruteForceOutput { app, log_evidence: evidence.ln(), word_posteriors })
}

/// Decodes a word index into symbols, first symbol most significant.
pub fn word_from_index(mut idx: u64, n_outer: usize, n_inputs: usize) -> Vec<u8> {
    let mut w = vec![0u8; n_outer];
    for slot in w.iter_mut().rev() {
        *slot = (idx % n_inputs as u64) as u8;
        idx /= n_inputs as u64;
    }
    w
}
