//! Seeded simulator of the state-based insertion/deletion/substitution channel.
//!
//! Transmitted symbols are queued one at a time. While a symbol is queued,
//! a uniformly random symbol is inserted into the output with probability
//! `p_i` (the symbol stays queued); the symbol is deleted with probability
//! `p_d`; otherwise it is transmitted, substituted by a uniformly random
//! different symbol with probability `p_s`. The procedure ends when the
//! last queued symbol leaves the queue, so the received length is random.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alphabet::Symbol;
use crate::error::{Error, Result};
use crate::seeds;

/// Insertion, deletion, and substitution probabilities of the channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub p_i: f64,
    pub p_d: f64,
    pub p_s: f64,
    /// Alphabet size (power of two).
    pub q: usize,
}

impl ChannelParams {
    /// Validates and builds channel parameters. Requires `p_i + p_d < 1`
    /// so the transmission probability `p_t` is positive.
    pub fn new(p_i: f64, p_d: f64, p_s: f64, q: usize) -> Result<Self> {
        let params = Self { p_i, p_d, p_s, q };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        crate::alphabet::symbol_bits(self.q)?;
        for (name, p) in [("p_i", self.p_i), ("p_d", self.p_d), ("p_s", self.p_s)] {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::InvalidInput(format!("{name} = {p} not in [0, 1]")));
            }
        }
        if self.p_i + self.p_d >= 1.0 {
            return Err(Error::InvalidInput(format!(
                "p_i + p_d = {} must be < 1",
                self.p_i + self.p_d
            )));
        }
        Ok(())
    }

    /// Transmission probability `1 - p_i - p_d`.
    #[inline]
    pub fn p_t(&self) -> f64 {
        1.0 - self.p_i - self.p_d
    }

    /// Probability that a transmitted symbol `t` is observed as `y`
    /// (substitution weight).
    #[inline]
    pub fn sub_prob(&self, t: Symbol, y: Symbol) -> f64 {
        if t == y {
            1.0 - self.p_s
        } else {
            self.p_s / (self.q as f64 - 1.0)
        }
    }
}

/// One channel event while a symbol was queued.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelEvent {
    /// A uniformly random symbol was appended; the queued symbol stays.
    Insert(Symbol),
    /// The queued symbol was dropped.
    Delete,
    /// The queued symbol was appended, possibly substituted.
    Transmit(Symbol),
}

/// Output of one channel use, with an optional event log for tests.
#[derive(Clone, Debug)]
pub struct ChannelRealization {
    pub received: Vec<Symbol>,
    pub events: Option<Vec<ChannelEvent>>,
}

impl ChannelRealization {
    /// Final drift `N' - N` of this realization.
    pub fn drift(&self, input_len: usize) -> i64 {
        self.received.len() as i64 - input_len as i64
    }
}

/// Replays an event log against an input sequence, reproducing the received
/// sequence. Used to validate logs in tests.
pub fn replay_events(x: &[Symbol], events: &[ChannelEvent]) -> Result<Vec<Symbol>> {
    let mut out = Vec::new();
    let mut i = 0usize;
    for ev in events {
        match *ev {
            ChannelEvent::Insert(a) => out.push(a),
            ChannelEvent::Delete => i += 1,
            ChannelEvent::Transmit(a) => {
                out.push(a);
                i += 1;
            }
        }
    }
    if i != x.len() {
        return Err(Error::InvalidInput(format!(
            "event log consumed {i} of {} input symbols",
            x.len()
        )));
    }
    Ok(out)
}

fn transmit_impl(
    x: &[Symbol],
    params: &ChannelParams,
    seed: u64,
    log_events: bool,
) -> Result<ChannelRealization> {
    params.validate()?;
    let q = params.q as u32;
    for &s in x {
        if s as u32 >= q {
            return Err(Error::InvalidInput(format!(
                "input symbol {s} out of range for q = {q}"
            )));
        }
    }
    let mut rng = seeds::rng_from_seed(seed);
    let mut received = Vec::with_capacity(x.len() + x.len() / 8 + 4);
    let mut events = log_events.then(Vec::new);
    for &sym in x {
        loop {
            let u: f64 = rng.random();
            if u < params.p_i {
                let a = rng.random_range(0..q) as Symbol;
                received.push(a);
                if let Some(ev) = events.as_mut() {
                    ev.push(ChannelEvent::Insert(a));
                }
                // symbol stays queued
            } else if u < params.p_i + params.p_d {
                if let Some(ev) = events.as_mut() {
                    ev.push(ChannelEvent::Delete);
                }
                break;
            } else {
                let out = if params.p_s > 0.0 && rng.random::<f64>() < params.p_s {
                    // uniform over the q-1 symbols different from sym
                    let a = rng.random_range(0..q - 1) as Symbol;
                    if a >= sym {
                        a + 1
                    } else {
                        a
                    }
                } else {
                    sym
                };
                received.push(out);
                if let Some(ev) = events.as_mut() {
                    ev.push(ChannelEvent::Transmit(out));
                }
                break;
            }
        }
    }
    Ok(ChannelRealization { received, events })
}

/// Transmits `x` once over the IDS channel. Identical `(x, params, seed)`
/// yield identical output.
pub fn transmit(x: &[Symbol], params: &ChannelParams, seed: u64) -> Result<ChannelRealization> {
    transmit_impl(x, params, seed, false)
}

/// Like [`transmit`], additionally recording the event log.
pub fn transmit_logged(
    x: &[Symbol],
    params: &ChannelParams,
    seed: u64,
) -> Result<ChannelRealization> {
    transmit_impl(x, params, seed, true)
}

/// Transmits `x` over `reads` independent channel uses. Per-read sub-seeds
/// are derived deterministically from `(seed, read index)`.
pub fn transmit_multi(
    x: &[Symbol],
    params: &ChannelParams,
    reads: usize,
    seed: u64,
) -> Result<Vec<ChannelRealization>> {
    if reads == 0 {
        return Err(Error::InvalidInput("number of reads must be >= 1".into()));
    }
    (0..reads)
        .map(|j| transmit_impl(x, params, seeds::derive(seed, j as u64), false))
        .collect()
}
