//! Drift-augmented trellis decoding.
//!
//! The inner code and the IDS channel together form a hidden Markov model
//! over joint states `(s, d)`: the encoder memory state `s` and the drift
//! `d`, the number of insertions minus deletions that occurred before the
//! current trellis step's first symbol entered the channel queue. Adding
//! the drift restores the Markov property that the channel's random memory
//! breaks, so exact symbolwise posteriors follow from forward/backward
//! recursions. For multiple reads the joint decoder runs on the product
//! drift space `(s, d_1, ..., d_M)`.
//!
//! All recursions run in the probability domain with per-step
//! normalization; the scale factors accumulate into the log-evidence.

use std::collections::HashMap;
use std::io::Write;

use crate::alphabet::Symbol;
use crate::app::{AppMatrix, PriorMatrix};
use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::inner::{InnerCode, OffsetSequence};

/// Default ceiling on `2^(mk) * Delta^M`, the per-step joint state count.
pub const DEFAULT_JOINT_STATE_CEILING: u128 = 5_000_000;

/// Drift interval and insertion cap used by the decoder.
///
/// `Delta = d_max - d_min + 1` drift states are kept at every trellis
/// position, and at most `i_max` consecutive insertions are allowed per
/// queued symbol, giving `delta = n * (i_max + 1) + 1` admissible drift
/// transitions per step. Event mass beyond the cap is dropped, not
/// renormalized, so the decoder works with a truncated channel law.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DriftBounds {
    pub d_min: i64,
    pub d_max: i64,
    pub i_max: usize,
}

impl DriftBounds {
    pub fn new(d_min: i64, d_max: i64, i_max: usize) -> Result<Self> {
        if d_min > 0 || d_max < 0 {
            return Err(Error::InvalidInput(format!(
                "drift interval [{d_min}, {d_max}] must contain 0"
            )));
        }
        Ok(Self { d_min, d_max, i_max })
    }

    /// Bounds from the final-drift standard deviation: symmetric
    /// `d_max = -d_min = ceil(multiplier * sqrt(N * p_d / (1 - p_d)))`.
    /// When `p_d = 0` but `p_i > 0` the insertion-side analogue is used
    /// with `d_min = 0`.
    pub fn from_params(
        codeword_len: usize,
        params: &ChannelParams,
        multiplier: f64,
        i_max: usize,
    ) -> Self {
        let n = codeword_len as f64;
        if params.p_d > 0.0 {
            let d = (multiplier * (n * params.p_d / (1.0 - params.p_d)).sqrt()).ceil() as i64;
            Self { d_min: -d, d_max: d, i_max }
        } else if params.p_i > 0.0 {
            let d = (multiplier * (n * params.p_i / (1.0 - params.p_i)).sqrt()).ceil() as i64;
            Self { d_min: 0, d_max: d, i_max }
        } else {
            Self { d_min: 0, d_max: 0, i_max }
        }
    }

    /// Number of drift states `Delta`.
    pub fn num_drift_states(&self) -> usize {
        (self.d_max - self.d_min + 1) as usize
    }

    /// Number of admissible drift transitions per trellis step,
    /// `delta = n * (i_max + 1) + 1` for blocks of `n` symbols.
    pub fn num_drift_transitions(&self, n: usize) -> usize {
        n * (self.i_max + 1) + 1
    }

    #[inline]
    fn index_of(&self, d: i64) -> Option<usize> {
        (self.d_min..=self.d_max)
            .contains(&d)
            .then_some((d - self.d_min) as usize)
    }
}

/// Probability that transmitting block `t` through the truncated IDS
/// channel emits exactly `y_seg`, summed over all event sequences with at
/// most `i_max` consecutive insertions per queued symbol.
///
/// Computed with the lattice recursion
/// `F(i, j) = p_d F(i-1, j) + p_t q_s(t_i, y_j) F(i-1, j-1) + (p_i/q) F(i, j-1)`
/// where insertion moves are admitted in rows `0..n-1` (insertions happen
/// while a symbol waits in the queue, before it resolves) and capped at
/// `i_max` consecutive moves per row.
pub fn segment_likelihood(
    t: &[Symbol],
    y_seg: &[Symbol],
    params: &ChannelParams,
    i_max: usize,
) -> Result<f64> {
    params.validate()?;
    let window = t.len() * (i_max + 1);
    if y_seg.len() > window {
        return Err(Error::InvalidInput(format!(
            "segment of {} symbols exceeds n*(i_max+1) = {window}",
            y_seg.len()
        )));
    }
    let mut row = vec![0.0; y_seg.len() + 1];
    lattice_final_row(t, y_seg, params, i_max, &mut row);
    Ok(row[y_seg.len()])
}

/// Fills `out[j] = F(n, j)` for `j = 0..=min(out.len()-1, y_avail.len())`,
/// the probability that block `t` emits exactly the first `j` symbols of
/// `y_avail`. Entries beyond `y_avail.len()` are zero.
fn lattice_final_row(
    t: &[Symbol],
    y_avail: &[Symbol],
    params: &ChannelParams,
    i_max: usize,
    out: &mut [f64],
) {
    let jmax = (out.len() - 1).min(y_avail.len());
    let p_ins = params.p_i / params.q as f64;
    let p_t = params.p_t();
    out.iter_mut().for_each(|v| *v = 0.0);

    // row 0: an insertion run while the first symbol is queued
    let mut prev = vec![0.0; jmax + 1];
    prev[0] = 1.0;
    for j in 1..=jmax.min(i_max) {
        prev[j] = prev[j - 1] * p_ins;
    }
    if t.is_empty() {
        // empty block emits nothing
        out[0] = 1.0;
        return;
    }

    let mut base = vec![0.0; jmax + 1];
    let mut cur = vec![0.0; jmax + 1];
    for (i, &ti) in t.iter().enumerate() {
        for j in 0..=jmax {
            let diag = if j > 0 {
                p_t * params.sub_prob(ti, y_avail[j - 1]) * prev[j - 1]
            } else {
                0.0
            };
            base[j] = params.p_d * prev[j] + diag;
        }
        if i + 1 < t.len() {
            // insertion run while the next symbol is queued
            for j in 0..=jmax {
                let mut acc = 0.0;
                let mut w = 1.0;
                for c in 0..=i_max.min(j) {
                    acc += w * base[j - c];
                    w *= p_ins;
                }
                cur[j] = acc;
            }
            std::mem::swap(&mut prev, &mut cur);
        } else {
            prev.copy_from_slice(&base);
        }
    }
    out[..=jmax].copy_from_slice(&prev[..=jmax]);
}

/// Precomputed inner-code transition structure, frame-independent.
#[derive(Clone, Debug)]
struct InnerTrellis {
    n_states: usize,
    n_inputs: usize,
    n: usize,
    q: usize,
    next_state: Vec<usize>,
    out_block: Vec<Symbol>,
}

impl InnerTrellis {
    fn new(code: &InnerCode) -> Self {
        let n_states = code.num_states();
        let n_inputs = 1usize << code.k();
        let n = code.n();
        let mut next_state = Vec::with_capacity(n_states * n_inputs);
        let mut out_block = Vec::with_capacity(n_states * n_inputs * n);
        for s in 0..n_states {
            for a in 0..n_inputs {
                let (next, block) = code.step(s, a as u8);
                next_state.push(next);
                out_block.extend_from_slice(&block);
            }
        }
        Self { n_states, n_inputs, n, q: code.q(), next_state, out_block }
    }

    #[inline]
    fn block(&self, s: usize, a: usize) -> &[Symbol] {
        let idx = (s * self.n_inputs + a) * self.n;
        &self.out_block[idx..idx + self.n]
    }
}

/// Decoder output: per-symbol posteriors and the log of the received
/// sequence's probability under the truncated channel law.
#[derive(Clone, Debug)]
pub struct BcjrOutput {
    pub app: AppMatrix,
    pub log_evidence: f64,
}

/// Distinct offset-adjusted transmit blocks of one trellis step.
struct StepBlocks {
    /// block index per `(state, input)` pair
    block_of: Vec<usize>,
    blocks: Vec<Vec<Symbol>>,
}

/// Exact symbolwise APP decoder for the inner code over one or more reads.
///
/// Holds the precomputed transition structure, the offset sequence, the
/// channel law, and the drift bounds; decode calls own their workspaces, so
/// one decoder may serve concurrent frames.
#[derive(Clone, Debug)]
pub struct InnerDecoder {
    trellis: InnerTrellis,
    offset: OffsetSequence,
    params: ChannelParams,
    bounds: DriftBounds,
    /// Ceiling on the joint per-step state count `2^(mk) * Delta^M`.
    pub joint_state_ceiling: u128,
    n_outer: usize,
    memory: usize,
}

impl InnerDecoder {
    pub fn new(
        code: &InnerCode,
        offset: OffsetSequence,
        params: ChannelParams,
        bounds: DriftBounds,
    ) -> Result<Self> {
        params.validate()?;
        if offset.q != code.q() {
            return Err(Error::Config(format!(
                "offset alphabet {} != code alphabet {}",
                offset.q,
                code.q()
            )));
        }
        if params.q != code.q() {
            return Err(Error::Config(format!(
                "channel alphabet {} != code alphabet {}",
                params.q,
                code.q()
            )));
        }
        let n = code.n();
        if offset.len() % n != 0 || offset.len() / n <= code.memory() {
            return Err(Error::Config(format!(
                "offset length {} is not (N_o + m) * n for this code",
                offset.len()
            )));
        }
        let n_outer = offset.len() / n - code.memory();
        Ok(Self {
            trellis: InnerTrellis::new(code),
            offset,
            params,
            bounds,
            joint_state_ceiling: DEFAULT_JOINT_STATE_CEILING,
            n_outer,
            memory: code.memory(),
        })
    }

    /// Number of outer-code symbols per frame.
    pub fn n_outer(&self) -> usize {
        self.n_outer
    }

    /// Channel input length `N`.
    pub fn codeword_len(&self) -> usize {
        self.offset.len()
    }

    pub fn bounds(&self) -> &DriftBounds {
        &self.bounds
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    fn total_steps(&self) -> usize {
        self.n_outer + self.memory
    }

    fn check_prior(&self, prior: &PriorMatrix) -> Result<()> {
        if prior.rows() != self.n_outer || prior.cols() != self.trellis.n_inputs {
            return Err(Error::LengthMismatch {
                context: "prior matrix shape",
                expected: self.n_outer * self.trellis.n_inputs,
                actual: prior.rows() * prior.cols(),
            });
        }
        Ok(())
    }

    fn terminal_drift_index(&self, y_len: usize) -> Result<usize> {
        let drift = y_len as i64 - self.codeword_len() as i64;
        self.bounds.index_of(drift).ok_or(Error::UndecodableDrift {
            drift,
            d_min: self.bounds.d_min,
            d_max: self.bounds.d_max,
        })
    }

    /// Offset-adjusted transmit blocks for step `i` (1-based), deduplicated
    /// across `(state, input)` pairs.
    fn step_blocks(&self, i: usize) -> StepBlocks {
        let t = &self.trellis;
        let q = t.q as u16;
        let off = &self.offset.symbols()[(i - 1) * t.n..i * t.n];
        let mut blocks: Vec<Vec<Symbol>> = Vec::new();
        let mut by_key: HashMap<u64, usize> = HashMap::new();
        let mut block_of = Vec::with_capacity(t.n_states * t.n_inputs);
        for s in 0..t.n_states {
            for a in 0..t.n_inputs {
                let block: Vec<Symbol> = t
                    .block(s, a)
                    .iter()
                    .zip(off)
                    .map(|(&v, &r)| ((v as u16 + r as u16) % q) as Symbol)
                    .collect();
                let key = block.iter().fold(0u64, |acc, &s| acc * q as u64 + s as u64);
                let idx = *by_key.entry(key).or_insert_with(|| {
                    blocks.push(block.clone());
                    blocks.len() - 1
                });
                block_of.push(idx);
            }
        }
        StepBlocks { block_of, blocks }
    }

    /// Lattice tables for one read at step `i`: `g[(b * Delta + d) * delta + dd]`
    /// is the probability that block `b`, entering at drift `d_min + d`,
    /// emits the matching window of `y` with drift change `dd - n`.
    fn read_tables(&self, sb: &StepBlocks, y: &[Symbol], i: usize) -> Vec<f64> {
        let n = self.trellis.n;
        let delta = self.bounds.num_drift_states();
        let small_delta = self.bounds.num_drift_transitions(n);
        let window = n * (self.bounds.i_max + 1);
        let mut g = vec![0.0; sb.blocks.len() * delta * small_delta];
        let mut row = vec![0.0; window + 1];
        for (b, block) in sb.blocks.iter().enumerate() {
            for d_idx in 0..delta {
                let d = self.bounds.d_min + d_idx as i64;
                let start = (i as i64 - 1) * n as i64 + d;
                if start < 0 || start > y.len() as i64 {
                    continue;
                }
                let avail = &y[start as usize..];
                lattice_final_row(block, avail, &self.params, self.bounds.i_max, &mut row);
                let base = (b * delta + d_idx) * small_delta;
                for dd_idx in 0..small_delta {
                    // drift change dd_idx - n; emitted length n + change = dd_idx
                    if dd_idx <= avail.len() {
                        g[base + dd_idx] = row[dd_idx];
                    }
                }
            }
        }
        g
    }

    /// Inputs driven at step `i` (1-based): all `2^k` values for
    /// information steps, the zero input during termination.
    #[inline]
    fn inputs_at(&self, i: usize) -> std::ops::Range<usize> {
        if i <= self.n_outer {
            0..self.trellis.n_inputs
        } else {
            0..1
        }
    }

    #[inline]
    fn prior_at<'p>(&self, prior: &'p PriorMatrix, i: usize) -> Option<&'p [f64]> {
        (i <= self.n_outer).then(|| prior.row(i - 1))
    }

    /// Exact posteriors `p(w_i | y)` for a single read.
    pub fn decode_single(&self, y: &[Symbol], prior: &PriorMatrix) -> Result<BcjrOutput> {
        self.decode_single_impl(y, prior, None)
    }

    /// Like [`Self::decode_single`], dumping the normalized alpha/beta
    /// tables as text for debugging.
    pub fn decode_single_dump(
        &self,
        y: &[Symbol],
        prior: &PriorMatrix,
        sink: &mut dyn Write,
    ) -> Result<BcjrOutput> {
        self.decode_single_impl(y, prior, Some(sink))
    }

    fn decode_single_impl(
        &self,
        y: &[Symbol],
        prior: &PriorMatrix,
        mut dump: Option<&mut dyn Write>,
    ) -> Result<BcjrOutput> {
        self.check_prior(prior)?;
        let terminal_d = self.terminal_drift_index(y.len())?;
        let t = &self.trellis;
        let delta = self.bounds.num_drift_states();
        let small_delta = self.bounds.num_drift_transitions(t.n);
        let n_states = t.n_states * delta;
        let steps = self.total_steps();

        // forward pass, storing normalized alphas and the branch tables
        let mut alphas: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
        let mut alpha = vec![0.0; n_states];
        let zero_d = self.bounds.index_of(0).expect("bounds contain 0");
        alpha[zero_d] = 1.0; // s = 0, d = 0
        alphas.push(alpha.clone());
        let mut tables: Vec<(StepBlocks, Vec<f64>)> = Vec::with_capacity(steps);
        let mut log_scale = 0.0;
        for i in 1..=steps {
            let sb = self.step_blocks(i);
            let g = self.read_tables(&sb, y, i);
            let mut next = vec![0.0; n_states];
            for s in 0..t.n_states {
                for a in self.inputs_at(i) {
                    let pa = self.prior_at(prior, i).map_or(1.0, |row| row[a]);
                    if pa == 0.0 {
                        continue;
                    }
                    let sa = s * t.n_inputs + a;
                    let s_next = t.next_state[sa];
                    let gbase = sb.block_of[sa] * delta * small_delta;
                    for d_idx in 0..delta {
                        let av = alpha[s * delta + d_idx];
                        if av == 0.0 {
                            continue;
                        }
                        let weight = av * pa;
                        let grow = gbase + d_idx * small_delta;
                        for dd_idx in 0..small_delta {
                            let gv = g[grow + dd_idx];
                            if gv == 0.0 {
                                continue;
                            }
                            let d_new = d_idx as i64 + dd_idx as i64 - t.n as i64;
                            if d_new >= 0 && (d_new as usize) < delta {
                                next[s_next * delta + d_new as usize] += weight * gv;
                            }
                        }
                    }
                }
            }
            let c: f64 = next.iter().sum();
            if c <= 0.0 {
                return Err(Error::NoSurvivingPath { step: i });
            }
            next.iter_mut().for_each(|v| *v /= c);
            log_scale += c.ln();
            alpha = next.clone();
            alphas.push(next);
            tables.push((sb, g));
        }

        let terminal = terminal_d; // state s = 0 after termination
        let pv = alphas[steps][terminal];
        if pv <= 0.0 {
            return Err(Error::NoSurvivingPath { step: steps });
        }
        let log_evidence = log_scale + pv.ln();

        // backward pass with on-the-fly posterior accumulation
        let mut app = AppMatrix::zeros(self.n_outer, t.n_inputs);
        let mut beta = vec![0.0; n_states];
        beta[terminal] = 1.0;
        for i in (1..=steps).rev() {
            let (sb, g) = &tables[i - 1];
            let alpha_prev = &alphas[i - 1];
            let mut beta_prev = vec![0.0; n_states];
            for s in 0..t.n_states {
                for a in self.inputs_at(i) {
                    let pa = self.prior_at(prior, i).map_or(1.0, |row| row[a]);
                    if pa == 0.0 {
                        continue;
                    }
                    let sa = s * t.n_inputs + a;
                    let s_next = t.next_state[sa];
                    let gbase = sb.block_of[sa] * delta * small_delta;
                    for d_idx in 0..delta {
                        let grow = gbase + d_idx * small_delta;
                        let mut sum_gb = 0.0;
                        for dd_idx in 0..small_delta {
                            let gv = g[grow + dd_idx];
                            if gv == 0.0 {
                                continue;
                            }
                            let d_new = d_idx as i64 + dd_idx as i64 - t.n as i64;
                            if d_new >= 0 && (d_new as usize) < delta {
                                sum_gb += gv * beta[s_next * delta + d_new as usize];
                            }
                        }
                        if sum_gb == 0.0 {
                            continue;
                        }
                        beta_prev[s * delta + d_idx] += pa * sum_gb;
                        if i <= self.n_outer {
                            app.row_mut(i - 1)[a] +=
                                alpha_prev[s * delta + d_idx] * pa * sum_gb;
                        }
                    }
                }
            }
            let c: f64 = beta_prev.iter().sum();
            if c <= 0.0 {
                return Err(Error::NoSurvivingPath { step: i - 1 });
            }
            beta_prev.iter_mut().for_each(|v| *v /= c);
            if let Some(sink) = dump.as_deref_mut() {
                dump_step(sink, i, t, delta, self.bounds.d_min, &alphas[i - 1], &beta_prev)?;
            }
            beta = beta_prev;
        }
        app.normalize_rows()?;
        Ok(BcjrOutput { app, log_evidence })
    }

    /// Exact joint posteriors `p(w_i | y_1, ..., y_M)` over the product
    /// drift space. For `M = 1` this is [`Self::decode_single`].
    pub fn decode_joint(&self, ys: &[Vec<Symbol>], prior: &PriorMatrix) -> Result<BcjrOutput> {
        if ys.is_empty() {
            return Err(Error::InvalidInput("joint decoding needs at least one read".into()));
        }
        if ys.len() == 1 {
            return self.decode_single(&ys[0], prior);
        }
        self.check_prior(prior)?;
        let reads = ys.len();
        let t = &self.trellis;
        let delta = self.bounds.num_drift_states();
        let small_delta = self.bounds.num_drift_transitions(t.n);
        let steps = self.total_steps();

        let mut drift_space = 1usize;
        let joint_states = (t.n_states as u128)
            * (delta as u128)
                .checked_pow(reads as u32)
                .unwrap_or(u128::MAX);
        if joint_states > self.joint_state_ceiling {
            return Err(Error::StateSpaceTooLarge {
                states: joint_states,
                ceiling: self.joint_state_ceiling,
            });
        }
        for _ in 0..reads {
            drift_space *= delta;
        }
        let n_states = t.n_states * drift_space;

        // terminal drift vector index (read 0 least significant)
        let mut terminal = 0usize;
        for y in ys.iter().rev() {
            terminal = terminal * delta + self.terminal_drift_index(y.len())?;
        }

        let contract_fwd = |slice: &[f64],
                            gs: &[Vec<f64>],
                            block: usize,
                            buf_a: &mut Vec<f64>,
                            buf_b: &mut Vec<f64>| {
            // repeatedly contract drift dimension j of the alpha slice
            buf_a.clear();
            buf_a.extend_from_slice(slice);
            let mut stride = 1usize;
            for g in gs {
                buf_b.clear();
                buf_b.resize(drift_space, 0.0);
                let gbase = block * delta * small_delta;
                for (didx, &val) in buf_a.iter().enumerate() {
                    if val == 0.0 {
                        continue;
                    }
                    let d_j = (didx / stride) % delta;
                    let rest = didx - d_j * stride;
                    let grow = gbase + d_j * small_delta;
                    for dd_idx in 0..small_delta {
                        let gv = g[grow + dd_idx];
                        if gv == 0.0 {
                            continue;
                        }
                        let d_new = d_j as i64 + dd_idx as i64 - t.n as i64;
                        if d_new >= 0 && (d_new as usize) < delta {
                            buf_b[rest + d_new as usize * stride] += val * gv;
                        }
                    }
                }
                std::mem::swap(buf_a, buf_b);
                stride *= delta;
            }
        };

        let contract_bwd = |slice: &[f64],
                            gs: &[Vec<f64>],
                            block: usize,
                            buf_a: &mut Vec<f64>,
                            buf_b: &mut Vec<f64>| {
            buf_a.clear();
            buf_a.extend_from_slice(slice);
            let mut stride = 1usize;
            for g in gs {
                buf_b.clear();
                buf_b.resize(drift_space, 0.0);
                let gbase = block * delta * small_delta;
                for (didx, &val) in buf_a.iter().enumerate() {
                    if val == 0.0 {
                        continue;
                    }
                    let d_to = (didx / stride) % delta;
                    let rest = didx - d_to * stride;
                    for dd_idx in 0..small_delta {
                        let d_from = d_to as i64 - (dd_idx as i64 - t.n as i64);
                        if d_from < 0 || d_from as usize >= delta {
                            continue;
                        }
                        let gv = g[gbase + d_from as usize * small_delta + dd_idx];
                        if gv == 0.0 {
                            continue;
                        }
                        buf_b[rest + d_from as usize * stride] += val * gv;
                    }
                }
                std::mem::swap(buf_a, buf_b);
                stride *= delta;
            }
        };

        // forward pass
        let mut alphas: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
        let mut alpha = vec![0.0; n_states];
        let zero_d = self.bounds.index_of(0).expect("bounds contain 0");
        let mut zero_vec = 0usize;
        for _ in 0..reads {
            zero_vec = zero_vec * delta + zero_d;
        }
        alpha[zero_vec] = 1.0;
        alphas.push(alpha.clone());
        let mut tables: Vec<(StepBlocks, Vec<Vec<f64>>)> = Vec::with_capacity(steps);
        let mut log_scale = 0.0;
        let mut buf_a = Vec::with_capacity(drift_space);
        let mut buf_b = Vec::with_capacity(drift_space);
        for i in 1..=steps {
            let sb = self.step_blocks(i);
            let gs: Vec<Vec<f64>> = ys.iter().map(|y| self.read_tables(&sb, y, i)).collect();
            let mut next = vec![0.0; n_states];
            for s in 0..t.n_states {
                let slice = &alpha[s * drift_space..(s + 1) * drift_space];
                if slice.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for a in self.inputs_at(i) {
                    let pa = self.prior_at(prior, i).map_or(1.0, |row| row[a]);
                    if pa == 0.0 {
                        continue;
                    }
                    let sa = s * t.n_inputs + a;
                    let s_next = t.next_state[sa];
                    contract_fwd(slice, &gs, sb.block_of[sa], &mut buf_a, &mut buf_b);
                    let dst = &mut next[s_next * drift_space..(s_next + 1) * drift_space];
                    for (d, &v) in dst.iter_mut().zip(buf_a.iter()) {
                        *d += pa * v;
                    }
                }
            }
            let c: f64 = next.iter().sum();
            if c <= 0.0 {
                return Err(Error::NoSurvivingPath { step: i });
            }
            next.iter_mut().for_each(|v| *v /= c);
            log_scale += c.ln();
            alpha = next.clone();
            alphas.push(next);
            tables.push((sb, gs));
        }

        let pv = alphas[steps][terminal]; // state s = 0 after termination
        if pv <= 0.0 {
            return Err(Error::NoSurvivingPath { step: steps });
        }
        let log_evidence = log_scale + pv.ln();

        // backward pass with posterior accumulation
        let mut app = AppMatrix::zeros(self.n_outer, t.n_inputs);
        let mut beta = vec![0.0; n_states];
        beta[terminal] = 1.0;
        for i in (1..=steps).rev() {
            let (sb, gs) = &tables[i - 1];
            let alpha_prev = &alphas[i - 1];
            let mut beta_prev = vec![0.0; n_states];
            for s in 0..t.n_states {
                for a in self.inputs_at(i) {
                    let pa = self.prior_at(prior, i).map_or(1.0, |row| row[a]);
                    if pa == 0.0 {
                        continue;
                    }
                    let sa = s * t.n_inputs + a;
                    let s_next = t.next_state[sa];
                    let slice = &beta[s_next * drift_space..(s_next + 1) * drift_space];
                    if slice.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    contract_bwd(slice, gs, sb.block_of[sa], &mut buf_a, &mut buf_b);
                    let asrc = &alpha_prev[s * drift_space..(s + 1) * drift_space];
                    let bdst = &mut beta_prev[s * drift_space..(s + 1) * drift_space];
                    let mut dot = 0.0;
                    for (didx, &v) in buf_a.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        bdst[didx] += pa * v;
                        dot += asrc[didx] * v;
                    }
                    if i <= self.n_outer {
                        app.row_mut(i - 1)[a] += pa * dot;
                    }
                }
            }
            let c: f64 = beta_prev.iter().sum();
            if c <= 0.0 {
                return Err(Error::NoSurvivingPath { step: i - 1 });
            }
            beta_prev.iter_mut().for_each(|v| *v /= c);
            beta = beta_prev;
        }
        app.normalize_rows()?;
        Ok(BcjrOutput { app, log_evidence })
    }
}

fn dump_step(
    sink: &mut dyn Write,
    step: usize,
    t: &InnerTrellis,
    delta: usize,
    d_min: i64,
    alpha: &[f64],
    beta: &[f64],
) -> Result<()> {
    for s in 0..t.n_states {
        for d_idx in 0..delta {
            let idx = s * delta + d_idx;
            if alpha[idx] != 0.0 || beta[idx] != 0.0 {
                writeln!(
                    sink,
                    "step={} s={} d={} alpha={:.6e} beta={:.6e}",
                    step - 1,
                    s,
                    d_min + d_idx as i64,
                    alpha[idx],
                    beta[idx]
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inner::{ConvCodeSpec, WatermarkSpec};

    fn params(p_i: f64, p_d: f64, p_s: f64, q: usize) -> ChannelParams {
        ChannelParams::new(p_i, p_d, p_s, q).unwrap()
    }

    #[test]
    fn segment_likelihood_pins() {
        let p = params(0.05, 0.05, 0.0, 4);
        // single deletion path
        let v = segment_likelihood(&[2], &[], &p, 2).unwrap();
        assert!((v - 0.05).abs() < 1e-15);
        // single transmission path
        let v = segment_likelihood(&[2], &[2], &params(0.05, 0.05, 0.0, 4), 0).unwrap();
        assert!((v - 0.9).abs() < 1e-15);
        // insert-then-transmit plus insert-insert-delete
        let v = segment_likelihood(&[1], &[3, 1], &p, 2).unwrap();
        assert!((v - 0.0112578125).abs() < 1e-15, "{v}");
        // segment longer than the window errors
        assert!(segment_likelihood(&[1], &[0, 0, 0, 0], &p, 2).is_err());
    }

    #[test]
    fn segment_likelihood_respects_insertion_cap() {
        let p = params(0.1, 0.1, 0.0, 2);
        // insert, insert, delete: needs a run of two insertions
        let y = [1u8, 1];
        assert_eq!(segment_likelihood(&[0], &y, &p, 1).unwrap(), 0.0);
        let v = segment_likelihood(&[0], &y, &p, 2).unwrap();
        assert!((v - 0.05 * 0.05 * 0.1).abs() < 1e-15, "{v}");
        // segment beyond the window errors rather than truncating
        assert!(segment_likelihood(&[0], &[1, 1, 0], &p, 1).is_err());
    }

    #[test]
    fn segment_likelihood_sums_to_one_with_large_cap() {
        // enumerate all binary output strings; truncation mass ~ p_i^(cap+1)
        for (t, cap) in [(vec![1u8], 14), (vec![1u8, 0], 6)] {
            let p = params(0.05, 0.1, 0.2, 2);
            let n = t.len();
            let max_len = n * (cap + 1);
            let mut total = 0.0;
            for len in 0..=max_len {
                for word in 0..(1u32 << len) {
                    let y: Vec<u8> = (0..len).map(|i| ((word >> i) & 1) as u8).collect();
                    total += segment_likelihood(&t, &y, &p, cap).unwrap();
                }
            }
            assert!((total - 1.0).abs() < 1e-6, "total mass {total} for n={n}");
        }
    }

    #[test]
    fn drift_bounds_pins() {
        let b = DriftBounds::from_params(962, &params(0.05, 0.05, 0.0, 4), 5.0, 2);
        assert_eq!((b.d_min, b.d_max), (-36, 36));
        let b = DriftBounds::from_params(1008, &params(0.02, 0.02, 0.0, 4), 5.0, 2);
        assert_eq!(b.d_max, 23);
        let b = DriftBounds::from_params(100, &params(0.0, 0.0, 0.0, 4), 5.0, 2);
        assert_eq!((b.d_min, b.d_max), (0, 0));
        // insertion-only bounds widen upward
        let b = DriftBounds::from_params(100, &params(0.04, 0.0, 0.0, 4), 5.0, 2);
        assert_eq!(b.d_min, 0);
        assert!(b.d_max > 0);
        assert_eq!(b.num_drift_transitions(3), 10);
        assert!(DriftBounds::new(2, 5, 2).is_err());
    }

    fn toy_decoder(p: ChannelParams) -> InnerDecoder {
        // q=2, n=2, k=1, m=1 terminated code, N_o=3, wide bounds
        let code = InnerCode::Conv(ConvCodeSpec::from_octal(2, 1, 2, 1, &["2".into(), "3".into()]).unwrap());
        let offset = OffsetSequence::generate(11, code.codeword_len(3), 2).unwrap();
        let bounds = DriftBounds::new(-8, 16, 2).unwrap();
        InnerDecoder::new(&code, offset, p, bounds).unwrap()
    }

    #[test]
    fn noiseless_decode_recovers_word() {
        let dec = toy_decoder(params(0.0, 0.0, 0.0, 2));
        let code = InnerCode::Conv(ConvCodeSpec::from_octal(2, 1, 2, 1, &["2".into(), "3".into()]).unwrap());
        let w = vec![1u8, 0, 1];
        let v = code.encode(&w).unwrap();
        let offset = OffsetSequence::generate(11, v.len(), 2).unwrap();
        let x = crate::inner::apply_offset(&v, &offset).unwrap();
        let out = dec
            .decode_single(&x, &PriorMatrix::uniform(3, 2))
            .unwrap();
        assert!(out.app.is_row_stochastic(1e-9));
        for (i, &wi) in w.iter().enumerate() {
            assert!(out.app.row(i)[wi as usize] > 1.0 - 1e-9);
        }
    }

    #[test]
    fn terminal_drift_out_of_bounds_is_flagged() {
        let dec = toy_decoder(params(0.05, 0.05, 0.0, 2));
        let y = vec![0u8; 60]; // drift 60 - 8 far beyond d_max
        let err = dec.decode_single(&y, &PriorMatrix::uniform(3, 2)).unwrap_err();
        assert!(matches!(err, Error::UndecodableDrift { .. }));
    }

    #[test]
    fn watermark_decoder_runs_with_single_state() {
        let wm = InnerCode::Watermark(WatermarkSpec::sparse(4, 3, 3).unwrap());
        let offset = OffsetSequence::generate(5, wm.codeword_len(4), 4).unwrap();
        let bounds = DriftBounds::new(-4, 8, 2).unwrap();
        let dec = InnerDecoder::new(&wm, offset.clone(), params(0.03, 0.03, 0.01, 4), bounds).unwrap();
        let w = vec![6u8, 1, 0, 7];
        let v = wm.encode(&w).unwrap();
        let x = crate::inner::apply_offset(&v, &offset).unwrap();
        let y = crate::channel::transmit(&x, dec.params(), 3).unwrap().received;
        if let Ok(out) = dec.decode_single(&y, &PriorMatrix::uniform(4, 8)) {
            assert!(out.app.is_row_stochastic(1e-9));
        }
    }

    #[test]
    fn joint_state_ceiling_guard() {
        let mut dec = toy_decoder(params(0.05, 0.05, 0.0, 2));
        dec.joint_state_ceiling = 10;
        let ys = vec![vec![0u8; 8], vec![0u8; 8]];
        let err = dec.decode_joint(&ys, &PriorMatrix::uniform(3, 2)).unwrap_err();
        assert!(matches!(err, Error::StateSpaceTooLarge { .. }));
    }
}
