//! Monte-Carlo frame-error-rate estimation, achievable-information-rate
//! estimation, and trellis complexity accounting.
//!
//! Frames are independently seeded from `(master_seed, frame_index)`, so
//! results are reproducible and independent of worker count or execution
//! order. Aggregation folds per-frame values in frame-index order.

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::app::PriorMatrix;
use crate::channel::transmit_multi;
use crate::error::{Error, Result};
use crate::inner::InnerCode;
use crate::pipeline::{DecodeMode, Scheme};
use crate::seeds;
use crate::trellis::DriftBounds;

/// Frames simulated per scheduling batch. The stopping rule is evaluated
/// at batch boundaries, which keeps the simulated frame set independent of
/// the worker count.
const BATCH: u64 = 128;

/// Stopping rule for FER simulation: whichever of the two limits is hit
/// first at a batch boundary.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FerStopRule {
    pub max_frames: u64,
    pub target_errors: u64,
}

impl Default for FerStopRule {
    fn default() -> Self {
        Self { max_frames: 100_000, target_errors: 100 }
    }
}

/// Frame-error statistics with a normal-approximation confidence interval.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FerStats {
    pub frames: u64,
    pub errors: u64,
    pub undecodable: u64,
}

impl FerStats {
    pub fn fer(&self) -> f64 {
        if self.frames == 0 {
            return 0.0;
        }
        self.errors as f64 / self.frames as f64
    }

    /// 95% normal-approximation interval, clamped to `[0, 1]`.
    pub fn ci95(&self) -> (f64, f64) {
        if self.frames == 0 {
            return (0.0, 1.0);
        }
        let p = self.fer();
        let half = 1.96 * (p * (1.0 - p) / self.frames as f64).sqrt();
        ((p - half).max(0.0), (p + half).min(1.0))
    }
}

/// Draws a uniform information word for a frame.
fn random_info_word(k: usize, field_order: usize, rng: &mut impl RngCore) -> Vec<u8> {
    let mask = (field_order - 1) as u32;
    (0..k).map(|_| (rng.next_u32() & mask) as u8).collect()
}

/// Simulates one frame end to end; returns (error, undecodable).
fn simulate_frame(scheme: &Scheme, frame_seed: u64) -> Result<(bool, bool)> {
    let mut rng = seeds::rng_from_seed(seeds::derive(frame_seed, 0x66));
    let u = random_info_word(scheme.k_info(), 1 << scheme.config().inner.k(), &mut rng);
    let x = scheme.encode_frame(&u)?;
    let ys: Vec<Vec<u8>> = transmit_multi(
        &x,
        &scheme.config().channel,
        scheme.config().reads,
        seeds::derive(frame_seed, 0xC4),
    )?
    .into_iter()
    .map(|r| r.received)
    .collect();
    let result = scheme.decode_frame(&ys, Some(&u))?;
    let error = result.undecodable || result.frame_error.unwrap_or(true);
    Ok((error, result.undecodable))
}

/// Estimates the frame error rate of a scheme under the stopping rule.
/// Undecodable frames count as frame errors.
pub fn fer_sim(scheme: &Scheme, stop: &FerStopRule, master_seed: u64) -> Result<FerStats> {
    let mut stats = FerStats { frames: 0, errors: 0, undecodable: 0 };
    while stats.frames < stop.max_frames && stats.errors < stop.target_errors {
        let batch = BATCH.min(stop.max_frames - stats.frames);
        let start = stats.frames;
        let results: Vec<(bool, bool)> = (0..batch)
            .into_par_iter()
            .map(|i| simulate_frame(scheme, seeds::derive(master_seed, start + i)))
            .collect::<Result<Vec<_>>>()?;
        for (error, undecodable) in results {
            stats.frames += 1;
            stats.errors += error as u64;
            stats.undecodable += undecodable as u64;
        }
    }
    Ok(stats)
}

/// Achievable-information-rate estimate in bits per channel symbol.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AirEstimate {
    pub bits_per_channel_symbol: f64,
    pub frames_used: u64,
    pub std_error: f64,
    pub undecodable: u64,
}

/// Per-entry probability floor inside the AIR sum; keeps the estimator
/// finite when the truncated channel law assigns zero to the transmitted
/// symbol. Negative contributions are kept, not clamped away.
const AIR_FLOOR: f64 = 1e-300;

/// Estimates an achievable information rate of the inner stage by the
/// mismatched-decoding (single BCJR pass) lower bound
/// `AIR = (1/N) E[ sum_i log2(2^k * p(w_i^tx | y_1..y_M)) ]`
/// with uniform inner inputs and uniform priors, in the configured
/// separate or joint mode. Undecodable frames are excluded and counted.
pub fn air_estimate(scheme: &Scheme, frames: u64, master_seed: u64) -> Result<AirEstimate> {
    if frames == 0 {
        return Err(Error::InvalidInput("AIR estimation needs frames >= 1".into()));
    }
    let cfg = scheme.config();
    let n_outer = cfg.n_outer();
    let k = cfg.inner.k();
    let cols = 1usize << k;
    let n = cfg.codeword_len() as f64;
    let prior = PriorMatrix::uniform(n_outer, cols);

    let per_frame: Vec<Option<f64>> = (0..frames)
        .into_par_iter()
        .map(|f| -> Result<Option<f64>> {
            let frame_seed = seeds::derive(master_seed, f);
            let mut rng = seeds::rng_from_seed(seeds::derive(frame_seed, 0x66));
            let w = random_info_word(n_outer, cols, &mut rng);
            let v = cfg.inner.encode(&w)?;
            let x = crate::inner::apply_offset(&v, scheme.offset())?;
            let ys: Vec<Vec<u8>> =
                transmit_multi(&x, &cfg.channel, cfg.reads, seeds::derive(frame_seed, 0xC4))?
                    .into_iter()
                    .map(|r| r.received)
                    .collect();
            match scheme.inner_stage(&ys, &prior) {
                Ok(app) => {
                    let mut sum = 0.0;
                    for (i, &wi) in w.iter().enumerate() {
                        sum += (app.row(i)[wi as usize].max(AIR_FLOOR) * cols as f64).log2();
                    }
                    Ok(Some(sum / n))
                }
                Err(Error::UndecodableDrift { .. }) | Err(Error::NoSurvivingPath { .. }) => {
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let values: Vec<f64> = per_frame.iter().filter_map(|v| *v).collect();
    let undecodable = frames - values.len() as u64;
    if values.is_empty() {
        return Err(Error::InvalidInput(
            "all frames were undecodable; AIR undefined".into(),
        ));
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    let std_error = (var / m).sqrt();
    Ok(AirEstimate {
        bits_per_channel_symbol: mean,
        frames_used: values.len() as u64,
        std_error,
        undecodable,
    })
}

/// Closed-form trellis complexity in edges, per the drift-state counting:
/// `C_sep = (N/n) 2^(mk+k) M Delta delta` and
/// `C_joint = (N/n) 2^(mk+k) (Delta delta)^M`, trellis termination
/// neglected. `edges_joint` is `None` on overflow.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ComplexityReport {
    pub delta: u64,
    pub small_delta: u64,
    pub edges_sep: u128,
    pub edges_joint: Option<u128>,
}

/// Evaluates the closed forms for a code, drift bounds, channel input
/// length `n_total`, and `reads` received sequences.
pub fn count_edges(
    code: &InnerCode,
    bounds: &DriftBounds,
    n_total: usize,
    reads: usize,
) -> ComplexityReport {
    let n = code.n();
    let steps = (n_total / n) as u128;
    let branches = (code.num_states() as u128) << code.k();
    let delta = bounds.num_drift_states() as u128;
    let small_delta = bounds.num_drift_transitions(n) as u128;
    let per_read = delta * small_delta;
    let edges_sep = steps * branches * reads as u128 * per_read;
    let edges_joint = per_read
        .checked_pow(reads as u32)
        .and_then(|p| steps.checked_mul(branches)?.checked_mul(p));
    ComplexityReport {
        delta: delta as u64,
        small_delta: small_delta as u64,
        edges_sep,
        edges_joint,
    }
}

/// Independently counts separate-decoding edges by walking the constructed
/// per-step transition structure: every `(state, input)` branch of every
/// step, at every drift state, with every admissible drift transition, for
/// each read. Termination steps are counted like regular steps, matching
/// the closed form.
pub fn enumerate_sep_edges(
    code: &InnerCode,
    bounds: &DriftBounds,
    n_total: usize,
    reads: usize,
) -> u128 {
    let n = code.n();
    let steps = n_total / n;
    let d_values: Vec<i64> = (bounds.d_min..=bounds.d_max).collect();
    let changes: Vec<i64> = (-(n as i64)..=(n * bounds.i_max) as i64).collect();
    let mut edges: u128 = 0;
    for _step in 0..steps {
        for s in 0..code.num_states() {
            for a in 0..1usize << code.k() {
                let _ = code.step(s, a as u8);
                for _d in &d_values {
                    for _dd in &changes {
                        edges += 1;
                    }
                }
            }
        }
    }
    edges * reads as u128
}

/// Joint-decoding analogue of [`enumerate_sep_edges`], walking drift-state
/// vectors and drift-transition vectors; guarded to small instances.
pub fn enumerate_joint_edges(
    code: &InnerCode,
    bounds: &DriftBounds,
    n_total: usize,
    reads: usize,
) -> Result<u128> {
    let n = code.n();
    let steps = n_total / n;
    let delta = bounds.num_drift_states() as u128;
    let small_delta = bounds.num_drift_transitions(n) as u128;
    let combos = delta
        .checked_pow(reads as u32)
        .and_then(|d| small_delta.checked_pow(reads as u32).map(|s| d * s))
        .ok_or_else(|| Error::InstanceTooLarge("drift vector space overflows".into()))?;
    let per_step = (code.num_states() as u128) << code.k();
    if combos * per_step > 200_000_000 {
        return Err(Error::InstanceTooLarge(format!(
            "{combos} drift transition vectors per branch"
        )));
    }
    let mut edges: u128 = 0;
    for _step in 0..steps {
        for s in 0..code.num_states() {
            for a in 0..1usize << code.k() {
                let _ = code.step(s, a as u8);
                // walk the product space with an odometer
                let mut d_vec = vec![0usize; reads];
                loop {
                    let mut dd_vec = vec![0usize; reads];
                    loop {
                        edges += 1;
                        if !increment(&mut dd_vec, small_delta as usize) {
                            break;
                        }
                    }
                    if !increment(&mut d_vec, delta as usize) {
                        break;
                    }
                }
            }
        }
    }
    Ok(edges)
}

fn increment(digits: &mut [usize], base: usize) -> bool {
    for d in digits {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

// ---------------------------------------------------------------------------
// Result rows: CSV plus JSON sidecar
// ---------------------------------------------------------------------------

/// Header of the results CSV.
pub const CSV_HEADER: &str =
    "p_i,p_d,p_s,M,mode,turbo_iters,frames,errors,fer,ci_lo,ci_hi,air,air_se,seed";

/// One CSV row; FER runs leave the AIR columns empty and vice versa.
#[derive(Clone, Debug, Serialize)]
pub struct ResultRow {
    pub p_i: f64,
    pub p_d: f64,
    pub p_s: f64,
    pub reads: usize,
    pub mode: DecodeMode,
    pub turbo: usize,
    pub frames: u64,
    pub errors: u64,
    pub fer: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub air: Option<f64>,
    pub air_se: Option<f64>,
    pub seed: u64,
}

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.p_i,
            self.p_d,
            self.p_s,
            self.reads,
            self.mode,
            self.turbo,
            self.frames,
            self.errors,
            opt(self.fer),
            opt(self.ci_lo),
            opt(self.ci_hi),
            opt(self.air),
            opt(self.air_se),
            self.seed
        )
    }
}

/// Stable hexadecimal hash of a serializable configuration; rows already
/// present in the sidecar are skipped on resume.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inner::ConvCodeSpec;
    use crate::pipeline::tests::toy_scheme;

    #[test]
    fn fer_zero_under_noiseless_channel() {
        let scheme = toy_scheme(0.0, 1, DecodeMode::Separate, 1);
        let stats = fer_sim(
            &scheme,
            &FerStopRule { max_frames: 64, target_errors: 10 },
            7,
        )
        .unwrap();
        assert_eq!(stats.frames, 64);
        assert_eq!(stats.errors, 0);
        assert_eq!(stats.fer(), 0.0);
    }

    #[test]
    fn fer_is_deterministic_across_thread_counts() {
        let scheme = toy_scheme(0.08, 2, DecodeMode::Separate, 1);
        let stop = FerStopRule { max_frames: 256, target_errors: 1_000 };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| fer_sim(&scheme, &stop, 99).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.errors, b.errors);
        assert_eq!(a.undecodable, b.undecodable);
    }

    #[test]
    fn air_noiseless_equals_rate_exactly() {
        let scheme = toy_scheme(0.0, 1, DecodeMode::Separate, 1);
        let air = air_estimate(&scheme, 8, 3).unwrap();
        // N_o * k / N per frame, exactly
        let expect = 3.0 * 1.0 / scheme.config().codeword_len() as f64;
        assert_eq!(air.bits_per_channel_symbol, expect);
        assert_eq!(air.std_error, 0.0);
        assert_eq!(air.undecodable, 0);
    }

    #[test]
    fn edge_counts_match_closed_forms() {
        // conv scheme coefficients: 962 * 8 * M * Delta * 4
        let cc = InnerCode::Conv(
            ConvCodeSpec::from_octal(4, 1, 1, 2, &["5".into(), "7".into()]).unwrap(),
        );
        let bounds = DriftBounds::new(-36, 36, 2).unwrap();
        let report = count_edges(&cc, &bounds, 962, 2);
        assert_eq!(report.delta, 73);
        assert_eq!(report.small_delta, 4);
        assert_eq!(report.edges_sep, 962 * 8 * 2 * 73 * 4);
        assert_eq!(report.edges_joint, Some(962 * 8 * (73u128 * 4).pow(2)));
        // enumerations agree exactly on a small instance
        let small = DriftBounds::new(-3, 3, 2).unwrap();
        let sep = enumerate_sep_edges(&cc, &small, 20, 2);
        assert_eq!(sep, count_edges(&cc, &small, 20, 2).edges_sep);
        let joint = enumerate_joint_edges(&cc, &small, 20, 2).unwrap();
        assert_eq!(joint, count_edges(&cc, &small, 20, 2).edges_joint.unwrap());
    }

    #[test]
    fn csv_row_formats() {
        let row = ResultRow {
            p_i: 0.05,
            p_d: 0.05,
            p_s: 0.0,
            reads: 2,
            mode: DecodeMode::Joint,
            turbo: 1,
            frames: 100,
            errors: 3,
            fer: Some(0.03),
            ci_lo: Some(0.0),
            ci_hi: Some(0.07),
            air: None,
            air_se: None,
            seed: 42,
        };
        let line = row.to_csv_line();
        assert!(line.starts_with("0.05,0.05,0,2,joint,1,100,3,"));
        assert_eq!(line.split(',').count(), CSV_HEADER.split(',').count());
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        #[derive(Serialize)]
        struct Probe {
            a: u32,
            b: &'static str,
        }
        let h1 = config_hash(&Probe { a: 1, b: "x" });
        let h2 = config_hash(&Probe { a: 1, b: "x" });
        let h3 = config_hash(&Probe { a: 2, b: "x" });
        assert_eq!(h1, h2);
        assert_ne!(h1, h3);
        assert_eq!(h1.len(), 16);
    }
}
