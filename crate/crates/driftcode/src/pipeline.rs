//! End-to-end concatenated encode/decode orchestration.
//!
//! A frame is encoded as `x = offset(inner_encode(ldpc_encode(u)))` and
//! transmitted over `M` independent channel uses. Decoding alternates
//! between the inner stage (joint BCJR, or per-read BCJR plus the product
//! combiner) and outer belief propagation for `turbo` rounds, exchanging
//! extrinsic distributions in both directions.

use serde::{Deserialize, Serialize};

use crate::alphabet::Symbol;
use crate::app::{AppMatrix, PriorMatrix};
use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::inner::{apply_offset, ConvCodeSpec, InnerCode, OffsetSequence, WatermarkSpec};
use crate::ldpc::{bp_decode, BpConfig, LdpcEncoder, ParityCheckMatrix};
use crate::multiread::{separate_combine, CombinerConfig};
use crate::trellis::{DriftBounds, InnerDecoder, DEFAULT_JOINT_STATE_CEILING};

/// Inner-stage strategy for multiple reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Per-read BCJR plus product combination; complexity linear in `M`.
    Separate,
    /// Exact BCJR on the product drift space; exponential in `M`.
    Joint,
}

impl std::fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecodeMode::Separate => write!(f, "separate"),
            DecodeMode::Joint => write!(f, "joint"),
        }
    }
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separate" => Ok(DecodeMode::Separate),
            "joint" => Ok(DecodeMode::Joint),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Result of decoding one frame.
#[derive(Clone, Debug)]
pub struct FrameResult {
    /// Hard-decided information symbols (empty when undecodable).
    pub decoded_info: Vec<u8>,
    /// Whether `decoded_info` differs from the true word; `None` without
    /// ground truth. Undecodable frames count as errors.
    pub frame_error: Option<bool>,
    /// Terminal drift out of bounds or no surviving trellis path.
    pub undecodable: bool,
    /// Outer decoder reported a zero-syndrome codeword.
    pub converged: bool,
    /// Turbo (inner-outer) rounds actually run.
    pub turbo_iterations_used: usize,
}

/// Complete scheme description: inner code, outer code, channel, decoder
/// settings. This is the runtime mirror of the TOML scheme file.
#[derive(Clone, Debug)]
pub struct SchemeConfig {
    pub inner: InnerCode,
    pub outer: ParityCheckMatrix,
    pub channel: ChannelParams,
    /// Decoder drift interval; derived from the channel when absent.
    pub bounds: Option<DriftBounds>,
    pub drift_sigma_multiplier: f64,
    pub i_max: usize,
    /// Number of reads `M`.
    pub reads: usize,
    pub mode: DecodeMode,
    /// Turbo rounds `ell >= 1`.
    pub turbo: usize,
    pub offset_seed: u64,
    pub bp: BpConfig,
    pub combiner: CombinerConfig,
    pub joint_state_ceiling: u128,
}

impl SchemeConfig {
    /// Consistency checks across components.
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        if self.channel.q != self.inner.q() {
            return Err(Error::Config(format!(
                "channel alphabet {} != inner code alphabet {}",
                self.channel.q,
                self.inner.q()
            )));
        }
        if self.outer.field_k() != self.inner.k() {
            return Err(Error::Config(format!(
                "outer code over F_2^{} but inner code consumes {} bits per step",
                self.outer.field_k(),
                self.inner.k()
            )));
        }
        if self.reads == 0 {
            return Err(Error::Config("reads must be >= 1".into()));
        }
        if self.turbo == 0 {
            return Err(Error::Config("turbo iterations must be >= 1".into()));
        }
        if self.drift_sigma_multiplier <= 0.0 {
            return Err(Error::Config("drift_sigma_multiplier must be positive".into()));
        }
        Ok(())
    }

    /// Outer blocklength `N_o`.
    pub fn n_outer(&self) -> usize {
        self.outer.cols()
    }

    /// Channel input length `N`.
    pub fn codeword_len(&self) -> usize {
        self.inner.codeword_len(self.n_outer())
    }

    /// Drift bounds: explicit, or derived from the channel and codeword
    /// length via the sigma multiplier.
    pub fn drift_bounds(&self) -> DriftBounds {
        self.bounds.unwrap_or_else(|| {
            DriftBounds::from_params(
                self.codeword_len(),
                &self.channel,
                self.drift_sigma_multiplier,
                self.i_max,
            )
        })
    }

    /// Overall rate `R = R_o * R_I = K k / (N log2 q)` as an exact rational.
    pub fn overall_rate(&self, k_info: usize) -> num_rational::Ratio<u64> {
        let bits = crate::alphabet::symbol_bits(self.inner.q()).expect("validated");
        num_rational::Ratio::new(
            (k_info * self.inner.k()) as u64,
            (self.codeword_len() * bits) as u64,
        )
    }
}

/// A scheme with its derived artifacts (offset, LDPC encoder, inner
/// decoder), ready to process frames. Immutable and shareable across
/// threads.
#[derive(Clone, Debug)]
pub struct Scheme {
    config: SchemeConfig,
    offset: OffsetSequence,
    encoder: LdpcEncoder,
    decoder: InnerDecoder,
}

impl Scheme {
    pub fn build(config: SchemeConfig) -> Result<Self> {
        config.validate()?;
        let offset =
            OffsetSequence::generate(config.offset_seed, config.codeword_len(), config.inner.q())?;
        let encoder = LdpcEncoder::new(&config.outer)?;
        let mut decoder = InnerDecoder::new(
            &config.inner,
            offset.clone(),
            config.channel,
            config.drift_bounds(),
        )?;
        decoder.joint_state_ceiling = config.joint_state_ceiling;
        Ok(Self { config, offset, encoder, decoder })
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    pub fn offset(&self) -> &OffsetSequence {
        &self.offset
    }

    pub fn ldpc_encoder(&self) -> &LdpcEncoder {
        &self.encoder
    }

    pub fn inner_decoder(&self) -> &InnerDecoder {
        &self.decoder
    }

    /// Information symbols per frame.
    pub fn k_info(&self) -> usize {
        self.encoder.k()
    }

    /// Encodes an information word into the channel input sequence.
    pub fn encode_frame(&self, u: &[u8]) -> Result<Vec<Symbol>> {
        let codeword = self.encoder.encode(u)?;
        let v = self.config.inner.encode(&codeword)?;
        apply_offset(&v, &self.offset)
    }

    /// Inner-stage combined APPs for the configured mode with the given
    /// priors. Exposed for rate estimation, which runs the inner stage
    /// alone.
    pub fn inner_stage(&self, ys: &[Vec<Symbol>], prior: &PriorMatrix) -> Result<AppMatrix> {
        if ys.len() != self.config.reads {
            return Err(Error::Config(format!(
                "expected {} reads, got {}",
                self.config.reads,
                ys.len()
            )));
        }
        match self.config.mode {
            DecodeMode::Joint => Ok(self.decoder.decode_joint(ys, prior)?.app),
            DecodeMode::Separate => {
                let apps = ys
                    .iter()
                    .map(|y| Ok(self.decoder.decode_single(y, prior)?.app))
                    .collect::<Result<Vec<_>>>()?;
                separate_combine(&apps, prior, &self.config.combiner)
            }
        }
    }

    /// Decodes `M` reads, iterating `turbo` times between the inner and
    /// outer decoder. With ground truth the frame error flag is filled in.
    /// Undecodable frames (terminal drift out of bounds, dead trellis) are
    /// reported in the result, not as errors; `Err` means misconfiguration.
    pub fn decode_frame(&self, ys: &[Vec<Symbol>], true_u: Option<&[u8]>) -> Result<FrameResult> {
        match self.decode_frame_inner(ys) {
            Ok((codeword, converged, rounds)) => {
                let decoded_info = self.encoder.extract_info(&codeword);
                let frame_error = true_u.map(|u| u != decoded_info.as_slice());
                Ok(FrameResult {
                    decoded_info,
                    frame_error,
                    undecodable: false,
                    converged,
                    turbo_iterations_used: rounds,
                })
            }
            Err(Error::UndecodableDrift { .. }) | Err(Error::NoSurvivingPath { .. }) => {
                Ok(FrameResult {
                    decoded_info: Vec::new(),
                    frame_error: true_u.map(|_| true),
                    undecodable: true,
                    converged: false,
                    turbo_iterations_used: 0,
                })
            }
            Err(e) => Err(e),
        }
    }

    fn decode_frame_inner(&self, ys: &[Vec<Symbol>]) -> Result<(Vec<u8>, bool, usize)> {
        let n_outer = self.config.n_outer();
        let cols = 1usize << self.config.inner.k();
        let mut prior = PriorMatrix::uniform(n_outer, cols);
        let mut best = None;
        let mut rounds = 0;
        for _ in 0..self.config.turbo {
            rounds += 1;
            let inner_app = self.inner_stage(ys, &prior)?;
            let inner_extrinsic = divide_rows(&inner_app, &prior, self.config.combiner.clamp_floor)?;
            let outcome = bp_decode(&inner_extrinsic, &self.config.outer, &self.config.bp)?;
            let converged = outcome.converged;
            prior = clamp_rows(&outcome.extrinsic, self.config.combiner.clamp_floor)?;
            best = Some(outcome);
            if converged {
                break;
            }
        }
        let outcome = best.expect("turbo >= 1 validated");
        Ok((outcome.hard_decision, outcome.converged, rounds))
    }
}

/// Rowwise `numerator / denominator`, clamped and renormalized: converts
/// total posteriors into extrinsic distributions by dividing out the prior.
fn divide_rows(num: &AppMatrix, den: &AppMatrix, floor: f64) -> Result<AppMatrix> {
    let mut out = AppMatrix::zeros(num.rows(), num.cols());
    for i in 0..num.rows() {
        let row = out.row_mut(i);
        for (j, r) in row.iter_mut().enumerate() {
            *r = num.row(i)[j] / den.row(i)[j].max(floor);
        }
    }
    out.normalize_rows()?;
    Ok(out)
}

/// Clamps all entries to at least `floor` and renormalizes, keeping turbo
/// priors strictly positive.
fn clamp_rows(m: &AppMatrix, floor: f64) -> Result<AppMatrix> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        for v in out.row_mut(i) {
            *v = v.max(floor);
        }
    }
    out.normalize_rows()?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// TOML scheme files
// ---------------------------------------------------------------------------

/// Serde mirror of the TOML scheme file; see `configs/` for examples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchemeFile {
    pub scheme: SchemeSection,
    pub inner: InnerSection,
    pub outer: OuterSection,
    pub channel: ChannelSection,
    pub decoder: DecoderSection,
    pub offset: OffsetSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchemeSection {
    pub name: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InnerSection {
    /// `convolutional` or `watermark`
    pub r#type: String,
    pub q: usize,
    pub k: usize,
    pub n: usize,
    #[serde(default)]
    pub m: usize,
    /// Generator polynomials as octal strings, e.g. `["5", "7"]`.
    #[serde(default)]
    pub generators_octal: Vec<String>,
    /// Optional codebook file path for watermark codes; the sparse
    /// default is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OuterSection {
    /// `binary-wimax`, `nonbinary-wimax-like`, or `alist`
    pub r#type: String,
    #[serde(default)]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChannelSection {
    pub p_i: f64,
    pub p_d: f64,
    pub p_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecoderSection {
    pub i_max: usize,
    #[serde(default = "default_multiplier")]
    pub drift_sigma_multiplier: f64,
    pub mode: DecodeMode,
    pub reads: usize,
    #[serde(default = "default_turbo")]
    pub turbo: usize,
    #[serde(default = "default_bp_iterations")]
    pub bp_max_iterations: usize,
    #[serde(default = "default_clamp_floor")]
    pub clamp_floor: f64,
    #[serde(default = "default_ceiling")]
    pub joint_state_ceiling: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_min: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_max: Option<i64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OffsetSection {
    pub seed: u64,
}

fn default_multiplier() -> f64 {
    5.0
}
fn default_turbo() -> usize {
    1
}
fn default_bp_iterations() -> usize {
    100
}
fn default_clamp_floor() -> f64 {
    1e-30
}
fn default_ceiling() -> u64 {
    DEFAULT_JOINT_STATE_CEILING as u64
}

impl SchemeFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scheme file: {e}")))
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scheme file serializes")
    }

    /// Resolves file references (relative to `base_dir`) and builds the
    /// runtime configuration.
    pub fn resolve(&self, base_dir: &std::path::Path) -> Result<SchemeConfig> {
        let inner = match self.inner.r#type.as_str() {
            "convolutional" => InnerCode::Conv(ConvCodeSpec::from_octal(
                self.inner.q,
                self.inner.k,
                self.inner.n,
                self.inner.m,
                &self.inner.generators_octal,
            )?),
            "watermark" => {
                let spec = match &self.inner.codebook {
                    Some(path) => {
                        let text = std::fs::read_to_string(base_dir.join(path))?;
                        WatermarkSpec::parse_codebook(&text, self.inner.q, self.inner.k, self.inner.n)?
                    }
                    None => WatermarkSpec::sparse(self.inner.q, self.inner.k, self.inner.n)?,
                };
                InnerCode::Watermark(spec)
            }
            other => return Err(Error::Config(format!("unknown inner type {other:?}"))),
        };
        let outer = match self.outer.r#type.as_str() {
            "binary-wimax" => ParityCheckMatrix::construct_wimax(self.outer.n)?,
            "nonbinary-wimax-like" => ParityCheckMatrix::construct_wimax_like_nb(
                self.outer.n,
                self.outer.field_k.ok_or_else(|| {
                    Error::Config("nonbinary-wimax-like needs field_k".into())
                })?,
                self.outer.label_seed.unwrap_or(0),
            )?,
            "alist" => {
                let path = self.outer.path.as_ref().ok_or_else(|| {
                    Error::Config("alist outer code needs a path".into())
                })?;
                ParityCheckMatrix::read_alist(&base_dir.join(path))?
            }
            other => return Err(Error::Config(format!("unknown outer type {other:?}"))),
        };
        let channel = ChannelParams::new(
            self.channel.p_i,
            self.channel.p_d,
            self.channel.p_s,
            self.inner.q,
        )?;
        let bounds = match (self.decoder.d_min, self.decoder.d_max) {
            (Some(lo), Some(hi)) => Some(DriftBounds::new(lo, hi, self.decoder.i_max)?),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "specify both d_min and d_max or neither".into(),
                ))
            }
        };
        let config = SchemeConfig {
            inner,
            outer,
            channel,
            bounds,
            drift_sigma_multiplier: self.decoder.drift_sigma_multiplier,
            i_max: self.decoder.i_max,
            reads: self.decoder.reads,
            mode: self.decoder.mode,
            turbo: self.decoder.turbo,
            offset_seed: self.offset.seed,
            bp: BpConfig { max_iterations: self.decoder.bp_max_iterations, early_stop: true },
            combiner: CombinerConfig { clamp_floor: self.decoder.clamp_floor },
            joint_state_ceiling: self.decoder.joint_state_ceiling as u128,
        };
        config.validate()?;
        Ok(config)
    }
}
