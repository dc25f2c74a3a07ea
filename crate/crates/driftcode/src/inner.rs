//! Inner encoders: terminated convolutional code, watermark block code, and
//! the pseudo-random offset sequence applied before transmission.
//!
//! Both inner codes consume one outer-code symbol (`k` bits) per trellis
//! step and emit `n` q-ary symbols. The watermark code is a convolutional
//! code with memory zero, so the decoder treats both uniformly.

use num_rational::Ratio;
use rand::RngCore;

use crate::alphabet::{bits_to_symbols, symbol_bits, symbols_to_bits, Symbol};
use crate::error::{Error, Result};
use crate::seeds;

/// Descriptor of an `[n, k, m]_q` convolutional code.
///
/// `k` input bits enter per trellis step and `n * log2(q)` output bits are
/// produced, one per generator, then packed into `n` q-ary symbols (first
/// generator's bit most significant). The encoder state holds the last
/// `m * k` input bits; generators are masks over the `(m + 1) * k`-bit
/// window `[current input bits | state]`, current bits on top. For `k = 1`
/// this is the classic octal convention: `0o5, 0o7` is `(1 + D^2, 1 + D + D^2)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvCodeSpec {
    pub q: usize,
    pub k: usize,
    pub n: usize,
    /// Memory in trellis steps; the shift register holds `m * k` bits.
    pub m: usize,
    pub generators: Vec<u32>,
}

impl ConvCodeSpec {
    pub fn new(q: usize, k: usize, n: usize, m: usize, generators: Vec<u32>) -> Result<Self> {
        let bits = symbol_bits(q)?;
        if k == 0 || k > 8 {
            return Err(Error::InvalidInput(format!("k must be in [1, 8], got {k}")));
        }
        if generators.len() != n * bits {
            return Err(Error::InvalidInput(format!(
                "need n*log2(q) = {} generators, got {}",
                n * bits,
                generators.len()
            )));
        }
        let window_bits = (m + 1) * k;
        if window_bits > 24 {
            return Err(Error::InvalidInput(format!(
                "constraint window of {window_bits} bits is unsupported"
            )));
        }
        for &g in &generators {
            if g >= 1u32 << window_bits {
                return Err(Error::InvalidInput(format!(
                    "generator {g:#o} wider than the {window_bits}-bit window"
                )));
            }
        }
        Ok(Self { q, k, n, m, generators })
    }

    /// Parses generators given as octal strings, e.g. `["5", "7"]`.
    pub fn from_octal(q: usize, k: usize, n: usize, m: usize, octal: &[String]) -> Result<Self> {
        let generators = octal
            .iter()
            .map(|s| {
                u32::from_str_radix(s.trim(), 8).map_err(|_| {
                    Error::InvalidInput(format!("generator {s:?} is not an octal number"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(q, k, n, m, generators)
    }

    /// Number of encoder states `2^(m*k)`.
    pub fn num_states(&self) -> usize {
        1usize << (self.m * self.k)
    }

    /// One trellis step: feeds the `k`-bit `input` from state `state`,
    /// returning the successor state and the `n` output symbols.
    ///
    /// The state stores the last `m * k` input bits, most recent on top, so
    /// the step window is `[input | state]` and the successor state is the
    /// window shifted right by `k`.
    pub fn step(&self, state: usize, input: u8) -> (usize, Vec<Symbol>) {
        let window = ((input as usize) << (self.m * self.k)) | state;
        let bits: Vec<u8> = self
            .generators
            .iter()
            .map(|&g| ((window as u32 & g).count_ones() & 1) as u8)
            .collect();
        let next = window >> self.k;
        let out = bits_to_symbols(&bits, self.q).expect("generator count checked at construction");
        (next, out)
    }
}

/// Descriptor of an `[n, k]_q` inner block (watermark) code: an injective
/// codebook from `2^k` input values to words of `n` q-ary symbols.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WatermarkSpec {
    pub q: usize,
    pub k: usize,
    pub n: usize,
    codebook: Vec<Vec<Symbol>>,
}

impl WatermarkSpec {
    /// Builds a spec from an explicit codebook (index = input value).
    pub fn from_codebook(q: usize, k: usize, n: usize, codebook: Vec<Vec<Symbol>>) -> Result<Self> {
        symbol_bits(q)?;
        if codebook.len() != 1 << k {
            return Err(Error::InvalidInput(format!(
                "codebook must have 2^k = {} entries, got {}",
                1 << k,
                codebook.len()
            )));
        }
        for word in &codebook {
            if word.len() != n {
                return Err(Error::InvalidInput(format!(
                    "codebook word length {} != n = {n}",
                    word.len()
                )));
            }
            if word.iter().any(|&s| s as usize >= q) {
                return Err(Error::InvalidInput("codebook symbol out of range".into()));
            }
        }
        for i in 0..codebook.len() {
            for j in 0..i {
                if codebook[i] == codebook[j] {
                    return Err(Error::InvalidInput(format!(
                        "codebook not injective: inputs {j} and {i} map to the same word"
                    )));
                }
            }
        }
        Ok(Self { q, k, n, codebook })
    }

    /// Default sparse codebook: the `2^k` lowest-Hamming-weight words of
    /// `n * log2(q)` bits, ties broken by numeric value, assigned to inputs
    /// in order. Input 0 maps to the all-zero word.
    pub fn sparse(q: usize, k: usize, n: usize) -> Result<Self> {
        let bits = symbol_bits(q)? * n;
        if bits > 20 {
            return Err(Error::InvalidInput(format!(
                "sparse codebook over {bits}-bit words is unsupported"
            )));
        }
        if (1usize << k) > (1usize << bits) {
            return Err(Error::InvalidInput(format!(
                "2^{k} inputs do not fit in {bits}-bit words"
            )));
        }
        let mut words: Vec<u32> = (0..1u32 << bits).collect();
        words.sort_by_key(|&w| (w.count_ones(), w));
        let codebook = words[..1 << k]
            .iter()
            .map(|&w| {
                let word_bits: Vec<u8> = (0..bits).rev().map(|i| ((w >> i) & 1) as u8).collect();
                bits_to_symbols(&word_bits, q)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_codebook(q, k, n, codebook)
    }

    /// Parses a codebook file: one line per input value,
    /// `<input-int> <symbol,symbol,...>`. Blank lines and `#` comments
    /// are ignored.
    pub fn parse_codebook(text: &str, q: usize, k: usize, n: usize) -> Result<Self> {
        let mut codebook = vec![None; 1 << k];
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (input_tok, word_tok) = line.split_once(char::is_whitespace).ok_or(Error::Parse {
                line: line_no,
                msg: "expected `<input> <symbol,...>`".into(),
            })?;
            let input: usize = input_tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("not an integer: {input_tok:?}"),
            })?;
            if input >= 1 << k {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("input {input} out of range for k = {k}"),
                });
            }
            if codebook[input].is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("duplicate entry for input {input}"),
                });
            }
            codebook[input] = Some(crate::alphabet::parse_symbols(word_tok.trim(), q, line_no)?);
        }
        let codebook = codebook
            .into_iter()
            .enumerate()
            .map(|(i, w)| {
                w.ok_or_else(|| Error::Parse {
                    line: 0,
                    msg: format!("missing codebook entry for input {i}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_codebook(q, k, n, codebook)
    }

    /// Codebook image of `input`.
    pub fn word(&self, input: u8) -> &[Symbol] {
        &self.codebook[input as usize]
    }
}

/// Either inner code, presented to the trellis decoder as a state machine
/// with `2^(m*k)` states (one state for the watermark code).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InnerCode {
    Conv(ConvCodeSpec),
    Watermark(WatermarkSpec),
}

impl InnerCode {
    pub fn q(&self) -> usize {
        match self {
            InnerCode::Conv(c) => c.q,
            InnerCode::Watermark(w) => w.q,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            InnerCode::Conv(c) => c.k,
            InnerCode::Watermark(w) => w.k,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            InnerCode::Conv(c) => c.n,
            InnerCode::Watermark(w) => w.n,
        }
    }

    /// Memory in trellis steps (0 for the watermark code).
    pub fn memory(&self) -> usize {
        match self {
            InnerCode::Conv(c) => c.m,
            InnerCode::Watermark(_) => 0,
        }
    }

    pub fn num_states(&self) -> usize {
        match self {
            InnerCode::Conv(c) => c.num_states(),
            InnerCode::Watermark(_) => 1,
        }
    }

    /// One trellis step from `state` with `input`.
    pub fn step(&self, state: usize, input: u8) -> (usize, Vec<Symbol>) {
        match self {
            InnerCode::Conv(c) => c.step(state, input),
            InnerCode::Watermark(w) => (0, w.word(input).to_vec()),
        }
    }

    /// Codeword length `N = (N_o + m) * n` for `n_outer` information symbols.
    pub fn codeword_len(&self, n_outer: usize) -> usize {
        (n_outer + self.memory()) * self.n()
    }

    /// Encodes a sequence of outer symbols (each fitting in `k` bits),
    /// appending `m` zero-input termination steps for convolutional codes.
    pub fn encode(&self, w: &[u8]) -> Result<Vec<Symbol>> {
        let k = self.k();
        for &s in w {
            if (s as usize) >= 1 << k {
                return Err(Error::InvalidInput(format!(
                    "symbol {s} wider than k = {k} bits"
                )));
            }
        }
        let mut state = 0usize;
        let mut out = Vec::with_capacity(self.codeword_len(w.len()));
        for &s in w {
            let (next, block) = self.step(state, s);
            out.extend_from_slice(&block);
            state = next;
        }
        for _ in 0..self.memory() {
            let (next, block) = self.step(state, 0);
            out.extend_from_slice(&block);
            state = next;
        }
        debug_assert_eq!(state, 0, "termination must end in the zero state");
        Ok(out)
    }

    /// Inner code rate `R_I = N_o * k / (N * log2(q))` as an exact rational.
    pub fn rate(&self, n_outer: usize) -> Ratio<u64> {
        let bits = symbol_bits(self.q()).expect("q validated at construction");
        Ratio::new(
            (n_outer * self.k()) as u64,
            (self.codeword_len(n_outer) * bits) as u64,
        )
    }
}

/// Pseudo-random offset sequence, known to encoder and decoder, added
/// symbolwise modulo `q` before transmission to maintain synchronization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OffsetSequence {
    pub seed: u64,
    pub q: usize,
    symbols: Vec<Symbol>,
}

impl OffsetSequence {
    /// Generates `len` uniform symbols from a keyed counter-based stream;
    /// regenerable exactly from `(seed, len, q)`.
    pub fn generate(seed: u64, len: usize, q: usize) -> Result<Self> {
        symbol_bits(q)?;
        let mut rng = seeds::rng_from_seed(seed);
        let mask = (q - 1) as u32;
        let symbols = (0..len).map(|_| (rng.next_u32() & mask) as Symbol).collect();
        Ok(Self { seed, q, symbols })
    }

    /// All-zero offset (disables the watermark layer).
    pub fn zero(len: usize, q: usize) -> Result<Self> {
        symbol_bits(q)?;
        Ok(Self { seed: 0, q, symbols: vec![0; len] })
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// `x_i = (v_i + r_i) mod q`.
pub fn apply_offset(v: &[Symbol], offset: &OffsetSequence) -> Result<Vec<Symbol>> {
    if v.len() != offset.len() {
        return Err(Error::LengthMismatch {
            context: "offset application",
            expected: offset.len(),
            actual: v.len(),
        });
    }
    let q = offset.q as u16;
    Ok(v.iter()
        .zip(offset.symbols())
        .map(|(&a, &r)| ((a as u16 + r as u16) % q) as Symbol)
        .collect())
}

/// Inverse of [`apply_offset`].
pub fn remove_offset(x: &[Symbol], offset: &OffsetSequence) -> Result<Vec<Symbol>> {
    if x.len() != offset.len() {
        return Err(Error::LengthMismatch {
            context: "offset removal",
            expected: offset.len(),
            actual: x.len(),
        });
    }
    let q = offset.q as u16;
    Ok(x.iter()
        .zip(offset.symbols())
        .map(|(&a, &r)| ((a as u16 + q - r as u16) % q) as Symbol)
        .collect())
}

/// Encoded-bit view of an encode step, used by tests.
pub fn conv_output_bits(code: &ConvCodeSpec, w: &[u8]) -> Result<Vec<u8>> {
    symbols_to_bits(&InnerCode::Conv(code.clone()).encode(w)?, code.q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cc57() -> ConvCodeSpec {
        // (1 + D^2, 1 + D + D^2), two output bits packed into one quaternary symbol
        ConvCodeSpec::from_octal(4, 1, 1, 2, &["5".into(), "7".into()]).unwrap()
    }

    #[test]
    fn shift_register_trace() {
        // input bits (1,0,0): step outputs (1,1), (0,1), (1,1) -> symbols 3, 1, 3
        let code = cc57();
        let mut state = 0;
        let mut symbols = Vec::new();
        for &b in &[1u8, 0, 0] {
            let (next, out) = code.step(state, b);
            symbols.extend(out);
            state = next;
        }
        assert_eq!(symbols, vec![3, 1, 3]);
    }

    #[test]
    fn terminated_length_and_zero_word() {
        let code = InnerCode::Conv(cc57());
        let w = vec![0u8; 960];
        let x = code.encode(&w).unwrap();
        assert_eq!(x.len(), 962);
        assert!(x.iter().all(|&s| s == 0));
    }

    #[test]
    fn termination_reaches_zero_state() {
        let code = cc57();
        for word in 0u8..32 {
            let w: Vec<u8> = (0..5).map(|i| (word >> i) & 1).collect();
            let mut state = 0;
            for &b in &w {
                state = code.step(state, b).0;
            }
            for _ in 0..code.m {
                state = code.step(state, 0).0;
            }
            assert_eq!(state, 0);
        }
    }

    #[test]
    fn encoding_is_injective_on_small_sets() {
        let code = InnerCode::Conv(cc57());
        let mut seen = std::collections::HashSet::new();
        for word in 0u8..64 {
            let w: Vec<u8> = (0..6).map(|i| (word >> i) & 1).collect();
            assert!(seen.insert(code.encode(&w).unwrap()), "collision at {word}");
        }
    }

    #[test]
    fn sparse_watermark_codebook() {
        let wm = WatermarkSpec::sparse(4, 3, 3).unwrap();
        assert_eq!(wm.word(0), &[0, 0, 0]);
        // weight-1 six-bit words in numeric order: 000001, 000010, ..., 100000
        assert_eq!(wm.word(1), &[0, 0, 1]);
        assert_eq!(wm.word(2), &[0, 0, 2]);
        assert_eq!(wm.word(3), &[0, 1, 0]);
        assert_eq!(wm.word(4), &[0, 2, 0]);
        assert_eq!(wm.word(5), &[1, 0, 0]);
        assert_eq!(wm.word(6), &[2, 0, 0]);
        // first weight-2 word: 000011
        assert_eq!(wm.word(7), &[0, 0, 3]);
    }

    #[test]
    fn watermark_lengths_and_injectivity() {
        let wm = InnerCode::Watermark(WatermarkSpec::sparse(4, 3, 3).unwrap());
        let w = vec![0u8; 336];
        assert_eq!(wm.encode(&w).unwrap().len(), 1008);
        let mut seen = std::collections::HashSet::new();
        for a in 0u8..8 {
            assert!(seen.insert(wm.encode(&[a]).unwrap()));
        }
    }

    #[test]
    fn codebook_file_round_trip() {
        let text = "0 0,0\n1 1,3\n# comment\n2 2,2\n3 3,1\n";
        let wm = WatermarkSpec::parse_codebook(text, 4, 2, 2).unwrap();
        assert_eq!(wm.word(1), &[1, 3]);
        assert_eq!(wm.word(3), &[3, 1]);
        let bad = WatermarkSpec::parse_codebook("0 0,0\n1 0,0\n2 1,0\n3 2,0\n", 4, 2, 2);
        assert!(bad.is_err());
        let truncated = WatermarkSpec::parse_codebook("0 0,0\n1 1,1\n", 4, 2, 2);
        assert!(truncated.is_err());
    }

    #[test]
    fn rates_match_published_parameters() {
        let cc = InnerCode::Conv(cc57());
        assert_eq!(cc.rate(960), Ratio::new(960, 962 * 2));
        let wm = InnerCode::Watermark(WatermarkSpec::sparse(4, 3, 3).unwrap());
        assert_eq!(wm.rate(336), Ratio::new(1, 2));
        // m = 0 with n*log2(q) = k gives rate 1
        let unit = InnerCode::Watermark(
            WatermarkSpec::from_codebook(4, 2, 1, vec![vec![0], vec![1], vec![2], vec![3]]).unwrap(),
        );
        assert_eq!(unit.rate(17), Ratio::new(1, 1));
    }

    #[test]
    fn offset_pins() {
        let zero = OffsetSequence::zero(3, 4).unwrap();
        assert_eq!(apply_offset(&[1, 2, 3], &zero).unwrap(), vec![1, 2, 3]);
        let threes = OffsetSequence { seed: 0, q: 4, symbols: vec![3, 3, 3] };
        assert_eq!(apply_offset(&[1, 2, 3], &threes).unwrap(), vec![0, 1, 2]);
        assert!(apply_offset(&[1, 2], &threes).is_err());
    }

    #[test]
    fn offset_regenerable_from_seed() {
        let a = OffsetSequence::generate(99, 1000, 4).unwrap();
        let b = OffsetSequence::generate(99, 1000, 4).unwrap();
        assert_eq!(a, b);
        // roughly uniform
        let mut counts = [0usize; 4];
        for &s in a.symbols() {
            counts[s as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c > 180 && c < 320), "{counts:?}");
    }

    proptest! {
        #[test]
        fn offset_round_trip(v in proptest::collection::vec(0u8..4, 0..64), seed in 0u64..1000) {
            let offset = OffsetSequence::generate(seed, v.len(), 4).unwrap();
            let x = apply_offset(&v, &offset).unwrap();
            prop_assert_eq!(remove_offset(&x, &offset).unwrap(), v);
        }
    }
}
