//! Alphabet and finite-field arithmetic shared by all modules.
//!
//! Channel symbols are `u8` values in `[0, q)` for an alphabet size `q` that
//! is a power of two (`q = 4` for DNA). Outer-code symbols are elements of
//! the binary extension field `F_{2^k}`, also stored as `u8`, with addition
//! realized as XOR and multiplication through log/antilog tables.

use crate::error::{Error, Result};

/// A channel symbol: a value in `[0, q)`.
pub type Symbol = u8;

/// Returns `log2(q)` if `q` is a power of two and at least 2.
pub fn symbol_bits(q: usize) -> Result<usize> {
    if q < 2 || !q.is_power_of_two() || q > 256 {
        return Err(Error::InvalidInput(format!(
            "alphabet size must be a power of two in [2, 256], got {q}"
        )));
    }
    Ok(q.trailing_zeros() as usize)
}

/// Packs a bit string into q-ary symbols, `log2(q)` bits per symbol, first
/// bit most significant.
pub fn bits_to_symbols(bits: &[u8], q: usize) -> Result<Vec<Symbol>> {
    let b = symbol_bits(q)?;
    if bits.len() % b != 0 {
        return Err(Error::InvalidInput(format!(
            "bit count {} is not divisible by log2(q) = {b}",
            bits.len()
        )));
    }
    bits.chunks(b)
        .map(|chunk| {
            let mut v = 0u16;
            for &bit in chunk {
                if bit > 1 {
                    return Err(Error::InvalidInput(format!("bit value {bit} is not 0/1")));
                }
                v = (v << 1) | bit as u16;
            }
            Ok(v as u8)
        })
        .collect()
}

/// Unpacks q-ary symbols into bits; inverse of [`bits_to_symbols`].
pub fn symbols_to_bits(symbols: &[Symbol], q: usize) -> Result<Vec<u8>> {
    let b = symbol_bits(q)?;
    let mut bits = Vec::with_capacity(symbols.len() * b);
    for &s in symbols {
        if (s as usize) >= q {
            return Err(Error::InvalidInput(format!(
                "symbol {s} out of range for alphabet size {q}"
            )));
        }
        for i in (0..b).rev() {
            bits.push((s >> i) & 1);
        }
    }
    Ok(bits)
}

/// DNA base characters for `q = 4`, in symbol order `0..4`.
pub const DNA_BASES: [char; 4] = ['A', 'C', 'G', 'T'];

/// Formats a symbol sequence as text: `ACGT` characters when `q == 4`,
/// comma-separated integers otherwise.
pub fn format_symbols(symbols: &[Symbol], q: usize) -> String {
    if q == 4 {
        symbols.iter().map(|&s| DNA_BASES[s as usize & 3]).collect()
    } else {
        symbols
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Parses a symbol sequence in the format produced by [`format_symbols`].
///
/// The `line` argument is used in error messages.
pub fn parse_symbols(text: &str, q: usize, line: usize) -> Result<Vec<Symbol>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    if q == 4 && !text.contains(',') && text.chars().all(|c| !c.is_ascii_digit()) {
        return text
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'A' => Ok(0),
                'C' => Ok(1),
                'G' => Ok(2),
                'T' => Ok(3),
                other => Err(Error::Parse {
                    line,
                    msg: format!("unexpected base character {other:?}"),
                }),
            })
            .collect();
    }
    text.split(',')
        .map(|tok| {
            let v: usize = tok.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("not an integer: {tok:?}"),
            })?;
            if v >= q {
                return Err(Error::Parse {
                    line,
                    msg: format!("symbol {v} out of range for q = {q}"),
                });
            }
            Ok(v as u8)
        })
        .collect()
}

/// Primitive polynomials used for `F_{2^k}`, indexed by `k`; entry `k`
/// encodes the polynomial bits including the leading term.
///
/// `F_4` uses x^2+x+1 and `F_8` uses x^3+x+1; nonbinary LDPC messages
/// depend on these, so they are fixed here rather than configurable.
const PRIMITIVE_POLYS: [u16; 9] = [
    0,           // unused
    0b10,        // F_2: x (addition/multiplication are mod-2 arithmetic)
    0b111,       // F_4: x^2 + x + 1
    0b1011,      // F_8: x^3 + x + 1
    0b10011,     // F_16: x^4 + x + 1
    0b100101,    // F_32: x^5 + x^2 + 1
    0b1000011,   // F_64: x^6 + x + 1
    0b10001001,  // F_128: x^7 + x^3 + 1
    0b100011011, // F_256: x^8 + x^4 + x^3 + x + 1
];

/// Arithmetic tables for the binary extension field `F_{2^k}`.
///
/// Elements are `u8` values in `[0, 2^k)` interpreted as polynomials over
/// `F_2` modulo a fixed primitive polynomial. Addition is XOR.
#[derive(Clone, Debug)]
pub struct Field {
    k: usize,
    q: usize,
    exp: Vec<u8>,
    log: Vec<u8>,
}

impl Field {
    /// Builds the field `F_{2^k}` for `1 <= k <= 8`.
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 || k > 8 {
            return Err(Error::InvalidInput(format!(
                "field exponent k must be in [1, 8], got {k}"
            )));
        }
        let q = 1usize << k;
        let poly = PRIMITIVE_POLYS[k] as usize;
        let mut exp = vec![0u8; q - 1];
        let mut log = vec![0u8; q];
        if k == 1 {
            exp[0] = 1;
        } else {
            let mut v = 1usize;
            for (i, e) in exp.iter_mut().enumerate() {
                *e = v as u8;
                log[v] = i as u8;
                v <<= 1;
                if v & q != 0 {
                    v ^= poly;
                }
            }
        }
        Ok(Self { k, q, exp, log })
    }

    /// Field exponent `k`.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Field order `2^k`.
    pub fn order(&self) -> usize {
        self.q
    }

    fn check(&self, a: u8) -> Result<()> {
        if (a as usize) < self.q {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "element {a} out of range for F_{}",
                self.q
            )))
        }
    }

    /// Field addition (XOR of representations).
    #[inline]
    pub fn add(&self, a: u8, b: u8) -> u8 {
        a ^ b
    }

    /// Field multiplication via log/antilog tables.
    #[inline]
    pub fn mul(&self, a: u8, b: u8) -> u8 {
        if a == 0 || b == 0 {
            return 0;
        }
        if self.k == 1 {
            return 1;
        }
        let s = self.log[a as usize] as usize + self.log[b as usize] as usize;
        self.exp[s % (self.q - 1)]
    }

    /// Multiplicative inverse of a nonzero element.
    pub fn inv(&self, a: u8) -> Result<u8> {
        self.check(a)?;
        if a == 0 {
            return Err(Error::InvalidInput("zero has no inverse".into()));
        }
        if self.k == 1 {
            return Ok(1);
        }
        let l = self.log[a as usize] as usize;
        Ok(self.exp[(self.q - 1 - l) % (self.q - 1)])
    }

    /// `a / b` for nonzero `b`.
    pub fn div(&self, a: u8, b: u8) -> Result<u8> {
        Ok(self.mul(a, self.inv(b)?))
    }
}
