//! Outer binary and nonbinary LDPC codes: sparse parity-check matrices,
//! alist interchange, quasi-cyclic construction, systematic encoding, and
//! belief-propagation decoding with extrinsic output.

use rand::RngCore;

use crate::alphabet::Field;
use crate::app::AppMatrix;
use crate::error::{Error, Result};
use crate::seeds;

/// LLR magnitude cap for the binary decoder; keeps `atanh` finite.
const LLR_MAX: f64 = 36.0;

/// Sparse parity-check matrix over `F_{2^k}`.
///
/// Entries are `(row, col, coeff)` with nonzero coefficients; binary
/// matrices have all coefficients 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParityCheckMatrix {
    rows: usize,
    cols: usize,
    field_k: usize,
    entries: Vec<(u32, u32, u8)>,
    row_adj: Vec<Vec<(u32, u8)>>,
    col_adj: Vec<Vec<(u32, u8)>>,
}

impl ParityCheckMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        field_k: usize,
        mut entries: Vec<(u32, u32, u8)>,
    ) -> Result<Self> {
        let field = Field::new(field_k)?;
        let q = field.order() as u8;
        entries.sort_unstable();
        let mut row_adj = vec![Vec::new(); rows];
        let mut col_adj = vec![Vec::new(); cols];
        let mut prev: Option<(u32, u32)> = None;
        for &(r, c, h) in &entries {
            if r as usize >= rows || c as usize >= cols {
                return Err(Error::InvalidInput(format!(
                    "entry ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
            if h == 0 || h >= q {
                return Err(Error::InvalidInput(format!(
                    "coefficient {h} at ({r}, {c}) not a nonzero element of F_{q}"
                )));
            }
            if prev == Some((r, c)) {
                return Err(Error::InvalidInput(format!("duplicate entry at ({r}, {c})")));
            }
            prev = Some((r, c));
            row_adj[r as usize].push((c, h));
            col_adj[c as usize].push((r, h));
        }
        Ok(Self { rows, cols, field_k, entries, row_adj, col_adj })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Field exponent `k`; the code is over `F_{2^k}`.
    pub fn field_k(&self) -> usize {
        self.field_k
    }

    pub fn field(&self) -> Field {
        Field::new(self.field_k).expect("validated at construction")
    }

    pub fn entries(&self) -> &[(u32, u32, u8)] {
        &self.entries
    }

    /// Checks of column `c` as `(row, coeff)` pairs.
    pub fn col_checks(&self, c: usize) -> &[(u32, u8)] {
        &self.col_adj[c]
    }

    /// Variables of row `r` as `(col, coeff)` pairs.
    pub fn row_vars(&self, r: usize) -> &[(u32, u8)] {
        &self.row_adj[r]
    }

    /// Syndrome `H * c` over the field.
    pub fn syndrome(&self, codeword: &[u8]) -> Result<Vec<u8>> {
        if codeword.len() != self.cols {
            return Err(Error::LengthMismatch {
                context: "syndrome input",
                expected: self.cols,
                actual: codeword.len(),
            });
        }
        let field = self.field();
        Ok(self
            .row_adj
            .iter()
            .map(|row| {
                row.iter().fold(0u8, |acc, &(c, h)| {
                    field.add(acc, field.mul(h, codeword[c as usize]))
                })
            })
            .collect())
    }

    pub fn is_codeword(&self, codeword: &[u8]) -> bool {
        self.syndrome(codeword).map_or(false, |s| s.iter().all(|&v| v == 0))
    }

    /// Rank over the field, by Gaussian elimination on a dense copy.
    pub fn rank(&self) -> usize {
        elimination(self).pivots.len()
    }

    /// Parses MacKay alist text. Binary files start with `cols rows`;
    /// the nonbinary extension starts with `cols rows q` and lists
    /// `index coeff` pairs instead of bare indices.
    pub fn from_alist_str(text: &str) -> Result<Self> {
        AlistParser::new(text).parse()
    }

    pub fn read_alist(path: &std::path::Path) -> Result<Self> {
        Self::from_alist_str(&std::fs::read_to_string(path)?)
    }

    /// Serializes to alist text; inverse of [`Self::from_alist_str`].
    pub fn to_alist_string(&self) -> String {
        let nonbinary = self.field_k > 1;
        let mut out = String::new();
        if nonbinary {
            out.push_str(&format!("{} {} {}\n", self.cols, self.rows, 1 << self.field_k));
        } else {
            out.push_str(&format!("{} {}\n", self.cols, self.rows));
        }
        let max_col = self.col_adj.iter().map(Vec::len).max().unwrap_or(0);
        let max_row = self.row_adj.iter().map(Vec::len).max().unwrap_or(0);
        out.push_str(&format!("{max_col} {max_row}\n"));
        let degrees = |adj: &[Vec<(u32, u8)>]| {
            adj.iter().map(|a| a.len().to_string()).collect::<Vec<_>>().join(" ")
        };
        out.push_str(&degrees(&self.col_adj));
        out.push('\n');
        out.push_str(&degrees(&self.row_adj));
        out.push('\n');
        let lists = |adj: &[Vec<(u32, u8)>], out: &mut String| {
            for a in adj {
                let line = a
                    .iter()
                    .map(|&(idx, h)| {
                        if nonbinary {
                            format!("{} {}", idx + 1, h)
                        } else {
                            format!("{}", idx + 1)
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ");
                out.push_str(&line);
                out.push('\n');
            }
        };
        lists(&self.col_adj, &mut out);
        lists(&self.row_adj, &mut out);
        out
    }

    pub fn write_alist(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_alist_string())?;
        Ok(())
    }

    /// Quasi-cyclic expansion of the shipped rate-1/2 base model matrix to
    /// `n_o` columns; `n_o` must be a positive multiple of 24.
    pub fn construct_wimax(n_o: usize) -> Result<Self> {
        let base = wimax_base()?;
        if n_o == 0 || n_o % 24 != 0 {
            return Err(Error::InvalidInput(format!(
                "unsupported size: n_o = {n_o} is not a multiple of 24"
            )));
        }
        let z = n_o / 24;
        let mut entries = Vec::new();
        for (bi, row) in base.iter().enumerate() {
            for (bj, &shift) in row.iter().enumerate() {
                if shift < 0 {
                    continue;
                }
                let s = (shift as usize * z) / 96;
                for e in 0..z {
                    let r = (bi * z + e) as u32;
                    let c = (bj * z + (e + s) % z) as u32;
                    entries.push((r, c, 1));
                }
            }
        }
        Self::new(12 * z, 24 * z, 1, entries)
    }

    /// Nonbinary variant: the same base-graph expansion scaled to `n_o`
    /// columns, with each nonzero entry labeled by a uniformly drawn
    /// nonzero element of `F_{2^k}`. Deterministic given the seed; labels
    /// are redrawn (bumping the seed) until the matrix has full rank.
    pub fn construct_wimax_like_nb(n_o: usize, field_k: usize, seed: u64) -> Result<Self> {
        let binary = Self::construct_wimax(n_o)?;
        let field = Field::new(field_k)?;
        let q = field.order() as u32;
        for attempt in 0..64 {
            let mut rng = seeds::rng_from_seed(seeds::derive(seed, attempt));
            let entries = binary
                .entries
                .iter()
                .map(|&(r, c, _)| {
                    let h = (rng.next_u32() % (q - 1) + 1) as u8;
                    (r, c, h)
                })
                .collect();
            let h = Self::new(binary.rows, binary.cols, field_k, entries)?;
            if h.rank() == h.rows {
                return Ok(h);
            }
        }
        Err(Error::RankDeficient { rank: 0, rows: binary.rows })
    }
}

fn wimax_base() -> Result<Vec<Vec<i32>>> {
    let text = include_str!("../data/wimax_r12_base.txt");
    let mut base = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<i32>().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: format!("not an integer: {tok:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != 24 {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected 24 shifts, got {}", row.len()),
            });
        }
        base.push(row);
    }
    if base.len() != 12 {
        return Err(Error::Parse { line: 0, msg: format!("expected 12 base rows, got {}", base.len()) });
    }
    Ok(base)
}

struct AlistParser<'a> {
    tokens: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> AlistParser<'a> {
    fn new(text: &'a str) -> Self {
        let tokens = text
            .lines()
            .enumerate()
            .flat_map(|(i, line)| line.split_whitespace().map(move |t| (i + 1, t)))
            .collect();
        Self { tokens, pos: 0 }
    }

    fn next_usize(&mut self, what: &str) -> Result<(usize, usize)> {
        let Some(&(line, tok)) = self.tokens.get(self.pos) else {
            let line = self.tokens.last().map_or(1, |&(l, _)| l);
            return Err(Error::Parse { line, msg: format!("file truncated, expected {what}") });
        };
        self.pos += 1;
        let v = tok.parse::<usize>().map_err(|_| Error::Parse {
            line,
            msg: format!("expected {what}, got {tok:?}"),
        })?;
        Ok((line, v))
    }

    fn parse(mut self) -> Result<ParityCheckMatrix> {
        let (first_line, cols) = self.next_usize("column count")?;
        let (_, rows) = self.next_usize("row count")?;
        // nonbinary extension: a third number (field order) on the first line
        let nonbinary = matches!(self.tokens.get(self.pos), Some(&(l, _)) if l == first_line);
        let field_k = if nonbinary {
            let (line, q) = self.next_usize("field order")?;
            if !q.is_power_of_two() || q < 4 || q > 256 {
                return Err(Error::Parse {
                    line,
                    msg: format!("field order {q} is not a supported power of two"),
                });
            }
            q.trailing_zeros() as usize
        } else {
            1
        };
        let (_, _max_col) = self.next_usize("max column degree")?;
        let (_, _max_row) = self.next_usize("max row degree")?;
        let col_deg = (0..cols)
            .map(|_| self.next_usize("column degree").map(|(_, v)| v))
            .collect::<Result<Vec<_>>>()?;
        let row_deg = (0..rows)
            .map(|_| self.next_usize("row degree").map(|(_, v)| v))
            .collect::<Result<Vec<_>>>()?;
        let mut entries = Vec::new();
        for (c, &deg) in col_deg.iter().enumerate() {
            let mut got = 0usize;
            // MacKay files pad lists with zeros up to the max degree; read
            // exactly `deg` nonzero indices and tolerate interleaved zeros.
            while got < deg {
                let (line, idx) = self.next_usize("row index")?;
                if idx == 0 {
                    continue;
                }
                if idx > rows {
                    return Err(Error::Parse {
                        line,
                        msg: format!("row index {idx} out of range (rows = {rows})"),
                    });
                }
                let coeff = if nonbinary {
                    let (cline, h) = self.next_usize("coefficient")?;
                    if h == 0 || h >= (1 << field_k) {
                        return Err(Error::Parse {
                            line: cline,
                            msg: format!("coefficient {h} not a nonzero field element"),
                        });
                    }
                    h as u8
                } else {
                    1
                };
                entries.push(((idx - 1) as u32, c as u32, coeff));
                got += 1;
            }
        }
        // row lists are redundant; consume and cross-check degrees
        for (r, &deg) in row_deg.iter().enumerate() {
            let mut got = 0usize;
            while got < deg {
                let (line, idx) = self.next_usize("column index")?;
                if idx == 0 {
                    continue;
                }
                if idx > cols {
                    return Err(Error::Parse {
                        line,
                        msg: format!("column index {idx} out of range (cols = {cols})"),
                    });
                }
                if nonbinary {
                    self.next_usize("coefficient")?;
                }
                got += 1;
            }
            let have = entries.iter().filter(|&&(er, _, _)| er as usize == r).count();
            if have != deg {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("row {r} degree {deg} does not match column lists ({have})"),
                });
            }
        }
        ParityCheckMatrix::new(rows, cols, field_k, entries)
    }
}

/// Result of Gaussian elimination: reduced rows and their pivot columns.
struct Elimination {
    /// pivot column of each reduced row
    pivots: Vec<usize>,
    /// dense reduced rows over the field, one per pivot
    reduced: Vec<Vec<u8>>,
}

/// Gaussian elimination preferring pivots in the rightmost columns, so the
/// systematic (information) positions land in the leftmost columns.
fn elimination(h: &ParityCheckMatrix) -> Elimination {
    let field = h.field();
    let mut dense: Vec<Vec<u8>> = (0..h.rows()).map(|_| vec![0u8; h.cols()]).collect();
    for &(r, c, coeff) in h.entries() {
        dense[r as usize][c as usize] = coeff;
    }
    let mut assigned: Vec<(usize, usize)> = Vec::new(); // (pivot col, row)
    let mut used = vec![false; h.rows()];
    for col in (0..h.cols()).rev() {
        let Some(pr) = (0..h.rows()).find(|&r| !used[r] && dense[r][col] != 0) else {
            continue;
        };
        used[pr] = true;
        let inv = field.inv(dense[pr][col]).expect("pivot nonzero");
        for v in dense[pr].iter_mut() {
            *v = field.mul(*v, inv);
        }
        let pivot_row = dense[pr].clone();
        for (r, row) in dense.iter_mut().enumerate() {
            if r == pr || row[col] == 0 {
                continue;
            }
            let factor = row[col];
            for (v, &p) in row.iter_mut().zip(&pivot_row) {
                *v = field.add(*v, field.mul(factor, p));
            }
        }
        assigned.push((col, pr));
        if assigned.len() == h.rows() {
            break;
        }
    }
    assigned.sort_unstable();
    let pivots = assigned.iter().map(|&(c, _)| c).collect();
    let reduced = assigned.iter().map(|&(_, r)| dense[r].clone()).collect();
    Elimination { pivots, reduced }
}

/// Systematic encoder for a full-rank parity-check matrix.
///
/// Information symbols occupy the non-pivot columns (pivots are chosen
/// rightmost-first, so these are the leftmost `K` columns when the parity
/// part is invertible); parity symbols are solved from the reduced rows.
#[derive(Clone, Debug)]
pub struct LdpcEncoder {
    cols: usize,
    field_k: usize,
    info_cols: Vec<usize>,
    /// per pivot: (pivot column, terms over info positions)
    parity: Vec<(usize, Vec<(usize, u8)>)>,
}

impl LdpcEncoder {
    pub fn new(h: &ParityCheckMatrix) -> Result<Self> {
        let elim = elimination(h);
        if elim.pivots.len() < h.rows() {
            return Err(Error::RankDeficient { rank: elim.pivots.len(), rows: h.rows() });
        }
        let pivot_set: std::collections::HashSet<usize> = elim.pivots.iter().copied().collect();
        let info_cols: Vec<usize> = (0..h.cols()).filter(|c| !pivot_set.contains(c)).collect();
        let info_index: std::collections::HashMap<usize, usize> =
            info_cols.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let parity = elim
            .pivots
            .iter()
            .zip(&elim.reduced)
            .map(|(&pc, row)| {
                let terms = row
                    .iter()
                    .enumerate()
                    .filter(|&(c, &v)| c != pc && v != 0)
                    .map(|(c, &v)| (info_index[&c], v))
                    .collect();
                (pc, terms)
            })
            .collect();
        Ok(Self { cols: h.cols(), field_k: h.field_k(), info_cols, parity })
    }

    /// Number of information symbols `K`.
    pub fn k(&self) -> usize {
        self.info_cols.len()
    }

    pub fn n(&self) -> usize {
        self.cols
    }

    /// Columns carrying information symbols, ascending.
    pub fn info_cols(&self) -> &[usize] {
        &self.info_cols
    }

    /// Encodes `u` into a codeword with `H * c = 0`.
    pub fn encode(&self, u: &[u8]) -> Result<Vec<u8>> {
        if u.len() != self.k() {
            return Err(Error::LengthMismatch {
                context: "information word",
                expected: self.k(),
                actual: u.len(),
            });
        }
        let field = Field::new(self.field_k)?;
        let q = field.order() as u8;
        if u.iter().any(|&v| v >= q) {
            return Err(Error::InvalidInput("information symbol out of field range".into()));
        }
        let mut c = vec![0u8; self.cols];
        for (&col, &v) in self.info_cols.iter().zip(u) {
            c[col] = v;
        }
        for (pc, terms) in &self.parity {
            // row is c_pivot + sum(term) = 0; in characteristic 2 the
            // negation is the identity
            let mut acc = 0u8;
            for &(ui, coeff) in terms {
                acc = field.add(acc, field.mul(coeff, u[ui]));
            }
            c[*pc] = acc;
        }
        Ok(c)
    }

    /// Extracts the information symbols from a codeword.
    pub fn extract_info(&self, codeword: &[u8]) -> Vec<u8> {
        self.info_cols.iter().map(|&c| codeword[c]).collect()
    }
}

/// Belief-propagation configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BpConfig {
    pub max_iterations: usize,
    /// Check the syndrome each iteration and stop early on success.
    pub early_stop: bool,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self { max_iterations: 100, early_stop: true }
    }
}

/// Decoder outcome. `converged` implies the hard decision has zero
/// syndrome (and that no posterior row was an exact tie).
#[derive(Clone, Debug)]
pub struct DecodeOutcome {
    pub hard_decision: Vec<u8>,
    /// Per-symbol extrinsic distributions: the product of check messages
    /// only, excluding the channel input.
    pub extrinsic: AppMatrix,
    pub converged: bool,
    pub iterations_used: usize,
}

/// Sum-product decoding of `channel_apps` against `h`. Dispatches to the
/// LLR-domain tanh rule for binary codes and to probability-domain
/// field convolutions for nonbinary codes.
pub fn bp_decode(
    channel_apps: &AppMatrix,
    h: &ParityCheckMatrix,
    cfg: &BpConfig,
) -> Result<DecodeOutcome> {
    if channel_apps.rows() != h.cols() || channel_apps.cols() != 1 << h.field_k() {
        return Err(Error::LengthMismatch {
            context: "channel APP shape",
            expected: h.cols() * (1 << h.field_k()),
            actual: channel_apps.rows() * channel_apps.cols(),
        });
    }
    if cfg.max_iterations == 0 {
        return Err(Error::InvalidInput("max_iterations must be >= 1".into()));
    }
    if h.field_k() == 1 {
        bp_decode_binary(channel_apps, h, cfg)
    } else {
        bp_decode_nonbinary(channel_apps, h, cfg)
    }
}

/// Hard decision of one distribution row: argmax with ties toward the
/// smaller value; reports whether the maximum was tied.
fn hard_decide(row: &[f64]) -> (u8, bool) {
    let mut best = 0usize;
    let mut tied = false;
    for (j, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = j;
            tied = false;
        } else if p == row[best] {
            tied = true;
        }
    }
    (best as u8, tied)
}

fn decision_pass(dist: impl Iterator<Item = (u8, bool)>, h: &ParityCheckMatrix) -> (Vec<u8>, bool) {
    let mut any_tie = false;
    let hard: Vec<u8> = dist
        .map(|(v, tie)| {
            any_tie |= tie;
            v
        })
        .collect();
    let ok = !any_tie && h.is_codeword(&hard);
    (hard, ok)
}

/// LLR-domain sum-product decoder for binary codes.
pub fn bp_decode_binary(
    channel_apps: &AppMatrix,
    h: &ParityCheckMatrix,
    cfg: &BpConfig,
) -> Result<DecodeOutcome> {
    let n = h.cols();
    let llr_of = |row: &[f64]| -> f64 {
        let l = (row[0].ln() - row[1].ln()).clamp(-LLR_MAX, LLR_MAX);
        if l.is_nan() {
            0.0
        } else {
            l
        }
    };
    let channel_llr: Vec<f64> = (0..n).map(|v| llr_of(channel_apps.row(v))).collect();

    // iteration 0: accept sharp channel input that already is a codeword
    let (hard, ok) = decision_pass((0..n).map(|v| hard_decide(channel_apps.row(v))), h);
    if cfg.early_stop && ok {
        return Ok(DecodeOutcome {
            hard_decision: hard,
            extrinsic: AppMatrix::uniform(n, 2),
            converged: true,
            iterations_used: 0,
        });
    }

    // messages indexed per (check, position-in-check)
    let mut c2v: Vec<Vec<f64>> = h.row_adj.iter().map(|r| vec![0.0; r.len()]).collect();
    let mut v2c: Vec<Vec<f64>> = c2v.clone();
    let mut check_pos = vec![Vec::new(); n]; // per variable: (check, position)
    for (r, row) in h.row_adj.iter().enumerate() {
        for (pos, &(c, _)) in row.iter().enumerate() {
            check_pos[c as usize].push((r, pos));
        }
    }

    let mut iterations_used = cfg.max_iterations;
    let mut converged = false;
    let mut hard = hard;
    for it in 1..=cfg.max_iterations {
        // variable to check
        for v in 0..n {
            let total: f64 = check_pos[v].iter().map(|&(r, pos)| c2v[r][pos]).sum();
            for &(r, pos) in &check_pos[v] {
                v2c[r][pos] = (channel_llr[v] + total - c2v[r][pos]).clamp(-LLR_MAX, LLR_MAX);
            }
        }
        // check to variable: tanh rule with forward/backward partial products
        for r in 0..h.rows() {
            let deg = h.row_adj[r].len();
            let tanhs: Vec<f64> = (0..deg).map(|p| (v2c[r][p] / 2.0).tanh()).collect();
            let mut fwd = vec![1.0; deg + 1];
            let mut bwd = vec![1.0; deg + 1];
            for p in 0..deg {
                fwd[p + 1] = fwd[p] * tanhs[p];
                bwd[deg - 1 - p] = bwd[deg - p] * tanhs[deg - 1 - p];
            }
            for p in 0..deg {
                let prod = (fwd[p] * bwd[p + 1]).clamp(-0.999_999_999_999_999, 0.999_999_999_999_999);
                c2v[r][p] = 2.0 * prod.atanh();
            }
        }
        // decision on total posteriors
        let totals: Vec<f64> = (0..n)
            .map(|v| channel_llr[v] + check_pos[v].iter().map(|&(r, pos)| c2v[r][pos]).sum::<f64>())
            .collect();
        let decide = totals.iter().map(|&l| {
            if l > 0.0 {
                (0u8, false)
            } else if l < 0.0 {
                (1u8, false)
            } else {
                (0u8, true)
            }
        });
        let (h_now, ok) = decision_pass(decide, h);
        hard = h_now;
        if cfg.early_stop && ok {
            converged = true;
            iterations_used = it;
            break;
        }
        if !cfg.early_stop && it == cfg.max_iterations {
            converged = ok;
        }
    }

    // extrinsic: sum of check messages only
    let mut extr = AppMatrix::zeros(n, 2);
    for v in 0..n {
        let e: f64 = check_pos[v].iter().map(|&(r, pos)| c2v[r][pos]).sum();
        let e = e.clamp(-LLR_MAX, LLR_MAX);
        let p1 = 1.0 / (1.0 + e.exp());
        let row = extr.row_mut(v);
        row[0] = 1.0 - p1;
        row[1] = p1;
    }
    Ok(DecodeOutcome { hard_decision: hard, extrinsic: extr, converged, iterations_used })
}

/// Probability-domain sum-product decoder for nonbinary codes: check
/// updates convolve coefficient-permuted messages over the additive group
/// of `F_{2^k}` (XOR convolution), directly in O(deg * q^2) per check.
pub fn bp_decode_nonbinary(
    channel_apps: &AppMatrix,
    h: &ParityCheckMatrix,
    cfg: &BpConfig,
) -> Result<DecodeOutcome> {
    let n = h.cols();
    let field = h.field();
    let q = field.order();

    let (hard, ok) = decision_pass((0..n).map(|v| hard_decide(channel_apps.row(v))), h);
    if cfg.early_stop && ok {
        return Ok(DecodeOutcome {
            hard_decision: hard,
            extrinsic: AppMatrix::uniform(n, q),
            converged: true,
            iterations_used: 0,
        });
    }

    let uniform = vec![1.0 / q as f64; q];
    let mut c2v: Vec<Vec<Vec<f64>>> =
        h.row_adj.iter().map(|r| vec![uniform.clone(); r.len()]).collect();
    let mut v2c: Vec<Vec<Vec<f64>>> = c2v.clone();
    let mut check_pos = vec![Vec::new(); n];
    for (r, row) in h.row_adj.iter().enumerate() {
        for (pos, &(c, _)) in row.iter().enumerate() {
            check_pos[c as usize].push((r, pos));
        }
    }

    let normalize = |m: &mut [f64]| {
        let s: f64 = m.iter().sum();
        let len = m.len() as f64;
        if s > 0.0 {
            m.iter_mut().for_each(|p| *p /= s);
        } else {
            m.iter_mut().for_each(|p| *p = 1.0 / len);
        }
    };
    // XOR convolution of two distributions over the additive group
    let conv = |a: &[f64], b: &[f64]| {
        let mut out = vec![0.0; q];
        for (x, &pa) in a.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (y, &pb) in b.iter().enumerate() {
                out[x ^ y] += pa * pb;
            }
        }
        out
    };

    let mut iterations_used = cfg.max_iterations;
    let mut converged = false;
    let mut hard = hard;
    for it in 1..=cfg.max_iterations {
        // variable to check: channel times all other check messages
        for v in 0..n {
            for exclude in 0..check_pos[v].len() {
                let mut msg: Vec<f64> = channel_apps.row(v).to_vec();
                for (pos_idx, &(r, pos)) in check_pos[v].iter().enumerate() {
                    if pos_idx == exclude {
                        continue;
                    }
                    for (m, &c) in msg.iter_mut().zip(&c2v[r][pos]) {
                        *m *= c;
                    }
                }
                normalize(&mut msg);
                let (r, pos) = check_pos[v][exclude];
                v2c[r][pos] = msg;
            }
        }
        // check to variable
        for r in 0..h.rows() {
            let row = &h.row_adj[r];
            let deg = row.len();
            // permuted incoming messages: distribution of h_v * w_v
            let permuted: Vec<Vec<f64>> = (0..deg)
                .map(|p| {
                    let hc = row[p].1;
                    let mut out = vec![0.0; q];
                    for (a, &pv) in v2c[r][p].iter().enumerate() {
                        out[field.mul(hc, a as u8) as usize] = pv;
                    }
                    out
                })
                .collect();
            let mut fwd = vec![indicator_zero(q)];
            for p in 0..deg {
                let next = conv(&fwd[p], &permuted[p]);
                fwd.push(next);
            }
            let mut bwd = vec![indicator_zero(q); deg + 1];
            for p in (0..deg).rev() {
                bwd[p] = conv(&bwd[p + 1], &permuted[p]);
            }
            for p in 0..deg {
                // distribution of the sum of all other permuted symbols;
                // the check forces h_v * w_v equal to that sum
                let others = conv(&fwd[p], &bwd[p + 1]);
                let hc = row[p].1;
                let mut msg = vec![0.0; q];
                for (a, m) in msg.iter_mut().enumerate() {
                    *m = others[field.mul(hc, a as u8) as usize];
                }
                normalize(&mut msg);
                c2v[r][p] = msg;
            }
        }
        // total posteriors and decision
        let decide = (0..n).map(|v| {
            let mut total: Vec<f64> = channel_apps.row(v).to_vec();
            for &(r, pos) in &check_pos[v] {
                for (t, &c) in total.iter_mut().zip(&c2v[r][pos]) {
                    *t *= c;
                }
            }
            normalize(&mut total);
            hard_decide(&total)
        });
        let (h_now, ok) = decision_pass(decide, h);
        hard = h_now;
        if cfg.early_stop && ok {
            converged = true;
            iterations_used = it;
            break;
        }
        if !cfg.early_stop && it == cfg.max_iterations {
            converged = ok;
        }
    }

    let mut extr = AppMatrix::zeros(n, q);
    for v in 0..n {
        let row = extr.row_mut(v);
        row.iter_mut().for_each(|p| *p = 1.0);
        for &(r, pos) in &check_pos[v] {
            for (t, &c) in row.iter_mut().zip(&c2v[r][pos]) {
                *t *= c;
            }
        }
        normalize(row);
    }
    Ok(DecodeOutcome { hard_decision: hard, extrinsic: extr, converged, iterations_used })
}

fn indicator_zero(q: usize) -> Vec<f64> {
    let mut v = vec![0.0; q];
    v[0] = 1.0;
    v
}

/// Total posteriors (channel times all check messages) of a decode run are
/// not exposed; recompute hard decisions from `channel_apps` and
/// `extrinsic` when needed.
pub fn total_posterior(channel_apps: &AppMatrix, extrinsic: &AppMatrix) -> Result<AppMatrix> {
    if channel_apps.rows() != extrinsic.rows() || channel_apps.cols() != extrinsic.cols() {
        return Err(Error::LengthMismatch {
            context: "posterior shapes",
            expected: channel_apps.rows() * channel_apps.cols(),
            actual: extrinsic.rows() * extrinsic.cols(),
        });
    }
    let mut out = AppMatrix::zeros(channel_apps.rows(), channel_apps.cols());
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        for (j, r) in row.iter_mut().enumerate() {
            *r = channel_apps.row(i)[j] * extrinsic.row(i)[j];
        }
    }
    out.normalize_rows()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_binary() -> ParityCheckMatrix {
        // cycle-free: two checks on three variables
        ParityCheckMatrix::new(2, 3, 1, vec![(0, 0, 1), (0, 1, 1), (1, 1, 1), (1, 2, 1)]).unwrap()
    }

    #[test]
    fn alist_round_trip_binary() {
        let h = ParityCheckMatrix::new(
            2,
            4,
            1,
            vec![(0, 0, 1), (0, 1, 1), (0, 2, 1), (1, 1, 1), (1, 2, 1), (1, 3, 1)],
        )
        .unwrap();
        let text = h.to_alist_string();
        let parsed = ParityCheckMatrix::from_alist_str(&text).unwrap();
        assert_eq!(parsed, h);
        assert_eq!(parsed.to_alist_string(), text);
        assert_eq!(parsed.entries().len(), 6);
    }

    #[test]
    fn alist_round_trip_nonbinary() {
        let h = ParityCheckMatrix::new(
            2,
            3,
            3,
            vec![(0, 0, 3), (0, 1, 5), (1, 1, 1), (1, 2, 7)],
        )
        .unwrap();
        let text = h.to_alist_string();
        assert!(text.starts_with("3 2 8"));
        let parsed = ParityCheckMatrix::from_alist_str(&text).unwrap();
        assert_eq!(parsed, h);
    }

    #[test]
    fn alist_errors_name_the_line() {
        let truncated = "4 2\n3 3\n1 2 2 1\n3 3\n1\n1 2\n"; // missing data
        match ParityCheckMatrix::from_alist_str(truncated) {
            Err(Error::Parse { line, .. }) => assert!(line > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_index = "2 2\n1 1\n1 1\n1 1\n3\n1\n1\n2\n";
        assert!(matches!(
            ParityCheckMatrix::from_alist_str(bad_index),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn wimax_construction_shape_and_rank() {
        let h = ParityCheckMatrix::construct_wimax(960).unwrap();
        assert_eq!((h.rows(), h.cols()), (480, 960));
        // column weight profile matches the base matrix expansion
        let base = wimax_base().unwrap();
        let z = 40;
        for bj in 0..24 {
            let weight = base.iter().filter(|row| row[bj] >= 0).count();
            for e in 0..z {
                assert_eq!(h.col_checks(bj * z + e).len(), weight, "column {}", bj * z + e);
            }
        }
        assert_eq!(h.rank(), 480);
        assert!(ParityCheckMatrix::construct_wimax(100).is_err());
    }

    #[test]
    fn wimax_like_nb_is_deterministic_and_full_rank() {
        let a = ParityCheckMatrix::construct_wimax_like_nb(336, 3, 7).unwrap();
        let b = ParityCheckMatrix::construct_wimax_like_nb(336, 3, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.rows(), a.cols()), (168, 336));
        assert_eq!(a.rank(), 168);
        assert!(a.entries().iter().all(|&(_, _, h)| h >= 1 && h < 8));
    }

    #[test]
    fn encoder_systematic_and_zero_syndrome() {
        let h = ParityCheckMatrix::construct_wimax(240).unwrap();
        let enc = LdpcEncoder::new(&h).unwrap();
        assert_eq!(enc.k(), 120);
        let u: Vec<u8> = (0..120).map(|i| ((i * 7 + 3) % 2) as u8).collect();
        let c = enc.encode(&u).unwrap();
        assert!(h.is_codeword(&c));
        assert_eq!(enc.extract_info(&c), u);
        let zero = enc.encode(&vec![0; 120]).unwrap();
        assert!(zero.iter().all(|&v| v == 0));
    }

    #[test]
    fn encoder_nonbinary_zero_syndrome() {
        let h = ParityCheckMatrix::construct_wimax_like_nb(48, 3, 1).unwrap();
        let enc = LdpcEncoder::new(&h).unwrap();
        assert_eq!(enc.k(), 24);
        let u: Vec<u8> = (0..24).map(|i| (i % 8) as u8).collect();
        let c = enc.encode(&u).unwrap();
        assert!(h.is_codeword(&c));
        assert_eq!(enc.extract_info(&c), u);
    }

    #[test]
    fn rank_deficient_is_rejected() {
        // duplicate rows
        let h = ParityCheckMatrix::new(2, 3, 1, vec![(0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, 1)])
            .unwrap();
        assert!(matches!(LdpcEncoder::new(&h), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn bp_fixed_point_on_codeword_indicators() {
        let h = toy_binary();
        // codewords: 000 and 111 have zero syndrome? check: rows: v0+v1, v1+v2
        let c = vec![1u8, 1, 1];
        assert!(h.is_codeword(&c));
        let apps = AppMatrix::from_rows(vec![
            vec![1e-12, 1.0],
            vec![1e-12, 1.0],
            vec![1e-12, 1.0],
        ])
        .unwrap();
        let out = bp_decode(&apps, &h, &BpConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations_used, 0);
        assert_eq!(out.hard_decision, c);
    }

    #[test]
    fn bp_uniform_input_never_converges() {
        let h = toy_binary();
        let out = bp_decode(&AppMatrix::uniform(3, 2), &h, &BpConfig::default()).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations_used, 100);
        let nb = ParityCheckMatrix::new(1, 2, 3, vec![(0, 0, 1), (0, 1, 1)]).unwrap();
        let out = bp_decode(&AppMatrix::uniform(2, 8), &nb, &BpConfig::default()).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations_used, 100);
    }

    #[test]
    fn bp_tree_equals_exact_marginalization() {
        let h = toy_binary();
        let apps = AppMatrix::from_rows(vec![
            vec![0.9, 0.1],
            vec![0.4, 0.6],
            vec![0.3, 0.7],
        ])
        .unwrap();
        let out = bp_decode(&apps, &h, &BpConfig { max_iterations: 50, early_stop: false }).unwrap();
        // exact: codewords 000, 111
        let p000 = 0.9 * 0.4 * 0.3;
        let p111 = 0.1 * 0.6 * 0.7;
        let post1 = p111 / (p000 + p111);
        let total = total_posterior(&apps, &out.extrinsic).unwrap();
        for v in 0..3 {
            assert!(
                (total.row(v)[1] - post1).abs() < 1e-9,
                "variable {v}: {} vs {post1}",
                total.row(v)[1]
            );
        }
    }

    #[test]
    fn bp_corrects_single_flip_matching_ml() {
        // girth-6 [6,3] code with minimum distance 3
        let rows = [[1u8, 1, 0, 1, 0, 0], [0, 1, 1, 0, 1, 0], [1, 0, 1, 0, 0, 1]];
        let mut entries = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v == 1 {
                    entries.push((r as u32, c as u32, 1u8));
                }
            }
        }
        let h = ParityCheckMatrix::new(3, 6, 1, entries).unwrap();
        let codewords: Vec<Vec<u8>> = (0..64u32)
            .map(|w| (0..6).map(|i| ((w >> i) & 1) as u8).collect())
            .filter(|c: &Vec<u8>| h.is_codeword(c))
            .collect();
        assert_eq!(codewords.len(), 8);
        let p_flip: f64 = 0.1;
        for cw in &codewords {
            for flip in 0..6 {
                let mut r = cw.clone();
                r[flip] ^= 1;
                let apps = AppMatrix::from_rows(
                    r.iter()
                        .map(|&b| {
                            if b == 0 {
                                vec![1.0 - p_flip, p_flip]
                            } else {
                                vec![p_flip, 1.0 - p_flip]
                            }
                        })
                        .collect(),
                )
                .unwrap();
                let out = bp_decode(&apps, &h, &BpConfig::default()).unwrap();
                // exhaustive ML over the 16 codewords
                let lik = |cw: &[u8]| -> f64 {
                    cw.iter()
                        .zip(&r)
                        .map(|(&x, &y)| (if x == y { 1.0 - p_flip } else { p_flip }).ln())
                        .sum()
                };
                let ml = codewords
                    .iter()
                    .max_by(|a, b| lik(a).partial_cmp(&lik(b)).unwrap())
                    .unwrap();
                assert!(out.converged);
                assert_eq!(&out.hard_decision, ml);
                assert_eq!(&out.hard_decision, cw);
            }
        }
    }

    #[test]
    fn binary_and_nonbinary_agree_over_f2() {
        let h = ParityCheckMatrix::construct_wimax(48).unwrap();
        let mut rng = crate::seeds::rng_from_seed(5);
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..48)
                .map(|_| {
                    let p = 0.05 + 0.9 * (rng.next_u32() as f64 / u32::MAX as f64);
                    vec![p, 1.0 - p]
                })
                .collect();
            let apps = AppMatrix::from_rows(rows).unwrap();
            let cfg = BpConfig { max_iterations: 30, early_stop: true };
            let b = bp_decode_binary(&apps, &h, &cfg).unwrap();
            let nb = bp_decode_nonbinary(&apps, &h, &cfg).unwrap();
            assert_eq!(b.hard_decision, nb.hard_decision);
            assert_eq!(b.converged, nb.converged);
        }
    }

    #[test]
    fn converged_implies_zero_syndrome() {
        let h = ParityCheckMatrix::construct_wimax(120).unwrap();
        let enc = LdpcEncoder::new(&h).unwrap();
        let mut rng = crate::seeds::rng_from_seed(9);
        for trial in 0..10 {
            let u: Vec<u8> = (0..enc.k()).map(|_| (rng.next_u32() & 1) as u8).collect();
            let c = enc.encode(&u).unwrap();
            let rows: Vec<Vec<f64>> = c
                .iter()
                .map(|&b| {
                    let conf = 0.75 + 0.2 * (rng.next_u32() as f64 / u32::MAX as f64);
                    if b == 0 {
                        vec![conf, 1.0 - conf]
                    } else {
                        vec![1.0 - conf, conf]
                    }
                })
                .collect();
            let apps = AppMatrix::from_rows(rows).unwrap();
            let out = bp_decode(&apps, &h, &BpConfig::default()).unwrap();
            if out.converged {
                assert!(h.is_codeword(&out.hard_decision), "trial {trial}");
            }
        }
    }
}
