//! Row-stochastic matrices of per-symbol distributions.

use crate::error::{Error, Result};

/// Per-outer-symbol distributions over the `2^k` field values: one
/// normalized row per symbol. Used both for posteriors (APPs) and priors.
#[derive(Clone, Debug, PartialEq)]
pub struct AppMatrix {
    rows: usize,
    cols: usize,
    vals: Vec<f64>,
}

/// Priors fed to the inner decoder; same layout as [`AppMatrix`].
pub type PriorMatrix = AppMatrix;

impl AppMatrix {
    /// All rows uniform.
    pub fn uniform(rows: usize, cols: usize) -> Self {
        assert!(cols > 0, "distributions need at least one value");
        Self { rows, cols, vals: vec![1.0 / cols as f64; rows * cols] }
    }

    /// Builds from raw rows, normalizing each; rows must have equal length
    /// and a positive sum of non-negative finite entries.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(1);
        let mut m = Self { rows: rows.len(), cols, vals: Vec::with_capacity(rows.len() * cols) };
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::LengthMismatch {
                    context: "AppMatrix row",
                    expected: cols,
                    actual: row.len(),
                });
            }
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "row {i} contains a negative or non-finite entry"
                )));
            }
            m.vals.extend_from_slice(row);
        }
        m.normalize_rows()?;
        Ok(m)
    }

    /// Zero-filled matrix for incremental accumulation.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(cols > 0);
        Self { rows, cols, vals: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.vals[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.vals[i * self.cols..(i + 1) * self.cols]
    }

    /// Renormalizes every row to sum 1; errors on an all-zero row.
    pub fn normalize_rows(&mut self) -> Result<()> {
        for i in 0..self.rows {
            let row = self.row_mut(i);
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 || !sum.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "row {i} has non-positive mass {sum}"
                )));
            }
            row.iter_mut().for_each(|p| *p /= sum);
        }
        Ok(())
    }

    /// Index of the largest entry in row `i`, ties broken toward the
    /// smaller value.
    pub fn argmax_row(&self, i: usize) -> usize {
        let row = self.row(i);
        let mut best = 0;
        for (j, &p) in row.iter().enumerate().skip(1) {
            if p > row[best] {
                best = j;
            }
        }
        best
    }

    /// True when every row sums to 1 within `tol` and entries are
    /// non-negative.
    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        (0..self.rows).all(|i| {
            let row = self.row(i);
            row.iter().all(|&p| p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= tol
        })
    }

    /// Largest absolute entrywise difference to another matrix of the same
    /// shape.
    pub fn max_abs_diff(&self, other: &AppMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.vals
            .iter()
            .zip(&other.vals)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
