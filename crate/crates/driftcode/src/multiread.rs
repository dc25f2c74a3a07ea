//! Linear-complexity combination of per-read posteriors.
//!
//! Separate decoding runs one BCJR per read and approximates the joint
//! posterior by the product rule
//! `p(w_i | y_1, ..., y_M) ∝ prod_j p(w_i | y_j) / p(w_i)^(M-1)`,
//! which is exact when the reads are conditionally independent given the
//! single symbol (memoryless channel, memory-zero inner stage) and an
//! approximation otherwise. Combination happens at the outer-codeword-
//! symbol APP stage; alternative stages are out of scope.

use crate::app::{AppMatrix, PriorMatrix};
use crate::error::{Error, Result};

/// Numerical configuration of the combiner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CombinerConfig {
    /// Probabilities are raised to at least this floor before combination,
    /// preventing a single overconfident read from zeroing a product.
    /// Must satisfy `0 < clamp_floor < 2^-k`.
    pub clamp_floor: f64,
}

impl Default for CombinerConfig {
    fn default() -> Self {
        Self { clamp_floor: 1e-30 }
    }
}

/// Combines `M` per-read posterior matrices into an approximate joint
/// posterior. For `M = 1` the input is returned unchanged.
///
/// The product is evaluated in the log domain, so large `M` cannot
/// underflow.
pub fn separate_combine(
    apps: &[AppMatrix],
    prior: &PriorMatrix,
    cfg: &CombinerConfig,
) -> Result<AppMatrix> {
    let Some(first) = apps.first() else {
        return Err(Error::InvalidInput("need at least one posterior matrix".into()));
    };
    let (rows, cols) = (first.rows(), first.cols());
    if cfg.clamp_floor <= 0.0 || cfg.clamp_floor >= 1.0 / cols as f64 {
        return Err(Error::InvalidInput(format!(
            "clamp_floor {} not in (0, 2^-k)",
            cfg.clamp_floor
        )));
    }
    for m in apps.iter().chain(std::iter::once(prior)) {
        if m.rows() != rows || m.cols() != cols {
            return Err(Error::LengthMismatch {
                context: "separate_combine shapes",
                expected: rows * cols,
                actual: m.rows() * m.cols(),
            });
        }
    }
    if apps.len() == 1 {
        return Ok(first.clone());
    }

    let mut out = AppMatrix::zeros(rows, cols);
    let correction = (apps.len() - 1) as f64;
    for i in 0..rows {
        let mut logs = vec![0.0f64; cols];
        for (a, log) in logs.iter_mut().enumerate() {
            for app in apps {
                let p = app.row(i)[a];
                if !p.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite posterior entry in row {i}"
                    )));
                }
                *log += p.max(cfg.clamp_floor).ln();
            }
            *log -= correction * prior.row(i)[a].max(cfg.clamp_floor).ln();
        }
        let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return Err(Error::InvalidInput(format!(
                "row {i} is zero after clamping"
            )));
        }
        let row = out.row_mut(i);
        for (a, &log) in logs.iter().enumerate() {
            row[a] = (log - peak).exp();
        }
    }
    out.normalize_rows()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: Vec<Vec<f64>>) -> AppMatrix {
        AppMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn single_read_is_identity() {
        let a = mat(vec![vec![0.7, 0.3], vec![0.1, 0.9]]);
        let out = separate_combine(&[a.clone()], &AppMatrix::uniform(2, 2), &Default::default())
            .unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn two_read_product_pins() {
        let a = mat(vec![vec![0.8, 0.2]]);
        let uniform = AppMatrix::uniform(1, 2);
        let out =
            separate_combine(&[a.clone(), a.clone()], &uniform, &Default::default()).unwrap();
        assert!((out.row(0)[0] - 16.0 / 17.0).abs() < 1e-12);
        assert!((out.row(0)[1] - 1.0 / 17.0).abs() < 1e-12);
        // opposing reads cancel
        let b = mat(vec![vec![0.2, 0.8]]);
        let out = separate_combine(&[a, b], &uniform, &Default::default()).unwrap();
        assert!((out.row(0)[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariance() {
        let a = mat(vec![vec![0.6, 0.25, 0.1, 0.05]]);
        let b = mat(vec![vec![0.1, 0.2, 0.3, 0.4]]);
        let c = mat(vec![vec![0.25, 0.25, 0.4, 0.1]]);
        let prior = mat(vec![vec![0.4, 0.3, 0.2, 0.1]]);
        let abc = separate_combine(&[a.clone(), b.clone(), c.clone()], &prior, &Default::default())
            .unwrap();
        let cba = separate_combine(&[c, b, a], &prior, &Default::default()).unwrap();
        assert!(abc.max_abs_diff(&cba) < 1e-12);
    }

    #[test]
    fn uniform_reads_leave_matrix_unchanged() {
        let a = mat(vec![vec![0.7, 0.2, 0.05, 0.05]]);
        let uniform = AppMatrix::uniform(1, 4);
        let out = separate_combine(
            &[a.clone(), uniform.clone(), uniform.clone()],
            &uniform,
            &Default::default(),
        )
        .unwrap();
        assert!(out.max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn shape_and_floor_validation() {
        let a = mat(vec![vec![0.5, 0.5]]);
        let b = AppMatrix::uniform(2, 2);
        assert!(separate_combine(&[a.clone(), b], &AppMatrix::uniform(1, 2), &Default::default())
            .is_err());
        let bad = CombinerConfig { clamp_floor: 0.6 };
        assert!(
            separate_combine(&[a.clone(), a.clone()], &AppMatrix::uniform(1, 2), &bad).is_err()
        );
        // underflow resistance: twenty overconfident reads still normalize
        let sharp = mat(vec![vec![1.0 - 1e-12, 1e-12]]);
        let many: Vec<_> = (0..20).map(|_| sharp.clone()).collect();
        let out = separate_combine(&many, &AppMatrix::uniform(1, 2), &Default::default()).unwrap();
        assert!(out.row(0)[0] > 0.999);
    }
}
