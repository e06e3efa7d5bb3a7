//! Small dense linear-algebra helpers shared by the posterior and theory code.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative diagonal jitter added before every factorization.
pub const JITTER: f64 = 1e-10;

/// Floor used for variances in correlation denominators.
pub const VARIANCE_FLOOR: f64 = 1e-12;

const MAX_JITTER_ESCALATIONS: usize = 6;

fn max_diagonal(m: &DMatrix<f64>) -> f64 {
    m.diagonal().iter().copied().fold(0.0, f64::max)
}

/// Cholesky factor of `m + JITTER · max(diag m) · I`.
///
/// If round-off leaves the matrix indefinite beyond the base jitter, the
/// jitter is escalated tenfold a bounded number of times before giving up.
pub fn cholesky_jittered(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    debug_assert!(m.is_square());
    let base = JITTER * max_diagonal(m);
    let mut jitter = if base > 0.0 { base } else { f64::MIN_POSITIVE.sqrt() };
    for _ in 0..=MAX_JITTER_ESCALATIONS {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(a) {
            return Ok(chol);
        }
        jitter *= 10.0;
    }
    Err(Error::numeric(format!(
        "Cholesky factorization failed for a {}x{} matrix after jitter escalation",
        m.nrows(),
        m.ncols()
    )))
}

/// `log det` of a PSD matrix via its jittered Cholesky factor.
pub fn log_det_psd(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let chol = cholesky_jittered(m)?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Smallest eigenvalue of a symmetric matrix (no jitter).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Extracts the `rows × cols` submatrix.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Argmax with ties resolved towards the earliest entry. NaN scores never win.
pub fn argmax_first(scores: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}
