//! Dense real-matrix primitives: products, activations, per-row batch
//! standardization, and singular-value analysis.

mod matrix;
mod nonlinearity;
mod svd;

pub use matrix::{matmul, DenseMatrix};
pub use nonlinearity::{apply_nonlinearity, Nonlinearity, UnknownNonlinearity, DEFAULT_ELU_ALPHA, DEFAULT_LEAKY_SLOPE};
pub use svd::{gram_singular_values, nuclear_norm, numerical_rank, rank_of_spectrum, singular_values, thin_svd, RankSettings, ThinSvd};

use crate::scalar::Real;

/// Rows whose sample variance falls below this are treated as dead channels.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {}x{} and {}x{}", left.0, left.1, right.0, right.1)]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix must be non-empty, got {rows}x{cols}")]
    Empty { rows: usize, cols: usize },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("batch standardization needs at least 2 columns, got {0}")]
    TooFewColumns(usize),
    #[error("rank tolerance must lie strictly between 0 and 1, got {0}")]
    Tolerance(f64),
}

/// Shifts and scales each row to sample mean 0 and sample variance 1 (n − 1
/// denominator). Rows with variance below [`DEGENERATE_VARIANCE`] only have
/// their mean removed.
pub fn batch_standardize<T: Real>(m: &DenseMatrix<T>) -> Result<DenseMatrix<T>, NumericsError> {
    let mut out = m.clone();
    standardize_rows_in_place(&mut out)?;
    Ok(out)
}

pub(crate) fn standardize_rows_in_place<T: Real>(m: &mut DenseMatrix<T>) -> Result<(), NumericsError> {
    let cols = m.cols();
    if cols < 2 {
        return Err(NumericsError::TooFewColumns(cols));
    }
    let n = T::of_usize(cols);
    let floor = T::of(DEGENERATE_VARIANCE);
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let mut ss = T::zero();
        for x in row.iter_mut() {
            *x = *x - mean;
            ss = ss + *x * *x;
        }
        let var = ss / (n - T::one());
        if var < floor {
            continue;
        }
        let inv = T::one() / var.sqrt();
        for x in row.iter_mut() {
            *x = *x * inv;
        }
    }
    Ok(())
}
