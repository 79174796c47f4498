//! Singular values by one-sided (Hestenes) Jacobi, with an LQ pre-reduction
//! for wide inputs so the rotations only ever touch a square triangle.

use serde::{Deserialize, Serialize};

use crate::numerics::{DenseMatrix, NumericsError};
use crate::scalar::Real;

const MAX_SWEEPS: usize = 80;

/// Relative threshold used to count singular values toward the rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSettings {
    rel_tolerance: f64,
}

impl RankSettings {
    pub const DEFAULT_TOLERANCE: f64 = 1e-2;

    pub fn new(rel_tolerance: f64) -> Result<Self, NumericsError> {
        if !(rel_tolerance > 0.0 && rel_tolerance < 1.0) {
            return Err(NumericsError::Tolerance(rel_tolerance));
        }
        Ok(Self { rel_tolerance })
    }

    #[inline]
    pub fn rel_tolerance(&self) -> f64 {
        self.rel_tolerance
    }
}

impl Default for RankSettings {
    fn default() -> Self {
        Self {
            rel_tolerance: Self::DEFAULT_TOLERANCE,
        }
    }
}

/// Thin SVD `m = u · diag(singular_values) · vt`, singular values non-increasing.
#[derive(Debug, Clone)]
pub struct ThinSvd<T> {
    pub u: DenseMatrix<T>,
    pub singular_values: Vec<T>,
    pub vt: DenseMatrix<T>,
}

fn check_input<T: Real>(m: &DenseMatrix<T>) -> Result<(), NumericsError> {
    if let Some(idx) = m.as_slice().iter().position(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite {
            row: idx / m.cols(),
            col: idx % m.cols(),
        });
    }
    Ok(())
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

/// Rows of `w` (`p` rows, `q` columns, row-major) are rotated pairwise until
/// mutually orthogonal. When `acc` is given it receives the transposed product
/// of all rotations, so the original matrix equals `acc · w` afterwards.
fn jacobi_rows<T: Real>(w: &mut [T], p: usize, q: usize, mut acc: Option<&mut [T]>) {
    let tol = T::epsilon() * T::of_usize(p.max(2));
    let mut norms: Vec<T> = (0..p).map(|i| dot(&w[i * q..(i + 1) * q], &w[i * q..(i + 1) * q])).collect();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..p.saturating_sub(1) {
            for j in (i + 1)..p {
                let alpha = norms[i];
                let beta = norms[j];
                if alpha == T::zero() || beta == T::zero() {
                    continue;
                }
                let (head, tail) = w.split_at_mut(j * q);
                let ri = &mut head[i * q..(i + 1) * q];
                let rj = &mut tail[..q];
                let gamma = dot(ri, rj);
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::of(2.0) * gamma);
                let sign = if zeta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for (x, y) in ri.iter_mut().zip(rj.iter_mut()) {
                    let (a, b) = (*x, *y);
                    *x = c * a - s * b;
                    *y = s * a + c * b;
                }
                norms[i] = alpha - t * gamma;
                norms[j] = beta + t * gamma;
                if let Some(acc) = acc.as_deref_mut() {
                    for r in 0..p {
                        let a = acc[r * p + i];
                        let b = acc[r * p + j];
                        acc[r * p + i] = c * a - s * b;
                        acc[r * p + j] = s * a + c * b;
                    }
                }
            }
        }
        // refresh against drift in the incremental norm updates
        for (i, n) in norms.iter_mut().enumerate() {
            *n = dot(&w[i * q..(i + 1) * q], &w[i * q..(i + 1) * q]);
        }
        if !rotated {
            break;
        }
    }
}

/// Householder LQ on the rows of a wide `p × q` block (`p < q`), returning the
/// `p × p` lower-triangular factor. Singular values are preserved.
fn lq_triangle<T: Real>(mut w: Vec<T>, p: usize, q: usize) -> Vec<T> {
    let mut v = vec![T::zero(); q];
    for k in 0..p {
        let len = q - k;
        let x = &w[k * q + k..(k + 1) * q];
        let norm = dot(x, x).sqrt();
        if norm == T::zero() {
            continue;
        }
        let lead = x[0];
        let alpha = if lead >= T::zero() { -norm } else { norm };
        v[..len].copy_from_slice(x);
        v[0] = v[0] - alpha;
        let vnorm2 = dot(&v[..len], &v[..len]);
        if vnorm2 == T::zero() {
            continue;
        }
        let two = T::of(2.0);
        for i in k..p {
            let row = &mut w[i * q + k..(i + 1) * q];
            let f = two * dot(row, &v[..len]) / vnorm2;
            for (r, &vv) in row.iter_mut().zip(&v[..len]) {
                *r = *r - f * vv;
            }
        }
    }
    let mut l = Vec::with_capacity(p * p);
    for i in 0..p {
        l.extend_from_slice(&w[i * q..i * q + p]);
    }
    l
}

/// All `min(rows, cols)` singular values, non-increasing.
pub fn singular_values<T: Real>(m: &DenseMatrix<T>) -> Result<Vec<T>, NumericsError> {
    check_input(m)?;
    let (p, q, w) = if m.rows() <= m.cols() {
        (m.rows(), m.cols(), m.as_slice().to_vec())
    } else {
        (m.cols(), m.rows(), m.transpose().into_vec())
    };
    let (w, q) = if q > p { (lq_triangle(w, p, q), p) } else { (w, q) };
    let mut w = w;
    jacobi_rows(&mut w, p, q, None);
    let mut sv: Vec<T> = w.chunks_exact(q).map(|r| dot(r, r).sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    Ok(sv)
}

/// All `min(rows, cols)` singular values from the eigenvalues of the smaller
/// Gram matrix, non-increasing.
///
/// Much faster than [`singular_values`] on large inputs, but values below
/// roughly `sqrt(ε) · σ_max` carry no relative accuracy, so it suits rank
/// counts at tolerances well above that.
pub fn gram_singular_values<T: Real + nalgebra::RealField>(m: &DenseMatrix<T>) -> Result<Vec<T>, NumericsError> {
    check_input(m)?;
    let t = m.transpose();
    let (p, q, a, b) = if m.rows() <= m.cols() {
        (m.rows(), m.cols(), m.as_slice(), t.as_slice())
    } else {
        (m.cols(), m.rows(), t.as_slice(), m.as_slice())
    };
    let mut g = vec![T::zero(); p * p];
    T::gemm(p, q, p, a, b, &mut g);
    let gram = nalgebra::DMatrix::from_row_slice(p, p, &g);
    let mut sv: Vec<T> = gram
        .symmetric_eigenvalues()
        .iter()
        .map(|&l| num_traits::Float::sqrt(num_traits::Float::max(l, T::zero())))
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    Ok(sv)
}

/// Thin SVD with explicit orthogonal factors.
pub fn thin_svd<T: Real>(m: &DenseMatrix<T>) -> Result<ThinSvd<T>, NumericsError> {
    check_input(m)?;
    let wide = m.rows() <= m.cols();
    let (p, q, mut w) = if wide {
        (m.rows(), m.cols(), m.as_slice().to_vec())
    } else {
        (m.cols(), m.rows(), m.transpose().into_vec())
    };
    let mut acc = DenseMatrix::<T>::identity(p).into_vec();
    jacobi_rows(&mut w, p, q, Some(&mut acc));

    let sigma: Vec<T> = w.chunks_exact(q).map(|r| dot(r, r).sqrt()).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).expect("finite"));

    // right factor rows: normalized rotated rows; left factor columns: acc columns
    let mut right = Vec::with_capacity(p * q);
    let mut left = vec![T::zero(); p * p];
    for (k, &src) in order.iter().enumerate() {
        let s = sigma[src];
        let row = &w[src * q..(src + 1) * q];
        if s > T::zero() {
            right.extend(row.iter().map(|&x| x / s));
        } else {
            right.extend(std::iter::repeat(T::zero()).take(q));
        }
        for r in 0..p {
            left[r * p + k] = acc[r * p + src];
        }
    }
    let singular_values: Vec<T> = order.iter().map(|&i| sigma[i]).collect();
    let left = DenseMatrix::from_raw(p, p, left);
    let right = DenseMatrix::from_raw(p, q, right);
    Ok(if wide {
        ThinSvd {
            u: left,
            singular_values,
            vt: right,
        }
    } else {
        ThinSvd {
            u: right.transpose(),
            singular_values,
            vt: left.transpose(),
        }
    })
}

/// Counts entries of a non-increasing spectrum above `tol · σ_max`.
pub fn rank_of_spectrum<T: Real>(spectrum: &[T], settings: &RankSettings) -> usize {
    let Some(&top) = spectrum.first() else {
        return 0;
    };
    if top <= T::zero() {
        return 0;
    }
    let cut = T::of(settings.rel_tolerance()) * top;
    spectrum.iter().filter(|&&s| s > cut).count()
}

pub fn numerical_rank<T: Real>(m: &DenseMatrix<T>, settings: &RankSettings) -> Result<usize, NumericsError> {
    Ok(rank_of_spectrum(&singular_values(m)?, settings))
}

/// Sum of singular values.
pub fn nuclear_norm<T: Real>(m: &DenseMatrix<T>) -> Result<T, NumericsError> {
    Ok(singular_values(m)?.into_iter().sum())
}
