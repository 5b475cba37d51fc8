//! Dense kernels shared by the projection and estimation layers.
//!
//! The tall factorization is a Householder QR with column-norm pivoting
//! (Businger–Golub). It works directly on the column-major storage of a
//! `DMatrix`, so every inner loop is a contiguous dot/axpy pair.

use nalgebra::DMatrix;

use crate::error::{IvError, Result};

/// Condition-number ceiling for the small `c × c` systems.
pub const COND_LIMIT: f64 = 1e12;

/// Thin orthonormal basis produced by [`pivoted_qr`].
#[derive(Debug, Clone)]
pub(crate) struct PivotedQr {
    /// `n × rank` matrix with orthonormal columns.
    pub q: DMatrix<f64>,
    pub rank: usize,
    /// `perm[j]` is the original index of the column eliminated at step `j`.
    #[allow(dead_code)]
    pub perm: Vec<usize>,
}

/// Rank tolerance: `max(n, k) · eps · largest column norm`.
pub(crate) fn rank_tolerance(n: usize, k: usize, max_col_norm: f64) -> f64 {
    n.max(k) as f64 * f64::EPSILON * max_col_norm
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Column-pivoted Householder QR, stopping once the largest remaining
/// column norm drops under the rank tolerance.
pub(crate) fn pivoted_qr(a: &DMatrix<f64>) -> PivotedQr {
    let (n, k) = a.shape();
    let mut work = a.clone();
    let data = work.as_mut_slice();

    let mut norms: Vec<f64> = data.chunks(n.max(1)).take(k).map(|c| dot(c, c)).collect();
    let mut reference = norms.clone();
    let max_norm = norms.iter().cloned().fold(0.0_f64, f64::max).sqrt();
    let tol = rank_tolerance(n, k, max_norm);

    let mut perm: Vec<usize> = (0..k).collect();
    let mut taus = Vec::with_capacity(k.min(n));
    let steps = k.min(n);

    for j in 0..steps {
        let (pivot, &best) = norms[j..]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, v)| (i + j, v))
            .expect("non-empty pivot range");
        if best.sqrt() <= tol || best == 0.0 {
            break;
        }
        if pivot != j {
            for r in 0..n {
                data.swap(j * n + r, pivot * n + r);
            }
            norms.swap(j, pivot);
            reference.swap(j, pivot);
            perm.swap(j, pivot);
        }

        let (left, right) = data.split_at_mut((j + 1) * n);
        let col = &mut left[j * n + j..];
        let alpha = col[0];
        let tail_sq = dot(&col[1..], &col[1..]);
        let tau = if tail_sq == 0.0 {
            0.0
        } else {
            let beta = -alpha.signum() * (alpha * alpha + tail_sq).sqrt();
            let scale = 1.0 / (alpha - beta);
            for v in col[1..].iter_mut() {
                *v *= scale;
            }
            col[0] = beta;
            (beta - alpha) / beta
        };
        taus.push(tau);

        let v = &col[1..];
        for (offset, other) in right.chunks_mut(n).enumerate() {
            let c = j + 1 + offset;
            if tau != 0.0 {
                let s = tau * (other[j] + dot(v, &other[j + 1..]));
                other[j] -= s;
                axpy(-s, v, &mut other[j + 1..]);
            }
            let updated = norms[c] - other[j] * other[j];
            if updated <= 1e-6 * reference[c] {
                norms[c] = dot(&other[j + 1..], &other[j + 1..]);
                reference[c] = norms[c];
            } else {
                norms[c] = updated;
            }
        }
    }

    let rank = taus.len();
    let mut q = DMatrix::<f64>::zeros(n, rank);
    {
        let qd = q.as_mut_slice();
        for j in 0..rank {
            qd[j * n + j] = 1.0;
        }
        for j in (0..rank).rev() {
            let tau = taus[j];
            if tau == 0.0 {
                continue;
            }
            let v = &data[j * n + j + 1..(j + 1) * n];
            for qc in qd.chunks_mut(n).skip(j) {
                let s = tau * (qc[j] + dot(v, &qc[j + 1..]));
                qc[j] -= s;
                axpy(-s, v, &mut qc[j + 1..]);
            }
        }
    }

    PivotedQr { q, rank, perm }
}

/// Estimate of the 2-norm condition number via singular values.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        (max / min).max(1.0)
    }
}

/// Solves the small square system `a · x = b` by QR with one round of
/// iterative refinement. Refuses systems whose condition estimate exceeds
/// [`COND_LIMIT`].
pub fn solve_small(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let cond = condition_number(a);
    if !(cond <= COND_LIMIT) {
        return Err(IvError::NearSingular { cond });
    }
    let qr = a.clone().qr();
    let mut x = qr.solve(b).ok_or(IvError::NearSingular { cond })?;
    let residual = b - a * &x;
    if residual.iter().any(|r| *r != 0.0) {
        if let Some(dx) = qr.solve(&residual) {
            x += dx;
        }
    }
    Ok((x, cond))
}

/// Inverse of a small square matrix under the same conditioning guard.
pub fn invert_small(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eye = DMatrix::<f64>::identity(a.nrows(), a.ncols());
    solve_small(a, &eye).map(|(x, _)| x)
}
