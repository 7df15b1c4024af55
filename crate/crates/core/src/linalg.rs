//! Small dense kernels: one-sided Jacobi SVD and Householder QR with column
//! pivoting. Both are deterministic and generic over [`Scalar`].

use ndarray::{Array1, Array2};

use crate::scalar::Scalar;

/// Thin SVD `A = U diag(s) V^T`; only `s` and `V` are kept.
#[derive(Clone, Debug)]
pub struct RightSvd<F> {
    /// Singular values, non-increasing.
    pub singular_values: Array1<F>,
    /// Columns are right singular vectors, ordered like `singular_values`.
    pub v: Array2<F>,
    pub sweeps: usize,
}

/// One-sided (Hestenes) Jacobi SVD of an `m x n` matrix.
///
/// Orthogonalises the columns of `A V` by plane rotations; the column norms
/// of the rotated matrix are the singular values.
pub fn jacobi_svd<F: Scalar>(a: &Array2<F>) -> RightSvd<F> {
    const MAX_SWEEPS: usize = 80;
    let (m, n) = a.dim();
    let mut w = a.clone();
    let mut v = Array2::<F>::eye(n);
    let eps = F::epsilon();
    let mut sweeps = 0;

    for sweep in 0..MAX_SWEEPS {
        sweeps = sweep + 1;
        let mut rotated = false;
        for j in 0..n {
            for k in (j + 1)..n {
                let mut alpha = F::zero();
                let mut beta = F::zero();
                let mut gamma = F::zero();
                for r in 0..m {
                    let (x, y) = (w[[r, j]], w[[r, k]]);
                    alpha = alpha + x * x;
                    beta = beta + y * y;
                    gamma = gamma + x * y;
                }
                if gamma == F::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (F::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (F::one() + zeta * zeta).sqrt());
                let c = F::one() / (F::one() + t * t).sqrt();
                let s = c * t;
                for r in 0..m {
                    let (x, y) = (w[[r, j]], w[[r, k]]);
                    w[[r, j]] = c * x - s * y;
                    w[[r, k]] = s * x + c * y;
                }
                for r in 0..n {
                    let (x, y) = (v[[r, j]], v[[r, k]]);
                    v[[r, j]] = c * x - s * y;
                    v[[r, k]] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<F> = (0..n)
        .map(|j| w.column(j).iter().map(|&x| x * x).sum::<F>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal singular values keep their column order
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).expect("finite norms"));
    let singular_values = Array1::from_iter(order.iter().map(|&j| norms[j]));
    let v_sorted = Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
    RightSvd {
        singular_values,
        v: v_sorted,
        sweeps,
    }
}

/// Result of a least-squares fit through pivoted QR.
#[derive(Clone, Debug)]
pub struct LeastSquares<F> {
    pub rank: usize,
    pub rss: F,
    /// Column indices (into the original design) judged linearly dependent.
    pub dropped_columns: Vec<usize>,
}

/// Least squares `min ||y - X b||` via Householder QR with column pivoting.
///
/// Columns whose remaining norm falls below `tol * max column norm` are
/// treated as dependent; the residual sum of squares is that of the
/// projection onto the span of the retained columns.
pub fn pivoted_qr_least_squares<F: Scalar>(x: &Array2<F>, y: &Array1<F>) -> LeastSquares<F> {
    let (m, n) = x.dim();
    assert_eq!(m, y.len(), "design and response lengths differ");
    let mut a = x.clone();
    let mut b = y.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut col_norms: Vec<F> = (0..n)
        .map(|j| a.column(j).iter().map(|&v| v * v).sum::<F>())
        .collect();
    let max_norm = col_norms
        .iter()
        .fold(F::zero(), |acc, &v| acc.max(v))
        .sqrt();
    let tol = F::lit(1e-10).max(F::epsilon() * F::lit(100.0)) * max_norm.max(F::one());

    let steps = m.min(n);
    let mut rank = 0;
    for k in 0..steps {
        // pivot: largest remaining column norm, lowest index on ties
        let mut p = k;
        for j in (k + 1)..n {
            if col_norms[j] > col_norms[p] {
                p = j;
            }
        }
        if p != k {
            for r in 0..m {
                a.swap([r, k], [r, p]);
            }
            col_norms.swap(k, p);
            perm.swap(k, p);
        }
        let norm = (k..m).map(|r| a[[r, k]] * a[[r, k]]).sum::<F>().sqrt();
        if norm <= tol {
            break;
        }
        rank += 1;
        let alpha = if a[[k, k]] > F::zero() { -norm } else { norm };
        let mut vk: Vec<F> = (k..m).map(|r| a[[r, k]]).collect();
        vk[0] = vk[0] - alpha;
        let vnorm2: F = vk.iter().map(|&v| v * v).sum();
        if vnorm2 > F::zero() {
            let two = F::lit(2.0);
            for j in k..n {
                let dot: F = (k..m).map(|r| vk[r - k] * a[[r, j]]).sum();
                let f = two * dot / vnorm2;
                for r in k..m {
                    a[[r, j]] = a[[r, j]] - f * vk[r - k];
                }
            }
            let dot: F = (k..m).map(|r| vk[r - k] * b[r]).sum();
            let f = two * dot / vnorm2;
            for r in k..m {
                b[r] = b[r] - f * vk[r - k];
            }
        }
        // downdate remaining column norms exactly (recompute; n is small)
        for j in (k + 1)..n {
            col_norms[j] = ((k + 1)..m).map(|r| a[[r, j]] * a[[r, j]]).sum();
        }
    }
    let rss: F = (rank..m).map(|r| b[r] * b[r]).sum();
    let mut dropped_columns: Vec<usize> = perm[rank..].to_vec();
    dropped_columns.sort_unstable();
    LeastSquares {
        rank,
        rss,
        dropped_columns,
    }
}
