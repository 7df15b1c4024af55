use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sq_dist, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Silhouette<F> {
    pub per_point: Vec<F>,
    pub mean: F,
}

/// Condensed pairwise Euclidean distances (upper triangle, row-major).
#[derive(Clone, Debug)]
pub struct DistanceMatrix<F> {
    n: usize,
    d: Vec<F>,
}

impl<F: Scalar> DistanceMatrix<F> {
    pub fn new(points: ArrayView2<'_, F>) -> Self {
        let points = points.as_standard_layout();
        let n = points.nrows();
        let rows: Vec<Vec<F>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let pi = points.row(i);
                let pi = pi.to_slice().expect("contiguous");
                ((i + 1)..n)
                    .map(|j| sq_dist(pi, points.row(j).to_slice().expect("contiguous")).sqrt())
                    .collect()
            })
            .collect();
        Self {
            n,
            d: rows.into_iter().flatten().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> F {
        if i == j {
            return F::zero();
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        // offset of row a in the condensed layout
        let off = a * self.n - a * (a + 1) / 2;
        self.d[off + (b - a - 1)]
    }
}

fn cluster_sizes(labels: &[usize]) -> Result<Vec<usize>> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::InvalidInput(
            "silhouette needs at least two non-empty clusters".into(),
        ));
    }
    Ok(sizes)
}

fn point_value<F: Scalar>(own: usize, sums: &[F], sizes: &[usize]) -> F {
    if sizes[own] <= 1 {
        // singleton convention
        return F::zero();
    }
    let a = sums[own] / F::from_usize_lossy(sizes[own] - 1);
    let mut b: Option<F> = None;
    for (c, &size) in sizes.iter().enumerate() {
        if c == own || size == 0 {
            continue;
        }
        let m = sums[c] / F::from_usize_lossy(size);
        b = Some(b.map_or(m, |cur| cur.min(m)));
    }
    let b = b.expect("at least two clusters");
    let denom = a.max(b);
    if denom > F::zero() {
        (b - a) / denom
    } else {
        F::zero()
    }
}

fn finish<F: Scalar>(per_point: Vec<F>) -> Silhouette<F> {
    let mean = per_point.iter().fold(F::zero(), |a, &b| a + b) / F::from_usize_lossy(per_point.len());
    Silhouette { per_point, mean }
}

/// Mean silhouette over all points (Euclidean distances).
///
/// `a(i)` is the mean distance to the other members of `i`'s cluster,
/// `b(i)` the smallest mean distance to another cluster, and
/// `s(i) = (b - a) / max(a, b)`. Members of singleton clusters score 0.
pub fn silhouette_score<F: Scalar>(points: ArrayView2<'_, F>, labels: &[usize]) -> Result<Silhouette<F>> {
    if points.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: points.nrows(),
            found: labels.len(),
        });
    }
    let sizes = cluster_sizes(labels)?;
    let points = points.as_standard_layout();
    let n = labels.len();
    let per_point: Vec<F> = (0..n)
        .into_par_iter()
        .map(|i| {
            let pi = points.row(i);
            let pi = pi.to_slice().expect("contiguous");
            let mut sums = vec![F::zero(); sizes.len()];
            for j in 0..n {
                if j != i {
                    let d = sq_dist(pi, points.row(j).to_slice().expect("contiguous")).sqrt();
                    sums[labels[j]] = sums[labels[j]] + d;
                }
            }
            point_value(labels[i], &sums, &sizes)
        })
        .collect();
    Ok(finish(per_point))
}

/// Same as [`silhouette_score`] but reading from a precomputed distance matrix.
pub fn silhouette_from_distances<F: Scalar>(dist: &DistanceMatrix<F>, labels: &[usize]) -> Result<Silhouette<F>> {
    if dist.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: dist.len(),
            found: labels.len(),
        });
    }
    let sizes = cluster_sizes(labels)?;
    let n = labels.len();
    let per_point: Vec<F> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sums = vec![F::zero(); sizes.len()];
            for j in 0..n {
                if j != i {
                    sums[labels[j]] = sums[labels[j]] + dist.get(i, j);
                }
            }
            point_value(labels[i], &sums, &sizes)
        })
        .collect();
    Ok(finish(per_point))
}
