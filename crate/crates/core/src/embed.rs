//! Row standardisation and principal-component projection of trajectories.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::jacobi_svd;
use crate::panel::GrowthMatrix;
use crate::scalar::Scalar;

/// Default share of variance the retained components must explain.
pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.80;

/// Slack when comparing a cumulative ratio against the threshold, so that a
/// threshold of 1.0 is reachable despite rounding.
const CUMULATIVE_SLACK: f64 = 1e-12;

/// Row-standardised trajectories (zero mean, unit population sd per row).
#[derive(Clone, Debug)]
pub struct Standardized<F> {
    pub data: Array2<F>,
    /// Source row of each retained row.
    pub source_rows: Vec<usize>,
    /// Source rows dropped because their trajectory is constant.
    pub dropped_flat: Vec<usize>,
}

/// Z-score every row of a complete growth matrix.
pub fn standardize_rows<F: Scalar>(gm: &GrowthMatrix<F>) -> Result<Standardized<F>> {
    if let Some(i) = gm.complete.iter().position(|&c| !c) {
        return Err(Error::InvalidInput(format!(
            "entity '{}' has an incomplete trajectory; filter before standardising",
            gm.entities[i].entity_id
        )));
    }
    let std = standardize_matrix(gm.g.view());
    if std.source_rows.len() < 2 && !std.dropped_flat.is_empty() {
        return Err(Error::Degenerate(format!(
            "{} of {} trajectories are constant; too few remain to embed",
            std.dropped_flat.len(),
            gm.n_entities()
        )));
    }
    Ok(std)
}

/// Z-score the rows of a raw matrix. Rows with zero variance are dropped.
pub fn standardize_matrix<F: Scalar>(x: ArrayView2<'_, F>) -> Standardized<F> {
    let (n, p) = x.dim();
    let pf = F::from_usize_lossy(p);
    let mut rows = Vec::with_capacity(n);
    let mut source_rows = Vec::with_capacity(n);
    let mut dropped_flat = Vec::new();
    for (i, row) in x.rows().into_iter().enumerate() {
        let mean = row.sum() / pf;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / pf;
        let sd = var.sqrt();
        let scale = row.iter().fold(F::zero(), |m, &v| m.max(v.abs()));
        if !(sd > F::epsilon() * scale * F::lit(16.0)) || !sd.is_finite() {
            dropped_flat.push(i);
            continue;
        }
        rows.extend(row.iter().map(|&v| (v - mean) / sd));
        source_rows.push(i);
    }
    let data = Array2::from_shape_vec((source_rows.len(), p), rows).expect("row-major fill");
    Standardized {
        data,
        source_rows,
        dropped_flat,
    }
}

/// A fitted principal-component projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Embedding<F> {
    /// `N x d` component scores.
    pub scores: Array2<F>,
    /// `d x p` loadings; rows are orthonormal.
    pub components: Array2<F>,
    /// Variance share of each retained component, non-increasing.
    pub explained_variance_ratio: Vec<F>,
    /// Variance share of every component, retained or not.
    pub full_spectrum: Vec<F>,
    pub column_means: Vec<F>,
    pub variance_threshold: F,
    /// Rows excluded upstream for having a constant trajectory.
    pub dropped_flat: Vec<usize>,
}

impl<F: Scalar> Embedding<F> {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn cumulative_ratio(&self) -> F {
        self.explained_variance_ratio.iter().copied().sum()
    }

    /// `(X - column_means) * components^T`.
    pub fn project(&self, x_new: ArrayView2<'_, F>) -> Result<Array2<F>> {
        let p = self.components.ncols();
        if x_new.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: x_new.ncols(),
            });
        }
        let means = Array1::from(self.column_means.clone());
        let centered = &x_new - &means;
        Ok(centered.dot(&self.components.t()))
    }

    /// Map scores back into the standardised trajectory space.
    pub fn reconstruct(&self) -> Array2<F> {
        let means = Array1::from(self.column_means.clone());
        self.scores.dot(&self.components) + &means
    }
}

/// Fit PCA on a standardised matrix, keeping the fewest leading components
/// whose cumulative variance share reaches `threshold`.
///
/// Columns are centred before the SVD. Each component's sign is fixed so that
/// its largest-magnitude loading is positive.
pub fn fit_pca<F: Scalar>(x: ArrayView2<'_, F>, threshold: F) -> Result<Embedding<F>> {
    if !(threshold > F::zero() && threshold <= F::one()) {
        return Err(Error::InvalidInput(format!(
            "variance threshold {threshold} outside (0, 1]"
        )));
    }
    let (n, p) = x.dim();
    if n < 2 {
        return Err(Error::InvalidInput(format!("PCA needs at least 2 rows, found {n}")));
    }
    if p == 0 {
        return Err(Error::InvalidInput("PCA input has no columns".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input".into()));
    }
    let means = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &x - &means;
    let svd = jacobi_svd(&centered);

    let sq: Vec<F> = svd.singular_values.iter().map(|&s| s * s).collect();
    let total: F = sq.iter().copied().sum();
    if !(total > F::zero()) {
        return Err(Error::Degenerate("all rows are identical after centring".into()));
    }
    let full_spectrum: Vec<F> = sq.iter().map(|&s| s / total).collect();

    let target = threshold - F::lit(CUMULATIVE_SLACK);
    let mut cum = F::zero();
    let mut d = p;
    for (i, &r) in full_spectrum.iter().enumerate() {
        cum = cum + r;
        if cum >= target {
            d = i + 1;
            break;
        }
    }
    d = d.min(n.min(p)).max(1);

    let mut components = Array2::zeros((d, p));
    for c in 0..d {
        let col = svd.v.column(c);
        let mut arg = 0;
        for j in 1..p {
            if col[j].abs() > col[arg].abs() {
                arg = j;
            }
        }
        let sign = if col[arg] < F::zero() { -F::one() } else { F::one() };
        for j in 0..p {
            components[[c, j]] = col[j] * sign;
        }
    }
    let scores = centered.dot(&components.t());
    Ok(Embedding {
        scores,
        components,
        explained_variance_ratio: full_spectrum[..d].to_vec(),
        full_spectrum,
        column_means: means.to_vec(),
        variance_threshold: threshold,
        dropped_flat: Vec::new(),
    })
}

/// Standardise a complete growth matrix and fit PCA in one step.
pub fn embed_growth<F: Scalar>(
    gm: &GrowthMatrix<F>,
    threshold: F,
) -> Result<(Standardized<F>, Embedding<F>)> {
    let std = standardize_rows(gm)?;
    let mut emb = fit_pca(std.data.view(), threshold)?;
    emb.dropped_flat = std.dropped_flat.clone();
    Ok((std, emb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn standardize_symmetric_row() {
        let s = standardize_matrix(array![[1.0f64, 2.0, 3.0]].view());
        let expected = [-(1.5f64).sqrt(), 0.0, (1.5f64).sqrt()];
        for (a, b) in s.data.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_rows_are_dropped() {
        let s = standardize_matrix(array![[5.0f64, 5.0, 5.0], [1.0, 2.0, 4.0]].view());
        assert_eq!(s.dropped_flat, vec![0]);
        assert_eq!(s.source_rows, vec![1]);
    }

    #[test]
    fn standardized_rows_have_unit_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((40, 26), |_| rng.random::<f64>() * 50.0 - 10.0);
        let s = standardize_matrix(x.view());
        for row in s.data.rows() {
            let m = row.sum() / 26.0;
            let v = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 26.0;
            assert!(m.abs() < 1e-10);
            assert!((v.sqrt() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_one_data_needs_one_component() {
        let x = Array2::from_shape_fn((10, 3), |(i, j)| (i as f64 - 3.0) * [1.0, -2.0, 0.5][j]);
        let e = fit_pca(x.view(), 0.8).unwrap();
        assert_eq!(e.n_components(), 1);
        assert!(e.full_spectrum[1] < 1e-20);
        // sign convention: largest |loading| positive, here the -2 axis
        assert!(e.components[[0, 1]] > 0.0);
    }

    #[test]
    fn threshold_validated() {
        let x = array![[1.0f64, 2.0], [3.0, 1.0], [0.0, 0.0]];
        assert!(fit_pca(x.view(), 0.0).is_err());
        assert!(fit_pca(x.view(), 1.2).is_err());
        assert!(fit_pca(x.view(), 1.0).is_ok());
    }

    #[test]
    fn project_round_trip_and_zero_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((30, 6), |_| rng.sample::<f64, _>(StandardNormal));
        let e = fit_pca(x.view(), 0.9).unwrap();
        let again = e.project(x.view()).unwrap();
        for (a, b) in again.iter().zip(e.scores.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        let z = e.project(Array2::zeros((1, 6)).view()).unwrap();
        let means = Array1::from(e.column_means.clone());
        let expected = (-&means).dot(&e.components.t());
        for (a, b) in z.row(0).iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(e.project(Array2::zeros((1, 5)).view()).is_err());
    }

    #[test]
    fn projection_matches_explicit_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Array2::from_shape_fn((25, 5), |_| rng.sample::<f64, _>(StandardNormal));
        let e = fit_pca(x.view(), 0.7).unwrap();
        let y = Array2::from_shape_fn((4, 5), |_| rng.sample::<f64, _>(StandardNormal));
        let got = e.project(y.view()).unwrap();
        for i in 0..4 {
            for c in 0..e.n_components() {
                let mut acc = 0.0;
                for j in 0..5 {
                    acc += (y[[i, j]] - e.column_means[j]) * e.components[[c, j]];
                }
                assert!((got[[i, c]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((50, 8), |_| rng.sample::<f64, _>(StandardNormal));
        assert_eq!(fit_pca(x.view(), 0.8).unwrap(), fit_pca(x.view(), 0.8).unwrap());
    }

    #[test]
    fn fits_in_f32() {
        let x: Array2<f32> = array![[1.0, 2.0], [2.0, 4.1], [3.0, 5.9], [4.0, 8.0]];
        let e = fit_pca(x.view(), 0.9).unwrap();
        assert_eq!(e.n_components(), 1);
    }
}
