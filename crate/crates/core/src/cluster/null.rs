use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans_fit, KMeansConfig};
use super::silhouette::silhouette_score;
use crate::embed::{fit_pca, standardize_matrix};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, derive_seed, tags, PipelineRng, RNG_NAME};
use crate::scalar::{mean, std_dev, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullConfig {
    pub n_permutations: usize,
    pub variance_threshold: f64,
    pub kmeans: KMeansConfig,
    pub master_seed: u64,
}

impl Default for NullConfig {
    fn default() -> Self {
        Self {
            n_permutations: 50,
            variance_threshold: crate::embed::DEFAULT_VARIANCE_THRESHOLD,
            kmeans: KMeansConfig::default(),
            master_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct NullSilhouetteReport<F> {
    pub k: usize,
    pub n_permutations: usize,
    pub null_silhouettes: Vec<F>,
    pub null_mean: F,
    /// Population standard deviation of the null draws.
    pub null_sd: F,
    pub observed: F,
    /// `(observed - null_mean) / null_sd`; absent when the null has no spread.
    pub z_score: Option<F>,
    /// `observed / null_mean`; absent when the null mean is not positive.
    pub ratio: Option<F>,
    pub master_seed: u64,
    pub rng: String,
}

/// Standardise rows, project onto the leading components and cluster;
/// returns the silhouette of the resulting partition.
pub fn pipeline_silhouette<F: Scalar>(
    trajectories: ArrayView2<'_, F>,
    k: usize,
    variance_threshold: f64,
    seed: u64,
    kmeans: &KMeansConfig,
) -> Result<F> {
    let std = standardize_matrix(trajectories);
    let emb = fit_pca(std.data.view(), F::lit(variance_threshold))?;
    let c = kmeans_fit(emb.scores.view(), k, seed, kmeans)?;
    Ok(silhouette_score(emb.scores.view(), &c.labels)?.mean)
}

/// Shuffle the order of every row independently.
pub fn permute_rows<F: Scalar>(x: ArrayView2<'_, F>, rng: &mut PipelineRng) -> Array2<F> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let mut v = row.to_vec();
        v.shuffle(rng);
        row.assign(&ndarray::ArrayView1::from(&v));
    }
    out
}

/// Silhouette null distribution from within-row time permutations.
///
/// Each replicate shuffles every trajectory's year order independently, then
/// re-standardises, re-fits PCA and re-clusters at `k`.
pub fn null_silhouette<F: Scalar>(
    trajectories: ArrayView2<'_, F>,
    k: usize,
    observed: F,
    cfg: &NullConfig,
) -> Result<NullSilhouetteReport<F>> {
    if cfg.n_permutations == 0 {
        return Err(Error::InvalidInput("n_permutations must be at least 1".into()));
    }
    let null_silhouettes: Vec<F> = (0..cfg.n_permutations as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = derive_rng(cfg.master_seed, &[tags::SILHOUETTE_NULL, p]);
            let shuffled = permute_rows(trajectories, &mut rng);
            let seed = derive_seed(cfg.master_seed, &[tags::SILHOUETTE_NULL, p, 1]);
            pipeline_silhouette(shuffled.view(), k, cfg.variance_threshold, seed, &cfg.kmeans)
        })
        .collect::<Result<_>>()?;
    let null_mean = mean(&null_silhouettes).expect("non-empty");
    let null_sd = std_dev(&null_silhouettes, 0).expect("non-empty");
    let z_score = (null_sd > F::zero()).then(|| (observed - null_mean) / null_sd);
    let ratio = (null_mean > F::zero()).then(|| observed / null_mean);
    Ok(NullSilhouetteReport {
        k,
        n_permutations: cfg.n_permutations,
        null_silhouettes,
        null_mean,
        null_sd,
        observed,
        z_score,
        ratio,
        master_seed: cfg.master_seed,
        rng: RNG_NAME.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn permutation_keeps_row_multisets() {
        let x = Array2::from_shape_fn((4, 7), |(i, j)| (i * 10 + j) as f64);
        let mut rng = rng_from_seed(3);
        let p = permute_rows(x.view(), &mut rng);
        for (a, b) in x.rows().into_iter().zip(p.rows()) {
            let mut s = b.to_vec();
            s.sort_by(|u, v| u.partial_cmp(v).unwrap());
            assert_eq!(a.to_vec(), s);
        }
        assert_ne!(x, p);
    }
}
