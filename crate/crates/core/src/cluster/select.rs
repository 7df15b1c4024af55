use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans_fit, Clustering, KMeansConfig};
use super::silhouette::{silhouette_from_distances, silhouette_score, DistanceMatrix};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, tags, RNG_NAME};
use crate::scalar::{mean, std_dev, Scalar};

/// Above this many points the silhouette is computed on the fly instead of
/// from a cached condensed distance matrix.
const DISTANCE_CACHE_LIMIT: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub n_seeds: usize,
    pub kmeans: KMeansConfig,
    pub master_seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            k_min: 3,
            k_max: 20,
            n_seeds: 20,
            kmeans: KMeansConfig::default(),
            master_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct KScore<F> {
    pub k: usize,
    pub mean_silhouette: F,
    /// Population standard deviation across seeds.
    pub sd_silhouette: F,
    /// One entry per seed, in seed order.
    pub silhouettes: Vec<F>,
    pub distortions: Vec<F>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct KSelectionReport<F> {
    pub per_k: Vec<KScore<F>>,
    pub k_star: usize,
    /// Seed with the highest silhouette at `k_star`.
    pub best_seed: u64,
    pub seeds: Vec<u64>,
    pub n_init: usize,
    pub master_seed: u64,
    pub rng: String,
}

impl<F: Scalar> KSelectionReport<F> {
    pub fn score(&self, k: usize) -> Option<&KScore<F>> {
        self.per_k.iter().find(|s| s.k == k)
    }
}

/// Seeds used for the selection grid; identical for every k.
pub fn selection_seeds(master_seed: u64, n_seeds: usize) -> Vec<u64> {
    (0..n_seeds as u64)
        .map(|s| derive_seed(master_seed, &[tags::SELECT_K, s]))
        .collect()
}

enum SilhouetteRoute<F> {
    Cached(DistanceMatrix<F>),
    Direct,
}

/// Fit k-means for every (k, seed) pair and pick the k with the highest
/// seed-averaged silhouette (smallest k on ties).
pub fn select_k<F: Scalar>(points: ArrayView2<'_, F>, cfg: &SelectionConfig) -> Result<KSelectionReport<F>> {
    let n = points.nrows();
    if cfg.k_min < 2 || cfg.k_min > cfg.k_max {
        return Err(Error::InvalidInput(format!(
            "k range {}..={} must satisfy 2 <= k_min <= k_max",
            cfg.k_min, cfg.k_max
        )));
    }
    if cfg.k_max + 1 > n {
        return Err(Error::InvalidInput(format!(
            "k_max = {} must be at most N - 1 = {}",
            cfg.k_max,
            n.saturating_sub(1)
        )));
    }
    if cfg.n_seeds == 0 {
        return Err(Error::InvalidInput("at least one seed is required".into()));
    }
    let seeds = selection_seeds(cfg.master_seed, cfg.n_seeds);
    let route = if n <= DISTANCE_CACHE_LIMIT {
        SilhouetteRoute::Cached(DistanceMatrix::new(points))
    } else {
        SilhouetteRoute::Direct
    };
    let grid: Vec<(usize, u64)> = (cfg.k_min..=cfg.k_max)
        .flat_map(|k| seeds.iter().map(move |&s| (k, s)))
        .collect();
    let cells: Vec<(F, F)> = grid
        .par_iter()
        .map(|&(k, seed)| -> Result<(F, F)> {
            let c = kmeans_fit(points, k, seed, &cfg.kmeans)?;
            let s = match &route {
                SilhouetteRoute::Cached(dm) => silhouette_from_distances(dm, &c.labels)?,
                SilhouetteRoute::Direct => silhouette_score(points, &c.labels)?,
            };
            Ok((s.mean, c.distortion))
        })
        .collect::<Result<_>>()?;

    let mut per_k = Vec::new();
    for (ki, k) in (cfg.k_min..=cfg.k_max).enumerate() {
        let block = &cells[ki * seeds.len()..(ki + 1) * seeds.len()];
        let silhouettes: Vec<F> = block.iter().map(|c| c.0).collect();
        per_k.push(KScore {
            k,
            mean_silhouette: mean(&silhouettes).expect("non-empty"),
            sd_silhouette: std_dev(&silhouettes, 0).expect("non-empty"),
            distortions: block.iter().map(|c| c.1).collect(),
            silhouettes,
        });
    }
    let mut best = 0;
    for (i, s) in per_k.iter().enumerate() {
        if s.mean_silhouette > per_k[best].mean_silhouette {
            best = i;
        }
    }
    let star = &per_k[best];
    let mut best_seed_idx = 0;
    for (i, &s) in star.silhouettes.iter().enumerate() {
        if s > star.silhouettes[best_seed_idx] {
            best_seed_idx = i;
        }
    }
    Ok(KSelectionReport {
        k_star: star.k,
        best_seed: seeds[best_seed_idx],
        per_k,
        seeds,
        n_init: cfg.kmeans.n_init,
        master_seed: cfg.master_seed,
        rng: RNG_NAME.to_string(),
    })
}

/// Refit at the selected k from the best seed, relabel clusters by size and
/// attach the silhouette.
pub fn final_fit<F: Scalar>(
    points: ArrayView2<'_, F>,
    k_star: usize,
    best_seed: u64,
    cfg: &KMeansConfig,
) -> Result<Clustering<F>> {
    let c = kmeans_fit(points, k_star, best_seed, cfg)?.relabeled_by_size();
    let sil = if k_star >= 2 {
        Some(silhouette_score(points, &c.labels)?.mean)
    } else {
        None
    };
    Ok(Clustering { silhouette: sil, ..c })
}
