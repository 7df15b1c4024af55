//! Stability of the regime partition under a PCA-threshold sweep and an
//! initial-level subsample.

use serde::{Deserialize, Serialize};

use crate::cluster::{
    adjusted_rand_index, final_fit, label_agreement, select_k, Clustering, KMeansConfig, KSelectionReport,
    SelectionConfig,
};
use crate::embed::embed_growth;
use crate::error::{Error, Result};
use crate::panel::GrowthMatrix;
use crate::scalar::Scalar;

/// Embed, select k and refit: the clustering half of the pipeline.
#[derive(Clone, Debug)]
pub struct RegimeFit<F> {
    pub n_components: usize,
    /// Rows of the input that were clustered (flat trajectories removed).
    pub rows: Vec<usize>,
    pub selection: KSelectionReport<F>,
    pub clustering: Clustering<F>,
}

pub fn fit_regimes<F: Scalar>(
    gm: &GrowthMatrix<F>,
    variance_threshold: f64,
    selection: &SelectionConfig,
    final_kmeans: &KMeansConfig,
) -> Result<RegimeFit<F>> {
    let (std, emb) = embed_growth(gm, F::lit(variance_threshold))?;
    let mut sel_cfg = *selection;
    let n = emb.scores.nrows();
    if n < 3 {
        return Err(Error::InvalidInput(format!("{n} trajectories are too few to cluster")));
    }
    if sel_cfg.k_max > n - 1 {
        log::warn!("k_max {} exceeds N - 1; clipped to {}", sel_cfg.k_max, n - 1);
        sel_cfg.k_max = n - 1;
    }
    let report = select_k(emb.scores.view(), &sel_cfg)?;
    let clustering = final_fit(emb.scores.view(), report.k_star, report.best_seed, final_kmeans)?;
    Ok(RegimeFit {
        n_components: emb.n_components(),
        rows: std.source_rows,
        selection: report,
        clustering,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub threshold: f64,
    pub n_components: usize,
    pub k_star: usize,
    pub silhouette: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairAri {
    pub threshold_a: f64,
    pub threshold_b: f64,
    pub ari: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    pub pairwise_ari: Vec<PairAri>,
    pub min_ari: f64,
}

/// Re-run the clustering at each PCA threshold (k re-selected each time)
/// and compare every pair of partitions.
pub fn threshold_sweep<F: Scalar>(
    gm: &GrowthMatrix<F>,
    thresholds: &[f64],
    selection: &SelectionConfig,
    final_kmeans: &KMeansConfig,
) -> Result<SweepReport> {
    if thresholds.len() < 2 {
        return Err(Error::InvalidInput("threshold sweep needs at least two thresholds".into()));
    }
    let fits: Vec<RegimeFit<F>> = thresholds
        .iter()
        .map(|&t| fit_regimes(gm, t, selection, final_kmeans))
        .collect::<Result<_>>()?;
    if fits.windows(2).any(|w| w[0].rows != w[1].rows) {
        return Err(Error::Numerical("clustered rows differ across thresholds".into()));
    }
    let mut pairwise_ari = Vec::new();
    for i in 0..fits.len() {
        for j in (i + 1)..fits.len() {
            pairwise_ari.push(PairAri {
                threshold_a: thresholds[i],
                threshold_b: thresholds[j],
                ari: adjusted_rand_index(&fits[i].clustering.labels, &fits[j].clustering.labels)?,
            });
        }
    }
    let min_ari = pairwise_ari.iter().map(|p| p.ari).fold(f64::INFINITY, f64::min);
    Ok(SweepReport {
        entries: thresholds
            .iter()
            .zip(&fits)
            .map(|(&t, f)| SweepEntry {
                threshold: t,
                n_components: f.n_components,
                k_star: f.clustering.k,
                silhouette: f.clustering.silhouette.map(|s| s.as_f64()),
            })
            .collect(),
        pairwise_ari,
        min_ari,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsampleReport {
    pub n_subsample: usize,
    pub median_initial_level: f64,
    pub k: usize,
    /// Share of subsample members whose new cluster maps to their baseline
    /// cluster under majority matching.
    pub label_agreement: f64,
    pub ari: f64,
}

/// Keep entities whose initial level is at or above the median, re-cluster
/// them at the baseline `k` and measure how many keep their assignment.
///
/// `initial_levels` and `baseline_labels` are aligned with the rows of `gm`.
pub fn initial_level_subsample<F: Scalar>(
    gm: &GrowthMatrix<F>,
    initial_levels: &[f64],
    baseline_labels: &[usize],
    k: usize,
    variance_threshold: f64,
    selection: &SelectionConfig,
    final_kmeans: &KMeansConfig,
) -> Result<SubsampleReport> {
    let n = gm.n_entities();
    if initial_levels.len() != n || baseline_labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: initial_levels.len().min(baseline_labels.len()),
        });
    }
    let mut sorted = initial_levels.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite levels"));
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let keep: Vec<usize> = (0..n).filter(|&i| initial_levels[i] >= median).collect();
    let sub = gm.select_rows(&keep);
    let sel = SelectionConfig {
        k_min: k,
        k_max: k,
        ..*selection
    };
    let fit = fit_regimes(&sub, variance_threshold, &sel, final_kmeans)?;
    let base: Vec<usize> = fit.rows.iter().map(|&r| baseline_labels[keep[r]]).collect();
    Ok(SubsampleReport {
        n_subsample: fit.rows.len(),
        median_initial_level: median,
        k,
        label_agreement: label_agreement(&base, &fit.clustering.labels)?,
        ari: adjusted_rand_index(&base, &fit.clustering.labels)?,
    })
}
