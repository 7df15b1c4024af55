//! k-means++ / Lloyd clustering, silhouette model selection, the
//! time-permutation silhouette null and partition comparison.

mod ari;
mod kmeans;
mod null;
mod select;
mod silhouette;

pub use ari::{adjusted_rand_index, label_agreement};
pub use kmeans::{
    kmeans_fit, kmeans_fit_with_rng, kmeans_pp_init, lloyd, relabel_by_size, Clustering, KMeansConfig,
    LloydRun,
};
pub use null::{null_silhouette, permute_rows, pipeline_silhouette, NullConfig, NullSilhouetteReport};
pub use select::{final_fit, select_k, selection_seeds, KScore, KSelectionReport, SelectionConfig};
pub use silhouette::{silhouette_from_distances, silhouette_score, DistanceMatrix, Silhouette};
