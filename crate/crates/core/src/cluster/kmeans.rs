use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, PipelineRng};
use crate::scalar::{sq_dist, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub n_init: usize,
    pub max_iter: usize,
    /// Convergence threshold on the largest centroid displacement.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            n_init: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

impl KMeansConfig {
    pub fn with_n_init(self, n_init: usize) -> Self {
        Self { n_init, ..self }
    }
}

/// A k-means partition together with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Clustering<F> {
    pub labels: Vec<usize>,
    /// `k x d`
    pub centroids: Array2<F>,
    /// Within-cluster sum of squared distances to the centroids.
    pub distortion: F,
    pub k: usize,
    pub seed: u64,
    pub n_init: usize,
    pub silhouette: Option<F>,
    /// Final distortion of every initialisation, in run order.
    pub run_distortions: Vec<F>,
}

impl<F: Scalar> Clustering<F> {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// One Lloyd descent from fixed starting centres.
#[derive(Clone, Debug)]
pub struct LloydRun<F> {
    pub labels: Vec<usize>,
    pub centroids: Array2<F>,
    pub distortion: F,
    /// Distortion after every iteration; non-increasing.
    pub history: Vec<F>,
    pub iterations: usize,
}

fn row<'a, F: Scalar>(m: &'a ArrayView2<'_, F>, i: usize) -> &'a [F] {
    m.row(i).to_slice().expect("standard layout")
}

fn check_points<F: Scalar>(points: &ArrayView2<'_, F>, k: usize) -> Result<()> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::InvalidInput(format!("k = {k} exceeds the {n} available points")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    Ok(())
}

/// k-means++ seeding: the first centre is uniform over points, each further
/// centre is drawn with probability proportional to its squared distance to
/// the nearest centre chosen so far.
///
/// When every remaining squared distance is zero (duplicate points) the next
/// centre is drawn uniformly from the points not yet chosen.
pub fn kmeans_pp_init<F: Scalar, R: Rng + ?Sized>(
    points: ArrayView2<'_, F>,
    k: usize,
    rng: &mut R,
) -> Result<Array2<F>> {
    check_points(&points, k)?;
    let points = points.as_standard_layout();
    let pv = points.view();
    let (n, d) = pv.dim();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(row(&pv, i), row(&pv, chosen[0])).as_f64())
        .collect();

    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 && total.is_finite() {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                if u < acc {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave u just above the running sum
            pick.unwrap_or_else(|| nearest.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            let remaining: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            remaining[rng.random_range(0..remaining.len())]
        };
        chosen.push(next);
        for (i, w) in nearest.iter_mut().enumerate() {
            let dist = sq_dist(row(&pv, i), row(&pv, next)).as_f64();
            if dist < *w {
                *w = dist;
            }
        }
    }
    Ok(Array2::from_shape_fn((k, d), |(c, j)| pv[[chosen[c], j]]))
}

fn assign<F: Scalar>(points: &ArrayView2<'_, F>, centers: &Array2<F>) -> (Vec<usize>, Vec<F>) {
    let n = points.nrows();
    let k = centers.nrows();
    let centers = centers.as_standard_layout();
    let mut labels = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n);
    for i in 0..n {
        let p = row(points, i);
        let mut best = 0;
        let mut best_d = sq_dist(p, centers.row(0).to_slice().expect("contiguous"));
        for c in 1..k {
            let dc = sq_dist(p, centers.row(c).to_slice().expect("contiguous"));
            // strict: lowest index wins ties
            if dc < best_d {
                best = c;
                best_d = dc;
            }
        }
        labels.push(best);
        dists.push(best_d);
    }
    (labels, dists)
}

fn means<F: Scalar>(points: &ArrayView2<'_, F>, labels: &[usize], k: usize) -> (Array2<F>, Vec<usize>) {
    let d = points.ncols();
    let mut sums = Array2::<F>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for j in 0..d {
            sums[[l, j]] = sums[[l, j]] + points[[i, j]];
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let cnt = F::from_usize_lossy(counts[c]);
            for j in 0..d {
                sums[[c, j]] = sums[[c, j]] / cnt;
            }
        }
    }
    (sums, counts)
}

fn distortion_of<F: Scalar>(points: &ArrayView2<'_, F>, labels: &[usize], centroids: &Array2<F>) -> F {
    let centroids = centroids.as_standard_layout();
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(row(points, i), centroids.row(l).to_slice().expect("contiguous")))
        .fold(F::zero(), |a, b| a + b)
}

/// Lloyd iterations from the given starting centres.
///
/// Each iteration assigns points to the nearest centre, repairs empty
/// clusters by moving the point farthest from its centre into them, and
/// recomputes centroids as member means. Stops once no centroid moves by
/// `tol` or more, or after `max_iter` iterations.
pub fn lloyd<F: Scalar>(
    points: ArrayView2<'_, F>,
    init: Array2<F>,
    max_iter: usize,
    tol: f64,
) -> LloydRun<F> {
    let points = points.as_standard_layout();
    let pv = points.view();
    let k = init.nrows();
    let tol = F::lit(tol);
    let mut centers = init;
    let mut labels = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let (mut lab, mut dist) = assign(&pv, &centers);
        let mut counts = vec![0usize; k];
        for &l in &lab {
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far: Option<usize> = None;
            for i in 0..lab.len() {
                if counts[lab[i]] > 1 && far.is_none_or(|f| dist[i] > dist[f]) {
                    far = Some(i);
                }
            }
            let Some(i) = far else { break };
            counts[lab[i]] -= 1;
            counts[c] += 1;
            lab[i] = c;
            dist[i] = F::zero();
            for j in 0..pv.ncols() {
                centers[[c, j]] = pv[[i, j]];
            }
        }
        let (new_centers, _) = means(&pv, &lab, k);
        let shift = (0..k)
            .map(|c| {
                sq_dist(
                    new_centers.row(c).to_slice().expect("contiguous"),
                    centers.as_standard_layout().row(c).to_slice().expect("contiguous"),
                )
                .sqrt()
            })
            .fold(F::zero(), |a, b| a.max(b));
        history.push(distortion_of(&pv, &lab, &new_centers));
        centers = new_centers;
        labels = lab;
        if shift < tol {
            break;
        }
    }
    let distortion = *history.last().expect("at least one iteration");
    LloydRun {
        labels,
        centroids: centers,
        distortion,
        history,
        iterations,
    }
}

/// k-means with `n_init` k-means++ restarts drawn from one generator; the
/// restart with the lowest distortion wins (earliest on ties).
pub fn kmeans_fit_with_rng<F: Scalar>(
    points: ArrayView2<'_, F>,
    k: usize,
    rng: &mut PipelineRng,
    cfg: &KMeansConfig,
) -> Result<(LloydRun<F>, Vec<F>)> {
    check_points(&points, k)?;
    if cfg.n_init == 0 {
        return Err(Error::InvalidInput("n_init must be at least 1".into()));
    }
    let mut best: Option<LloydRun<F>> = None;
    let mut run_distortions = Vec::with_capacity(cfg.n_init);
    for _ in 0..cfg.n_init {
        let init = kmeans_pp_init(points, k, rng)?;
        let run = lloyd(points, init, cfg.max_iter, cfg.tol);
        run_distortions.push(run.distortion);
        if best.as_ref().is_none_or(|b| run.distortion < b.distortion) {
            best = Some(run);
        }
    }
    Ok((best.expect("n_init >= 1"), run_distortions))
}

/// k-means seeded from a 64-bit seed (recorded in the result).
pub fn kmeans_fit<F: Scalar>(
    points: ArrayView2<'_, F>,
    k: usize,
    seed: u64,
    cfg: &KMeansConfig,
) -> Result<Clustering<F>> {
    let mut rng = rng_from_seed(seed);
    let (run, run_distortions) = kmeans_fit_with_rng(points, k, &mut rng, cfg)?;
    Ok(Clustering {
        labels: run.labels,
        centroids: run.centroids,
        distortion: run.distortion,
        k,
        seed,
        n_init: cfg.n_init,
        silhouette: None,
        run_distortions,
    })
}

/// Relabel clusters by descending size (largest becomes 0); equal sizes keep
/// their original relative order. Returns the new labels and the mapping
/// `old -> new`.
pub fn relabel_by_size(labels: &[usize], k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]));
    let mut map = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        map[old] = new;
    }
    (labels.iter().map(|&l| map[l]).collect(), map)
}

impl<F: Scalar> Clustering<F> {
    /// Apply [`relabel_by_size`] to labels and centroids.
    pub fn relabeled_by_size(mut self) -> Self {
        let (labels, map) = relabel_by_size(&self.labels, self.k);
        let old = self.centroids.clone();
        for (o, &n) in map.iter().enumerate() {
            self.centroids.row_mut(n).assign(&old.row(o));
        }
        self.labels = labels;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn k_equal_n_picks_every_point() {
        let pts = array![[0.0f64, 0.0], [1.0, 0.0], [5.0, 5.0], [2.0, 9.0]];
        let mut rng = rng_from_seed(1);
        let c = kmeans_pp_init(pts.view(), 4, &mut rng).unwrap();
        let mut picked: Vec<Vec<f64>> = c.rows().into_iter().map(|r| r.to_vec()).collect();
        picked.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut all: Vec<Vec<f64>> = pts.rows().into_iter().map(|r| r.to_vec()).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(picked, all);
    }

    #[test]
    fn duplicate_points_fall_back_to_uniform() {
        let pts = array![[1.0f64, 1.0], [1.0, 1.0], [1.0, 1.0]];
        let mut rng = rng_from_seed(2);
        let c = kmeans_pp_init(pts.view(), 2, &mut rng).unwrap();
        assert_eq!(c, array![[1.0f64, 1.0], [1.0, 1.0]]);
    }

    #[test]
    fn rejects_bad_k_and_non_finite() {
        let pts = array![[0.0f64], [1.0]];
        let mut rng = rng_from_seed(0);
        assert!(kmeans_pp_init(pts.view(), 3, &mut rng).is_err());
        let bad = array![[0.0], [f64::NAN]];
        assert!(kmeans_fit(bad.view(), 1, 0, &KMeansConfig::default()).is_err());
    }

    #[test]
    fn two_pairs_split_perfectly() {
        let pts = array![[0.0f64, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]];
        let c = kmeans_fit(pts.view(), 2, 4, &KMeansConfig::default()).unwrap();
        assert_eq!(c.labels[0], c.labels[1]);
        assert_eq!(c.labels[2], c.labels[3]);
        assert_ne!(c.labels[0], c.labels[2]);
        assert!((c.distortion - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_is_grand_mean() {
        let pts = array![[1.0f64, 2.0], [3.0, 0.0], [2.0, 7.0]];
        let c = kmeans_fit(pts.view(), 1, 0, &KMeansConfig::default()).unwrap();
        assert!((c.centroids[[0, 0]] - 2.0).abs() < 1e-12);
        assert!((c.centroids[[0, 1]] - 3.0).abs() < 1e-12);
        let tss = 1.0 + 1.0 + 0.0 + 1.0 + 9.0 + 16.0;
        assert!((c.distortion - tss).abs() < 1e-12);
    }

    #[test]
    fn empty_cluster_is_repaired() {
        // two starting centres far from every point: the second gets nothing
        let pts = array![[0.0f64], [1.0], [2.0], [10.0]];
        let run = lloyd(pts.view(), array![[0.5f64], [100.0]], 100, 1e-9);
        let mut sizes = [0; 2];
        for &l in &run.labels {
            sizes[l] += 1;
        }
        assert!(sizes.iter().all(|&s| s > 0));
        assert!(run.history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn distortion_non_increasing_and_min_over_runs() {
        let mut rng = rng_from_seed(11);
        let pts = Array2::from_shape_fn((120, 3), |_| rng.random::<f64>() * 10.0);
        for seed in 0..5 {
            let mut r = rng_from_seed(seed);
            let init = kmeans_pp_init(pts.view(), 6, &mut r).unwrap();
            let run = lloyd(pts.view(), init, 300, 1e-6);
            for w in run.history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
            let c = kmeans_fit(pts.view(), 6, seed, &KMeansConfig::default()).unwrap();
            let min = c.run_distortions.iter().cloned().fold(f64::INFINITY, f64::min);
            assert_eq!(c.distortion, min);
            // distortion recomputed from labels and centroids
            let mut d = 0.0;
            for (i, &l) in c.labels.iter().enumerate() {
                for j in 0..3 {
                    d += (pts[[i, j]] - c.centroids[[l, j]]).powi(2);
                }
            }
            assert!((d - c.distortion).abs() <= 1e-6 * d);
        }
    }

    #[test]
    fn relabel_by_size_orders_and_breaks_ties_by_label() {
        let labels = vec![2, 2, 2, 0, 1, 1, 0, 3, 3];
        let (new, map) = relabel_by_size(&labels, 4);
        assert_eq!(map, vec![1, 2, 0, 3]);
        assert_eq!(new, vec![0, 0, 0, 1, 2, 2, 1, 3, 3]);
    }

    #[test]
    fn works_in_f32() {
        let pts: Array2<f32> = array![[0.0, 0.0], [0.0, 1.0], [9.0, 9.0], [9.0, 8.0]];
        let c = kmeans_fit(pts.view(), 2, 1, &KMeansConfig::default()).unwrap();
        assert!((c.distortion - 1.0).abs() < 1e-5);
    }
}
