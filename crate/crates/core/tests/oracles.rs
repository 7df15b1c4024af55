//! Library results checked against slow, independent reference implementations.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regime_kit::cluster::{adjusted_rand_index, kmeans_fit, kmeans_pp_init, silhouette_score, KMeansConfig};
use regime_kit::embed::fit_pca;
use regime_kit::stats::{average_ranks, spearman, variance_decomposition};

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-5.0..5.0))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn distortion(x: &Array2<f64>, labels: &[usize], k: usize) -> f64 {
    let d = x.ncols();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for j in 0..d {
            sums[l][j] += x[[i, j]];
        }
    }
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        for j in 0..d {
            let c = sums[l][j] / counts[l] as f64;
            total += (x[[i, j]] - c).powi(2);
        }
    }
    total
}

/// Minimum distortion over every assignment with no empty cluster.
fn exhaustive_min(x: &Array2<f64>, k: usize) -> f64 {
    let n = x.nrows();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    let total = k.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let mut used = vec![false; k];
        for l in labels.iter_mut() {
            *l = c % k;
            used[*l] = true;
            c /= k;
        }
        if used.iter().all(|&u| u) {
            best = best.min(distortion(x, &labels, k));
        }
    }
    best
}

#[test]
fn kmeans_never_beats_exhaustive_optimum_and_finds_it_with_restarts() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = KMeansConfig::default().with_n_init(25);
    let mut hits = 0;
    let trials = 30;
    for t in 0..trials {
        let k = 2 + t % 2;
        let x = random_points(&mut rng, 8, 2);
        let opt = exhaustive_min(&x, k);
        let fit = kmeans_fit(x.view(), k, t as u64, &cfg).unwrap();
        assert!(fit.distortion >= opt - 1e-9, "distortion below the optimum");
        assert!((fit.distortion - distortion(&x, &fit.labels, k)).abs() < 1e-9);
        // Lloyd fixed point: every point sits with its nearest centroid
        for i in 0..8 {
            let own = dist(x.row(i).as_slice().unwrap(), fit.centroids.row(fit.labels[i]).as_slice().unwrap());
            for c in 0..k {
                let other = dist(x.row(i).as_slice().unwrap(), fit.centroids.row(c).as_slice().unwrap());
                assert!(own <= other + 1e-9);
            }
        }
        if (fit.distortion - opt).abs() < 1e-9 {
            hits += 1;
        }
    }
    assert!(hits >= trials * 9 / 10, "optimum reached in only {hits}/{trials} cases");
}

#[test]
fn kmeans_pp_second_centre_follows_d2_weights() {
    let x = ndarray::array![[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [0.0, 4.0], [6.0, 6.0]];
    let n = x.nrows();
    let mut expected = vec![vec![0.0; n]; n];
    for i in 0..n {
        let w: Vec<f64> = (0..n).map(|j| dist(x.row(i).as_slice().unwrap(), x.row(j).as_slice().unwrap()).powi(2)).collect();
        let s: f64 = w.iter().sum();
        for j in 0..n {
            expected[i][j] = w[j] / s / n as f64;
        }
    }
    let draws = 40_000;
    let mut counts = vec![vec![0usize; n]; n];
    let mut rng = regime_kit::rng::rng_from_seed(5);
    let find = |c: ndarray::ArrayView1<f64>| (0..n).find(|&r| x.row(r) == c).unwrap();
    for _ in 0..draws {
        let c = kmeans_pp_init(x.view(), 2, &mut rng).unwrap();
        counts[find(c.row(0))][find(c.row(1))] += 1;
    }
    for i in 0..n {
        for j in 0..n {
            let p = expected[i][j];
            let obs = counts[i][j] as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((obs - p).abs() <= 5.0 * se + 1e-12, "pair ({i},{j}): {obs} vs {p}");
        }
    }
}

fn brute_silhouette(x: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = x.nrows();
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..n {
        let mut sum = vec![0.0; k];
        let mut cnt = vec![0usize; k];
        for j in 0..n {
            if j != i {
                sum[labels[j]] += dist(x.row(i).as_slice().unwrap(), x.row(j).as_slice().unwrap());
                cnt[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if cnt[own] == 0 {
            continue;
        }
        let a = sum[own] / cnt[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && cnt[c] > 0)
            .map(|c| sum[c] / cnt[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

#[test]
fn silhouette_matches_quadratic_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..40 {
        let n = rng.random_range(10..80);
        let k = rng.random_range(2..6);
        let x = random_points(&mut rng, n, 3);
        let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        for l in labels.iter_mut().skip(k) {
            *l = rng.random_range(0..k);
        }
        let s = silhouette_score(x.view(), &labels).unwrap();
        assert!((s.mean - brute_silhouette(&x, &labels)).abs() < 1e-9);
    }
}

fn choose2(n: f64) -> f64 {
    n * (n - 1.0) / 2.0
}

/// Hubert-Arabie ARI from explicit pair counts.
fn pair_ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut in_a, mut in_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            in_a += sa as u8 as f64;
            in_b += sb as u8 as f64;
            both += (sa && sb) as u8 as f64;
        }
    }
    let pairs = choose2(n as f64);
    let expected = in_a * in_b / pairs;
    let max = 0.5 * (in_a + in_b);
    (both - expected) / (max - expected)
}

#[test]
fn ari_matches_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let n = rng.random_range(5..60);
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let oracle = pair_ari(&a, &b);
        if oracle.is_finite() {
            assert!((adjusted_rand_index(&a, &b).unwrap() - oracle).abs() < 1e-12);
        }
    }
}

fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

#[test]
fn spearman_equals_pearson_of_brute_force_ranks() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..300 {
        let n = rng.random_range(4..40);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let (rx, ry) = (brute_ranks(&x), brute_ranks(&y));
        assert_eq!(average_ranks(&x), rx);
        let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mx, my) = (m(&rx), m(&ry));
        let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
        if sxx == 0.0 || syy == 0.0 {
            continue;
        }
        let r = spearman(&x, &y).unwrap();
        assert!((r.rho - sxy / (sxx * syy).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn pca_agrees_with_covariance_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let (n, p) = (rng.random_range(8..40), rng.random_range(2..7));
        let x = random_points(&mut rng, n, p);
        let emb = fit_pca(x.view(), 1.0).unwrap();

        let mut m = DMatrix::<f64>::zeros(n, p);
        for i in 0..n {
            for j in 0..p {
                m[(i, j)] = x[[i, j]];
            }
        }
        let means = m.row_mean();
        for i in 0..n {
            for j in 0..p {
                m[(i, j)] -= means[j];
            }
        }
        let cov = m.transpose() * &m / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let total: f64 = eig.eigenvalues.iter().sum();

        for (c, &e) in order.iter().enumerate().take(emb.n_components()) {
            assert!((emb.full_spectrum[c] - eig.eigenvalues[e] / total).abs() < 1e-9);
            let v = eig.eigenvectors.column(e);
            let arg = (0..p).max_by(|&a, &b| v[a].abs().partial_cmp(&v[b].abs()).unwrap()).unwrap();
            let s = v[arg].signum();
            for j in 0..p {
                assert!((emb.components[[c, j]] - s * v[j]).abs() < 1e-7, "component {c} loading {j}");
            }
        }
    }
}

#[test]
fn decomposition_matches_group_mean_sums_of_squares() {
    // Balanced 3x3 design: fixed-effect RSS reduces to within-cell and
    // within-country sums of squares.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut y = Vec::new();
    let mut countries = Vec::new();
    let mut regimes = Vec::new();
    for c in 0..3 {
        for r in 0..3 {
            for _ in 0..4 {
                y.push(c as f64 + 0.5 * r as f64 + rng.random_range(-1.0..1.0));
                countries.push(format!("C{c}"));
                regimes.push(r);
            }
        }
    }
    let res = variance_decomposition(&y, &countries, &regimes).unwrap();
    let mut rss_r = 0.0;
    for c in 0..3 {
        let idx: Vec<usize> = (0..y.len()).filter(|&i| countries[i] == format!("C{c}")).collect();
        let m = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
        rss_r += idx.iter().map(|&i| (y[i] - m).powi(2)).sum::<f64>();
    }
    assert!((res.rss_restricted - rss_r).abs() < 1e-9);
    // additive model in a balanced design: fitted = row + col - grand
    let grand = y.iter().sum::<f64>() / y.len() as f64;
    let mean_where = |f: &dyn Fn(usize) -> bool| {
        let v: Vec<f64> = (0..y.len()).filter(|&i| f(i)).map(|i| y[i]).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let rss_f: f64 = (0..y.len())
        .map(|i| {
            let cm = mean_where(&|j| countries[j] == countries[i]);
            let rm = mean_where(&|j| regimes[j] == regimes[i]);
            (y[i] - (cm + rm - grand)).powi(2)
        })
        .sum();
    assert!((res.rss_full - rss_f).abs() < 1e-9);
    assert_eq!((res.df_num, res.df_den), (2, 36 - 5));
}
