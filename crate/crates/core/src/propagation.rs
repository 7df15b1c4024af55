//! Directed lagged-correlation network between regime growth series.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::panel::{EntityMeta, GeoPoint};
use crate::regimes::RegimeTrajectories;
use crate::rng::{derive_rng, tags, RNG_NAME};
use crate::scalar::{mean, std_dev, Scalar};

/// Mean earth radius in kilometres (IUGG).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanMode {
    /// Centre each series on its mean over the whole period.
    #[default]
    FullSeries,
    /// Centre on the means of the overlapping window only (textbook Pearson).
    Overlap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct LagCorrelation<F> {
    pub rho: F,
    /// Overlap length `len - lag`.
    pub n: usize,
}

/// Correlation between `x[t]` and `y[t + lag]` over their overlap.
///
/// Returns `Ok(None)` when either side has zero variation on the overlap.
pub fn lagged_correlation<F: Scalar>(
    x: &[F],
    y: &[F],
    lag: usize,
    mode: MeanMode,
) -> Result<Option<LagCorrelation<F>>> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < lag + 3 {
        return Err(Error::InvalidInput(format!(
            "series of length {} too short for lag {lag}",
            x.len()
        )));
    }
    let n = x.len() - lag;
    let xs = &x[..n];
    let ys = &y[lag..];
    let (mx, my) = match mode {
        MeanMode::FullSeries => (mean(x).expect("non-empty"), mean(y).expect("non-empty")),
        MeanMode::Overlap => (mean(xs).expect("non-empty"), mean(ys).expect("non-empty")),
    };
    let mut sxy = F::zero();
    let mut sxx = F::zero();
    let mut syy = F::zero();
    for (&a, &b) in xs.iter().zip(ys) {
        let (da, db) = (a - mx, b - my);
        sxy = sxy + da * db;
        sxx = sxx + da * da;
        syy = syy + db * db;
    }
    let denom = (sxx * syy).sqrt();
    if !(denom > F::zero()) {
        return Ok(None);
    }
    Ok(Some(LagCorrelation { rho: sxy / denom, n }))
}

/// Two-sided normal critical value for significance level `alpha`.
pub fn critical_z(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha {alpha} outside (0, 1)")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

/// `|rho|` threshold for an overlap of `n` observations.
pub fn significance_threshold(n: usize, alpha: f64) -> Result<f64> {
    Ok(critical_z(alpha)? / (n as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub tau_max: usize,
    pub alpha: f64,
    /// Regimes with fewer members are left out of the network.
    pub min_members: usize,
    pub mean_mode: MeanMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            tau_max: 3,
            alpha: 0.05,
            min_members: 0,
            mean_mode: MeanMode::FullSeries,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Edge<F> {
    pub source: usize,
    pub target: usize,
    pub lag: usize,
    pub rho: F,
    pub n: usize,
    /// Lag-0 correlations are symmetric and appear once per direction.
    pub undirected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct TestedPair<F> {
    pub source: usize,
    pub target: usize,
    pub lag: usize,
    /// `None` when the correlation is undefined (flat overlap).
    pub rho: Option<F>,
    pub n: usize,
    pub significant: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Exporter,
    Absorber,
    Amplifier,
    Buffer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct NodeSummary<F> {
    pub cluster: usize,
    pub members: usize,
    pub out_strength: F,
    pub in_strength: F,
    pub net_export: F,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct PropagationNetwork<F> {
    pub nodes: Vec<NodeSummary<F>>,
    pub edges: Vec<Edge<F>>,
    /// Every (source, target, lag) test, significant or not.
    pub tested: Vec<TestedPair<F>>,
    pub config: NetworkConfig,
    pub critical_z: f64,
    pub median_out: F,
    pub median_in: F,
}

impl<F: Scalar> PropagationNetwork<F> {
    pub fn node(&self, cluster: usize) -> Option<&NodeSummary<F>> {
        self.nodes.iter().find(|n| n.cluster == cluster)
    }

    pub fn has_edge(&self, source: usize, target: usize, lag: usize) -> bool {
        self.edges
            .iter()
            .any(|e| e.source == source && e.target == target && e.lag == lag)
    }
}

fn median<F: Scalar>(xs: &[F]) -> F {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / F::lit(2.0)
    }
}

/// Median split of outgoing and incoming strength. A value equal to the
/// median counts as low. Returns the roles and both medians.
pub fn classify_roles<F: Scalar>(out_strength: &[F], in_strength: &[F]) -> Result<(Vec<Role>, F, F)> {
    if out_strength.len() != in_strength.len() {
        return Err(Error::DimensionMismatch {
            expected: out_strength.len(),
            found: in_strength.len(),
        });
    }
    if out_strength.len() < 2 {
        return Err(Error::InvalidInput("role classification needs at least 2 nodes".into()));
    }
    let mo = median(out_strength);
    let mi = median(in_strength);
    let roles = out_strength
        .iter()
        .zip(in_strength)
        .map(|(&o, &i)| match (o > mo, i > mi) {
            (true, false) => Role::Exporter,
            (false, true) => Role::Absorber,
            (true, true) => Role::Amplifier,
            (false, false) => Role::Buffer,
        })
        .collect();
    Ok((roles, mo, mi))
}

/// `(source, target, lag, rho, n, significant)`
type GridRow<F> = (usize, usize, usize, Option<F>, usize, bool);

/// All ordered pair-lag tests among the given series.
fn test_grid<F: Scalar>(
    series: &[Vec<F>],
    tau_max: usize,
    z: f64,
    mode: MeanMode,
) -> Result<Vec<GridRow<F>>> {
    let m = series.len();
    let mut out = Vec::with_capacity(m * m.saturating_sub(1) * (tau_max + 1));
    for a in 0..m {
        for b in 0..m {
            if a == b {
                continue;
            }
            for lag in 0..=tau_max {
                let r = lagged_correlation(&series[a], &series[b], lag, mode)?;
                let n = series[a].len() - lag;
                let thr = F::lit(z / (n as f64).sqrt());
                let rho = r.map(|c| c.rho);
                let sig = rho.is_some_and(|r| r.abs() > thr);
                out.push((a, b, lag, rho, n, sig));
            }
        }
    }
    Ok(out)
}

fn node_indices<F: Scalar>(rt: &RegimeTrajectories<F>, min_members: usize) -> Vec<usize> {
    (0..rt.n_clusters())
        .filter(|&c| rt.member_counts[c] >= min_members)
        .collect()
}

/// Test every ordered regime pair at lags `0..=tau_max`, keep correlations
/// beyond `z / sqrt(n)` and summarise each node's signed in/out strength.
pub fn build_network<F: Scalar>(rt: &RegimeTrajectories<F>, cfg: &NetworkConfig) -> Result<PropagationNetwork<F>> {
    let z = critical_z(cfg.alpha)?;
    let nodes = node_indices(rt, cfg.min_members);
    if nodes.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "{} regime(s) have at least {} members; the network needs 2",
            nodes.len(),
            cfg.min_members
        )));
    }
    let series: Vec<Vec<F>> = nodes.iter().map(|&c| rt.series(c)).collect();
    let grid = test_grid(&series, cfg.tau_max, z, cfg.mean_mode)?;
    let m = nodes.len();
    let mut out_s = vec![F::zero(); m];
    let mut in_s = vec![F::zero(); m];
    let mut edges = Vec::new();
    let mut tested = Vec::with_capacity(grid.len());
    for &(a, b, lag, rho, n, sig) in &grid {
        let (src, tgt) = (rt.clusters[nodes[a]], rt.clusters[nodes[b]]);
        if rho.is_none() {
            log::warn!("correlation {src}->{tgt} at lag {lag} undefined (flat overlap); skipped");
        }
        if sig {
            let r = rho.expect("significant implies defined");
            out_s[a] = out_s[a] + r;
            in_s[b] = in_s[b] + r;
            edges.push(Edge {
                source: src,
                target: tgt,
                lag,
                rho: r,
                n,
                undirected: lag == 0,
            });
        }
        tested.push(TestedPair {
            source: src,
            target: tgt,
            lag,
            rho,
            n,
            significant: sig,
        });
    }
    let (roles, median_out, median_in) = classify_roles(&out_s, &in_s)?;
    let node_summaries = (0..m)
        .map(|i| NodeSummary {
            cluster: rt.clusters[nodes[i]],
            members: rt.member_counts[nodes[i]],
            out_strength: out_s[i],
            in_strength: in_s[i],
            net_export: out_s[i] - in_s[i],
            role: roles[i],
        })
        .collect();
    Ok(PropagationNetwork {
        nodes: node_summaries,
        edges,
        tested,
        config: *cfg,
        critical_z: z,
        median_out,
        median_in,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeCountMode {
    /// Every significant (source, target, lag) counts.
    #[default]
    Ordered,
    /// An unordered pair counts once if any direction or lag is significant.
    UnorderedMax,
}

impl std::str::FromStr for EdgeCountMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ordered" => Ok(Self::Ordered),
            "unordered-max" => Ok(Self::UnorderedMax),
            other => Err(Error::InvalidInput(format!(
                "unknown edge count mode '{other}' (expected ordered or unordered-max)"
            ))),
        }
    }
}

fn count_significant(sig: impl Iterator<Item = (usize, usize, bool)>, mode: EdgeCountMode) -> usize {
    match mode {
        EdgeCountMode::Ordered => sig.filter(|s| s.2).count(),
        EdgeCountMode::UnorderedMax => {
            let mut pairs: Vec<(usize, usize)> = sig
                .filter(|s| s.2)
                .map(|(a, b, _)| (a.min(b), a.max(b)))
                .collect();
            pairs.sort_unstable();
            pairs.dedup();
            pairs.len()
        }
    }
}

pub fn count_edges<F: Scalar>(net: &PropagationNetwork<F>, mode: EdgeCountMode) -> usize {
    count_significant(
        net.tested.iter().map(|t| (t.source, t.target, t.significant)),
        mode,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkNullConfig {
    pub n_permutations: usize,
    pub master_seed: u64,
    pub count_mode: EdgeCountMode,
}

impl Default for NetworkNullConfig {
    fn default() -> Self {
        Self {
            n_permutations: 10_000,
            master_seed: 0,
            count_mode: EdgeCountMode::Ordered,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkNullReport {
    pub n_permutations: usize,
    pub count_mode: EdgeCountMode,
    pub null_counts: Vec<usize>,
    pub null_mean: f64,
    /// Population standard deviation of the null counts.
    pub null_sd: f64,
    pub null_p99: f64,
    pub observed: usize,
    /// `(1 + #{null >= observed}) / (1 + n_permutations)`.
    pub p_value: f64,
    /// `(edge count, number of permutations)` for plotting.
    pub histogram: Vec<(usize, usize)>,
    pub master_seed: u64,
    pub rng: String,
}

/// Significant-edge count distribution when every regime series is
/// independently shuffled in time.
pub fn network_null<F: Scalar>(
    rt: &RegimeTrajectories<F>,
    cfg: &NetworkConfig,
    null_cfg: &NetworkNullConfig,
) -> Result<NetworkNullReport> {
    if null_cfg.n_permutations == 0 {
        return Err(Error::InvalidInput("n_permutations must be at least 1".into()));
    }
    let observed = count_edges(&build_network(rt, cfg)?, null_cfg.count_mode);
    let z = critical_z(cfg.alpha)?;
    let series: Vec<Vec<F>> = node_indices(rt, cfg.min_members)
        .into_iter()
        .map(|c| rt.series(c))
        .collect();
    let null_counts: Vec<usize> = (0..null_cfg.n_permutations as u64)
        .into_par_iter()
        .map(|p| -> Result<usize> {
            let mut rng = derive_rng(null_cfg.master_seed, &[tags::NETWORK_NULL, p]);
            let shuffled: Vec<Vec<F>> = series
                .iter()
                .map(|s| {
                    let mut v = s.clone();
                    v.shuffle(&mut rng);
                    v
                })
                .collect();
            let grid = test_grid(&shuffled, cfg.tau_max, z, cfg.mean_mode)?;
            Ok(count_significant(grid.iter().map(|g| (g.0, g.1, g.5)), null_cfg.count_mode))
        })
        .collect::<Result<_>>()?;
    let as_f: Vec<f64> = null_counts.iter().map(|&c| c as f64).collect();
    let exceed = null_counts.iter().filter(|&&c| c >= observed).count();
    let mut hist = std::collections::BTreeMap::new();
    for &c in &null_counts {
        *hist.entry(c).or_insert(0usize) += 1;
    }
    let p99 = crate::regimes::percentile(&as_f, 99.0, crate::regimes::PercentileMethod::Linear);
    Ok(NetworkNullReport {
        n_permutations: null_cfg.n_permutations,
        count_mode: null_cfg.count_mode,
        null_mean: mean(&as_f).expect("non-empty"),
        null_sd: std_dev(&as_f, 0).expect("non-empty"),
        null_p99: p99,
        null_counts,
        observed,
        p_value: (1 + exceed) as f64 / (1 + null_cfg.n_permutations) as f64,
        histogram: hist.into_iter().collect(),
        master_seed: null_cfg.master_seed,
        rng: RNG_NAME.to_string(),
    })
}

/// Great-circle distance on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Arithmetic mean of member coordinates per cluster (`None` if no member
/// has coordinates).
pub fn cluster_centroids(entities: &[EntityMeta], labels: &[usize], k: usize) -> Vec<Option<GeoPoint>> {
    let mut acc = vec![(0.0, 0.0, 0usize); k];
    for (e, &l) in entities.iter().zip(labels) {
        if let Some(p) = e.location {
            acc[l].0 += p.lon;
            acc[l].1 += p.lat;
            acc[l].2 += 1;
        }
    }
    acc.into_iter()
        .map(|(lon, lat, n)| {
            (n > 0).then(|| GeoPoint {
                lon: lon / n as f64,
                lat: lat / n as f64,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct SpatialDecayRow<F> {
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub distance_km: f64,
    /// Largest `|rho|` over both directions and all tested lags.
    pub max_abs_rho: Option<F>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct SpatialDecayTable<F> {
    pub rows: Vec<SpatialDecayRow<F>>,
    /// Network nodes left out for lack of coordinates.
    pub excluded_clusters: Vec<usize>,
}

impl<F: Scalar> SpatialDecayTable<F> {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["cluster_a", "cluster_b", "distance_km", "max_abs_rho"])?;
        for r in &self.rows {
            w.write_record([
                r.cluster_a.to_string(),
                r.cluster_b.to_string(),
                r.distance_km.to_string(),
                r.max_abs_rho.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pair every two network nodes' centroid distance with their strongest
/// lagged correlation (all tested correlations, significant or not).
pub fn spatial_decay<F: Scalar>(
    net: &PropagationNetwork<F>,
    entities: &[EntityMeta],
    labels: &[usize],
) -> Result<SpatialDecayTable<F>> {
    if entities.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: entities.len(),
            found: labels.len(),
        });
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let centroids = cluster_centroids(entities, labels, k);
    let mut excluded = Vec::new();
    let located: Vec<(usize, GeoPoint)> = net
        .nodes
        .iter()
        .filter_map(|n| match centroids.get(n.cluster).copied().flatten() {
            Some(p) => Some((n.cluster, p)),
            None => {
                log::warn!("cluster {} has no coordinates; left out of spatial decay", n.cluster);
                excluded.push(n.cluster);
                None
            }
        })
        .collect();
    let mut rows = Vec::new();
    for i in 0..located.len() {
        for j in (i + 1)..located.len() {
            let (a, pa) = located[i];
            let (b, pb) = located[j];
            let max_abs_rho = net
                .tested
                .iter()
                .filter(|t| (t.source == a && t.target == b) || (t.source == b && t.target == a))
                .filter_map(|t| t.rho.map(|r| r.abs()))
                .fold(None, |m: Option<F>, r| Some(m.map_or(r, |v| v.max(r))));
            rows.push(SpatialDecayRow {
                cluster_a: a,
                cluster_b: b,
                distance_km: haversine_km(pa, pb),
                max_abs_rho,
            });
        }
    }
    Ok(SpatialDecayTable {
        rows,
        excluded_clusters: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn rt(series: Vec<Vec<f64>>) -> RegimeTrajectories<f64> {
        let k = series.len();
        let t = series[0].len();
        let flat: Vec<f64> = series.into_iter().flatten().collect();
        RegimeTrajectories::from_series(
            (1..=t as i32).collect(),
            Array2::from_shape_vec((k, t), flat).unwrap(),
            vec![10; k],
        )
        .unwrap()
    }

    #[test]
    fn self_correlation_is_one() {
        let x: Vec<f64> = (0..26).map(|i| ((i * 13) % 7) as f64).collect();
        let c = lagged_correlation(&x, &x, 0, MeanMode::FullSeries).unwrap().unwrap();
        assert!((c.rho - 1.0).abs() < 1e-12);
        assert_eq!(c.n, 26);
    }

    #[test]
    fn planted_circular_lag_is_perfect() {
        // circular shift keeps the full-series mean, so both centrings agree
        let x: Vec<f64> = (0..26).map(|i| ((i * 11) % 9) as f64 - 2.0).collect();
        let y: Vec<f64> = (0..26).map(|t| x[(t + 26 - 2) % 26]).collect();
        for mode in [MeanMode::FullSeries, MeanMode::Overlap] {
            let c = lagged_correlation(&x, &y, 2, mode).unwrap().unwrap();
            assert!((c.rho - 1.0).abs() < 1e-12);
            assert_eq!(c.n, 24);
        }
    }

    #[test]
    fn flat_overlap_is_undefined_and_short_series_error() {
        let x = vec![1.0; 10];
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(lagged_correlation(&x, &y, 1, MeanMode::Overlap).unwrap().is_none());
        assert!(lagged_correlation(&y[..4], &y[..4], 2, MeanMode::Overlap).is_err());
    }

    #[test]
    fn threshold_at_longest_lag() {
        let thr = significance_threshold(26 - 3, 0.05).unwrap();
        assert!((thr - 0.4087).abs() < 5e-5);
    }

    #[test]
    fn two_node_roles() {
        let (roles, mo, mi) = classify_roles(&[3.0, 1.0], &[1.0, 3.0]).unwrap();
        assert_eq!(mo, 2.0);
        assert_eq!(mi, 2.0);
        assert_eq!(roles, vec![Role::Exporter, Role::Absorber]);
        let (roles, _, _) = classify_roles(&[0.5; 4], &[0.5; 4]).unwrap();
        assert!(roles.iter().all(|r| *r == Role::Buffer));
        assert!(classify_roles(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn strengths_balance_and_net_export_is_exact() {
        let s: Vec<Vec<f64>> = (0..5)
            .map(|c| (0..26).map(|t| (((t * (c + 3) + c) % 11) as f64).sin() * 3.0).collect())
            .collect();
        let net = build_network(&rt(s), &NetworkConfig::default()).unwrap();
        let so: f64 = net.nodes.iter().map(|n| n.out_strength).sum();
        let si: f64 = net.nodes.iter().map(|n| n.in_strength).sum();
        assert!((so - si).abs() < 1e-12);
        for n in &net.nodes {
            assert_eq!(n.net_export, n.out_strength - n.in_strength);
        }
        for e in &net.edges {
            assert!(e.rho.abs() > net.critical_z / (e.n as f64).sqrt());
        }
        assert_eq!(net.tested.len(), 5 * 4 * 4);
    }

    #[test]
    fn min_members_filters_nodes() {
        let s: Vec<Vec<f64>> = (0..3).map(|c| (0..10).map(|t| ((t + c) % 4) as f64).collect()).collect();
        let mut r = rt(s);
        r.member_counts = vec![60, 10, 70];
        let cfg = NetworkConfig {
            min_members: 50,
            ..Default::default()
        };
        let net = build_network(&r, &cfg).unwrap();
        assert_eq!(net.nodes.iter().map(|n| n.cluster).collect::<Vec<_>>(), vec![0, 2]);
        r.member_counts = vec![60, 10, 10];
        assert!(build_network(&r, &cfg).is_err());
    }

    #[test]
    fn haversine_half_circumference() {
        let d = haversine_km(GeoPoint { lon: 0.0, lat: 0.0 }, GeoPoint { lon: 180.0, lat: 0.0 });
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-6);
        assert!((d - 20015.1).abs() < 1.0);
        let p = GeoPoint { lon: 12.0, lat: -3.0 };
        assert_eq!(haversine_km(p, p), 0.0);
    }
}
