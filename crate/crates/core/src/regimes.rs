//! Regime-level mean trajectories, long-run statistics and shock years.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::GrowthMatrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct RegimeTrajectories<F> {
    pub clusters: Vec<usize>,
    pub growth_years: Vec<i32>,
    /// `k x (T-1)` unweighted member means.
    pub mean_growth: Array2<F>,
    pub member_counts: Vec<usize>,
    /// Time-mean of each regime series (percent).
    pub mu: Vec<F>,
    /// Standard deviation of each regime series, `T-1` denominator (percent).
    pub sigma: Vec<F>,
    /// Country code -> number of member entities, per cluster.
    pub country_composition: Vec<BTreeMap<String, usize>>,
}

impl<F: Scalar> RegimeTrajectories<F> {
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn series(&self, c: usize) -> Vec<F> {
        self.mean_growth.row(c).to_vec()
    }

    /// Build directly from regime series (no member bookkeeping).
    pub fn from_series(growth_years: Vec<i32>, series: Array2<F>, member_counts: Vec<usize>) -> Result<Self> {
        let k = series.nrows();
        if member_counts.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: member_counts.len(),
            });
        }
        if growth_years.len() != series.ncols() {
            return Err(Error::DimensionMismatch {
                expected: series.ncols(),
                found: growth_years.len(),
            });
        }
        let (mu, sigma) = series_stats(&series)?;
        Ok(Self {
            clusters: (0..k).collect(),
            growth_years,
            mean_growth: series,
            member_counts,
            mu,
            sigma,
            country_composition: vec![BTreeMap::new(); k],
        })
    }

    pub fn write_trajectories_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["cluster", "year", "mean_growth"])?;
        for (c, &id) in self.clusters.iter().enumerate() {
            for (t, y) in self.growth_years.iter().enumerate() {
                w.write_record([id.to_string(), y.to_string(), self.mean_growth[[c, t]].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_stats_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["cluster", "n_fuas", "n_countries", "mu", "sigma"])?;
        for (c, &id) in self.clusters.iter().enumerate() {
            w.write_record([
                id.to_string(),
                self.member_counts[c].to_string(),
                self.country_composition[c].len().to_string(),
                self.mu[c].to_string(),
                self.sigma[c].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn series_stats<F: Scalar>(series: &Array2<F>) -> Result<(Vec<F>, Vec<F>)> {
    let t = series.ncols();
    if t < 2 {
        return Err(Error::InvalidInput("regime series need at least two periods".into()));
    }
    let tf = F::from_usize_lossy(t);
    let mut mu = Vec::with_capacity(series.nrows());
    let mut sigma = Vec::with_capacity(series.nrows());
    for row in series.rows() {
        let m = row.iter().fold(F::zero(), |a, &b| a + b) / tf;
        let ss = row.iter().fold(F::zero(), |a, &b| a + (b - m) * (b - m));
        mu.push(m);
        sigma.push((ss / F::from_usize_lossy(t - 1)).sqrt());
    }
    Ok((mu, sigma))
}

/// Per-cluster, per-year unweighted mean of member growth rates.
pub fn regime_trajectories<F: Scalar>(gm: &GrowthMatrix<F>, labels: &[usize]) -> Result<RegimeTrajectories<F>> {
    if labels.len() != gm.n_entities() {
        return Err(Error::DimensionMismatch {
            expected: gm.n_entities(),
            found: labels.len(),
        });
    }
    if !gm.all_complete() {
        return Err(Error::InvalidInput(
            "regime trajectories need complete growth trajectories".into(),
        ));
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let t = gm.n_periods();
    let mut counts = vec![0usize; k];
    let mut sums = Array2::<F>::zeros((k, t));
    let mut composition = vec![BTreeMap::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        *composition[l].entry(gm.entities[i].country_code.clone()).or_insert(0) += 1;
        for j in 0..t {
            sums[[l, j]] = sums[[l, j]] + gm.g[[i, j]];
        }
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidInput(format!("cluster {c} has no members")));
    }
    for c in 0..k {
        let n = F::from_usize_lossy(counts[c]);
        for j in 0..t {
            sums[[c, j]] = sums[[c, j]] / n;
        }
    }
    let (mu, sigma) = series_stats(&sums)?;
    Ok(RegimeTrajectories {
        clusters: (0..k).collect(),
        growth_years: gm.growth_years.clone(),
        mean_growth: sums,
        member_counts: counts,
        mu,
        sigma,
        country_composition: composition,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PercentileMethod {
    /// Linear interpolation between closest order statistics.
    #[default]
    Linear,
    /// Smallest order statistic whose rank reaches `p/100 * n`.
    NearestRank,
}

impl std::str::FromStr for PercentileMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "nearest-rank" => Ok(Self::NearestRank),
            other => Err(Error::InvalidInput(format!(
                "unknown percentile method '{other}' (expected linear or nearest-rank)"
            ))),
        }
    }
}

/// `p`-th percentile (0 < p < 100) of the values.
pub fn percentile<F: Scalar>(values: &[F], p: f64, method: PercentileMethod) -> F {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = v.len();
    match method {
        PercentileMethod::Linear => {
            let h = (n - 1) as f64 * p / 100.0;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = F::lit(h - lo as f64);
            v[lo] + frac * (v[hi] - v[lo])
        }
        PercentileMethod::NearestRank => {
            let rank = ((p / 100.0) * n as f64).ceil().max(1.0) as usize;
            v[rank.min(n) - 1]
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShockSign {
    Negative,
    Positive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Shock<F> {
    pub cluster: usize,
    pub year: i32,
    pub deviation: F,
    pub sign: ShockSign,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ShockBounds<F> {
    pub cluster: usize,
    pub lower: F,
    pub upper: F,
    /// Bounds coincide (constant deviations); nothing is flagged.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ShockTable<F> {
    pub shocks: Vec<Shock<F>>,
    pub bounds: Vec<ShockBounds<F>>,
    pub lower_pct: f64,
    pub upper_pct: f64,
    pub method: PercentileMethod,
}

impl<F: Scalar> ShockTable<F> {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["cluster", "year", "deviation", "sign"])?;
        for s in &self.shocks {
            let sign = match s.sign {
                ShockSign::Negative => "negative",
                ShockSign::Positive => "positive",
            };
            w.write_record([s.cluster.to_string(), s.year.to_string(), s.deviation.to_string(), sign.into()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Flag years whose deviation from the regime's long-run mean falls at or
/// below the lower percentile or at or above the upper percentile.
pub fn detect_shocks<F: Scalar>(
    rt: &RegimeTrajectories<F>,
    lower_pct: f64,
    upper_pct: f64,
    method: PercentileMethod,
) -> Result<ShockTable<F>> {
    if !(0.0 < lower_pct && lower_pct < upper_pct && upper_pct < 100.0) {
        return Err(Error::InvalidInput(format!(
            "percentiles must satisfy 0 < {lower_pct} < {upper_pct} < 100"
        )));
    }
    let mut shocks = Vec::new();
    let mut bounds = Vec::new();
    for (c, &id) in rt.clusters.iter().enumerate() {
        let dev: Vec<F> = rt.mean_growth.row(c).iter().map(|&g| g - rt.mu[c]).collect();
        let lower = percentile(&dev, lower_pct, method);
        let upper = percentile(&dev, upper_pct, method);
        let degenerate = !(lower < upper);
        if degenerate {
            log::warn!("cluster {id}: constant deviations, no shock years flagged");
        } else {
            for (t, &d) in dev.iter().enumerate() {
                let sign = if d <= lower {
                    Some(ShockSign::Negative)
                } else if d >= upper {
                    Some(ShockSign::Positive)
                } else {
                    None
                };
                if let Some(sign) = sign {
                    shocks.push(Shock {
                        cluster: id,
                        year: rt.growth_years[t],
                        deviation: d,
                        sign,
                    });
                }
            }
        }
        bounds.push(ShockBounds {
            cluster: id,
            lower,
            upper,
            degenerate,
        });
    }
    Ok(ShockTable {
        shocks,
        bounds,
        lower_pct,
        upper_pct,
        method,
    })
}
