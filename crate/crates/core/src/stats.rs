//! Country-level dispersion, rank correlation and the nested fixed-effects
//! F-test for regime membership.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};
use crate::linalg::pivoted_qr_least_squares;
use crate::panel::GrowthMatrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionRecord {
    pub country_code: String,
    pub n_fuas: usize,
    /// Mean over years of the cross-sectional sample sd of member growth.
    pub dispersion: f64,
}

fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn require_complete<F: Scalar>(gm: &GrowthMatrix<F>) -> Result<()> {
    if !gm.all_complete() {
        return Err(Error::InvalidInput(
            "growth matrix has incomplete rows; filter it first".into(),
        ));
    }
    Ok(())
}

/// Per country with at least two entities, the year-averaged sample standard
/// deviation of member growth rates. Sorted by country code.
pub fn within_country_dispersion<F: Scalar>(gm: &GrowthMatrix<F>) -> Result<Vec<DispersionRecord>> {
    require_complete(gm)?;
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in gm.entities.iter().enumerate() {
        groups.entry(e.country_code.as_str()).or_default().push(i);
    }
    let t = gm.n_periods();
    Ok(groups
        .into_iter()
        .filter(|(_, rows)| rows.len() >= 2)
        .map(|(cc, rows)| {
            let total: f64 = (0..t)
                .map(|k| {
                    let xs: Vec<f64> = rows.iter().map(|&i| gm.g[[i, k]].as_f64()).collect();
                    sample_sd(&xs)
                })
                .sum();
            DispersionRecord {
                country_code: cc.to_string(),
                n_fuas: rows.len(),
                dispersion: total / t as f64,
            }
        })
        .collect())
}

/// Ranks starting at 1; tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` if either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    /// Two-sided p from `t = rho * sqrt((n - 2) / (1 - rho^2))` on `n - 2` df.
    pub p_value: f64,
    pub n: usize,
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("spearman needs at least 3 pairs, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    let rho = pearson(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| Error::Degenerate("spearman correlation undefined for constant input".into()))?;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive df");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(SpearmanResult { rho, p_value, n })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecompositionMode {
    /// One observation per entity: its time-mean growth.
    #[default]
    EntityMean,
    /// Entity x year observations with year fixed effects in both models.
    EntityYear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    pub mode: DecompositionMode,
    pub rss_restricted: f64,
    pub rss_full: f64,
    pub f_statistic: f64,
    pub df_num: usize,
    pub df_den: usize,
    pub p_value: f64,
    pub partial_eta_squared: f64,
    pub n_observations: usize,
    pub n_entities: usize,
    pub n_countries: usize,
    pub n_regimes: usize,
    /// Regime indicators dropped as collinear with the country effects.
    pub collinear_regime_columns: usize,
}

/// Dense codes `0..L` for the distinct values, in sorted value order.
fn encode<T: Ord + Clone>(xs: &[T]) -> (Vec<usize>, usize) {
    let levels: BTreeSet<T> = xs.iter().cloned().collect();
    let map: BTreeMap<T, usize> = levels.into_iter().enumerate().map(|(i, l)| (l, i)).collect();
    (xs.iter().map(|x| map[x]).collect(), map.len())
}

/// Intercept plus treatment-coded indicators (first level dropped).
fn design(n: usize, factors: &[(&[usize], usize)]) -> Array2<f64> {
    let cols = 1 + factors.iter().map(|(_, l)| l.saturating_sub(1)).sum::<usize>();
    let mut x = Array2::zeros((n, cols));
    x.column_mut(0).fill(1.0);
    let mut off = 1;
    for (codes, levels) in factors {
        for (i, &c) in codes.iter().enumerate() {
            if c > 0 {
                x[[i, off + c - 1]] = 1.0;
            }
        }
        off += levels.saturating_sub(1);
    }
    x
}

struct NestedFit {
    rss_r: f64,
    rss_f: f64,
    q: usize,
    dof_f: usize,
    collinear_extra: usize,
}

fn nested_fit(y: &[f64], base: &[(&[usize], usize)], extra: (&[usize], usize)) -> Result<NestedFit> {
    let n = y.len();
    let yv = Array1::from(y.to_vec());
    let xr = design(n, base);
    let mut all = base.to_vec();
    all.push(extra);
    let xf = design(n, &all);
    let fr = pivoted_qr_least_squares(&xr, &yv);
    let ff = pivoted_qr_least_squares(&xf, &yv);
    let q = ff.rank.saturating_sub(fr.rank);
    let extra_cols = extra.1.saturating_sub(1);
    let collinear_extra = extra_cols.saturating_sub(q);
    if collinear_extra > 0 {
        log::warn!("{collinear_extra} regime indicator(s) collinear with the fixed effects; dropped");
    }
    if q == 0 {
        return Err(Error::Degenerate(
            "regime indicators add no rank beyond the fixed effects".into(),
        ));
    }
    if ff.rank >= n {
        return Err(Error::Degenerate("full model leaves no residual degrees of freedom".into()));
    }
    // RSS can only shrink when columns are added; clamp rounding noise
    let rss_r = fr.rss;
    let rss_f = ff.rss.min(rss_r);
    Ok(NestedFit {
        rss_r,
        rss_f,
        q,
        dof_f: n - ff.rank,
        collinear_extra,
    })
}

/// Countries whose entities span at least two regimes.
fn multi_regime_rows(countries: &[String], regimes: &[usize]) -> Vec<usize> {
    let mut spans: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for (c, &r) in countries.iter().zip(regimes) {
        spans.entry(c.as_str()).or_default().insert(r);
    }
    (0..countries.len())
        .filter(|&i| spans[countries[i].as_str()].len() >= 2)
        .collect()
}

/// Nested least-squares comparison of `outcome ~ country` against
/// `outcome ~ country + regime`, restricted to countries spanning at least
/// two regimes.
pub fn variance_decomposition(outcome: &[f64], countries: &[String], regimes: &[usize]) -> Result<VarianceDecomposition> {
    let n_all = outcome.len();
    if countries.len() != n_all || regimes.len() != n_all {
        return Err(Error::DimensionMismatch {
            expected: n_all,
            found: countries.len().min(regimes.len()),
        });
    }
    if outcome.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("decomposition outcome".into()));
    }
    let keep = multi_regime_rows(countries, regimes);
    let y: Vec<f64> = keep.iter().map(|&i| outcome[i]).collect();
    let cc: Vec<String> = keep.iter().map(|&i| countries[i].clone()).collect();
    let rr: Vec<usize> = keep.iter().map(|&i| regimes[i]).collect();
    decompose(DecompositionMode::EntityMean, &y, &cc, &rr, None, keep.len())
}

fn decompose(
    mode: DecompositionMode,
    y: &[f64],
    countries: &[String],
    regimes: &[usize],
    years: Option<&[usize]>,
    n_entities: usize,
) -> Result<VarianceDecomposition> {
    if y.is_empty() {
        return Err(Error::Degenerate("no country spans more than one regime".into()));
    }
    let (c_codes, n_c) = encode(countries);
    let (r_codes, n_r) = encode(regimes);
    let fit = match years {
        None => nested_fit(y, &[(&c_codes, n_c)], (&r_codes, n_r))?,
        Some(yr) => {
            let (y_codes, n_y) = encode(yr);
            nested_fit(y, &[(&c_codes, n_c), (&y_codes, n_y)], (&r_codes, n_r))?
        }
    };
    let NestedFit {
        rss_r,
        rss_f,
        q,
        dof_f,
        collinear_extra,
    } = fit;
    if !(rss_r > 0.0) {
        return Err(Error::Degenerate("country effects fit the outcome exactly".into()));
    }
    let f_statistic = ((rss_r - rss_f) / q as f64) / (rss_f / dof_f as f64);
    let p_value = if f_statistic.is_finite() {
        let dist = FisherSnedecor::new(q as f64, dof_f as f64).expect("positive df");
        1.0 - dist.cdf(f_statistic)
    } else {
        0.0
    };
    Ok(VarianceDecomposition {
        mode,
        rss_restricted: rss_r,
        rss_full: rss_f,
        f_statistic,
        df_num: q,
        df_den: dof_f,
        p_value,
        partial_eta_squared: (rss_r - rss_f) / rss_r,
        n_observations: y.len(),
        n_entities,
        n_countries: n_c,
        n_regimes: n_r,
        collinear_regime_columns: collinear_extra,
    })
}

/// Decomposition on a complete growth matrix, either on entity time-means
/// or on the full entity x year panel with year effects.
pub fn decompose_growth<F: Scalar>(
    gm: &GrowthMatrix<F>,
    labels: &[usize],
    mode: DecompositionMode,
) -> Result<VarianceDecomposition> {
    require_complete(gm)?;
    if labels.len() != gm.n_entities() {
        return Err(Error::DimensionMismatch {
            expected: gm.n_entities(),
            found: labels.len(),
        });
    }
    let countries: Vec<String> = gm.entities.iter().map(|e| e.country_code.clone()).collect();
    match mode {
        DecompositionMode::EntityMean => {
            let y: Vec<f64> = (0..gm.n_entities()).map(|i| entity_mean(gm, i)).collect();
            variance_decomposition(&y, &countries, labels)
        }
        DecompositionMode::EntityYear => {
            let keep = multi_regime_rows(&countries, labels);
            let t = gm.n_periods();
            let mut y = Vec::with_capacity(keep.len() * t);
            let mut cc = Vec::with_capacity(keep.len() * t);
            let mut rr = Vec::with_capacity(keep.len() * t);
            let mut yr = Vec::with_capacity(keep.len() * t);
            for &i in &keep {
                for k in 0..t {
                    y.push(gm.g[[i, k]].as_f64());
                    cc.push(countries[i].clone());
                    rr.push(labels[i]);
                    yr.push(k);
                }
            }
            decompose(mode, &y, &cc, &rr, Some(&yr), keep.len())
        }
    }
}

fn entity_mean<F: Scalar>(gm: &GrowthMatrix<F>, i: usize) -> f64 {
    gm.row(i).iter().map(|v| v.as_f64()).sum::<f64>() / gm.n_periods() as f64
}

/// Read `country_code,years_since_industrialization`.
pub fn read_industrialization<R: Read>(reader: R) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing required column '{name}'"),
        })
    };
    let (c_cc, c_y) = (col("country_code")?, col("years_since_industrialization")?);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let cc = rec.get(c_cc).unwrap_or("").to_string();
        let raw = rec.get(c_y).unwrap_or("");
        let v: f64 = raw.parse().map_err(|_| Error::Parse {
            line,
            message: format!("years_since_industrialization '{raw}' is not numeric"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line,
                message: "years_since_industrialization must be finite".into(),
            });
        }
        if out.insert(cc.clone(), v).is_some() {
            return Err(Error::InvalidInput(format!("country '{cc}' listed twice")));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Points with positive x that entered the fit.
    pub n: usize,
}

/// Ordinary least squares of `y` on `ln(x)` over points with `x > 0`.
pub fn log_linear_fit(x: &[f64], y: &[f64]) -> Result<LogLinearFit> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, _)| **a > 0.0).map(|(a, b)| (a.ln(), *b)).collect();
    if pts.len() < 2 {
        return Err(Error::Degenerate("log-linear fit needs two points with x > 0".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("log-linear fit needs distinct x values".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok(LogLinearFit {
        slope,
        intercept: my - slope * mx,
        n: pts.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndustrializationRow {
    pub country_code: String,
    pub n_fuas: usize,
    pub dispersion: f64,
    pub years_since_industrialization: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndustrializationAnalysis {
    pub rows: Vec<IndustrializationRow>,
    pub spearman: SpearmanResult,
    pub log_linear: Option<LogLinearFit>,
}

/// Join dispersion with the industrialization covariate and correlate them.
pub fn industrialization_analysis(
    dispersion: &[DispersionRecord],
    timing: &BTreeMap<String, f64>,
) -> Result<IndustrializationAnalysis> {
    let rows: Vec<IndustrializationRow> = dispersion
        .iter()
        .filter_map(|d| {
            timing.get(&d.country_code).map(|&y| IndustrializationRow {
                country_code: d.country_code.clone(),
                n_fuas: d.n_fuas,
                dispersion: d.dispersion,
                years_since_industrialization: y,
            })
        })
        .collect();
    let x: Vec<f64> = rows.iter().map(|r| r.years_since_industrialization).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.dispersion).collect();
    let spearman = spearman(&x, &y)?;
    let log_linear = log_linear_fit(&x, &y).ok();
    Ok(IndustrializationAnalysis {
        rows,
        spearman,
        log_linear,
    })
}

pub fn write_dispersion_csv<W: Write>(
    w: W,
    records: &[DispersionRecord],
    timing: Option<&BTreeMap<String, f64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["country_code", "n_fuas", "dispersion", "years_since_industrialization"])?;
    for r in records {
        let t = timing
            .and_then(|m| m.get(&r.country_code))
            .map(|v| v.to_string())
            .unwrap_or_default();
        w.write_record([r.country_code.clone(), r.n_fuas.to_string(), r.dispersion.to_string(), t])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub country_code: String,
    pub regime: usize,
    pub n_fuas: usize,
    /// Mean over the cell's entities of time-mean growth minus the
    /// country's average entity time-mean growth.
    pub demeaned_growth: f64,
}

/// Country-demeaned entity growth by regime, for countries spanning at least
/// two regimes.
pub fn regime_country_table<F: Scalar>(gm: &GrowthMatrix<F>, labels: &[usize]) -> Result<Vec<HeatmapCell>> {
    require_complete(gm)?;
    if labels.len() != gm.n_entities() {
        return Err(Error::DimensionMismatch {
            expected: gm.n_entities(),
            found: labels.len(),
        });
    }
    let countries: Vec<String> = gm.entities.iter().map(|e| e.country_code.clone()).collect();
    let keep = multi_regime_rows(&countries, labels);
    let mut by_country: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in &keep {
        by_country.entry(countries[i].as_str()).or_default().push(i);
    }
    let mut out = Vec::new();
    for (cc, rows) in by_country {
        let means: Vec<f64> = rows.iter().map(|&i| entity_mean(gm, i)).collect();
        let country_mean = means.iter().sum::<f64>() / means.len() as f64;
        let mut cells: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        for (&i, m) in rows.iter().zip(&means) {
            let e = cells.entry(labels[i]).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += m - country_mean;
        }
        for (regime, (n, s)) in cells {
            out.push(HeatmapCell {
                country_code: cc.to_string(),
                regime,
                n_fuas: n,
                demeaned_growth: s / n as f64,
            });
        }
    }
    Ok(out)
}

pub fn write_heatmap_csv<W: Write>(w: W, cells: &[HeatmapCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["country_code", "regime", "n_fuas", "demeaned_growth"])?;
    for c in cells {
        w.write_record([
            c.country_code.clone(),
            c.regime.to_string(),
            c.n_fuas.to_string(),
            c.demeaned_growth.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
