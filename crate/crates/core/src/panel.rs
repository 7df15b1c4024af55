//! Entity-by-year level panels and their growth-rate trajectories.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityMeta {
    pub entity_id: String,
    pub country_code: String,
    pub location: Option<GeoPoint>,
}

impl EntityMeta {
    pub fn new(entity_id: impl Into<String>, country_code: impl Into<String>) -> Self {
        Self {
            entity_id: entity_id.into(),
            country_code: country_code.into(),
            location: None,
        }
    }

    pub fn with_location(mut self, lon: f64, lat: f64) -> Self {
        self.location = Some(GeoPoint { lon, lat });
        self
    }
}

/// Levels for `N` entities over `T` consecutive years.
///
/// `values[[i, t]]` is meaningful only where `present[[i, t]]` is true; absent
/// cells hold zero.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Panel<F> {
    entities: Vec<EntityMeta>,
    years: Vec<i32>,
    values: Array2<F>,
    present: Array2<bool>,
}

impl<F: Scalar> Panel<F> {
    pub fn new(
        entities: Vec<EntityMeta>,
        years: Vec<i32>,
        values: Array2<F>,
        present: Array2<bool>,
    ) -> Result<Self> {
        let n = entities.len();
        let t = years.len();
        if n == 0 {
            return Err(Error::InvalidInput("panel has no entities".into()));
        }
        if t < 2 {
            return Err(Error::InvalidInput(format!(
                "panel needs at least two years, found {t}"
            )));
        }
        if years.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::InvalidInput(
                "panel years must be consecutive and ascending".into(),
            ));
        }
        if values.dim() != (n, t) || present.dim() != (n, t) {
            return Err(Error::InvalidInput(format!(
                "value matrix {:?} / mask {:?} do not match {n} entities x {t} years",
                values.dim(),
                present.dim()
            )));
        }
        let mut seen = HashMap::with_capacity(n);
        for (i, e) in entities.iter().enumerate() {
            if let Some(prev) = seen.insert(e.entity_id.as_str(), i) {
                return Err(Error::InvalidInput(format!(
                    "entity id '{}' appears at positions {prev} and {i}",
                    e.entity_id
                )));
            }
            if let Some(p) = e.location {
                validate_location(p).map_err(Error::InvalidInput)?;
            }
        }
        for ((i, j), &v) in values.indexed_iter() {
            if present[[i, j]] && !(v.is_finite() && v >= F::zero()) {
                return Err(Error::InvalidInput(format!(
                    "entity '{}' year {} has invalid level {v}",
                    entities[i].entity_id, years[j]
                )));
            }
        }
        Ok(Self {
            entities,
            years,
            values,
            present,
        })
    }

    pub fn entities(&self) -> &[EntityMeta] {
        &self.entities
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn values(&self) -> &Array2<F> {
        &self.values
    }

    pub fn present(&self) -> &Array2<bool> {
        &self.present
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn n_missing(&self) -> usize {
        self.present.iter().filter(|p| !**p).count()
    }

    /// Panel restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let entities = rows.iter().map(|&r| self.entities[r].clone()).collect();
        Self::new(
            entities,
            self.years.clone(),
            self.values.select(Axis(0), rows),
            self.present.select(Axis(0), rows),
        )
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let with_coords = self.entities.iter().any(|e| e.location.is_some());
        let mut w = csv::Writer::from_writer(writer);
        if with_coords {
            w.write_record(["entity_id", "country_code", "year", "value", "lon", "lat"])?;
        } else {
            w.write_record(["entity_id", "country_code", "year", "value"])?;
        }
        for (i, e) in self.entities.iter().enumerate() {
            for (j, year) in self.years.iter().enumerate() {
                if !self.present[[i, j]] {
                    continue;
                }
                let mut rec = vec![
                    e.entity_id.clone(),
                    e.country_code.clone(),
                    year.to_string(),
                    self.values[[i, j]].to_string(),
                ];
                if with_coords {
                    match e.location {
                        Some(p) => {
                            rec.push(p.lon.to_string());
                            rec.push(p.lat.to_string());
                        }
                        None => rec.extend([String::new(), String::new()]),
                    }
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn validate_location(p: GeoPoint) -> std::result::Result<(), String> {
    if !(-180.0..=180.0).contains(&p.lon) || !(-90.0..=90.0).contains(&p.lat) {
        return Err(format!("coordinates ({}, {}) out of range", p.lon, p.lat));
    }
    Ok(())
}

struct EntityAcc {
    meta: EntityMeta,
    country_line: usize,
    location_line: Option<usize>,
}

/// Parse a long-format CSV (`entity_id,country_code,year,value[,lon,lat]`).
///
/// Empty `value` cells are treated as missing observations. Entities keep
/// their order of first appearance; the year axis spans min..=max observed.
pub fn load_panel<F: Scalar, R: Read>(reader: R) -> Result<Panel<F>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let missing_col = |name: &str| Error::Parse {
        line: 1,
        message: format!("missing required column '{name}'"),
    };
    let c_id = col("entity_id").ok_or_else(|| missing_col("entity_id"))?;
    let c_country = col("country_code").ok_or_else(|| missing_col("country_code"))?;
    let c_year = col("year").ok_or_else(|| missing_col("year"))?;
    let c_value = col("value").ok_or_else(|| missing_col("value"))?;
    let c_lon = col("lon");
    let c_lat = col("lat");
    if c_lon.is_some() != c_lat.is_some() {
        return Err(Error::Parse {
            line: 1,
            message: "columns lon and lat must appear together".into(),
        });
    }

    let mut order: Vec<EntityAcc> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, i32), (Option<f64>, Vec<usize>)> = HashMap::new();
    let mut dup_order: Vec<(usize, i32)> = Vec::new();

    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |c: usize| rec.get(c).unwrap_or("");
        let parse_err = |message: String| Error::Parse { line, message };

        let id = field(c_id);
        if id.is_empty() {
            return Err(parse_err("empty entity_id".into()));
        }
        let country = field(c_country);
        let year: i32 = field(c_year)
            .parse()
            .map_err(|_| parse_err(format!("year '{}' is not an integer", field(c_year))))?;
        let raw_value = field(c_value);
        let value = if raw_value.is_empty() {
            None
        } else {
            let v: f64 = raw_value
                .parse()
                .map_err(|_| parse_err(format!("value '{raw_value}' is not numeric")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(parse_err(format!(
                    "value '{raw_value}' must be finite and non-negative"
                )));
            }
            Some(v)
        };
        let location = match (c_lon.map(field), c_lat.map(field)) {
            (Some(lon), Some(lat)) if !lon.is_empty() || !lat.is_empty() => {
                if lon.is_empty() || lat.is_empty() {
                    return Err(parse_err("lon and lat must both be present or both empty".into()));
                }
                let p = GeoPoint {
                    lon: lon
                        .parse()
                        .map_err(|_| parse_err(format!("lon '{lon}' is not numeric")))?,
                    lat: lat
                        .parse()
                        .map_err(|_| parse_err(format!("lat '{lat}' is not numeric")))?,
                };
                validate_location(p).map_err(parse_err)?;
                Some(p)
            }
            _ => None,
        };

        let ent = match index.get(id) {
            Some(&e) => {
                let acc = &mut order[e];
                if acc.meta.country_code != country {
                    return Err(Error::InconsistentEntity {
                        entity: id.to_string(),
                        field: "country_code",
                        lines: vec![acc.country_line, line],
                    });
                }
                if let Some(p) = location {
                    match (acc.meta.location, acc.location_line) {
                        (Some(prev), Some(prev_line)) if prev != p => {
                            return Err(Error::InconsistentEntity {
                                entity: id.to_string(),
                                field: "coordinates",
                                lines: vec![prev_line, line],
                            });
                        }
                        (None, _) => {
                            acc.meta.location = Some(p);
                            acc.location_line = Some(line);
                        }
                        _ => {}
                    }
                }
                e
            }
            None => {
                let e = order.len();
                order.push(EntityAcc {
                    meta: EntityMeta {
                        entity_id: id.to_string(),
                        country_code: country.to_string(),
                        location,
                    },
                    country_line: line,
                    location_line: location.map(|_| line),
                });
                index.insert(id.to_string(), e);
                e
            }
        };

        let slot = cells.entry((ent, year)).or_insert_with(|| (value, Vec::new()));
        slot.1.push(line);
        if slot.1.len() == 2 {
            dup_order.push((ent, year));
        }
    }

    if let Some(&(ent, year)) = dup_order.first() {
        return Err(Error::DuplicateRow {
            entity: order[ent].meta.entity_id.clone(),
            year,
            lines: cells[&(ent, year)].1.clone(),
        });
    }
    if order.is_empty() {
        return Err(Error::InvalidInput("panel file has no data rows".into()));
    }

    let y_min = cells.keys().map(|k| k.1).min().expect("non-empty");
    let y_max = cells.keys().map(|k| k.1).max().expect("non-empty");
    let years: Vec<i32> = (y_min..=y_max).collect();
    let n = order.len();
    let t = years.len();
    let mut values = Array2::from_elem((n, t), F::zero());
    let mut present = Array2::from_elem((n, t), false);
    for ((ent, year), (v, _)) in &cells {
        if let Some(v) = v {
            let j = (year - y_min) as usize;
            values[[*ent, j]] = F::lit(*v);
            present[[*ent, j]] = true;
        }
    }
    Panel::new(order.into_iter().map(|a| a.meta).collect(), years, values, present)
}

/// Load a panel from a `.csv` file or a `.json` serialisation.
pub fn load_panel_path<F: Scalar>(path: &Path) -> Result<Panel<F>> {
    let file = std::fs::File::open(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let panel: Panel<F> = serde_json::from_reader(std::io::BufReader::new(file))?;
        // re-validate: serde bypasses the constructor
        Panel::new(panel.entities, panel.years, panel.values, panel.present)
    } else {
        load_panel(std::io::BufReader::new(file))
    }
}

/// Annual percentage growth trajectories.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct GrowthMatrix<F> {
    pub entities: Vec<EntityMeta>,
    /// Each growth year labels the later year of the pair.
    pub growth_years: Vec<i32>,
    /// Percent growth; NaN where invalid.
    pub g: Array2<F>,
    pub valid: Array2<bool>,
    pub complete: Vec<bool>,
}

impl<F: Scalar> GrowthMatrix<F> {
    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_periods(&self) -> usize {
        self.growth_years.len()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, F> {
        self.g.row(i)
    }

    pub fn all_complete(&self) -> bool {
        self.complete.iter().all(|&c| c)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            entities: rows.iter().map(|&r| self.entities[r].clone()).collect(),
            growth_years: self.growth_years.clone(),
            g: self.g.select(Axis(0), rows),
            valid: self.valid.select(Axis(0), rows),
            complete: rows.iter().map(|&r| self.complete[r]).collect(),
        }
    }

    pub fn country_codes(&self) -> Vec<&str> {
        self.entities.iter().map(|e| e.country_code.as_str()).collect()
    }
}

/// `g[i][t] = (V[t+1] - V[t]) / V[t] * 100`, valid only when both levels are
/// present and strictly positive. A zero level therefore invalidates the
/// rates on both sides of it.
pub fn compute_growth<F: Scalar>(panel: &Panel<F>) -> GrowthMatrix<F> {
    let (n, t) = panel.values.dim();
    let hundred = F::lit(100.0);
    let mut g = Array2::from_elem((n, t - 1), F::nan());
    let mut valid = Array2::from_elem((n, t - 1), false);
    for i in 0..n {
        for k in 0..t - 1 {
            let (a, b) = (panel.values[[i, k]], panel.values[[i, k + 1]]);
            if panel.present[[i, k]] && panel.present[[i, k + 1]] && a > F::zero() && b > F::zero() {
                let rate = (b - a) / a * hundred;
                if rate.is_finite() {
                    g[[i, k]] = rate;
                    valid[[i, k]] = true;
                }
            }
        }
    }
    let complete = valid.rows().into_iter().map(|r| r.iter().all(|&v| v)).collect();
    GrowthMatrix {
        entities: panel.entities.clone(),
        growth_years: panel.years[1..].to_vec(),
        g,
        valid,
        complete,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub n_input: usize,
    pub n_retained: usize,
    pub dropped_ids: Vec<String>,
}

/// Keep only entities whose full trajectory is valid, preserving order.
pub fn filter_complete<F: Scalar>(
    gm: &GrowthMatrix<F>,
) -> Result<(GrowthMatrix<F>, CompletenessReport)> {
    let keep: Vec<usize> = (0..gm.n_entities()).filter(|&i| gm.complete[i]).collect();
    let dropped_ids: Vec<String> = (0..gm.n_entities())
        .filter(|&i| !gm.complete[i])
        .map(|i| gm.entities[i].entity_id.clone())
        .collect();
    if keep.is_empty() {
        return Err(Error::AllDropped {
            dropped: dropped_ids.len(),
        });
    }
    let report = CompletenessReport {
        n_input: gm.n_entities(),
        n_retained: keep.len(),
        dropped_ids,
    };
    Ok((gm.select_rows(&keep), report))
}

/// Rebuild levels from an initial level and percentage growth rates.
pub fn reconstruct_levels<F: Scalar>(initial: F, growth: &[F]) -> Vec<F> {
    let hundred = F::lit(100.0);
    let mut out = Vec::with_capacity(growth.len() + 1);
    let mut level = initial;
    out.push(level);
    for &g in growth {
        level = level * (F::one() + g / hundred);
        out.push(level);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn load(s: &str) -> Result<Panel<f64>> {
        load_panel(s.as_bytes())
    }

    #[test]
    fn loads_dense_panel() {
        let p = load(
            "entity_id,country_code,year,value\nA,XX,1993,1\nA,XX,1994,2\nA,XX,1995,3\n\
             B,YY,1993,4\nB,YY,1994,5\nB,YY,1995,6\n",
        )
        .unwrap();
        assert_eq!(p.n_entities(), 2);
        assert_eq!(p.n_years(), 3);
        assert_eq!(p.n_missing(), 0);
        assert_eq!(p.values()[[1, 2]], 6.0);
    }

    #[test]
    fn gap_year_is_marked_missing() {
        let p = load("entity_id,country_code,year,value\nA,XX,1993,1\nA,XX,1995,3\n").unwrap();
        assert_eq!(p.years(), &[1993, 1994, 1995]);
        assert!(!p.present()[[0, 1]]);
        assert!(p.present()[[0, 0]] && p.present()[[0, 2]]);
    }

    #[test]
    fn duplicate_rows_list_both_lines() {
        let err = load("entity_id,country_code,year,value\nA,XX,1993,1\nA,XX,1993,2\nA,XX,1994,2\n")
            .unwrap_err();
        match err {
            Error::DuplicateRow { entity, year, lines } => {
                assert_eq!(entity, "A");
                assert_eq!(year, 1993);
                assert_eq!(lines, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_values_and_coordinates() {
        assert!(matches!(
            load("entity_id,country_code,year,value\nA,XX,1993,abc\nA,XX,1994,1\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            load("entity_id,country_code,year,value\nA,XX,1993,-1\nA,XX,1994,1\n"),
            Err(Error::Parse { .. })
        ));
        let err = load(
            "entity_id,country_code,year,value,lon,lat\nA,XX,1993,1,10,20\nA,XX,1994,1,11,20\n",
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::InconsistentEntity { field: "coordinates", .. }
        ));
        assert!(load("entity_id,country_code,year,value,lon,lat\nA,XX,1993,1,10,\nA,XX,1994,1,,\n")
            .is_err());
    }

    #[test]
    fn single_year_panel_rejected() {
        assert!(load("entity_id,country_code,year,value\nA,XX,1993,1\n").is_err());
    }

    #[test]
    fn growth_examples() {
        let panel = Panel::new(
            vec![EntityMeta::new("a", "X"), EntityMeta::new("b", "X"), EntityMeta::new("c", "X")],
            vec![2000, 2001, 2002],
            ndarray::array![[100.0f64, 110.0, 121.0], [100.0, 50.0, 75.0], [10.0, 0.0, 5.0]],
            Array2::from_elem((3, 3), true),
        )
        .unwrap();
        let gm = compute_growth(&panel);
        assert_eq!(gm.growth_years, vec![2001, 2002]);
        assert!((gm.g[[0, 0]] - 10.0).abs() < 1e-12);
        assert_eq!(gm.g[[1, 0]], -50.0);
        assert_eq!(gm.g[[1, 1]], 50.0);
        // zero level invalidates both neighbouring rates
        assert!(!gm.valid[[2, 0]]);
        assert!(!gm.valid[[2, 1]]);
        assert_eq!(gm.complete, vec![true, true, false]);
    }

    #[test]
    fn filter_reports_dropped_and_keeps_order() {
        let n = 10;
        let mut present = Array2::from_elem((n, 4), true);
        present[[3, 2]] = false;
        present[[7, 0]] = false;
        let entities = (0..n).map(|i| EntityMeta::new(format!("e{i}"), "X")).collect();
        let panel =
            Panel::new(entities, vec![1, 2, 3, 4], Array2::from_elem((n, 4), 5.0), present).unwrap();
        let gm = compute_growth(&panel);
        let (kept, report) = filter_complete(&gm).unwrap();
        assert_eq!(report.n_retained, 8);
        assert_eq!(report.dropped_ids, vec!["e3", "e7"]);
        let ids: Vec<_> = kept.entities.iter().map(|e| e.entity_id.as_str()).collect();
        assert_eq!(ids, vec!["e0", "e1", "e2", "e4", "e5", "e6", "e8", "e9"]);
        let (again, r2) = filter_complete(&kept).unwrap();
        assert_eq!(again.entities, kept.entities);
        assert!(r2.dropped_ids.is_empty());
    }

    #[test]
    fn all_dropped_is_fatal() {
        let panel = Panel::new(
            vec![EntityMeta::new("a", "X")],
            vec![1, 2],
            ndarray::array![[0.0f64, 1.0]],
            Array2::from_elem((1, 2), true),
        )
        .unwrap();
        assert!(matches!(
            filter_complete(&compute_growth(&panel)),
            Err(Error::AllDropped { dropped: 1 })
        ));
    }

    #[test]
    fn csv_round_trip_preserves_panel() {
        let p = load(
            "entity_id,country_code,year,value,lon,lat\nA,XX,1993,1.5,10,20\nA,XX,1995,3,10,20\n\
             B,YY,1993,4,,\nB,YY,1994,5,,\n",
        )
        .unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q: Panel<f64> = load_panel(buf.as_slice()).unwrap();
        assert_eq!(p.entities(), q.entities());
        assert_eq!(p.values(), q.values());
        assert_eq!(p.present(), q.present());
    }

    proptest! {
        #[test]
        fn mask_filter_matches_per_cell_scan(
            mask in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 5), 1..12)
        ) {
            let n = mask.len();
            let present = Array2::from_shape_fn((n, 5), |(i, j)| mask[i][j]);
            let entities = (0..n).map(|i| EntityMeta::new(format!("e{i}"), "X")).collect();
            let panel = Panel::new(entities, (0..5).collect(), Array2::from_elem((n, 5), 2.0), present)
                .unwrap();
            let gm = compute_growth(&panel);
            // oracle: an entity is complete iff every level is present (all levels are > 0)
            let expected: Vec<usize> = (0..n).filter(|&i| mask[i].iter().all(|&b| b)).collect();
            match filter_complete(&gm) {
                Ok((kept, _)) => {
                    let got: Vec<usize> = kept.entities.iter()
                        .map(|e| e.entity_id[1..].parse().unwrap()).collect();
                    prop_assert_eq!(got, expected);
                }
                Err(_) => prop_assert!(expected.is_empty()),
            }
        }

        #[test]
        fn growth_round_trips_levels(
            first in 1.0f64..1e4,
            rates in proptest::collection::vec(-60.0f64..80.0, 1..30)
        ) {
            let levels = reconstruct_levels(first, &rates);
            let t = levels.len();
            let panel = Panel::new(
                vec![EntityMeta::new("a", "X")],
                (0..t as i32).collect(),
                Array2::from_shape_vec((1, t), levels.clone()).unwrap(),
                Array2::from_elem((1, t), true),
            ).unwrap();
            let gm = compute_growth(&panel);
            let g: Vec<f64> = gm.row(0).to_vec();
            let rebuilt = reconstruct_levels(first, &g);
            for (a, b) in rebuilt.iter().zip(&levels) {
                prop_assert!((a - b).abs() <= 1e-9 * b.abs());
            }
        }
    }
}
