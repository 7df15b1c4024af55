//! Zonal sums of gridded values over polygon zones (cell-centre rule).

use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{EntityMeta, GeoPoint, Panel};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Band<F> {
    pub year: i32,
    pub values: Array2<F>,
}

/// North-up grid; `(origin_x, origin_y)` is the upper-left corner.
#[derive(Clone, Debug, PartialEq)]
pub struct GridRaster<F> {
    origin_x: f64,
    origin_y: f64,
    cell_size: f64,
    n_rows: usize,
    n_cols: usize,
    bands: Vec<Band<F>>,
    nodata: Option<f64>,
}

impl<F: Scalar> GridRaster<F> {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        n_rows: usize,
        n_cols: usize,
        bands: Vec<Band<F>>,
        nodata: Option<f64>,
    ) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidInput(format!("cell_size must be positive, got {cell_size}")));
        }
        if !(origin_x.is_finite() && origin_y.is_finite()) {
            return Err(Error::InvalidInput("raster origin must be finite".into()));
        }
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::InvalidInput("raster must have at least one row and column".into()));
        }
        for b in &bands {
            if b.values.dim() != (n_rows, n_cols) {
                return Err(Error::InvalidInput(format!(
                    "band {} has shape {:?}, expected ({n_rows}, {n_cols})",
                    b.year,
                    b.values.dim()
                )));
            }
        }
        Ok(Self {
            origin_x,
            origin_y,
            cell_size,
            n_rows,
            n_cols,
            bands,
            nodata,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> (f64, f64) {
        (self.origin_x, self.origin_y)
    }

    pub fn bands(&self) -> &[Band<F>] {
        &self.bands
    }

    pub fn nodata(&self) -> Option<f64> {
        self.nodata
    }

    /// Whether a cell value should be skipped. NaN is always treated as
    /// missing.
    pub fn is_nodata(&self, v: F) -> bool {
        v.is_nan() || self.nodata.is_some_and(|nd| v.as_f64() == nd)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Result<(f64, f64)> {
        if row >= self.n_rows || col >= self.n_cols {
            return Err(Error::OutOfBounds {
                row,
                col,
                n_rows: self.n_rows,
                n_cols: self.n_cols,
            });
        }
        Ok(self.center_unchecked(row, col))
    }

    fn center_unchecked(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.cell_size,
            self.origin_y - (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Sum of all non-nodata cells per band.
    pub fn band_totals(&self) -> Vec<F> {
        self.bands
            .iter()
            .map(|b| {
                b.values
                    .iter()
                    .filter(|v| !self.is_nodata(**v))
                    .fold(F::zero(), |a, &v| a + v)
            })
            .collect()
    }
}

pub type Point = (f64, f64);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZonePolygon {
    zone_id: String,
    exterior: Vec<Point>,
    holes: Vec<Vec<Point>>,
    country_code: String,
    location: Option<GeoPoint>,
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    orient(a, b, p) == 0.0
        && p.0 >= a.0.min(b.0)
        && p.0 <= a.0.max(b.0)
        && p.1 >= a.1.min(b.1)
        && p.1 <= a.1.max(b.1)
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

fn validate_ring(zone: &str, ring: &[Point]) -> Result<Vec<Point>> {
    let bad = |msg: String| Error::InvalidInput(format!("zone '{zone}': {msg}"));
    if ring.len() < 4 {
        return Err(bad(format!("ring has {} vertices, need at least 4", ring.len())));
    }
    if ring.first() != ring.last() {
        return Err(bad("ring is not closed (first vertex != last)".into()));
    }
    if ring.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(bad("ring has non-finite coordinates".into()));
    }
    // repeated consecutive vertices carry no geometry
    let mut r: Vec<Point> = Vec::with_capacity(ring.len());
    for &p in ring {
        if r.last() != Some(&p) {
            r.push(p);
        }
    }
    let m = r.len() - 1;
    if m < 3 {
        return Err(bad("ring has fewer than 3 distinct vertices".into()));
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let adjacent = j == i + 1 || (i == 0 && j == m - 1);
            let (a, b, c, d) = (r[i], r[i + 1], r[j], r[j + 1]);
            if adjacent {
                // shared vertex only; collinear fold-back is an overlap
                let (shared, x, y) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                let folds = orient(shared, x, y) == 0.0
                    && (x.0 - shared.0) * (y.0 - shared.0) + (x.1 - shared.1) * (y.1 - shared.1) > 0.0;
                if folds {
                    return Err(bad(format!("ring folds back on itself at vertex {shared:?}")));
                }
            } else if segments_intersect(a, b, c, d) {
                return Err(bad(format!("ring self-intersects (segments {i} and {j})")));
            }
        }
    }
    Ok(r)
}

impl ZonePolygon {
    pub fn new(zone_id: impl Into<String>, exterior: Vec<Point>, holes: Vec<Vec<Point>>) -> Result<Self> {
        let zone_id = zone_id.into();
        let exterior = validate_ring(&zone_id, &exterior)?;
        let holes = holes
            .iter()
            .map(|h| validate_ring(&zone_id, h))
            .collect::<Result<_>>()?;
        Ok(Self {
            zone_id,
            exterior,
            holes,
            country_code: String::new(),
            location: None,
        })
    }

    pub fn with_country(mut self, country_code: impl Into<String>) -> Self {
        self.country_code = country_code.into();
        self
    }

    pub fn with_location(mut self, lon: f64, lat: f64) -> Self {
        self.location = Some(GeoPoint { lon, lat });
        self
    }

    pub fn zone_id(&self) -> &str {
        &self.zone_id
    }

    pub fn exterior(&self) -> &[Point] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<Point>] {
        &self.holes
    }

    fn rings(&self) -> impl Iterator<Item = &[Point]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(|h| h.as_slice()))
    }

    /// `(min_x, min_y, max_x, max_y)` of the exterior ring.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        self.exterior.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), p| (a.min(p.0), b.min(p.1), c.max(p.0), d.max(p.1)),
        )
    }
}

/// Even-odd ray casting over the exterior and all holes. Points on any ring
/// edge count as inside.
pub fn point_in_polygon(p: Point, poly: &ZonePolygon) -> bool {
    let mut inside = false;
    for ring in poly.rings() {
        for w in ring.windows(2) {
            let (a, b) = (w[0], w[1]);
            if on_segment(p, a, b) {
                return true;
            }
            if (a.1 > p.1) != (b.1 > p.1) {
                // crossing lies right of p; sign test avoids the division
                let o = orient(a, b, p);
                if (b.1 > a.1 && o > 0.0) || (b.1 < a.1 && o < 0.0) {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ZonalPanel<F> {
    pub zone_ids: Vec<String>,
    pub years: Vec<i32>,
    /// zones x years.
    pub sums: Array2<F>,
    /// Cells whose centre lies in each zone (nodata cells included).
    pub cell_counts: Vec<usize>,
    pub zero_coverage: Vec<String>,
    /// Cells assigned to more than one zone.
    pub overlapping_cells: usize,
    pub country_codes: Vec<String>,
    pub locations: Vec<Option<GeoPoint>>,
}

impl<F: Scalar> ZonalPanel<F> {
    /// Convert to a level panel; every cell is present.
    pub fn to_panel(&self) -> Result<Panel<F>> {
        let entities = self
            .zone_ids
            .iter()
            .zip(&self.country_codes)
            .zip(&self.locations)
            .map(|((id, cc), loc)| EntityMeta {
                entity_id: id.clone(),
                country_code: cc.clone(),
                location: *loc,
            })
            .collect();
        let present = Array2::from_elem(self.sums.dim(), true);
        Panel::new(entities, self.years.clone(), self.sums.clone(), present)
    }
}

fn member_cells<F: Scalar>(raster: &GridRaster<F>, poly: &ZonePolygon) -> Vec<(usize, usize)> {
    let (min_x, min_y, max_x, max_y) = poly.bbox();
    let s = raster.cell_size;
    let (ox, oy) = (raster.origin_x, raster.origin_y);
    // candidate index window, widened by one cell against rounding
    let clamp = |v: f64, n: usize| -> usize { v.max(0.0).min(n as f64 - 1.0) as usize };
    let c0 = clamp(((min_x - ox) / s - 0.5).floor() - 1.0, raster.n_cols);
    let c1 = clamp(((max_x - ox) / s - 0.5).ceil() + 1.0, raster.n_cols);
    let r0 = clamp(((oy - max_y) / s - 0.5).floor() - 1.0, raster.n_rows);
    let r1 = clamp(((oy - min_y) / s - 0.5).ceil() + 1.0, raster.n_rows);
    let mut out = Vec::new();
    if max_x < ox || min_x > ox + s * raster.n_cols as f64 || min_y > oy || max_y < oy - s * raster.n_rows as f64 {
        return out;
    }
    for r in r0..=r1 {
        for c in c0..=c1 {
            let p = raster.center_unchecked(r, c);
            if p.0 >= min_x && p.0 <= max_x && p.1 >= min_y && p.1 <= max_y && point_in_polygon(p, poly) {
                out.push((r, c));
            }
        }
    }
    out
}

/// Sum every band over the cells whose centres fall inside each zone.
///
/// Nodata cells are skipped. A cell inside several zones counts towards all
/// of them; zones with no member cells keep zero sums and are listed in
/// `zero_coverage`.
pub fn aggregate_zones<F: Scalar>(raster: &GridRaster<F>, zones: &[ZonePolygon]) -> Result<ZonalPanel<F>> {
    if zones.is_empty() {
        return Err(Error::InvalidInput("no zones supplied".into()));
    }
    if raster.bands.is_empty() {
        return Err(Error::InvalidInput("raster has no bands".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for z in zones {
        if !seen.insert(z.zone_id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate zone id '{}'", z.zone_id)));
        }
    }
    let members: Vec<Vec<(usize, usize)>> = zones.par_iter().map(|z| member_cells(raster, z)).collect();
    let nb = raster.bands.len();
    let mut sums = Array2::from_elem((zones.len(), nb), F::zero());
    for (zi, cells) in members.iter().enumerate() {
        for (b, band) in raster.bands.iter().enumerate() {
            let mut acc = F::zero();
            for &(r, c) in cells {
                let v = band.values[[r, c]];
                if !raster.is_nodata(v) {
                    acc = acc + v;
                }
            }
            sums[[zi, b]] = acc;
        }
    }
    let mut hits = Array2::<u32>::zeros((raster.n_rows, raster.n_cols));
    for cells in &members {
        for &(r, c) in cells {
            hits[[r, c]] += 1;
        }
    }
    let overlapping_cells = hits.iter().filter(|&&h| h > 1).count();
    if overlapping_cells > 0 {
        log::warn!("{overlapping_cells} cell(s) fall inside more than one zone; counted in each");
    }
    let zero_coverage: Vec<String> = zones
        .iter()
        .zip(&members)
        .filter(|(_, m)| m.is_empty())
        .map(|(z, _)| z.zone_id.clone())
        .collect();
    for z in &zero_coverage {
        log::warn!("zone '{z}' contains no cell centres");
    }
    Ok(ZonalPanel {
        zone_ids: zones.iter().map(|z| z.zone_id.clone()).collect(),
        years: raster.bands.iter().map(|b| b.year).collect(),
        sums,
        cell_counts: members.iter().map(Vec::len).collect(),
        zero_coverage,
        overlapping_cells,
        country_codes: zones.iter().map(|z| z.country_code.clone()).collect(),
        locations: zones.iter().map(|z| z.location).collect(),
    })
}

#[derive(Deserialize)]
struct BandDoc {
    year: i32,
    #[serde(default)]
    values: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    path: Option<String>,
}

#[derive(Deserialize)]
struct RasterDoc {
    origin_x: f64,
    origin_y: f64,
    cell_size: f64,
    n_rows: usize,
    n_cols: usize,
    #[serde(default)]
    nodata: Option<f64>,
    bands: Vec<BandDoc>,
}

fn matrix_from_rows<F: Scalar>(rows: Vec<Vec<f64>>, n_rows: usize, n_cols: usize, year: i32) -> Result<Array2<F>> {
    if rows.len() != n_rows || rows.iter().any(|r| r.len() != n_cols) {
        return Err(Error::InvalidInput(format!(
            "band {year} is not a {n_rows}x{n_cols} matrix"
        )));
    }
    Ok(Array2::from_shape_fn((n_rows, n_cols), |(i, j)| F::lit(rows[i][j])))
}

fn read_band_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    message: format!("{}: '{f}' is not numeric", path.display()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Read a raster description. Each band carries either inline `values`
/// (rows top to bottom) or a `path` to a header-less CSV matrix, resolved
/// relative to `base_dir`.
pub fn read_raster<F: Scalar, R: Read>(reader: R, base_dir: &Path) -> Result<GridRaster<F>> {
    let doc: RasterDoc = serde_json::from_reader(reader)?;
    let mut bands = Vec::with_capacity(doc.bands.len());
    for b in doc.bands {
        let rows = match (b.values, b.path) {
            (Some(v), None) => v,
            (None, Some(p)) => read_band_csv(&base_dir.join(p))?,
            _ => {
                return Err(Error::InvalidInput(format!(
                    "band {} needs exactly one of 'values' or 'path'",
                    b.year
                )))
            }
        };
        bands.push(Band {
            year: b.year,
            values: matrix_from_rows(rows, doc.n_rows, doc.n_cols, b.year)?,
        });
    }
    GridRaster::new(doc.origin_x, doc.origin_y, doc.cell_size, doc.n_rows, doc.n_cols, bands, doc.nodata)
}

pub fn read_raster_path<F: Scalar>(path: &Path) -> Result<GridRaster<F>> {
    let file = std::fs::File::open(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    read_raster(std::io::BufReader::new(file), base)
}

#[derive(Deserialize)]
struct ZoneDoc {
    id: String,
    exterior: Vec<[f64; 2]>,
    #[serde(default)]
    holes: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    country_code: Option<String>,
    #[serde(default)]
    lon: Option<f64>,
    #[serde(default)]
    lat: Option<f64>,
}

#[derive(Deserialize)]
struct ZonesDoc {
    zones: Vec<ZoneDoc>,
}

/// Read `{"zones":[{"id", "exterior", "holes"?, "country_code"?, "lon"?, "lat"?}]}`.
pub fn read_zones<R: Read>(reader: R) -> Result<Vec<ZonePolygon>> {
    let doc: ZonesDoc = serde_json::from_reader(reader)?;
    let ring = |r: &[[f64; 2]]| r.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>();
    doc.zones
        .into_iter()
        .map(|z| {
            let mut poly = ZonePolygon::new(&z.id, ring(&z.exterior), z.holes.iter().map(|h| ring(h)).collect())?;
            if let Some(cc) = z.country_code {
                poly = poly.with_country(cc);
            }
            match (z.lon, z.lat) {
                (Some(lon), Some(lat)) => poly = poly.with_location(lon, lat),
                (None, None) => {}
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "zone '{}': lon and lat must both be given or both omitted",
                        z.id
                    )))
                }
            }
            Ok(poly)
        })
        .collect()
}

pub fn read_zones_path(path: &Path) -> Result<Vec<ZonePolygon>> {
    read_zones(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(id: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> ZonePolygon {
        ZonePolygon::new(id, vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)], vec![]).unwrap()
    }

    fn ones(n_rows: usize, n_cols: usize) -> GridRaster<f64> {
        GridRaster::new(
            0.0,
            n_rows as f64,
            1.0,
            n_rows,
            n_cols,
            vec![Band {
                year: 2000,
                values: Array2::ones((n_rows, n_cols)),
            }],
            None,
        )
        .unwrap()
    }

    #[test]
    fn cell_centres() {
        let r = ones(10, 10);
        assert_eq!(r.cell_center(0, 0).unwrap(), (0.5, 9.5));
        assert_eq!(r.cell_center(9, 9).unwrap(), (9.5, 0.5));
        assert!(r.cell_center(10, 0).is_err());
    }

    #[test]
    fn square_containment_and_boundary() {
        let sq = square("a", 0.0, 0.0, 1.0, 1.0);
        assert!(point_in_polygon((0.5, 0.5), &sq));
        assert!(!point_in_polygon((3.0, 0.5), &sq));
        assert!(point_in_polygon((1.0, 0.5), &sq));
        assert!(point_in_polygon((0.0, 0.0), &sq));
        assert!(!point_in_polygon((1.0000001, 0.5), &sq));
    }

    #[test]
    fn hole_excludes_interior_but_not_its_edge() {
        let p = ZonePolygon::new(
            "h",
            vec![(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0), (0.0, 0.0)],
            vec![vec![(1.0, 1.0), (3.0, 1.0), (3.0, 3.0), (1.0, 3.0), (1.0, 1.0)]],
        )
        .unwrap();
        assert!(!point_in_polygon((2.0, 2.0), &p));
        assert!(point_in_polygon((0.5, 2.0), &p));
        assert!(point_in_polygon((1.0, 2.0), &p));
    }

    #[test]
    fn ring_validation() {
        assert!(ZonePolygon::new("x", vec![(0.0, 0.0), (1.0, 0.0), (0.0, 0.0)], vec![]).is_err());
        assert!(ZonePolygon::new("x", vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)], vec![]).is_err());
        // bow tie
        let bow = vec![(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0), (0.0, 0.0)];
        assert!(ZonePolygon::new("x", bow, vec![]).is_err());
    }

    #[test]
    fn left_column_of_two_by_two() {
        let r = ones(2, 2);
        let z = square("left", 0.0, 0.0, 1.0, 2.0);
        let out = aggregate_zones(&r, &[z]).unwrap();
        assert_eq!(out.sums[[0, 0]], 2.0);
        assert_eq!(out.cell_counts, vec![2]);
    }

    #[test]
    fn empty_zone_is_flagged() {
        let r = ones(2, 2);
        let z = square("tiny", 0.1, 0.1, 0.2, 0.2);
        let out = aggregate_zones(&r, &[z]).unwrap();
        assert_eq!(out.sums[[0, 0]], 0.0);
        assert_eq!(out.zero_coverage, vec!["tiny".to_string()]);
    }

    #[test]
    fn overlap_counts_in_both_and_nodata_skipped() {
        let mut r = ones(2, 2);
        r.bands[0].values[[1, 0]] = -1.0;
        r.nodata = Some(-1.0);
        let a = square("a", 0.0, 0.0, 2.0, 2.0);
        let b = square("b", 0.0, 1.0, 2.0, 2.0);
        let out = aggregate_zones(&r, &[a, b]).unwrap();
        assert_eq!(out.sums[[0, 0]], 3.0);
        assert_eq!(out.sums[[1, 0]], 2.0);
        assert_eq!(out.overlapping_cells, 2);
    }

    #[test]
    fn json_roundtrip() {
        let raster = r#"{"origin_x":0,"origin_y":2,"cell_size":1,"n_rows":2,"n_cols":2,"nodata":-9999,
            "bands":[{"year":2000,"values":[[1,2],[3,-9999]]},{"year":2001,"values":[[2,2],[2,2]]}]}"#;
        let r: GridRaster<f64> = read_raster(raster.as_bytes(), Path::new(".")).unwrap();
        let zones = r#"{"zones":[{"id":"z","exterior":[[0,0],[2,0],[2,2],[0,2],[0,0]],"country_code":"AA","lon":1,"lat":2}]}"#;
        let z = read_zones(zones.as_bytes()).unwrap();
        let out = aggregate_zones(&r, &z).unwrap();
        assert_eq!(out.sums.row(0).to_vec(), vec![6.0, 8.0]);
        let p = out.to_panel().unwrap();
        assert_eq!(p.entities()[0].country_code, "AA");
        assert_eq!(p.years(), &[2000, 2001]);
    }
}
