//! ShakeMap grid documents and nearest-point intensity extraction.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{attr, xml_error};
use crate::error::{Error, Result};
use crate::model::{Mmi, PopulationCentre};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub latitude: f64,
    pub longitude: f64,
    pub mmi: Mmi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShakeGrid {
    pub event_id: String,
    pub points: Vec<GridPoint>,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_spacing: f64,
    pub lon_spacing: f64,
}

impl ShakeGrid {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.lat_min..=self.lat_max).contains(&lat) && (self.lon_min..=self.lon_max).contains(&lon)
    }
}

const BOUNDS_SLACK: f64 = 1e-9;

/// Parses a `shakemap_grid` document. Columns are located through the
/// `grid_field` declarations; without them rows are read as `lon lat mmi`.
pub fn parse_shakemap_grid(document: &str) -> Result<ShakeGrid> {
    let doc = roxmltree::Document::parse(document).map_err(xml_error)?;
    let root = doc.root_element();
    if root.tag_name().name() != "shakemap_grid" {
        return Err(Error::schema(
            "shakemap_grid",
            format!("expected <shakemap_grid> root, found <{}>", root.tag_name().name()),
        ));
    }
    let event_id = root
        .attribute("event_id")
        .or_else(|| {
            root.children()
                .find(|n| n.has_tag_name("event"))
                .and_then(|e| e.attribute("event_id"))
        })
        .unwrap_or_default()
        .to_string();

    let spec = root
        .children()
        .find(|n| n.has_tag_name("grid_specification"))
        .ok_or_else(|| Error::schema("grid_specification", "missing element"))?;
    let lat_min: f64 = attr(spec, "lat_min")?;
    let lat_max: f64 = attr(spec, "lat_max")?;
    let lon_min: f64 = attr(spec, "lon_min")?;
    let lon_max: f64 = attr(spec, "lon_max")?;
    let lon_spacing: f64 = attr(spec, "nominal_lon_spacing")?;
    let lat_spacing: f64 = match spec.attribute("nominal_lat_spacing") {
        Some(_) => attr(spec, "nominal_lat_spacing")?,
        None => lon_spacing,
    };
    if lat_min > lat_max || lon_min > lon_max {
        return Err(Error::schema("grid_specification", "inverted bounds"));
    }
    if !(lat_spacing > 0.0 && lon_spacing > 0.0) {
        return Err(Error::schema("nominal_lon_spacing", "spacing must be positive"));
    }

    let mut columns: HashMap<String, usize> = HashMap::new();
    let mut n_fields = 0;
    for f in root.children().filter(|n| n.has_tag_name("grid_field")) {
        let index: usize = attr(f, "index")?;
        let name: String = attr(f, "name")?;
        if index == 0 {
            return Err(Error::schema("index", "grid_field indices start at 1"));
        }
        n_fields = n_fields.max(index);
        columns.insert(name.to_ascii_uppercase(), index - 1);
    }
    let (lon_col, lat_col, mmi_col) = if columns.is_empty() {
        n_fields = 3;
        (0, 1, 2)
    } else {
        let col = |name: &str| {
            columns
                .get(name)
                .copied()
                .ok_or_else(|| Error::schema("grid_field", format!("no {name} column declared")))
        };
        (col("LON")?, col("LAT")?, col("MMI")?)
    };

    let data = root
        .children()
        .find(|n| n.has_tag_name("grid_data"))
        .ok_or_else(|| Error::schema("grid_data", "missing element"))?;
    let text = data.text().unwrap_or_default();
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::schema("grid_data", format!("bad number `{t}`: {e}")))
        })
        .collect::<Result<_>>()?;
    if !values.len().is_multiple_of(n_fields) {
        return Err(Error::schema(
            "grid_data",
            format!("{} values do not form rows of {n_fields}", values.len()),
        ));
    }

    let mut points = Vec::with_capacity(values.len() / n_fields);
    for row in values.chunks_exact(n_fields) {
        let (lon, lat) = (row[lon_col], row[lat_col]);
        if lat < lat_min - BOUNDS_SLACK
            || lat > lat_max + BOUNDS_SLACK
            || lon < lon_min - BOUNDS_SLACK
            || lon > lon_max + BOUNDS_SLACK
        {
            return Err(Error::GridIntegrity { lat, lon });
        }
        points.push(GridPoint {
            latitude: lat,
            longitude: lon,
            mmi: Mmi::new(row[mmi_col])?,
        });
    }
    if points.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if let (Some(nlat), Some(nlon)) = (spec.attribute("nlat"), spec.attribute("nlon")) {
        let nlat: usize = attr(spec, "nlat").map_err(|_| Error::schema("nlat", nlat))?;
        let nlon: usize = attr(spec, "nlon").map_err(|_| Error::schema("nlon", nlon))?;
        if nlat * nlon != points.len() {
            return Err(Error::Validation(format!(
                "grid declares {nlat} x {nlon} points but holds {}",
                points.len()
            )));
        }
    }

    Ok(ShakeGrid {
        event_id,
        points,
        lat_min,
        lat_max,
        lon_min,
        lon_max,
        lat_spacing,
        lon_spacing,
    })
}

/// Bucketed lookup of the nearest grid point.
struct PointIndex<'a> {
    grid: &'a ShakeGrid,
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
    max_ring: i64,
}

impl<'a> PointIndex<'a> {
    fn new(grid: &'a ShakeGrid) -> Self {
        let cell = grid.lat_spacing.max(grid.lon_spacing);
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in grid.points.iter().enumerate() {
            buckets
                .entry(Self::key(grid, cell, p.latitude, p.longitude))
                .or_default()
                .push(i);
        }
        let span = (grid.lat_max - grid.lat_min).max(grid.lon_max - grid.lon_min);
        let max_ring = (span / cell).ceil() as i64 + 2;
        PointIndex {
            grid,
            cell,
            buckets,
            max_ring,
        }
    }

    fn key(grid: &ShakeGrid, cell: f64, lat: f64, lon: f64) -> (i64, i64) {
        (
            ((lat - grid.lat_min) / cell).floor() as i64,
            ((lon - grid.lon_min) / cell).floor() as i64,
        )
    }

    /// Nearest point by Euclidean distance in degrees; ties go to the lower
    /// (lat, lon).
    fn nearest(&self, lat: f64, lon: f64) -> Option<&GridPoint> {
        let (ci, cj) = Self::key(self.grid, self.cell, lat, lon);
        let mut best: Option<(f64, &GridPoint)> = None;
        for ring in 0..=self.max_ring {
            for di in -ring..=ring {
                for dj in -ring..=ring {
                    if di.abs() != ring && dj.abs() != ring {
                        continue;
                    }
                    let Some(ids) = self.buckets.get(&(ci + di, cj + dj)) else {
                        continue;
                    };
                    for &i in ids {
                        let p = &self.grid.points[i];
                        let d = sq_dist(lat, lon, p);
                        if best.is_none_or(|(bd, bp)| closer(d, p, bd, bp)) {
                            best = Some((d, p));
                        }
                    }
                }
            }
            // Anything beyond this ring is at least `ring * cell` away.
            if let Some((bd, _)) = best {
                let reach = ring as f64 * self.cell;
                if bd < reach * reach {
                    break;
                }
            }
        }
        best.map(|(_, p)| p)
    }
}

fn sq_dist(lat: f64, lon: f64, p: &GridPoint) -> f64 {
    let dlat = lat - p.latitude;
    let dlon = lon - p.longitude;
    dlat * dlat + dlon * dlon
}

fn closer(d: f64, p: &GridPoint, best_d: f64, best: &GridPoint) -> bool {
    d < best_d || (d == best_d && (p.latitude, p.longitude) < (best.latitude, best.longitude))
}

/// Intensity at every centre inside the grid bounds, taken from the nearest
/// grid point. Centres outside the bounds are left out.
pub fn extract_affected_cities<'c>(
    grid: &ShakeGrid,
    centres: impl IntoIterator<Item = &'c PopulationCentre>,
) -> BTreeMap<String, Mmi> {
    let index = PointIndex::new(grid);
    centres
        .into_iter()
        .filter(|c| grid.contains(c.latitude, c.longitude))
        .filter_map(|c| index.nearest(c.latitude, c.longitude).map(|p| (c.id.clone(), p.mmi)))
        .collect()
}
