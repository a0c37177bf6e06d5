//! Region polygons (GeoJSON feature collections, one file per level) and
//! point-in-region lookup.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::GeoLevel;

/// Closed ring of `[lon, lat]` vertices; first and last vertex coincide.
pub type Ring = Vec<[f64; 2]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub exterior: Ring,
    pub holes: Vec<Ring>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Position {
    Inside,
    Boundary,
    Outside,
}

fn ring_position(ring: &Ring, lon: f64, lat: f64) -> Position {
    let mut winding = 0i32;
    for edge in ring.windows(2) {
        let (a, b) = (edge[0], edge[1]);
        let cross = (b[0] - a[0]) * (lat - a[1]) - (lon - a[0]) * (b[1] - a[1]);
        let len2 = (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2);
        let within = lon >= a[0].min(b[0]) && lon <= a[0].max(b[0]) && lat >= a[1].min(b[1]) && lat <= a[1].max(b[1]);
        if within && cross.abs() <= 1e-12 * len2.max(1e-300) {
            return Position::Boundary;
        }
        if a[1] <= lat {
            if b[1] > lat && cross > 0.0 {
                winding += 1;
            }
        } else if b[1] <= lat && cross < 0.0 {
            winding -= 1;
        }
    }
    if winding != 0 {
        Position::Inside
    } else {
        Position::Outside
    }
}

impl Polygon {
    /// Boundary-inclusive containment; a point strictly inside a hole is
    /// outside the polygon.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        match ring_position(&self.exterior, lon, lat) {
            Position::Outside => false,
            Position::Boundary => true,
            Position::Inside => !self
                .holes
                .iter()
                .any(|h| ring_position(h, lon, lat) == Position::Inside),
        }
    }

    fn bbox(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in &self.exterior {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryIndex {
    pub level: GeoLevel,
    pub polygons: BTreeMap<String, Vec<Polygon>>,
    #[serde(skip)]
    bboxes: BTreeMap<String, [f64; 4]>,
}

impl GeometryIndex {
    pub fn new(level: GeoLevel, polygons: BTreeMap<String, Vec<Polygon>>) -> Result<Self> {
        let mut bboxes = BTreeMap::new();
        for (id, polys) in &polygons {
            if polys.is_empty() {
                return Err(Error::Validation(format!("region `{id}` has no polygons")));
            }
            let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
            for p in polys {
                for ring in std::iter::once(&p.exterior).chain(&p.holes) {
                    if ring.len() < 4 || ring.first() != ring.last() {
                        return Err(Error::Validation(format!(
                            "region `{id}` has an unclosed or degenerate ring"
                        )));
                    }
                }
                let pb = p.bbox();
                bb = [bb[0].min(pb[0]), bb[1].min(pb[1]), bb[2].max(pb[2]), bb[3].max(pb[3])];
            }
            bboxes.insert(id.clone(), bb);
        }
        Ok(GeometryIndex {
            level,
            polygons,
            bboxes,
        })
    }

    pub fn get(&self, id: &str) -> Option<&[Polygon]> {
        self.polygons.get(id).map(Vec::as_slice)
    }

    /// Area-weighted centroid of the exterior rings as `(lat, lon)`.
    pub fn representative_point(&self, id: &str) -> Option<(f64, f64)> {
        let polys = self.polygons.get(id)?;
        let (mut area, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for p in polys {
            for e in p.exterior.windows(2) {
                let c = e[0][0] * e[1][1] - e[1][0] * e[0][1];
                area += c;
                cx += (e[0][0] + e[1][0]) * c;
                cy += (e[0][1] + e[1][1]) * c;
            }
        }
        if area.abs() < 1e-15 {
            let pts: Vec<_> = polys.iter().flat_map(|p| &p.exterior).collect();
            let n = pts.len() as f64;
            return Some((
                pts.iter().map(|p| p[1]).sum::<f64>() / n,
                pts.iter().map(|p| p[0]).sum::<f64>() / n,
            ));
        }
        Some((cy / (3.0 * area), cx / (3.0 * area)))
    }
}

/// Containing region at the index's level. On shared borders the
/// lexicographically smallest id wins.
pub fn locate_in_region(point: (f64, f64), index: &GeometryIndex) -> Option<String> {
    let (lat, lon) = point;
    index
        .polygons
        .iter()
        .filter(|(id, _)| {
            index
                .bboxes
                .get(*id)
                .is_none_or(|b| lon >= b[0] && lon <= b[2] && lat >= b[1] && lat <= b[3])
        })
        .find(|(_, polys)| polys.iter().any(|p| p.contains(lat, lon)))
        .map(|(id, _)| id.clone())
}

/// Reads a GeoJSON `FeatureCollection` of Polygon / MultiPolygon features.
/// The region id comes from `properties.id`, falling back to the feature id.
pub fn load_geometry(document: &str, level: GeoLevel) -> Result<GeometryIndex> {
    let v: Value = serde_json::from_str(document)?;
    let features = v
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::schema("features", "expected a FeatureCollection"))?;
    let mut polygons: BTreeMap<String, Vec<Polygon>> = BTreeMap::new();
    for f in features {
        let id = f
            .pointer("/properties/id")
            .or_else(|| f.get("id"))
            .and_then(|v| match v {
                Value::String(s) => Some(s.clone()),
                Value::Number(n) => Some(n.to_string()),
                _ => None,
            })
            .ok_or_else(|| Error::schema("id", "feature without an id"))?;
        let geom = f
            .get("geometry")
            .ok_or_else(|| Error::schema("geometry", format!("feature `{id}` has no geometry")))?;
        let kind = geom.get("type").and_then(Value::as_str).unwrap_or_default();
        let coords = geom
            .get("coordinates")
            .ok_or_else(|| Error::schema("coordinates", format!("feature `{id}`")))?;
        let polys = match kind {
            "Polygon" => vec![parse_polygon(coords, &id)?],
            "MultiPolygon" => coords
                .as_array()
                .ok_or_else(|| Error::schema("coordinates", format!("feature `{id}`")))?
                .iter()
                .map(|p| parse_polygon(p, &id))
                .collect::<Result<_>>()?,
            other => {
                return Err(Error::schema(
                    "type",
                    format!("feature `{id}` has unsupported geometry `{other}`"),
                ))
            }
        };
        polygons.entry(id).or_default().extend(polys);
    }
    GeometryIndex::new(level, polygons)
}

fn parse_polygon(v: &Value, id: &str) -> Result<Polygon> {
    let bad = || Error::schema("coordinates", format!("malformed polygon in `{id}`"));
    let rings = v.as_array().ok_or_else(bad)?;
    let mut parsed = rings.iter().map(|r| {
        r.as_array()
            .ok_or_else(bad)?
            .iter()
            .map(|p| {
                let a = p.as_array().ok_or_else(bad)?;
                match (a.first().and_then(Value::as_f64), a.get(1).and_then(Value::as_f64)) {
                    (Some(lon), Some(lat)) => Ok([lon, lat]),
                    _ => Err(bad()),
                }
            })
            .collect::<Result<Ring>>()
    });
    let exterior = parsed.next().ok_or_else(bad)??;
    let holes = parsed.collect::<Result<Vec<_>>>()?;
    Ok(Polygon { exterior, holes })
}
