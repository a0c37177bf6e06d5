//! Thematic KML layers: choropleth, prism and push-pin.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{GeometryIndex, Ring};

pub const DEFAULT_PRISM_HEIGHT: f64 = 200_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technique {
    Choropleth,
    Prism,
    Pushpin,
}

impl Technique {
    pub fn as_str(self) -> &'static str {
        match self {
            Technique::Choropleth => "choropleth",
            Technique::Prism => "prism",
            Technique::Pushpin => "pushpin",
        }
    }
}

impl FromStr for Technique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "choropleth" => Ok(Technique::Choropleth),
            "prism" => Ok(Technique::Prism),
            "pushpin" | "push-pin" => Ok(Technique::Pushpin),
            other => Err(Error::Validation(format!("unknown technique `{other}`"))),
        }
    }
}

/// RGBA color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rgba(pub [u8; 4]);

impl Rgba {
    /// KML channel order: `aabbggrr`.
    pub fn kml(self) -> String {
        let [r, g, b, a] = self.0;
        format!("{a:02x}{b:02x}{g:02x}{r:02x}")
    }
}

impl fmt::Display for Rgba {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [r, g, b, a] = self.0;
        write!(f, "#{r:02x}{g:02x}{b:02x}{a:02x}")
    }
}

/// Parses `#rrggbb` or `#rrggbbaa`.
impl FromStr for Rgba {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let hex = s.trim().trim_start_matches('#');
        let bad = || Error::Validation(format!("invalid color `{s}`"));
        if !(hex.len() == 6 || hex.len() == 8) || !hex.is_ascii() {
            return Err(bad());
        }
        let mut c = [0u8, 0, 0, 255];
        for (i, slot) in c.iter_mut().enumerate().take(hex.len() / 2) {
            *slot = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        Ok(Rgba(c))
    }
}

impl Serialize for Rgba {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rgba {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Evenly spaced color stops over `[v_min, v_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRamp")]
pub struct ColorRamp {
    stops: Vec<Rgba>,
    v_min: f64,
    v_max: f64,
}

#[derive(Deserialize)]
struct RawRamp {
    stops: Vec<Rgba>,
    v_min: f64,
    v_max: f64,
}

impl TryFrom<RawRamp> for ColorRamp {
    type Error = Error;

    fn try_from(r: RawRamp) -> Result<Self> {
        ColorRamp::new(r.stops, r.v_min, r.v_max)
    }
}

impl ColorRamp {
    pub fn new(stops: Vec<Rgba>, v_min: f64, v_max: f64) -> Result<Self> {
        if stops.len() < 2 {
            return Err(Error::Validation("a color ramp needs at least two stops".into()));
        }
        if !(v_min.is_finite() && v_max.is_finite() && v_min < v_max) {
            return Err(Error::Validation(format!("invalid ramp domain [{v_min}, {v_max}]")));
        }
        Ok(ColorRamp { stops, v_min, v_max })
    }

    /// Yellow to dark red.
    pub fn heat(v_min: f64, v_max: f64) -> Result<Self> {
        Self::new(
            vec![
                Rgba([255, 255, 178, 200]),
                Rgba([254, 178, 76, 200]),
                Rgba([240, 59, 32, 200]),
                Rgba([128, 0, 38, 200]),
            ],
            v_min,
            v_max,
        )
    }

    pub fn stops(&self) -> &[Rgba] {
        &self.stops
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.v_min, self.v_max)
    }

    /// Same stops over a new domain.
    pub fn with_domain(&self, v_min: f64, v_max: f64) -> Result<Self> {
        Self::new(self.stops.clone(), v_min, v_max)
    }

    /// Position of `v` along the ramp in [0, 1], clamped at both ends.
    pub fn position(&self, v: f64) -> f64 {
        ((v - self.v_min) / (self.v_max - self.v_min)).clamp(0.0, 1.0)
    }

    pub fn color(&self, v: f64) -> Rgba {
        let t = self.position(v) * (self.stops.len() - 1) as f64;
        let i = (t.floor() as usize).min(self.stops.len() - 2);
        let f = t - i as f64;
        let (a, b) = (self.stops[i].0, self.stops[i + 1].0);
        let mut c = [0u8; 4];
        for k in 0..4 {
            c[k] = (a[k] as f64 + (b[k] as f64 - a[k] as f64) * f).round() as u8;
        }
        Rgba(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerUnit {
    pub id: String,
    pub name: String,
    pub value: f64,
    /// `(lat, lon)`; needed for push-pins when no geometry is given.
    pub point: Option<(f64, f64)>,
    /// Extra figures shown in the placemark balloon.
    pub indicators: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThematicLayer {
    pub name: String,
    pub indicator: String,
    pub technique: Technique,
    pub units: Vec<LayerUnit>,
    pub ramp: ColorRamp,
    /// Height of a prism at the top of the ramp domain, in metres.
    pub prism_height: f64,
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// HTML table of indicator values at four decimals.
pub fn emit_description_balloon(unit: &str, indicators: &BTreeMap<String, f64>) -> String {
    let mut out = format!("<table><caption>{}</caption><tbody>", escape(unit));
    for (name, value) in indicators {
        let _ = write!(out, "<tr><th>{}</th><td>{value:.4}</td></tr>", escape(name));
    }
    out.push_str("</tbody></table>");
    out
}

fn write_ring(out: &mut String, ring: &Ring, alt: f64) {
    out.push_str("<LinearRing><coordinates>");
    for (i, p) in ring.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{},{},{}", p[0], p[1], alt);
    }
    out.push_str("</coordinates></LinearRing>");
}

/// Renders `layer` as a KML 2.2 document. Region techniques take their
/// outlines from `geometry`; push-pins use the unit point, else the region's
/// representative point. Output depends only on the inputs.
pub fn emit_layer(layer: &ThematicLayer, geometry: Option<&GeometryIndex>) -> Result<String> {
    if !(layer.prism_height.is_finite() && layer.prism_height >= 0.0) {
        return Err(Error::Validation(format!(
            "invalid prism height {}",
            layer.prism_height
        )));
    }
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<kml xmlns=\"http://www.opengis.net/kml/2.2\">\n<Document>\n");
    let _ = writeln!(out, "<name>{}</name>", escape(&layer.name));
    let (v_min, v_max) = layer.ramp.domain();
    let _ = writeln!(
        out,
        "<description>{} ({}) domain [{v_min}, {v_max}]</description>",
        escape(&layer.indicator),
        layer.technique.as_str()
    );

    for unit in &layer.units {
        if !unit.value.is_finite() {
            return Err(Error::Validation(format!("non-finite value for `{}`", unit.id)));
        }
        let color = layer.ramp.color(unit.value).kml();
        let mut balloon = unit.indicators.clone();
        balloon.insert(layer.indicator.clone(), unit.value);

        out.push_str("<Placemark>\n");
        let _ = writeln!(out, "<name>{}</name>", escape(&unit.name));
        let _ = writeln!(
            out,
            "<description>{}</description>",
            escape(&emit_description_balloon(&unit.id, &balloon))
        );
        let _ = writeln!(
            out,
            "<ExtendedData><Data name=\"unit\"><value>{}</value></Data><Data name=\"value\"><value>{}</value></Data></ExtendedData>",
            escape(&unit.id),
            unit.value
        );

        match layer.technique {
            Technique::Pushpin => {
                let (lat, lon) = unit
                    .point
                    .or_else(|| geometry.and_then(|g| g.representative_point(&unit.id)))
                    .ok_or_else(|| Error::MissingGeometry(unit.id.clone()))?;
                let scale = 0.5 + 1.5 * layer.ramp.position(unit.value);
                let _ = writeln!(
                    out,
                    "<Style><IconStyle><color>{color}</color><scale>{scale}</scale></IconStyle></Style>"
                );
                let _ = writeln!(
                    out,
                    "<Point><altitudeMode>clampToGround</altitudeMode><coordinates>{lon},{lat},0</coordinates></Point>"
                );
            }
            Technique::Choropleth | Technique::Prism => {
                let polygons = geometry
                    .and_then(|g| g.get(&unit.id))
                    .ok_or_else(|| Error::MissingGeometry(unit.id.clone()))?;
                let prism = layer.technique == Technique::Prism;
                let alt = if prism {
                    layer.ramp.position(unit.value) * layer.prism_height
                } else {
                    0.0
                };
                let _ = writeln!(
                    out,
                    "<Style><LineStyle><color>ff444444</color><width>1</width></LineStyle><PolyStyle><color>{color}</color><fill>1</fill><outline>1</outline></PolyStyle></Style>"
                );
                out.push_str("<MultiGeometry>\n");
                for p in polygons {
                    out.push_str("<Polygon>");
                    if prism {
                        out.push_str("<extrude>1</extrude><altitudeMode>relativeToGround</altitudeMode>");
                    } else {
                        out.push_str("<altitudeMode>clampToGround</altitudeMode>");
                    }
                    out.push_str("<outerBoundaryIs>");
                    write_ring(&mut out, &p.exterior, alt);
                    out.push_str("</outerBoundaryIs>");
                    for h in &p.holes {
                        out.push_str("<innerBoundaryIs>");
                        write_ring(&mut out, h, alt);
                        out.push_str("</innerBoundaryIs>");
                    }
                    out.push_str("</Polygon>\n");
                }
                out.push_str("</MultiGeometry>\n");
            }
        }
        out.push_str("</Placemark>\n");
    }
    out.push_str("</Document>\n</kml>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Polygon;
    use crate::model::GeoLevel;
    use proptest::prelude::*;

    fn square(x0: f64) -> Polygon {
        Polygon {
            exterior: vec![[x0, 0.0], [x0 + 1.0, 0.0], [x0 + 1.0, 1.0], [x0, 1.0], [x0, 0.0]],
            holes: vec![],
        }
    }

    fn geometry() -> GeometryIndex {
        GeometryIndex::new(
            GeoLevel::County,
            (1..=3)
                .map(|i| (format!("r{i}"), vec![square(i as f64 * 0.123456789)]))
                .collect(),
        )
        .unwrap()
    }

    fn two_stop() -> ColorRamp {
        ColorRamp::new(vec![Rgba([0, 0, 0, 255]), Rgba([255, 100, 10, 255])], 1.0, 3.0).unwrap()
    }

    fn layer(technique: Technique, values: &[f64]) -> ThematicLayer {
        ThematicLayer {
            name: "test".into(),
            indicator: "MMI".into(),
            technique,
            units: values
                .iter()
                .enumerate()
                .map(|(i, v)| LayerUnit {
                    id: format!("r{}", i + 1),
                    name: format!("Region {} & co", i + 1),
                    value: *v,
                    point: None,
                    indicators: BTreeMap::new(),
                })
                .collect(),
            ramp: two_stop(),
            prism_height: DEFAULT_PRISM_HEIGHT,
        }
    }

    fn placemark_colors(doc: &str) -> Vec<String> {
        let xml = roxmltree::Document::parse(doc).unwrap();
        xml.descendants()
            .filter(|n| n.has_tag_name("PolyStyle"))
            .map(|n| {
                n.children()
                    .find(|c| c.has_tag_name("color"))
                    .unwrap()
                    .text()
                    .unwrap()
                    .to_string()
            })
            .collect()
    }

    #[test]
    fn middle_value_blends_halfway() {
        let doc = emit_layer(&layer(Technique::Choropleth, &[1.0, 2.0, 3.0]), Some(&geometry())).unwrap();
        let colors = placemark_colors(&doc);
        // Channels halfway: r 127.5 -> 128, g 50, b 5; KML order aabbggrr.
        assert_eq!(colors, ["ff000000", "ff053280", "ff0a64ff"]);
    }

    #[test]
    fn lower_bound_takes_first_stop() {
        let ramp = two_stop();
        assert_eq!(ramp.color(1.0), ramp.stops()[0]);
        assert_eq!(ramp.color(-50.0), ramp.stops()[0]);
        assert_eq!(ramp.color(99.0), ramp.stops()[1]);
    }

    #[test]
    fn empty_layer_is_valid() {
        let doc = emit_layer(&layer(Technique::Prism, &[]), None).unwrap();
        let xml = roxmltree::Document::parse(&doc).unwrap();
        assert_eq!(xml.descendants().filter(|n| n.has_tag_name("Placemark")).count(), 0);
    }

    #[test]
    fn coordinates_round_trip() {
        let g = geometry();
        let doc = emit_layer(&layer(Technique::Prism, &[1.0, 2.5, 3.0]), Some(&g)).unwrap();
        let xml = roxmltree::Document::parse(&doc).unwrap();
        let rings: Vec<Vec<[f64; 3]>> = xml
            .descendants()
            .filter(|n| n.has_tag_name("coordinates"))
            .map(|n| {
                n.text()
                    .unwrap()
                    .split_whitespace()
                    .map(|t| {
                        let v: Vec<f64> = t.split(',').map(|x| x.parse().unwrap()).collect();
                        [v[0], v[1], v[2]]
                    })
                    .collect()
            })
            .collect();
        for (i, ring) in rings.iter().enumerate() {
            let expected = &g.get(&format!("r{}", i + 1)).unwrap()[0].exterior;
            for (p, q) in ring.iter().zip(expected) {
                assert!((p[0] - q[0]).abs() <= 1e-9 && (p[1] - q[1]).abs() <= 1e-9);
            }
        }
        assert_eq!(rings[0][0][2], 0.0);
        assert_eq!(rings[1][0][2], 0.75 * DEFAULT_PRISM_HEIGHT);
        assert_eq!(rings[2][0][2], DEFAULT_PRISM_HEIGHT);
    }

    #[test]
    fn output_is_deterministic() {
        let l = layer(Technique::Choropleth, &[1.0, 2.0, 3.0]);
        let g = geometry();
        assert_eq!(emit_layer(&l, Some(&g)).unwrap(), emit_layer(&l, Some(&g)).unwrap());
    }

    #[test]
    fn rejects_nan_and_missing_geometry() {
        let g = geometry();
        assert!(matches!(
            emit_layer(&layer(Technique::Choropleth, &[f64::NAN]), Some(&g)),
            Err(Error::Validation(_))
        ));
        let mut l = layer(Technique::Choropleth, &[1.0]);
        l.units[0].id = "nowhere".into();
        assert!(matches!(emit_layer(&l, Some(&g)), Err(Error::MissingGeometry(id)) if id == "nowhere"));
        assert!(matches!(emit_layer(&l, None), Err(Error::MissingGeometry(_))));
    }

    #[test]
    fn pushpins_use_points() {
        let mut l = layer(Technique::Pushpin, &[2.0]);
        l.units[0].point = Some((35.6, 139.7));
        let doc = emit_layer(&l, None).unwrap();
        assert!(doc.contains("<coordinates>139.7,35.6,0</coordinates>"));
        assert!(doc.contains("<scale>1.25</scale>"));
        // Falls back to the region centroid.
        let doc = emit_layer(&layer(Technique::Pushpin, &[2.0]), Some(&geometry())).unwrap();
        assert!(roxmltree::Document::parse(&doc).is_ok());
    }

    #[test]
    fn balloon_formatting() {
        assert_eq!(
            emit_description_balloon("u", &BTreeMap::new()),
            "<table><caption>u</caption><tbody></tbody></table>"
        );
        let one: BTreeMap<_, _> = [("D_2012".to_string(), 25.49041)].into_iter().collect();
        let html = emit_description_balloon("u", &one);
        assert_eq!(html.matches("<tr>").count(), 1);
        assert!(html.contains("<td>25.4904</td>"));
    }

    #[test]
    fn ramp_validation_and_parsing() {
        assert!(ColorRamp::new(vec![Rgba([0; 4])], 0.0, 1.0).is_err());
        assert!(ColorRamp::new(vec![Rgba([0; 4]); 2], 1.0, 1.0).is_err());
        assert_eq!("#ff8000".parse::<Rgba>().unwrap(), Rgba([255, 128, 0, 255]));
        assert_eq!("#ff800040".parse::<Rgba>().unwrap().kml(), "400080ff");
        assert!("#ff80".parse::<Rgba>().is_err());
        let json = serde_json::to_string(&two_stop()).unwrap();
        assert_eq!(serde_json::from_str::<ColorRamp>(&json).unwrap(), two_stop());
        assert!(serde_json::from_str::<ColorRamp>(r##"{"stops":["#000000"],"v_min":0,"v_max":1}"##).is_err());
    }

    proptest! {
        #[test]
        fn ramp_position_is_monotone(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let ramp = ColorRamp::heat(1.0, 10.0).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(ramp.position(lo) <= ramp.position(hi));
        }

        #[test]
        fn two_stop_channels_are_monotone(a in 0.0f64..4.0, b in 0.0f64..4.0) {
            let ramp = two_stop();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (x, y) = (ramp.color(lo).0, ramp.color(hi).0);
            for k in 0..3 {
                prop_assert!(x[k] <= y[k]);
            }
        }
    }
}
