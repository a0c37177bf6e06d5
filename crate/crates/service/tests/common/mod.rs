//! Shared setup for the service integration tests: a fixture-backed engine,
//! a request helper, and a from-scratch recomputation of the synthetic
//! fixture's losses.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{HeaderMap, Request, StatusCode};
use http_body_util::BodyExt;
use quakeloss_service::{router, Config, Engine};
use rust_decimal::{Decimal, RoundingStrategy};
use tower::ServiceExt;

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

pub fn fixture(rel: &str) -> PathBuf {
    workspace_root().join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap()
}

/// Config over the synthetic fixture with its store under `data_dir`.
pub fn synthetic_config(data_dir: &Path) -> Config {
    let text = format!(
        r##"
data_dir = "{data}"
[inputs]
gazetteer = "{root}/fixtures/synthetic/gazetteer.csv"
exposure = "{root}/fixtures/synthetic/exposure.csv"
curves = "{root}/data/mdr_curves.csv"
economic_series = "{root}/data/economic_series.csv"
[inputs.geometry]
county = "{root}/fixtures/synthetic/counties.geojson"
state = "{root}/fixtures/synthetic/states.geojson"
country = "{root}/fixtures/synthetic/countries.geojson"
[kml.ramps.mmi]
stops = ["#ffffb2", "#fd8d3c", "#bd0026"]
v_min = 1.0
v_max = 10.0
"##,
        data = data_dir.display(),
        root = workspace_root().display()
    );
    std::fs::create_dir_all(data_dir).unwrap();
    let path = data_dir.join("test.toml");
    std::fs::write(&path, text).unwrap();
    Config::load(&path).unwrap()
}

pub struct Harness {
    pub dir: tempfile::TempDir,
    pub engine: Arc<Engine>,
}

impl Harness {
    pub fn new() -> Harness {
        let dir = tempfile::tempdir().unwrap();
        let engine = Arc::new(Engine::open(synthetic_config(dir.path())).unwrap());
        Harness { dir, engine }
    }

    pub async fn call(&self, method: &str, uri: &str, body: Option<String>) -> (StatusCode, HeaderMap, Vec<u8>) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .body(body.map(Body::from).unwrap_or_else(Body::empty))
            .unwrap();
        let resp = router(self.engine.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, headers, bytes)
    }

    pub async fn get_json(&self, uri: &str) -> (StatusCode, serde_json::Value) {
        let (s, _, b) = self.call("GET", uri, None).await;
        (s, serde_json::from_slice(&b).unwrap_or(serde_json::Value::Null))
    }

    pub async fn post(&self, uri: &str, body: String) -> (StatusCode, serde_json::Value) {
        let (s, _, b) = self.call("POST", uri, Some(body)).await;
        (s, serde_json::from_slice(&b).unwrap_or(serde_json::Value::Null))
    }
}

pub fn dec(v: &serde_json::Value) -> Decimal {
    v.as_str()
        .unwrap_or_else(|| panic!("expected a decimal string, got {v}"))
        .parse()
        .unwrap()
}

/// Losses per level and unit recomputed straight from the fixture files:
/// CSV split by hand, damage ratios interpolated in decimal, region exposure
/// split by population with shares rounded down and leftover units handed
/// to the largest remainders, each city loss rounded half-to-even at 6 places.
pub fn oracle_losses(pager_rel: &str) -> BTreeMap<(String, String), (Decimal, Decimal)> {
    let rows = |rel: &str| -> Vec<Vec<String>> {
        read_fixture(rel)
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
            .collect()
    };

    // id -> (population, county, state, country)
    let mut centres: BTreeMap<String, (u64, String, String, String)> = BTreeMap::new();
    for r in rows("fixtures/synthetic/gazetteer.csv") {
        let pop: u64 = r[4].parse().unwrap();
        if pop >= 1000 {
            centres.insert(r[0].clone(), (pop, r[5].clone(), r[6].clone(), r[7].clone()));
        }
    }

    let mut curve: Vec<(Decimal, Decimal)> = rows("data/mdr_curves.csv")
        .into_iter()
        .filter(|r| r[0] == "ZZ")
        .map(|r| (r[1].parse().unwrap(), r[2].parse().unwrap()))
        .collect();
    curve.sort();
    let mdr = |x: Decimal| -> Decimal {
        if x < curve[0].0 {
            return Decimal::ZERO;
        }
        for w in curve.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x <= x1 {
                return y0 + (x - x0) * (y1 - y0) / (x1 - x0);
            }
        }
        curve.last().unwrap().1
    };

    // exposure per city: (gul, nfl) summed over lines
    let mut exposure: BTreeMap<String, (Decimal, Decimal)> = BTreeMap::new();
    for r in rows("fixtures/synthetic/exposure.csv") {
        let (gul, nfl): (Decimal, Decimal) = (r[3].parse().unwrap(), r[4].parse().unwrap());
        let members: Vec<(&String, u64)> = centres
            .iter()
            .filter(|(id, c)| match r[1].as_str() {
                "city" => **id == r[0],
                "county" => c.1 == r[0],
                "state" => c.2 == r[0],
                _ => c.3 == r[0],
            })
            .map(|(id, c)| (id, c.0))
            .collect();
        let total: u64 = members.iter().map(|m| m.1).sum();
        let split = |amount: Decimal| -> Vec<Decimal> {
            let unit = Decimal::new(1, 6);
            let exact: Vec<Decimal> = members
                .iter()
                .map(|(_, p)| amount * Decimal::from(*p) / Decimal::from(total))
                .collect();
            let mut out: Vec<Decimal> = exact
                .iter()
                .map(|e| e.round_dp_with_strategy(6, RoundingStrategy::ToZero))
                .collect();
            let mut left = amount - out.iter().copied().sum::<Decimal>();
            while left >= unit {
                // hand one unit to the largest remaining fraction, earliest first
                let mut best = 0;
                for i in 1..out.len() {
                    if exact[i] - out[i] > exact[best] - out[best] {
                        best = i;
                    }
                }
                out[best] += unit;
                left -= unit;
            }
            out
        };
        let nfl_parts = split(nfl);
        let gap_parts = split(gul - nfl);
        for (((id, _), n), g) in members.iter().zip(nfl_parts).zip(gap_parts) {
            let e = exposure.entry((*id).clone()).or_default();
            e.0 += n + g;
            e.1 += n;
        }
    }

    let roman = ["I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X", "XI", "XII"];
    let xml = read_fixture(pager_rel);
    let doc = roxmltree::Document::parse(&xml).unwrap();
    let mut out: BTreeMap<(String, String), (Decimal, Decimal)> = BTreeMap::new();
    for city in doc.descendants().filter(|n| n.has_tag_name("city")) {
        let id = city.attribute("id").unwrap();
        let pop: u64 = city.attribute("population").unwrap().parse().unwrap();
        if pop < 1000 {
            continue;
        }
        let c = centres
            .get(id)
            .unwrap_or_else(|| panic!("oracle only handles gazetteer cities, not {id}"));
        let text = city.attribute("mmi").unwrap();
        let mmi: Decimal = match roman.iter().position(|r| *r == text) {
            Some(i) => Decimal::from(i + 1),
            None => text.parse().unwrap(),
        };
        let ratio = mdr(mmi);
        let (gul, nfl) = exposure.get(id).copied().unwrap_or_default();
        let round = |v: Decimal| v.round_dp_with_strategy(6, RoundingStrategy::MidpointNearestEven);
        let loss = (round(ratio * gul), round(ratio * nfl));
        for key in [
            ("city", id.to_string()),
            ("county", c.1.clone()),
            ("state", c.2.clone()),
            ("country", c.3.clone()),
        ] {
            let e = out.entry((key.0.to_string(), key.1)).or_default();
            e.0 += loss.0;
            e.1 += loss.1;
        }
    }
    out
}
