//! HTTP routes. Every body is JSON except KML documents; errors are
//! `{code, message}`.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use quakeloss_core::analytics::{bucket_probabilities, default_ladder, LossDistribution};
use quakeloss_core::kml::{emit_layer, LayerUnit, Technique, ThematicLayer};
use quakeloss_core::loss::{portfolio_breakdown, GulNfl, PortfolioBucket};
use quakeloss_core::model::{GeoLevel, LineOfBusiness};
use quakeloss_core::pipeline::exposure_by_level;
use quakeloss_core::store::IndicatorRecord;
use quakeloss_core::Error;
use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tower_http::cors::CorsLayer;

use crate::engine::Engine;

pub type AppState = Arc<Engine>;

pub const LAYERS: [&str; 5] = ["mmi", "mdr", "gul", "nfl", "population"];

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn unprocessable(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            code: "invalid_parameter",
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::Xml { .. } | Error::Schema { .. } => (StatusCode::BAD_REQUEST, "parse_error"),
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Duplicate { .. } => (StatusCode::CONFLICT, "duplicate_alert"),
            Error::Io { .. } | Error::Json(_) | Error::Csv(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal_error"),
            _ => (StatusCode::UNPROCESSABLE_ENTITY, "unprocessable"),
        };
        ApiError {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, message = %self.message, "request failed");
        }
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    let cors = match &state.config.cors_origin {
        Some(origin) => match HeaderValue::from_str(origin) {
            Ok(v) => CorsLayer::new()
                .allow_origin(v)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE])
                .expose_headers(legend_header_names()),
            Err(_) => {
                tracing::warn!(%origin, "ignoring invalid CORS origin");
                CorsLayer::new()
            }
        },
        None => CorsLayer::new(),
    };
    Router::new()
        .route("/events", get(list_events))
        .route("/events/{id}/alerts", get(list_alerts))
        .route("/events/{id}/alerts/{v}/losses", get(losses))
        .route("/events/{id}/alerts/{v}/hazard", get(hazard))
        .route("/events/{id}/alerts/{v}/exposure", get(exposure))
        .route("/events/{id}/alerts/{v}/portfolio", get(portfolio))
        .route("/events/{id}/alerts/{v}/probabilities", get(probabilities))
        .route("/events/{id}/alerts/{v}/kml", get(kml))
        .route("/static", get(static_data))
        .route("/ingest/pager", post(ingest_pager))
        .layer(cors)
        .with_state(state)
}

fn legend_header_names() -> [header::HeaderName; 4] {
    [
        header::HeaderName::from_static("x-legend-min"),
        header::HeaderName::from_static("x-legend-max"),
        header::HeaderName::from_static("x-legend-stops"),
        header::HeaderName::from_static("x-kml-cache"),
    ]
}

#[derive(Debug, Default, Deserialize)]
pub struct LevelQuery {
    level: Option<String>,
    lob: Option<String>,
}

impl LevelQuery {
    fn level(&self, default: GeoLevel) -> ApiResult<GeoLevel> {
        match &self.level {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| ApiError::unprocessable(format!("invalid level `{s}`"))),
        }
    }

    fn lob(&self) -> ApiResult<Option<LineOfBusiness>> {
        self.lob
            .as_deref()
            .map(|s| {
                s.parse()
                    .map_err(|_| ApiError::unprocessable(format!("invalid line of business `{s}`")))
            })
            .transpose()
    }
}

fn ensure_alert(state: &Engine, id: &str, v: u32) -> ApiResult<()> {
    if state.db.has_alert(id, v) {
        Ok(())
    } else if state.db.list_alerts(id).is_ok() {
        Err(Error::NotFound(format!("event `{id}` version {v}")).into())
    } else {
        Err(Error::NotFound(format!("event `{id}`")).into())
    }
}

fn unit_name(state: &Engine, level: GeoLevel, unit: &str) -> String {
    let snap = state.db.snapshot();
    let name = match level {
        GeoLevel::City => snap.hierarchy.centre(unit).map(|c| c.name.clone()),
        _ => snap.hierarchy.region(unit).map(|r| r.name.clone()),
    };
    name.unwrap_or_else(|| unit.to_string())
}

fn sum_rows<'a>(rows: impl Iterator<Item = &'a GulNfl>) -> GulNfl {
    rows.copied().sum()
}

async fn list_events(State(state): State<AppState>) -> Json<Value> {
    Json(json!(state.db.list_events()))
}

async fn list_alerts(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let alerts = state.db.list_alerts(&id)?;
    Ok(Json(json!({ "event": id, "alerts": alerts })))
}

async fn losses(
    State(state): State<AppState>,
    Path((id, v)): Path<(String, u32)>,
    Query(q): Query<LevelQuery>,
) -> ApiResult<Json<Value>> {
    let level = q.level(GeoLevel::Country)?;
    let lob = q.lob()?;
    let records = state.db.query_losses(&id, v, level, lob)?;
    let mut per_unit: BTreeMap<String, GulNfl> = BTreeMap::new();
    for r in &records {
        *per_unit.entry(r.unit.clone()).or_default() += GulNfl::new(r.gul.value, r.nfl.value);
    }
    let totals = sum_rows(per_unit.values());
    let rows: Vec<Value> = per_unit
        .iter()
        .map(|(unit, l)| json!({ "unit": unit, "name": unit_name(&state, level, unit), "gul": l.gul, "nfl": l.nfl }))
        .collect();
    Ok(Json(json!({
        "event": id,
        "version": v,
        "level": level,
        "lob": lob,
        "rows": rows,
        "totals": totals,
    })))
}

async fn hazard(
    State(state): State<AppState>,
    Path((id, v)): Path<(String, u32)>,
    Query(q): Query<LevelQuery>,
) -> ApiResult<Json<Value>> {
    let level = q.level(GeoLevel::City)?;
    let rows: Vec<Value> = state
        .db
        .query_indicators(&id, v, level)?
        .into_iter()
        .map(|r| {
            json!({
                "unit": r.unit,
                "name": unit_name(&state, level, &r.unit),
                "mmi": r.mmi,
                "mdr": r.mdr,
                "population": r.population,
            })
        })
        .collect();
    Ok(Json(json!({ "event": id, "version": v, "level": level, "rows": rows })))
}

async fn exposure(
    State(state): State<AppState>,
    Path((id, v)): Path<(String, u32)>,
    Query(q): Query<LevelQuery>,
) -> ApiResult<Json<Value>> {
    ensure_alert(&state, &id, v)?;
    let level = q.level(GeoLevel::Country)?;
    let lob = q.lob()?;
    let by = exposure_by_level(&state.reference.hierarchy, &state.reference.exposures, level)?;
    let mut per_unit: BTreeMap<String, GulNfl> = BTreeMap::new();
    for (unit, lines) in by {
        let amount: GulNfl = lines
            .into_iter()
            .filter(|(l, _)| lob.is_none_or(|x| x == *l))
            .map(|(_, a)| a)
            .sum();
        if !amount.is_zero() {
            per_unit.insert(unit, amount);
        }
    }
    let totals = sum_rows(per_unit.values());
    let rows: Vec<Value> = per_unit
        .iter()
        .map(|(unit, e)| json!({ "unit": unit, "name": unit_name(&state, level, unit), "gul": e.gul, "nfl": e.nfl }))
        .collect();
    Ok(Json(json!({
        "event": id,
        "version": v,
        "level": level,
        "lob": lob,
        "rows": rows,
        "totals": totals,
    })))
}

fn fraction(part: Decimal, total: Decimal) -> Value {
    if total.is_zero() {
        Value::Null
    } else {
        json!((part / total).to_f64().unwrap_or(0.0))
    }
}

async fn portfolio(State(state): State<AppState>, Path((id, v)): Path<(String, u32)>) -> ApiResult<Json<Value>> {
    let losses = state.db.query_losses(&id, v, GeoLevel::Country, None)?;
    let p = portfolio_breakdown(&losses, &state.reference.exposures);
    type Pick = fn(&PortfolioBucket) -> Decimal;
    let picks: [(&str, Pick); 4] = [
        ("loss_gul", |b| b.loss.gul),
        ("loss_nfl", |b| b.loss.nfl),
        ("exposure_gul", |b| b.exposure.gul),
        ("exposure_nfl", |b| b.exposure.nfl),
    ];
    let buckets: Vec<Value> = p
        .buckets
        .iter()
        .map(|(lob, b)| {
            let mut fractions = serde_json::Map::new();
            for (name, pick) in &picks {
                fractions.insert((*name).to_string(), fraction(pick(b), pick(&p.total)));
            }
            json!({ "lob": lob, "loss": b.loss, "exposure": b.exposure, "fractions": fractions })
        })
        .collect();
    Ok(Json(json!({
        "event": id,
        "version": v,
        "buckets": buckets,
        "total": { "loss": p.total.loss, "exposure": p.total.exposure },
    })))
}

/// Threshold probabilities for the alert's ground-up loss, expressed in
/// millions of dollars.
async fn probabilities(State(state): State<AppState>, Path((id, v)): Path<(String, u32)>) -> ApiResult<Json<Value>> {
    let totals = state.db.alert_totals(&id, v)?;
    let countries = state.db.query_losses(&id, v, GeoLevel::Country, None)?;
    let mut country_gul: BTreeMap<String, Decimal> = BTreeMap::new();
    for r in &countries {
        *country_gul.entry(r.unit.clone()).or_default() += r.gul.value;
    }
    let dominant = country_gul
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(c, _)| c.clone());
    let zeta = dominant
        .as_deref()
        .map_or(state.config.analytics.zeta, |c| state.config.analytics.zeta_for(c));
    let millions = totals.gul.to_f64().unwrap_or(0.0) / 1e6;
    if millions <= 0.0 {
        return Err(ApiError::unprocessable("no positive loss to build a distribution from"));
    }
    let dist = LossDistribution::from_predicted(millions, zeta)?;
    let ladder = default_ladder();
    let probs = bucket_probabilities(&dist, &ladder);
    let buckets: Vec<Value> = ladder
        .iter()
        .zip(probs)
        .map(|(t, p)| json!({ "lower": t.lower, "upper": t.upper, "probability": p }))
        .collect();
    Ok(Json(json!({
        "event": id,
        "version": v,
        "predicted_millions": millions,
        "zeta": zeta,
        "buckets": buckets,
    })))
}

#[derive(Debug, Default, Deserialize)]
pub struct KmlQuery {
    layer: Option<String>,
    technique: Option<String>,
    level: Option<String>,
}

fn layer_value(r: &IndicatorRecord, layer: &str) -> f64 {
    match layer {
        "mmi" => r.mmi,
        "mdr" => r.mdr,
        "gul" => r.gul.to_f64().unwrap_or(f64::NAN),
        "nfl" => r.nfl.to_f64().unwrap_or(f64::NAN),
        _ => r.population,
    }
}

/// Builds the layer for one alert. Shared with the `emit-kml` command.
pub fn build_layer(
    state: &Engine,
    id: &str,
    v: u32,
    layer: &str,
    technique: Technique,
    level: GeoLevel,
) -> Result<ThematicLayer, ApiError> {
    if !LAYERS.contains(&layer) {
        return Err(ApiError::unprocessable(format!(
            "unknown layer `{layer}`; expected one of {}",
            LAYERS.join(", ")
        )));
    }
    if technique != Technique::Pushpin && level == GeoLevel::City {
        return Err(ApiError::unprocessable("cities can only be shown as push-pins"));
    }
    let records = state.db.query_indicators(id, v, level)?;
    let snap = state.db.snapshot();
    let units: Vec<LayerUnit> = records
        .iter()
        .map(|r| LayerUnit {
            id: r.unit.clone(),
            name: unit_name(state, level, &r.unit),
            value: layer_value(r, layer),
            point: snap.hierarchy.centre(&r.unit).map(|c| (c.latitude, c.longitude)),
            indicators: [
                ("MMI".to_string(), r.mmi),
                ("MDR".to_string(), r.mdr),
                ("GUL".to_string(), r.gul.to_f64().unwrap_or(f64::NAN)),
                ("NFL".to_string(), r.nfl.to_f64().unwrap_or(f64::NAN)),
                ("population".to_string(), r.population),
            ]
            .into_iter()
            .collect(),
        })
        .collect();
    let ramp = state.config.kml.ramp(layer, units.iter().map(|u| u.value))?;
    Ok(ThematicLayer {
        name: format!("{id} v{v} {layer} ({})", level.as_str()),
        indicator: layer.to_uppercase(),
        technique,
        units,
        ramp,
        prism_height: state.config.kml.prism_height,
    })
}

fn style_hash(layer: &ThematicLayer) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&layer.ramp).unwrap_or_default());
    h.update(layer.prism_height.to_le_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Path of a cached layer under the KML repository.
pub fn kml_cache_path(state: &Engine, id: &str, v: u32, layer: &ThematicLayer, name: &str, level: GeoLevel) -> PathBuf {
    state.config.kml_dir().join(id).join(v.to_string()).join(format!(
        "{name}-{}-{}-{}.kml",
        layer.technique.as_str(),
        level.as_str(),
        style_hash(layer)
    ))
}

/// Returns the KML text for a layer and whether it came from the cache.
pub fn kml_document(
    state: &Engine,
    id: &str,
    v: u32,
    layer_name: &str,
    technique: Technique,
    level: GeoLevel,
) -> Result<(String, bool, ThematicLayer), ApiError> {
    let layer = build_layer(state, id, v, layer_name, technique, level)?;
    let path = kml_cache_path(state, id, v, &layer, layer_name, level);
    if let Ok(text) = std::fs::read_to_string(&path) {
        return Ok((text, true, layer));
    }
    let geometry = state.reference.geometry.get(&level);
    let text = emit_layer(&layer, geometry)?;
    let dir = path.parent().expect("cache path has a parent");
    let write = || -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(text.as_bytes())?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    };
    write().map_err(|e| {
        ApiError::from(Error::Io {
            path: path.clone(),
            source: e,
        })
    })?;
    Ok((text, false, layer))
}

async fn kml(
    State(state): State<AppState>,
    Path((id, v)): Path<(String, u32)>,
    Query(q): Query<KmlQuery>,
) -> ApiResult<Response> {
    let technique: Technique = match &q.technique {
        None => Technique::Choropleth,
        Some(t) => t
            .parse()
            .map_err(|_| ApiError::unprocessable(format!("unknown technique `{t}`")))?,
    };
    let default_level = if technique == Technique::Pushpin {
        GeoLevel::City
    } else {
        GeoLevel::County
    };
    let level = LevelQuery {
        level: q.level.clone(),
        lob: None,
    }
    .level(default_level)?;
    let layer = q.layer.as_deref().unwrap_or("mmi");
    ensure_alert(&state, &id, v)?;
    let (text, hit, built) = kml_document(&state, &id, v, layer, technique, level)?;
    let (lo, hi) = built.ramp.domain();
    let stops: Vec<String> = built.ramp.stops().iter().map(ToString::to_string).collect();
    let headers = [
        (header::CONTENT_TYPE, "application/vnd.google-earth.kml+xml".to_string()),
        (header::HeaderName::from_static("x-legend-min"), lo.to_string()),
        (header::HeaderName::from_static("x-legend-max"), hi.to_string()),
        (header::HeaderName::from_static("x-legend-stops"), stops.join(",")),
        (
            header::HeaderName::from_static("x-kml-cache"),
            if hit { "hit" } else { "miss" }.to_string(),
        ),
    ];
    Ok((headers, text).into_response())
}

#[derive(Debug, Deserialize)]
pub struct StaticQuery {
    unit: String,
}

async fn static_data(State(state): State<AppState>, Query(q): Query<StaticQuery>) -> ApiResult<Json<Value>> {
    let snap = state.db.snapshot();
    if let Some(c) = snap.hierarchy.centre(&q.unit) {
        return Ok(Json(json!({
            "unit": c.id,
            "level": GeoLevel::City,
            "name": c.name,
            "population": c.population,
            "latitude": c.latitude,
            "longitude": c.longitude,
            "parents": c.parent_ids,
            "indicators": {},
        })));
    }
    let r = snap
        .hierarchy
        .region(&q.unit)
        .ok_or_else(|| Error::NotFound(format!("unit `{}`", q.unit)))?;
    Ok(Json(json!({
        "unit": r.id,
        "level": r.level,
        "name": r.name,
        "population": r.population,
        "population_source": r.population_source,
        "parent": r.parent_id,
        "geometry_ref": r.geometry_ref,
        "indicators": r.static_indicators,
    })))
}

async fn ingest_pager(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<Value>> {
    let text = std::str::from_utf8(&body).map_err(|e| ApiError {
        status: StatusCode::BAD_REQUEST,
        code: "parse_error",
        message: format!("body is not UTF-8: {e}"),
    })?;
    let engine = state.clone();
    let text = text.to_string();
    let summary = tokio::task::spawn_blocking(move || engine.ingest_xml(&text))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal_error",
            message: e.to_string(),
        })??;
    Ok(Json(json!(summary)))
}
