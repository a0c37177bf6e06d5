//! Embedded store for reference tables and per-alert results.
//!
//! State lives in memory as an immutable snapshot behind a lock; a write
//! clones the snapshot, applies the change, persists it to a single JSON file
//! through temp-file-and-rename, and only then publishes it. Readers never
//! observe a half-applied write and a crash leaves the previous file intact.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::write_gazetteer;
use crate::loss::{ExposureRecord, GulNfl, LossRecord};
use crate::model::{
    AlertVersion, EventHeader, GeoHierarchy, GeoLevel, LineOfBusiness, Mmi, MonetaryAmount, PopulationSource,
};
use crate::pipeline::{Estimate, IndicatorRow};
use crate::vulnerability::{curve_rows, CurveRow, MdrCurve};

/// Hazard indicators and all-line losses of one unit for one alert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorRecord {
    pub event_id: String,
    pub version: u32,
    pub level: GeoLevel,
    pub unit: String,
    pub mmi: f64,
    pub mdr: f64,
    pub population: f64,
    pub gul: Decimal,
    pub nfl: Decimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredAlert {
    pub alert: AlertVersion,
    pub totals: GulNfl,
    pub unplaced: Vec<String>,
    /// Table t4.
    pub indicators: Vec<IndicatorRecord>,
    /// Table t7.
    pub losses: Vec<LossRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEvent {
    pub header: EventHeader,
    pub alerts: BTreeMap<u32, StoredAlert>,
}

/// Summary row for alert listings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertSummary {
    pub version: u32,
    pub received_time: DateTime<Utc>,
    pub magnitude: f64,
    pub epicenter: (f64, f64),
    pub totals: GulNfl,
}

/// Every table. t1 and t2 share rows: each exposure record carries both its
/// ground-up and net-of-facultative amount.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DbState {
    pub exposures: Vec<ExposureRecord>,
    pub events: BTreeMap<String, StoredEvent>,
    pub hierarchy: GeoHierarchy,
    pub curves: BTreeMap<String, MdrCurve>,
    sequence: u64,
}

impl DbState {
    fn alert(&self, event_id: &str, version: u32) -> Result<&StoredAlert> {
        self.events
            .get(event_id)
            .ok_or_else(|| Error::NotFound(format!("event `{event_id}`")))?
            .alerts
            .get(&version)
            .ok_or_else(|| Error::NotFound(format!("event `{event_id}` version {version}")))
    }

    fn check_exposures(&self) -> Result<()> {
        for e in &self.exposures {
            if !self.hierarchy.contains_unit(e.level, &e.region_id) {
                return Err(Error::Referential(format!(
                    "exposure references unknown {} `{}`",
                    e.level, e.region_id
                )));
            }
        }
        Ok(())
    }
}

/// Receipt of a committed alert write.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitToken {
    pub event_id: String,
    pub version: u32,
    pub sequence: u64,
}

#[derive(Debug)]
pub struct ElevDb {
    path: Option<PathBuf>,
    state: RwLock<Arc<DbState>>,
    writer: Mutex<()>,
    fail_next_commit: AtomicBool,
}

impl ElevDb {
    pub fn in_memory() -> Self {
        ElevDb {
            path: None,
            state: RwLock::new(Arc::default()),
            writer: Mutex::new(()),
            fail_next_commit: AtomicBool::new(false),
        }
    }

    /// Opens the store file at `path`, creating an empty store if it does
    /// not exist yet.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let state = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => DbState::default(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        Ok(ElevDb {
            path: Some(path),
            state: RwLock::new(Arc::new(state)),
            writer: Mutex::new(()),
            fail_next_commit: AtomicBool::new(false),
        })
    }

    /// The committed state at this instant.
    pub fn snapshot(&self) -> Arc<DbState> {
        self.state.read().expect("store lock poisoned").clone()
    }

    /// Makes the next commit fail after writing a partial temp file and
    /// before it becomes visible. Test hook for crash consistency.
    #[doc(hidden)]
    pub fn inject_commit_failure(&self) {
        self.fail_next_commit.store(true, Ordering::SeqCst);
    }

    fn commit<T>(&self, change: impl FnOnce(&mut DbState) -> Result<T>) -> Result<T> {
        let _guard = self.writer.lock().expect("store writer poisoned");
        let mut next = (*self.snapshot()).clone();
        let out = change(&mut next)?;
        next.sequence += 1;
        if let Some(path) = &self.path {
            self.persist(path, &next)?;
        } else if self.fail_next_commit.swap(false, Ordering::SeqCst) {
            return Err(Error::Validation("injected commit failure".into()));
        }
        *self.state.write().expect("store lock poisoned") = Arc::new(next);
        Ok(out)
    }

    fn persist(&self, path: &Path, state: &DbState) -> Result<()> {
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bytes = serde_json::to_vec(state)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        if self.fail_next_commit.swap(false, Ordering::SeqCst) {
            let _ = tmp.write_all(&bytes[..bytes.len() / 2]);
            return Err(Error::Validation("injected commit failure".into()));
        }
        tmp.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    /// Replaces the reference tables (t1, t2, t5, t6).
    pub fn put_reference(
        &self,
        hierarchy: GeoHierarchy,
        curves: BTreeMap<String, MdrCurve>,
        exposures: Vec<ExposureRecord>,
    ) -> Result<()> {
        self.commit(|s| {
            s.hierarchy = hierarchy;
            s.curves = curves;
            s.exposures = exposures;
            s.check_exposures()
        })
    }

    /// Attaches named static indicators (census figures and the like) to a
    /// region; a `population` indicator also replaces its computed population.
    pub fn put_static_indicators(&self, region_id: &str, values: BTreeMap<String, f64>) -> Result<()> {
        self.commit(|s| {
            let region = s
                .hierarchy
                .region_mut(region_id)
                .ok_or_else(|| Error::Referential(format!("unknown region `{region_id}`")))?;
            region.static_indicators.extend(values.clone());
            if let Some(p) = values.get("population") {
                if *p < 0.0 || !p.is_finite() {
                    return Err(Error::Validation(format!("population {p} for `{region_id}`")));
                }
                s.hierarchy.set_census_population(region_id, p.round() as u64)?;
            }
            Ok(())
        })
    }

    pub fn set_geometry_ref(&self, region_id: &str, reference: &str) -> Result<()> {
        self.commit(|s| {
            s.hierarchy
                .region_mut(region_id)
                .ok_or_else(|| Error::Referential(format!("unknown region `{region_id}`")))?
                .geometry_ref = Some(reference.to_string());
            Ok(())
        })
    }

    pub fn has_alert(&self, event_id: &str, version: u32) -> bool {
        self.snapshot().alert(event_id, version).is_ok()
    }

    /// Writes the results of one alert (t3, t4, t7, plus any centres the
    /// alert added to t5). All or nothing; a second put of the same alert
    /// replaces the first.
    pub fn put_alert_results(&self, estimate: &Estimate) -> Result<CommitToken> {
        let event_id = estimate.header.event_id.clone();
        let version = estimate.alert.version;
        self.commit(|s| {
            for c in &estimate.new_centres {
                if s.hierarchy.centre(&c.id).is_none() {
                    s.hierarchy.insert_centre(c.clone())?;
                }
            }
            let mut unit_losses: BTreeMap<(GeoLevel, &str), GulNfl> = BTreeMap::new();
            for r in &estimate.losses {
                if r.event_id != event_id || r.version != version {
                    return Err(Error::Validation(format!(
                        "loss row for {} v{} in results for {event_id} v{version}",
                        r.event_id, r.version
                    )));
                }
                if !s.hierarchy.contains_unit(r.level, &r.unit) {
                    return Err(Error::Referential(format!("unknown {} `{}`", r.level, r.unit)));
                }
                *unit_losses.entry((r.level, &r.unit)).or_default() += GulNfl::new(r.gul.value, r.nfl.value);
            }
            let mut indicators = Vec::with_capacity(estimate.indicators.len());
            for IndicatorRow {
                level,
                unit,
                mmi,
                mdr,
                population,
            } in &estimate.indicators
            {
                if !s.hierarchy.contains_unit(*level, unit) {
                    return Err(Error::Referential(format!("unknown {level} `{unit}`")));
                }
                let l = unit_losses.get(&(*level, unit.as_str())).copied().unwrap_or_default();
                indicators.push(IndicatorRecord {
                    event_id: event_id.clone(),
                    version,
                    level: *level,
                    unit: unit.clone(),
                    mmi: *mmi,
                    mdr: *mdr,
                    population: *population,
                    gul: l.gul,
                    nfl: l.nfl,
                });
            }
            let mut losses = estimate.losses.clone();
            losses.sort_by(|a, b| (a.level, &a.unit, a.line_of_business).cmp(&(b.level, &b.unit, b.line_of_business)));

            let event = s.events.entry(event_id.clone()).or_insert_with(|| StoredEvent {
                header: estimate.header.clone(),
                alerts: BTreeMap::new(),
            });
            event.alerts.insert(
                version,
                StoredAlert {
                    alert: estimate.alert.clone(),
                    totals: estimate.totals,
                    unplaced: estimate.unplaced.clone(),
                    indicators,
                    losses,
                },
            );
            Ok(CommitToken {
                event_id: event_id.clone(),
                version,
                sequence: s.sequence + 1,
            })
        })
    }

    /// Losses of one alert at `level`, ordered by unit id then line of
    /// business.
    pub fn query_losses(
        &self,
        event_id: &str,
        version: u32,
        level: GeoLevel,
        lob: Option<LineOfBusiness>,
    ) -> Result<Vec<LossRecord>> {
        let snap = self.snapshot();
        Ok(snap
            .alert(event_id, version)?
            .losses
            .iter()
            .filter(|r| r.level == level && lob.is_none_or(|l| l == r.line_of_business))
            .cloned()
            .collect())
    }

    pub fn query_indicators(&self, event_id: &str, version: u32, level: GeoLevel) -> Result<Vec<IndicatorRecord>> {
        let snap = self.snapshot();
        Ok(snap
            .alert(event_id, version)?
            .indicators
            .iter()
            .filter(|r| r.level == level)
            .cloned()
            .collect())
    }

    pub fn alert_totals(&self, event_id: &str, version: u32) -> Result<GulNfl> {
        Ok(self.snapshot().alert(event_id, version)?.totals)
    }

    /// Event headers ordered by origin time, then id.
    pub fn list_events(&self) -> Vec<EventHeader> {
        let mut out: Vec<_> = self.snapshot().events.values().map(|e| e.header.clone()).collect();
        out.sort_by(|a, b| (a.origin_time, &a.event_id).cmp(&(b.origin_time, &b.event_id)));
        out
    }

    /// Alerts of an event in ascending version order.
    pub fn list_alerts(&self, event_id: &str) -> Result<Vec<AlertSummary>> {
        let snap = self.snapshot();
        let event = snap
            .events
            .get(event_id)
            .ok_or_else(|| Error::NotFound(format!("event `{event_id}`")))?;
        Ok(event
            .alerts
            .iter()
            .map(|(v, a)| AlertSummary {
                version: *v,
                received_time: a.alert.received_time,
                magnitude: a.alert.magnitude,
                epicenter: a.alert.epicenter,
                totals: a.totals,
            })
            .collect())
    }

    /// Writes every table as CSV into `dir`.
    pub fn export_csv(&self, dir: &Path) -> Result<()> {
        let s = self.snapshot();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let writer = |name: &str| -> Result<csv::Writer<fs::File>> {
            let p = dir.join(name);
            Ok(csv::Writer::from_writer(
                fs::File::create(&p).map_err(|e| Error::io(&p, e))?,
            ))
        };
        let finish = |mut w: csv::Writer<fs::File>, name: &str| -> Result<()> {
            w.flush().map_err(|e| Error::io(dir.join(name), e))
        };

        for (name, pick) in [
            (
                files::T1,
                (|e: &ExposureRecord| e.gul_exposure) as fn(&ExposureRecord) -> MonetaryAmount,
            ),
            (files::T2, |e: &ExposureRecord| e.nfl_exposure),
        ] {
            let mut w = writer(name)?;
            for e in &s.exposures {
                let m = pick(e);
                w.serialize(ExposureRow {
                    region_id: e.region_id.clone(),
                    level: e.level,
                    lob: e.line_of_business,
                    amount: m.value,
                    reference_year: m.reference_year,
                })?;
            }
            finish(w, name)?;
        }

        let mut events = writer(files::T3_EVENTS)?;
        let mut alerts = writer(files::T3_ALERTS)?;
        let mut cities = writer(files::T3_CITIES)?;
        let mut t4 = writer(files::T4)?;
        let mut t7 = writer(files::T7)?;
        for (id, e) in &s.events {
            events.serialize(EventRow {
                event_id: id.clone(),
                region_name: e.header.region_name.clone(),
                origin_time: e.header.origin_time,
            })?;
            for (v, a) in &e.alerts {
                alerts.serialize(AlertRow {
                    event_id: id.clone(),
                    version: *v,
                    received_time: a.alert.received_time,
                    magnitude: a.alert.magnitude,
                    lat: a.alert.epicenter.0,
                    lon: a.alert.epicenter.1,
                    gul: a.totals.gul,
                    nfl: a.totals.nfl,
                    unplaced: a.unplaced.join(";"),
                })?;
                for (city, mmi) in &a.alert.city_mmi {
                    cities.serialize(AlertCityRow {
                        event_id: id.clone(),
                        version: *v,
                        city_id: city.clone(),
                        mmi: mmi.value(),
                    })?;
                }
                for r in &a.indicators {
                    t4.serialize(r)?;
                }
                for r in &a.losses {
                    t7.serialize(LossRow::from(r))?;
                }
            }
        }
        finish(events, files::T3_EVENTS)?;
        finish(alerts, files::T3_ALERTS)?;
        finish(cities, files::T3_CITIES)?;
        finish(t4, files::T4)?;
        finish(t7, files::T7)?;

        let p = dir.join(files::T5_CENTRES);
        write_gazetteer(
            fs::File::create(&p).map_err(|e| Error::io(&p, e))?,
            s.hierarchy.centres(),
        )?;
        let mut regions = writer(files::T5_REGIONS)?;
        let mut statics = writer(files::T5_STATIC)?;
        for r in s.hierarchy.regions() {
            regions.serialize(RegionRow {
                id: r.id.clone(),
                level: r.level,
                name: r.name.clone(),
                population: r.population,
                population_source: r.population_source,
                parent_id: r.parent_id.clone(),
                geometry_ref: r.geometry_ref.clone(),
            })?;
            for (name, value) in &r.static_indicators {
                statics.serialize(StaticRow {
                    region_id: r.id.clone(),
                    name: name.clone(),
                    value: *value,
                })?;
            }
        }
        finish(regions, files::T5_REGIONS)?;
        finish(statics, files::T5_STATIC)?;

        let mut t6 = writer(files::T6)?;
        for row in curve_rows(&s.curves) {
            t6.serialize(row)?;
        }
        finish(t6, files::T6)
    }

    /// Replaces the whole store with the tables in `dir` (as written by
    /// [`ElevDb::export_csv`]).
    pub fn import_csv(&self, dir: &Path) -> Result<()> {
        let state = read_tables(dir)?;
        self.commit(move |s| {
            let sequence = s.sequence;
            *s = state;
            s.sequence = sequence;
            Ok(())
        })
    }
}

/// File names of the CSV tables.
pub mod files {
    pub const T1: &str = "t1_gul_exposure.csv";
    pub const T2: &str = "t2_nfl_exposure.csv";
    pub const T3_EVENTS: &str = "t3_events.csv";
    pub const T3_ALERTS: &str = "t3_alerts.csv";
    pub const T3_CITIES: &str = "t3_alert_cities.csv";
    pub const T4: &str = "t4_indicators.csv";
    pub const T5_CENTRES: &str = "t5_centres.csv";
    pub const T5_REGIONS: &str = "t5_regions.csv";
    pub const T5_STATIC: &str = "t5_static_indicators.csv";
    pub const T6: &str = "t6_mdr_curves.csv";
    pub const T7: &str = "t7_losses.csv";
}

#[derive(Serialize, Deserialize)]
struct ExposureRow {
    region_id: String,
    level: GeoLevel,
    lob: LineOfBusiness,
    amount: Decimal,
    reference_year: i32,
}

#[derive(Serialize, Deserialize)]
struct EventRow {
    event_id: String,
    region_name: String,
    origin_time: DateTime<Utc>,
}

#[derive(Serialize, Deserialize)]
struct AlertRow {
    event_id: String,
    version: u32,
    received_time: DateTime<Utc>,
    magnitude: f64,
    lat: f64,
    lon: f64,
    gul: Decimal,
    nfl: Decimal,
    unplaced: String,
}

#[derive(Serialize, Deserialize)]
struct AlertCityRow {
    event_id: String,
    version: u32,
    city_id: String,
    mmi: f64,
}

#[derive(Serialize, Deserialize)]
struct LossRow {
    event_id: String,
    version: u32,
    level: GeoLevel,
    unit: String,
    lob: LineOfBusiness,
    gul: Decimal,
    nfl: Decimal,
    reference_year: i32,
}

impl From<&LossRecord> for LossRow {
    fn from(r: &LossRecord) -> Self {
        LossRow {
            event_id: r.event_id.clone(),
            version: r.version,
            level: r.level,
            unit: r.unit.clone(),
            lob: r.line_of_business,
            gul: r.gul.value,
            nfl: r.nfl.value,
            reference_year: r.gul.reference_year,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RegionRow {
    id: String,
    level: GeoLevel,
    name: String,
    population: u64,
    population_source: PopulationSource,
    parent_id: Option<String>,
    geometry_ref: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct StaticRow {
    region_id: String,
    name: String,
    value: f64,
}

fn read_rows<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>> {
    let p = dir.join(name);
    let f = fs::File::open(&p).map_err(|e| Error::io(&p, e))?;
    csv::Reader::from_reader(f)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

fn read_tables(dir: &Path) -> Result<DbState> {
    let p = dir.join(files::T5_CENTRES);
    let (gazetteer, _) = crate::ingest::load_gazetteer(fs::File::open(&p).map_err(|e| Error::io(&p, e))?)?;
    let mut hierarchy = gazetteer.hierarchy()?;
    for r in read_rows::<RegionRow>(dir, files::T5_REGIONS)? {
        if hierarchy.region(&r.id).is_none_or(|x| x.level != r.level) {
            return Err(Error::Referential(format!("region `{}` has no member centres", r.id)));
        }
        if r.population_source == PopulationSource::Census {
            hierarchy.set_census_population(&r.id, r.population)?;
        }
        let region = hierarchy.region_mut(&r.id).expect("checked above");
        region.name = r.name;
        region.geometry_ref = r.geometry_ref;
    }
    for r in read_rows::<StaticRow>(dir, files::T5_STATIC)? {
        hierarchy
            .region_mut(&r.region_id)
            .ok_or_else(|| Error::Referential(format!("unknown region `{}`", r.region_id)))?
            .static_indicators
            .insert(r.name, r.value);
    }

    let mut tables: BTreeMap<String, BTreeMap<u8, f64>> = BTreeMap::new();
    for r in read_rows::<CurveRow>(dir, files::T6)? {
        tables.entry(r.country).or_default().insert(r.mmi, r.mdr);
    }
    let curves = tables
        .into_iter()
        .map(|(c, e)| Ok((c.clone(), MdrCurve::new(c, e)?)))
        .collect::<Result<_>>()?;

    type Key = (String, GeoLevel, LineOfBusiness);
    let mut nfl: BTreeMap<Key, ExposureRow> = BTreeMap::new();
    for r in read_rows::<ExposureRow>(dir, files::T2)? {
        nfl.insert((r.region_id.clone(), r.level, r.lob), r);
    }
    let mut exposures = Vec::new();
    for g in read_rows::<ExposureRow>(dir, files::T1)? {
        let n = nfl
            .remove(&(g.region_id.clone(), g.level, g.lob))
            .ok_or_else(|| Error::Referential(format!("no NFL row for `{}` {}", g.region_id, g.lob)))?;
        exposures.push(ExposureRecord::new(
            &g.region_id,
            g.level,
            g.lob,
            MonetaryAmount::new(g.amount, g.reference_year)?,
            MonetaryAmount::new(n.amount, n.reference_year)?,
        )?);
    }
    if let Some((k, _)) = nfl.into_iter().next() {
        return Err(Error::Referential(format!("NFL row for `{}` without GUL row", k.0)));
    }

    let mut events: BTreeMap<String, StoredEvent> = BTreeMap::new();
    for r in read_rows::<EventRow>(dir, files::T3_EVENTS)? {
        events.insert(
            r.event_id.clone(),
            StoredEvent {
                header: EventHeader {
                    event_id: r.event_id,
                    region_name: r.region_name,
                    origin_time: r.origin_time,
                },
                alerts: BTreeMap::new(),
            },
        );
    }
    for r in read_rows::<AlertRow>(dir, files::T3_ALERTS)? {
        let event = events
            .get_mut(&r.event_id)
            .ok_or_else(|| Error::Referential(format!("alert for unknown event `{}`", r.event_id)))?;
        event.alerts.insert(
            r.version,
            StoredAlert {
                alert: AlertVersion {
                    version: r.version,
                    received_time: r.received_time,
                    magnitude: r.magnitude,
                    epicenter: (r.lat, r.lon),
                    city_mmi: BTreeMap::new(),
                },
                totals: GulNfl::new(r.gul, r.nfl),
                unplaced: r
                    .unplaced
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect(),
                indicators: Vec::new(),
                losses: Vec::new(),
            },
        );
    }
    fn alert_mut<'a>(events: &'a mut BTreeMap<String, StoredEvent>, e: &str, v: u32) -> Result<&'a mut StoredAlert> {
        events
            .get_mut(e)
            .and_then(|x| x.alerts.get_mut(&v))
            .ok_or_else(|| Error::Referential(format!("rows for unknown alert {e} v{v}")))
    }
    for r in read_rows::<AlertCityRow>(dir, files::T3_CITIES)? {
        alert_mut(&mut events, &r.event_id, r.version)?
            .alert
            .city_mmi
            .insert(r.city_id, Mmi::new(r.mmi)?);
    }
    for r in read_rows::<IndicatorRecord>(dir, files::T4)? {
        if !hierarchy.contains_unit(r.level, &r.unit) {
            return Err(Error::Referential(format!("indicator for unknown unit `{}`", r.unit)));
        }
        alert_mut(&mut events, &r.event_id.clone(), r.version)?
            .indicators
            .push(r);
    }
    for r in read_rows::<LossRow>(dir, files::T7)? {
        if !hierarchy.contains_unit(r.level, &r.unit) {
            return Err(Error::Referential(format!("loss for unknown unit `{}`", r.unit)));
        }
        alert_mut(&mut events, &r.event_id, r.version)?.losses.push(LossRecord {
            event_id: r.event_id.clone(),
            version: r.version,
            level: r.level,
            unit: r.unit,
            line_of_business: r.lob,
            gul: MonetaryAmount::new(r.gul, r.reference_year)?,
            nfl: MonetaryAmount::new(r.nfl, r.reference_year)?,
        });
    }
    for e in events.values_mut() {
        for a in e.alerts.values_mut() {
            a.indicators.sort_by(|x, y| (x.level, &x.unit).cmp(&(y.level, &y.unit)));
            a.losses
                .sort_by(|x, y| (x.level, &x.unit, x.line_of_business).cmp(&(y.level, &y.unit, y.line_of_business)));
        }
    }

    let state = DbState {
        exposures,
        events,
        hierarchy,
        curves,
        sequence: 0,
    };
    state.check_exposures()?;
    Ok(state)
}
