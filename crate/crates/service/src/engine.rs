//! Reference data, the store, and the ingest path shared by HTTP, CLI and the
//! drop-directory watcher.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;
use std::sync::Mutex;

use anyhow::Context;
use quakeloss_core::analytics::{load_economic_series, EconomicSeries};
use quakeloss_core::ingest::{ingest_exposure, load_gazetteer, load_geometry, parse_pager_event, PagerDocument};
use quakeloss_core::model::{GeoHierarchy, GeoLevel};
use quakeloss_core::pipeline::{estimate, Estimate, ReferenceData};
use quakeloss_core::store::{CommitToken, ElevDb};
use quakeloss_core::vulnerability::load_mdr_curves;
use quakeloss_core::{Error, Result};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::config::Config;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub event: String,
    pub version: u32,
    pub country_gul: Decimal,
    pub country_nfl: Decimal,
    pub unplaced: Vec<String>,
    pub dropped_small: usize,
    pub sequence: u64,
}

#[derive(Debug)]
pub struct Engine {
    pub config: Config,
    pub reference: ReferenceData,
    pub series: BTreeMap<String, EconomicSeries>,
    pub db: ElevDb,
    ingest_lock: Mutex<()>,
}

fn open(path: &Path) -> anyhow::Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

#[derive(Deserialize)]
struct StaticRow {
    region_id: String,
    name: String,
    value: f64,
}

/// Loads every input named in `config`.
pub fn load_reference(config: &Config) -> anyhow::Result<(ReferenceData, BTreeMap<String, EconomicSeries>)> {
    let i = &config.inputs;
    let (gazetteer, report) =
        load_gazetteer(open(&i.gazetteer)?).with_context(|| format!("loading gazetteer {}", i.gazetteer.display()))?;
    tracing::info!(
        admitted = report.admitted,
        zero_population = report.zero_population,
        below_threshold = report.below_threshold,
        "gazetteer loaded"
    );
    let mut hierarchy = gazetteer.hierarchy()?;
    if let Some(p) = &i.static_indicators {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(p)?);
        for row in rdr.deserialize() {
            let r: StaticRow = row.with_context(|| format!("reading {}", p.display()))?;
            apply_static(&mut hierarchy, &r.region_id, &r.name, r.value)?;
        }
    }
    let curves = load_mdr_curves(open(&i.curves)?).with_context(|| format!("loading {}", i.curves.display()))?;
    let exposures = match &i.exposure {
        Some(p) => ingest_exposure(open(p)?, &hierarchy, config.reference_year)
            .with_context(|| format!("loading {}", p.display()))?,
        None => Vec::new(),
    };
    let mut geometry = BTreeMap::new();
    for (key, p) in &i.geometry {
        let level: GeoLevel = key.parse()?;
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        geometry.insert(
            level,
            load_geometry(&text, level).with_context(|| format!("loading {}", p.display()))?,
        );
    }
    let series = match &i.economic_series {
        Some(p) => load_economic_series(open(p)?).with_context(|| format!("loading {}", p.display()))?,
        None => BTreeMap::new(),
    };
    Ok((
        ReferenceData {
            hierarchy,
            geometry,
            curves,
            exposures,
            reference_year: config.reference_year,
        },
        series,
    ))
}

fn apply_static(h: &mut GeoHierarchy, region_id: &str, name: &str, value: f64) -> Result<()> {
    if name == "population" {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::Validation(format!("population {value} for `{region_id}`")));
        }
        h.set_census_population(region_id, value.round() as u64)?;
    }
    h.region_mut(region_id)
        .ok_or_else(|| Error::Referential(format!("static indicator for unknown region `{region_id}`")))?
        .static_indicators
        .insert(name.to_string(), value);
    Ok(())
}

impl Engine {
    /// Loads the configured inputs and opens the store under `data_dir`.
    pub fn open(config: Config) -> anyhow::Result<Engine> {
        let db = ElevDb::open(config.store_path())?;
        Self::with_store(config, db)
    }

    /// Loads the configured inputs into `db`. Centres added to the store by
    /// earlier alerts are kept so stored results stay resolvable.
    pub fn with_store(config: Config, db: ElevDb) -> anyhow::Result<Engine> {
        let (reference, series) = load_reference(&config)?;
        let mut hierarchy = reference.hierarchy.clone();
        let snap = db.snapshot();
        for c in snap.hierarchy.centres() {
            if hierarchy.centre(&c.id).is_none() {
                if let Err(e) = hierarchy.insert_centre(c.clone()) {
                    tracing::warn!(centre = %c.id, error = %e, "stored centre conflicts with gazetteer");
                }
            }
        }
        db.put_reference(hierarchy, reference.curves.clone(), reference.exposures.clone())?;
        Ok(Engine {
            config,
            reference,
            series,
            db,
            ingest_lock: Mutex::new(()),
        })
    }

    /// Runs estimation without storing anything.
    pub fn estimate_document(&self, xml: &str) -> Result<(PagerDocument, Estimate)> {
        let doc = parse_pager_event(xml)?;
        let est = estimate(&doc, &self.reference)?;
        Ok((doc, est))
    }

    pub fn ingest_xml(&self, xml: &str) -> Result<IngestSummary> {
        let doc = parse_pager_event(xml)?;
        self.ingest_document(&doc)
    }

    /// Estimates and stores one alert; an alert already in the store is
    /// reported as [`Error::Duplicate`].
    pub fn ingest_document(&self, doc: &PagerDocument) -> Result<IngestSummary> {
        let _guard = self.ingest_lock.lock().expect("ingest lock poisoned");
        let (event, version) = (doc.header.event_id.clone(), doc.alert.version);
        if self.db.has_alert(&event, version) {
            return Err(Error::Duplicate { event, version });
        }
        let est = estimate(doc, &self.reference)?;
        let CommitToken { sequence, .. } = self.db.put_alert_results(&est)?;
        tracing::info!(%event, version, gul = %est.totals.gul, nfl = %est.totals.nfl, "alert stored");
        Ok(IngestSummary {
            event,
            version,
            country_gul: est.totals.gul,
            country_nfl: est.totals.nfl,
            unplaced: est.unplaced,
            dropped_small: doc.dropped_small,
            sequence,
        })
    }
}
