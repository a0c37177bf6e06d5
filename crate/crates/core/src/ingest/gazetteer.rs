use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GeoHierarchy, GeoLevel, PopulationCentre, MIN_CENTRE_POPULATION};

/// Admitted population centres.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gazetteer {
    pub centres: Vec<PopulationCentre>,
}

impl Gazetteer {
    pub fn hierarchy(&self) -> Result<GeoHierarchy> {
        GeoHierarchy::from_centres(self.centres.iter().cloned())
    }
}

/// Rows left out while loading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GazetteerReport {
    pub admitted: usize,
    pub zero_population: usize,
    pub below_threshold: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    id: String,
    name: String,
    lat: f64,
    lon: f64,
    population: u64,
    county_id: Option<String>,
    state_id: Option<String>,
    country_id: String,
}

/// Reads `id,name,lat,lon,population,county_id,state_id,country_id`.
///
/// Centres recorded with zero population are excluded and counted rather
/// than guessed; so are centres under the admission threshold.
pub fn load_gazetteer<R: Read>(reader: R) -> Result<(Gazetteer, GazetteerReport)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut report = GazetteerReport::default();
    let mut centres = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for row in rdr.deserialize() {
        let r: Row = row?;
        if !seen.insert(r.id.clone()) {
            return Err(Error::Validation(format!("duplicate gazetteer id `{}`", r.id)));
        }
        if !(-90.0..=90.0).contains(&r.lat) || !(-180.0..=180.0).contains(&r.lon) {
            return Err(Error::Validation(format!("centre `{}` has invalid coordinates", r.id)));
        }
        if r.country_id.is_empty() {
            return Err(Error::Referential(format!("centre `{}` has no country", r.id)));
        }
        if r.population == 0 {
            report.zero_population += 1;
            continue;
        }
        if r.population < MIN_CENTRE_POPULATION {
            report.below_threshold += 1;
            continue;
        }
        let mut parent_ids = BTreeMap::new();
        for (level, id) in [
            (GeoLevel::County, r.county_id),
            (GeoLevel::State, r.state_id),
            (GeoLevel::Country, Some(r.country_id)),
        ] {
            if let Some(id) = id.filter(|s| !s.is_empty()) {
                parent_ids.insert(level, id);
            }
        }
        centres.push(PopulationCentre {
            id: r.id,
            name: r.name,
            latitude: r.lat,
            longitude: r.lon,
            population: r.population,
            parent_ids,
        });
    }
    report.admitted = centres.len();
    if report.zero_population > 0 {
        tracing::warn!(
            count = report.zero_population,
            "gazetteer centres with zero population excluded"
        );
    }
    Ok((Gazetteer { centres }, report))
}

pub fn write_gazetteer<'a, W: Write>(writer: W, centres: impl IntoIterator<Item = &'a PopulationCentre>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for c in centres {
        w.serialize(Row {
            id: c.id.clone(),
            name: c.name.clone(),
            lat: c.latitude,
            lon: c.longitude,
            population: c.population,
            county_id: c.parent_ids.get(&GeoLevel::County).cloned(),
            state_id: c.parent_ids.get(&GeoLevel::State).cloned(),
            country_id: c.country().unwrap_or_default().to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io("gazetteer", e))?;
    Ok(())
}
