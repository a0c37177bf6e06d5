//! One alert in, losses out: placement, hazard, vulnerability, loss.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazard::{hazard_field, HazardField};
use crate::ingest::{locate_in_region, AlertCity, GeometryIndex, PagerDocument};
use crate::loss::{aggregate_losses, compute_city_loss, disaggregate_exposure, ExposureRecord, GulNfl, LossRecord};
use crate::model::{
    AlertVersion, EventHeader, GeoHierarchy, GeoLevel, LineOfBusiness, MonetaryAmount, PopulationCentre,
};
use crate::vulnerability::MdrCurve;

/// Everything estimation needs besides the alert itself.
#[derive(Debug, Clone, Default)]
pub struct ReferenceData {
    pub hierarchy: GeoHierarchy,
    pub geometry: BTreeMap<GeoLevel, GeometryIndex>,
    pub curves: BTreeMap<String, MdrCurve>,
    pub exposures: Vec<ExposureRecord>,
    pub reference_year: i32,
}

/// Hazard indicators for one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorRow {
    pub level: GeoLevel,
    pub unit: String,
    pub mmi: f64,
    pub mdr: f64,
    pub population: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub header: EventHeader,
    pub alert: AlertVersion,
    pub hazard: HazardField,
    pub indicators: Vec<IndicatorRow>,
    pub losses: Vec<LossRecord>,
    pub totals: GulNfl,
    /// Alert cities absent from the gazetteer, placed through geometry.
    pub new_centres: Vec<PopulationCentre>,
    /// Alert cities that could not be tied to a country.
    pub unplaced: Vec<String>,
}

/// Region chain for an alert city: from the gazetteer when known, else by
/// locating its coordinates in the region polygons.
fn place_city(city: &AlertCity, reference: &ReferenceData) -> Option<PopulationCentre> {
    let parent_ids = match reference.hierarchy.centre(&city.id) {
        Some(known) => known.parent_ids.clone(),
        None => {
            let mut parents = BTreeMap::new();
            for level in GeoLevel::REGIONS {
                if parents.contains_key(&level) {
                    continue;
                }
                let Some(index) = reference.geometry.get(&level) else {
                    continue;
                };
                let Some(id) = locate_in_region((city.latitude, city.longitude), index) else {
                    continue;
                };
                // A known region fixes the rest of the chain.
                let mut cursor = reference.hierarchy.region(&id);
                parents.insert(level, id);
                while let Some(region) = cursor {
                    let Some(parent) = region.parent_id.as_deref().and_then(|p| reference.hierarchy.region(p)) else {
                        break;
                    };
                    parents.insert(parent.level, parent.id.clone());
                    cursor = Some(parent);
                }
            }
            parents
        }
    };
    parent_ids.contains_key(&GeoLevel::Country).then(|| PopulationCentre {
        id: city.id.clone(),
        name: city.name.clone(),
        latitude: city.latitude,
        longitude: city.longitude,
        population: city.population,
        parent_ids,
    })
}

fn country_of<'a>(hierarchy: &'a GeoHierarchy, level: GeoLevel, unit: &'a str) -> Option<&'a str> {
    match level {
        GeoLevel::City => hierarchy.centre(unit).and_then(|c| c.country()),
        GeoLevel::Country => Some(unit),
        _ => {
            let mut region = hierarchy.region(unit)?;
            while region.level != GeoLevel::Country {
                region = hierarchy.region(region.parent_id.as_deref()?)?;
            }
            Some(region.id.as_str())
        }
    }
}

/// Exposure of every centre in `hierarchy`, per line of business.
/// City-level records are used as they are; region records are split by
/// population.
pub fn city_exposure(
    hierarchy: &GeoHierarchy,
    exposures: &[ExposureRecord],
) -> Result<BTreeMap<LineOfBusiness, BTreeMap<String, GulNfl>>> {
    let mut members: BTreeMap<(GeoLevel, &str), Vec<&PopulationCentre>> = BTreeMap::new();
    for c in hierarchy.centres() {
        for (level, region) in &c.parent_ids {
            members.entry((*level, region.as_str())).or_default().push(c);
        }
    }
    let mut out: BTreeMap<LineOfBusiness, BTreeMap<String, GulNfl>> = BTreeMap::new();
    for record in exposures {
        let per_lob = out.entry(record.line_of_business).or_default();
        if record.level == GeoLevel::City {
            if hierarchy.centre(&record.region_id).is_none() {
                return Err(Error::Referential(format!(
                    "exposure for unknown centre `{}`",
                    record.region_id
                )));
            }
            *per_lob.entry(record.region_id.clone()).or_default() += record.amounts();
            continue;
        }
        let centres = members
            .get(&(record.level, record.region_id.as_str()))
            .ok_or_else(|| Error::DegenerateRegion(record.region_id.clone()))?;
        for (id, share) in disaggregate_exposure(record, centres)? {
            *per_lob.entry(id).or_default() += share;
        }
    }
    Ok(out)
}

/// Exposure rolled up to `level`, per unit and line of business.
pub fn exposure_by_level(
    hierarchy: &GeoHierarchy,
    exposures: &[ExposureRecord],
    level: GeoLevel,
) -> Result<BTreeMap<String, BTreeMap<LineOfBusiness, GulNfl>>> {
    let mut out: BTreeMap<String, BTreeMap<LineOfBusiness, GulNfl>> = BTreeMap::new();
    for (lob, cities) in city_exposure(hierarchy, exposures)? {
        for ((l, unit), amount) in aggregate_losses(&cities, hierarchy)? {
            if l == level {
                *out.entry(unit).or_default().entry(lob).or_default() += amount;
            }
        }
    }
    Ok(out)
}

/// Runs hazard, vulnerability and loss for one parsed alert.
pub fn estimate(doc: &PagerDocument, reference: &ReferenceData) -> Result<Estimate> {
    let mut hierarchy = reference.hierarchy.clone();
    let mut placed = Vec::with_capacity(doc.cities.len());
    let mut new_centres = Vec::new();
    let mut unplaced = Vec::new();
    for city in &doc.cities {
        match place_city(city, reference) {
            Some(centre) => {
                if hierarchy.centre(&centre.id).is_none() {
                    match hierarchy.insert_centre(centre.clone()) {
                        Ok(()) => new_centres.push(centre.clone()),
                        Err(e) => {
                            tracing::warn!(city = %city.id, error = %e, "city left unplaced");
                            unplaced.push(city.id.clone());
                            continue;
                        }
                    }
                }
                placed.push((centre, city.mmi));
            }
            None => unplaced.push(city.id.clone()),
        }
    }
    if !unplaced.is_empty() {
        tracing::warn!(event = %doc.header.event_id, count = unplaced.len(), "alert cities without a country");
    }

    let refs: Vec<_> = placed.iter().map(|(c, m)| (c, *m)).collect();
    let hazard = hazard_field(&doc.header.event_id, doc.alert.version, &refs)?;

    let mut indicators = Vec::new();
    let mut city_mdr = BTreeMap::new();
    for (level, units) in &hazard.values {
        for (unit, mmi) in units {
            let country = country_of(&hierarchy, *level, unit)
                .ok_or_else(|| Error::Referential(format!("{level} `{unit}` has no country")))?;
            let curve = reference
                .curves
                .get(country)
                .ok_or_else(|| Error::MissingCurve(country.to_string()))?;
            let mdr = curve.mdr(crate::model::Mmi::new(*mmi)?);
            if *level == GeoLevel::City {
                city_mdr.insert(unit.clone(), mdr);
            }
            indicators.push(IndicatorRow {
                level: *level,
                unit: unit.clone(),
                mmi: *mmi,
                mdr,
                population: hazard.populations[level][unit],
            });
        }
    }

    // Exposure is spread over gazetteer centres only, so cities placed from
    // the alert carry no exposure and replays stay stable.
    let exposure = city_exposure(&reference.hierarchy, &reference.exposures)?;
    let year = reference.reference_year;
    let mut losses = Vec::new();
    let mut totals = GulNfl::default();
    for (lob, cities) in &exposure {
        let mut city_losses = BTreeMap::new();
        for (city, mdr) in &city_mdr {
            if let Some(e) = cities.get(city) {
                city_losses.insert(city.clone(), compute_city_loss(*mdr, *e)?);
            }
        }
        for ((level, unit), l) in aggregate_losses(&city_losses, &hierarchy)? {
            if level == GeoLevel::Country {
                totals += l;
            }
            losses.push(LossRecord {
                event_id: doc.header.event_id.clone(),
                version: doc.alert.version,
                level,
                unit,
                line_of_business: *lob,
                gul: MonetaryAmount::new(l.gul, year)?,
                nfl: MonetaryAmount::new(l.nfl, year)?,
            });
        }
    }
    Ok(Estimate {
        header: doc.header.clone(),
        alert: doc.alert.clone(),
        hazard,
        indicators,
        losses,
        totals,
        new_centres,
        unplaced,
    })
}
