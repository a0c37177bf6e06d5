//! Region-level intensity from city intensities, weighted by population.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GeoLevel, Mmi, PopulationCentre};

/// Weighted-mean intensity of each group of members.
///
/// `mmi` and `populations` are keyed by member id, `grouping` maps each
/// member to the region it belongs to. The result for a region always lies
/// within the range of its members' intensities.
pub fn aggregate_mmi(
    mmi: &BTreeMap<String, f64>,
    populations: &BTreeMap<String, f64>,
    grouping: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, f64>> {
    struct Acc {
        weighted: f64,
        weight: f64,
        lo: f64,
        hi: f64,
    }

    let mut groups: BTreeMap<&str, Acc> = BTreeMap::new();
    for (member, &value) in mmi {
        let region = grouping
            .get(member)
            .ok_or_else(|| Error::Referential(format!("member `{member}` has no region")))?;
        let pop = *populations
            .get(member)
            .ok_or_else(|| Error::Referential(format!("member `{member}` has no population")))?;
        if !(pop >= 0.0 && pop.is_finite()) {
            return Err(Error::Validation(format!(
                "member `{member}` has invalid population {pop}"
            )));
        }
        let acc = groups.entry(region.as_str()).or_insert(Acc {
            weighted: 0.0,
            weight: 0.0,
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
        });
        acc.weighted += value * pop;
        acc.weight += pop;
        acc.lo = acc.lo.min(value);
        acc.hi = acc.hi.max(value);
    }

    groups
        .into_iter()
        .map(|(region, acc)| {
            if acc.weight <= 0.0 {
                return Err(Error::DegenerateRegion(region.to_string()));
            }
            // Clamp guards the bound property against rounding in the division.
            let mean = (acc.weighted / acc.weight).clamp(acc.lo, acc.hi);
            Ok((region.to_string(), mean))
        })
        .collect()
}

/// Intensity at every affected unit for one alert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardField {
    pub event_id: String,
    pub version: u32,
    pub values: BTreeMap<GeoLevel, BTreeMap<String, f64>>,
    /// Population weight behind each value (sum of affected city populations).
    pub populations: BTreeMap<GeoLevel, BTreeMap<String, f64>>,
}

impl HazardField {
    pub fn get(&self, level: GeoLevel, unit: &str) -> Option<f64> {
        self.values.get(&level).and_then(|m| m.get(unit)).copied()
    }

    pub fn level(&self, level: GeoLevel) -> impl Iterator<Item = (&str, f64)> {
        self.values
            .get(&level)
            .into_iter()
            .flat_map(|m| m.iter().map(|(k, v)| (k.as_str(), *v)))
    }
}

/// Applies [`aggregate_mmi`] level by level. Each level is computed from the
/// values of the level immediately below; a city with no county feeds its
/// state directly.
pub fn hazard_field(event_id: &str, version: u32, cities: &[(&PopulationCentre, Mmi)]) -> Result<HazardField> {
    let mut values: BTreeMap<GeoLevel, BTreeMap<String, f64>> = BTreeMap::new();
    let mut populations: BTreeMap<GeoLevel, BTreeMap<String, f64>> = BTreeMap::new();

    // Node currently representing each city: (level, unit id).
    let mut current: Vec<(GeoLevel, String)> = Vec::with_capacity(cities.len());
    for (centre, mmi) in cities {
        if centre.population == 0 {
            return Err(Error::DegenerateRegion(centre.id.clone()));
        }
        let v = values.entry(GeoLevel::City).or_default();
        if v.insert(centre.id.clone(), mmi.value()).is_some() {
            return Err(Error::Validation(format!("city `{}` listed twice", centre.id)));
        }
        populations
            .entry(GeoLevel::City)
            .or_default()
            .insert(centre.id.clone(), centre.population as f64);
        current.push((GeoLevel::City, centre.id.clone()));
    }

    for level in GeoLevel::REGIONS {
        let mut node_mmi = BTreeMap::new();
        let mut node_pop = BTreeMap::new();
        let mut grouping = BTreeMap::new();
        for ((centre, _), node) in cities.iter().zip(&current) {
            let Some(parent) = centre.parent_ids.get(&level) else {
                continue;
            };
            let key = node_key(node);
            node_mmi.insert(key.clone(), values[&node.0][&node.1]);
            node_pop.insert(key.clone(), populations[&node.0][&node.1]);
            if let Some(prev) = grouping.insert(key.clone(), parent.clone()) {
                if &prev != parent {
                    return Err(Error::Validation(format!(
                        "{} `{}` maps to both `{prev}` and `{parent}`",
                        node.0, node.1
                    )));
                }
            }
        }
        if grouping.is_empty() {
            continue;
        }
        let level_values = aggregate_mmi(&node_mmi, &node_pop, &grouping)?;
        let mut level_pops: BTreeMap<String, f64> = BTreeMap::new();
        for (key, region) in &grouping {
            *level_pops.entry(region.clone()).or_default() += node_pop[key];
        }
        for ((centre, _), node) in cities.iter().zip(current.iter_mut()) {
            if let Some(parent) = centre.parent_ids.get(&level) {
                *node = (level, parent.clone());
            }
        }
        values.insert(level, level_values);
        populations.insert(level, level_pops);
    }

    Ok(HazardField {
        event_id: event_id.to_string(),
        version,
        values,
        populations,
    })
}

fn node_key((level, id): &(GeoLevel, String)) -> String {
    format!("{}:{id}", level.rank())
}
