//! PAGER event documents.
//!
//! ```xml
//! <pager>
//!   <event eventcode="usc0001xgp" versioncode="1" region="..." magnitude="7.9"
//!          lat="38.297" lon="142.373" time="2011-03-11T05:46:24Z"
//!          received="2011-03-11T06:04:00Z"/>
//!   <city id="2111149" name="Sendai" lat="38.267" lon="140.867"
//!         population="1037562" mmi="VIII"/>
//! </pager>
//! ```

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{attr, xml_error};
use crate::error::{Error, Result};
use crate::model::{AlertVersion, EventHeader, Mmi, MIN_CENTRE_POPULATION};

/// A city row as reported in the alert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertCity {
    pub id: String,
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
    pub population: u64,
    pub mmi: Mmi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PagerDocument {
    pub header: EventHeader,
    pub alert: AlertVersion,
    pub cities: Vec<AlertCity>,
    /// Cities dropped for having fewer than the admission population.
    pub dropped_small: usize,
}

pub fn parse_pager_event(document: &str) -> Result<PagerDocument> {
    let doc = roxmltree::Document::parse(document).map_err(xml_error)?;
    let root = doc.root_element();
    if root.tag_name().name() != "pager" {
        return Err(Error::schema(
            "pager",
            format!("expected <pager> root, found <{}>", root.tag_name().name()),
        ));
    }
    let event = root
        .children()
        .find(|n| n.has_tag_name("event"))
        .ok_or_else(|| Error::schema("event", "missing <event> element"))?;

    let event_id: String = attr(event, "eventcode")?;
    if event_id.is_empty() {
        return Err(Error::schema("eventcode", "empty event id"));
    }
    let version: u32 = attr(event, "versioncode")?;
    if version == 0 {
        return Err(Error::schema("versioncode", "versions start at 1"));
    }
    let magnitude: f64 = attr(event, "magnitude")?;
    let lat: f64 = attr(event, "lat")?;
    let lon: f64 = attr(event, "lon")?;
    check_coords(lat, lon)?;
    let origin_time: DateTime<Utc> = attr(event, "time")?;
    let received_time: DateTime<Utc> = match event.attribute("received") {
        Some(_) => attr(event, "received")?,
        None => origin_time,
    };
    let region_name = event.attribute("region").unwrap_or_default().to_string();

    let mut cities = Vec::new();
    let mut city_mmi = BTreeMap::new();
    let mut dropped_small = 0;
    for node in root.children().filter(|n| n.has_tag_name("city")) {
        let id: String = attr(node, "id")?;
        let mmi = Mmi::parse(
            node.attribute("mmi")
                .ok_or_else(|| Error::schema("mmi", format!("missing on city `{id}`")))?,
        )
        .map_err(|e| Error::schema("mmi", format!("city `{id}`: {e}")))?;
        let population: u64 = attr(node, "population")?;
        let latitude: f64 = attr(node, "lat")?;
        let longitude: f64 = attr(node, "lon")?;
        check_coords(latitude, longitude)?;
        if population < MIN_CENTRE_POPULATION {
            dropped_small += 1;
            continue;
        }
        if city_mmi.insert(id.clone(), mmi).is_some() {
            return Err(Error::schema("id", format!("city `{id}` listed twice")));
        }
        cities.push(AlertCity {
            name: node.attribute("name").unwrap_or(&id).to_string(),
            id,
            latitude,
            longitude,
            population,
            mmi,
        });
    }
    if dropped_small > 0 {
        tracing::warn!(event = %event_id, version, dropped_small, "dropped cities below admission population");
    }

    Ok(PagerDocument {
        header: EventHeader {
            event_id,
            region_name,
            origin_time,
        },
        alert: AlertVersion {
            version,
            received_time,
            magnitude,
            epicenter: (lat, lon),
            city_mmi,
        },
        cities,
        dropped_small,
    })
}

fn check_coords(lat: f64, lon: f64) -> Result<()> {
    if !(-90.0..=90.0).contains(&lat) {
        return Err(Error::schema("lat", format!("latitude {lat} out of range")));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(Error::schema("lon", format!("longitude {lon} out of range")));
    }
    Ok(())
}
