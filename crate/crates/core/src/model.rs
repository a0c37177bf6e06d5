//! Domain types shared by every stage of the pipeline: the city to country
//! containment hierarchy, alert snapshots, intensities and money.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum population for a centre to take part in estimation.
pub const MIN_CENTRE_POPULATION: u64 = 1000;

/// Number of fractional digits kept on monetary values.
pub const MONEY_SCALE: u32 = 6;

/// Geographic level, ordered city < county < state < country.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeoLevel {
    City,
    County,
    State,
    Country,
}

impl GeoLevel {
    pub const ALL: [GeoLevel; 4] = [GeoLevel::City, GeoLevel::County, GeoLevel::State, GeoLevel::Country];

    pub const REGIONS: [GeoLevel; 3] = [GeoLevel::County, GeoLevel::State, GeoLevel::Country];

    pub fn rank(self) -> u8 {
        match self {
            GeoLevel::City => 1,
            GeoLevel::County => 2,
            GeoLevel::State => 3,
            GeoLevel::Country => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GeoLevel::City => "city",
            GeoLevel::County => "county",
            GeoLevel::State => "state",
            GeoLevel::Country => "country",
        }
    }
}

impl fmt::Display for GeoLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GeoLevel {
    type Err = Error;

    /// Accepts both `L1`..`L4` and the level names.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l1" | "city" => Ok(GeoLevel::City),
            "l2" | "county" => Ok(GeoLevel::County),
            "l3" | "state" => Ok(GeoLevel::State),
            "l4" | "country" => Ok(GeoLevel::Country),
            other => Err(Error::schema("level", format!("unknown geographic level `{other}`"))),
        }
    }
}

/// Insurance line of business.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineOfBusiness {
    Industrial,
    Personal,
    Commercial,
    Other,
}

impl LineOfBusiness {
    pub const ALL: [LineOfBusiness; 4] = [
        LineOfBusiness::Industrial,
        LineOfBusiness::Personal,
        LineOfBusiness::Commercial,
        LineOfBusiness::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LineOfBusiness::Industrial => "industrial",
            LineOfBusiness::Personal => "personal",
            LineOfBusiness::Commercial => "commercial",
            LineOfBusiness::Other => "other",
        }
    }
}

impl fmt::Display for LineOfBusiness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LineOfBusiness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "industrial" => Ok(LineOfBusiness::Industrial),
            "personal" => Ok(LineOfBusiness::Personal),
            "commercial" => Ok(LineOfBusiness::Commercial),
            "other" => Ok(LineOfBusiness::Other),
            other => Err(Error::schema("lob", format!("unknown line of business `{other}`"))),
        }
    }
}

/// Modified Mercalli Intensity, a decimal in [1, 12].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Mmi(f64);

impl Mmi {
    pub const MIN: f64 = 1.0;
    pub const MAX: f64 = 12.0;

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && (Self::MIN..=Self::MAX).contains(&value) {
            Ok(Mmi(value))
        } else {
            Err(Error::schema("mmi", format!("intensity {value} outside [1, 12]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Parses either a decimal intensity or a Roman numeral (I..XII).
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if let Ok(v) = text.parse::<f64>() {
            return Self::new(v);
        }
        let v = roman_to_int(text).ok_or_else(|| Error::schema("mmi", format!("cannot read intensity `{text}`")))?;
        Self::new(v as f64)
    }
}

impl TryFrom<f64> for Mmi {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Mmi::new(value)
    }
}

impl From<Mmi> for f64 {
    fn from(m: Mmi) -> f64 {
        m.0
    }
}

fn roman_to_int(text: &str) -> Option<u32> {
    let upper = text.to_ascii_uppercase();
    if upper.is_empty() {
        return None;
    }
    let digit = |c: char| match c {
        'I' => Some(1),
        'V' => Some(5),
        'X' => Some(10),
        'L' => Some(50),
        'C' => Some(100),
        _ => None,
    };
    let values: Vec<i64> = upper.chars().map(digit).collect::<Option<_>>()?;
    let mut total = 0i64;
    for (i, v) in values.iter().enumerate() {
        match values.get(i + 1) {
            Some(next) if next > v => total -= v,
            _ => total += v,
        }
    }
    let total = u32::try_from(total).ok()?;
    // Reject non-canonical spellings such as "IIII" or "VX".
    (to_roman(total)? == upper).then_some(total)
}

fn to_roman(mut n: u32) -> Option<String> {
    if n == 0 || n > 399 {
        return None;
    }
    const TABLE: [(u32, &str); 9] = [
        (100, "C"),
        (90, "XC"),
        (50, "L"),
        (40, "XL"),
        (10, "X"),
        (9, "IX"),
        (5, "V"),
        (4, "IV"),
        (1, "I"),
    ];
    let mut out = String::new();
    for (v, s) in TABLE {
        while n >= v {
            out.push_str(s);
            n -= v;
        }
    }
    Some(out)
}

/// A non-negative USD amount tagged with the year its dollars refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MonetaryAmount {
    pub value: Decimal,
    pub reference_year: i32,
}

impl MonetaryAmount {
    pub fn new(value: Decimal, reference_year: i32) -> Result<Self> {
        if value.is_sign_negative() && !value.is_zero() {
            return Err(Error::Validation(format!("negative monetary amount {value}")));
        }
        Ok(MonetaryAmount { value, reference_year })
    }

    pub fn zero(reference_year: i32) -> Self {
        MonetaryAmount {
            value: Decimal::ZERO,
            reference_year,
        }
    }

    pub fn from_f64(value: f64, reference_year: i32) -> Result<Self> {
        let d = Decimal::from_f64_retain(value)
            .ok_or_else(|| Error::Validation(format!("non-finite monetary amount {value}")))?;
        Self::new(d, reference_year)
    }

    pub fn checked_add(self, other: MonetaryAmount) -> Result<Self> {
        if self.reference_year != other.reference_year {
            return Err(Error::YearMismatch(self.reference_year, other.reference_year));
        }
        Ok(MonetaryAmount {
            value: self.value + other.value,
            reference_year: self.reference_year,
        })
    }

    pub fn to_f64(self) -> f64 {
        use rust_decimal::prelude::ToPrimitive;
        self.value.to_f64().unwrap_or(f64::NAN)
    }
}

/// Builds a stable region id: ISO country code, then admin names lowercased
/// to ASCII, joined with `/`.
pub fn region_id(country_code: &str, admin_names: &[&str]) -> String {
    let mut id = country_code.trim().to_ascii_uppercase();
    for name in admin_names {
        id.push('/');
        id.push_str(&normalize_name(name));
    }
    id
}

fn normalize_name(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut dash = false;
    for c in name.trim().chars().flat_map(char::to_lowercase) {
        let c = fold_accent(c);
        if c.is_ascii_alphanumeric() {
            out.push(c);
            dash = false;
        } else if !dash && !out.is_empty() {
            out.push('-');
            dash = true;
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    out
}

fn fold_accent(c: char) -> char {
    match c {
        'à' | 'á' | 'â' | 'ã' | 'ä' | 'å' | 'ā' => 'a',
        'ç' | 'č' => 'c',
        'è' | 'é' | 'ê' | 'ë' | 'ē' => 'e',
        'ì' | 'í' | 'î' | 'ï' | 'ī' => 'i',
        'ñ' => 'n',
        'ò' | 'ó' | 'ô' | 'õ' | 'ö' | 'ō' | 'ø' => 'o',
        'ù' | 'ú' | 'û' | 'ü' | 'ū' => 'u',
        'ý' | 'ÿ' => 'y',
        'š' => 's',
        'ž' => 'z',
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationCentre {
    pub id: String,
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
    pub population: u64,
    /// County, state and country ids. Absent levels are skipped by aggregation.
    pub parent_ids: BTreeMap<GeoLevel, String>,
}

impl PopulationCentre {
    pub fn country(&self) -> Option<&str> {
        self.parent_ids.get(&GeoLevel::Country).map(String::as_str)
    }
}

/// Region id containing `centre` at `level`, or `None` when the jurisdiction
/// has no such level.
pub fn parent_of(centre: &PopulationCentre, level: GeoLevel) -> Result<Option<&str>> {
    if level == GeoLevel::City {
        return Err(Error::Precondition(
            "parent_of requires a region level (county, state or country)".into(),
        ));
    }
    Ok(centre.parent_ids.get(&level).map(String::as_str))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopulationSource {
    /// Sum of member-centre populations.
    Computed,
    /// Ingested census figure.
    Census,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub level: GeoLevel,
    pub name: String,
    pub population: u64,
    pub population_source: PopulationSource,
    pub parent_id: Option<String>,
    pub geometry_ref: Option<String>,
    pub static_indicators: BTreeMap<String, f64>,
}

/// The containment model: centres plus the regions they roll up into.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeoHierarchy {
    centres: BTreeMap<String, PopulationCentre>,
    regions: BTreeMap<String, Region>,
}

impl GeoHierarchy {
    /// Builds the hierarchy from centres, deriving regions and their
    /// populations. Fails if two centres disagree about a region's parent.
    pub fn from_centres(centres: impl IntoIterator<Item = PopulationCentre>) -> Result<Self> {
        let mut h = GeoHierarchy::default();
        for c in centres {
            h.insert_centre(c)?;
        }
        Ok(h)
    }

    pub fn insert_centre(&mut self, centre: PopulationCentre) -> Result<()> {
        if centre.country().is_none() {
            return Err(Error::Referential(format!("centre `{}` has no country", centre.id)));
        }
        if self.centres.contains_key(&centre.id) {
            return Err(Error::Validation(format!("duplicate centre id `{}`", centre.id)));
        }
        let chain: Vec<(GeoLevel, &String)> = GeoLevel::REGIONS
            .iter()
            .filter_map(|l| centre.parent_ids.get(l).map(|id| (*l, id)))
            .collect();
        for (i, (level, id)) in chain.iter().enumerate() {
            let parent = chain.get(i + 1).map(|(_, p)| (*p).clone());
            match self.regions.get(*id) {
                Some(r) if r.level != *level => {
                    return Err(Error::Validation(format!(
                        "region `{id}` used at both {} and {level}",
                        r.level
                    )));
                }
                Some(r) if r.parent_id != parent => {
                    return Err(Error::Validation(format!(
                        "region `{id}` has conflicting parents {:?} and {:?}",
                        r.parent_id, parent
                    )));
                }
                _ => {}
            }
        }
        for (i, (level, id)) in chain.iter().enumerate() {
            let parent = chain.get(i + 1).map(|(_, p)| (*p).clone());
            let region = self.regions.entry((*id).clone()).or_insert_with(|| Region {
                id: (*id).clone(),
                level: *level,
                name: id.rsplit('/').next().unwrap_or(id).to_string(),
                population: 0,
                population_source: PopulationSource::Computed,
                parent_id: parent,
                geometry_ref: None,
                static_indicators: BTreeMap::new(),
            });
            if region.population_source == PopulationSource::Computed {
                region.population += centre.population;
            }
        }
        self.centres.insert(centre.id.clone(), centre);
        Ok(())
    }

    pub fn centre(&self, id: &str) -> Option<&PopulationCentre> {
        self.centres.get(id)
    }

    pub fn centres(&self) -> impl Iterator<Item = &PopulationCentre> {
        self.centres.values()
    }

    pub fn region(&self, id: &str) -> Option<&Region> {
        self.regions.get(id)
    }

    pub fn region_mut(&mut self, id: &str) -> Option<&mut Region> {
        self.regions.get_mut(id)
    }

    pub fn regions(&self) -> impl Iterator<Item = &Region> {
        self.regions.values()
    }

    pub fn contains_unit(&self, level: GeoLevel, id: &str) -> bool {
        match level {
            GeoLevel::City => self.centres.contains_key(id),
            _ => self.regions.get(id).is_some_and(|r| r.level == level),
        }
    }

    /// Centres whose chain passes through `region_id`.
    pub fn members_of(&self, level: GeoLevel, region_id: &str) -> Vec<&PopulationCentre> {
        if level == GeoLevel::City {
            return self.centres.get(region_id).into_iter().collect();
        }
        self.centres
            .values()
            .filter(|c| c.parent_ids.get(&level).is_some_and(|p| p == region_id))
            .collect()
    }

    /// Replaces a region's population with an independently ingested value.
    pub fn set_census_population(&mut self, region_id: &str, population: u64) -> Result<()> {
        let r = self
            .regions
            .get_mut(region_id)
            .ok_or_else(|| Error::Referential(format!("unknown region `{region_id}`")))?;
        r.population = population;
        r.population_source = PopulationSource::Census;
        Ok(())
    }
}

/// Header information of an evolving event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventHeader {
    pub event_id: String,
    pub region_name: String,
    pub origin_time: DateTime<Utc>,
}

/// One timestamped snapshot of an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertVersion {
    pub version: u32,
    pub received_time: DateTime<Utc>,
    pub magnitude: f64,
    pub epicenter: (f64, f64),
    pub city_mmi: BTreeMap<String, Mmi>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarthquakeEvent {
    pub header: EventHeader,
    pub alerts: Vec<AlertVersion>,
}

impl EarthquakeEvent {
    pub fn new(header: EventHeader) -> Self {
        EarthquakeEvent {
            header,
            alerts: Vec::new(),
        }
    }

    /// Appends an alert; versions must strictly increase and receive times
    /// must not go backwards.
    pub fn push_alert(&mut self, alert: AlertVersion) -> Result<()> {
        if alert.version == 0 {
            return Err(Error::schema("version", "alert versions start at 1"));
        }
        if let Some(last) = self.alerts.last() {
            if alert.version <= last.version {
                return Err(Error::Validation(format!(
                    "alert version {} does not follow {}",
                    alert.version, last.version
                )));
            }
            if alert.received_time < last.received_time {
                return Err(Error::Validation(format!(
                    "alert version {} received before version {}",
                    alert.version, last.version
                )));
            }
        }
        self.alerts.push(alert);
        Ok(())
    }
}
