//! Intensity to mean damage ratio, one curve per country.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Mmi;

/// Mean damage ratio table at integer intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdrCurve {
    pub country: String,
    entries: BTreeMap<u8, f64>,
}

impl MdrCurve {
    /// Validates that the table is non-empty, contiguous, within [0, 1] and
    /// non-decreasing.
    pub fn new(country: impl Into<String>, entries: BTreeMap<u8, f64>) -> Result<Self> {
        let country = country.into();
        if entries.is_empty() {
            return Err(Error::Validation(format!("curve for `{country}` is empty")));
        }
        let mut prev: Option<(u8, f64)> = None;
        for (&mmi, &mdr) in &entries {
            if !(1..=12).contains(&mmi) {
                return Err(Error::Validation(format!(
                    "curve `{country}`: intensity {mmi} outside 1..12"
                )));
            }
            if !(0.0..=1.0).contains(&mdr) {
                return Err(Error::Validation(format!(
                    "curve `{country}`: MDR {mdr} at intensity {mmi} outside [0, 1]"
                )));
            }
            if let Some((pm, pv)) = prev {
                if mmi != pm + 1 {
                    return Err(Error::Validation(format!(
                        "curve `{country}`: gap between intensity {pm} and {mmi}"
                    )));
                }
                if mdr < pv {
                    return Err(Error::Validation(format!(
                        "curve `{country}` is not monotone at intensity {mmi} ({mdr} < {pv})"
                    )));
                }
            }
            prev = Some((mmi, mdr));
        }
        Ok(MdrCurve { country, entries })
    }

    pub fn entries(&self) -> &BTreeMap<u8, f64> {
        &self.entries
    }

    pub fn lowest(&self) -> (u8, f64) {
        let (k, v) = self.entries.first_key_value().expect("curve is non-empty");
        (*k, *v)
    }

    pub fn highest(&self) -> (u8, f64) {
        let (k, v) = self.entries.last_key_value().expect("curve is non-empty");
        (*k, *v)
    }

    /// MDR at `mmi`: table value at integers, linear in between, zero below
    /// the table and clamped to the last entry above it.
    pub fn mdr(&self, mmi: Mmi) -> f64 {
        let m = mmi.value();
        let (lo_mmi, _) = self.lowest();
        let (hi_mmi, hi_mdr) = self.highest();
        if m < lo_mmi as f64 {
            return 0.0;
        }
        if m >= hi_mmi as f64 {
            return hi_mdr;
        }
        let floor = m.floor();
        let f = floor as u8;
        let lower = self.entries[&f];
        let frac = m - floor;
        if frac == 0.0 {
            return lower;
        }
        let upper = self.entries[&(f + 1)];
        lower + frac * (upper - lower)
    }
}

/// Checked form of [`MdrCurve::mdr`] for raw intensities.
pub fn mmi_to_mdr(mmi: f64, curve: &MdrCurve) -> Result<f64> {
    let mmi = Mmi::new(mmi).map_err(|_| Error::Precondition(format!("intensity {mmi} outside [1, 12]")))?;
    Ok(curve.mdr(mmi))
}

#[derive(Debug, Deserialize, Serialize)]
pub(crate) struct CurveRow {
    pub country: String,
    pub mmi: u8,
    pub mdr: f64,
}

/// Reads a `country,mmi,mdr` table into one curve per country.
pub fn load_mdr_curves<R: Read>(reader: R) -> Result<BTreeMap<String, MdrCurve>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut tables: BTreeMap<String, BTreeMap<u8, f64>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: CurveRow = row?;
        let table = tables.entry(row.country.clone()).or_default();
        if table.insert(row.mmi, row.mdr).is_some() {
            return Err(Error::Validation(format!(
                "curve `{}` defines intensity {} twice",
                row.country, row.mmi
            )));
        }
    }
    tables
        .into_iter()
        .map(|(country, entries)| Ok((country.clone(), MdrCurve::new(country, entries)?)))
        .collect()
}

pub(crate) fn curve_rows(curves: &BTreeMap<String, MdrCurve>) -> Vec<CurveRow> {
    curves
        .values()
        .flat_map(|c| {
            c.entries.iter().map(|(m, v)| CurveRow {
                country: c.country.clone(),
                mmi: *m,
                mdr: *v,
            })
        })
        .collect()
}

/// Synthetic curve used by the tests and the default configuration. It is
/// shaped like a typical empirical MDR curve but carries no calibration.
pub fn synthetic_curve(country: &str) -> MdrCurve {
    let entries = [
        (4u8, 0.0),
        (5, 0.002),
        (6, 0.01),
        (7, 0.04),
        (8, 0.10),
        (9, 0.20),
        (10, 0.35),
        (11, 0.50),
        (12, 0.60),
    ];
    MdrCurve::new(country, entries.into_iter().collect()).expect("synthetic curve is valid")
}
