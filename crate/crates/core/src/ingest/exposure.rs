use std::io::Read;

use rust_decimal::Decimal;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::loss::ExposureRecord;
use crate::model::{GeoHierarchy, GeoLevel, LineOfBusiness, MonetaryAmount};

#[derive(Debug, Deserialize)]
struct ExposureRow {
    region_id: String,
    level: String,
    lob: String,
    gul: Decimal,
    nfl: Decimal,
}

/// Reads an exposure table (`region_id,level,lob,gul,nfl`). Every region id
/// must exist in `hierarchy` at the stated level.
pub fn ingest_exposure<R: Read>(
    reader: R,
    hierarchy: &GeoHierarchy,
    reference_year: i32,
) -> Result<Vec<ExposureRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize().enumerate() {
        let row: ExposureRow = row?;
        let level: GeoLevel = row.level.parse()?;
        let lob: LineOfBusiness = row.lob.parse()?;
        if !hierarchy.contains_unit(level, &row.region_id) {
            return Err(Error::Referential(format!(
                "exposure row {}: unknown {level} `{}`",
                i + 1,
                row.region_id
            )));
        }
        out.push(ExposureRecord::new(
            row.region_id,
            level,
            lob,
            MonetaryAmount::new(row.gul, reference_year)?,
            MonetaryAmount::new(row.nfl, reference_year)?,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PopulationCentre;

    fn hierarchy() -> GeoHierarchy {
        GeoHierarchy::from_centres([PopulationCentre {
            id: "1".into(),
            name: "Chiba".into(),
            latitude: 35.6,
            longitude: 140.1,
            population: 970000,
            parent_ids: [
                (GeoLevel::State, "JP/chiba".to_string()),
                (GeoLevel::Country, "JP".to_string()),
            ]
            .into_iter()
            .collect(),
        }])
        .unwrap()
    }

    #[test]
    fn one_row() {
        let doc = "region_id,level,lob,gul,nfl\nJP/chiba,L3,industrial,1000.0,600.0\n";
        let recs = ingest_exposure(doc.as_bytes(), &hierarchy(), 2012).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].line_of_business, LineOfBusiness::Industrial);
        assert_eq!(recs[0].nfl_exposure.value, Decimal::new(600, 0));
    }

    #[test]
    fn empty_file() {
        assert!(
            ingest_exposure("region_id,level,lob,gul,nfl\n".as_bytes(), &hierarchy(), 2012)
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn nfl_above_gul() {
        let doc = "region_id,level,lob,gul,nfl\nJP/chiba,L3,personal,500,700\n";
        assert!(matches!(
            ingest_exposure(doc.as_bytes(), &hierarchy(), 2012),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn unknown_region() {
        let doc = "region_id,level,lob,gul,nfl\nJP/osaka,L3,personal,500,100\n";
        assert!(matches!(
            ingest_exposure(doc.as_bytes(), &hierarchy(), 2012),
            Err(Error::Referential(_))
        ));
        let wrong_level = "region_id,level,lob,gul,nfl\nJP/chiba,L2,personal,500,100\n";
        assert!(ingest_exposure(wrong_level.as_bytes(), &hierarchy(), 2012).is_err());
    }
}
