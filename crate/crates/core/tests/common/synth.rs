//! Random synthetic events: one country, up to a few states and counties,
//! cities with populations, intensities and exposure at every level.
#![allow(dead_code)]

use std::collections::BTreeMap;

use quakeloss_core::ingest::{GridPoint, ShakeGrid};
use quakeloss_core::loss::ExposureRecord;
use quakeloss_core::model::{GeoHierarchy, GeoLevel, LineOfBusiness, Mmi, MonetaryAmount, PopulationCentre};
use rand::seq::SliceRandom;
use rand::Rng;
use rust_decimal::Decimal;

pub const COUNTRY: &str = "SY";

pub struct SynthEvent {
    pub centres: Vec<PopulationCentre>,
    pub mmi: Vec<Mmi>,
    pub hierarchy: GeoHierarchy,
    pub exposures: Vec<ExposureRecord>,
}

impl SynthEvent {
    pub fn pairs(&self) -> Vec<(&PopulationCentre, Mmi)> {
        self.centres.iter().zip(self.mmi.iter().copied()).collect()
    }
}

pub struct Shape {
    pub max_cities: usize,
    pub max_counties: usize,
    pub max_states: usize,
    /// Chance that a city sits in no county.
    pub countyless: f64,
}

pub const CONSERVATION: Shape = Shape {
    max_cities: 100,
    max_counties: 10,
    max_states: 3,
    countyless: 0.0,
};

pub const HAZARD: Shape = Shape {
    max_cities: 100,
    max_counties: 10,
    max_states: 3,
    countyless: 0.15,
};

fn money<R: Rng>(rng: &mut R, max_units: i64) -> Decimal {
    // cents-and-below detail so the split has remainders to place
    Decimal::new(rng.gen_range(0..=max_units * 1_000_000), 6)
}

pub fn synth_event<R: Rng>(rng: &mut R, shape: &Shape) -> SynthEvent {
    let n_states = rng.gen_range(1..=shape.max_states);
    let n_counties = rng.gen_range(n_states..=shape.max_counties.max(n_states));
    let n_cities = rng.gen_range(1..=shape.max_cities);
    let county_state: Vec<usize> = (0..n_counties)
        .map(|k| if k < n_states { k } else { rng.gen_range(0..n_states) })
        .collect();

    let centres: Vec<PopulationCentre> = (0..n_cities)
        .map(|i| {
            let state;
            let mut parents = BTreeMap::new();
            if rng.gen_bool(shape.countyless) {
                state = rng.gen_range(0..n_states);
            } else {
                let k = rng.gen_range(0..n_counties);
                state = county_state[k];
                parents.insert(GeoLevel::County, format!("{COUNTRY}/s{state}/k{k}"));
            }
            parents.insert(GeoLevel::State, format!("{COUNTRY}/s{state}"));
            parents.insert(GeoLevel::Country, COUNTRY.to_string());
            PopulationCentre {
                id: format!("c{i:03}"),
                name: format!("City {i}"),
                latitude: rng.gen_range(-1.0..1.0),
                longitude: rng.gen_range(-1.0..1.0),
                population: rng.gen_range(1_000..2_000_000),
                parent_ids: parents,
            }
        })
        .collect();
    let mmi = (0..n_cities)
        .map(|_| Mmi::new(rng.gen_range(1.0..=12.0)).unwrap())
        .collect();
    let hierarchy = GeoHierarchy::from_centres(centres.clone()).unwrap();

    let mut units: Vec<(GeoLevel, String)> = centres.iter().map(|c| (GeoLevel::City, c.id.clone())).collect();
    for c in &centres {
        for (l, r) in &c.parent_ids {
            units.push((*l, r.clone()));
        }
    }
    units.sort();
    units.dedup();
    let n_records = rng.gen_range(1..=units.len().min(60));
    let exposures = (0..n_records)
        .map(|_| {
            let (level, id) = units.choose(rng).unwrap().clone();
            let lob = *LineOfBusiness::ALL.choose(rng).unwrap();
            let gul = money(rng, 50_000_000);
            let nfl = (gul * Decimal::new(rng.gen_range(0..=100), 2)).round_dp(6);
            ExposureRecord::new(
                id,
                level,
                lob,
                MonetaryAmount::new(gul, 2012).unwrap(),
                MonetaryAmount::new(nfl, 2012).unwrap(),
            )
            .unwrap()
        })
        .collect();
    SynthEvent {
        centres,
        mmi,
        hierarchy,
        exposures,
    }
}

/// Regular grid of at most 50 by 50 points with random intensities.
pub fn synth_grid<R: Rng>(rng: &mut R) -> ShakeGrid {
    let nlat = rng.gen_range(1..=50usize);
    let nlon = rng.gen_range(1..=50usize);
    let lat_spacing = rng.gen_range(0.01..0.5);
    let lon_spacing = rng.gen_range(0.01..0.5);
    let lat_min = rng.gen_range(-60.0..60.0);
    let lon_min = rng.gen_range(-170.0..150.0);
    let mut points = Vec::with_capacity(nlat * nlon);
    for i in 0..nlat {
        for j in 0..nlon {
            points.push(GridPoint {
                latitude: lat_min + i as f64 * lat_spacing,
                longitude: lon_min + j as f64 * lon_spacing,
                mmi: Mmi::new(rng.gen_range(1.0..=12.0)).unwrap(),
            });
        }
    }
    ShakeGrid {
        event_id: "grid".into(),
        lat_max: points.iter().map(|p| p.latitude).fold(f64::MIN, f64::max),
        lon_max: points.iter().map(|p| p.longitude).fold(f64::MIN, f64::max),
        points,
        lat_min,
        lon_min,
        lat_spacing,
        lon_spacing,
    }
}

/// Centres scattered over and around the grid; some land exactly on grid
/// points and some fall outside.
pub fn centres_around<R: Rng>(rng: &mut R, grid: &ShakeGrid, n: usize) -> Vec<PopulationCentre> {
    let pad_lat = grid.lat_spacing * 2.0;
    let pad_lon = grid.lon_spacing * 2.0;
    (0..n)
        .map(|i| {
            let (lat, lon) = if rng.gen_bool(0.1) {
                let p = grid.points.choose(rng).unwrap();
                (p.latitude, p.longitude)
            } else {
                (
                    rng.gen_range(grid.lat_min - pad_lat..=grid.lat_max + pad_lat),
                    rng.gen_range(grid.lon_min - pad_lon..=grid.lon_max + pad_lon),
                )
            };
            PopulationCentre {
                id: format!("p{i:03}"),
                name: format!("P{i}"),
                latitude: lat,
                longitude: lon,
                population: 5_000,
                parent_ids: [(GeoLevel::Country, COUNTRY.to_string())].into_iter().collect(),
            }
        })
        .collect()
}

/// Nearest grid point by exhaustive search; ties go to the smaller
/// (lat, lon).
pub fn brute_force_nearest(grid: &ShakeGrid, centres: &[PopulationCentre]) -> BTreeMap<String, Mmi> {
    let mut out = BTreeMap::new();
    for c in centres {
        if !(grid.lat_min <= c.latitude
            && c.latitude <= grid.lat_max
            && grid.lon_min <= c.longitude
            && c.longitude <= grid.lon_max)
        {
            continue;
        }
        let mut best: Option<(f64, f64, f64, Mmi)> = None;
        for p in &grid.points {
            let d = (c.latitude - p.latitude).powi(2) + (c.longitude - p.longitude).powi(2);
            let cand = (d, p.latitude, p.longitude, p.mmi);
            best = match best {
                Some(b) if (b.0, b.1, b.2) <= (cand.0, cand.1, cand.2) => Some(b),
                _ => Some(cand),
            };
        }
        out.insert(c.id.clone(), best.unwrap().3);
    }
    out
}

/// Region of each centre at `level`, or its state when it has no county.
pub fn grouping(centres: &[PopulationCentre], level: GeoLevel) -> BTreeMap<String, String> {
    centres
        .iter()
        .map(|c| {
            let r = c
                .parent_ids
                .get(&level)
                .or_else(|| c.parent_ids.get(&GeoLevel::State))
                .unwrap();
            (c.id.clone(), r.clone())
        })
        .collect()
}

/// Mass of the standard normal density on [lo, hi] by composite Simpson,
/// with infinite ends cut at +-12.
pub fn simpson_normal_mass(lo: f64, hi: f64) -> f64 {
    let (a, b) = (lo.max(-12.0), hi.min(12.0));
    if b <= a {
        return 0.0;
    }
    let n = 4000;
    let h = (b - a) / n as f64;
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(a) + pdf(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Standard normal CDF built independently of the library: a positive-term
/// erf series near the origin and a continued fraction for erfc in the tails.
pub fn reference_normal_cdf(x: f64) -> f64 {
    let z = x.abs() / std::f64::consts::SQRT_2;
    let erfc = if z < 2.5 {
        // erf(z) = 2/sqrt(pi) exp(-z^2) sum 2^n z^(2n+1) / (1*3*...*(2n+1))
        let (mut term, mut sum, mut n) = (z, z, 0.0);
        while term > 1e-18 * sum {
            n += 1.0;
            term *= 2.0 * z * z / (2.0 * n + 1.0);
            sum += term;
        }
        1.0 - 2.0 / std::f64::consts::PI.sqrt() * (-z * z).exp() * sum
    } else {
        // erfc(z) = exp(-z^2)/sqrt(pi) / (z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))
        let mut frac = z;
        for k in (1..=200).rev() {
            frac = z + (k as f64 / 2.0) / frac;
        }
        (-z * z).exp() / std::f64::consts::PI.sqrt() / frac
    };
    if x < 0.0 {
        0.5 * erfc
    } else {
        1.0 - 0.5 * erfc
    }
}

/// Normal CDF values computed with 40-digit arithmetic.
#[allow(clippy::excessive_precision)]
pub const NORMAL_CDF_ANCHORS: [(f64, f64); 11] = [
    (-8.0, 6.2209605742717841235e-16),
    (-6.5, 4.0160005838591178083e-11),
    (-3.7, 0.00010779973347738833694),
    (-2.5, 0.006209665325776135167),
    (-0.708, 0.23947262873987987351),
    (0.0, 0.5),
    (0.5, 0.69146246127401310364),
    (1.96, 0.97500210485177956586),
    (3.2, 0.99931286206208415154),
    (5.1, 0.99999983017325928524),
    (8.0, 0.9999999999999993779),
];
