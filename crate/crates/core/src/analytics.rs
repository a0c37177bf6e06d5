//! Historic-loss normalization and lognormal loss-threshold probabilities.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MonetaryAmount;

/// Year historic losses are normalized to unless configured otherwise.
pub const DEFAULT_TARGET_YEAR: i32 = 2012;

/// Fallback ζ when no per-country value is configured. Not calibrated.
pub const DEFAULT_ZETA: f64 = 0.6;

/// Relative tolerance between wealth x population and the inflation-corrected
/// wealth multiplier when the multipliers are computed at full precision.
pub const CONSISTENCY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EconomicYear {
    pub ipd: f64,
    pub cpi: f64,
    pub wealth: f64,
    pub population: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconomicSeries {
    pub country: String,
    pub years: BTreeMap<i32, EconomicYear>,
}

impl EconomicSeries {
    fn year(&self, year: i32) -> Result<&EconomicYear> {
        self.years.get(&year).ok_or_else(|| Error::MissingData {
            country: self.country.clone(),
            year,
        })
    }
}

#[derive(Debug, Deserialize)]
struct SeriesRow {
    country: String,
    year: i32,
    ipd: f64,
    cpi: f64,
    wealth: f64,
    population: f64,
}

/// Reads `country,year,ipd,cpi,wealth,population`.
pub fn load_economic_series<R: Read>(reader: R) -> Result<BTreeMap<String, EconomicSeries>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out: BTreeMap<String, EconomicSeries> = BTreeMap::new();
    for row in rdr.deserialize() {
        let r: SeriesRow = row?;
        for (name, v) in [
            ("ipd", r.ipd),
            ("cpi", r.cpi),
            ("wealth", r.wealth),
            ("population", r.population),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!(
                    "{} {}: {name} must be positive, got {v}",
                    r.country, r.year
                )));
            }
        }
        let series = out.entry(r.country.clone()).or_insert_with(|| EconomicSeries {
            country: r.country.clone(),
            years: BTreeMap::new(),
        });
        series.years.insert(
            r.year,
            EconomicYear {
                ipd: r.ipd,
                cpi: r.cpi,
                wealth: r.wealth,
                population: r.population,
            },
        );
    }
    Ok(out)
}

/// Ratio of the price deflator in `target` to that in `year`.
pub fn inflation_multiplier(series: &EconomicSeries, year: i32, target: i32) -> Result<f64> {
    Ok(series.year(target)?.ipd / series.year(year)?.ipd)
}

/// Wealth ratio deflated by the CPI ratio between `year` and `target`.
pub fn icw_multiplier(series: &EconomicSeries, year: i32, target: i32) -> Result<f64> {
    let (t, y) = (series.year(target)?, series.year(year)?);
    Ok((t.wealth / y.wealth) / (t.cpi / y.cpi))
}

pub fn population_multiplier(series: &EconomicSeries, year: i32, target: i32) -> Result<f64> {
    Ok(series.year(target)?.population / series.year(year)?.population)
}

/// Per-capita wealth multiplier.
pub fn wealth_multiplier(icw: f64, pop: f64) -> Result<f64> {
    if pop.is_nan() || pop <= 0.0 {
        return Err(Error::Precondition(format!(
            "population multiplier {pop} must be positive"
        )));
    }
    Ok(icw / pop)
}

/// The adjustment factors taking a loss from year y dollars to the target
/// year. `icw` is optional; when absent it is taken as `wealth * pop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMultipliers {
    pub ipd: f64,
    pub icw: Option<f64>,
    pub wealth: f64,
    pub pop: f64,
}

impl NormalizationMultipliers {
    pub fn new(ipd: f64, icw: Option<f64>, wealth: f64, pop: f64) -> Result<Self> {
        let all = [Some(ipd), icw, Some(wealth), Some(pop)];
        if all.iter().flatten().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Validation(format!(
                "multipliers must be strictly positive: ipd={ipd} icw={icw:?} w={wealth} dp={pop}"
            )));
        }
        Ok(NormalizationMultipliers { ipd, icw, wealth, pop })
    }

    pub fn from_series(series: &EconomicSeries, year: i32, target: i32) -> Result<Self> {
        let ipd = inflation_multiplier(series, year, target)?;
        let icw = icw_multiplier(series, year, target)?;
        let pop = population_multiplier(series, year, target)?;
        Self::new(ipd, Some(icw), wealth_multiplier(icw, pop)?, pop)
    }

    pub fn icw_or_product(&self) -> f64 {
        self.icw.unwrap_or(self.wealth * self.pop)
    }
}

/// Normalizes with the full-precision consistency tolerance.
pub fn normalize_loss(d_y: MonetaryAmount, m: &NormalizationMultipliers, target_year: i32) -> Result<MonetaryAmount> {
    normalize_loss_with_tolerance(d_y, m, target_year, CONSISTENCY_TOLERANCE)
}

/// `D_target = D_y * ipd * wealth * pop`, cross-checked against
/// `D_y * ipd * icw`. The two must agree to `rel_tol`.
pub fn normalize_loss_with_tolerance(
    d_y: MonetaryAmount,
    m: &NormalizationMultipliers,
    target_year: i32,
    rel_tol: f64,
) -> Result<MonetaryAmount> {
    let product = m.wealth * m.pop;
    let icw = m.icw_or_product();
    if (product - icw).abs() > rel_tol * icw.abs() {
        return Err(Error::InconsistentMultipliers { product, icw });
    }
    MonetaryAmount::from_f64(d_y.to_f64() * m.ipd * m.wealth * m.pop, target_year)
}

/// Tolerance for multipliers printed with `decimals` fractional digits:
/// worst-case rounding of w, dp and icw, relative to icw.
pub fn printed_consistency_tolerance(m: &NormalizationMultipliers, decimals: i32) -> f64 {
    let half = 0.5 * 10f64.powi(-decimals);
    let bound = half * (m.wealth + m.pop) + half * half + half;
    bound / m.icw_or_product()
}

/// `(predicted - normalized) / normalized * 100`.
pub fn percent_error(predicted: f64, normalized: f64) -> Result<f64> {
    if normalized == 0.0 {
        return Err(Error::UndefinedPercentError);
    }
    Ok((predicted - normalized) / normalized * 100.0)
}

/// Standard normal cumulative distribution.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Lognormal model of event loss (millions USD).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossDistribution {
    pub mu_ln_loss: f64,
    pub zeta: f64,
}

impl LossDistribution {
    pub fn new(mu_ln_loss: f64, zeta: f64) -> Result<Self> {
        if !(zeta > 0.0 && zeta.is_finite()) || !mu_ln_loss.is_finite() {
            return Err(Error::Validation(format!(
                "invalid loss distribution: mu={mu_ln_loss}, zeta={zeta}"
            )));
        }
        Ok(LossDistribution { mu_ln_loss, zeta })
    }

    /// Centres the distribution on a predicted loss in millions.
    pub fn from_predicted(loss_millions: f64, zeta: f64) -> Result<Self> {
        if loss_millions.is_nan() || loss_millions <= 0.0 {
            return Err(Error::Validation(format!(
                "predicted loss {loss_millions} must be positive"
            )));
        }
        Self::new(loss_millions.ln(), zeta)
    }
}

/// Loss interval (a, b] in millions USD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossThreshold {
    pub lower: f64,
    pub upper: f64,
}

impl LossThreshold {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower >= 0.0 && upper > lower) {
            return Err(Error::Validation(format!("invalid threshold ({lower}, {upper}]")));
        }
        Ok(LossThreshold { lower, upper })
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower < v && v <= self.upper
    }
}

/// Decade ladder (0,1], (1,10], ..., (100000,1000000].
pub fn default_ladder() -> Vec<LossThreshold> {
    let mut out = vec![LossThreshold { lower: 0.0, upper: 1.0 }];
    let mut lo = 1.0;
    for _ in 0..6 {
        out.push(LossThreshold {
            lower: lo,
            upper: lo * 10.0,
        });
        lo *= 10.0;
    }
    out
}

/// P(a < L <= b) for a lognormal loss.
pub fn threshold_probability(dist: &LossDistribution, t: &LossThreshold) -> f64 {
    let z = |v: f64| (v.ln() - dist.mu_ln_loss) / dist.zeta;
    let upper = standard_normal_cdf(z(t.upper));
    let lower = if t.lower == 0.0 {
        0.0
    } else {
        standard_normal_cdf(z(t.lower))
    };
    (upper - lower).max(0.0)
}

pub fn bucket_probabilities(dist: &LossDistribution, ladder: &[LossThreshold]) -> Vec<f64> {
    ladder.iter().map(|t| threshold_probability(dist, t)).collect()
}

/// Index of the bucket with a < value <= b.
pub fn threshold_bin(value: f64, ladder: &[LossThreshold]) -> Result<usize> {
    ladder
        .iter()
        .position(|t| t.contains(value))
        .ok_or(Error::OutOfRange(value))
}

/// One row of the historic validation table. Missing cells are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub region: String,
    pub country: String,
    pub date: String,
    pub mag: Option<f64>,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub d_y: f64,
    pub ipd: Option<f64>,
    pub icw: Option<f64>,
    pub w: Option<f64>,
    pub dp: Option<f64>,
    pub d_2012: f64,
    pub predicted: f64,
    pub pct_error: Option<f64>,
}

impl Table1Row {
    pub fn multipliers(&self) -> Option<Result<NormalizationMultipliers>> {
        match (self.ipd, self.w, self.dp) {
            (Some(ipd), Some(w), Some(dp)) => Some(NormalizationMultipliers::new(ipd, self.icw, w, dp)),
            _ => None,
        }
    }
}

pub fn load_table1<R: Read>(reader: R) -> Result<Vec<Table1Row>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizationCheck {
    pub region: String,
    pub country: String,
    pub recomputed: f64,
    pub printed: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompositeCheck {
    pub region: String,
    pub sum_of_parts: f64,
    pub printed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventCheck {
    pub region: String,
    pub country: String,
    pub date: String,
    pub normalized: f64,
    pub predicted: f64,
    pub percent_error: f64,
    pub printed_percent_error: f64,
    pub normalized_bin: usize,
    pub predicted_bin: usize,
    pub bucket_probabilities: Vec<f64>,
}

impl EventCheck {
    pub fn same_bin(&self) -> bool {
        self.normalized_bin == self.predicted_bin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Report {
    pub zeta: f64,
    pub normalizations: Vec<NormalizationCheck>,
    pub composites: Vec<CompositeCheck>,
    pub events: Vec<EventCheck>,
}

impl Table1Report {
    pub fn same_bin_count(&self) -> usize {
        self.events.iter().filter(|e| e.same_bin()).count()
    }
}

/// Recomputes the table. Rows with multipliers are renormalized from D_y;
/// a row without multipliers is the sum of the rows that follow it with the
/// same region and date. Percent errors and bins use the printed normalized
/// and predicted columns. Bucket probabilities centre on the predicted loss.
pub fn validate_table1(rows: &[Table1Row], zeta: f64) -> Result<Table1Report> {
    let ladder = default_ladder();
    let mut normalizations = Vec::new();
    let mut composites = Vec::new();
    let mut events = Vec::new();

    for (i, row) in rows.iter().enumerate() {
        match row.multipliers() {
            Some(m) => {
                let m = m?;
                let d_y = MonetaryAmount::from_f64(row.d_y, 0)?;
                let tol = printed_consistency_tolerance(&m, 4);
                let d = normalize_loss_with_tolerance(d_y, &m, DEFAULT_TARGET_YEAR, tol)?.to_f64();
                normalizations.push(NormalizationCheck {
                    region: row.region.clone(),
                    country: row.country.clone(),
                    recomputed: d,
                    printed: row.d_2012,
                    relative_error: (d - row.d_2012) / row.d_2012,
                });
            }
            None => {
                let parts: Vec<&Table1Row> = rows[i + 1..]
                    .iter()
                    .take_while(|r| r.region == row.region && r.date == row.date && r.pct_error.is_none())
                    .collect();
                if parts.is_empty() {
                    return Err(Error::Validation(format!(
                        "row `{}` has neither multipliers nor sub-rows",
                        row.region
                    )));
                }
                composites.push(CompositeCheck {
                    region: row.region.clone(),
                    sum_of_parts: parts.iter().map(|r| r.d_2012).sum(),
                    printed: row.d_2012,
                });
            }
        }

        if let Some(printed) = row.pct_error {
            let dist = LossDistribution::from_predicted(row.predicted, zeta)?;
            events.push(EventCheck {
                region: row.region.clone(),
                country: row.country.clone(),
                date: row.date.clone(),
                normalized: row.d_2012,
                predicted: row.predicted,
                percent_error: percent_error(row.predicted, row.d_2012)?,
                printed_percent_error: printed,
                normalized_bin: threshold_bin(row.d_2012, &ladder)?,
                predicted_bin: threshold_bin(row.predicted, &ladder)?,
                bucket_probabilities: bucket_probabilities(&dist, &ladder),
            });
        }
    }

    Ok(Table1Report {
        zeta,
        normalizations,
        composites,
        events,
    })
}
