//! Exposure disaggregation, city losses and their roll-up.
//!
//! Money is carried as [`Decimal`] rounded to [`MONEY_SCALE`] places so that
//! every sum in the hierarchy is exact: a region's loss is the sum of its
//! cities' losses to the last digit.

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};

use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GeoHierarchy, GeoLevel, LineOfBusiness, MonetaryAmount, PopulationCentre, MONEY_SCALE};

/// Ground-up and net-of-facultative pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GulNfl {
    pub gul: Decimal,
    pub nfl: Decimal,
}

impl GulNfl {
    pub fn new(gul: Decimal, nfl: Decimal) -> Self {
        GulNfl { gul, nfl }
    }

    pub fn is_zero(&self) -> bool {
        self.gul.is_zero() && self.nfl.is_zero()
    }
}

impl Add for GulNfl {
    type Output = GulNfl;

    fn add(self, rhs: GulNfl) -> GulNfl {
        GulNfl {
            gul: self.gul + rhs.gul,
            nfl: self.nfl + rhs.nfl,
        }
    }
}

impl AddAssign for GulNfl {
    fn add_assign(&mut self, rhs: GulNfl) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for GulNfl {
    fn sum<I: Iterator<Item = GulNfl>>(iter: I) -> GulNfl {
        iter.fold(GulNfl::default(), Add::add)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureRecord {
    pub region_id: String,
    pub level: GeoLevel,
    pub line_of_business: LineOfBusiness,
    pub gul_exposure: MonetaryAmount,
    pub nfl_exposure: MonetaryAmount,
}

impl ExposureRecord {
    pub fn new(
        region_id: impl Into<String>,
        level: GeoLevel,
        line_of_business: LineOfBusiness,
        gul: MonetaryAmount,
        nfl: MonetaryAmount,
    ) -> Result<Self> {
        let region_id = region_id.into();
        if gul.reference_year != nfl.reference_year {
            return Err(Error::YearMismatch(gul.reference_year, nfl.reference_year));
        }
        if nfl.value > gul.value {
            return Err(Error::Validation(format!(
                "NFL exposure {} exceeds GUL exposure {} for `{region_id}` ({line_of_business})",
                nfl.value, gul.value
            )));
        }
        Ok(ExposureRecord {
            region_id,
            level,
            line_of_business,
            gul_exposure: gul,
            nfl_exposure: nfl,
        })
    }

    pub fn amounts(&self) -> GulNfl {
        GulNfl::new(self.gul_exposure.value, self.nfl_exposure.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub event_id: String,
    pub version: u32,
    pub level: GeoLevel,
    pub unit: String,
    pub line_of_business: LineOfBusiness,
    pub gul: MonetaryAmount,
    pub nfl: MonetaryAmount,
}

fn round_money(v: Decimal) -> Decimal {
    v.round_dp_with_strategy(MONEY_SCALE, RoundingStrategy::MidpointNearestEven)
}

/// Splits a region's exposure over its member centres in proportion to
/// population.
///
/// Shares are rounded down to the money scale and the leftover units go to
/// the centres with the largest remainders (ties to the earlier centre), so
/// shares sum to the record exactly and are never negative.
/// NFL and the GUL-NFL gap are split separately and GUL is rebuilt as their
/// sum, which keeps NFL <= GUL at every centre.
pub fn disaggregate_exposure(
    record: &ExposureRecord,
    member_centres: &[&PopulationCentre],
) -> Result<BTreeMap<String, GulNfl>> {
    let total_pop: u64 = member_centres.iter().map(|c| c.population).sum();
    if total_pop == 0 {
        return Err(Error::DegenerateRegion(record.region_id.clone()));
    }
    let total = record.amounts();
    let weights: Vec<u64> = member_centres.iter().map(|c| c.population).collect();
    let nfl = split_largest_remainder(total.nfl, &weights, total_pop);
    let gap = split_largest_remainder(total.gul - total.nfl, &weights, total_pop);

    let mut shares: BTreeMap<String, GulNfl> = BTreeMap::new();
    for ((c, n), g) in member_centres.iter().zip(nfl).zip(gap) {
        *shares.entry(c.id.clone()).or_default() += GulNfl::new(n + g, n);
    }
    Ok(shares)
}

fn split_largest_remainder(amount: Decimal, weights: &[u64], total_weight: u64) -> Vec<Decimal> {
    let total_weight = Decimal::from(total_weight);
    let unit = Decimal::new(1, MONEY_SCALE);
    let mut shares = Vec::with_capacity(weights.len());
    let mut remainders = Vec::with_capacity(weights.len());
    for w in weights {
        let exact = amount * Decimal::from(*w) / total_weight;
        let floor = exact.round_dp_with_strategy(MONEY_SCALE, RoundingStrategy::ToZero);
        shares.push(floor);
        remainders.push(exact - floor);
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]).then(a.cmp(&b)));
    let mut left = amount - shares.iter().copied().sum::<Decimal>();
    for &i in order.iter().cycle() {
        if left < unit {
            break;
        }
        shares[i] += unit;
        left -= unit;
    }
    // Only reachable when the amount carries digits below the money scale.
    if !left.is_zero() {
        shares[order[0]] += left;
    }
    shares
}

/// Loss at a city: damage ratio times each exposure.
pub fn compute_city_loss(mdr: f64, exposure: GulNfl) -> Result<GulNfl> {
    if !(0.0..=1.0).contains(&mdr) {
        return Err(Error::Precondition(format!("MDR {mdr} outside [0, 1]")));
    }
    let ratio = Decimal::from_f64_retain(mdr)
        .ok_or_else(|| Error::Precondition(format!("MDR {mdr} is not finite")))?
        .round_dp(18);
    let mul = |v: Decimal| {
        ratio
            .checked_mul(v)
            .map(round_money)
            .ok_or_else(|| Error::Validation(format!("loss overflow for exposure {v}")))
    };
    Ok(GulNfl::new(mul(exposure.gul)?, mul(exposure.nfl)?))
}

/// Sums city losses into every enclosing county, state and country. City
/// rows are included in the output unchanged.
pub fn aggregate_losses(
    city_losses: &BTreeMap<String, GulNfl>,
    hierarchy: &GeoHierarchy,
) -> Result<BTreeMap<(GeoLevel, String), GulNfl>> {
    let mut out: BTreeMap<(GeoLevel, String), GulNfl> = BTreeMap::new();
    for (city, loss) in city_losses {
        let centre = hierarchy
            .centre(city)
            .ok_or_else(|| Error::Referential(format!("unknown centre `{city}`")))?;
        if centre.country().is_none() {
            return Err(Error::Referential(format!("centre `{city}` has no country")));
        }
        *out.entry((GeoLevel::City, city.clone())).or_default() += *loss;
        for (level, region) in &centre.parent_ids {
            *out.entry((*level, region.clone())).or_default() += *loss;
        }
    }
    Ok(out)
}

/// Per-line totals of losses and exposures.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortfolioBucket {
    pub loss: GulNfl,
    pub exposure: GulNfl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub buckets: BTreeMap<LineOfBusiness, PortfolioBucket>,
    pub total: PortfolioBucket,
}

impl Portfolio {
    /// Share of each bucket in the grand total for the selected quantity,
    /// or `None` when the total is zero.
    pub fn fractions(&self, pick: impl Fn(&PortfolioBucket) -> Decimal) -> Option<BTreeMap<LineOfBusiness, f64>> {
        use rust_decimal::prelude::ToPrimitive;
        let total = pick(&self.total);
        if total.is_zero() {
            return None;
        }
        Some(
            self.buckets
                .iter()
                .map(|(lob, b)| (*lob, (pick(b) / total).to_f64().unwrap_or(0.0)))
                .collect(),
        )
    }
}

/// Groups losses and exposures by line of business. All four buckets are
/// always present. `losses` should come from a single geographic level.
pub fn portfolio_breakdown(losses: &[LossRecord], exposures: &[ExposureRecord]) -> Portfolio {
    let mut buckets: BTreeMap<LineOfBusiness, PortfolioBucket> = LineOfBusiness::ALL
        .iter()
        .map(|l| (*l, PortfolioBucket::default()))
        .collect();
    for r in losses {
        let b = buckets.get_mut(&r.line_of_business).expect("all lines present");
        b.loss += GulNfl::new(r.gul.value, r.nfl.value);
    }
    for e in exposures {
        let b = buckets.get_mut(&e.line_of_business).expect("all lines present");
        b.exposure += e.amounts();
    }
    let total = buckets
        .values()
        .fold(PortfolioBucket::default(), |acc, b| PortfolioBucket {
            loss: acc.loss + b.loss,
            exposure: acc.exposure + b.exposure,
        });
    Portfolio { buckets, total }
}
