//! Acceptance criteria, one line each. Run with
//! `cargo test -p quakeloss-service --test acceptance`.

mod common;
#[path = "../../core/tests/common/synth.rs"]
mod synth;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use axum::http::StatusCode;
use quakeloss_core::analytics::{
    bucket_probabilities, default_ladder, load_table1, normalize_loss_with_tolerance, printed_consistency_tolerance,
    standard_normal_cdf, threshold_probability, validate_table1, LossDistribution, LossThreshold,
    NormalizationMultipliers, DEFAULT_ZETA,
};
use quakeloss_core::hazard::{aggregate_mmi, hazard_field};
use quakeloss_core::ingest::extract_affected_cities;
use quakeloss_core::loss::{aggregate_losses, compute_city_loss, disaggregate_exposure, GulNfl};
use quakeloss_core::model::{GeoLevel, LineOfBusiness, MonetaryAmount, PopulationCentre};
use quakeloss_core::pipeline::city_exposure;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synth::*;

type Check = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ferndale() -> Check {
    let m = NormalizationMultipliers::new(1.0352, Some(0.9850), 0.9683, 1.0172).map_err(|e| e.to_string())?;
    let d = normalize_loss_with_tolerance(
        MonetaryAmount::from_f64(25.0, 2010).unwrap(),
        &m,
        2012,
        printed_consistency_tolerance(&m, 4),
    )
    .map_err(|e| e.to_string())?
    .to_f64();
    ensure((d - 25.4904).abs() <= 0.0005, || {
        format!("got {d:.6}, want 25.4904 +- 0.0005")
    })?;
    Ok(format!("{d:.4}"))
}

fn table1() -> (
    Vec<quakeloss_core::analytics::Table1Row>,
    quakeloss_core::analytics::Table1Report,
) {
    let rows = load_table1(std::fs::File::open(common::fixture("data/table1.csv")).unwrap()).unwrap();
    let report = validate_table1(&rows, DEFAULT_ZETA).unwrap();
    (rows, report)
}

fn table1_multipliers() -> Check {
    let (rows, report) = table1();
    ensure(report.normalizations.len() == 11, || {
        format!("{} rows with multipliers, want 11", report.normalizations.len())
    })?;
    let with_m: Vec<_> = rows.iter().filter(|r| r.ipd.is_some()).collect();
    let mut worst: f64 = 0.0;
    for (row, n) in with_m.iter().zip(&report.normalizations) {
        let direct = row.d_y * row.ipd.unwrap() * row.w.unwrap() * row.dp.unwrap();
        ensure(rel_diff(direct, n.recomputed) <= 1e-9, || {
            format!("{}: library {} vs product {direct}", n.region, n.recomputed)
        })?;
        let rel = (direct - row.d_2012).abs() / row.d_2012;
        ensure(rel <= 5e-4, || {
            format!("{} {}: {direct:.4} vs printed {:.4}", n.region, n.country, row.d_2012)
        })?;
        worst = worst.max(rel);
    }
    let c = report.composites.first().ok_or("no composite row")?;
    ensure(
        (c.sum_of_parts - 421.4479).abs() <= 0.001 && (c.sum_of_parts - c.printed).abs() <= 0.001,
        || format!("composite {} vs printed {}", c.sum_of_parts, c.printed),
    )?;
    Ok(format!("11 rows, max rel {worst:.2e}; composite {:.4}", c.sum_of_parts))
}

fn table1_percent_error() -> Check {
    let (_, report) = table1();
    ensure(report.events.len() == 10, || format!("{} events", report.events.len()))?;
    let mut worst: f64 = 0.0;
    for e in &report.events {
        let direct = (e.predicted - e.normalized) / e.normalized * 100.0;
        ensure((direct - e.percent_error).abs() <= 1e-9, || {
            format!("{}: library disagrees", e.region)
        })?;
        let diff = (e.percent_error - e.printed_percent_error).abs();
        ensure(diff <= 0.05, || {
            format!(
                "{} {}: {:.4} vs printed {:.2}",
                e.region, e.date, e.percent_error, e.printed_percent_error
            )
        })?;
        worst = worst.max(diff);
    }
    Ok(format!("10 events, max diff {worst:.4} pp"))
}

fn same_bin() -> Check {
    let (_, report) = table1();
    // decade buckets computed from scratch: (0,1] -> 0, (10^(k-1), 10^k] -> k
    let bin = |v: f64| if v <= 1.0 { 0 } else { v.log10().ceil() as usize };
    let mut same = 0;
    for e in &report.events {
        ensure(
            bin(e.normalized) == e.normalized_bin && bin(e.predicted) == e.predicted_bin,
            || format!("{}: bin oracle disagrees", e.region),
        )?;
        same += usize::from(bin(e.normalized) == bin(e.predicted));
    }
    ensure(same == 5 && report.same_bin_count() == 5, || {
        format!("{same} of {} in the same bucket", report.events.len())
    })?;
    Ok(format!("{same} of {} events", report.events.len()))
}

fn weighted_mean_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let ev = synth_event(&mut rng, &HAZARD);
        let pairs = ev.pairs();
        let field = hazard_field("e", 1, &pairs).map_err(|e| e.to_string())?;

        // bounds
        for level in [GeoLevel::County, GeoLevel::State, GeoLevel::Country] {
            for (unit, v) in field.level(level) {
                let m: Vec<f64> = pairs
                    .iter()
                    .filter(|(c, _)| c.parent_ids.get(&level).map(String::as_str) == Some(unit))
                    .map(|(_, m)| m.value())
                    .collect();
                let (lo, hi) = m
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| (a.0.min(*v), a.1.max(*v)));
                ensure(lo <= v && v <= hi, || {
                    format!("instance {i}: {unit} = {v} outside [{lo}, {hi}]")
                })?;
            }
        }

        // permutation
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rng);
        let permuted = hazard_field("e", 1, &shuffled).unwrap();

        // population scaling
        let k = rng.gen_range(2..1000u64);
        let scaled: Vec<PopulationCentre> = ev
            .centres
            .iter()
            .map(|c| PopulationCentre {
                population: c.population * k,
                ..c.clone()
            })
            .collect();
        let scaled_pairs: Vec<_> = scaled.iter().zip(ev.mmi.iter().copied()).collect();
        let rescaled = hazard_field("e", 1, &scaled_pairs).unwrap();

        for (level, values) in &field.values {
            for (unit, v) in values {
                for (name, other) in [("permutation", &permuted), ("scaling", &rescaled)] {
                    let d = rel_diff(*v, other.get(*level, unit).unwrap());
                    worst = worst.max(d);
                    ensure(d <= 1e-12, || format!("instance {i}: {name} changed {unit} by {d:e}"))?;
                }
            }
        }

        // hierarchical consistency
        let mmi: BTreeMap<String, f64> = pairs.iter().map(|(c, m)| (c.id.clone(), m.value())).collect();
        let pops: BTreeMap<String, f64> = ev.centres.iter().map(|c| (c.id.clone(), c.population as f64)).collect();
        for level in [GeoLevel::State, GeoLevel::Country] {
            for (unit, v) in aggregate_mmi(&mmi, &pops, &grouping(&ev.centres, level)).unwrap() {
                let d = rel_diff(v, field.get(level, &unit).unwrap());
                worst = worst.max(d);
                ensure(d <= 1e-12, || {
                    format!("instance {i}: {unit} from cities differs by {d:e}")
                })?;
            }
        }
    }
    Ok(format!("1000 instances x 4 properties, max rel {worst:.1e}"))
}

fn conservation_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let ev = synth_event(&mut rng, &CONSERVATION);
        for rec in ev.exposures.iter().filter(|e| e.level != GeoLevel::City) {
            let shares = disaggregate_exposure(rec, &ev.hierarchy.members_of(rec.level, &rec.region_id)).unwrap();
            let back: GulNfl = shares.values().copied().sum();
            ensure(back == rec.amounts(), || {
                format!("instance {i}: {} split sums to {back:?}", rec.region_id)
            })?;
        }
        let exposure = city_exposure(&ev.hierarchy, &ev.exposures).map_err(|e| e.to_string())?;
        for lob in LineOfBusiness::ALL {
            let Some(cities) = exposure.get(&lob) else { continue };
            let losses: BTreeMap<String, GulNfl> = cities
                .iter()
                .map(|(id, e)| (id.clone(), compute_city_loss(rng.gen_range(0.0..=1.0), *e).unwrap()))
                .collect();
            let rolled = aggregate_losses(&losses, &ev.hierarchy).unwrap();
            let city: GulNfl = losses.values().copied().sum();
            for level in [GeoLevel::County, GeoLevel::State, GeoLevel::Country] {
                let sum: GulNfl = rolled.iter().filter(|((l, _), _)| *l == level).map(|(_, v)| *v).sum();
                use rust_decimal::prelude::ToPrimitive;
                let d = rel_diff(sum.gul.to_f64().unwrap(), city.gul.to_f64().unwrap())
                    .max(rel_diff(sum.nfl.to_f64().unwrap(), city.nfl.to_f64().unwrap()));
                worst = worst.max(d);
                ensure(d <= 1e-9, || format!("instance {i}: {level:?} total off by {d:e}"))?;
            }
        }
    }
    Ok(format!("1000 events, exposure round trip exact, max rel {worst:.1e}"))
}

fn probability_suite() -> Check {
    let mut worst_cdf: f64 = 0.0;
    for i in 0..=16_000 {
        let x = -8.0 + i as f64 * 1e-3;
        worst_cdf = worst_cdf.max((standard_normal_cdf(x) - reference_normal_cdf(x)).abs());
    }
    ensure(worst_cdf <= 1e-12, || format!("CDF error {worst_cdf:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let ladder = default_ladder();
    let (mut worst_tel, mut worst_quad): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let predicted = 10f64.powf(rng.gen_range(-1.0..5.5));
        let zeta = rng.gen_range(0.1..1.5);
        let d = LossDistribution::from_predicted(predicted, zeta).unwrap();

        let half = threshold_probability(&d, &LossThreshold::new(0.0, predicted).unwrap());
        ensure(half == 0.5, || format!("median case gave {half}"))?;

        let probs = bucket_probabilities(&d, &ladder);
        let z = |v: f64| {
            if v == 0.0 {
                f64::NEG_INFINITY
            } else {
                (v.ln() - d.mu_ln_loss) / zeta
            }
        };
        let top = standard_normal_cdf(z(ladder.last().unwrap().upper));
        worst_tel = worst_tel.max((probs.iter().sum::<f64>() - top).abs());
        for k in 1..ladder.len() {
            let joined = threshold_probability(&d, &LossThreshold::new(ladder[k - 1].lower, ladder[k].upper).unwrap());
            worst_tel = worst_tel.max((probs[k - 1] + probs[k] - joined).abs());
        }
        for (t, p) in ladder.iter().zip(&probs) {
            worst_quad = worst_quad.max((p - simpson_normal_mass(z(t.lower), z(t.upper))).abs());
        }
    }
    ensure(worst_tel <= 1e-12, || format!("telescoping off by {worst_tel:e}"))?;
    ensure(worst_quad <= 1e-6, || format!("quadrature off by {worst_quad:e}"))?;
    Ok(format!(
        "cdf {worst_cdf:.1e}, telescoping {worst_tel:.1e}, quadrature {worst_quad:.1e}"
    ))
}

fn end_to_end() -> Check {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap();
    rt.block_on(async {
        let a1 = common::read_fixture("fixtures/synthetic/pager_a1.xml");
        let h = common::Harness::new();
        let (s, _) = h.post("/ingest/pager", a1.clone()).await;
        ensure(s == StatusCode::OK, || format!("POST returned {s}"))?;

        let oracle = common::oracle_losses("fixtures/synthetic/pager_a1.xml");
        let mut compared = 0;
        for level in ["city", "county", "state", "country"] {
            let (s, body) = h
                .get_json(&format!("/events/zz2012abcd/alerts/1/losses?level={level}"))
                .await;
            ensure(s == StatusCode::OK, || format!("GET {level} returned {s}"))?;
            let want: BTreeMap<&str, _> = oracle
                .iter()
                .filter(|((l, _), _)| l == level)
                .map(|((_, u), v)| (u.as_str(), *v))
                .collect();
            let rows = body["rows"].as_array().unwrap();
            let got: BTreeMap<&str, _> = rows
                .iter()
                .map(|r| {
                    (
                        r["unit"].as_str().unwrap(),
                        (common::dec(&r["gul"]), common::dec(&r["nfl"])),
                    )
                })
                .filter(|(_, (g, n))| !(g.is_zero() && n.is_zero()))
                .collect();
            let want_nz: BTreeMap<&str, _> = want
                .into_iter()
                .filter(|(_, (g, n))| !(g.is_zero() && n.is_zero()))
                .collect();
            ensure(got == want_nz, || format!("{level}: {got:?} vs oracle {want_nz:?}"))?;
            let total = (common::dec(&body["totals"]["gul"]), common::dec(&body["totals"]["nfl"]));
            let oracle_total = want_nz.values().fold(
                Default::default(),
                |a: (rust_decimal::Decimal, rust_decimal::Decimal), v| (a.0 + v.0, a.1 + v.1),
            );
            ensure(total == oracle_total, || {
                format!("{level} totals {total:?} vs oracle {oracle_total:?}")
            })?;
            compared += got.len();
        }

        let (s, _) = h.post("/ingest/pager", a1.clone()).await;
        ensure(s == StatusCode::CONFLICT, || format!("repeat POST returned {s}"))?;

        let fresh = common::Harness::new();
        fresh.post("/ingest/pager", a1).await;
        let mut docs = 0;
        for layer in ["mmi", "mdr", "gul", "nfl", "population"] {
            for technique in ["choropleth", "prism", "pushpin"] {
                let uri = format!("/events/zz2012abcd/alerts/1/kml?layer={layer}&technique={technique}");
                let (s1, _, first) = h.call("GET", &uri, None).await;
                let (_, _, cached) = h.call("GET", &uri, None).await;
                let (_, _, regenerated) = fresh.call("GET", &uri, None).await;
                ensure(s1 == StatusCode::OK, || format!("{uri}: {s1}"))?;
                ensure(first == cached && first == regenerated, || {
                    format!("{uri}: output differs between generations")
                })?;
                let text = std::str::from_utf8(&first).map_err(|e| e.to_string())?;
                let doc = roxmltree::Document::parse(text).map_err(|e| format!("{uri}: {e}"))?;
                ensure(doc.root_element().has_tag_name("kml"), || {
                    format!("{uri}: root is not kml")
                })?;
                docs += 1;
            }
        }
        Ok(format!(
            "{compared} unit totals match the oracle, 409 on repeat, {docs} KML documents stable"
        ))
    })
}

fn ingest_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let mut inside = 0;
    for i in 0..20 {
        let grid = synth_grid(&mut rng);
        let centres = centres_around(&mut rng, &grid, 200);
        let got = extract_affected_cities(&grid, &centres);
        let want = brute_force_nearest(&grid, &centres);
        ensure(got == want, || {
            format!(
                "grid {i}: {} vs {} centres or differing intensities",
                got.len(),
                want.len()
            )
        })?;
        inside += got.len();
    }
    Ok(format!("20 grids, {inside} centres inside matched"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("Ferndale normalization", Duration::from_secs(1), ferndale),
        (
            "Table 1 multiplier regression",
            Duration::from_secs(1),
            table1_multipliers,
        ),
        (
            "Table 1 percent-error regression",
            Duration::from_secs(1),
            table1_percent_error,
        ),
        ("Same-bin claim", Duration::from_secs(1), same_bin),
        (
            "Weighted-mean intensity property suite",
            Duration::from_secs(5),
            weighted_mean_suite,
        ),
        ("Conservation suite", Duration::from_secs(5), conservation_suite),
        ("Threshold probability suite", Duration::from_secs(5), probability_suite),
        ("End-to-end fixture", Duration::from_secs(10), end_to_end),
        ("Ingest oracle", Duration::from_secs(10), ingest_oracle),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        let result = result.and_then(|d| {
            if took <= budget {
                Ok(d)
            } else {
                Err(format!("{d}; took {took:.2?}, budget {budget:?}"))
            }
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{took:.2?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{took:.2?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
