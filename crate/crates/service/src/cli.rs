//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use quakeloss_core::analytics::{
    load_table1, normalize_loss, normalize_loss_with_tolerance, printed_consistency_tolerance, validate_table1,
    NormalizationMultipliers, Table1Report, DEFAULT_TARGET_YEAR, DEFAULT_ZETA,
};
use quakeloss_core::ingest::DropWatcher;
use quakeloss_core::kml::Technique;
use quakeloss_core::model::{GeoLevel, MonetaryAmount};

use crate::api::{self, ApiError};
use crate::config::Config;
use crate::engine::Engine;

#[derive(Debug, Parser)]
#[command(name = "quakeloss", version, about = "Post-event earthquake loss estimation")]
pub struct Cli {
    /// Configuration file.
    #[arg(long, global = true, default_value = "quakeloss.toml")]
    pub config: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        port: Option<u16>,
        /// Poll this directory for alert documents while serving.
        #[arg(long)]
        watch: Option<PathBuf>,
    },
    /// Estimate and store alert documents.
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Estimate one alert document and print the results without storing.
    Estimate {
        file: PathBuf,
        #[arg(long, default_value = "country")]
        level: GeoLevel,
    },
    /// Normalize a historic loss to the target year.
    Normalize(NormalizeArgs),
    /// Recompute the historic-event validation table.
    #[command(name = "validate-table1")]
    ValidateTable1 {
        #[arg(long, default_value = "data/table1.csv")]
        table: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ZETA)]
        zeta: f64,
    },
    /// Write a thematic KML layer for a stored alert.
    #[command(name = "emit-kml")]
    EmitKml {
        #[arg(long)]
        event: String,
        #[arg(long)]
        version: u32,
        #[arg(long, default_value = "mmi")]
        layer: String,
        #[arg(long, default_value = "choropleth")]
        technique: Technique,
        #[arg(long, default_value = "county")]
        level: GeoLevel,
        /// Output file; the document goes to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write every store table as CSV.
    #[command(name = "export-tables")]
    ExportTables { dir: PathBuf },
    /// Replace the store with CSV tables.
    #[command(name = "import-tables")]
    ImportTables { dir: PathBuf },
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    /// Loss in dollars of its own year.
    #[arg(long)]
    pub loss: f64,
    #[arg(long)]
    pub year: Option<i32>,
    #[arg(long, default_value_t = DEFAULT_TARGET_YEAR)]
    pub target: i32,
    /// Country code for multipliers taken from the economic series.
    #[arg(long)]
    pub country: Option<String>,
    /// Economic series CSV; defaults to the configured one.
    #[arg(long)]
    pub series: Option<PathBuf>,
    #[arg(long)]
    pub ipd: Option<f64>,
    #[arg(long)]
    pub icw: Option<f64>,
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub dp: Option<f64>,
    /// Decimal places the explicit multipliers were rounded to; widens the
    /// icw consistency check accordingly.
    #[arg(long, default_value_t = 4)]
    pub decimals: i32,
}

fn api_err(e: ApiError) -> anyhow::Error {
    anyhow::anyhow!("{}: {}", e.code, e.message)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Serve { host, port, watch } => {
            let mut config = Config::load(&cli.config)?;
            if let Some(p) = port {
                config.port = p;
            }
            if watch.is_some() {
                config.watch_dir = watch;
            }
            serve(config, &host)
        }
        Command::Ingest { files } => {
            let engine = Engine::open(Config::load(&cli.config)?)?;
            let mut out = std::io::stdout().lock();
            for f in files {
                let text = std::fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
                match engine.ingest_xml(&text) {
                    Ok(s) => writeln!(out, "{}", serde_json::to_string(&s)?)?,
                    Err(e) => bail!("{}: {e}", f.display()),
                }
            }
            Ok(())
        }
        Command::Estimate { file, level } => {
            let config = Config::load(&cli.config)?;
            let (reference, _) = crate::engine::load_reference(&config)?;
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let doc = quakeloss_core::ingest::parse_pager_event(&text)?;
            let est = quakeloss_core::pipeline::estimate(&doc, &reference)?;
            let rows: Vec<_> = est.losses.iter().filter(|r| r.level == level).collect();
            let body = serde_json::json!({
                "event": est.header.event_id,
                "version": est.alert.version,
                "totals": est.totals,
                "unplaced": est.unplaced,
                "hazard": est.indicators.iter().filter(|r| r.level == level).collect::<Vec<_>>(),
                "losses": rows,
            });
            println!("{}", serde_json::to_string_pretty(&body)?);
            Ok(())
        }
        Command::Normalize(args) => {
            let (d, m) = normalize(&cli.config, &args)?;
            println!("multipliers: ipd={} icw={:?} w={} dp={}", m.ipd, m.icw, m.wealth, m.pop);
            println!("normalized loss ({}): {d:.4}", args.target);
            Ok(())
        }
        Command::ValidateTable1 { table, zeta } => {
            let f = std::fs::File::open(&table).with_context(|| format!("opening {}", table.display()))?;
            let report = validate_table1(&load_table1(f)?, zeta)?;
            print!("{}", format_table1(&report));
            Ok(())
        }
        Command::EmitKml {
            event,
            version,
            layer,
            technique,
            level,
            out,
        } => {
            let engine = Engine::open(Config::load(&cli.config)?)?;
            let (text, _, _) =
                api::kml_document(&engine, &event, version, &layer, technique, level).map_err(api_err)?;
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::ExportTables { dir } => {
            let engine = Engine::open(Config::load(&cli.config)?)?;
            engine.db.export_csv(&dir)?;
            Ok(())
        }
        Command::ImportTables { dir } => {
            let config = Config::load(&cli.config)?;
            let db = quakeloss_core::store::ElevDb::open(config.store_path())?;
            db.import_csv(&dir)?;
            Ok(())
        }
    }
}

/// Multipliers from explicit flags, else from the economic series.
pub fn normalize(config_path: &Path, a: &NormalizeArgs) -> anyhow::Result<(f64, NormalizationMultipliers)> {
    let amount = MonetaryAmount::from_f64(a.loss, a.year.unwrap_or(0))?;
    let m = match (a.ipd, a.w, a.dp) {
        (Some(ipd), Some(w), Some(dp)) => {
            let m = NormalizationMultipliers::new(ipd, a.icw, w, dp)?;
            let tol = printed_consistency_tolerance(&m, a.decimals);
            let d = normalize_loss_with_tolerance(amount, &m, a.target, tol)?;
            return Ok((d.to_f64(), m));
        }
        (None, None, None) => {
            let (Some(country), Some(year)) = (&a.country, a.year) else {
                bail!("give --ipd, --w and --dp, or --country and --year");
            };
            let path = match &a.series {
                Some(p) => p.clone(),
                None => Config::load(config_path)?
                    .inputs
                    .economic_series
                    .context("no economic series configured; pass --series")?,
            };
            let f = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            let all = quakeloss_core::analytics::load_economic_series(f)?;
            let series = all.get(country).with_context(|| format!("no series for {country}"))?;
            NormalizationMultipliers::from_series(series, year, a.target)?
        }
        _ => bail!("--ipd, --w and --dp go together"),
    };
    let d = normalize_loss(amount, &m, a.target)?;
    Ok((d.to_f64(), m))
}

pub fn format_table1(r: &Table1Report) -> String {
    let mut s = String::new();
    s.push_str("normalized losses (millions, target-year dollars)\n");
    for n in &r.normalizations {
        s.push_str(&format!(
            "  {:<30} {:<16} recomputed {:>12.4}  printed {:>12.4}  rel {:+.2e}\n",
            n.region, n.country, n.recomputed, n.printed, n.relative_error
        ));
    }
    for c in &r.composites {
        s.push_str(&format!(
            "  {:<30} sum of parts {:.4}  printed {:.4}\n",
            c.region, c.sum_of_parts, c.printed
        ));
    }
    s.push_str(&format!("events (zeta {})\n", r.zeta));
    for e in &r.events {
        s.push_str(&format!(
            "  {:<30} {} pct error {:>9.2} (printed {:>9.2})  bins {} / {}  {}\n",
            e.region,
            e.date,
            e.percent_error,
            e.printed_percent_error,
            e.normalized_bin,
            e.predicted_bin,
            if e.same_bin() { "same" } else { "differ" }
        ));
    }
    s.push_str(&format!(
        "same bucket: {} of {} events\n",
        r.same_bin_count(),
        r.events.len()
    ));
    s
}

fn serve(config: Config, host: &str) -> anyhow::Result<()> {
    let engine = Arc::new(Engine::open(config)?);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;

    if let Some(dir) = engine.config.watch_dir.clone() {
        let mut watcher = DropWatcher::new(&dir)?;
        let engine = engine.clone();
        let interval = Duration::from_secs(engine.config.watch_interval_secs.max(1));
        std::thread::spawn(move || loop {
            match watcher.poll_once(|doc| engine.ingest_document(doc).map(|_| ())) {
                Ok(outcomes) if !outcomes.is_empty() => tracing::info!(count = outcomes.len(), "drop directory polled"),
                Ok(_) => {}
                Err(e) => tracing::error!(error = %e, "drop directory poll failed"),
            }
            std::thread::sleep(interval);
        });
        tracing::info!(dir = %dir.display(), "watching for alert documents");
    }

    runtime.block_on(async move {
        let addr = format!("{host}:{}", engine.config.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        tracing::info!(%addr, "listening");
        axum::serve(listener, api::router(engine))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
