//! TOML configuration. Relative paths resolve against the config file's
//! directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use quakeloss_core::analytics::{DEFAULT_TARGET_YEAR, DEFAULT_ZETA};
use quakeloss_core::kml::{ColorRamp, Rgba, DEFAULT_PRISM_HEIGHT};
use quakeloss_core::model::GeoLevel;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_port")]
    pub port: u16,
    /// Holds the store file and the KML repository.
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    /// Dollar year of exposure and loss amounts.
    #[serde(default = "default_year")]
    pub reference_year: i32,
    #[serde(default = "default_year")]
    pub target_year: i32,
    #[serde(default)]
    pub cors_origin: Option<String>,
    /// Drop directory for alert documents, polled while serving.
    #[serde(default)]
    pub watch_dir: Option<PathBuf>,
    #[serde(default = "default_poll_seconds")]
    pub watch_interval_secs: u64,
    pub inputs: Inputs,
    #[serde(default)]
    pub analytics: Analytics,
    #[serde(default)]
    pub kml: KmlConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub gazetteer: PathBuf,
    pub curves: PathBuf,
    #[serde(default)]
    pub exposure: Option<PathBuf>,
    #[serde(default)]
    pub economic_series: Option<PathBuf>,
    /// `region_id,name,value` rows; a `population` row replaces the
    /// computed population of the region.
    #[serde(default)]
    pub static_indicators: Option<PathBuf>,
    /// GeoJSON file per region level (`county`, `state`, `country`).
    #[serde(default)]
    pub geometry: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Analytics {
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    #[serde(default)]
    pub zeta_by_country: BTreeMap<String, f64>,
}

impl Default for Analytics {
    fn default() -> Self {
        Analytics {
            zeta: DEFAULT_ZETA,
            zeta_by_country: BTreeMap::new(),
        }
    }
}

impl Analytics {
    pub fn zeta_for(&self, country: &str) -> f64 {
        self.zeta_by_country.get(country).copied().unwrap_or(self.zeta)
    }
}

/// Color stops for a layer, with an optional fixed domain. Without one the
/// domain spans the layer's values.
#[derive(Debug, Clone, PartialEq, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct RampConfig {
    pub stops: Vec<Rgba>,
    #[serde(default)]
    pub v_min: Option<f64>,
    #[serde(default)]
    pub v_max: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KmlConfig {
    #[serde(default = "default_prism_height")]
    pub prism_height: f64,
    #[serde(default)]
    pub ramps: BTreeMap<String, RampConfig>,
}

impl Default for KmlConfig {
    fn default() -> Self {
        KmlConfig {
            prism_height: DEFAULT_PRISM_HEIGHT,
            ramps: BTreeMap::new(),
        }
    }
}

impl KmlConfig {
    /// Configured ramp for `layer`, else the default heat ramp; the domain
    /// falls back to `values`' range.
    pub fn ramp(&self, layer: &str, values: impl Iterator<Item = f64>) -> quakeloss_core::Result<ColorRamp> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        let cfg = self.ramps.get(layer);
        let v_min = cfg.and_then(|c| c.v_min).unwrap_or(lo);
        let mut v_max = cfg.and_then(|c| c.v_max).unwrap_or(hi);
        if v_max <= v_min {
            v_max = v_min + 1.0;
        }
        match cfg {
            Some(c) => ColorRamp::new(c.stops.clone(), v_min, v_max),
            None => ColorRamp::heat(v_min, v_max),
        }
    }
}

fn default_port() -> u16 {
    8080
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("var")
}

fn default_year() -> i32 {
    DEFAULT_TARGET_YEAR
}

fn default_poll_seconds() -> u64 {
    5
}

fn default_zeta() -> f64 {
    DEFAULT_ZETA
}

fn default_prism_height() -> f64 {
    DEFAULT_PRISM_HEIGHT
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Config = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        if let Some(p) = &mut self.watch_dir {
            fix(p);
        }
        let i = &mut self.inputs;
        fix(&mut i.gazetteer);
        fix(&mut i.curves);
        for p in [&mut i.exposure, &mut i.economic_series, &mut i.static_indicators]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for p in i.geometry.values_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        for key in self.inputs.geometry.keys() {
            let level: GeoLevel = key.parse().map_err(|e| anyhow::anyhow!("geometry key `{key}`: {e}"))?;
            anyhow::ensure!(level != GeoLevel::City, "cities have no geometry file");
        }
        anyhow::ensure!(self.analytics.zeta > 0.0, "zeta must be positive");
        for (c, z) in &self.analytics.zeta_by_country {
            anyhow::ensure!(*z > 0.0, "zeta for {c} must be positive");
        }
        anyhow::ensure!(
            self.kml.prism_height.is_finite() && self.kml.prism_height >= 0.0,
            "prism_height must be non-negative"
        );
        for (layer, r) in &self.kml.ramps {
            anyhow::ensure!(r.stops.len() >= 2, "ramp `{layer}` needs two stops");
        }
        Ok(())
    }

    pub fn store_path(&self) -> PathBuf {
        self.data_dir.join("elev-db.json")
    }

    pub fn kml_dir(&self) -> PathBuf {
        self.data_dir.join("kml")
    }
}
