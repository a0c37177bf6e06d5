use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The document is not well-formed XML.
    #[error("xml parse error at line {line}, column {column}: {message}")]
    Xml { line: u32, column: u32, message: String },

    /// A mandatory field is missing or carries an invalid value.
    #[error("schema error in field `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("grid point ({lat}, {lon}) lies outside the declared bounds")]
    GridIntegrity { lat: f64, lon: f64 },

    #[error("shake grid contains no points")]
    EmptyGrid,

    #[error("validation error: {0}")]
    Validation(String),

    #[error("referential error: {0}")]
    Referential(String),

    #[error("region `{0}` has zero total population")]
    DegenerateRegion(String),

    #[error("no MDR curve loaded for country `{0}`")]
    MissingCurve(String),

    #[error("missing economic data for {country} in {year}")]
    MissingData { country: String, year: i32 },

    #[error("normalization multipliers are inconsistent: wealth x population = {product}, icw = {icw}")]
    InconsistentMultipliers { product: f64, icw: f64 },

    #[error("percent error is undefined for a zero normalized loss")]
    UndefinedPercentError,

    #[error("value {0} lies above the threshold ladder")]
    OutOfRange(f64),

    #[error("reference year mismatch: {0} vs {1}")]
    YearMismatch(i32, i32),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("duplicate alert {event} version {version}")]
    Duplicate { event: String, version: u32 },

    #[error("no geometry for region `{0}`")]
    MissingGeometry(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl Error {
    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
