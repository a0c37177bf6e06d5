//! Readers for alert documents, shake grids, the gazetteer, region
//! geometry and exposure tables, plus the drop-directory watcher.

mod exposure;
mod gazetteer;
mod geometry;
mod pager;
mod shakemap;
mod watch;

pub use exposure::ingest_exposure;
pub use gazetteer::{load_gazetteer, write_gazetteer, Gazetteer, GazetteerReport};
pub use geometry::{load_geometry, locate_in_region, GeometryIndex, Polygon, Ring};
pub use pager::{parse_pager_event, AlertCity, PagerDocument};
pub use shakemap::{extract_affected_cities, parse_shakemap_grid, GridPoint, ShakeGrid};
pub use watch::{AuditEntry, DropWatcher, WatchOutcome};

pub(crate) fn xml_error(e: roxmltree::Error) -> crate::error::Error {
    let pos = e.pos();
    crate::error::Error::Xml {
        line: pos.row,
        column: pos.col,
        message: e.to_string(),
    }
}

/// Reads a required attribute and parses it.
pub(crate) fn attr<T: std::str::FromStr>(node: roxmltree::Node<'_, '_>, name: &str) -> crate::error::Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = node.attribute(name).ok_or_else(|| {
        crate::error::Error::schema(
            name,
            format!("missing on <{}> at byte {}", node.tag_name().name(), node.range().start),
        )
    })?;
    raw.trim()
        .parse()
        .map_err(|e| crate::error::Error::schema(name, format!("cannot parse `{raw}`: {e}")))
}
