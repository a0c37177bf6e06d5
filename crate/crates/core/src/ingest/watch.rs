//! Drop-directory ingestion of alert documents.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::Serialize;

use super::pager::{parse_pager_event, PagerDocument};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum WatchOutcome {
    Processed {
        file: PathBuf,
        event_id: String,
        version: u32,
    },
    Duplicate {
        file: PathBuf,
        event_id: String,
        version: u32,
    },
    Quarantined {
        file: PathBuf,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub at: DateTime<Utc>,
    pub file: PathBuf,
    pub message: String,
}

/// Watches `inbox` for `*.xml` alert documents. Handled files move to
/// `inbox/processed`, unreadable or failing ones to `inbox/errors`.
#[derive(Debug)]
pub struct DropWatcher {
    inbox: PathBuf,
    processed: PathBuf,
    errors: PathBuf,
    seen: HashSet<(String, u32)>,
    audit: Vec<AuditEntry>,
}

impl DropWatcher {
    pub fn new(inbox: impl Into<PathBuf>) -> Result<Self> {
        let inbox = inbox.into();
        let processed = inbox.join("processed");
        let errors = inbox.join("errors");
        for dir in [&inbox, &processed, &errors] {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(DropWatcher {
            inbox,
            processed,
            errors,
            seen: HashSet::new(),
            audit: Vec::new(),
        })
    }

    pub fn errors_dir(&self) -> &Path {
        &self.errors
    }

    pub fn processed_dir(&self) -> &Path {
        &self.processed
    }

    /// Records an alert handled elsewhere (for example via HTTP).
    pub fn mark_seen(&mut self, event_id: &str, version: u32) {
        self.seen.insert((event_id.to_string(), version));
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    /// Handles every document currently in the inbox, in file-name order.
    /// `handle` runs the estimation; returning [`Error::Duplicate`] marks the
    /// alert as already known, any other error quarantines the file.
    pub fn poll_once<F>(&mut self, mut handle: F) -> Result<Vec<WatchOutcome>>
    where
        F: FnMut(&PagerDocument) -> Result<()>,
    {
        let mut files: Vec<PathBuf> = fs::read_dir(&self.inbox)
            .map_err(|e| Error::io(&self.inbox, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("xml")))
            .collect();
        files.sort();

        let mut outcomes = Vec::with_capacity(files.len());
        for file in files {
            let outcome = self.handle_file(&file, &mut handle)?;
            outcomes.push(outcome);
        }
        Ok(outcomes)
    }

    fn handle_file<F>(&mut self, file: &Path, handle: &mut F) -> Result<WatchOutcome>
    where
        F: FnMut(&PagerDocument) -> Result<()>,
    {
        let parsed = fs::read_to_string(file)
            .map_err(|e| Error::io(file, e))
            .and_then(|text| parse_pager_event(&text));
        let doc = match parsed {
            Ok(doc) => doc,
            Err(e) => return self.quarantine(file, e.to_string()),
        };
        let key = (doc.header.event_id.clone(), doc.alert.version);
        let result = if self.seen.contains(&key) {
            Err(Error::Duplicate {
                event: key.0.clone(),
                version: key.1,
            })
        } else {
            handle(&doc)
        };
        match result {
            Ok(()) => {
                self.seen.insert(key.clone());
                let dest = move_unique(file, &self.processed)?;
                tracing::info!(event = %key.0, version = key.1, "alert processed");
                Ok(WatchOutcome::Processed {
                    file: dest,
                    event_id: key.0,
                    version: key.1,
                })
            }
            Err(Error::Duplicate { .. }) => {
                self.seen.insert(key.clone());
                let dest = move_unique(file, &self.processed)?;
                let message = format!("duplicate alert {} version {} ignored", key.0, key.1);
                tracing::warn!("{message}");
                self.audit.push(AuditEntry {
                    at: Utc::now(),
                    file: dest.clone(),
                    message,
                });
                Ok(WatchOutcome::Duplicate {
                    file: dest,
                    event_id: key.0,
                    version: key.1,
                })
            }
            Err(e) => self.quarantine(file, e.to_string()),
        }
    }

    fn quarantine(&mut self, file: &Path, reason: String) -> Result<WatchOutcome> {
        let dest = move_unique(file, &self.errors)?;
        let note = dest.with_extension("xml.error.txt");
        fs::write(&note, &reason).map_err(|e| Error::io(&note, e))?;
        tracing::error!(file = %dest.display(), %reason, "alert quarantined");
        self.audit.push(AuditEntry {
            at: Utc::now(),
            file: dest.clone(),
            message: format!("quarantined: {reason}"),
        });
        Ok(WatchOutcome::Quarantined { file: dest, reason })
    }
}

fn move_unique(file: &Path, dir: &Path) -> Result<PathBuf> {
    let name = file.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let mut dest = dir.join(&name);
    let mut n = 1;
    while dest.exists() {
        dest = dir.join(format!("{n}-{name}"));
        n += 1;
    }
    fs::rename(file, &dest).map_err(|e| Error::io(file, e))?;
    Ok(dest)
}
