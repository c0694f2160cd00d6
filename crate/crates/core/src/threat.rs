//! Threat level (INFOCON 5..1) and the policy it drives.
//!
//! | level | required identifiers                     | decoys |
//! |-------|------------------------------------------|--------|
//! | 5     | mac                                      | 1      |
//! | 4     | mac, ip                                  | 2      |
//! | 3     | mac, ip, hostname                        | 3      |
//! | 2     | mac, ip, hostname, user_id               | 4      |
//! | 1     | mac, ip, hostname, user_id, quad_hash    | 5      |

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::audit::{AuditLog, EventKind, NewEvent};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::identity::{Identifier, IdentifierSet};

/// 5 is the lowest threat, 1 the highest. A lower value is stricter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct InfoconLevel(u8);

impl InfoconLevel {
    pub const LOWEST_THREAT: InfoconLevel = InfoconLevel(5);
    pub const HIGHEST_THREAT: InfoconLevel = InfoconLevel(1);
    /// From least to most strict.
    pub const ALL: [InfoconLevel; 5] = [
        InfoconLevel(5),
        InfoconLevel(4),
        InfoconLevel(3),
        InfoconLevel(2),
        InfoconLevel(1),
    ];

    pub fn new(value: u8) -> Result<Self> {
        if (1..=5).contains(&value) {
            Ok(InfoconLevel(value))
        } else {
            Err(Error::InvalidInput(format!(
                "threat level {value} outside 1..=5"
            )))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn is_stricter_than(self, other: InfoconLevel) -> bool {
        self.0 < other.0
    }
}

impl TryFrom<u8> for InfoconLevel {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        InfoconLevel::new(value)
    }
}

impl From<InfoconLevel> for u8 {
    fn from(level: InfoconLevel) -> u8 {
        level.0
    }
}

impl fmt::Display for InfoconLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::str::FromStr for InfoconLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let value: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("threat level {s:?} is not a number")))?;
        InfoconLevel::new(value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyEntry {
    pub level: InfoconLevel,
    pub required: IdentifierSet,
    pub decoy_count: u32,
}

pub fn required_identifiers(level: InfoconLevel) -> IdentifierSet {
    let n = 6 - level.value() as usize;
    Identifier::ALL[..n].iter().copied().collect()
}

pub fn decoy_count(level: InfoconLevel) -> u32 {
    6 - level.value() as u32
}

pub fn policy_table() -> [PolicyEntry; 5] {
    InfoconLevel::ALL.map(|level| PolicyEntry {
        level,
        required: required_identifiers(level),
        decoy_count: decoy_count(level),
    })
}

/// Current level, persisted as a single digit plus newline in the level file.
#[derive(Debug)]
pub struct ThreatState {
    level: AtomicU8,
    path: PathBuf,
    writer: Mutex<()>,
    audit: Arc<AuditLog>,
}

impl ThreatState {
    /// Loads the level file; a missing file is created at level 5.
    pub fn open(path: impl Into<PathBuf>, audit: Arc<AuditLog>) -> Result<Self> {
        let path = path.into();
        let level = match std::fs::read_to_string(&path) {
            Ok(text) => parse_level_file(&path, &text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                write_level_file(&path, InfoconLevel::LOWEST_THREAT)?;
                InfoconLevel::LOWEST_THREAT
            }
            Err(e) => return Err(Error::io(&path, e)),
        };
        Ok(ThreatState {
            level: AtomicU8::new(level.value()),
            path,
            writer: Mutex::new(()),
            audit,
        })
    }

    pub fn get_level(&self) -> InfoconLevel {
        InfoconLevel(self.level.load(Ordering::Acquire))
    }

    /// Persists `level` and records a `level_changed` event if it differs
    /// from the current level. Returns whether the level changed.
    pub fn set_level(&self, level: InfoconLevel, reason: &str) -> Result<bool> {
        let _guard = self.writer.lock().unwrap();
        let old = self.get_level();
        if old == level {
            return Ok(false);
        }
        write_level_file(&self.path, level)?;
        self.level.store(level.value(), Ordering::Release);
        let event =
            NewEvent::new(EventKind::LevelChanged).detail(format!("{old} -> {level}: {reason}"));
        if let Err(e) = self.audit.record(event) {
            tracing::error!(error = %e, "failed to audit level change");
        }
        Ok(true)
    }

    /// Applies a feed file of the form `LEVEL=<1..5>`. A malformed feed
    /// leaves the level alone and records a `feed_warning` event.
    pub fn ingest_feed(&self, feed: &Path) -> Result<Option<InfoconLevel>> {
        let text = std::fs::read_to_string(feed).map_err(|e| Error::io(feed, e))?;
        match parse_feed(&text) {
            Some(level) => {
                let changed = self.set_level(level, &format!("feed {}", feed.display()))?;
                Ok(changed.then_some(level))
            }
            None => {
                let shown: String = text.chars().take(80).collect();
                let event = NewEvent::new(EventKind::FeedWarning)
                    .detail(format!("malformed feed {}: {shown:?}", feed.display()));
                if let Err(e) = self.audit.record(event) {
                    tracing::error!(error = %e, "failed to audit feed warning");
                }
                Ok(None)
            }
        }
    }
}

fn parse_feed(text: &str) -> Option<InfoconLevel> {
    let line = text.strip_suffix('\n').unwrap_or(text);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let value = line.strip_prefix("LEVEL=")?;
    if value.len() != 1 {
        return None;
    }
    InfoconLevel::new(value.parse().ok()?).ok()
}

fn parse_level_file(path: &Path, text: &str) -> Result<InfoconLevel> {
    text.trim_end_matches('\n')
        .parse::<InfoconLevel>()
        .map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
}

fn write_level_file(path: &Path, level: InfoconLevel) -> Result<()> {
    fsutil::atomic_write(path, format!("{level}\n").as_bytes())
}
