//! Append-only audit log: one JSON object per line in `audit.log`.
//!
//! Sequence numbers start at 1 and increase without gaps. Decoy-served
//! events are fsynced before `record` returns; other events are synced in
//! batches of [`SYNC_BATCH`]. The file is locked for the duration of each
//! append, so a second process appending to the same vault continues the
//! sequence instead of forking it.
//!
//! A crash can leave a partial final line. Opening the log reports it and
//! truncates it away so later appends start on a clean line boundary.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identity::{HostIdentity, IdentifierSet};

pub const SYNC_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Download,
    ShareCreate,
    ShareRedeem,
    LevelChanged,
    FeedWarning,
    Upload,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::Download,
        EventKind::ShareCreate,
        EventKind::ShareRedeem,
        EventKind::LevelChanged,
        EventKind::FeedWarning,
        EventKind::Upload,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Download => "download",
            EventKind::ShareCreate => "share_create",
            EventKind::ShareRedeem => "share_redeem",
            EventKind::LevelChanged => "level_changed",
            EventKind::FeedWarning => "feed_warning",
            EventKind::Upload => "upload",
        }
    }
}

impl std::str::FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown event kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    OriginalServed,
    DecoyServed,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::OriginalServed => "original_served",
            Outcome::DecoyServed => "decoy_served",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub kind: EventKind,
    pub object_id: Option<String>,
    pub presented_identity: Option<HostIdentity>,
    pub required: IdentifierSet,
    pub matched: IdentifierSet,
    pub outcome: Option<Outcome>,
    pub detail: String,
}

/// An event before it has been assigned a sequence number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewEvent {
    pub at: DateTime<Utc>,
    pub kind: EventKind,
    pub object_id: Option<String>,
    pub presented_identity: Option<HostIdentity>,
    pub required: IdentifierSet,
    pub matched: IdentifierSet,
    pub outcome: Option<Outcome>,
    pub detail: String,
}

impl NewEvent {
    pub fn new(kind: EventKind) -> Self {
        NewEvent {
            at: Utc::now(),
            kind,
            object_id: None,
            presented_identity: None,
            required: IdentifierSet::EMPTY,
            matched: IdentifierSet::EMPTY,
            outcome: None,
            detail: String::new(),
        }
    }

    pub fn at(mut self, at: DateTime<Utc>) -> Self {
        self.at = at;
        self
    }

    pub fn object(mut self, object_id: impl Into<String>) -> Self {
        self.object_id = Some(object_id.into());
        self
    }

    pub fn presented(mut self, identity: HostIdentity) -> Self {
        self.presented_identity = Some(identity);
        self
    }

    pub fn verdict(
        mut self,
        required: IdentifierSet,
        matched: IdentifierSet,
        outcome: Outcome,
    ) -> Self {
        self.required = required;
        self.matched = matched;
        self.outcome = Some(outcome);
        self
    }

    pub fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    fn with_seq(self, seq: u64) -> AuditEvent {
        AuditEvent {
            seq,
            at: self.at,
            kind: self.kind,
            object_id: self.object_id,
            presented_identity: self.presented_identity,
            required: self.required,
            matched: self.matched,
            outcome: self.outcome,
            detail: self.detail,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditQuery {
    pub kind: Option<EventKind>,
    pub object_id: Option<String>,
    pub since: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
}

impl AuditQuery {
    pub fn kind(kind: EventKind) -> Self {
        AuditQuery {
            kind: Some(kind),
            ..Default::default()
        }
    }

    pub fn matches(&self, event: &AuditEvent) -> bool {
        self.kind.is_none_or(|k| k == event.kind)
            && self
                .object_id
                .as_ref()
                .is_none_or(|id| event.object_id.as_ref() == Some(id))
            && self.since.is_none_or(|t| event.at >= t)
            && self.until.is_none_or(|t| event.at < t)
    }
}

/// What opening the log found.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Recovery {
    pub events: u64,
    /// Bytes of a torn final line that were cut off.
    pub truncated_tail_bytes: u64,
    /// Complete lines that failed to parse (left in place, skipped).
    pub unparseable_lines: u64,
}

#[derive(Debug)]
struct Appender {
    file: File,
    next_seq: u64,
    known_len: u64,
    unsynced: usize,
}

#[derive(Debug)]
pub struct AuditLog {
    path: PathBuf,
    appender: Mutex<Appender>,
    recovery: Recovery,
}

/// Parses complete lines of `bytes`. Returns the byte length of the parsed
/// prefix (up to the last newline), the highest sequence number seen and the
/// number of unparseable complete lines.
fn parse_lines(bytes: &[u8]) -> (u64, Option<u64>, u64, Vec<AuditEvent>) {
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut max_seq = None;
    let mut bad = 0;
    let mut events = Vec::new();
    for line in bytes[..complete].split(|&b| b == b'\n') {
        if line.is_empty() {
            continue;
        }
        match serde_json::from_slice::<AuditEvent>(line) {
            Ok(e) => {
                max_seq = max_seq.max(Some(e.seq));
                events.push(e);
            }
            Err(_) => bad += 1,
        }
    }
    (complete as u64, max_seq, bad, events)
}

impl AuditLog {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        file.lock().map_err(|e| Error::io(&path, e))?;
        let result = (|| -> Result<(Appender, Recovery)> {
            let mut bytes = Vec::new();
            file.read_to_end(&mut bytes)
                .map_err(|e| Error::io(&path, e))?;
            let (complete, max_seq, bad, events) = parse_lines(&bytes);
            let tail = bytes.len() as u64 - complete;
            if tail > 0 {
                tracing::warn!(path = %path.display(), bytes = tail, "dropping torn final audit line");
                file.set_len(complete).map_err(|e| Error::io(&path, e))?;
                file.sync_all().map_err(|e| Error::io(&path, e))?;
            }
            if bad > 0 {
                tracing::warn!(path = %path.display(), lines = bad, "unparseable audit lines");
            }
            Ok((
                Appender {
                    file: file.try_clone().map_err(|e| Error::io(&path, e))?,
                    next_seq: max_seq.unwrap_or(0) + 1,
                    known_len: complete,
                    unsynced: 0,
                },
                Recovery {
                    events: events.len() as u64,
                    truncated_tail_bytes: tail,
                    unparseable_lines: bad,
                },
            ))
        })();
        let _ = file.unlock();
        let (appender, recovery) = result?;
        Ok(AuditLog {
            path,
            appender: Mutex::new(appender),
            recovery,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn recovery(&self) -> &Recovery {
        &self.recovery
    }

    /// Appends `event` with the next sequence number and returns that number.
    pub fn record(&self, event: NewEvent) -> Result<u64> {
        let mut app = self.appender.lock().unwrap();
        let path = &self.path;
        app.file.lock().map_err(|e| Error::io(path, e))?;
        let result = (|| -> Result<u64> {
            let len = app.file.metadata().map_err(|e| Error::io(path, e))?.len();
            if len != app.known_len {
                // Another appender wrote since our last append.
                let mut reader = app.file.try_clone().map_err(|e| Error::io(path, e))?;
                reader
                    .seek(SeekFrom::Start(app.known_len.min(len)))
                    .map_err(|e| Error::io(path, e))?;
                let mut bytes = Vec::new();
                reader
                    .read_to_end(&mut bytes)
                    .map_err(|e| Error::io(path, e))?;
                let (_, max_seq, _, _) = parse_lines(&bytes);
                if let Some(seq) = max_seq {
                    app.next_seq = app.next_seq.max(seq + 1);
                }
            }
            let seq = app.next_seq;
            let durable = event.outcome == Some(Outcome::DecoyServed);
            let mut line = serde_json::to_vec(&event.with_seq(seq)).expect("event serializes");
            line.push(b'\n');
            app.file.write_all(&line).map_err(|e| Error::io(path, e))?;
            app.unsynced += 1;
            if durable || app.unsynced >= SYNC_BATCH {
                app.file.sync_data().map_err(|e| Error::io(path, e))?;
                app.unsynced = 0;
            }
            app.next_seq = seq + 1;
            app.known_len = len + line.len() as u64;
            Ok(seq)
        })();
        let _ = app.file.unlock();
        result
    }

    /// Forces batched events to disk.
    pub fn sync(&self) -> Result<()> {
        let mut app = self.appender.lock().unwrap();
        app.file.sync_data().map_err(|e| Error::io(&self.path, e))?;
        app.unsynced = 0;
        Ok(())
    }

    /// Matching events in sequence order; zero-based `page` of `page_size`.
    pub fn query(
        &self,
        filter: &AuditQuery,
        page: usize,
        page_size: usize,
    ) -> Result<Vec<AuditEvent>> {
        Ok(self
            .read_all()?
            .into_iter()
            .filter(|e| filter.matches(e))
            .skip(page.saturating_mul(page_size))
            .take(page_size)
            .collect())
    }

    /// Every parseable complete line, in sequence order.
    pub fn read_all(&self) -> Result<Vec<AuditEvent>> {
        let file = File::open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        let mut events = Vec::new();
        let mut reader = BufReader::new(file);
        let mut line = Vec::new();
        loop {
            line.clear();
            let n = reader
                .read_until(b'\n', &mut line)
                .map_err(|e| Error::io(&self.path, e))?;
            if n == 0 || line.last() != Some(&b'\n') {
                break;
            }
            if let Ok(event) = serde_json::from_slice::<AuditEvent>(&line[..n - 1]) {
                events.push(event);
            }
        }
        events.sort_by_key(|e| e.seq);
        Ok(events)
    }
}

impl Drop for AuditLog {
    fn drop(&mut self) {
        if let Ok(app) = self.appender.get_mut() {
            if app.unsynced > 0 {
                let _ = app.file.sync_data();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::Identifier;

    fn log() -> (tempfile::TempDir, AuditLog) {
        let dir = tempfile::tempdir().unwrap();
        let log = AuditLog::open(dir.path().join("audit.log")).unwrap();
        (dir, log)
    }

    #[test]
    fn sequence_starts_at_one() {
        let (_d, log) = log();
        assert_eq!(log.record(NewEvent::new(EventKind::Upload)).unwrap(), 1);
        assert_eq!(log.record(NewEvent::new(EventKind::Download)).unwrap(), 2);
    }

    #[test]
    fn query_filters() {
        let (_d, log) = log();
        assert!(log
            .query(&AuditQuery::kind(EventKind::Download), 0, 100)
            .unwrap()
            .is_empty());
        log.record(NewEvent::new(EventKind::Download).object("a"))
            .unwrap();
        log.record(NewEvent::new(EventKind::Download).object("b"))
            .unwrap();
        log.record(NewEvent::new(EventKind::Upload).object("a"))
            .unwrap();
        let q = AuditQuery {
            object_id: Some("a".into()),
            ..Default::default()
        };
        let got: Vec<u64> = log
            .query(&q, 0, 100)
            .unwrap()
            .iter()
            .map(|e| e.seq)
            .collect();
        assert_eq!(got, vec![1, 3]);
        let all: Vec<u64> = log
            .query(&AuditQuery::default(), 0, 100)
            .unwrap()
            .iter()
            .map(|e| e.seq)
            .collect();
        assert_eq!(all, vec![1, 2, 3]);
        let page: Vec<u64> = log
            .query(&AuditQuery::default(), 1, 2)
            .unwrap()
            .iter()
            .map(|e| e.seq)
            .collect();
        assert_eq!(page, vec![3]);
    }

    #[test]
    fn time_range_filter_is_half_open() {
        let (_d, log) = log();
        let t0 = Utc::now();
        for i in 0..3 {
            log.record(NewEvent::new(EventKind::Upload).at(t0 + chrono::Duration::seconds(i)))
                .unwrap();
        }
        let q = AuditQuery {
            since: Some(t0 + chrono::Duration::seconds(1)),
            until: Some(t0 + chrono::Duration::seconds(2)),
            ..Default::default()
        };
        let got: Vec<u64> = log
            .query(&q, 0, 10)
            .unwrap()
            .iter()
            .map(|e| e.seq)
            .collect();
        assert_eq!(got, vec![2]);
    }

    #[test]
    fn line_format_uses_exact_field_names() {
        let (_d, log) = log();
        let required = IdentifierSet::of(&[Identifier::Mac]);
        log.record(NewEvent::new(EventKind::Download).object("x").verdict(
            required,
            IdentifierSet::EMPTY,
            Outcome::DecoyServed,
        ))
        .unwrap();
        let text = std::fs::read_to_string(log.path()).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.trim_end()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(
            keys,
            vec![
                "at",
                "detail",
                "kind",
                "matched",
                "object_id",
                "outcome",
                "presented_identity",
                "required",
                "seq"
            ]
        );
        assert_eq!(v["outcome"], "decoy_served");
        assert_eq!(v["kind"], "download");
        assert_eq!(v["required"], serde_json::json!(["mac"]));
    }

    #[test]
    fn reopen_continues_sequence_and_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.log");
        {
            let log = AuditLog::open(&path).unwrap();
            log.record(NewEvent::new(EventKind::Upload)).unwrap();
            log.record(NewEvent::new(EventKind::Upload)).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"seq\":3,\"at\":").unwrap();
        drop(f);
        let log = AuditLog::open(&path).unwrap();
        assert_eq!(log.recovery().events, 2);
        assert!(log.recovery().truncated_tail_bytes > 0);
        assert_eq!(log.record(NewEvent::new(EventKind::Upload)).unwrap(), 3);
        assert_eq!(log.read_all().unwrap().len(), 3);
    }

    #[test]
    fn two_handles_share_one_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.log");
        let a = AuditLog::open(&path).unwrap();
        let b = AuditLog::open(&path).unwrap();
        assert_eq!(a.record(NewEvent::new(EventKind::Upload)).unwrap(), 1);
        assert_eq!(b.record(NewEvent::new(EventKind::Upload)).unwrap(), 2);
        assert_eq!(a.record(NewEvent::new(EventKind::Upload)).unwrap(), 3);
    }

    #[test]
    fn event_kind_parse() {
        assert_eq!(
            "share_redeem".parse::<EventKind>().unwrap(),
            EventKind::ShareRedeem
        );
        assert!("nope".parse::<EventKind>().is_err());
    }
}
