//! Authoritative binding of each logical document to its stored original,
//! its decoys and the identity embedded at upload.
//!
//! Records live in `meta/<object_id>.json`. An in-memory index is rebuilt
//! from the directory on open. Whether a stored object is the original or a
//! decoy is decided here, never by its name.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identity::HostIdentity;
use crate::jsondir::JsonDir;
use crate::threat::InfoconLevel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoyEntry {
    pub decoy_index: u32,
    pub store_key: String,
    pub decoy_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    pub object_id: String,
    pub logical_name: String,
    pub original_store_key: String,
    pub decoys: Vec<DecoyEntry>,
    pub owner_identity: HostIdentity,
    pub sensitive_run_count: usize,
    pub upload_level: InfoconLevel,
    pub created_at: DateTime<Utc>,
}

impl ObjectRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| {
            Err(Error::InvalidInput(format!(
                "record {}: {msg}",
                self.object_id
            )))
        };
        if self.decoys.is_empty() {
            return bad("no decoys".into());
        }
        for (i, d) in self.decoys.iter().enumerate() {
            if d.decoy_index as usize != i + 1 {
                return bad(format!("decoy indices not contiguous at position {i}"));
            }
        }
        let mut keys = HashSet::new();
        keys.insert(self.original_store_key.as_str());
        let mut names = HashSet::new();
        names.insert(self.logical_name.as_str());
        for d in &self.decoys {
            if !keys.insert(d.store_key.as_str()) {
                return bad(format!("store key {} repeated", d.store_key));
            }
            if !names.insert(d.decoy_name.as_str()) {
                return bad(format!(
                    "decoy name {} repeated or equal to logical name",
                    d.decoy_name
                ));
            }
        }
        Ok(())
    }

    pub fn decoy(&self, decoy_index: u32) -> Option<&DecoyEntry> {
        self.decoys.iter().find(|d| d.decoy_index == decoy_index)
    }

    /// Every provider key this record references.
    pub fn store_keys(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.original_store_key.as_str())
            .chain(self.decoys.iter().map(|d| d.store_key.as_str()))
    }

    fn order_key(&self) -> (DateTime<Utc>, &str) {
        (self.created_at, &self.object_id)
    }
}

/// Single writer, many readers. Readers only ever observe complete records.
#[derive(Debug)]
pub struct Catalog {
    files: JsonDir<ObjectRecord>,
    index: RwLock<BTreeMap<String, ObjectRecord>>,
    writer: Mutex<()>,
}

impl Catalog {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let catalog = Catalog {
            files: JsonDir::open(dir)?,
            index: RwLock::new(BTreeMap::new()),
            writer: Mutex::new(()),
        };
        catalog.reload()?;
        Ok(catalog)
    }

    /// Rebuilds the index from disk, picking up records written by other processes.
    pub fn reload(&self) -> Result<()> {
        let mut fresh = BTreeMap::new();
        for (id, record) in self.files.scan()? {
            if id != record.object_id {
                return Err(Error::Corrupt {
                    path: self.files.dir().join(format!("{id}.json")),
                    detail: format!("file name does not match object_id {}", record.object_id),
                });
            }
            fresh.insert(id, record);
        }
        *self.index.write().unwrap() = fresh;
        Ok(())
    }

    pub fn put_record(&self, record: ObjectRecord) -> Result<()> {
        record.validate()?;
        if !crate::is_random_id(&record.object_id) {
            return Err(Error::InvalidInput(format!(
                "malformed object id {}",
                record.object_id
            )));
        }
        let _guard = self.writer.lock().unwrap();
        if self.index.read().unwrap().contains_key(&record.object_id) {
            return Err(Error::Duplicate(record.object_id));
        }
        self.files.create(&record.object_id, &record)?;
        self.index
            .write()
            .unwrap()
            .insert(record.object_id.clone(), record);
        Ok(())
    }

    pub fn get_record(&self, object_id: &str) -> Result<ObjectRecord> {
        if let Some(r) = self.index.read().unwrap().get(object_id) {
            return Ok(r.clone());
        }
        // Possibly written by another process since the last reload.
        if crate::is_random_id(object_id) {
            if let Some(r) = self.files.read(object_id)? {
                self.index
                    .write()
                    .unwrap()
                    .insert(object_id.to_owned(), r.clone());
                return Ok(r);
            }
        }
        Err(Error::NotFound(format!("object {object_id}")))
    }

    /// All records with this logical name, oldest first.
    pub fn find_by_name(&self, logical_name: &str) -> Vec<ObjectRecord> {
        let mut found: Vec<ObjectRecord> = self
            .index
            .read()
            .unwrap()
            .values()
            .filter(|r| r.logical_name == logical_name)
            .cloned()
            .collect();
        found.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        found
    }

    /// Zero-based page of records in `created_at` order.
    pub fn list_records(&self, page: usize, page_size: usize) -> Vec<ObjectRecord> {
        let index = self.index.read().unwrap();
        let mut all: Vec<&ObjectRecord> = index.values().collect();
        all.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        all.into_iter()
            .skip(page.saturating_mul(page_size))
            .take(page_size)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
