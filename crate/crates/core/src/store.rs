//! Object store abstraction standing in for a SaaS storage provider.
//!
//! Objects are immutable once put. Store keys are opaque to callers.
//!
//! Filesystem layout under the objects directory:
//!
//! ```text
//! <store_key>.bin        content
//! <store_key>.meta.json  flat JSON string map: caller metadata + object name
//! ```
//!
//! The metadata file is written last and is what makes an object visible.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use crate::error::{Error, Result};
use crate::fsutil;

pub type Metadata = BTreeMap<String, String>;

/// Metadata key the filesystem backend uses to persist the object name.
pub const NAME_KEY: &str = "x-object-name";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredObject {
    pub store_key: String,
    pub name: String,
    pub content: Vec<u8>,
    pub metadata: Metadata,
}

pub trait ObjectStore: Send + Sync {
    fn put_object(&self, name: &str, content: &[u8], metadata: &Metadata) -> Result<String>;
    fn get_object(&self, store_key: &str) -> Result<StoredObject>;
    fn delete_object(&self, store_key: &str) -> Result<()>;
    /// `(store_key, name)` pairs in store-key order.
    fn list_objects(&self) -> Result<Vec<(String, String)>>;

    fn contains(&self, store_key: &str) -> Result<bool> {
        match self.get_object(store_key) {
            Ok(_) => Ok(true),
            Err(Error::NotFound(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }
}

fn check_metadata(metadata: &Metadata) -> Result<()> {
    if metadata.contains_key(NAME_KEY) {
        return Err(Error::InvalidInput(format!(
            "metadata key {NAME_KEY} is reserved"
        )));
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct MemoryObjectStore {
    objects: RwLock<HashMap<String, StoredObject>>,
}

impl MemoryObjectStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ObjectStore for MemoryObjectStore {
    fn put_object(&self, name: &str, content: &[u8], metadata: &Metadata) -> Result<String> {
        check_metadata(metadata)?;
        let key = crate::random_id();
        let object = StoredObject {
            store_key: key.clone(),
            name: name.to_owned(),
            content: content.to_vec(),
            metadata: metadata.clone(),
        };
        self.objects.write().unwrap().insert(key.clone(), object);
        Ok(key)
    }

    fn get_object(&self, store_key: &str) -> Result<StoredObject> {
        self.objects
            .read()
            .unwrap()
            .get(store_key)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("object {store_key}")))
    }

    fn delete_object(&self, store_key: &str) -> Result<()> {
        self.objects
            .write()
            .unwrap()
            .remove(store_key)
            .map(drop)
            .ok_or_else(|| Error::NotFound(format!("object {store_key}")))
    }

    fn list_objects(&self) -> Result<Vec<(String, String)>> {
        let mut out: Vec<(String, String)> = self
            .objects
            .read()
            .unwrap()
            .values()
            .map(|o| (o.store_key.clone(), o.name.clone()))
            .collect();
        out.sort();
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct FsObjectStore {
    dir: PathBuf,
}

impl FsObjectStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fsutil::create_dir(&dir)?;
        Ok(FsObjectStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn paths(&self, store_key: &str) -> Result<(PathBuf, PathBuf)> {
        // Keys are generated here; anything else never touches the filesystem.
        if !crate::is_random_id(store_key) {
            return Err(Error::NotFound(format!("object {store_key}")));
        }
        Ok((
            self.dir.join(format!("{store_key}.bin")),
            self.dir.join(format!("{store_key}.meta.json")),
        ))
    }

    fn read_meta(&self, path: &Path, store_key: &str) -> Result<Metadata> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound(format!("object {store_key}")))
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }
}

impl ObjectStore for FsObjectStore {
    fn put_object(&self, name: &str, content: &[u8], metadata: &Metadata) -> Result<String> {
        check_metadata(metadata)?;
        let key = crate::random_id();
        let (bin, meta) = self.paths(&key)?;
        let mut stored = metadata.clone();
        stored.insert(NAME_KEY.to_owned(), name.to_owned());
        let meta_bytes = serde_json::to_vec_pretty(&stored).expect("string map serializes");
        fsutil::atomic_create(&bin, content)?;
        if let Err(e) = fsutil::atomic_create(&meta, &meta_bytes) {
            let _ = fs::remove_file(&bin);
            return Err(e);
        }
        Ok(key)
    }

    fn get_object(&self, store_key: &str) -> Result<StoredObject> {
        let (bin, meta) = self.paths(store_key)?;
        let mut metadata = self.read_meta(&meta, store_key)?;
        let content = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let name = metadata.remove(NAME_KEY).ok_or_else(|| Error::Corrupt {
            path: meta.clone(),
            detail: format!("missing {NAME_KEY}"),
        })?;
        Ok(StoredObject {
            store_key: store_key.to_owned(),
            name,
            content,
            metadata,
        })
    }

    fn delete_object(&self, store_key: &str) -> Result<()> {
        let (bin, meta) = self.paths(store_key)?;
        match fs::remove_file(&meta) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound(format!("object {store_key}")))
            }
            Err(e) => return Err(Error::io(&meta, e)),
        }
        match fs::remove_file(&bin) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(Error::io(&bin, e)),
        }
        fsutil::sync_dir(&self.dir)
    }

    fn list_objects(&self) -> Result<Vec<(String, String)>> {
        let entries = fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.dir, e))?;
            let file_name = entry.file_name();
            let Some(key) = file_name
                .to_str()
                .and_then(|n| n.strip_suffix(".meta.json"))
            else {
                continue;
            };
            if !crate::is_random_id(key) {
                continue;
            }
            let mut meta = self.read_meta(&entry.path(), key)?;
            out.push((key.to_owned(), meta.remove(NAME_KEY).unwrap_or_default()));
        }
        out.sort();
        Ok(out)
    }
}
