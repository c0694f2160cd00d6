//! A directory of `<id>.json` files, one immutable record each.

use std::fs;
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug)]
pub(crate) struct JsonDir<T> {
    dir: PathBuf,
    _record: PhantomData<fn() -> T>,
}

impl<T: Serialize + DeserializeOwned> JsonDir<T> {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fsutil::create_dir(&dir)?;
        Ok(JsonDir {
            dir,
            _record: PhantomData,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    /// Durable, no-clobber write. An existing id yields [`Error::Duplicate`].
    pub fn create(&self, id: &str, record: &T) -> Result<()> {
        let path = self.path(id);
        let mut bytes = serde_json::to_vec_pretty(record).expect("record serializes");
        bytes.push(b'\n');
        match fsutil::atomic_create(&path, &bytes) {
            Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Duplicate(id.to_owned()))
            }
            other => other,
        }
    }

    pub fn read(&self, id: &str) -> Result<Option<T>> {
        let path = self.path(id);
        match fs::read(&path) {
            Ok(bytes) => self.decode(&path, &bytes).map(Some),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    fn decode(&self, path: &Path, bytes: &[u8]) -> Result<T> {
        serde_json::from_slice(bytes).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    /// Every record in the directory, as `(id, record)`.
    pub fn scan(&self) -> Result<Vec<(String, T)>> {
        let entries = fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.dir, e))?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            if fsutil::is_temp_name(name) {
                continue;
            }
            let Some(id) = name.strip_suffix(".json") else {
                continue;
            };
            let path = entry.path();
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            out.push((id.to_owned(), self.decode(&path, &bytes)?));
        }
        Ok(out)
    }
}
