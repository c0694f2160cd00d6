//! Share grants, one JSON file per token under `shares/`.

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identity::HostIdentity;
use crate::jsondir::JsonDir;
use crate::threat::InfoconLevel;

/// What a grant hands out when the grantee verifies. Owners that failed
/// verification at creation get a grant bound to a decoy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GrantBinding {
    Original,
    Decoy { decoy_index: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareGrant {
    pub token: String,
    pub object_id: String,
    pub grantee_identity: HostIdentity,
    pub created_at: DateTime<Utc>,
    pub created_under_level: InfoconLevel,
    pub bound_to: GrantBinding,
}

#[derive(Debug)]
pub struct ShareRegistry {
    files: JsonDir<ShareGrant>,
}

impl ShareRegistry {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        Ok(ShareRegistry {
            files: JsonDir::open(dir)?,
        })
    }

    pub fn insert(&self, grant: &ShareGrant) -> Result<()> {
        self.files.create(&grant.token, grant)
    }

    pub fn get(&self, token: &str) -> Result<ShareGrant> {
        let not_found = || Error::NotFound(format!("share {token}"));
        if !crate::is_random_id(token) {
            return Err(not_found());
        }
        self.files.read(token)?.ok_or_else(not_found)
    }

    pub fn list(&self) -> Result<Vec<ShareGrant>> {
        let mut grants: Vec<ShareGrant> = self.files.scan()?.into_iter().map(|(_, g)| g).collect();
        grants.sort_by(|a, b| (a.created_at, &a.token).cmp(&(b.created_at, &b.token)));
        Ok(grants)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binding_serializes_tagged() {
        assert_eq!(
            serde_json::to_string(&GrantBinding::Decoy { decoy_index: 2 }).unwrap(),
            r#"{"kind":"decoy","decoy_index":2}"#
        );
        assert_eq!(
            serde_json::to_string(&GrantBinding::Original).unwrap(),
            r#"{"kind":"original"}"#
        );
    }

    #[test]
    fn unknown_or_malformed_token_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let reg = ShareRegistry::open(dir.path()).unwrap();
        assert!(reg.get(&crate::random_id()).unwrap_err().is_not_found());
        assert!(reg.get("../x").unwrap_err().is_not_found());
    }
}
