//! Upload pipeline and the verified download/share gate.
//!
//! A request whose presented identity matches the embedded identity on every
//! identifier the current threat level requires gets the original. Any other
//! request gets a decoy of the same object, chosen deterministically from the
//! presented identity so repeated requests see the same bytes. No path
//! reports a verification failure to the requester; every download, share
//! creation and share redemption is audited.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audit::{AuditLog, EventKind, NewEvent, Outcome};
use crate::catalog::{Catalog, DecoyEntry, ObjectRecord};
use crate::decoy;
use crate::error::{Error, Result};
use crate::fpe::FpeKey;
use crate::identity::{match_identities, HostIdentity, IdentifierSet, MatchResult};
use crate::scanner;
use crate::shares::{GrantBinding, ShareGrant, ShareRegistry};
use crate::store::{Metadata, ObjectStore};
use crate::threat::{self, InfoconLevel};

pub const DEFAULT_MAX_OBJECT_SIZE: u64 = 64 * 1024 * 1024;

/// How a download names its object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    Id(String),
    Name(String),
    /// Object id if one matches, otherwise logical name.
    Any(String),
}

impl From<&str> for Selector {
    fn from(s: &str) -> Self {
        Selector::Any(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessVerdict {
    pub outcome: Outcome,
    pub matched_fields: IdentifierSet,
    pub required_fields: IdentifierSet,
    pub decoy_index_served: Option<u32>,
    pub object_id: String,
    pub at: DateTime<Utc>,
}

/// Content handed to a requester. `name` is always the logical name, whether
/// the bytes are the original or a decoy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub content: Vec<u8>,
    pub name: String,
    pub verdict: AccessVerdict,
}

/// `1 + (first 8 bytes of SHA-256(presented concat) mod count)`.
pub fn select_decoy_index(presented: &HostIdentity, decoy_count: usize) -> u32 {
    assert!(decoy_count > 0, "records always carry at least one decoy");
    let digest = Sha256::digest(presented.canonical_concat().as_bytes());
    let head = u64::from_be_bytes(digest[..8].try_into().unwrap());
    1 + (head % decoy_count as u64) as u32
}

fn validate_logical_name(name: &str) -> Result<()> {
    let bad = name.is_empty()
        || name.len() > 255
        || name == "."
        || name == ".."
        || name.contains(['/', '\\', '\0']);
    if bad {
        return Err(Error::InvalidInput(format!("unusable file name {name:?}")));
    }
    Ok(())
}

pub struct AccessBroker {
    store: Arc<dyn ObjectStore>,
    catalog: Arc<Catalog>,
    shares: Arc<ShareRegistry>,
    audit: Arc<AuditLog>,
    key: FpeKey,
    max_object_size: u64,
    audit_failures: AtomicU64,
}

impl std::fmt::Debug for AccessBroker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AccessBroker")
            .field("max_object_size", &self.max_object_size)
            .field("audit_failures", &self.audit_failures)
            .finish_non_exhaustive()
    }
}

impl AccessBroker {
    pub fn new(
        store: Arc<dyn ObjectStore>,
        catalog: Arc<Catalog>,
        shares: Arc<ShareRegistry>,
        audit: Arc<AuditLog>,
        key: FpeKey,
    ) -> Self {
        AccessBroker {
            store,
            catalog,
            shares,
            audit,
            key,
            max_object_size: DEFAULT_MAX_OBJECT_SIZE,
            audit_failures: AtomicU64::new(0),
        }
    }

    pub fn with_max_object_size(mut self, max: u64) -> Self {
        self.max_object_size = max;
        self
    }

    /// Audit writes that failed since startup. Requests still complete when
    /// the log cannot be written.
    pub fn audit_failures(&self) -> u64 {
        self.audit_failures.load(Ordering::Relaxed)
    }

    fn audit(&self, event: NewEvent) {
        if let Err(e) = self.audit.record(event) {
            self.audit_failures.fetch_add(1, Ordering::Relaxed);
            tracing::error!(error = %e, "audit write failed");
        }
    }

    /// Stores the original with the owner's identity embedded in its
    /// metadata, then `decoy_count(level)` decoys, then the catalog record.
    pub fn upload(
        &self,
        logical_name: &str,
        content: &[u8],
        owner: &HostIdentity,
        level: InfoconLevel,
    ) -> Result<ObjectRecord> {
        validate_logical_name(logical_name)?;
        if content.len() as u64 > self.max_object_size {
            return Err(Error::TooLarge {
                size: content.len() as u64,
                max: self.max_object_size,
            });
        }
        if !owner.is_complete() {
            return Err(Error::IncompleteIdentity(owner.missing().to_string()));
        }
        let mut embedded = owner.clone();
        embedded.recompute_quad_hash();

        let object_id = crate::random_id();
        let mut written = Vec::new();
        let result = self.store_all(
            &object_id,
            logical_name,
            content,
            &embedded,
            level,
            &mut written,
        );
        let record = match result {
            Ok(record) => record,
            Err(e) => {
                for key in &written {
                    let _ = self.store.delete_object(key);
                }
                return Err(e);
            }
        };
        self.audit(
            NewEvent::new(EventKind::Upload)
                .object(&record.object_id)
                .presented(embedded)
                .detail(format!(
                    "{} stored with {} decoys, {} sensitive runs, level {level}",
                    logical_name,
                    record.decoys.len(),
                    record.sensitive_run_count
                )),
        );
        Ok(record)
    }

    fn store_all(
        &self,
        object_id: &str,
        logical_name: &str,
        content: &[u8],
        embedded: &HostIdentity,
        level: InfoconLevel,
        written: &mut Vec<String>,
    ) -> Result<ObjectRecord> {
        let mut meta = Metadata::new();
        for (key, value) in [
            ("emb.mac", &embedded.mac),
            ("emb.ip", &embedded.ip),
            ("emb.hostname", &embedded.hostname),
            ("emb.user_id", &embedded.user_id),
            ("emb.quad_hash", &embedded.quad_hash),
        ] {
            meta.insert(key.to_owned(), value.clone().unwrap_or_default());
        }
        let original_store_key = self.store.put_object(logical_name, content, &meta)?;
        written.push(original_store_key.clone());

        let mut decoys = Vec::new();
        for decoy_index in 1..=threat::decoy_count(level) {
            let doc = decoy::build_decoy(content, logical_name, &self.key, object_id, decoy_index)?;
            let mut meta = Metadata::new();
            meta.insert("decoy.of".into(), object_id.to_owned());
            meta.insert("decoy.index".into(), decoy_index.to_string());
            let store_key = self.store.put_object(&doc.name, &doc.content, &meta)?;
            written.push(store_key.clone());
            decoys.push(DecoyEntry {
                decoy_index,
                store_key,
                decoy_name: doc.name,
            });
        }

        let record = ObjectRecord {
            object_id: object_id.to_owned(),
            logical_name: logical_name.to_owned(),
            original_store_key,
            decoys,
            owner_identity: embedded.clone(),
            sensitive_run_count: scanner::scan(content).len(),
            upload_level: level,
            created_at: Utc::now(),
        };
        self.catalog.put_record(record.clone())?;
        Ok(record)
    }

    /// Finds the record a selector names. Ambiguous names resolve to the
    /// newest upload.
    pub fn resolve(&self, selector: &Selector) -> Result<ObjectRecord> {
        let by_name = |name: &str| {
            self.catalog
                .find_by_name(name)
                .pop()
                .ok_or_else(|| Error::NotFound(format!("object {name}")))
        };
        match selector {
            Selector::Id(id) => self.catalog.get_record(id),
            Selector::Name(name) => by_name(name),
            Selector::Any(s) => match self.catalog.get_record(s) {
                Err(Error::NotFound(_)) => by_name(s),
                other => other,
            },
        }
    }

    fn fetch(&self, record: &ObjectRecord, served: Option<u32>) -> Result<Vec<u8>> {
        let key = match served {
            None => &record.original_store_key,
            Some(index) => {
                &record
                    .decoy(index)
                    .ok_or_else(|| Error::Corrupt {
                        path: format!("meta/{}.json", record.object_id).into(),
                        detail: format!("missing decoy {index}"),
                    })?
                    .store_key
            }
        };
        Ok(self.store.get_object(key)?.content)
    }

    fn deliver(
        &self,
        record: &ObjectRecord,
        served: Option<u32>,
        check: &MatchResult,
        kind: EventKind,
        presented: &HostIdentity,
        detail: String,
    ) -> Result<Delivery> {
        let content = self.fetch(record, served)?;
        let outcome = if served.is_none() {
            Outcome::OriginalServed
        } else {
            Outcome::DecoyServed
        };
        let matched = if served.is_none() {
            check.matched().intersection(check.required)
        } else if check.overall {
            // Decoy-bound grant: verification failed when the grant was made.
            IdentifierSet::EMPTY
        } else {
            check.matched().intersection(check.required)
        };
        let verdict = AccessVerdict {
            outcome,
            matched_fields: matched,
            required_fields: check.required,
            decoy_index_served: served,
            object_id: record.object_id.clone(),
            at: Utc::now(),
        };
        self.audit(
            NewEvent::new(kind)
                .at(verdict.at)
                .object(&record.object_id)
                .presented(presented.clone())
                .verdict(verdict.required_fields, verdict.matched_fields, outcome)
                .detail(detail),
        );
        Ok(Delivery {
            content,
            name: record.logical_name.clone(),
            verdict,
        })
    }

    /// Serves the original iff the presented identity satisfies the level's
    /// required identifiers; otherwise a decoy.
    pub fn request_download(
        &self,
        selector: &Selector,
        presented: &HostIdentity,
        level: InfoconLevel,
    ) -> Result<Delivery> {
        let record = self.resolve(selector)?;
        let check = match_identities(
            &record.owner_identity,
            presented,
            threat::required_identifiers(level),
        );
        let served = (!check.overall).then(|| select_decoy_index(presented, record.decoys.len()));
        let detail = match served {
            None => format!("level {level}: verified"),
            Some(i) => format!("level {level}: verification failed, decoy {i} served"),
        };
        self.deliver(
            &record,
            served,
            &check,
            EventKind::Download,
            presented,
            detail,
        )
    }

    /// Issues a share grant. An owner that fails verification still gets a
    /// well-formed grant, bound to a decoy.
    pub fn create_share(
        &self,
        object_id: &str,
        owner_presented: &HostIdentity,
        grantee: &HostIdentity,
        level: InfoconLevel,
    ) -> Result<ShareGrant> {
        let record = self.catalog.get_record(object_id)?;
        let required = threat::required_identifiers(level);
        let check = match_identities(&record.owner_identity, owner_presented, required);
        let bound_to = if check.overall {
            GrantBinding::Original
        } else {
            GrantBinding::Decoy {
                decoy_index: select_decoy_index(owner_presented, record.decoys.len()),
            }
        };
        let mut grantee_identity = grantee.clone();
        grantee_identity.recompute_quad_hash();
        let grant = ShareGrant {
            token: crate::random_id(),
            object_id: record.object_id.clone(),
            grantee_identity,
            created_at: Utc::now(),
            created_under_level: level,
            bound_to,
        };
        self.shares.insert(&grant)?;
        let (outcome, detail) = match bound_to {
            GrantBinding::Original => (
                Outcome::OriginalServed,
                format!("level {level}: grant bound to original"),
            ),
            GrantBinding::Decoy { decoy_index } => (
                Outcome::DecoyServed,
                format!(
                    "level {level}: owner verification failed, grant bound to decoy {decoy_index}"
                ),
            ),
        };
        self.audit(
            NewEvent::new(EventKind::ShareCreate)
                .at(grant.created_at)
                .object(&record.object_id)
                .presented(owner_presented.clone())
                .verdict(required, check.matched().intersection(required), outcome)
                .detail(detail),
        );
        Ok(grant)
    }

    /// Checks the presented identity against the grantee registered on the
    /// grant, using the level in force now.
    pub fn redeem_share(
        &self,
        token: &str,
        presented: &HostIdentity,
        level: InfoconLevel,
    ) -> Result<Delivery> {
        let grant = self.shares.get(token)?;
        let record = self.catalog.get_record(&grant.object_id)?;
        let check = match_identities(
            &grant.grantee_identity,
            presented,
            threat::required_identifiers(level),
        );
        let served = match (check.overall, grant.bound_to) {
            (true, GrantBinding::Original) => None,
            (true, GrantBinding::Decoy { decoy_index }) => Some(decoy_index),
            (false, _) => Some(select_decoy_index(presented, record.decoys.len())),
        };
        let detail = match (check.overall, served) {
            (true, None) => format!("level {level}: grantee verified"),
            (true, Some(i)) => {
                format!("level {level}: grantee verified, decoy-bound grant served decoy {i}")
            }
            (false, Some(i)) => {
                format!("level {level}: grantee verification failed, decoy {i} served")
            }
            (false, None) => unreachable!(),
        };
        self.deliver(
            &record,
            served,
            &check,
            EventKind::ShareRedeem,
            presented,
            detail,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::Identifier;
    use crate::store::MemoryObjectStore;

    struct Fixture {
        _dir: tempfile::TempDir,
        broker: AccessBroker,
        store: Arc<MemoryObjectStore>,
    }

    fn fixture() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(MemoryObjectStore::new());
        let broker = AccessBroker::new(
            store.clone(),
            Arc::new(Catalog::open(dir.path().join("meta")).unwrap()),
            Arc::new(ShareRegistry::open(dir.path().join("shares")).unwrap()),
            Arc::new(AuditLog::open(dir.path().join("audit.log")).unwrap()),
            FpeKey::from_bytes([1; 32]),
        );
        Fixture {
            _dir: dir,
            broker,
            store,
        }
    }

    fn owner() -> HostIdentity {
        HostIdentity::new(
            Some("aa:bb:cc:dd:ee:ff"),
            Some("10.1.2.3"),
            Some("desk"),
            Some("alice"),
        )
    }

    fn level(v: u8) -> InfoconLevel {
        InfoconLevel::new(v).unwrap()
    }

    #[test]
    fn upload_rejects_incomplete_owner_and_oversize() {
        let f = fixture();
        let partial = HostIdentity::new(Some("aa:bb:cc:dd:ee:ff"), None, Some("h"), Some("u"));
        assert!(matches!(
            f.broker.upload("a.txt", b"1", &partial, level(5)),
            Err(Error::IncompleteIdentity(_))
        ));
        let small = fixture();
        let broker = small.broker.with_max_object_size(4);
        assert!(matches!(
            broker.upload("a.txt", b"12345", &owner(), level(5)),
            Err(Error::TooLarge { size: 5, max: 4 })
        ));
        assert!(f.store.list_objects().unwrap().is_empty());
    }

    #[test]
    fn upload_rejects_path_like_names() {
        let f = fixture();
        for name in ["", "a/b", "..", "a\\b"] {
            assert!(
                f.broker.upload(name, b"1", &owner(), level(5)).is_err(),
                "{name:?}"
            );
        }
    }

    #[test]
    fn metadata_embeds_identity_on_original_only() {
        let f = fixture();
        let rec = f
            .broker
            .upload("id.txt", b"SSN 123-45-6789", &owner(), level(4))
            .unwrap();
        let original = f.store.get_object(&rec.original_store_key).unwrap();
        assert_eq!(original.metadata["emb.mac"], "aa:bb:cc:dd:ee:ff");
        assert_eq!(
            original.metadata["emb.quad_hash"],
            owner().quad_hash.unwrap()
        );
        for d in &rec.decoys {
            let obj = f.store.get_object(&d.store_key).unwrap();
            assert!(!obj.metadata.keys().any(|k| k.starts_with("emb.")));
            assert_eq!(obj.metadata["decoy.of"], rec.object_id);
            assert_eq!(obj.metadata["decoy.index"], d.decoy_index.to_string());
            assert_eq!(obj.name, d.decoy_name);
        }
        assert_eq!(rec.sensitive_run_count, 3);
    }

    #[test]
    fn mismatch_gets_same_length_decoy_and_sticky_index() {
        let f = fixture();
        let content = b"card 4111-1111-1111-1111 exp 12/29";
        let rec = f
            .broker
            .upload("card.txt", content, &owner(), level(1))
            .unwrap();
        let mut attacker = owner();
        attacker.set(Identifier::Mac, Some("00:11:22:33:44:55"));
        let first = f
            .broker
            .request_download(&Selector::Id(rec.object_id.clone()), &attacker, level(5))
            .unwrap();
        assert_eq!(first.verdict.outcome, Outcome::DecoyServed);
        assert_eq!(first.content.len(), content.len());
        assert_ne!(first.content, content);
        assert_eq!(first.name, "card.txt");
        for _ in 0..5 {
            let again = f
                .broker
                .request_download(&Selector::Name("card.txt".into()), &attacker, level(5))
                .unwrap();
            assert_eq!(again.content, first.content);
            assert_eq!(
                again.verdict.decoy_index_served,
                first.verdict.decoy_index_served
            );
        }
        assert_eq!(
            first.verdict.decoy_index_served,
            Some(select_decoy_index(&attacker, 5))
        );
    }

    #[test]
    fn ambiguous_name_resolves_to_newest_upload() {
        let f = fixture();
        let _old = f
            .broker
            .upload("doc.txt", b"v1 111", &owner(), level(5))
            .unwrap();
        std::thread::sleep(std::time::Duration::from_millis(2));
        let new = f
            .broker
            .upload("doc.txt", b"v2 222", &owner(), level(5))
            .unwrap();
        let got = f
            .broker
            .request_download(&"doc.txt".into(), &owner(), level(5))
            .unwrap();
        assert_eq!(got.content, b"v2 222");
        assert_eq!(got.verdict.object_id, new.object_id);
        assert!(f
            .broker
            .request_download(&"nope".into(), &owner(), level(5))
            .unwrap_err()
            .is_not_found());
    }

    #[test]
    fn share_paths() {
        let f = fixture();
        let rec = f
            .broker
            .upload("s.txt", b"acct 987654321", &owner(), level(5))
            .unwrap();
        let grantee = HostIdentity::new(
            Some("02:00:00:00:00:02"),
            Some("10.9.9.9"),
            Some("bob-pc"),
            Some("bob"),
        );

        let good = f
            .broker
            .create_share(&rec.object_id, &owner(), &grantee, level(5))
            .unwrap();
        assert_eq!(good.bound_to, GrantBinding::Original);
        let d = f
            .broker
            .redeem_share(&good.token, &grantee, level(5))
            .unwrap();
        assert_eq!(d.verdict.outcome, Outcome::OriginalServed);
        assert_eq!(d.content, b"acct 987654321");

        // Owner is not the grantee.
        let d = f
            .broker
            .redeem_share(&good.token, &owner(), level(5))
            .unwrap();
        assert_eq!(d.verdict.outcome, Outcome::DecoyServed);

        let mut imposter = owner();
        imposter.set(Identifier::Mac, Some("de:ad:be:ef:00:01"));
        let bad = f
            .broker
            .create_share(&rec.object_id, &imposter, &grantee, level(5))
            .unwrap();
        assert!(matches!(bad.bound_to, GrantBinding::Decoy { .. }));
        assert_ne!(bad.token, good.token);
        let d = f
            .broker
            .redeem_share(&bad.token, &grantee, level(5))
            .unwrap();
        assert_eq!(d.verdict.outcome, Outcome::DecoyServed);
        assert!(!d
            .verdict
            .matched_fields
            .is_superset(d.verdict.required_fields));
        assert_eq!(d.content.len(), 14);

        assert!(f
            .broker
            .redeem_share(&crate::random_id(), &grantee, level(5))
            .unwrap_err()
            .is_not_found());
        assert!(f
            .broker
            .create_share(&crate::random_id(), &owner(), &grantee, level(5))
            .unwrap_err()
            .is_not_found());
    }

    #[test]
    fn redeem_uses_level_in_force() {
        let f = fixture();
        let rec = f
            .broker
            .upload("s.txt", b"0123", &owner(), level(5))
            .unwrap();
        let grantee = HostIdentity::new(
            Some("02:00:00:00:00:02"),
            Some("10.9.9.9"),
            Some("bob-pc"),
            Some("bob"),
        );
        let grant = f
            .broker
            .create_share(&rec.object_id, &owner(), &grantee, level(5))
            .unwrap();
        let mut same_mac = grantee.clone();
        same_mac.set(Identifier::UserId, Some("mallory"));
        same_mac.recompute_quad_hash();
        let d = f
            .broker
            .redeem_share(&grant.token, &same_mac, level(5))
            .unwrap();
        assert_eq!(d.verdict.outcome, Outcome::OriginalServed);
        let d = f
            .broker
            .redeem_share(&grant.token, &same_mac, level(2))
            .unwrap();
        assert_eq!(d.verdict.outcome, Outcome::DecoyServed);
        let d = f
            .broker
            .redeem_share(&grant.token, &grantee, level(2))
            .unwrap();
        assert_eq!(d.verdict.outcome, Outcome::OriginalServed);
    }
}
