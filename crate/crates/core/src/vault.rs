//! Vault directory: layout, configuration, wiring and the integrity pass.
//!
//! ```text
//! <vault>/config.json  VaultConfig
//! <vault>/key          64 hex chars + newline, mode 0600
//! <vault>/level        single digit + newline
//! <vault>/objects/     FsObjectStore
//! <vault>/meta/        catalog records
//! <vault>/shares/      share grants
//! <vault>/audit.log    line-delimited JSON events
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audit::AuditLog;
use crate::broker::{AccessBroker, Delivery, Selector, DEFAULT_MAX_OBJECT_SIZE};
use crate::catalog::{Catalog, ObjectRecord};
use crate::decoy;
use crate::error::{Error, Result};
use crate::fpe::{self, FpeKey, Tweak};
use crate::fsutil;
use crate::identity::HostIdentity;
use crate::shares::{ShareGrant, ShareRegistry};
use crate::store::{FsObjectStore, ObjectStore};
use crate::threat::{InfoconLevel, ThreatState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaultConfig {
    #[serde(default = "default_max_object_size")]
    pub max_object_size: u64,
    pub admin_token: String,
    #[serde(default)]
    pub feed_path: Option<PathBuf>,
    #[serde(default)]
    pub bind_address: Option<String>,
}

fn default_max_object_size() -> u64 {
    DEFAULT_MAX_OBJECT_SIZE
}

impl VaultConfig {
    fn generate() -> Self {
        VaultConfig {
            max_object_size: DEFAULT_MAX_OBJECT_SIZE,
            admin_token: crate::random_id(),
            feed_path: None,
            bind_address: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub records_checked: usize,
    pub objects_checked: usize,
    /// Broken references, metadata disagreements, stale decoys, FPE failures.
    pub integrity_errors: Vec<String>,
    /// Provider objects no record references (left by interrupted uploads).
    pub orphans: Vec<String>,
    pub orphans_removed: usize,
    pub fpe_self_test_passed: bool,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.integrity_errors.is_empty() && self.fpe_self_test_passed
    }
}

pub struct Vault {
    root: PathBuf,
    config: VaultConfig,
    key: FpeKey,
    store: Arc<dyn ObjectStore>,
    catalog: Arc<Catalog>,
    shares: Arc<ShareRegistry>,
    audit: Arc<AuditLog>,
    threat: ThreatState,
    broker: AccessBroker,
}

impl std::fmt::Debug for Vault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Vault")
            .field("root", &self.root)
            .field("level", &self.level())
            .finish_non_exhaustive()
    }
}

impl Vault {
    /// Creates the layout with a fresh key and level 5.
    pub fn init(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let config_path = root.join("config.json");
        if config_path.exists() {
            return Err(Error::VaultExists(root));
        }
        fsutil::create_dir(&root)?;
        for dir in ["objects", "meta", "shares"] {
            fsutil::create_dir(&root.join(dir))?;
        }
        FpeKey::generate().store(&root.join("key"))?;
        fsutil::atomic_write(&root.join("level"), b"5\n")?;
        let mut config =
            serde_json::to_vec_pretty(&VaultConfig::generate()).expect("config serializes");
        config.push(b'\n');
        // Config last: its presence marks an initialized vault.
        fsutil::write_private(&config_path, &config)?;
        Self::open(root)
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let config_path = root.join("config.json");
        let config_bytes = match std::fs::read(&config_path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::VaultMissing(root))
            }
            Err(e) => return Err(Error::io(config_path, e)),
        };
        let config: VaultConfig =
            serde_json::from_slice(&config_bytes).map_err(|e| Error::Corrupt {
                path: config_path,
                detail: e.to_string(),
            })?;
        let key = FpeKey::load(&root.join("key"))?;
        let store: Arc<dyn ObjectStore> = Arc::new(FsObjectStore::open(root.join("objects"))?);
        let catalog = Arc::new(Catalog::open(root.join("meta"))?);
        let shares = Arc::new(ShareRegistry::open(root.join("shares"))?);
        let audit = Arc::new(AuditLog::open(root.join("audit.log"))?);
        let threat = ThreatState::open(root.join("level"), audit.clone())?;
        let broker = AccessBroker::new(
            store.clone(),
            catalog.clone(),
            shares.clone(),
            audit.clone(),
            key.clone(),
        )
        .with_max_object_size(config.max_object_size);
        Ok(Vault {
            root,
            config,
            key,
            store,
            catalog,
            shares,
            audit,
            threat,
            broker,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &VaultConfig {
        &self.config
    }

    pub fn broker(&self) -> &AccessBroker {
        &self.broker
    }

    pub fn threat(&self) -> &ThreatState {
        &self.threat
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn store(&self) -> &dyn ObjectStore {
        self.store.as_ref()
    }

    pub fn shares(&self) -> &ShareRegistry {
        &self.shares
    }

    pub fn level(&self) -> InfoconLevel {
        self.threat.get_level()
    }

    pub fn upload(
        &self,
        logical_name: &str,
        content: &[u8],
        owner: &HostIdentity,
    ) -> Result<ObjectRecord> {
        self.broker
            .upload(logical_name, content, owner, self.level())
    }

    pub fn download(&self, selector: &Selector, presented: &HostIdentity) -> Result<Delivery> {
        self.broker
            .request_download(selector, presented, self.level())
    }

    pub fn share(
        &self,
        object_id: &str,
        owner: &HostIdentity,
        grantee: &HostIdentity,
    ) -> Result<ShareGrant> {
        self.broker
            .create_share(object_id, owner, grantee, self.level())
    }

    pub fn redeem(&self, token: &str, presented: &HostIdentity) -> Result<Delivery> {
        self.broker.redeem_share(token, presented, self.level())
    }

    /// Checks every record against the provider: referenced objects exist,
    /// original metadata carries the embedded identity, decoys match their
    /// regenerated content. Also runs the FPE self-test. With
    /// `remove_orphans`, unreferenced provider objects are deleted; do not
    /// combine that with uploads in flight.
    pub fn verify(&self, remove_orphans: bool) -> Result<VerifyReport> {
        self.catalog.reload()?;
        let mut report = VerifyReport::default();
        let mut referenced = HashSet::new();
        let mut page = 0;
        loop {
            let records = self.catalog.list_records(page, 256);
            if records.is_empty() {
                break;
            }
            for record in &records {
                report.records_checked += 1;
                referenced.extend(record.store_keys().map(str::to_owned));
                self.verify_record(record, &mut report)?;
            }
            page += 1;
        }
        let listed = self.store.list_objects()?;
        report.objects_checked = listed.len();
        for (key, name) in listed {
            if !referenced.contains(&key) {
                if remove_orphans {
                    self.store.delete_object(&key)?;
                    report.orphans_removed += 1;
                }
                report.orphans.push(format!("{key} ({name})"));
            }
        }
        match fpe_self_test(&self.key) {
            Ok(()) => report.fpe_self_test_passed = true,
            Err(e) => report.integrity_errors.push(format!("fpe self-test: {e}")),
        }
        Ok(report)
    }

    fn verify_record(&self, record: &ObjectRecord, report: &mut VerifyReport) -> Result<()> {
        let id = &record.object_id;
        if let Err(e) = record.validate() {
            report.integrity_errors.push(e.to_string());
        }
        let original = match self.store.get_object(&record.original_store_key) {
            Ok(o) => o,
            Err(Error::NotFound(_)) => {
                report.integrity_errors.push(format!(
                    "{id}: original {} missing",
                    record.original_store_key
                ));
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let emb = |k: &str| original.metadata.get(k).map(String::as_str).unwrap_or("");
        let owner = &record.owner_identity;
        let expected = [
            ("emb.mac", owner.mac.as_deref()),
            ("emb.ip", owner.ip.as_deref()),
            ("emb.hostname", owner.hostname.as_deref()),
            ("emb.user_id", owner.user_id.as_deref()),
            ("emb.quad_hash", owner.quad_hash.as_deref()),
        ];
        for (k, v) in expected {
            if emb(k) != v.unwrap_or("") {
                report
                    .integrity_errors
                    .push(format!("{id}: {k} disagrees with catalog"));
            }
        }
        for d in &record.decoys {
            match self.store.get_object(&d.store_key) {
                Ok(obj) => {
                    let regenerated =
                        decoy::generate_decoy(&original.content, &self.key, id, d.decoy_index)?;
                    if obj.content != regenerated {
                        report.integrity_errors.push(format!(
                            "{id}: decoy {} differs from regenerated content",
                            d.decoy_index
                        ));
                    }
                    if obj.metadata.get("decoy.of").map(String::as_str) != Some(id.as_str()) {
                        report
                            .integrity_errors
                            .push(format!("{id}: decoy {} has wrong decoy.of", d.decoy_index));
                    }
                }
                Err(Error::NotFound(_)) => report.integrity_errors.push(format!(
                    "{id}: decoy {} object {} missing",
                    d.decoy_index, d.store_key
                )),
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }
}

/// Roundtrip on assorted lengths plus exhaustive bijectivity for lengths 1..=3.
pub fn fpe_self_test(key: &FpeKey) -> std::result::Result<(), String> {
    let tweak = Tweak::new("self-test", 1, 0);
    for len in 1..=3usize {
        let total = 10usize.pow(len as u32);
        let mut seen = vec![false; total];
        for i in 0..total {
            let p = format!("{i:0len$}");
            let c = fpe::encrypt_digits(key, &tweak, &p).map_err(|e| e.to_string())?;
            let slot: usize = c.parse().map_err(|_| format!("non-numeric output {c:?}"))?;
            if c.len() != len || std::mem::replace(&mut seen[slot], true) {
                return Err(format!("length {len} is not a bijection"));
            }
            if fpe::decrypt_digits(key, &tweak, &c).map_err(|e| e.to_string())? != p {
                return Err(format!("roundtrip failed for {p}"));
            }
        }
    }
    for len in [4usize, 9, 16, 31, 64] {
        let p: String = (0..len)
            .map(|i| char::from(b'0' + ((i * 7 + 3) % 10) as u8))
            .collect();
        let c = fpe::encrypt_digits(key, &tweak, &p).map_err(|e| e.to_string())?;
        if fpe::decrypt_digits(key, &tweak, &c).map_err(|e| e.to_string())? != p {
            return Err(format!("roundtrip failed at length {len}"));
        }
    }
    Ok(())
}
