//! Deception-based data-exfiltration mitigation for object storage.
//!
//! Every uploaded file is stored next to machine-generated decoy replicas
//! whose numeric content has been rewritten with a format-preserving digit
//! cipher. Download and share requests are verified against host identifiers
//! captured at upload time; requesters that fail verification silently
//! receive a decoy and the event is written to the audit log. Verification
//! strictness and the number of decoys follow an INFOCON-style threat level.
//!
//! The main entry point is [`Vault`], which wires the engines together over a
//! vault directory. The individual engines are usable on their own:
//!
//! - [`fpe`]: keyed, length-preserving bijection on decimal digit strings.
//! - [`scanner`]: tokenizer and numeric-span locator.
//! - [`decoy`]: decoy content and decoy names.
//! - [`identity`]: host identifiers, canonical forms, 4-tuple hash, matching.
//! - [`store`]: object store abstraction with filesystem and memory backends.
//! - [`catalog`]: original/decoy bindings.
//! - [`threat`]: threat level and policy table.
//! - [`audit`]: append-only event log.
//! - [`broker`]: upload pipeline and the verified download/share gate.

pub mod audit;
pub mod broker;
pub mod catalog;
pub mod decoy;
mod error;
pub mod fpe;
mod fsutil;
pub mod identity;
mod jsondir;
pub mod scanner;
pub mod shares;
pub mod store;
pub mod threat;
pub mod vault;

pub use audit::{AuditEvent, AuditLog, AuditQuery, EventKind, NewEvent, Outcome};
pub use broker::{AccessBroker, AccessVerdict, Delivery, Selector};
pub use catalog::{Catalog, DecoyEntry, ObjectRecord};
pub use error::{Error, Result};
pub use fpe::{FpeError, FpeKey, Tweak};
pub use identity::{HostIdentity, Identifier, IdentifierSet, MatchResult};
pub use shares::{GrantBinding, ShareGrant};
pub use store::{FsObjectStore, MemoryObjectStore, ObjectStore, StoredObject};
pub use threat::{InfoconLevel, ThreatState};
pub use vault::{Vault, VaultConfig, VerifyReport};

/// 16 random bytes rendered as 32 lowercase hex characters.
pub(crate) fn random_id() -> String {
    use rand::RngCore;
    let mut bytes = [0u8; 16];
    rand::rngs::OsRng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

pub(crate) fn is_random_id(s: &str) -> bool {
    s.len() == 32 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}
