//! Host identifiers: collection, canonical forms, the 4-tuple hash and
//! field-by-field matching.
//!
//! Canonical forms:
//!
//! - MAC: lowercase, colon separated (`aa:bb:cc:dd:ee:ff`). `-`, `.` and
//!   bare 12-hex-digit input are accepted.
//! - IP: IPv4 dotted quad, IPv6 lowercase compressed.
//! - hostname and user id: trimmed, lowercase, non-empty, no `|`.
//!
//! A value that does not canonicalize is treated as absent. The quad hash is
//! `SHA-256(mac | ip | hostname | user_id)` over the canonical forms and only
//! exists when all four are present.

use std::fmt;
use std::net::{IpAddr, UdpSocket};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Identifier {
    Mac,
    Ip,
    Hostname,
    UserId,
    QuadHash,
}

impl Identifier {
    pub const ALL: [Identifier; 5] = [
        Identifier::Mac,
        Identifier::Ip,
        Identifier::Hostname,
        Identifier::UserId,
        Identifier::QuadHash,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Identifier::Mac => "mac",
            Identifier::Ip => "ip",
            Identifier::Hostname => "hostname",
            Identifier::UserId => "user_id",
            Identifier::QuadHash => "quad_hash",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Identifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Identifier::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown identifier {s:?}")))
    }
}

/// Subset of the five identifiers. Serializes as a list of names.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct IdentifierSet(u8);

impl IdentifierSet {
    pub const EMPTY: IdentifierSet = IdentifierSet(0);
    pub const ALL: IdentifierSet = IdentifierSet(0b1_1111);

    pub fn of(ids: &[Identifier]) -> Self {
        ids.iter().copied().collect()
    }

    pub fn insert(&mut self, id: Identifier) {
        self.0 |= id.bit();
    }

    pub fn contains(self, id: Identifier) -> bool {
        self.0 & id.bit() != 0
    }

    pub fn is_superset(self, other: IdentifierSet) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_subset(self, other: IdentifierSet) -> bool {
        other.is_superset(self)
    }

    pub fn intersection(self, other: IdentifierSet) -> IdentifierSet {
        IdentifierSet(self.0 & other.0)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Identifier> {
        Identifier::ALL
            .into_iter()
            .filter(move |id| self.contains(*id))
    }
}

impl FromIterator<Identifier> for IdentifierSet {
    fn from_iter<I: IntoIterator<Item = Identifier>>(iter: I) -> Self {
        let mut set = IdentifierSet::EMPTY;
        for id in iter {
            set.insert(id);
        }
        set
    }
}

impl fmt::Debug for IdentifierSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set()
            .entries(self.iter().map(Identifier::as_str))
            .finish()
    }
}

impl fmt::Display for IdentifierSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(Identifier::as_str).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

impl Serialize for IdentifierSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter().map(Identifier::as_str))
    }
}

impl<'de> Deserialize<'de> for IdentifierSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(deserializer)?;
        names
            .iter()
            .map(|n| n.parse::<Identifier>())
            .collect::<Result<IdentifierSet>>()
            .map_err(serde::de::Error::custom)
    }
}

pub fn canonicalize_mac(raw: &str) -> Option<String> {
    let raw = raw.trim().as_bytes();
    let separators: &[usize] = match raw.len() {
        12 => &[],
        14 => &[4, 9],
        17 => &[2, 5, 8, 11, 14],
        _ => return None,
    };
    let sep = separators.first().map(|&i| raw[i]);
    let mut hex = String::with_capacity(12);
    for (i, &b) in raw.iter().enumerate() {
        if separators.contains(&i) {
            let ok = match raw.len() {
                14 => b == b'.',
                _ => matches!(b, b':' | b'-') && Some(b) == sep,
            };
            if !ok {
                return None;
            }
        } else if b.is_ascii_hexdigit() {
            hex.push(b.to_ascii_lowercase() as char);
        } else {
            return None;
        }
    }
    let octets: Vec<&str> = (0..6).map(|i| &hex[2 * i..2 * i + 2]).collect();
    Some(octets.join(":"))
}

pub fn canonicalize_ip(raw: &str) -> Option<String> {
    raw.trim().parse::<IpAddr>().ok().map(|ip| ip.to_string())
}

/// Canonical hostname or user id.
pub fn canonicalize_name(raw: &str) -> Option<String> {
    let value = raw.trim().to_lowercase();
    (!value.is_empty() && !value.contains('|')).then_some(value)
}

fn canonicalize_hash(raw: &str) -> Option<String> {
    let value = raw.trim().to_ascii_lowercase();
    (value.len() == 64 && value.bytes().all(|b| b.is_ascii_hexdigit())).then_some(value)
}

/// SHA-256 over `mac|ip|hostname|user_id`, lowercase hex.
///
/// Inputs are canonicalized first; any absent (or non-canonicalizable) field
/// makes the hash undefined.
pub fn compute_quad_hash(
    mac: Option<&str>,
    ip: Option<&str>,
    hostname: Option<&str>,
    user_id: Option<&str>,
) -> Result<String> {
    let fields = [
        (Identifier::Mac, mac.and_then(canonicalize_mac)),
        (Identifier::Ip, ip.and_then(canonicalize_ip)),
        (Identifier::Hostname, hostname.and_then(canonicalize_name)),
        (Identifier::UserId, user_id.and_then(canonicalize_name)),
    ];
    let missing: Vec<&str> = fields
        .iter()
        .filter(|(_, v)| v.is_none())
        .map(|(id, _)| id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::UndefinedHash(missing.join(",")));
    }
    let joined = fields
        .iter()
        .map(|(_, v)| v.as_deref().unwrap())
        .collect::<Vec<_>>()
        .join("|");
    Ok(hex::encode(Sha256::digest(joined.as_bytes())))
}

/// Four host identifiers plus the 4-tuple hash. `None` marks an absent field.
///
/// For identities built from local facts ([`HostIdentity::new`],
/// [`collect`]) `quad_hash` is always the hash of the other four fields. A
/// presented identity arriving from a client may carry any claimed hash; see
/// [`HostIdentity::with_claimed_quad_hash`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HostIdentity {
    pub mac: Option<String>,
    pub ip: Option<String>,
    pub hostname: Option<String>,
    pub user_id: Option<String>,
    pub quad_hash: Option<String>,
}

impl HostIdentity {
    pub fn new(
        mac: Option<&str>,
        ip: Option<&str>,
        hostname: Option<&str>,
        user_id: Option<&str>,
    ) -> Self {
        let mut id = HostIdentity {
            mac: mac.and_then(canonicalize_mac),
            ip: ip.and_then(canonicalize_ip),
            hostname: hostname.and_then(canonicalize_name),
            user_id: user_id.and_then(canonicalize_name),
            quad_hash: None,
        };
        id.recompute_quad_hash();
        id
    }

    /// Replaces the hash with a client-supplied value, without recomputing.
    pub fn with_claimed_quad_hash(mut self, claimed: Option<&str>) -> Self {
        self.quad_hash = claimed.and_then(canonicalize_hash);
        self
    }

    pub fn recompute_quad_hash(&mut self) {
        self.quad_hash = compute_quad_hash(
            self.mac.as_deref(),
            self.ip.as_deref(),
            self.hostname.as_deref(),
            self.user_id.as_deref(),
        )
        .ok();
    }

    pub fn get(&self, id: Identifier) -> Option<&str> {
        match id {
            Identifier::Mac => self.mac.as_deref(),
            Identifier::Ip => self.ip.as_deref(),
            Identifier::Hostname => self.hostname.as_deref(),
            Identifier::UserId => self.user_id.as_deref(),
            Identifier::QuadHash => self.quad_hash.as_deref(),
        }
    }

    /// Sets one field through its canonicalizer. Does not touch `quad_hash`
    /// unless `id` is [`Identifier::QuadHash`].
    pub fn set(&mut self, id: Identifier, raw: Option<&str>) {
        match id {
            Identifier::Mac => self.mac = raw.and_then(canonicalize_mac),
            Identifier::Ip => self.ip = raw.and_then(canonicalize_ip),
            Identifier::Hostname => self.hostname = raw.and_then(canonicalize_name),
            Identifier::UserId => self.user_id = raw.and_then(canonicalize_name),
            Identifier::QuadHash => self.quad_hash = raw.and_then(canonicalize_hash),
        }
    }

    /// The four base identifiers that are absent.
    pub fn missing(&self) -> IdentifierSet {
        Identifier::ALL[..4]
            .iter()
            .copied()
            .filter(|id| self.get(*id).is_none())
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.missing().is_empty()
    }

    pub fn present(&self) -> IdentifierSet {
        Identifier::ALL
            .into_iter()
            .filter(|id| self.get(*id).is_some())
            .collect()
    }

    /// `mac|ip|hostname|user_id` with absent fields rendered empty.
    pub fn canonical_concat(&self) -> String {
        [&self.mac, &self.ip, &self.hostname, &self.user_id]
            .iter()
            .map(|v| v.as_deref().unwrap_or(""))
            .collect::<Vec<_>>()
            .join("|")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMatch {
    Matched,
    Mismatched,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Report for all five identifiers, in [`Identifier::ALL`] order.
    pub fields: [(Identifier, FieldMatch); 5],
    pub required: IdentifierSet,
    pub overall: bool,
}

impl MatchResult {
    /// Identifiers that matched, whether required or not.
    pub fn matched(&self) -> IdentifierSet {
        self.fields
            .iter()
            .filter(|(_, m)| *m == FieldMatch::Matched)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn field(&self, id: Identifier) -> FieldMatch {
        self.fields[id as usize].1
    }
}

/// Compares the required identifiers. A field absent on either side is a
/// mismatch.
pub fn match_identities(
    embedded: &HostIdentity,
    presented: &HostIdentity,
    required: IdentifierSet,
) -> MatchResult {
    let fields = Identifier::ALL.map(|id| {
        let state = match (embedded.get(id), presented.get(id)) {
            (Some(a), Some(b)) if a.as_bytes() == b.as_bytes() => FieldMatch::Matched,
            (Some(_), Some(_)) => FieldMatch::Mismatched,
            _ => FieldMatch::Absent,
        };
        (id, state)
    });
    let mut result = MatchResult {
        fields,
        required,
        overall: false,
    };
    result.overall = result.matched().is_superset(required);
    result
}

/// Source of the local host identity. [`SystemIdentity`] reads the running
/// host; tests and attested deployments can provide their own.
pub trait IdentitySource: Send + Sync {
    fn collect(&self) -> HostIdentity;
}

/// Reads MAC, IP, hostname and user name from the operating system.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemIdentity;

impl IdentitySource for SystemIdentity {
    fn collect(&self) -> HostIdentity {
        let mac = primary_mac();
        let ip = primary_ip();
        let hostname = gethostname::gethostname().into_string().ok();
        let user = whoami::username().ok();
        HostIdentity::new(
            mac.as_deref(),
            ip.as_deref(),
            hostname.as_deref(),
            user.as_deref(),
        )
    }
}

/// Identity of the running host.
pub fn collect() -> HostIdentity {
    SystemIdentity.collect()
}

#[cfg(target_os = "linux")]
fn primary_mac() -> Option<String> {
    use std::fs;

    let read_mac = |iface: &str| -> Option<String> {
        let raw = fs::read_to_string(format!("/sys/class/net/{iface}/address")).ok()?;
        canonicalize_mac(&raw).filter(|m| m != "00:00:00:00:00:00")
    };
    // Interface carrying the default route first.
    if let Ok(routes) = fs::read_to_string("/proc/net/route") {
        for line in routes.lines().skip(1) {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() > 1 && cols[1] == "00000000" {
                if let Some(mac) = read_mac(cols[0]) {
                    return Some(mac);
                }
            }
        }
    }
    let mut ifaces: Vec<String> = fs::read_dir("/sys/class/net")
        .ok()?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n != "lo")
        .collect();
    ifaces.sort();
    ifaces.iter().find_map(|i| read_mac(i))
}

#[cfg(not(target_os = "linux"))]
fn primary_mac() -> Option<String> {
    None
}

/// Source address the OS would pick for an outbound route. Connecting a UDP
/// socket sends nothing.
fn primary_ip() -> Option<String> {
    let probe = |bind: &str, target: &str| -> Option<IpAddr> {
        let socket = UdpSocket::bind(bind).ok()?;
        socket.connect(target).ok()?;
        let ip = socket.local_addr().ok()?.ip();
        (!ip.is_unspecified()).then_some(ip)
    };
    probe("0.0.0.0:0", "192.0.2.1:9")
        .or_else(|| probe("[::]:0", "[2001:db8::1]:9"))
        .map(|ip| ip.to_string())
}
