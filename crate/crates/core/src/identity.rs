//! Vendor-rooted device identities.
//!
//! A device is named by a version 5 UUID placed under a vendor DNS namespace:
//!
//! ```text
//! <uuid>.<device-class>.<root-domain>
//! ```
//!
//! The UUID is derived from the vendor's root domain and a device-bound secret,
//! so the same device always maps to the same name without any central registry.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha1::Sha1;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// RFC 4122 namespace UUID for fully-qualified domain names.
pub const NAMESPACE_DNS: [u8; 16] = [
    0x6b, 0xa7, 0xb8, 0x10, 0x9d, 0xad, 0x11, 0xd1, 0x80, 0xb4, 0x00, 0xc0, 0x4f, 0xd4, 0x30, 0xc8,
];

/// Minimum accepted length of a device secret, in bytes.
pub const MIN_SECRET_LEN: usize = 16;

/// Maximum length of a textual FQDN (RFC 1035, without the trailing dot).
pub const MAX_FQDN_LEN: usize = 253;

const MAX_LABEL_LEN: usize = 63;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdentityError {
    #[error("invalid namespace: {0}")]
    InvalidNamespace(String),
    #[error("device secret too short: {len} bytes (need at least {MIN_SECRET_LEN})")]
    WeakSecret { len: usize },
    #[error("FQDN is {len} octets, limit is {MAX_FQDN_LEN}")]
    FqdnTooLong { len: usize },
    #[error("malformed device URN: {0}")]
    MalformedUrn(String),
}

/// Checks a single hostname label: letters, digits and hyphens, no leading or
/// trailing hyphen, 1 to 63 octets.
pub fn is_valid_label(label: &str) -> bool {
    let bytes = label.as_bytes();
    !bytes.is_empty()
        && bytes.len() <= MAX_LABEL_LEN
        && bytes.iter().all(|b| b.is_ascii_alphanumeric() || *b == b'-')
        && bytes[0] != b'-'
        && bytes[bytes.len() - 1] != b'-'
}

/// Checks a dotted hostname made of [`is_valid_label`] labels, at most 253 octets.
pub fn is_valid_hostname(name: &str) -> bool {
    !name.is_empty() && name.len() <= MAX_FQDN_LEN && name.split('.').all(is_valid_label)
}

/// The DNS namespace a vendor issues device names under.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "NamespaceRepr", into = "NamespaceRepr")]
pub struct VendorNamespace {
    root_domain: String,
    device_class: String,
}

#[derive(Serialize, Deserialize)]
struct NamespaceRepr {
    root_domain: String,
    device_class: String,
}

impl TryFrom<NamespaceRepr> for VendorNamespace {
    type Error = IdentityError;
    fn try_from(r: NamespaceRepr) -> Result<Self, Self::Error> {
        VendorNamespace::new(&r.root_domain, &r.device_class)
    }
}

impl From<VendorNamespace> for NamespaceRepr {
    fn from(ns: VendorNamespace) -> Self {
        NamespaceRepr { root_domain: ns.root_domain, device_class: ns.device_class }
    }
}

impl VendorNamespace {
    /// Validates and canonicalizes (lowercases, strips one trailing dot) the parts.
    pub fn new(root_domain: &str, device_class: &str) -> Result<Self, IdentityError> {
        let root = root_domain.strip_suffix('.').unwrap_or(root_domain).to_ascii_lowercase();
        let class = device_class.to_ascii_lowercase();
        if !is_valid_hostname(&root) {
            return Err(IdentityError::InvalidNamespace(format!("bad root domain {root_domain:?}")));
        }
        if root.split('.').count() < 2 {
            return Err(IdentityError::InvalidNamespace(format!(
                "root domain {root_domain:?} needs at least two labels"
            )));
        }
        if !is_valid_label(&class) {
            return Err(IdentityError::InvalidNamespace(format!("bad device class {device_class:?}")));
        }
        Ok(Self { root_domain: root, device_class: class })
    }

    pub fn root_domain(&self) -> &str {
        &self.root_domain
    }

    pub fn device_class(&self) -> &str {
        &self.device_class
    }
}

impl fmt::Display for VendorNamespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.device_class, self.root_domain)
    }
}

/// Where a [`DeviceSecret`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecretSource {
    /// Built from provisioning inputs (the prototype uses the MAC address).
    Synthetic,
    /// Caller-supplied high-entropy secret, e.g. a hardware-derived key.
    External,
}

/// A stable, device-bound secret used as UUID derivation input.
#[derive(Clone, PartialEq, Eq)]
pub struct DeviceSecret {
    bytes: Vec<u8>,
    source: SecretSource,
}

impl fmt::Debug for DeviceSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeviceSecret")
            .field("len", &self.bytes.len())
            .field("source", &self.source)
            .finish()
    }
}

impl DeviceSecret {
    pub fn external(bytes: impl Into<Vec<u8>>) -> Result<Self, IdentityError> {
        let bytes = bytes.into();
        if bytes.len() < MIN_SECRET_LEN {
            return Err(IdentityError::WeakSecret { len: bytes.len() });
        }
        Ok(Self { bytes, source: SecretSource::External })
    }

    /// Synthetic secret from a MAC address in any of the usual notations
    /// (`aa:bb:cc:dd:ee:ff`, `AA-BB-...`, `aabbccddeeff`).
    ///
    /// The secret is the UTF-8 string `MAC-` followed by the twelve uppercase hex
    /// digits, which is exactly [`MIN_SECRET_LEN`] bytes.
    pub fn from_mac(mac: &str) -> Result<Self, IdentityError> {
        let hex: String = mac.chars().filter(|c| *c != ':' && *c != '-').collect();
        if hex.len() != 12 || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(IdentityError::InvalidNamespace(format!("bad MAC address {mac:?}")));
        }
        Ok(Self {
            bytes: format!("MAC-{}", hex.to_ascii_uppercase()).into_bytes(),
            source: SecretSource::Synthetic,
        })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn source(&self) -> SecretSource {
        self.source
    }
}

/// A 128-bit device UUID.
///
/// Everything derived here is version 5 with the RFC 4122 variant. Parsing accepts
/// any version so names minted by other identity sources still resolve.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeviceUuid([u8; 16]);

impl DeviceUuid {
    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        Self(bytes)
    }

    /// True when the variant bits are `10` (RFC 4122).
    pub fn is_rfc4122(&self) -> bool {
        self.0[8] >> 6 == 0b10
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    pub fn version(&self) -> u8 {
        self.0[6] >> 4
    }
}

/// Raw UUIDv5 primitive: SHA-1 over namespace and name, truncated to 128 bits,
/// with version and variant bits forced.
pub fn uuid_v5(namespace: &[u8; 16], name: &[u8]) -> DeviceUuid {
    let mut hasher = Sha1::new();
    hasher.update(namespace);
    hasher.update(name);
    let digest = hasher.finalize();
    let mut out = [0u8; 16];
    out.copy_from_slice(&digest[..16]);
    out[6] = (out[6] & 0x0f) | 0x50;
    out[8] = (out[8] & 0x3f) | 0x80;
    DeviceUuid(out)
}

/// Derives the device UUID as `UUIDv5(NS_DNS, hex(SHA-256(root_domain || 0x00 || secret)))`.
pub fn derive_device_uuid(ns: &VendorNamespace, secret: &DeviceSecret) -> Result<DeviceUuid, IdentityError> {
    if secret.bytes.len() < MIN_SECRET_LEN {
        return Err(IdentityError::WeakSecret { len: secret.bytes.len() });
    }
    let mut hasher = Sha256::new();
    hasher.update(ns.root_domain.as_bytes());
    hasher.update([0u8]);
    hasher.update(&secret.bytes);
    let name = hex_lower(&hasher.finalize());
    Ok(uuid_v5(&NAMESPACE_DNS, name.as_bytes()))
}

fn hex_lower(bytes: &[u8]) -> String {
    use fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl fmt::Display for DeviceUuid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = hex_lower(&self.0);
        write!(f, "{}-{}-{}-{}-{}", &h[0..8], &h[8..12], &h[12..16], &h[16..20], &h[20..32])
    }
}

impl fmt::Debug for DeviceUuid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DeviceUuid({self})")
    }
}

impl FromStr for DeviceUuid {
    type Err = IdentityError;

    /// Accepts only the hyphenated 8-4-4-4-12 form.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IdentityError::MalformedUrn(format!("bad UUID {s:?}"));
        let groups: Vec<&str> = s.split('-').collect();
        if groups.len() != 5 || groups.iter().map(|g| g.len()).ne([8, 4, 4, 4, 12]) {
            return Err(bad());
        }
        let hex: String = groups.concat();
        let mut out = [0u8; 16];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        if !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(bad());
        }
        Ok(DeviceUuid(out))
    }
}

impl Serialize for DeviceUuid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DeviceUuid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A device's canonical name: `<uuid>.<device_class>.<root_domain>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeviceUrn {
    uuid: DeviceUuid,
    namespace: VendorNamespace,
}

impl DeviceUrn {
    pub fn new(uuid: DeviceUuid, namespace: VendorNamespace) -> Result<Self, IdentityError> {
        let len = urn_len(&uuid, &namespace);
        if len > MAX_FQDN_LEN {
            return Err(IdentityError::FqdnTooLong { len });
        }
        Ok(Self { uuid, namespace })
    }

    pub fn uuid(&self) -> DeviceUuid {
        self.uuid
    }

    pub fn namespace(&self) -> &VendorNamespace {
        &self.namespace
    }

    pub fn root_domain(&self) -> &str {
        self.namespace.root_domain()
    }
}

fn urn_len(_uuid: &DeviceUuid, ns: &VendorNamespace) -> usize {
    36 + 1 + ns.device_class.len() + 1 + ns.root_domain.len()
}

/// Renders the URN string for `uuid` under `ns`.
pub fn format_urn(uuid: &DeviceUuid, ns: &VendorNamespace) -> Result<String, IdentityError> {
    Ok(DeviceUrn::new(*uuid, ns.clone())?.to_string())
}

/// Parses `<uuid>.<device_class>.<root_domain>`; case-insensitive, one trailing dot allowed.
pub fn parse_urn(s: &str) -> Result<DeviceUrn, IdentityError> {
    let s = s.strip_suffix('.').unwrap_or(s).to_ascii_lowercase();
    let mut parts = s.splitn(3, '.');
    let (uuid, class, root) = match (parts.next(), parts.next(), parts.next()) {
        (Some(u), Some(c), Some(r)) => (u, c, r),
        _ => return Err(IdentityError::MalformedUrn(format!("{s:?} has fewer than three labels"))),
    };
    let uuid: DeviceUuid = uuid.parse()?;
    let ns = VendorNamespace::new(root, class).map_err(|e| IdentityError::MalformedUrn(e.to_string()))?;
    DeviceUrn::new(uuid, ns).map_err(|e| IdentityError::MalformedUrn(e.to_string()))
}

impl fmt::Display for DeviceUrn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.uuid, self.namespace.device_class, self.namespace.root_domain)
    }
}

impl FromStr for DeviceUrn {
    type Err = IdentityError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_urn(s)
    }
}

impl Serialize for DeviceUrn {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DeviceUrn {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_urn(&s).map_err(serde::de::Error::custom)
    }
}
