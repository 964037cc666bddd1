//! Device registry: identity, certificate metadata and renewal state.
//!
//! The registry never holds private keys. Snapshots are a line-oriented text
//! file:
//!
//! ```text
//! ATLASINV v1
//! {"urn":"...","uuid":"...",...}
//! ...
//! sha256 <hex digest of every preceding byte>
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use atlas_core::{DeviceUrn, DeviceUuid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use time::{Duration, OffsetDateTime};

use crate::certs::{self, CertError};

pub const SNAPSHOT_HEADER: &str = "ATLASINV v1";

/// Longest lifetime accepted for certificates issued through this system.
pub const MAX_CERT_LIFETIME: Duration = Duration::days(90);

/// Renewal lead time before expiry.
pub const RENEWAL_WINDOW: Duration = Duration::days(30);

#[derive(Debug, Error)]
pub enum InventoryError {
    #[error("unknown device {0}")]
    UnknownDevice(DeviceUuid),
    #[error("invalid certificate metadata: {0}")]
    InvalidMeta(String),
    #[error("device {0} is already revoked")]
    AlreadyRevoked(DeviceUuid),
    #[error("device {0} has no certificate")]
    NoCertificate(DeviceUuid),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("I/O failure on {path}: {source}")]
    IoFailure { path: String, source: io::Error },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenewalState {
    Current,
    Due,
    InProgress,
    Expired,
    Revoked,
}

impl fmt::Display for RenewalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

/// RFC 5280 reason codes a vendor is expected to use for device certificates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RevocationReason {
    Unspecified,
    KeyCompromise,
    Superseded,
    CessationOfOperation,
}

impl std::str::FromStr for RevocationReason {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| format!("unknown reason {s:?} (unspecified, keyCompromise, superseded, cessationOfOperation)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateMeta {
    /// Decimal serial number.
    pub serial: String,
    #[serde(with = "time::serde::rfc3339")]
    pub not_before: OffsetDateTime,
    #[serde(with = "time::serde::rfc3339")]
    pub not_after: OffsetDateTime,
    /// SHA-256 hex of the subject public key info.
    pub public_key_fingerprint: String,
    #[serde(with = "time::serde::rfc3339")]
    pub issuance_time: OffsetDateTime,
    /// Leaf certificate, PEM.
    pub pem: String,
}

impl CertificateMeta {
    /// Builds metadata from the leaf (first block) of a PEM chain.
    pub fn from_chain_pem(chain_pem: &str, issuance_time: OffsetDateTime) -> Result<Self, CertError> {
        let ders = certs::pem_to_ders(chain_pem)?;
        let info = certs::inspect_cert(&ders[0])?;
        Ok(Self {
            serial: info.serial,
            not_before: info.not_before,
            not_after: info.not_after,
            public_key_fingerprint: info.spki_fingerprint,
            issuance_time,
            pem: certs::ders_to_pem([ders[0].as_ref()]),
        })
    }

    fn validate(&self) -> Result<(), InventoryError> {
        if self.not_before >= self.not_after {
            return Err(InventoryError::InvalidMeta(format!(
                "not_before {} is not before not_after {}",
                self.not_before, self.not_after
            )));
        }
        if self.not_after - self.not_before > MAX_CERT_LIFETIME {
            return Err(InventoryError::InvalidMeta("lifetime exceeds 90 days".into()));
        }
        if certs::contains_private_key(self.pem.as_bytes()) {
            return Err(InventoryError::InvalidMeta("certificate blob carries a private key".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub urn: DeviceUrn,
    pub uuid: DeviceUuid,
    pub current_cert: Option<CertificateMeta>,
    pub renewal_state: RenewalState,
    /// Gateway allowed to renew on the device's behalf.
    pub gateway_delegation: Option<String>,
    #[serde(with = "time::serde::rfc3339")]
    pub created_at: OffsetDateTime,
    /// Every serial ever attached to this device, oldest first.
    pub serial_history: Vec<String>,
    pub revocation_reason: Option<RevocationReason>,
}

impl DeviceRecord {
    pub fn remaining(&self, now: OffsetDateTime) -> Option<Duration> {
        self.current_cert.as_ref().map(|c| c.not_after - now)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Inventory {
    records: BTreeMap<DeviceUuid, DeviceRecord>,
}

impl Inventory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, uuid: &DeviceUuid) -> Option<&DeviceRecord> {
        self.records.get(uuid)
    }

    pub fn records(&self) -> impl Iterator<Item = &DeviceRecord> {
        self.records.values()
    }

    /// Creates the record if absent; returns the stored record either way.
    pub fn upsert_device(&mut self, urn: &DeviceUrn, now: OffsetDateTime) -> Result<DeviceRecord, InventoryError> {
        let uuid = urn.uuid();
        if let Some(existing) = self.records.get(&uuid) {
            if &existing.urn != urn {
                return Err(InventoryError::StorageFailure(format!(
                    "uuid {uuid} already registered as {}",
                    existing.urn
                )));
            }
            return Ok(existing.clone());
        }
        let record = DeviceRecord {
            urn: urn.clone(),
            uuid,
            current_cert: None,
            renewal_state: RenewalState::Due,
            gateway_delegation: None,
            created_at: now,
            serial_history: Vec::new(),
            revocation_reason: None,
        };
        self.records.insert(uuid, record.clone());
        Ok(record)
    }

    pub fn attach_certificate(&mut self, uuid: &DeviceUuid, meta: CertificateMeta) -> Result<DeviceRecord, InventoryError> {
        meta.validate()?;
        let record = self.records.get_mut(uuid).ok_or(InventoryError::UnknownDevice(*uuid))?;
        if record.renewal_state == RenewalState::Revoked {
            return Err(InventoryError::AlreadyRevoked(*uuid));
        }
        if !record.serial_history.contains(&meta.serial) {
            record.serial_history.push(meta.serial.clone());
        }
        record.current_cert = Some(meta);
        record.renewal_state = RenewalState::Current;
        Ok(record.clone())
    }

    pub fn set_state(&mut self, uuid: &DeviceUuid, state: RenewalState) -> Result<(), InventoryError> {
        let record = self.records.get_mut(uuid).ok_or(InventoryError::UnknownDevice(*uuid))?;
        if record.renewal_state == RenewalState::Revoked && state != RenewalState::Revoked {
            return Err(InventoryError::AlreadyRevoked(*uuid));
        }
        record.renewal_state = state;
        Ok(())
    }

    pub fn set_delegation(&mut self, uuid: &DeviceUuid, gateway_id: Option<String>) -> Result<(), InventoryError> {
        let record = self.records.get_mut(uuid).ok_or(InventoryError::UnknownDevice(*uuid))?;
        record.gateway_delegation = gateway_id;
        Ok(())
    }

    /// Records with a certificate expiring within `window` of `now`, excluding
    /// revoked devices and renewals already in flight. Marks nothing.
    pub fn due_for_renewal(&self, now: OffsetDateTime, window: Duration) -> Vec<DeviceRecord> {
        self.records
            .values()
            .filter(|r| !matches!(r.renewal_state, RenewalState::Revoked | RenewalState::InProgress))
            .filter(|r| r.remaining(now).is_some_and(|left| left <= window))
            .cloned()
            .collect()
    }

    /// Moves current/due devices whose certificate has lapsed to `expired`.
    pub fn refresh_expiry(&mut self, now: OffsetDateTime) -> usize {
        let mut n = 0;
        for r in self.records.values_mut() {
            let lapsed = r.current_cert.as_ref().is_some_and(|c| now > c.not_after);
            if lapsed && matches!(r.renewal_state, RenewalState::Current | RenewalState::Due) {
                r.renewal_state = RenewalState::Expired;
                n += 1;
            }
        }
        n
    }

    /// Marks the device revoked; returns every serial it has ever held.
    pub fn revoke(&mut self, uuid: &DeviceUuid, reason: RevocationReason) -> Result<Vec<String>, InventoryError> {
        let record = self.records.get_mut(uuid).ok_or(InventoryError::UnknownDevice(*uuid))?;
        if record.renewal_state == RenewalState::Revoked {
            return Err(InventoryError::AlreadyRevoked(*uuid));
        }
        if record.current_cert.is_none() {
            return Err(InventoryError::NoCertificate(*uuid));
        }
        record.renewal_state = RenewalState::Revoked;
        record.revocation_reason = Some(reason);
        Ok(record.serial_history.clone())
    }

    /// Serials of revoked devices under `root_domain`.
    pub fn revoked_serials(&self, root_domain: &str) -> Vec<String> {
        self.vendor_records(root_domain)
            .filter(|r| r.renewal_state == RenewalState::Revoked)
            .flat_map(|r| r.serial_history.iter().cloned())
            .collect()
    }

    /// Every serial ever issued to a device under `root_domain`.
    pub fn issued_serials(&self, root_domain: &str) -> Vec<String> {
        self.vendor_records(root_domain).flat_map(|r| r.serial_history.iter().cloned()).collect()
    }

    fn vendor_records<'a>(&'a self, root_domain: &'a str) -> impl Iterator<Item = &'a DeviceRecord> + 'a {
        self.records.values().filter(move |r| r.urn.root_domain() == root_domain)
    }

    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        out.push_str(SNAPSHOT_HEADER);
        out.push('\n');
        for r in self.records.values() {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        let digest = hex::encode(Sha256::digest(out.as_bytes()));
        out.push_str("sha256 ");
        out.push_str(&digest);
        out.push('\n');
        out.into_bytes()
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Self, InventoryError> {
        let corrupt = |m: &str| InventoryError::CorruptSnapshot(m.to_owned());
        let text = std::str::from_utf8(bytes).map_err(|_| corrupt("not UTF-8"))?;
        let body_end = text.trim_end_matches('\n').rfind('\n').map(|i| i + 1).ok_or_else(|| corrupt("missing trailer"))?;
        let (body, trailer) = text.split_at(body_end);
        let want = trailer.trim_end().strip_prefix("sha256 ").ok_or_else(|| corrupt("missing trailer"))?;
        if hex::encode(Sha256::digest(body.as_bytes())) != want {
            return Err(corrupt("checksum mismatch"));
        }
        let mut lines = body.lines();
        if lines.next() != Some(SNAPSHOT_HEADER) {
            return Err(corrupt("bad header"));
        }
        let mut records = BTreeMap::new();
        for line in lines {
            let r: DeviceRecord = serde_json::from_str(line).map_err(|e| corrupt(&e.to_string()))?;
            if r.urn.uuid() != r.uuid || records.insert(r.uuid, r).is_some() {
                return Err(corrupt("duplicate or inconsistent record"));
            }
        }
        Ok(Self { records })
    }

    pub fn snapshot(&self, path: &Path) -> Result<(), InventoryError> {
        let io_err = |source| InventoryError::IoFailure { path: path.display().to_string(), source };
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_snapshot_bytes()).map_err(io_err)?;
        fs::rename(&tmp, path).map_err(io_err)
    }

    pub fn restore(path: &Path) -> Result<Self, InventoryError> {
        let bytes = fs::read(path).map_err(|source| InventoryError::IoFailure { path: path.display().to_string(), source })?;
        Self::from_snapshot_bytes(&bytes)
    }
}
