//! Device-side state: the credential bundle handed out at enrollment and a
//! simulated fleet that answers renewal requests.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use atlas_core::{parse_urn, DeviceUrn, DeviceUuid};
use parking_lot::Mutex;
use rustls::pki_types::CertificateDer;
use time::OffsetDateTime;

use super::LifecycleError;
use crate::certs::{self, build_csr, CertInfo, DeviceKey};
use crate::inventory::DeviceRecord;

/// Credentials delivered to a device at enrollment. The private key lives here
/// and nowhere on the backend.
#[derive(Debug, Clone)]
pub struct ProvisionedDevice {
    pub urn: DeviceUrn,
    pub key: DeviceKey,
    /// Leaf first, then the issuing CA.
    pub chain_pem: String,
    pub issued_at: OffsetDateTime,
}

fn io_err(path: &Path, source: std::io::Error) -> LifecycleError {
    LifecycleError::Io { path: path.display().to_string(), source }
}

impl ProvisionedDevice {
    pub fn uuid(&self) -> DeviceUuid {
        self.urn.uuid()
    }

    pub fn chain_ders(&self) -> Result<Vec<CertificateDer<'static>>, LifecycleError> {
        Ok(certs::pem_to_ders(&self.chain_pem)?)
    }

    pub fn leaf(&self) -> Result<CertInfo, LifecycleError> {
        Ok(certs::inspect_cert(&self.chain_ders()?[0])?)
    }

    /// CSR for the device's own name over its existing key.
    pub fn renewal_csr(&self) -> Result<Vec<u8>, LifecycleError> {
        Ok(build_csr(&self.key, &self.urn.to_string())?)
    }

    pub fn key_path(dir: &Path, uuid: &DeviceUuid) -> PathBuf {
        dir.join(format!("{uuid}.key.pem"))
    }

    pub fn chain_path(dir: &Path, uuid: &DeviceUuid) -> PathBuf {
        dir.join(format!("{uuid}.chain.pem"))
    }

    /// Writes `<uuid>.key.pem` (owner-only on Unix) and `<uuid>.chain.pem` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), LifecycleError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let key_path = Self::key_path(dir, &self.uuid());
        write_private(&key_path, self.key.to_pkcs8_pem().as_bytes()).map_err(|e| io_err(&key_path, e))?;
        let chain_path = Self::chain_path(dir, &self.uuid());
        fs::write(&chain_path, &self.chain_pem).map_err(|e| io_err(&chain_path, e))
    }

    pub fn load(dir: &Path, uuid: &DeviceUuid) -> Result<Self, LifecycleError> {
        let key_path = Self::key_path(dir, uuid);
        let key_pem = fs::read_to_string(&key_path).map_err(|e| io_err(&key_path, e))?;
        let chain_path = Self::chain_path(dir, uuid);
        let chain_pem = fs::read_to_string(&chain_path).map_err(|e| io_err(&chain_path, e))?;
        let key = DeviceKey::from_pkcs8_pem(&key_pem)?;
        let leaf = certs::inspect_cert(&certs::pem_to_ders(&chain_pem)?[0])?;
        let name = leaf.dns_names.first().or(leaf.common_name.as_ref()).ok_or_else(|| {
            LifecycleError::Identity(atlas_core::IdentityError::MalformedUrn("certificate names no device".into()))
        })?;
        let urn = parse_urn(name)?;
        if urn.uuid() != *uuid {
            return Err(LifecycleError::Identity(atlas_core::IdentityError::MalformedUrn(format!(
                "{} holds a certificate for {urn}",
                chain_path.display()
            ))));
        }
        if leaf.spki_fingerprint != key.public_key_fingerprint()? {
            return Err(LifecycleError::KeyMismatch { want: leaf.spki_fingerprint, got: key.public_key_fingerprint()? });
        }
        Ok(Self { urn, key, chain_pem, issued_at: leaf.not_before })
    }

    /// Every device bundle in `dir`.
    pub fn load_all(dir: &Path) -> Result<Vec<Self>, LifecycleError> {
        let mut out = Vec::new();
        let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| io_err(dir, e))?.path();
            let Some(uuid) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".chain.pem")) else {
                continue;
            };
            if let Ok(uuid) = uuid.parse() {
                out.push(Self::load(dir, &uuid)?);
            }
        }
        out.sort_by_key(|d| d.uuid());
        Ok(out)
    }
}

#[cfg(unix)]
fn write_private(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    use std::os::unix::fs::OpenOptionsExt;
    let mut f = fs::OpenOptions::new().write(true).create(true).truncate(true).mode(0o600).open(path)?;
    f.write_all(bytes)
}

#[cfg(not(unix))]
fn write_private(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    fs::write(path, bytes)
}

/// The device end of a renewal: produce a CSR over the device's current key,
/// then accept the new chain. Implementations decide whether the device is
/// reachable right now.
pub trait DeviceAgent: Send + Sync {
    /// `None` when the device cannot be reached.
    fn renewal_csr(&self, record: &DeviceRecord) -> Option<Vec<u8>>;
    fn install_chain(&self, uuid: &DeviceUuid, chain_pem: &str, at: OffsetDateTime);
}

/// In-memory stand-in for a population of devices.
#[derive(Debug, Default)]
pub struct Fleet {
    devices: Mutex<BTreeMap<DeviceUuid, ProvisionedDevice>>,
    offline: Mutex<BTreeSet<DeviceUuid>>,
}

impl Fleet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, device: ProvisionedDevice) {
        self.devices.lock().insert(device.uuid(), device);
    }

    pub fn get(&self, uuid: &DeviceUuid) -> Option<ProvisionedDevice> {
        self.devices.lock().get(uuid).cloned()
    }

    pub fn devices(&self) -> Vec<ProvisionedDevice> {
        self.devices.lock().values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.devices.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn set_offline(&self, uuid: &DeviceUuid, offline: bool) {
        let mut set = self.offline.lock();
        if offline {
            set.insert(*uuid);
        } else {
            set.remove(uuid);
        }
    }
}

impl DeviceAgent for Fleet {
    fn renewal_csr(&self, record: &DeviceRecord) -> Option<Vec<u8>> {
        if self.offline.lock().contains(&record.uuid) {
            return None;
        }
        let dev = self.get(&record.uuid)?;
        dev.renewal_csr().ok()
    }

    fn install_chain(&self, uuid: &DeviceUuid, chain_pem: &str, at: OffsetDateTime) {
        if let Some(dev) = self.devices.lock().get_mut(uuid) {
            dev.chain_pem = chain_pem.to_owned();
            dev.issued_at = at;
        }
    }
}
