//! Vendor-side orchestration of the device lifecycle: enrollment, scheduled
//! renewal over the device's existing key, gateway proxy renewal and
//! revocation.
//!
//! The backend generates each device key, hands it out in the
//! [`ProvisionedDevice`] bundle and forgets it. Renewals only ever see CSRs.

mod batch;
mod delegation;
mod device;
mod local;

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use atlas_core::{
    derive_device_uuid, DeviceSecret, DeviceUrn, DeviceUuid, FilterError, FilterPublisher, IdentityError,
    RevocationFilter, VendorNamespace,
};
use futures::StreamExt;
use parking_lot::Mutex;
use thiserror::Error;
use time::{Duration, OffsetDateTime};

use crate::acme::{AcmeClient, AcmeError, ChallengeType, HttpTokenShelf, VendorFulfiller};
use crate::certs::{self, build_csr, CertError, DeviceKey, KeyAlgorithm};
use crate::clock::SharedClock;
use crate::dns::{DnsAuthority, DnsError};
use crate::inventory::{CertificateMeta, DeviceRecord, Inventory, InventoryError, RenewalState, RevocationReason, RENEWAL_WINDOW};

pub use batch::{BatchEntry, BatchItem, BatchReport, MeanSd};
pub use delegation::{DelegationKey, DelegationRecord};
pub use device::{DeviceAgent, Fleet, ProvisionedDevice};
pub use local::{LocalPki, LocalPkiConfig};

#[derive(Debug, Error)]
pub enum LifecycleError {
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Inventory(#[from] InventoryError),
    #[error(transparent)]
    Dns(#[from] DnsError),
    #[error(transparent)]
    Acme(#[from] AcmeError),
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("enrollment of {uuid} aborted: {cause}")]
    EnrollmentAborted { uuid: DeviceUuid, cause: AcmeError },
    #[error("bad delegation: {0}")]
    BadDelegation(String),
    #[error("CSR key {got} does not match the recorded key {want}")]
    KeyMismatch { want: String, got: String },
    #[error("a renewal tick is already running")]
    TickInProgress,
    #[error("I/O failure on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn variant_name(debug: &str) -> String {
    debug.chars().take_while(|c| c.is_ascii_alphanumeric() || *c == '_').collect()
}

impl LifecycleError {
    /// Short name of the underlying error variant, e.g. `InvalidNamespace`.
    pub fn kind(&self) -> String {
        match self {
            Self::Identity(e) => variant_name(&format!("{e:?}")),
            Self::Inventory(e) => variant_name(&format!("{e:?}")),
            Self::Dns(e) => variant_name(&format!("{e:?}")),
            Self::Acme(e) => variant_name(&format!("{e:?}")),
            Self::Cert(e) => variant_name(&format!("{e:?}")),
            Self::Filter(e) => variant_name(&format!("{e:?}")),
            other => variant_name(&format!("{other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VendorConfig {
    /// Zone apex and root domain of every namespace this vendor enrolls.
    pub apex: String,
    /// CNAME target for device names.
    pub cloud_target: String,
    pub challenge: ChallengeType,
    pub key_algorithm: KeyAlgorithm,
    pub renewal_window: Duration,
    /// Concurrent enrollments or renewals.
    pub parallelism: usize,
    /// Derives the delegation signing key.
    pub seed: u64,
}

impl VendorConfig {
    pub fn new(apex: &str) -> Self {
        let apex = apex.trim_end_matches('.').to_ascii_lowercase();
        Self {
            cloud_target: format!("cloud.{apex}"),
            apex,
            challenge: ChallengeType::Dns01,
            key_algorithm: KeyAlgorithm::Rsa2048,
            renewal_window: RENEWAL_WINDOW,
            parallelism: 4,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RenewalKind {
    Renewed { old_serial: String, new_serial: String },
    /// Certificate lapsed before renewal; needs full re-enrollment.
    Expired,
    /// The device (or its agent) did not answer.
    Unreachable,
    /// Renewal attempted and failed; the record stays due.
    Failed { kind: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenewalOutcome {
    pub uuid: DeviceUuid,
    pub kind: RenewalKind,
}

struct TickGuard<'a>(&'a AtomicBool);

impl Drop for TickGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

/// What an enrollment got through before it finished or failed.
#[derive(Default)]
struct Progress {
    uuid: Option<DeviceUuid>,
    binding: Option<std::time::Duration>,
    issuance: Option<std::time::Duration>,
}

/// One vendor's provisioning backend.
pub struct Vendor {
    cfg: VendorConfig,
    dns: DnsAuthority,
    http: HttpTokenShelf,
    acme: AcmeClient,
    inventory: Mutex<Inventory>,
    clock: SharedClock,
    delegation_key: DelegationKey,
    publisher: Mutex<FilterPublisher>,
    ticking: AtomicBool,
}

impl std::fmt::Debug for Vendor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Vendor").field("apex", &self.cfg.apex).finish_non_exhaustive()
    }
}

impl Vendor {
    /// Wires a backend together. Every device already in `inventory` gets its
    /// CNAME (re)bound in `dns`.
    pub fn new(
        cfg: VendorConfig,
        dns: DnsAuthority,
        http: HttpTokenShelf,
        acme: AcmeClient,
        inventory: Inventory,
        clock: SharedClock,
    ) -> Result<Self, LifecycleError> {
        if dns.apex() != cfg.apex {
            return Err(DnsError::OutOfZone(format!("vendor apex {} differs from zone {}", cfg.apex, dns.apex())).into());
        }
        for r in inventory.records() {
            dns.bind_device(&r.urn, &cfg.cloud_target)?;
        }
        Ok(Self {
            delegation_key: DelegationKey::from_seed(cfg.seed),
            cfg,
            dns,
            http,
            acme,
            inventory: Mutex::new(inventory),
            clock,
            publisher: Mutex::new(FilterPublisher::default()),
            ticking: AtomicBool::new(false),
        })
    }

    pub fn config(&self) -> &VendorConfig {
        &self.cfg
    }

    pub fn apex(&self) -> &str {
        &self.cfg.apex
    }

    pub fn dns(&self) -> &DnsAuthority {
        &self.dns
    }

    pub fn shelf(&self) -> &HttpTokenShelf {
        &self.http
    }

    pub fn acme(&self) -> &AcmeClient {
        &self.acme
    }

    pub fn clock(&self) -> &SharedClock {
        &self.clock
    }

    pub fn inventory(&self) -> Inventory {
        self.inventory.lock().clone()
    }

    pub fn record(&self, uuid: &DeviceUuid) -> Option<DeviceRecord> {
        self.inventory.lock().get(uuid).cloned()
    }

    pub fn delegation_public_key(&self) -> [u8; 32] {
        self.delegation_key.public_key()
    }

    /// Continue epoch numbering after a filter published by an earlier run.
    pub fn resume_filter_epochs(&self, last_epoch: u64) {
        *self.publisher.lock() = FilterPublisher::resume_after(last_epoch);
    }

    fn fulfiller(&self) -> VendorFulfiller {
        VendorFulfiller { dns: self.dns.clone(), http: self.http.clone() }
    }

    /// Derive, register, bind, generate a key, and obtain a certificate.
    pub async fn enroll_device(
        &self,
        ns: &VendorNamespace,
        secret: &DeviceSecret,
        challenge: ChallengeType,
    ) -> Result<ProvisionedDevice, LifecycleError> {
        self.enroll_inner(ns, secret, challenge, &mut Progress::default()).await
    }

    async fn enroll_inner(
        &self,
        ns: &VendorNamespace,
        secret: &DeviceSecret,
        challenge: ChallengeType,
        progress: &mut Progress,
    ) -> Result<ProvisionedDevice, LifecycleError> {
        let uuid = derive_device_uuid(ns, secret)?;
        progress.uuid = Some(uuid);
        if ns.root_domain() != self.cfg.apex {
            return Err(DnsError::OutOfZone(format!("{ns} is not under {}", self.cfg.apex)).into());
        }
        let urn = DeviceUrn::new(uuid, ns.clone())?;
        let now = self.clock.now();
        self.inventory.lock().upsert_device(&urn, now)?;

        let t = Instant::now();
        self.dns.bind_device(&urn, &self.cfg.cloud_target)?;
        progress.binding = Some(t.elapsed());

        let alg = self.cfg.key_algorithm;
        let key = tokio::task::spawn_blocking(move || DeviceKey::generate(alg))
            .await
            .map_err(|e| CertError::KeyGen(e.to_string()))??;
        let fqdn = urn.to_string();
        let csr = build_csr(&key, &fqdn)?;

        let t = Instant::now();
        let chain = match self.acme.obtain_certificate(&fqdn, &csr, challenge, &self.fulfiller()).await {
            Ok(chain) => chain,
            Err(cause) => {
                // The client withdraws its own response; this catches anything
                // left from an earlier interrupted attempt.
                let _ = self.dns.clear_acme_txt(&fqdn);
                return Err(LifecycleError::EnrollmentAborted { uuid, cause });
            }
        };
        progress.issuance = Some(t.elapsed());

        let issued_at = self.clock.now();
        let meta = CertificateMeta::from_chain_pem(&chain, issued_at)?;
        if meta.public_key_fingerprint != key.public_key_fingerprint()? {
            return Err(LifecycleError::KeyMismatch { want: key.public_key_fingerprint()?, got: meta.public_key_fingerprint });
        }
        self.inventory.lock().attach_certificate(&uuid, meta)?;
        log::info!("enrolled {fqdn}");
        Ok(ProvisionedDevice { urn, key, chain_pem: chain, issued_at })
    }

    /// Enrolls every item with up to `parallelism` in flight. Failures are
    /// recorded per device; the batch never aborts.
    pub async fn enroll_batch(&self, items: Vec<BatchItem>) -> BatchReport {
        let challenge = self.cfg.challenge;
        let entries = futures::stream::iter(items)
            .map(|item| async move {
                let mut progress = Progress::default();
                let result = match VendorNamespace::new(&item.root_domain, &item.device_class) {
                    Ok(ns) => self.enroll_inner(&ns, &item.secret, challenge, &mut progress).await,
                    Err(e) => Err(e.into()),
                };
                let (outcome, detail, device) = match result {
                    Ok(dev) => ("ok".to_owned(), None, Some(dev)),
                    Err(e) => (e.kind(), Some(e.to_string()), None),
                };
                BatchEntry {
                    uuid: progress.uuid,
                    outcome,
                    detail,
                    binding: progress.binding,
                    issuance: progress.issuance,
                    device,
                }
            })
            .buffered(self.cfg.parallelism.max(1))
            .collect()
            .await;
        BatchReport { entries }
    }

    /// Renews every device whose certificate expires within the renewal window
    /// of `now`, over the device's existing key. Not re-entrant.
    pub async fn renewal_tick(&self, now: OffsetDateTime, agent: &dyn DeviceAgent) -> Result<Vec<RenewalOutcome>, LifecycleError> {
        if self.ticking.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_err() {
            return Err(LifecycleError::TickInProgress);
        }
        let _guard = TickGuard(&self.ticking);
        let due = self.inventory.lock().due_for_renewal(now, self.cfg.renewal_window);
        let outcomes = futures::stream::iter(due)
            .map(|record| async move {
                let kind = self.renew_one(&record, now, agent).await;
                RenewalOutcome { uuid: record.uuid, kind }
            })
            .buffered(self.cfg.parallelism.max(1))
            .collect()
            .await;
        Ok(outcomes)
    }

    async fn renew_one(&self, record: &DeviceRecord, now: OffsetDateTime, agent: &dyn DeviceAgent) -> RenewalKind {
        if record.remaining(now).is_some_and(|left| left <= Duration::ZERO) {
            let _ = self.inventory.lock().set_state(&record.uuid, RenewalState::Expired);
            return RenewalKind::Expired;
        }
        if self.inventory.lock().set_state(&record.uuid, RenewalState::InProgress).is_err() {
            return RenewalKind::Failed { kind: "AlreadyRevoked".into(), detail: "revoked before renewal".into() };
        }
        let Some(csr) = agent.renewal_csr(record) else {
            let _ = self.inventory.lock().set_state(&record.uuid, RenewalState::Due);
            return RenewalKind::Unreachable;
        };
        match self.renew_with_csr(record, &csr, now).await {
            Ok((chain, meta)) => {
                agent.install_chain(&record.uuid, &chain, meta.issuance_time);
                let old_serial = record.current_cert.as_ref().map(|c| c.serial.clone()).unwrap_or_default();
                RenewalKind::Renewed { old_serial, new_serial: meta.serial }
            }
            Err(e) => {
                log::warn!("renewal of {} failed: {e}", record.urn);
                let _ = self.inventory.lock().set_state(&record.uuid, RenewalState::Due);
                RenewalKind::Failed { kind: e.kind(), detail: e.to_string() }
            }
        }
    }

    /// Checks that `csr` is over the recorded key, obtains a certificate and
    /// attaches it.
    async fn renew_with_csr(
        &self,
        record: &DeviceRecord,
        csr: &[u8],
        now: OffsetDateTime,
    ) -> Result<(String, CertificateMeta), LifecycleError> {
        let want = record
            .current_cert
            .as_ref()
            .map(|c| c.public_key_fingerprint.clone())
            .ok_or(InventoryError::NoCertificate(record.uuid))?;
        let got = certs::inspect_csr(csr)?.spki_fingerprint;
        if got != want {
            return Err(LifecycleError::KeyMismatch { want, got });
        }
        let fqdn = record.urn.to_string();
        let chain = self.acme.obtain_certificate(&fqdn, csr, self.cfg.challenge, &self.fulfiller()).await?;
        let meta = CertificateMeta::from_chain_pem(&chain, now)?;
        self.inventory.lock().attach_certificate(&record.uuid, meta.clone())?;
        log::info!("renewed {fqdn}, serial {}", meta.serial);
        Ok((chain, meta))
    }

    /// Authorizes `gateway_id` to renew `uuid` until `now + ttl`.
    pub fn delegate(&self, uuid: &DeviceUuid, gateway_id: &str, ttl: Duration) -> Result<DelegationRecord, LifecycleError> {
        let expires = self.clock.now() + ttl;
        let record = self.delegation_key.sign(gateway_id, *uuid, expires)?;
        self.inventory.lock().set_delegation(uuid, Some(gateway_id.to_owned()))?;
        Ok(record)
    }

    /// Renewal on behalf of an intermittently connected device. Only the CSR
    /// travels; the gateway never holds the device key.
    pub async fn proxy_renew(&self, delegation: &DelegationRecord, csr: &[u8]) -> Result<String, LifecycleError> {
        let now = self.clock.now();
        delegation.verify(&self.delegation_key.public_key(), now)?;
        let uuid = delegation.device_uuid;
        let record = self.record(&uuid).ok_or(InventoryError::UnknownDevice(uuid))?;
        if record.gateway_delegation.as_deref() != Some(delegation.gateway_id.as_str()) {
            return Err(LifecycleError::BadDelegation(format!("{} is not the registered gateway", delegation.gateway_id)));
        }
        if record.renewal_state == RenewalState::Revoked {
            return Err(InventoryError::AlreadyRevoked(uuid).into());
        }
        let result = self.renew_with_csr(&record, csr, now).await;
        if result.is_err() {
            let _ = self.inventory.lock().set_state(&uuid, record.renewal_state);
        }
        result.map(|(chain, _)| chain)
    }

    /// Marks the device revoked; returns every serial it has held. The next
    /// [`publish_filter`](Self::publish_filter) includes them.
    pub fn revoke_device(&self, uuid: &DeviceUuid, reason: RevocationReason) -> Result<Vec<String>, LifecycleError> {
        let serials = self.inventory.lock().revoke(uuid, reason)?;
        log::info!("revoked {uuid} ({reason:?}), {} serial(s)", serials.len());
        Ok(serials)
    }

    /// Builds the next filter epoch over every serial this vendor has issued.
    pub fn publish_filter(&self) -> Result<RevocationFilter, LifecycleError> {
        let (revoked, issued) = {
            let inv = self.inventory.lock();
            (inv.revoked_serials(&self.cfg.apex), inv.issued_serials(&self.cfg.apex))
        };
        Ok(self.publisher.lock().publish(&revoked, &issued, &self.cfg.apex)?)
    }

    pub fn snapshot_inventory(&self, path: &std::path::Path) -> Result<(), LifecycleError> {
        let inv = self.inventory();
        inv.snapshot(path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_name_the_innermost_variant() {
        let e: LifecycleError = IdentityError::InvalidNamespace("x".into()).into();
        assert_eq!(e.kind(), "InvalidNamespace");
        let e = LifecycleError::EnrollmentAborted {
            uuid: "c69f00ac-532c-51ee-87f2-079e7eb2f068".parse().unwrap(),
            cause: AcmeError::CaUnreachable("down".into()),
        };
        assert_eq!(e.kind(), "EnrollmentAborted");
        assert_eq!(LifecycleError::TickInProgress.kind(), "TickInProgress");
    }

    #[test]
    fn config_defaults() {
        let cfg = VendorConfig::new("Vendor.COM.");
        assert_eq!(cfg.apex, "vendor.com");
        assert_eq!(cfg.cloud_target, "cloud.vendor.com");
        assert_eq!(cfg.renewal_window, Duration::days(30));
        assert_eq!(cfg.parallelism, 4);
        assert_eq!(cfg.key_algorithm, KeyAlgorithm::Rsa2048);
    }
}
