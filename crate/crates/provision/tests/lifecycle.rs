use std::sync::{Arc, Mutex, OnceLock};

use atlas_core::{format_urn, DeviceSecret, VendorNamespace};
use atlas_provision::acme::{AccountKey, AcmeClient, AcmeServer, CaConfig, ChallengeType, HttpTokenShelf};
use atlas_provision::certs::{self, build_csr, DeviceKey, KeyAlgorithm};
use atlas_provision::clock::{Clock, ManualClock, SharedClock};
use atlas_provision::dns::{DnsAuthority, Lookup, RType};
use atlas_provision::inventory::{DeviceRecord, Inventory, InventoryError, RenewalState, RevocationReason};
use atlas_provision::lifecycle::{
    BatchItem, DelegationKey, DelegationRecord, DeviceAgent, Fleet, LifecycleError, LocalPki, LocalPkiConfig, ProvisionedDevice, RenewalKind, Vendor,
    VendorConfig,
};
use time::{macros::datetime, Duration, OffsetDateTime};
use x509_parser::prelude::{FromDer, X509Certificate};

const START: OffsetDateTime = datetime!(2031-03-01 00:00 UTC);

fn secret(i: u32) -> DeviceSecret {
    DeviceSecret::external(format!("device-secret-{i:08}").into_bytes()).unwrap()
}

fn fast(apex: &str) -> VendorConfig {
    VendorConfig { key_algorithm: KeyAlgorithm::P256, ..VendorConfig::new(apex) }
}

async fn pki(clock: SharedClock) -> LocalPki {
    LocalPki::start(LocalPkiConfig { clock, ..LocalPkiConfig::default() }).await.unwrap()
}

fn chains_to(dev: &ProvisionedDevice, root_pem: &str) {
    let root = certs::pem_to_ders(root_pem).unwrap().remove(0);
    let (_, root) = X509Certificate::from_der(&root).unwrap();
    let ders = dev.chain_ders().unwrap();
    let (_, inter) = X509Certificate::from_der(&ders[1]).unwrap();
    let (_, leaf) = X509Certificate::from_der(&ders[0]).unwrap();
    inter.verify_signature(Some(root.public_key())).unwrap();
    leaf.verify_signature(Some(inter.public_key())).unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn enrollment_yields_a_confined_bundle() {
    let mut pki = pki(ManualClock::new(START)).await;
    let vendor = pki.add_vendor(VendorConfig::new("vendor.com")).await.unwrap();
    let ns = VendorNamespace::new("vendor.com", "camera").unwrap();
    for (i, challenge) in [ChallengeType::Dns01, ChallengeType::Http01].into_iter().enumerate() {
        let dev = vendor.enroll_device(&ns, &secret(i as u32), challenge).await.unwrap();
        let leaf = dev.leaf().unwrap();
        assert_eq!(leaf.dns_names, vec![format_urn(&dev.uuid(), &ns).unwrap()]);
        assert_eq!(leaf.spki_fingerprint, dev.key.public_key_fingerprint().unwrap());
        assert_eq!(dev.key.algorithm(), KeyAlgorithm::Rsa2048);
        assert!(leaf.not_after - leaf.not_before <= Duration::days(90));
        chains_to(&dev, &pki.root_pem());

        let rec = vendor.record(&dev.uuid()).unwrap();
        assert_eq!(rec.renewal_state, RenewalState::Current);
        assert_eq!(rec.current_cert.unwrap().serial, leaf.serial);
        match vendor.dns().lookup(&dev.urn.to_string(), Some(RType::Cname)) {
            Lookup::Answer(rs) => assert_eq!(rs.len(), 1),
            other => panic!("{other:?}"),
        }
    }
    let snapshot = vendor.inventory().to_snapshot_bytes();
    assert!(!certs::contains_private_key(&snapshot));
    assert!(!certs::contains_private_key(vendor.dns().snapshot().to_master_file().as_bytes()));
}

#[tokio::test(flavor = "multi_thread")]
async fn re_enrollment_keeps_uuid_changes_serial() {
    let mut pki = pki(ManualClock::new(START)).await;
    let vendor = pki.add_vendor(fast("vendor.com")).await.unwrap();
    let ns = VendorNamespace::new("vendor.com", "lock").unwrap();
    let a = vendor.enroll_device(&ns, &secret(7), ChallengeType::Dns01).await.unwrap();
    let b = vendor.enroll_device(&ns, &secret(7), ChallengeType::Dns01).await.unwrap();
    assert_eq!(a.uuid(), b.uuid());
    assert_ne!(a.leaf().unwrap().serial, b.leaf().unwrap().serial);
    assert_eq!(vendor.inventory().len(), 1);
    assert_eq!(vendor.record(&a.uuid()).unwrap().serial_history.len(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn ca_outage_aborts_cleanly() {
    let clock: SharedClock = ManualClock::new(START);
    let ca = AcmeServer::start(&CaConfig::default(), "127.0.0.1:0", clock.clone()).await.unwrap();
    let acme = AcmeClient::connect(&ca.directory_url(), Some(&ca.service_root_pem()), AccountKey::generate_es256().unwrap())
        .await
        .unwrap();
    let dns = DnsAuthority::new("vendor.com").unwrap();
    let vendor = Vendor::new(fast("vendor.com"), dns.clone(), HttpTokenShelf::new(), acme, Inventory::new(), clock).unwrap();
    drop(ca);

    let ns = VendorNamespace::new("vendor.com", "camera").unwrap();
    let err = vendor.enroll_device(&ns, &secret(1), ChallengeType::Dns01).await.unwrap_err();
    let LifecycleError::EnrollmentAborted { uuid, cause } = err else { panic!("{err:?}") };
    assert!(matches!(cause, atlas_provision::acme::AcmeError::CaUnreachable(_)), "{cause:?}");
    assert_eq!(vendor.record(&uuid).unwrap().renewal_state, RenewalState::Due);
    assert!(dns.snapshot().records().all(|r| r.data.rtype() != RType::Txt));
}

#[tokio::test(flavor = "multi_thread")]
async fn batch_isolates_bad_entries() {
    let mut pki = pki(ManualClock::new(START)).await;
    let vendor = pki.add_vendor(fast("vendor.com")).await.unwrap();
    let mut items: Vec<BatchItem> = (0..50)
        .map(|i| BatchItem { root_domain: "vendor.com".into(), device_class: "sensor".into(), secret: secret(i) })
        .collect();
    items[17].device_class = "bad_class!".into();
    let report = vendor.enroll_batch(items).await;
    assert_eq!(report.entries.len(), 50);
    assert_eq!(report.successes(), 49);
    assert_eq!(report.entries[17].outcome, "InvalidNamespace");
    assert!(report.entries[17].uuid.is_none());
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 51);
    assert_eq!(csv.lines().next().unwrap(), "uuid,outcome,binding_ms,issuance_ms");
    assert_eq!(csv.lines().filter(|l| l.contains(",ok,")).count(), 49);
    for dev in report.devices() {
        chains_to(dev, &pki.root_pem());
    }
    let (bind, issue) = (report.binding_stats().unwrap(), report.issuance_stats().unwrap());
    assert_eq!((bind.n, issue.n), (49, 49));
    assert!(bind.mean_ms < issue.mean_ms);
}

#[tokio::test(flavor = "multi_thread")]
async fn renewal_reuses_keys_inside_the_window_only() {
    let clock = ManualClock::new(START);
    let mut pki = pki(clock.clone()).await;
    let vendor = pki.add_vendor(fast("vendor.com")).await.unwrap();
    let ns = VendorNamespace::new("vendor.com", "meter").unwrap();
    let fleet = Fleet::new();
    for i in 0..4 {
        fleet.add(vendor.enroll_device(&ns, &secret(i), ChallengeType::Dns01).await.unwrap());
    }
    let devs = fleet.devices();
    let fingerprints: Vec<_> = devs.iter().map(|d| d.key.public_key_fingerprint().unwrap()).collect();

    // 59 days in: 31 days left on a 90-day certificate, nothing is due.
    let now = clock.advance(Duration::days(59));
    assert!(vendor.renewal_tick(now, &fleet).await.unwrap().is_empty());

    vendor.revoke_device(&devs[0].uuid(), RevocationReason::KeyCompromise).unwrap();
    fleet.set_offline(&devs[1].uuid(), true);
    let now = clock.advance(Duration::days(2));
    let outcomes = vendor.renewal_tick(now, &fleet).await.unwrap();
    assert_eq!(outcomes.len(), 3);
    for o in &outcomes {
        let i = devs.iter().position(|d| d.uuid() == o.uuid).unwrap();
        let rec = vendor.record(&o.uuid).unwrap();
        match (&o.kind, i) {
            (RenewalKind::Unreachable, 1) => assert_eq!(rec.renewal_state, RenewalState::Due),
            (RenewalKind::Renewed { old_serial, new_serial }, 2 | 3) => {
                assert_ne!(old_serial, new_serial);
                assert_eq!(rec.renewal_state, RenewalState::Current);
                let cert = rec.current_cert.unwrap();
                assert_eq!(cert.public_key_fingerprint, fingerprints[i]);
                assert_eq!(&cert.serial, new_serial);
                assert_eq!(fleet.get(&o.uuid).unwrap().leaf().unwrap().serial, *new_serial);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    // Back online, the skipped device renews on the next tick; the revoked one never does.
    fleet.set_offline(&devs[1].uuid(), false);
    let outcomes = vendor.renewal_tick(clock.now() + Duration::hours(1), &fleet).await.unwrap();
    assert_eq!(outcomes.len(), 1);
    assert_eq!(outcomes[0].uuid, devs[1].uuid());
    assert_eq!(vendor.record(&devs[0].uuid()).unwrap().renewal_state, RenewalState::Revoked);

    // A lapsed certificate cannot be renewed in place.
    let late = clock.advance(Duration::days(200));
    let outcomes = vendor.renewal_tick(late, &fleet).await.unwrap();
    assert!(outcomes.iter().all(|o| o.kind == RenewalKind::Expired));
    assert_eq!(outcomes.len(), 3);
}

/// Re-enters the tick from inside a renewal.
struct Reentrant {
    vendor: OnceLock<Arc<Vendor>>,
    inner: Fleet,
    seen: Mutex<Vec<String>>,
}

impl DeviceAgent for Reentrant {
    fn renewal_csr(&self, record: &DeviceRecord) -> Option<Vec<u8>> {
        let vendor = self.vendor.get().unwrap();
        let nested = futures::executor::block_on(vendor.renewal_tick(START, &self.inner));
        self.seen.lock().unwrap().push(nested.map(|_| "ran".to_owned()).unwrap_or_else(|e| e.kind()));
        self.inner.renewal_csr(record)
    }

    fn install_chain(&self, uuid: &atlas_core::DeviceUuid, chain_pem: &str, at: OffsetDateTime) {
        self.inner.install_chain(uuid, chain_pem, at)
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn renewal_tick_is_not_reentrant() {
    let clock = ManualClock::new(START);
    let mut pki = pki(clock.clone()).await;
    let vendor = pki.add_vendor(fast("vendor.com")).await.unwrap();
    let ns = VendorNamespace::new("vendor.com", "meter").unwrap();
    let agent = Reentrant { vendor: OnceLock::new(), inner: Fleet::new(), seen: Mutex::new(Vec::new()) };
    agent.inner.add(vendor.enroll_device(&ns, &secret(1), ChallengeType::Dns01).await.unwrap());
    agent.vendor.set(vendor.clone()).unwrap();
    let now = clock.advance(Duration::days(70));
    let outcomes = vendor.renewal_tick(now, &agent).await.unwrap();
    assert!(matches!(outcomes[0].kind, RenewalKind::Renewed { .. }));
    assert_eq!(*agent.seen.lock().unwrap(), vec!["TickInProgress".to_owned()]);
    // The guard is released afterwards.
    assert!(vendor.renewal_tick(now, &agent.inner).await.is_ok());
}

#[tokio::test(flavor = "multi_thread")]
async fn proxy_renewal_checks_delegation_and_key() {
    let clock = ManualClock::new(START);
    let mut pki = pki(clock.clone()).await;
    let vendor = pki.add_vendor(fast("vendor.com")).await.unwrap();
    let ns = VendorNamespace::new("vendor.com", "tracker").unwrap();
    let dev = vendor.enroll_device(&ns, &secret(3), ChallengeType::Dns01).await.unwrap();
    let other = vendor.enroll_device(&ns, &secret(4), ChallengeType::Dns01).await.unwrap();

    let deleg = vendor.delegate(&dev.uuid(), "gw-east", Duration::days(7)).unwrap();
    assert_eq!(vendor.record(&dev.uuid()).unwrap().gateway_delegation.as_deref(), Some("gw-east"));
    // The blob survives transport.
    let deleg = DelegationRecord::from_base64(&deleg.to_base64()).unwrap();

    clock.advance(Duration::days(1));
    let chain = vendor.proxy_renew(&deleg, &dev.renewal_csr().unwrap()).await.unwrap();
    let leaf = certs::inspect_cert(&certs::pem_to_ders(&chain).unwrap()[0]).unwrap();
    assert_eq!(leaf.spki_fingerprint, dev.key.public_key_fingerprint().unwrap());
    assert_ne!(leaf.serial, dev.leaf().unwrap().serial);

    let fresh = DeviceKey::generate(KeyAlgorithm::P256).unwrap();
    let err = vendor.proxy_renew(&deleg, &build_csr(&fresh, &dev.urn.to_string()).unwrap()).await.unwrap_err();
    assert!(matches!(err, LifecycleError::KeyMismatch { .. }), "{err:?}");
    assert_eq!(vendor.record(&dev.uuid()).unwrap().renewal_state, RenewalState::Current);

    // Signed for one device, presented for another: the signature no longer covers it.
    let mut forged = deleg.clone();
    forged.device_uuid = other.uuid();
    let err = vendor.proxy_renew(&forged, &other.renewal_csr().unwrap()).await.unwrap_err();
    assert!(matches!(err, LifecycleError::BadDelegation(_)), "{err:?}");

    // Validly signed but the device never named this gateway.
    let stray = vendor.delegate(&other.uuid(), "gw-west", Duration::days(1)).unwrap();
    vendor.delegate(&other.uuid(), "gw-north", Duration::days(1)).unwrap();
    let err = vendor.proxy_renew(&stray, &other.renewal_csr().unwrap()).await.unwrap_err();
    assert!(matches!(err, LifecycleError::BadDelegation(_)), "{err:?}");

    let ghost = atlas_core::DeviceUuid::from_bytes([9; 16]);
    let unknown = DelegationKey::from_seed(vendor.config().seed).sign("gw-east", ghost, START + Duration::days(30)).unwrap();
    let err = vendor.proxy_renew(&unknown, &dev.renewal_csr().unwrap()).await.unwrap_err();
    assert!(matches!(err, LifecycleError::Inventory(InventoryError::UnknownDevice(_))), "{err:?}");

    clock.advance(Duration::days(7));
    let err = vendor.proxy_renew(&deleg, &dev.renewal_csr().unwrap()).await.unwrap_err();
    assert!(matches!(err, LifecycleError::BadDelegation(_)), "{err:?}");
}

#[tokio::test(flavor = "multi_thread")]
async fn revocation_feeds_the_filter() {
    let mut pki = pki(ManualClock::new(START)).await;
    let vendor = pki.add_vendor(fast("vendor.com")).await.unwrap();
    let ns = VendorNamespace::new("vendor.com", "camera").unwrap();
    let mut devs = Vec::new();
    for i in 0..6 {
        devs.push(vendor.enroll_device(&ns, &secret(i), ChallengeType::Dns01).await.unwrap());
    }
    let before = vendor.publish_filter().unwrap();
    let victim = &devs[2];
    let serial = victim.leaf().unwrap().serial;
    assert!(!before.query(&serial));

    let serials = vendor.revoke_device(&victim.uuid(), RevocationReason::KeyCompromise).unwrap();
    assert_eq!(serials, vec![serial.clone()]);
    let after = vendor.publish_filter().unwrap();
    assert!(after.epoch() > before.epoch());
    assert!(after.query(&serial));
    for d in devs.iter().filter(|d| d.uuid() != victim.uuid()) {
        assert!(!after.query(&d.leaf().unwrap().serial));
    }
    // Revocation is certificate-level: the DNS name stays.
    assert!(matches!(vendor.dns().lookup(&victim.urn.to_string(), None), Lookup::Answer(_)));

    let err = vendor.revoke_device(&victim.uuid(), RevocationReason::Unspecified).unwrap_err();
    assert!(matches!(err, LifecycleError::Inventory(InventoryError::AlreadyRevoked(_))), "{err:?}");
    let err = vendor.revoke_device(&atlas_core::DeviceUuid::from_bytes([1; 16]), RevocationReason::Unspecified).unwrap_err();
    assert!(matches!(err, LifecycleError::Inventory(InventoryError::UnknownDevice(_))), "{err:?}");
    let err = vendor.enroll_device(&ns, &secret(2), ChallengeType::Dns01).await.unwrap_err();
    assert_eq!(err.kind(), "AlreadyRevoked");
}

#[tokio::test(flavor = "multi_thread")]
async fn bundles_round_trip_through_disk() {
    let mut pki = pki(ManualClock::new(START)).await;
    let vendor = pki.add_vendor(fast("vendor.com")).await.unwrap();
    let ns = VendorNamespace::new("vendor.com", "camera").unwrap();
    let dev = vendor.enroll_device(&ns, &secret(5), ChallengeType::Dns01).await.unwrap();
    let dir = tempfile::tempdir().unwrap();
    dev.save(dir.path()).unwrap();
    let back = ProvisionedDevice::load(dir.path(), &dev.uuid()).unwrap();
    assert_eq!(back.urn, dev.urn);
    assert_eq!(back.chain_pem, dev.chain_pem);
    assert_eq!(ProvisionedDevice::load_all(dir.path()).unwrap().len(), 1);
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = std::fs::metadata(ProvisionedDevice::key_path(dir.path(), &dev.uuid())).unwrap().permissions().mode();
        assert_eq!(mode & 0o077, 0);
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn vendors_are_confined_to_their_zone() {
    let mut pki = pki(ManualClock::new(START)).await;
    let a = pki.add_vendor(fast("vendor-a.test")).await.unwrap();
    pki.add_vendor(fast("vendor-b.test")).await.unwrap();
    let foreign = VendorNamespace::new("vendor-b.test", "camera").unwrap();
    let err = a.enroll_device(&foreign, &secret(1), ChallengeType::Dns01).await.unwrap_err();
    assert_eq!(err.kind(), "OutOfZone");
    assert!(a.inventory().is_empty());
}
