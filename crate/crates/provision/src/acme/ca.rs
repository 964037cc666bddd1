//! The embedded test CA: root -> issuing intermediate -> device leaves.
//!
//! All CA keys are derived from a seed, so a restarted CA with the same seed
//! keeps the same trust anchor without any key file on disk.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::time::SystemTime;

use parking_lot::Mutex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rcgen::{
    BasicConstraints, CertificateParams, CertificateSigningRequestParams, DistinguishedName, DnType,
    ExtendedKeyUsagePurpose, IsCa, KeyPair, KeyUsagePurpose, SanType, SerialNumber,
};
use rustls::pki_types::{CertificateDer, CertificateSigningRequestDer, PrivateKeyDer, PrivatePkcs8KeyDer};
use time::{Duration, OffsetDateTime};

use super::AcmeError;
use crate::certs;
use crate::inventory::MAX_CERT_LIFETIME;

pub const DEFAULT_WEEKLY_QUOTA: u32 = 30_000;

#[derive(Debug, Clone)]
pub struct CaConfig {
    pub seed: u64,
    pub cert_lifetime: Duration,
    pub weekly_quota: u32,
}

impl Default for CaConfig {
    fn default() -> Self {
        Self { seed: 1, cert_lifetime: MAX_CERT_LIFETIME, weekly_quota: DEFAULT_WEEKLY_QUOTA }
    }
}

/// Sliding seven-day order counter per registered domain.
#[derive(Debug, Clone)]
pub struct OrderQuota {
    limit: u32,
    hits: HashMap<String, VecDeque<OffsetDateTime>>,
}

/// Last two labels, without a public-suffix list.
pub fn registered_domain(name: &str) -> String {
    let labels: Vec<&str> = name.trim_end_matches('.').rsplitn(3, '.').collect();
    labels.iter().take(2).rev().copied().collect::<Vec<_>>().join(".").to_ascii_lowercase()
}

impl OrderQuota {
    pub fn new(limit: u32) -> Self {
        Self { limit, hits: HashMap::new() }
    }

    /// Records an order for `name` at `now`, or refuses it if the domain is at its limit.
    pub fn try_acquire(&mut self, name: &str, now: OffsetDateTime) -> Result<(), AcmeError> {
        let domain = registered_domain(name);
        let q = self.hits.entry(domain.clone()).or_default();
        while q.front().is_some_and(|&t| now - t >= Duration::weeks(1)) {
            q.pop_front();
        }
        if q.len() as u32 >= self.limit {
            return Err(AcmeError::RateLimited(format!("{} orders for {domain} in the past week", q.len())));
        }
        q.push_back(now);
        Ok(())
    }
}

fn seeded_key(seed: u64, stream: u64) -> KeyPair {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let secret = p256::SecretKey::random(&mut rng);
    let der = p256::pkcs8::EncodePrivateKey::to_pkcs8_der(&secret).expect("P-256 key encodes");
    KeyPair::from_pkcs8_der_and_sign_algo(&PrivatePkcs8KeyDer::from(der.as_bytes()), &rcgen::PKCS_ECDSA_P256_SHA256)
        .expect("P-256 key loads")
}

fn ca_params(cn: String) -> CertificateParams {
    let mut p = CertificateParams::default();
    let mut dn = DistinguishedName::new();
    dn.push(DnType::OrganizationName, "Atlas Test PKI");
    dn.push(DnType::CommonName, cn);
    p.distinguished_name = dn;
    p.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
    p.key_usages = vec![KeyUsagePurpose::KeyCertSign, KeyUsagePurpose::CrlSign, KeyUsagePurpose::DigitalSignature];
    p.not_before = rcgen::date_time_ymd(2020, 1, 1);
    p.not_after = rcgen::date_time_ymd(2050, 1, 1);
    p.use_authority_key_identifier_extension = true;
    p
}

struct Authority {
    key: KeyPair,
    cert: rcgen::Certificate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssuedCert {
    /// Decimal serial.
    pub serial: String,
    /// Leaf followed by the intermediate.
    pub chain_pem: String,
    pub not_before: OffsetDateTime,
    pub not_after: OffsetDateTime,
}

struct Ledger {
    last_serial_hi: u128,
    issued: BTreeMap<u128, String>,
}

pub struct TestCa {
    tag: String,
    root: Authority,
    issuing: Authority,
    service_root: Authority,
    service_leaf: rcgen::Certificate,
    service_leaf_key: KeyPair,
    lifetime: Duration,
    ledger: Mutex<Ledger>,
}

impl std::fmt::Debug for TestCa {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestCa").field("tag", &self.tag).field("lifetime", &self.lifetime).finish_non_exhaustive()
    }
}

impl TestCa {
    pub fn new(cfg: &CaConfig) -> Result<Self, AcmeError> {
        if cfg.cert_lifetime <= Duration::ZERO || cfg.cert_lifetime > MAX_CERT_LIFETIME {
            return Err(AcmeError::Internal("certificate lifetime must be in (0, 90 days]".into()));
        }
        let build = |e: rcgen::Error| AcmeError::Internal(e.to_string());
        let tag = format!("{:08x}", cfg.seed as u32 ^ (cfg.seed >> 32) as u32);

        let root_key = seeded_key(cfg.seed, 0);
        let mut p = ca_params(format!("Atlas Test Root {tag}"));
        p.serial_number = Some(SerialNumber::from_slice(&[1]));
        let root = Authority { cert: p.self_signed(&root_key).map_err(build)?, key: root_key };

        let issuing_key = seeded_key(cfg.seed, 1);
        let mut p = ca_params(format!("Atlas Test Issuing CA {tag}"));
        p.is_ca = IsCa::Ca(BasicConstraints::Constrained(0));
        p.serial_number = Some(SerialNumber::from_slice(&[2]));
        let issuing = Authority { cert: p.signed_by(&issuing_key, &root.cert, &root.key).map_err(build)?, key: issuing_key };

        // HTTPS identity of the ACME endpoint; unrelated to the device hierarchy.
        let service_key = seeded_key(cfg.seed, 2);
        let p = ca_params(format!("Atlas Test Service Root {tag}"));
        let service_root = Authority { cert: p.self_signed(&service_key).map_err(build)?, key: service_key };
        let service_leaf_key = seeded_key(cfg.seed, 3);
        let mut p = CertificateParams::new(vec!["localhost".to_owned()]).map_err(build)?;
        p.subject_alt_names.push(SanType::IpAddress("127.0.0.1".parse().unwrap()));
        p.subject_alt_names.push(SanType::IpAddress("::1".parse().unwrap()));
        p.not_before = rcgen::date_time_ymd(2020, 1, 1);
        p.not_after = rcgen::date_time_ymd(2050, 1, 1);
        p.extended_key_usages = vec![ExtendedKeyUsagePurpose::ServerAuth];
        p.use_authority_key_identifier_extension = true;
        let service_leaf = p.signed_by(&service_leaf_key, &service_root.cert, &service_root.key).map_err(build)?;

        Ok(Self {
            tag,
            root,
            issuing,
            service_root,
            service_leaf,
            service_leaf_key,
            lifetime: cfg.cert_lifetime,
            ledger: Mutex::new(Ledger { last_serial_hi: 0, issued: BTreeMap::new() }),
        })
    }

    pub fn root_pem(&self) -> String {
        self.root.cert.pem()
    }

    pub fn root_der(&self) -> CertificateDer<'static> {
        self.root.cert.der().clone()
    }

    pub fn intermediate_pem(&self) -> String {
        self.issuing.cert.pem()
    }

    /// Trust anchor for the HTTPS endpoint.
    pub fn service_root_pem(&self) -> String {
        self.service_root.cert.pem()
    }

    pub(crate) fn service_identity(&self) -> (Vec<CertificateDer<'static>>, PrivateKeyDer<'static>) {
        let key = PrivateKeyDer::Pkcs8(PrivatePkcs8KeyDer::from(self.service_leaf_key.serialize_der()));
        (vec![self.service_leaf.der().clone(), self.service_root.cert.der().clone()], key)
    }

    pub fn lifetime(&self) -> Duration {
        self.lifetime
    }

    /// Strictly increasing ~107-bit serials: a microsecond counter above 56 random bits.
    fn next_serial(&self) -> u128 {
        let wall = SystemTime::now().duration_since(SystemTime::UNIX_EPOCH).map(|d| d.as_micros()).unwrap_or(0);
        let mut ledger = self.ledger.lock();
        let hi = wall.max(ledger.last_serial_hi + 1);
        ledger.last_serial_hi = hi;
        (hi << 56) | (rand::thread_rng().next_u64() as u128 & ((1 << 56) - 1))
    }

    /// Issues a leaf for `csr_der`, whose DNS SANs must equal `identifiers` as a set.
    pub fn issue(&self, csr_der: &[u8], identifiers: &[String], now: OffsetDateTime) -> Result<IssuedCert, AcmeError> {
        let info = certs::inspect_csr(csr_der).map_err(|e| AcmeError::CsrMismatch(e.to_string()))?;
        let mut want: Vec<String> = identifiers.iter().map(|s| s.to_ascii_lowercase()).collect();
        let mut got = info.dns_names.clone();
        want.sort();
        want.dedup();
        got.sort();
        got.dedup();
        if want != got {
            return Err(AcmeError::CsrMismatch(format!("CSR names {got:?} differ from order {want:?}")));
        }
        let csr = CertificateSigningRequestParams::from_der(&CertificateSigningRequestDer::from(csr_der))
            .map_err(|e| AcmeError::CsrMismatch(e.to_string()))?;

        let serial = self.next_serial();
        let mut p = CertificateParams::new(want.clone()).map_err(|e| AcmeError::CsrMismatch(e.to_string()))?;
        let mut dn = DistinguishedName::new();
        dn.push(DnType::CommonName, identifiers[0].to_ascii_lowercase());
        p.distinguished_name = dn;
        let bytes = serial.to_be_bytes();
        let first = bytes.iter().position(|&b| b != 0).unwrap_or(15);
        p.serial_number = Some(SerialNumber::from_slice(&bytes[first..]));
        p.not_before = now;
        p.not_after = now + self.lifetime;
        p.key_usages = vec![KeyUsagePurpose::DigitalSignature, KeyUsagePurpose::KeyEncipherment];
        p.extended_key_usages = vec![ExtendedKeyUsagePurpose::ServerAuth, ExtendedKeyUsagePurpose::ClientAuth];
        p.use_authority_key_identifier_extension = true;
        let leaf = p
            .signed_by(&csr.public_key, &self.issuing.cert, &self.issuing.key)
            .map_err(|e| AcmeError::Internal(e.to_string()))?;

        let chain_pem = certs::ders_to_pem([leaf.der().as_ref(), self.issuing.cert.der().as_ref()]);
        // The DER time encoding drops sub-second precision.
        let parsed = certs::inspect_cert(leaf.der()).map_err(|e| AcmeError::Internal(e.to_string()))?;
        self.ledger.lock().issued.insert(serial, chain_pem.clone());
        Ok(IssuedCert { serial: serial.to_string(), chain_pem, not_before: parsed.not_before, not_after: parsed.not_after })
    }

    /// Decimal serials of every certificate this CA has issued, ascending.
    pub fn issued_serials(&self) -> Vec<String> {
        self.ledger.lock().issued.keys().map(u128::to_string).collect()
    }
}
