//! Key generation, CSRs and certificate inspection shared by the CA, the
//! lifecycle orchestrator and peer validation.

use std::fmt;
use std::str::FromStr;

use rcgen::{CertificateParams, DistinguishedName, DnType, KeyPair, SignatureAlgorithm};
use rsa::pkcs8::EncodePrivateKey;
use rustls::pki_types::{CertificateDer, PrivateKeyDer, PrivatePkcs8KeyDer};
use sha2::{Digest, Sha256};
use thiserror::Error;
use time::OffsetDateTime;
use x509_parser::certification_request::X509CertificationRequest;
use x509_parser::extensions::{GeneralName, ParsedExtension};
use x509_parser::prelude::{FromDer, X509Certificate};

#[derive(Debug, Error)]
pub enum CertError {
    #[error("key generation failed: {0}")]
    KeyGen(String),
    #[error("certificate construction failed: {0}")]
    Build(#[from] rcgen::Error),
    #[error("unparseable {what}: {detail}")]
    Parse { what: &'static str, detail: String },
    #[error("bad signature on {0}")]
    Signature(&'static str),
}

fn parse_err(what: &'static str, detail: impl fmt::Display) -> CertError {
    CertError::Parse { what, detail: detail.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyAlgorithm {
    #[default]
    Rsa2048,
    P256,
}

impl KeyAlgorithm {
    fn signature_algorithm(self) -> &'static SignatureAlgorithm {
        match self {
            KeyAlgorithm::Rsa2048 => &rcgen::PKCS_RSA_SHA256,
            KeyAlgorithm::P256 => &rcgen::PKCS_ECDSA_P256_SHA256,
        }
    }
}

impl FromStr for KeyAlgorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rsa2048" | "rsa" => Ok(KeyAlgorithm::Rsa2048),
            "p256" | "ecdsa" | "ecdsa-p256" => Ok(KeyAlgorithm::P256),
            other => Err(format!("unknown key algorithm {other:?} (rsa2048 or p256)")),
        }
    }
}

impl fmt::Display for KeyAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KeyAlgorithm::Rsa2048 => "rsa2048",
            KeyAlgorithm::P256 => "p256",
        })
    }
}

/// A device private key, PKCS#8 encoded. Never persisted by the backend.
#[derive(Clone)]
pub struct DeviceKey {
    alg: KeyAlgorithm,
    pkcs8: Vec<u8>,
}

impl fmt::Debug for DeviceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeviceKey").field("alg", &self.alg).finish_non_exhaustive()
    }
}

impl DeviceKey {
    pub fn generate(alg: KeyAlgorithm) -> Result<Self, CertError> {
        let pkcs8 = match alg {
            KeyAlgorithm::Rsa2048 => {
                let key = rsa::RsaPrivateKey::new(&mut rand::rngs::OsRng, 2048).map_err(|e| CertError::KeyGen(e.to_string()))?;
                key.to_pkcs8_der().map_err(|e| CertError::KeyGen(e.to_string()))?.as_bytes().to_vec()
            }
            KeyAlgorithm::P256 => KeyPair::generate_for(alg.signature_algorithm())?.serialize_der(),
        };
        let key = Self { alg, pkcs8 };
        key.key_pair()?;
        Ok(key)
    }

    pub fn from_pkcs8_pem(text: &str) -> Result<Self, CertError> {
        let block = pem::parse(text).map_err(|e| parse_err("private key PEM", e))?;
        for alg in [KeyAlgorithm::P256, KeyAlgorithm::Rsa2048] {
            let key = Self { alg, pkcs8: block.contents().to_vec() };
            if key.key_pair().is_ok() {
                return Ok(key);
            }
        }
        Err(parse_err("private key", "neither RSA nor P-256 PKCS#8"))
    }

    pub fn to_pkcs8_pem(&self) -> String {
        pem::encode(&pem::Pem::new("PRIVATE KEY", self.pkcs8.clone()))
    }

    pub fn algorithm(&self) -> KeyAlgorithm {
        self.alg
    }

    pub fn key_pair(&self) -> Result<KeyPair, CertError> {
        let der = PrivatePkcs8KeyDer::from(self.pkcs8.as_slice());
        Ok(KeyPair::from_pkcs8_der_and_sign_algo(&der, self.alg.signature_algorithm())?)
    }

    pub fn public_key_fingerprint(&self) -> Result<String, CertError> {
        Ok(spki_fingerprint(&self.key_pair()?.public_key_der()))
    }

    pub fn rustls_key(&self) -> PrivateKeyDer<'static> {
        PrivateKeyDer::Pkcs8(PrivatePkcs8KeyDer::from(self.pkcs8.clone()))
    }
}

/// Lowercase hex SHA-256 of a DER SubjectPublicKeyInfo.
pub fn spki_fingerprint(spki_der: &[u8]) -> String {
    hex::encode(Sha256::digest(spki_der))
}

/// DER CSR with `fqdn` as both common name and sole DNS SAN.
pub fn build_csr(key: &DeviceKey, fqdn: &str) -> Result<Vec<u8>, CertError> {
    let mut params = CertificateParams::new(vec![fqdn.to_owned()])?;
    let mut dn = DistinguishedName::new();
    dn.push(DnType::CommonName, fqdn);
    params.distinguished_name = dn;
    let csr = params.serialize_request(&key.key_pair()?)?;
    Ok(csr.der().to_vec())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrInfo {
    pub dns_names: Vec<String>,
    pub spki_fingerprint: String,
}

/// Parses a CSR and checks its self-signature.
pub fn inspect_csr(der: &[u8]) -> Result<CsrInfo, CertError> {
    let (_, csr) = X509CertificationRequest::from_der(der).map_err(|e| parse_err("CSR", e))?;
    csr.verify_signature().map_err(|_| CertError::Signature("CSR"))?;
    let mut dns_names = Vec::new();
    for ext in csr.requested_extensions().into_iter().flatten() {
        if let ParsedExtension::SubjectAlternativeName(san) = ext {
            for name in &san.general_names {
                if let GeneralName::DNSName(n) = name {
                    dns_names.push(n.to_ascii_lowercase());
                }
            }
        }
    }
    Ok(CsrInfo { dns_names, spki_fingerprint: spki_fingerprint(csr.certification_request_info.subject_pki.raw) })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertInfo {
    /// Decimal rendering of the serial number.
    pub serial: String,
    pub not_before: OffsetDateTime,
    pub not_after: OffsetDateTime,
    pub spki_fingerprint: String,
    pub dns_names: Vec<String>,
    pub common_name: Option<String>,
    pub is_ca: bool,
}

pub fn inspect_cert(der: &[u8]) -> Result<CertInfo, CertError> {
    let (_, cert) = X509Certificate::from_der(der).map_err(|e| parse_err("certificate", e))?;
    Ok(cert_info(&cert))
}

pub(crate) fn cert_info(cert: &X509Certificate<'_>) -> CertInfo {
    let mut dns_names = Vec::new();
    if let Ok(Some(san)) = cert.subject_alternative_name() {
        for name in &san.value.general_names {
            if let GeneralName::DNSName(n) = name {
                dns_names.push(n.to_ascii_lowercase());
            }
        }
    }
    let common_name = cert.subject().iter_common_name().next().and_then(|cn| cn.as_str().ok()).map(str::to_owned);
    CertInfo {
        serial: cert.tbs_certificate.serial.to_string(),
        not_before: cert.validity().not_before.to_datetime(),
        not_after: cert.validity().not_after.to_datetime(),
        spki_fingerprint: spki_fingerprint(cert.public_key().raw),
        dns_names,
        common_name,
        is_ca: cert.is_ca(),
    }
}

/// Splits a PEM bundle into DER certificates, in order.
pub fn pem_to_ders(text: &str) -> Result<Vec<CertificateDer<'static>>, CertError> {
    let blocks = pem::parse_many(text).map_err(|e| parse_err("PEM", e))?;
    let certs: Vec<_> = blocks
        .into_iter()
        .filter(|b| b.tag() == "CERTIFICATE")
        .map(|b| CertificateDer::from(b.into_contents()))
        .collect();
    if certs.is_empty() {
        return Err(parse_err("PEM", "no CERTIFICATE blocks"));
    }
    Ok(certs)
}

pub fn ders_to_pem<'a>(ders: impl IntoIterator<Item = &'a [u8]>) -> String {
    ders.into_iter().map(|d| pem::encode(&pem::Pem::new("CERTIFICATE", d.to_vec()))).collect()
}

/// True if `bytes` contain any PEM private-key block header.
pub fn contains_private_key(bytes: &[u8]) -> bool {
    const MARKER: &[u8] = b"PRIVATE KEY-----";
    bytes.windows(MARKER.len()).any(|w| w == MARKER)
}
