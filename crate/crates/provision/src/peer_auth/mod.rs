//! Relying-party validation of device certificates from any vendor under a
//! shared root, and a loopback mutual-TLS echo harness built on it.
//!
//! [`validate_peer`] is pure: the same chain, trust context and clock value
//! always give the same verdict. Checks run in a fixed order and the verdict
//! names the first one that failed:
//!
//! 1. chain to a trusted root
//! 2. validity window of every certificate on the path
//! 3. a device URN in the leaf (SAN, or CN when there is no SAN)
//! 4. the URN's vendor, when the caller expects one
//! 5. the vendor's revocation filter

mod tls;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use atlas_core::{parse_urn, DeviceUrn, RevocationFilter};
use rustls::pki_types::CertificateDer;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use time::OffsetDateTime;
use x509_parser::prelude::{FromDer, X509Certificate};

use crate::certs::{self, cert_info};
use crate::clock::SharedClock;

pub use tls::{mtls_echo, mtls_echo_with, EchoPolicy, EchoResult, EchoServer, ServerOutcome, Side};

const MAX_PATH: usize = 8;

#[derive(Debug, Error)]
pub enum PeerAuthError {
    #[error("certificate carries no DNS SAN or common name")]
    NoIdentity,
    #[error("malformed device URN: {0}")]
    MalformedUrn(String),
    #[error("unparseable certificate: {0}")]
    Parse(String),
    #[error("trust context has no roots")]
    NoRoots,
    #[error("handshake rejected by the {side}: {verdict}")]
    HandshakeRejected { side: Side, verdict: PeerVerdict },
    #[error("TLS failure: {0}")]
    Tls(String),
    #[error("I/O failure: {0}")]
    Io(String),
    #[error("echo mismatch: sent {sent} bytes, got {got}")]
    EchoMismatch { sent: usize, got: usize },
}

/// Why a peer was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Chain,
    Expired,
    NotYetValid,
    SanMismatch,
    Revoked,
    Malformed,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Chain => "chain",
            Self::Expired => "expired",
            Self::NotYetValid => "not_yet_valid",
            Self::SanMismatch => "san_mismatch",
            Self::Revoked => "revoked",
            Self::Malformed => "malformed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerVerdict {
    pub accepted: bool,
    pub urn: Option<String>,
    pub reject_reason: Option<RejectReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl PeerVerdict {
    fn accept(urn: &DeviceUrn, warnings: Vec<String>) -> Self {
        Self { accepted: true, urn: Some(urn.to_string()), reject_reason: None, detail: None, warnings }
    }

    fn reject(reason: RejectReason, urn: Option<&DeviceUrn>, detail: impl Into<String>) -> Self {
        Self {
            accepted: false,
            urn: urn.map(ToString::to_string),
            reject_reason: Some(reason),
            detail: Some(detail.into()),
            warnings: Vec::new(),
        }
    }

    /// Single-line JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("verdicts serialize")
    }
}

impl fmt::Display for PeerVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_json())
    }
}

/// Roots and revocation filters a relying party trusts, plus its clock.
#[derive(Debug, Clone)]
pub struct TrustContext {
    roots: Arc<Vec<CertificateDer<'static>>>,
    filters: BTreeMap<String, Arc<RevocationFilter>>,
    clock: SharedClock,
}

impl TrustContext {
    pub fn new(roots: Vec<CertificateDer<'static>>, clock: SharedClock) -> Result<Self, PeerAuthError> {
        if roots.is_empty() {
            return Err(PeerAuthError::NoRoots);
        }
        for r in &roots {
            X509Certificate::from_der(r).map_err(|e| PeerAuthError::Parse(e.to_string()))?;
        }
        Ok(Self { roots: Arc::new(roots), filters: BTreeMap::new(), clock })
    }

    pub fn from_pem(roots_pem: &str, clock: SharedClock) -> Result<Self, PeerAuthError> {
        let ders = certs::pem_to_ders(roots_pem).map_err(|e| PeerAuthError::Parse(e.to_string()))?;
        Self::new(ders, clock)
    }

    /// Installs `filter` for its vendor unless a newer epoch is already held.
    pub fn add_filter(&mut self, filter: RevocationFilter) {
        let vendor = filter.vendor_id().to_owned();
        if self.filters.get(&vendor).is_some_and(|held| held.epoch() > filter.epoch()) {
            return;
        }
        self.filters.insert(vendor, Arc::new(filter));
    }

    pub fn with_filter(mut self, filter: RevocationFilter) -> Self {
        self.add_filter(filter);
        self
    }

    pub fn filter(&self, vendor: &str) -> Option<&RevocationFilter> {
        self.filters.get(vendor).map(AsRef::as_ref)
    }

    pub fn roots(&self) -> &[CertificateDer<'static>] {
        &self.roots
    }

    pub fn now(&self) -> OffsetDateTime {
        self.clock.now()
    }

    pub fn clock(&self) -> &SharedClock {
        &self.clock
    }
}

/// The device URN named by a certificate: first DNS SAN, else the CN.
pub fn extract_urn(cert_der: &[u8]) -> Result<DeviceUrn, PeerAuthError> {
    let (_, cert) = X509Certificate::from_der(cert_der).map_err(|e| PeerAuthError::Parse(e.to_string()))?;
    urn_of(&cert)
}

fn urn_of(cert: &X509Certificate<'_>) -> Result<DeviceUrn, PeerAuthError> {
    let info = cert_info(cert);
    let name = info.dns_names.first().or(info.common_name.as_ref()).ok_or(PeerAuthError::NoIdentity)?;
    parse_urn(name).map_err(|e| PeerAuthError::MalformedUrn(e.to_string()))
}

fn same_name(a: &X509Certificate<'_>, b: &X509Certificate<'_>) -> bool {
    a.issuer().as_raw() == b.subject().as_raw()
}

/// Walks from the leaf to a trusted root through the supplied intermediates.
/// Returns the path below the anchor, leaf first.
fn build_path<'a>(
    certs: &'a [X509Certificate<'a>],
    roots: &'a [X509Certificate<'a>],
) -> Result<Vec<&'a X509Certificate<'a>>, String> {
    let leaf = &certs[0];
    if leaf.is_ca() {
        return Err("leaf is a CA certificate".into());
    }
    let mut path = vec![leaf];
    let mut current = leaf;
    for _ in 0..MAX_PATH {
        if roots.iter().any(|r| same_name(current, r) && r.is_ca() && current.verify_signature(Some(r.public_key())).is_ok()) {
            return Ok(path);
        }
        let parent = certs[1..]
            .iter()
            .find(|c| same_name(current, c) && c.is_ca() && current.verify_signature(Some(c.public_key())).is_ok())
            .ok_or_else(|| format!("no trusted issuer for {}", current.issuer()))?;
        if path.iter().any(|p| std::ptr::eq(*p, parent)) {
            return Err("issuer loop".into());
        }
        path.push(parent);
        current = parent;
    }
    Err("path too long".into())
}

/// Applies the five checks in order; see the module docs.
pub fn validate_peer(chain: &[CertificateDer<'_>], ctx: &TrustContext, expected_vendor: Option<&str>) -> PeerVerdict {
    use RejectReason::*;
    if chain.is_empty() {
        return PeerVerdict::reject(Malformed, None, "empty chain");
    }
    let mut parsed = Vec::with_capacity(chain.len());
    for der in chain {
        match X509Certificate::from_der(der) {
            Ok((_, c)) => parsed.push(c),
            Err(e) => return PeerVerdict::reject(Malformed, None, format!("unparseable certificate: {e}")),
        }
    }
    let roots: Vec<X509Certificate<'_>> =
        ctx.roots.iter().filter_map(|r| X509Certificate::from_der(r).ok().map(|(_, c)| c)).collect();

    let path = match build_path(&parsed, &roots) {
        Ok(p) => p,
        Err(why) => return PeerVerdict::reject(Chain, None, why),
    };

    let now = ctx.now();
    for cert in &path {
        let info = cert_info(cert);
        if now < info.not_before {
            return PeerVerdict::reject(NotYetValid, None, format!("{} valid from {}", cert.subject(), info.not_before));
        }
        if now > info.not_after {
            return PeerVerdict::reject(Expired, None, format!("{} expired {}", cert.subject(), info.not_after));
        }
    }

    let leaf = &parsed[0];
    let urn = match urn_of(leaf) {
        Ok(u) => u,
        Err(e) => return PeerVerdict::reject(Malformed, None, e.to_string()),
    };
    let info = cert_info(leaf);
    if let (Some(cn), Some(_)) = (&info.common_name, info.dns_names.first()) {
        if !cn.trim_end_matches('.').eq_ignore_ascii_case(&urn.to_string()) {
            return PeerVerdict::reject(SanMismatch, Some(&urn), format!("CN {cn:?} names a different device"));
        }
    }

    if let Some(vendor) = expected_vendor {
        let vendor = vendor.trim_end_matches('.').to_ascii_lowercase();
        if urn.root_domain() != vendor {
            return PeerVerdict::reject(SanMismatch, Some(&urn), format!("peer belongs to {}, expected {vendor}", urn.root_domain()));
        }
    }

    let mut warnings = Vec::new();
    match ctx.filter(urn.root_domain()) {
        Some(filter) if filter.query(&info.serial) => {
            return PeerVerdict::reject(Revoked, Some(&urn), format!("serial {} revoked (epoch {})", info.serial, filter.epoch()));
        }
        Some(_) => {}
        None => {
            let w = format!("no revocation filter for {}; accepting without a revocation check", urn.root_domain());
            log::warn!("{w}");
            warnings.push(w);
        }
    }
    PeerVerdict::accept(&urn, warnings)
}
