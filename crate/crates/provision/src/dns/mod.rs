//! Authoritative DNS for a vendor zone: device CNAME bindings, ACME DNS-01
//! TXT records and a UDP responder.

pub mod server;
pub mod wire;
pub mod zone;

use std::net::{Ipv4Addr, SocketAddr};
use std::path::Path;
use std::sync::Arc;

use atlas_core::DeviceUrn;
use parking_lot::RwLock;
use thiserror::Error;

pub use server::{query_udp, DnsServer};
pub use wire::DnsResponse;
pub use zone::{Lookup, RData, RType, Zone, ZoneRecord, ACME_LABEL, DEFAULT_TTL};

pub const DEFAULT_DNS_BIND: &str = "127.0.0.1:5353";

#[derive(Debug, Error)]
pub enum DnsError {
    #[error("{0} is outside the zone")]
    OutOfZone(String),
    #[error("CNAME conflict at {0}")]
    CnameConflict(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("cannot bind {addr}: {detail}")]
    BindFailure { addr: String, detail: String },
    #[error("I/O failure: {0}")]
    IoFailure(String),
    #[error("malformed DNS message: {0}")]
    Malformed(String),
    #[error("no response from {0}")]
    Timeout(SocketAddr),
}

/// Shared handle to a zone: concurrent readers, exclusive writers.
#[derive(Debug, Clone)]
pub struct DnsAuthority {
    zone: Arc<RwLock<Zone>>,
}

impl DnsAuthority {
    pub fn new(apex: &str) -> Result<Self, DnsError> {
        Ok(Self::from_zone(Zone::new(apex)?))
    }

    pub fn from_zone(zone: Zone) -> Self {
        Self { zone: Arc::new(RwLock::new(zone)) }
    }

    pub fn apex(&self) -> String {
        self.zone.read().apex().to_owned()
    }

    pub fn serial(&self) -> u32 {
        self.zone.read().serial()
    }

    /// A copy of the zone as it is now.
    pub fn snapshot(&self) -> Zone {
        self.zone.read().clone()
    }

    pub fn bind_device(&self, urn: &DeviceUrn, cloud_target: &str) -> Result<ZoneRecord, DnsError> {
        self.zone.write().bind_device(urn, cloud_target)
    }

    pub fn set_acme_txt(&self, fqdn: &str, value: &str) -> Result<ZoneRecord, DnsError> {
        self.zone.write().set_acme_txt(fqdn, value)
    }

    pub fn clear_acme_txt(&self, fqdn: &str) -> Result<(), DnsError> {
        self.zone.write().clear_acme_txt(fqdn)
    }

    pub fn add_a(&self, name: &str, addr: Ipv4Addr) -> Result<ZoneRecord, DnsError> {
        self.zone.write().add_a(name, addr)
    }

    pub fn add_record(&self, name: &str, data: RData, ttl: u32) -> Result<ZoneRecord, DnsError> {
        self.zone.write().add_record(name, data, ttl)
    }

    pub fn lookup(&self, name: &str, rtype: Option<RType>) -> Lookup {
        self.zone.read().lookup(name, rtype)
    }

    /// Answers one wire-format query.
    pub fn answer(&self, packet: &[u8]) -> Option<Vec<u8>> {
        wire::respond(&self.zone.read(), packet)
    }

    pub fn export_zone(&self, path: &Path) -> Result<(), DnsError> {
        self.zone.read().export(path)
    }

    /// Starts a UDP responder on `addr` inside the current tokio runtime.
    pub async fn serve_udp(&self, addr: &str) -> Result<DnsServer, DnsError> {
        DnsServer::start(self.clone(), addr).await
    }
}
