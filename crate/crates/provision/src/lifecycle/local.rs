//! A self-contained deployment on loopback: one embedded CA and any number of
//! vendors, each with its own authoritative DNS and http-01 token server.

use std::net::{Ipv4Addr, SocketAddr};
use std::sync::Arc;

use time::Duration;

use super::{LifecycleError, Vendor, VendorConfig};
use crate::acme::ca::DEFAULT_WEEKLY_QUOTA;
use crate::acme::{AccountKey, AcmeClient, AcmeServer, CaConfig, HttpTokenShelf, Probe, ShelfServer};
use crate::clock::{self, SharedClock};
use crate::dns::{DnsAuthority, DnsServer};
use crate::inventory::{Inventory, MAX_CERT_LIFETIME};

#[derive(Debug, Clone)]
pub struct LocalPkiConfig {
    /// Fixes the CA hierarchy; equal seeds give equal roots.
    pub seed: u64,
    pub cert_lifetime: Duration,
    pub weekly_quota: u32,
    pub ca_bind: String,
    pub clock: SharedClock,
}

impl Default for LocalPkiConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            cert_lifetime: MAX_CERT_LIFETIME,
            weekly_quota: DEFAULT_WEEKLY_QUOTA,
            ca_bind: "127.0.0.1:0".into(),
            clock: clock::system(),
        }
    }
}

struct Site {
    vendor: Arc<Vendor>,
    dns_server: DnsServer,
    _shelf_server: ShelfServer,
}

pub struct LocalPki {
    cfg: LocalPkiConfig,
    ca: AcmeServer,
    sites: Vec<Site>,
}

impl std::fmt::Debug for LocalPki {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalPki").field("ca", &self.ca).field("vendors", &self.sites.len()).finish()
    }
}

impl LocalPki {
    pub async fn start(cfg: LocalPkiConfig) -> Result<Self, LifecycleError> {
        let ca_cfg = CaConfig { seed: cfg.seed, cert_lifetime: cfg.cert_lifetime, weekly_quota: cfg.weekly_quota };
        let ca = AcmeServer::start(&ca_cfg, &cfg.ca_bind, cfg.clock.clone()).await?;
        Ok(Self { cfg, ca, sites: Vec::new() })
    }

    pub fn ca(&self) -> &AcmeServer {
        &self.ca
    }

    pub fn root_pem(&self) -> String {
        self.ca.ca().root_pem()
    }

    pub fn clock(&self) -> &SharedClock {
        &self.cfg.clock
    }

    /// Starts a vendor with an empty inventory.
    pub async fn add_vendor(&mut self, cfg: VendorConfig) -> Result<Arc<Vendor>, LifecycleError> {
        self.add_vendor_with(cfg, Inventory::new()).await
    }

    /// Starts a vendor backend on loopback: zone with the cloud endpoint,
    /// DNS and token servers, CA delegation, and an ACME account.
    pub async fn add_vendor_with(&mut self, cfg: VendorConfig, inventory: Inventory) -> Result<Arc<Vendor>, LifecycleError> {
        let dns = DnsAuthority::new(&cfg.apex)?;
        dns.add_a(&cfg.cloud_target, Ipv4Addr::LOCALHOST)?;
        let dns_server = dns.serve_udp("127.0.0.1:0").await?;
        let shelf = HttpTokenShelf::new();
        let shelf_server = shelf.serve("127.0.0.1:0").await?;
        self.ca.delegate(&cfg.apex, Probe { dns: dns_server.local_addr(), http_port: shelf_server.local_addr().port() });
        let acme = AcmeClient::connect(&self.ca.directory_url(), Some(&self.ca.service_root_pem()), AccountKey::generate_es256()?).await?;
        let vendor = Arc::new(Vendor::new(cfg, dns, shelf, acme, inventory, self.cfg.clock.clone())?);
        self.sites.push(Site { vendor: vendor.clone(), dns_server, _shelf_server: shelf_server });
        Ok(vendor)
    }

    pub fn vendor(&self, apex: &str) -> Option<Arc<Vendor>> {
        self.sites.iter().find(|s| s.vendor.apex() == apex).map(|s| s.vendor.clone())
    }

    /// UDP address of the vendor's authoritative DNS server.
    pub fn dns_addr(&self, apex: &str) -> Option<SocketAddr> {
        self.sites.iter().find(|s| s.vendor.apex() == apex).map(|s| s.dns_server.local_addr())
    }
}
