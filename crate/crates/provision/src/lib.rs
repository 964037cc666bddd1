//! Vendor-side provisioning for Atlas: the device inventory, an authoritative
//! DNS responder, an ACME client with an embedded test CA, the lifecycle
//! orchestrator, and relying-party mTLS validation.

pub mod certs;
pub mod clock;
pub mod inventory;
pub mod dns;
pub mod acme;
pub mod lifecycle;
pub mod peer_auth;
