//! Core of the Atlas device PKI: vendor-rooted device identities, compressed
//! revocation filters, and the smart-city latency simulator.
//!
//! Everything in this crate is pure computation and builds for
//! `wasm32-unknown-unknown`.

pub mod identity;
pub mod revocation;
pub mod sim;

pub use identity::{
    derive_device_uuid, format_urn, parse_urn, uuid_v5, DeviceSecret, DeviceUrn, DeviceUuid, IdentityError,
    SecretSource, VendorNamespace, NAMESPACE_DNS,
};
pub use revocation::{build_filter, FilterError, FilterPublisher, RevocationFilter};
