use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use time::format_description::well_known::Rfc3339;
use time::{Date, OffsetDateTime};

#[derive(Debug, Parser)]
#[command(name = "atlas", version, about = "Vendor-rooted device PKI: enrollment, renewal, revocation, mTLS and latency simulation")]
pub struct Cli {
    /// Root directory for every output file [default: atlas-out]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Where device key bundles live [default: <out>/devices]
    #[arg(long, global = true, value_name = "DIR")]
    pub devices: Option<PathBuf>,
    /// Seed for the CA hierarchy, device secrets and the simulator [default: 1]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Current time, RFC 3339 or YYYY-MM-DD [default: system clock]
    #[arg(long, global = true)]
    pub now: Option<Timestamp>,
    /// key = value file consulted after flags and ATLAS_* variables
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enroll one device against the embedded CA.
    Enroll(EnrollArgs),
    /// Enroll COUNT devices with seed-derived secrets and write a timing report.
    EnrollBatch(BatchArgs),
    /// Run one renewal tick over the vendor inventory.
    Renew(RenewArgs),
    /// Revoke a device and publish a fresh filter.
    Revoke(RevokeArgs),
    /// Build or query revocation filters.
    #[command(subcommand)]
    Filter(FilterCommand),
    /// Run the vendor DNS authority or the ACME CA in the foreground.
    #[command(subcommand)]
    Serve(ServeCommand),
    /// Scripted scenarios.
    #[command(subcommand)]
    Demo(DemoCommand),
    /// Smart-city latency simulation.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct VendorArgs {
    /// Vendor root domain [default: vendor.com]
    #[arg(long)]
    pub apex: Option<String>,
    /// Device class label [default: sensor]
    #[arg(long)]
    pub class: Option<String>,
    /// dns-01 or http-01 [default: dns-01]
    #[arg(long)]
    pub challenge: Option<String>,
    /// rsa2048 or p256 [default: rsa2048]
    #[arg(long)]
    pub key_algorithm: Option<String>,
    /// Concurrent enrollments [default: 4]
    #[arg(long)]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("identity").required(true).args(["secret", "mac"])))]
pub struct EnrollArgs {
    #[command(flatten)]
    pub vendor: VendorArgs,
    /// Device secret, at least 16 bytes of text
    #[arg(long)]
    pub secret: Option<String>,
    /// Derive the secret from a MAC address
    #[arg(long)]
    pub mac: Option<String>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[command(flatten)]
    pub vendor: VendorArgs,
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RenewArgs {
    #[command(flatten)]
    pub vendor: VendorArgs,
    /// Devices that do not answer this tick
    #[arg(long, value_name = "UUID")]
    pub offline: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RevokeArgs {
    #[arg(long)]
    pub uuid: String,
    /// unspecified, keyCompromise, superseded or cessationOfOperation
    #[arg(long, default_value = "unspecified")]
    pub reason: String,
    /// Vendor holding the device [default: searched]
    #[arg(long)]
    pub apex: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum FilterCommand {
    /// Build from the vendor inventory, or from serial list files.
    Build(FilterBuildArgs),
    /// Query serials (or a device's serials) against a filter.
    Check(FilterCheckArgs),
}

#[derive(Debug, Args)]
pub struct FilterBuildArgs {
    #[arg(long)]
    pub apex: Option<String>,
    /// File with one revoked serial per line
    #[arg(long, requires = "universe")]
    pub revoked: Option<PathBuf>,
    /// File with every issued serial, one per line
    #[arg(long, requires = "revoked")]
    pub universe: Option<PathBuf>,
    /// Epoch to stamp [default: one past the current filter]
    #[arg(long)]
    pub epoch: Option<u64>,
    /// Output file [default: <out>/filters/<apex>.crl]
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterCheckArgs {
    #[arg(long)]
    pub apex: Option<String>,
    /// Filter file [default: <out>/filters/<apex>.crl]
    #[arg(long)]
    pub filter: Option<PathBuf>,
    #[arg(long)]
    pub serial: Vec<String>,
    /// Check every serial the device has held
    #[arg(long)]
    pub uuid: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum ServeCommand {
    /// Authoritative UDP DNS for one vendor zone.
    Dns(ServeDnsArgs),
    /// ACME directory over HTTPS, backed by the seeded test CA.
    Ca(ServeCaArgs),
}

#[derive(Debug, Args)]
pub struct ServeDnsArgs {
    #[arg(long)]
    pub apex: Option<String>,
    /// [default: 127.0.0.1:5353]
    #[arg(long)]
    pub bind: Option<String>,
    /// Stop after this many seconds instead of waiting for Ctrl-C
    #[arg(long, value_name = "SECS")]
    pub r#for: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeCaArgs {
    /// [default: 127.0.0.1:14000]
    #[arg(long)]
    pub bind: Option<String>,
    /// Validate challenges for APEX against a DNS server and token port: APEX=DNS_ADDR,HTTP_PORT
    #[arg(long, value_name = "SPEC")]
    pub delegate: Vec<String>,
    #[arg(long, value_name = "SECS")]
    pub r#for: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum DemoCommand {
    /// Two vendors, one device each, one mutually authenticated echo.
    D2d(DemoArgs),
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Revoke a certificate first: client (default) or server
    #[arg(long, num_args = 0..=1, default_missing_value = "client", value_parser = ["client", "server"])]
    pub revoke: Option<String>,
    #[arg(long, default_value = "vendor-a.test")]
    pub server_apex: String,
    #[arg(long, default_value = "vendor-b.test")]
    pub client_apex: String,
    #[arg(long, default_value_t = 256)]
    pub payload: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// d2d, cloud or both [default: both]
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub gateways: Option<usize>,
    #[arg(long)]
    pub grid_size: Option<f64>,
    #[arg(long)]
    pub gateway_arm: Option<f64>,
    #[arg(long)]
    pub speed_min: Option<f64>,
    #[arg(long)]
    pub speed_max: Option<f64>,
    #[arg(long)]
    pub gateway_range: Option<f64>,
    #[arg(long)]
    pub poll_interval: Option<f64>,
    #[arg(long)]
    pub burst_size: Option<u32>,
    #[arg(long)]
    pub d2d_latency_ms: Option<f64>,
    #[arg(long)]
    pub handshake_ms: Option<f64>,
    #[arg(long)]
    pub weibull_shape: Option<f64>,
    #[arg(long)]
    pub weibull_scale: Option<f64>,
    /// Cloud messages in flight before drops [default: unbounded]
    #[arg(long)]
    pub cloud_cap: Option<usize>,
    /// Simulated seconds
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
}

/// RFC 3339 instant; a bare date means midnight UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timestamp(pub OffsetDateTime);

impl FromStr for Timestamp {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(t) = OffsetDateTime::parse(s, &Rfc3339) {
            return Ok(Self(t));
        }
        let fmt = time::macros::format_description!("[year]-[month]-[day]");
        Date::parse(s, fmt)
            .map(|d| Self(d.midnight().assume_utc()))
            .map_err(|_| format!("{s:?} is neither RFC 3339 nor YYYY-MM-DD"))
    }
}
