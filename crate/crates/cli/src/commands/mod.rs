use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use atlas_core::RevocationFilter;
use atlas_provision::certs::KeyAlgorithm;
use atlas_provision::clock::{self, ManualClock, SharedClock};
use atlas_provision::inventory::Inventory;
use atlas_provision::lifecycle::{LocalPki, LocalPkiConfig, Vendor, VendorConfig};
use time::OffsetDateTime;

use crate::args::{Cli, Command, DemoCommand, FilterCommand, ServeCommand, VendorArgs};
use crate::layout::{self, Layout};
use crate::settings::{Settings, UsageError};

mod demo;
mod enroll;
mod filter;
mod renew;
mod serve;
mod simulate;

pub const DEFAULT_APEX: &str = "vendor.com";

/// Resolved global options.
pub struct Ctx {
    pub settings: Settings,
    pub layout: Layout,
    pub seed: u64,
    pub now: Option<OffsetDateTime>,
}

impl Ctx {
    fn clock(&self) -> SharedClock {
        match self.now {
            Some(t) => ManualClock::new(t),
            None => clock::system(),
        }
    }

    fn now(&self) -> OffsetDateTime {
        self.now.unwrap_or_else(OffsetDateTime::now_utc)
    }

    fn apex(&self, flag: Option<String>) -> anyhow::Result<String> {
        let apex: String = self.settings.get("apex", flag, DEFAULT_APEX.to_owned())?;
        Ok(apex.trim_end_matches('.').to_ascii_lowercase())
    }

    fn vendor_config(&self, v: &VendorArgs) -> anyhow::Result<VendorConfig> {
        let s = &self.settings;
        let mut cfg = VendorConfig::new(&self.apex(v.apex.clone())?);
        cfg.challenge = s.get("challenge", v.challenge.as_deref().map(str::parse).transpose().map_err(UsageError)?, cfg.challenge)?;
        cfg.key_algorithm = s.get(
            "key-algorithm",
            v.key_algorithm.as_deref().map(str::parse::<KeyAlgorithm>).transpose().map_err(UsageError)?,
            cfg.key_algorithm,
        )?;
        cfg.parallelism = s.get("parallelism", v.parallelism, cfg.parallelism)?;
        if cfg.parallelism == 0 {
            return Err(UsageError("parallelism must be at least 1".into()).into());
        }
        cfg.seed = self.seed;
        Ok(cfg)
    }

    fn class(&self, v: &VendorArgs) -> anyhow::Result<String> {
        Ok(self.settings.get("class", v.class.clone(), "sensor".to_owned())?)
    }

    fn load_inventory(&self, apex: &str) -> anyhow::Result<Inventory> {
        let path = self.layout.inventory(apex);
        if path.exists() {
            Inventory::restore(&path).with_context(|| format!("loading {}", path.display()))
        } else {
            Ok(Inventory::new())
        }
    }

    fn load_filter(&self, apex: &str) -> anyhow::Result<Option<RevocationFilter>> {
        read_filter(&self.layout.filter(apex)).map(Some).or_else(|e| {
            if self.layout.filter(apex).exists() {
                Err(e)
            } else {
                Ok(None)
            }
        })
    }
}

pub fn read_filter(path: &std::path::Path) -> anyhow::Result<RevocationFilter> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    RevocationFilter::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))
}

/// An embedded CA plus one vendor backend whose inventory persists under `--out`.
pub struct Backend {
    _pki: LocalPki,
    pub vendor: Arc<Vendor>,
    layout: Layout,
}

impl Backend {
    async fn open(ctx: &Ctx, cfg: VendorConfig) -> anyhow::Result<Self> {
        let inventory = ctx.load_inventory(&cfg.apex)?;
        let filter = ctx.load_filter(&cfg.apex)?;
        let mut pki = LocalPki::start(LocalPkiConfig { seed: ctx.seed, clock: ctx.clock(), ..LocalPkiConfig::default() }).await?;
        let vendor = pki.add_vendor_with(cfg, inventory).await?;
        if let Some(f) = filter {
            vendor.resume_filter_epochs(f.epoch());
        }
        layout::write(&ctx.layout.root_pem(), pki.root_pem())?;
        Ok(Self { _pki: pki, vendor, layout: ctx.layout.clone() })
    }

    /// Persists the inventory snapshot and the zone.
    fn save(&self) -> anyhow::Result<()> {
        let apex = self.vendor.apex();
        let inv = self.layout.inventory(apex);
        std::fs::create_dir_all(inv.parent().expect("has parent"))?;
        self.vendor.snapshot_inventory(&inv)?;
        let zone = self.layout.zone(apex);
        std::fs::create_dir_all(zone.parent().expect("has parent"))?;
        self.vendor.dns().export_zone(&zone)?;
        Ok(())
    }
}

pub async fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let out: PathBuf = settings.get("out", cli.out.clone(), PathBuf::from("atlas-out"))?;
    let devices: Option<PathBuf> = settings.opt("devices", cli.devices.clone())?;
    let seed = settings.get("seed", cli.seed, 1u64)?;
    let now = settings.opt("now", cli.now)?.map(|t| t.0);
    let ctx = Ctx { layout: Layout::new(out, devices), settings, seed, now };
    match cli.command {
        Command::Enroll(a) => enroll::single(&ctx, a).await,
        Command::EnrollBatch(a) => enroll::batch(&ctx, a).await,
        Command::Renew(a) => renew::run(&ctx, a).await,
        Command::Revoke(a) => filter::revoke(&ctx, a),
        Command::Filter(FilterCommand::Build(a)) => filter::build(&ctx, a),
        Command::Filter(FilterCommand::Check(a)) => filter::check(&ctx, a),
        Command::Serve(ServeCommand::Dns(a)) => serve::dns(&ctx, a).await,
        Command::Serve(ServeCommand::Ca(a)) => serve::ca(&ctx, a).await,
        Command::Demo(DemoCommand::D2d(a)) => demo::d2d(&ctx, a).await,
        Command::Simulate(a) => simulate::run(&ctx, a),
    }
}
