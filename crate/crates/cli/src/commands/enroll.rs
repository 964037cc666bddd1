use anyhow::Context;
use atlas_core::{DeviceSecret, VendorNamespace};
use atlas_provision::lifecycle::BatchItem;
use time::format_description::well_known::Rfc3339;

use super::{Backend, Ctx};
use crate::args::{BatchArgs, EnrollArgs};
use crate::layout;
use crate::settings::UsageError;

pub async fn single(ctx: &Ctx, a: EnrollArgs) -> anyhow::Result<()> {
    let cfg = ctx.vendor_config(&a.vendor)?;
    let ns = VendorNamespace::new(&cfg.apex, &ctx.class(&a.vendor)?)?;
    let secret = match (&a.secret, &a.mac) {
        (Some(s), _) => DeviceSecret::external(s.as_bytes().to_vec()),
        (None, Some(mac)) => DeviceSecret::from_mac(mac),
        (None, None) => unreachable!("clap requires one of --secret or --mac"),
    }
    .map_err(|e| UsageError(e.to_string()))?;

    let backend = Backend::open(ctx, cfg.clone()).await?;
    let device = backend.vendor.enroll_device(&ns, &secret, cfg.challenge).await;
    backend.save()?;
    let device = device?;
    device.save(&ctx.layout.devices)?;
    let leaf = device.leaf()?;
    println!("enrolled {} serial {} not_after {}", device.urn, leaf.serial, leaf.not_after.format(&Rfc3339)?);
    Ok(())
}

/// Secret for the `i`th device of a seeded batch.
pub fn batch_secret(seed: u64, class: &str, i: usize) -> DeviceSecret {
    DeviceSecret::external(format!("atlas-batch-{seed}-{class}-{i:06}").into_bytes()).expect("long enough")
}

pub async fn batch(ctx: &Ctx, a: BatchArgs) -> anyhow::Result<()> {
    let count: usize = ctx.settings.get("count", a.count, 10)?;
    let cfg = ctx.vendor_config(&a.vendor)?;
    let class = ctx.class(&a.vendor)?;
    let items = (0..count)
        .map(|i| BatchItem { root_domain: cfg.apex.clone(), device_class: class.clone(), secret: batch_secret(ctx.seed, &class, i) })
        .collect();

    let backend = Backend::open(ctx, cfg).await?;
    let report = backend.vendor.enroll_batch(items).await;
    backend.save()?;
    for d in report.devices() {
        d.save(&ctx.layout.devices)?;
    }
    let path = ctx.layout.report("enroll-batch.csv");
    layout::write(&path, report.to_csv()).context("writing batch report")?;
    println!("{}", report.summary_line());
    println!("report {}", path.display());
    let failed = count - report.successes();
    if failed > 0 {
        anyhow::bail!("{failed} of {count} enrollments failed, see {}", path.display());
    }
    Ok(())
}
