use std::path::Path;

use anyhow::Context;
use atlas_core::{DeviceUuid, FilterPublisher, RevocationFilter};
use atlas_provision::inventory::{Inventory, RevocationReason};

use super::{read_filter, Ctx};
use crate::args::{FilterBuildArgs, FilterCheckArgs, RevokeArgs};
use crate::layout;
use crate::settings::UsageError;

/// Next filter for `apex`, numbered after whatever is on disk.
fn publish(ctx: &Ctx, apex: &str, inv: &Inventory) -> anyhow::Result<RevocationFilter> {
    let mut publisher = match ctx.load_filter(apex)? {
        Some(f) => FilterPublisher::resume_after(f.epoch()),
        None => FilterPublisher::default(),
    };
    let filter = publisher.publish(&inv.revoked_serials(apex), &inv.issued_serials(apex), apex)?;
    layout::write(&ctx.layout.filter(apex), filter.to_bytes())?;
    Ok(filter)
}

fn describe(f: &RevocationFilter) -> String {
    format!("filter {} epoch {}: {} level(s), {} bytes", f.vendor_id(), f.epoch(), f.levels().len(), f.to_bytes().len())
}

fn find_device(ctx: &Ctx, uuid: &DeviceUuid, apex: Option<String>) -> anyhow::Result<(String, Inventory)> {
    if apex.is_some() || ctx.settings.opt::<String>("apex", None)?.is_some() {
        let apex = ctx.apex(apex)?;
        let inv = ctx.load_inventory(&apex)?;
        return Ok((apex, inv));
    }
    let dir = ctx.layout.inventory_dir();
    let entries = std::fs::read_dir(&dir).with_context(|| format!("no inventories under {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        let Some(apex) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".atlasinv")) else {
            continue;
        };
        let inv = Inventory::restore(&path).with_context(|| format!("loading {}", path.display()))?;
        if inv.get(uuid).is_some() {
            return Ok((apex.to_owned(), inv));
        }
    }
    anyhow::bail!("device {uuid} is in no inventory under {}", dir.display())
}

pub fn revoke(ctx: &Ctx, a: RevokeArgs) -> anyhow::Result<()> {
    let uuid: DeviceUuid = a.uuid.parse().map_err(|e| UsageError(format!("--uuid {}: {e}", a.uuid)))?;
    let reason: RevocationReason = a.reason.parse().map_err(UsageError)?;
    let (apex, mut inv) = find_device(ctx, &uuid, a.apex)?;
    let serials = inv.revoke(&uuid, reason)?;
    inv.snapshot(&ctx.layout.inventory(&apex))?;
    let filter = publish(ctx, &apex, &inv)?;
    println!("revoked {uuid} ({} serial(s))", serials.len());
    println!("{}", describe(&filter));
    Ok(())
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect())
}

pub fn build(ctx: &Ctx, a: FilterBuildArgs) -> anyhow::Result<()> {
    let apex = ctx.apex(a.apex)?;
    let filter = match (&a.revoked, &a.universe) {
        (Some(revoked), Some(universe)) => {
            let revoked = read_lines(revoked)?;
            let universe = read_lines(universe)?;
            let epoch = match a.epoch {
                Some(e) => e,
                None => ctx.load_filter(&apex)?.map_or(1, |f| f.epoch() + 1),
            };
            let f = atlas_core::build_filter(&revoked, &universe, &apex, epoch)?;
            let path = a.output.clone().unwrap_or_else(|| ctx.layout.filter(&apex));
            layout::write(&path, f.to_bytes())?;
            f
        }
        _ => {
            if a.epoch.is_some() || a.output.is_some() {
                return Err(UsageError("--epoch and --output need --revoked and --universe".into()).into());
            }
            publish(ctx, &apex, &ctx.load_inventory(&apex)?)?
        }
    };
    println!("{}", describe(&filter));
    Ok(())
}

pub fn check(ctx: &Ctx, a: FilterCheckArgs) -> anyhow::Result<()> {
    if a.serial.is_empty() && a.uuid.is_empty() {
        return Err(UsageError("give at least one --serial or --uuid".into()).into());
    }
    let apex = ctx.apex(a.apex.clone())?;
    let path = a.filter.clone().unwrap_or_else(|| ctx.layout.filter(&apex));
    let filter = read_filter(&path)?;
    let mut serials = a.serial.clone();
    if !a.uuid.is_empty() {
        let inv = ctx.load_inventory(filter.vendor_id())?;
        for u in &a.uuid {
            let uuid: DeviceUuid = u.parse().map_err(|e| UsageError(format!("--uuid {u}: {e}")))?;
            let rec = inv.get(&uuid).with_context(|| format!("device {uuid} not in the {} inventory", filter.vendor_id()))?;
            serials.extend(rec.serial_history.iter().cloned());
        }
    }
    for s in serials {
        println!("{s} {}", if filter.query(&s) { "revoked" } else { "valid" });
    }
    Ok(())
}
