use std::fmt::Write;

use atlas_core::DeviceUuid;
use atlas_provision::lifecycle::{Fleet, ProvisionedDevice, RenewalKind};

use super::{Backend, Ctx};
use crate::args::RenewArgs;
use crate::layout;
use crate::settings::UsageError;

/// One renewal tick at `--now`. Device bundles from `--devices` stand in for
/// the devices themselves: they sign the renewal requests and receive the
/// new chains.
pub async fn run(ctx: &Ctx, a: RenewArgs) -> anyhow::Result<()> {
    let cfg = ctx.vendor_config(&a.vendor)?;
    let apex = cfg.apex.clone();
    let fleet = Fleet::new();
    if ctx.layout.devices.exists() {
        for d in ProvisionedDevice::load_all(&ctx.layout.devices)? {
            if d.urn.root_domain() == apex {
                fleet.add(d);
            }
        }
    }
    for u in &a.offline {
        let uuid: DeviceUuid = u.parse().map_err(|e| UsageError(format!("--offline {u}: {e}")))?;
        fleet.set_offline(&uuid, true);
    }

    let backend = Backend::open(ctx, cfg).await?;
    let outcomes = backend.vendor.renewal_tick(ctx.now(), &fleet).await;
    backend.save()?;
    let outcomes = outcomes?;
    for d in fleet.devices() {
        d.save(&ctx.layout.devices)?;
    }

    let mut csv = String::from("uuid,outcome,old_serial,new_serial,detail\n");
    let (mut renewed, mut expired, mut unreachable, mut failed) = (0, 0, 0, 0);
    for o in &outcomes {
        let _ = match &o.kind {
            RenewalKind::Renewed { old_serial, new_serial } => {
                renewed += 1;
                writeln!(csv, "{},renewed,{old_serial},{new_serial},", o.uuid)
            }
            RenewalKind::Expired => {
                expired += 1;
                writeln!(csv, "{},expired,,,", o.uuid)
            }
            RenewalKind::Unreachable => {
                unreachable += 1;
                writeln!(csv, "{},unreachable,,,", o.uuid)
            }
            RenewalKind::Failed { kind, detail } => {
                failed += 1;
                writeln!(csv, "{},{kind},,,\"{}\"", o.uuid, detail.replace('"', "'"))
            }
        };
    }
    layout::write(&ctx.layout.report("renew.csv"), csv)?;
    println!("renewed {renewed} expired {expired} unreachable {unreachable} failed {failed}");
    if failed > 0 {
        anyhow::bail!("{failed} renewal(s) failed, see {}", ctx.layout.report("renew.csv").display());
    }
    Ok(())
}
