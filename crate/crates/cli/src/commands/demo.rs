use atlas_core::{DeviceSecret, VendorNamespace};
use atlas_provision::certs::KeyAlgorithm;
use atlas_provision::inventory::RevocationReason;
use atlas_provision::lifecycle::{LocalPki, LocalPkiConfig, VendorConfig};
use atlas_provision::peer_auth::{mtls_echo, PeerAuthError, TrustContext};

use super::Ctx;
use crate::args::DemoArgs;
use crate::layout;

/// One device per vendor under a shared root, then a mutually authenticated
/// echo from the client vendor's device to the server vendor's device.
pub async fn d2d(ctx: &Ctx, a: DemoArgs) -> anyhow::Result<()> {
    let clock = ctx.clock();
    let mut pki = LocalPki::start(LocalPkiConfig { seed: ctx.seed, clock: clock.clone(), ..LocalPkiConfig::default() }).await?;
    let mut devices = Vec::new();
    let mut vendors = Vec::new();
    for (apex, class) in [(&a.server_apex, "gateway"), (&a.client_apex, "sensor")] {
        let cfg = VendorConfig { key_algorithm: KeyAlgorithm::P256, seed: ctx.seed, ..VendorConfig::new(apex) };
        let vendor = pki.add_vendor(cfg).await?;
        let ns = VendorNamespace::new(vendor.apex(), class)?;
        let secret = DeviceSecret::external(format!("atlas-demo-{}-{apex}", ctx.seed).into_bytes())?;
        let dev = vendor.enroll_device(&ns, &secret, vendor.config().challenge).await?;
        println!("enrolled {}", dev.urn);
        dev.save(&ctx.layout.devices.join("demo"))?;
        devices.push(dev);
        vendors.push(vendor);
    }
    let (server, client) = (&devices[0], &devices[1]);

    if let Some(which) = &a.revoke {
        let (vendor, dev) = if which == "server" { (&vendors[0], server) } else { (&vendors[1], client) };
        vendor.revoke_device(&dev.uuid(), RevocationReason::KeyCompromise)?;
        println!("revoked {which} {}", dev.urn);
    }
    let mut trust = TrustContext::from_pem(&pki.root_pem(), clock)?;
    for v in &vendors {
        let f = v.publish_filter()?;
        layout::write(&ctx.layout.demo().join(format!("{}.crl", v.apex())), f.to_bytes())?;
        trust = trust.with_filter(f);
    }

    let payload: Vec<u8> = (0..a.payload).map(|i| i as u8).collect();
    let verdicts = ctx.layout.demo().join("verdicts.jsonl");
    match mtls_echo(server, client, &trust, &payload).await {
        Ok(r) => {
            layout::write(&verdicts, format!("{}\n{}\n", r.client_verdict.to_json(), r.server_verdict.to_json()))?;
            println!("client accepted server: {}", r.client_verdict);
            println!("server accepted client: {}", r.server_verdict);
            println!("echoed {} bytes, handshake {:.2} ms", r.payload_echoed.len(), r.handshake_ms);
            Ok(())
        }
        Err(PeerAuthError::HandshakeRejected { side, verdict }) => {
            layout::write(&verdicts, format!("{}\n", verdict.to_json()))?;
            let reason = verdict.reject_reason.map(|r| r.to_string()).unwrap_or_default();
            anyhow::bail!("handshake rejected by {side}: {reason}: {}", verdict.detail.unwrap_or_default())
        }
        Err(e) => Err(e.into()),
    }
}
