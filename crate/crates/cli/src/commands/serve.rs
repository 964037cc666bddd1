use std::net::{Ipv4Addr, SocketAddr};
use std::time::Duration;

use atlas_provision::acme::{AcmeServer, CaConfig, Probe};
use atlas_provision::dns::DnsAuthority;

use super::Ctx;
use crate::args::{ServeCaArgs, ServeDnsArgs};
use crate::layout;
use crate::settings::UsageError;

async fn hold(secs: Option<u64>) -> anyhow::Result<()> {
    match secs {
        Some(s) => tokio::time::sleep(Duration::from_secs(s)).await,
        None => tokio::signal::ctrl_c().await?,
    }
    Ok(())
}

pub async fn dns(ctx: &Ctx, a: ServeDnsArgs) -> anyhow::Result<()> {
    let apex = ctx.apex(a.apex)?;
    let bind: String = ctx.settings.get("bind", a.bind, "127.0.0.1:5353".to_owned())?;
    let dns = DnsAuthority::new(&apex)?;
    let cloud = format!("cloud.{apex}");
    dns.add_a(&cloud, Ipv4Addr::LOCALHOST)?;
    let inv = ctx.load_inventory(&apex)?;
    for r in inv.records() {
        dns.bind_device(&r.urn, &cloud)?;
    }
    let server = dns.serve_udp(&bind).await?;
    let zone = ctx.layout.zone(&apex);
    std::fs::create_dir_all(zone.parent().expect("has parent"))?;
    dns.export_zone(&zone)?;
    println!("dns {apex} serving {} device(s) on {}", inv.len(), server.local_addr());
    hold(a.r#for).await
}

fn parse_delegation(spec: &str) -> Result<(String, Probe), UsageError> {
    let bad = || UsageError(format!("--delegate {spec:?}: expected APEX=DNS_ADDR,HTTP_PORT"));
    let (apex, rest) = spec.split_once('=').ok_or_else(bad)?;
    let (dns, port) = rest.split_once(',').ok_or_else(bad)?;
    let dns: SocketAddr = dns.parse().map_err(|_| bad())?;
    let http_port: u16 = port.parse().map_err(|_| bad())?;
    Ok((apex.to_owned(), Probe { dns, http_port }))
}

pub async fn ca(ctx: &Ctx, a: ServeCaArgs) -> anyhow::Result<()> {
    let bind: String = ctx.settings.get("bind", a.bind, "127.0.0.1:14000".to_owned())?;
    let delegations = a.delegate.iter().map(|d| parse_delegation(d)).collect::<Result<Vec<_>, _>>()?;
    let cfg = CaConfig { seed: ctx.seed, ..CaConfig::default() };
    let server = AcmeServer::start(&cfg, &bind, ctx.clock()).await?;
    for (apex, probe) in delegations {
        server.delegate(&apex, probe);
    }
    layout::write(&ctx.layout.root_pem(), server.ca().root_pem())?;
    layout::write(&ctx.layout.out.join("ca").join("service-root.pem"), server.service_root_pem())?;
    println!("acme directory {}", server.directory_url());
    hold(a.r#for).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delegation_specs() {
        let (apex, p) = parse_delegation("vendor.com=127.0.0.1:5353,8080").unwrap();
        assert_eq!(apex, "vendor.com");
        assert_eq!(p.dns, "127.0.0.1:5353".parse().unwrap());
        assert_eq!(p.http_port, 8080);
        assert!(parse_delegation("vendor.com").is_err());
        assert!(parse_delegation("vendor.com=nope,1").is_err());
    }
}
