use atlas_core::sim::{histogram, run_smart_city, Mode, SimConfig, SimReport, WeibullParams};

use super::Ctx;
use crate::args::SimulateArgs;
use crate::layout;
use crate::settings::UsageError;

fn config(ctx: &Ctx, a: &SimulateArgs) -> anyhow::Result<SimConfig> {
    let s = &ctx.settings;
    let d = SimConfig::default();
    let shape = s.get("weibull-shape", a.weibull_shape, d.cloud_latency.beta())?;
    let scale = s.get("weibull-scale", a.weibull_scale, d.cloud_latency.lambda())?;
    let cfg = SimConfig {
        num_mobile_nodes: s.get("nodes", a.nodes, d.num_mobile_nodes)?,
        num_gateways: s.get("gateways", a.gateways, d.num_gateways)?,
        grid_size: s.get("grid-size", a.grid_size, d.grid_size)?,
        gateway_arm: s.get("gateway-arm", a.gateway_arm, d.gateway_arm)?,
        speed_min: s.get("speed-min", a.speed_min, d.speed_min)?,
        speed_max: s.get("speed-max", a.speed_max, d.speed_max)?,
        gateway_range: s.get("gateway-range", a.gateway_range, d.gateway_range)?,
        poll_interval: s.get("poll-interval", a.poll_interval, d.poll_interval)?,
        burst_size: s.get("burst-size", a.burst_size, d.burst_size)?,
        d2d_link_latency_ms: s.get("d2d-latency-ms", a.d2d_latency_ms, d.d2d_link_latency_ms)?,
        handshake_cost_ms: s.get("handshake-ms", a.handshake_ms, d.handshake_cost_ms)?,
        cloud_latency: WeibullParams::new(shape, scale).map_err(|e| UsageError(e.to_string()))?,
        cloud_connection_cap: s.opt("cloud-cap", a.cloud_cap)?,
        duration: s.get("duration", a.duration, d.duration)?,
        seed: ctx.seed,
        mode: d.mode,
    };
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(cfg)
}

fn write_report(ctx: &Ctx, r: &SimReport, bins: usize) -> anyhow::Result<()> {
    let m = r.mode;
    layout::write(&ctx.layout.sim(&format!("{m}.csv")), r.to_csv())?;
    layout::write(&ctx.layout.sim(&format!("{m}.summary.json")), format!("{}\n", r.summary_json()))?;
    if let Ok(h) = histogram(&r.latencies(), bins) {
        layout::write(&ctx.layout.sim(&format!("{m}.hist.csv")), h.to_csv())?;
    }
    println!("{}", r.summary_json());
    Ok(())
}

pub fn run(ctx: &Ctx, a: SimulateArgs) -> anyhow::Result<()> {
    let mode: String = ctx.settings.get("mode", a.mode.clone(), "both".to_owned())?;
    let modes = match mode.as_str() {
        "both" => vec![Mode::D2d, Mode::Cloud],
        m => vec![m.parse::<Mode>().map_err(|_| UsageError(format!("--mode {m:?}: expected d2d, cloud or both")))?],
    };
    if a.bins == 0 {
        return Err(UsageError("--bins must be at least 1".into()).into());
    }
    let base = config(ctx, &a)?;
    let mut means = Vec::new();
    for mode in modes {
        let r = run_smart_city(&SimConfig { mode, ..base.clone() })?;
        write_report(ctx, &r, a.bins)?;
        means.push(r.summary.map(|s| s.mean));
    }
    if let [Some(d2d), Some(cloud)] = means[..] {
        let ratio = cloud / d2d;
        let json = serde_json::json!({ "mean_d2d_s": d2d, "mean_cloud_s": cloud, "ratio": ratio });
        layout::write(&ctx.layout.sim("comparison.json"), format!("{json}\n"))?;
        println!("cloud/d2d mean latency ratio {ratio:.1}");
    }
    Ok(())
}
