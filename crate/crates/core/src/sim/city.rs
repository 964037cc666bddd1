//! Smart-city contact simulation.
//!
//! Mobile nodes move over a square grid under the random waypoint model (zero
//! pause). Every poll interval each node looks up its nearest gateway; when that
//! gateway is within range the node sends a burst of messages. In `d2d` mode a
//! message costs the direct link latency plus its share of one handshake per
//! contact; in `cloud` mode it costs the link latency plus a Weibull-distributed
//! mediation delay.
//!
//! The engine is a discrete-event loop over a priority queue keyed on simulated
//! time. Mobility and latency draws come from separate ChaCha streams of the same
//! seed, so both modes see identical node trajectories.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt::{self, Write};
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stats::{summarize, Summary};
use super::weibull::WeibullParams;
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    D2d,
    Cloud,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::D2d => "d2d",
            Mode::Cloud => "cloud",
        })
    }
}

impl FromStr for Mode {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "d2d" => Ok(Mode::D2d),
            "cloud" => Ok(Mode::Cloud),
            other => Err(SimError::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_mobile_nodes: usize,
    /// Gateways are taken from the star layout in order: center, east, west, north, south.
    pub num_gateways: usize,
    /// Side of the square city grid, metres.
    pub grid_size: f64,
    /// Distance of the four arm gateways from the center gateway, metres.
    pub gateway_arm: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub gateway_range: f64,
    pub poll_interval: f64,
    pub burst_size: u32,
    pub mode: Mode,
    pub d2d_link_latency_ms: f64,
    pub handshake_cost_ms: f64,
    pub cloud_latency: WeibullParams,
    /// Maximum cloud messages in flight; extra messages are dropped. `None` = unbounded.
    pub cloud_connection_cap: Option<usize>,
    pub seed: u64,
    /// Simulated seconds.
    pub duration: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_mobile_nodes: 500,
            num_gateways: 5,
            grid_size: 500.0,
            gateway_arm: 150.0,
            speed_min: 5.0,
            speed_max: 25.0,
            gateway_range: 100.0,
            poll_interval: 2.0,
            burst_size: 10,
            mode: Mode::D2d,
            d2d_link_latency_ms: 17.0,
            handshake_cost_ms: 17.0,
            cloud_latency: WeibullParams::CLOUD,
            cloud_connection_cap: None,
            seed: 1,
            duration: 300.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.num_mobile_nodes == 0 {
            return bad("need at least one mobile node".into());
        }
        if !(1..=5).contains(&self.num_gateways) {
            return bad(format!("star topology holds 1 to 5 gateways, got {}", self.num_gateways));
        }
        let positive = [
            ("grid_size", self.grid_size),
            ("speed_min", self.speed_min),
            ("speed_max", self.speed_max),
            ("gateway_range", self.gateway_range),
            ("poll_interval", self.poll_interval),
            ("duration", self.duration),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("d2d_link_latency_ms", self.d2d_link_latency_ms), ("handshake_cost_ms", self.handshake_cost_ms)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.speed_min > self.speed_max {
            return bad(format!("speed range [{}, {}] is empty", self.speed_min, self.speed_max));
        }
        if self.burst_size == 0 {
            return bad("burst_size must be at least 1".into());
        }
        if self.cloud_connection_cap == Some(0) {
            return bad("cloud_connection_cap must be at least 1".into());
        }
        let half = self.grid_size / 2.0;
        if self.gateway_arm < 0.0 || self.gateway_arm > half {
            return bad(format!("gateway_arm {} puts gateways outside the grid", self.gateway_arm));
        }
        Ok(())
    }

    /// Star layout: one gateway at the grid center, four at the cardinal arms.
    pub fn gateways(&self) -> Vec<(f64, f64)> {
        let c = self.grid_size / 2.0;
        let a = self.gateway_arm;
        [(c, c), (c + a, c), (c - a, c), (c, c + a), (c, c - a)].into_iter().take(self.num_gateways).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub node_id: u32,
    pub gateway_id: u32,
    pub send_time: f64,
    pub latency_seconds: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub mode: Mode,
    pub samples: Vec<LatencySample>,
    /// `None` when no node ever came within range of a gateway.
    pub summary: Option<Summary>,
    pub drops: u64,
    pub contacts: u64,
}

impl SimReport {
    pub fn latencies(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.latency_seconds).collect()
    }

    /// `mode,node,gateway,t_send,latency_s` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.samples.len() + 1));
        out.push_str("mode,node,gateway,t_send,latency_s\n");
        for s in &self.samples {
            let _ = writeln!(out, "{},{},{},{:.6},{:.9}", s.mode, s.node_id, s.gateway_id, s.send_time, s.latency_seconds);
        }
        out
    }

    /// Single-line JSON without the per-message samples.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            mode: Mode,
            messages: usize,
            contacts: u64,
            drops: u64,
            summary: &'a Option<Summary>,
        }
        serde_json::to_string(&Out {
            mode: self.mode,
            messages: self.samples.len(),
            contacts: self.contacts,
            drops: self.drops,
            summary: &self.summary,
        })
        .expect("plain data serializes")
    }
}

/// Node position and speed observed at a poll.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub node_id: u32,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    /// Gateway in range at this poll, if any.
    pub gateway: Option<u32>,
}

#[derive(Debug, Clone, Copy)]
struct Leg {
    from: (f64, f64),
    to: (f64, f64),
    start: f64,
    arrive: f64,
    speed: f64,
}

impl Leg {
    fn position(&self, t: f64) -> (f64, f64) {
        let span = self.arrive - self.start;
        if span <= 0.0 || t >= self.arrive {
            return self.to;
        }
        let f = ((t - self.start) / span).clamp(0.0, 1.0);
        (self.from.0 + f * (self.to.0 - self.from.0), self.from.1 + f * (self.to.1 - self.from.1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Arrive(u32),
    Poll(u32),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    t: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.t.total_cmp(&other.t).then(self.seq.cmp(&other.seq))
    }
}

struct Queue {
    heap: BinaryHeap<Reverse<Event>>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, t: f64, kind: EventKind) {
        self.heap.push(Reverse(Event { t, seq: self.seq, kind }));
        self.seq += 1;
    }
}

fn new_leg(rng: &mut ChaCha8Rng, cfg: &SimConfig, from: (f64, f64), start: f64) -> Leg {
    let to = (rng.gen_range(0.0..=cfg.grid_size), rng.gen_range(0.0..=cfg.grid_size));
    let speed = if cfg.speed_min == cfg.speed_max { cfg.speed_min } else { rng.gen_range(cfg.speed_min..=cfg.speed_max) };
    let dist = ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt();
    Leg { from, to, start, arrive: start + dist / speed, speed }
}

fn nearest(gateways: &[(f64, f64)], p: (f64, f64)) -> (u32, f64) {
    gateways
        .iter()
        .enumerate()
        .map(|(i, g)| (i as u32, ((g.0 - p.0).powi(2) + (g.1 - p.1).powi(2)).sqrt()))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("at least one gateway")
}

const LATENCY_STREAM: u64 = 1;

/// Runs one scenario. Identical configs produce identical reports.
pub fn run_smart_city(cfg: &SimConfig) -> Result<SimReport, SimError> {
    run(cfg, 0).map(|(report, _)| report)
}

/// Like [`run_smart_city`], also recording every poll of the first `trace_nodes` nodes.
pub fn run_smart_city_traced(cfg: &SimConfig, trace_nodes: usize) -> Result<(SimReport, Vec<TracePoint>), SimError> {
    run(cfg, trace_nodes)
}

fn run(cfg: &SimConfig, trace_nodes: usize) -> Result<(SimReport, Vec<TracePoint>), SimError> {
    cfg.validate()?;
    let gateways = cfg.gateways();
    let mut mobility = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut latency_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    latency_rng.set_stream(LATENCY_STREAM);

    let mut queue = Queue { heap: BinaryHeap::new(), seq: 0 };
    let mut legs = Vec::with_capacity(cfg.num_mobile_nodes);
    for node in 0..cfg.num_mobile_nodes as u32 {
        let start = (mobility.gen_range(0.0..=cfg.grid_size), mobility.gen_range(0.0..=cfg.grid_size));
        let leg = new_leg(&mut mobility, cfg, start, 0.0);
        queue.push(leg.arrive, EventKind::Arrive(node));
        legs.push(leg);
        let phase: f64 = mobility.gen_range(0.0..cfg.poll_interval);
        queue.push(phase, EventKind::Poll(node));
    }

    let link = cfg.d2d_link_latency_ms / 1000.0;
    let handshake_share = cfg.handshake_cost_ms / 1000.0 / cfg.burst_size as f64;
    let mut contact: Vec<Option<u32>> = vec![None; cfg.num_mobile_nodes];
    let mut in_flight: BinaryHeap<Reverse<u64>> = BinaryHeap::new();
    let mut samples = Vec::new();
    let mut trace = Vec::new();
    let mut drops = 0u64;
    let mut contacts = 0u64;

    while let Some(Reverse(ev)) = queue.heap.pop() {
        if ev.t > cfg.duration {
            break;
        }
        match ev.kind {
            EventKind::Arrive(node) => {
                let from = legs[node as usize].to;
                let leg = new_leg(&mut mobility, cfg, from, ev.t);
                queue.push(leg.arrive, EventKind::Arrive(node));
                legs[node as usize] = leg;
            }
            EventKind::Poll(node) => {
                let leg = legs[node as usize];
                let pos = leg.position(ev.t);
                let (gw, dist) = nearest(&gateways, pos);
                let in_range = dist <= cfg.gateway_range;
                if (node as usize) < trace_nodes {
                    trace.push(TracePoint {
                        node_id: node,
                        t: ev.t,
                        x: pos.0,
                        y: pos.1,
                        speed: leg.speed,
                        gateway: in_range.then_some(gw),
                    });
                }
                if in_range {
                    let fresh = contact[node as usize] != Some(gw);
                    if fresh {
                        contacts += 1;
                    }
                    contact[node as usize] = Some(gw);
                    for _ in 0..cfg.burst_size {
                        let latency = match cfg.mode {
                            Mode::D2d => link + if fresh { handshake_share } else { 0.0 },
                            Mode::Cloud => {
                                let delay = cfg.cloud_latency.sample(&mut latency_rng);
                                if let Some(cap) = cfg.cloud_connection_cap {
                                    // Completion times are positive, so their bit patterns order like the values.
                                    while in_flight.peek().is_some_and(|Reverse(done)| f64::from_bits(*done) <= ev.t) {
                                        in_flight.pop();
                                    }
                                    if in_flight.len() >= cap {
                                        drops += 1;
                                        continue;
                                    }
                                    in_flight.push(Reverse((ev.t + link + delay).to_bits()));
                                }
                                link + delay
                            }
                        };
                        samples.push(LatencySample {
                            node_id: node,
                            gateway_id: gw,
                            send_time: ev.t,
                            latency_seconds: latency,
                            mode: cfg.mode,
                        });
                    }
                } else {
                    contact[node as usize] = None;
                }
                queue.push(ev.t + cfg.poll_interval, EventKind::Poll(node));
            }
        }
    }

    let latencies: Vec<f64> = samples.iter().map(|s| s.latency_seconds).collect();
    let summary = summarize(&latencies).ok();
    Ok((SimReport { mode: cfg.mode, samples, summary, drops, contacts }, trace))
}
