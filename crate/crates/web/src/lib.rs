//! WebAssembly bindings for the demo page in `www/`. Every export returns a
//! JSON string; the page parses it and draws on a canvas.
//!
//! The plain-Rust functions behind the exports are public too, so they are
//! tested natively.

use atlas_core::sim::{histogram, run_smart_city, run_smart_city_traced, summarize, Mode, SimConfig, WeibullParams};
use atlas_core::{build_filter, RevocationFilter};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct WeibullView {
    pub mean: f64,
    pub median: f64,
    pub analytic_mean: f64,
    pub analytic_median: f64,
    /// Histogram covers [0, upper]; draws above it are counted in `clipped`.
    pub upper: f64,
    pub clipped: usize,
    pub bin_width: f64,
    pub density: Vec<f64>,
    /// Analytic pdf at each bin center.
    pub pdf: Vec<f64>,
}

fn gamma(x: f64) -> f64 {
    // Lanczos, g = 7, good to ~1e-13 for the arguments used here.
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let s = C.iter().enumerate().skip(1).fold(C[0], |acc, (i, c)| acc + c / (x + i as f64));
    (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * s
}

pub fn weibull_view(beta: f64, lambda: f64, draws: usize, bins: usize, seed: u64) -> Result<WeibullView, String> {
    let p = WeibullParams::new(beta, lambda).map_err(|e| e.to_string())?;
    if draws == 0 || bins == 0 {
        return Err("need at least one draw and one bin".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..draws).map(|_| p.sample(&mut rng)).collect();
    let s = summarize(&xs).map_err(|e| e.to_string())?;
    let upper = p.quantile(0.95).map_err(|e| e.to_string())?;
    let mut kept: Vec<f64> = xs.iter().copied().filter(|&x| x <= upper).collect();
    let clipped = xs.len() - kept.len();
    // Pin the histogram range to [0, upper].
    kept.push(0.0);
    kept.push(upper);
    let h = histogram(&kept, bins).map_err(|e| e.to_string())?;
    let scale = kept.len() as f64 / xs.len() as f64;
    Ok(WeibullView {
        mean: s.mean,
        median: s.median,
        analytic_mean: lambda * gamma(1.0 + 1.0 / beta),
        analytic_median: p.median(),
        upper,
        clipped,
        bin_width: h.bin_width,
        density: h.densities().into_iter().map(|d| d * scale).collect(),
        pdf: (0..bins).map(|i| p.pdf(h.lo + (i as f64 + 0.5) * h.bin_width)).collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct CityView {
    pub grid_size: f64,
    pub gateway_range: f64,
    pub gateways: Vec<(f64, f64)>,
    /// Per traced node, its polled positions in order.
    pub paths: Vec<Vec<(f64, f64, bool)>>,
    pub messages: usize,
    pub contacts: u64,
    pub mean_d2d_ms: Option<f64>,
    pub mean_cloud_ms: Option<f64>,
}

pub fn city_view(nodes: usize, gateways: usize, duration: f64, seed: u64, traced: usize) -> Result<CityView, String> {
    let cfg = SimConfig { num_mobile_nodes: nodes, num_gateways: gateways, duration, seed, mode: Mode::D2d, ..SimConfig::default() };
    let (d2d, trace) = run_smart_city_traced(&cfg, traced.min(nodes)).map_err(|e| e.to_string())?;
    let cloud = run_smart_city(&SimConfig { mode: Mode::Cloud, ..cfg.clone() }).map_err(|e| e.to_string())?;
    let mut paths = vec![Vec::new(); traced.min(nodes)];
    for p in trace {
        paths[p.node_id as usize].push((p.x, p.y, p.gateway.is_some()));
    }
    Ok(CityView {
        grid_size: cfg.grid_size,
        gateway_range: cfg.gateway_range,
        gateways: cfg.gateways(),
        paths,
        messages: d2d.samples.len(),
        contacts: d2d.contacts,
        mean_d2d_ms: d2d.summary.map(|s| s.mean * 1e3),
        mean_cloud_ms: cloud.summary.map(|s| s.mean * 1e3),
    })
}

#[derive(Debug, Serialize)]
pub struct FilterView {
    pub universe: usize,
    pub revoked: usize,
    pub bytes: usize,
    /// Bits in each cascade level.
    pub level_bits: Vec<u32>,
    pub serial_list_bytes: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

pub fn filter_view(universe: usize, revoked_percent: f64, seed: u64) -> Result<FilterView, String> {
    if universe == 0 || !(0.0..=100.0).contains(&revoked_percent) {
        return Err("universe must be positive and the percentage within 0..=100".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = std::collections::BTreeSet::new();
    while all.len() < universe {
        all.insert((rng.gen::<u128>() >> 21).to_string());
    }
    let all: Vec<String> = all.into_iter().collect();
    let k = ((universe as f64) * revoked_percent / 100.0).round() as usize;
    let revoked: Vec<String> = all.choose_multiple(&mut rng, k).cloned().collect();
    let f = build_filter(&revoked, &all, "demo.test", 1).map_err(|e| e.to_string())?;
    let bytes = f.to_bytes();
    let f = RevocationFilter::from_bytes(&bytes).map_err(|e| e.to_string())?;
    let truth: std::collections::HashSet<&str> = revoked.iter().map(String::as_str).collect();
    let (mut fp, mut fn_) = (0, 0);
    for s in &all {
        match (f.query(s), truth.contains(s.as_str())) {
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(FilterView {
        universe,
        revoked: k,
        bytes: bytes.len(),
        level_bits: f.levels().iter().map(|l| l.bit_len()).collect(),
        serial_list_bytes: revoked.iter().map(|s| s.len() + 1).sum(),
        false_positives: fp,
        false_negatives: fn_,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.map(|v| serde_json::to_string(&v).expect("views serialize")).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn weibull(beta: f64, lambda: f64, draws: u32, bins: u32, seed: u32) -> Result<String, JsValue> {
    to_js(weibull_view(beta, lambda, draws as usize, bins as usize, seed as u64))
}

#[wasm_bindgen]
pub fn city(nodes: u32, gateways: u32, duration: f64, seed: u32, traced: u32) -> Result<String, JsValue> {
    to_js(city_view(nodes as usize, gateways as usize, duration, seed as u64, traced as usize))
}

#[wasm_bindgen]
pub fn filter(universe: u32, revoked_percent: f64, seed: u32) -> Result<String, JsValue> {
    to_js(filter_view(universe as usize, revoked_percent, seed as u64))
}
