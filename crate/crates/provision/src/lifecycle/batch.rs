//! Batch enrollment results.

use std::fmt::Write;
use std::time::Duration;

use atlas_core::{DeviceSecret, DeviceUuid};
use serde::Serialize;

use super::device::ProvisionedDevice;

/// One device to enroll. The namespace is validated per item so a bad entry
/// fails alone.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub root_domain: String,
    pub device_class: String,
    pub secret: DeviceSecret,
}

#[derive(Debug, Clone)]
pub struct BatchEntry {
    /// Absent when the namespace or secret was rejected before derivation.
    pub uuid: Option<DeviceUuid>,
    /// `ok`, or the error kind.
    pub outcome: String,
    pub detail: Option<String>,
    /// CNAME binding time.
    pub binding: Option<Duration>,
    /// ACME order through certificate download.
    pub issuance: Option<Duration>,
    pub device: Option<ProvisionedDevice>,
}

impl BatchEntry {
    pub fn is_ok(&self) -> bool {
        self.device.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSd {
    pub mean_ms: f64,
    pub sd_ms: f64,
    pub n: usize,
}

impl MeanSd {
    /// Sample standard deviation; zero for fewer than two values.
    pub fn of(values_ms: &[f64]) -> Option<Self> {
        let n = values_ms.len();
        if n == 0 {
            return None;
        }
        let mean = values_ms.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { values_ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Some(Self { mean_ms: mean, sd_ms: var.sqrt(), n })
    }
}

#[derive(Debug, Clone, Default)]
pub struct BatchReport {
    pub entries: Vec<BatchEntry>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl BatchReport {
    pub fn successes(&self) -> usize {
        self.entries.iter().filter(|e| e.is_ok()).count()
    }

    pub fn devices(&self) -> impl Iterator<Item = &ProvisionedDevice> {
        self.entries.iter().filter_map(|e| e.device.as_ref())
    }

    /// Binding latency over successful enrollments.
    pub fn binding_stats(&self) -> Option<MeanSd> {
        MeanSd::of(&self.entries.iter().filter(|e| e.is_ok()).filter_map(|e| e.binding.map(ms)).collect::<Vec<_>>())
    }

    /// Issuance latency over successful enrollments.
    pub fn issuance_stats(&self) -> Option<MeanSd> {
        MeanSd::of(&self.entries.iter().filter(|e| e.is_ok()).filter_map(|e| e.issuance.map(ms)).collect::<Vec<_>>())
    }

    /// `uuid,outcome,binding_ms,issuance_ms`, one row per device in input order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("uuid,outcome,binding_ms,issuance_ms\n");
        let cell = |d: Option<Duration>| d.map(|d| format!("{:.3}", ms(d))).unwrap_or_default();
        for e in &self.entries {
            let uuid = e.uuid.map(|u| u.to_string()).unwrap_or_default();
            writeln!(out, "{uuid},{},{},{}", e.outcome, cell(e.binding), cell(e.issuance)).unwrap();
        }
        out
    }

    /// Human summary, e.g. `binding 0.41±0.10 ms, issuance 35.2±6.3 ms (100/100 ok)`.
    pub fn summary_line(&self) -> String {
        let fmt = |s: Option<MeanSd>| s.map(|s| format!("{:.2}±{:.2} ms", s.mean_ms, s.sd_ms)).unwrap_or_else(|| "n/a".into());
        format!(
            "binding {}, issuance {} ({}/{} ok)",
            fmt(self.binding_stats()),
            fmt(self.issuance_stats()),
            self.successes(),
            self.entries.len()
        )
    }
}
