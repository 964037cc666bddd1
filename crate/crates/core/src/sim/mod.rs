//! Direct versus cloud-mediated latency in a smart-city deployment.

pub mod city;
pub mod stats;
pub mod weibull;

use thiserror::Error;

pub use city::{run_smart_city, run_smart_city_traced, LatencySample, Mode, SimConfig, SimReport, TracePoint};
pub use stats::{histogram, summarize, Histogram, Summary};
pub use weibull::{sample_weibull, WeibullParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("uniform variate {0} outside the open interval (0, 1)")]
    DomainError(f64),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("no samples to summarize")]
    EmptyInput,
}
