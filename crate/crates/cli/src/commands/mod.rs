pub mod bandit;
pub mod design;
pub mod pipeline;
pub mod report;
pub mod sync;

use replaylab_core::{Retention, SamplingStrategy};

use crate::config::{Config, ConfigError};

pub(crate) fn strategy(cfg: &Config) -> Result<SamplingStrategy, ConfigError> {
    let v = cfg.str("strategy");
    SamplingStrategy::from_name(v)
        .ok_or_else(|| cfg.invalid("strategy", format!("unknown sampling strategy {v:?}")))
}

/// `retention = fifo | positive`, the latter with `delta`.
pub(crate) fn retention(cfg: &Config) -> Result<Retention, ConfigError> {
    match cfg.choice("retention", &["fifo", "positive"])? {
        "fifo" => Ok(Retention::PlainFifo),
        _ => Ok(Retention::PositiveBias {
            delta: cfg.f64("delta")?,
        }),
    }
}
