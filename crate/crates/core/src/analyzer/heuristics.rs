use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::stats::{ratio_to_f64, GroupStats, MetricStats};
use crate::trace_model::ExecutionContext;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicConfig {
    pub cv_threshold: f64,
    pub max_min_ratio: f64,
    pub max_median_ratio: f64,
    pub abs_latency_warn_ns: u64,
    pub abs_anr_ns: u64,
    pub min_samples: u64,
    pub incomplete_warn_fraction: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig {
            cv_threshold: 1.0,
            max_min_ratio: 10.0,
            max_median_ratio: 5.0,
            abs_latency_warn_ns: 200_000_000,
            abs_anr_ns: 10_000_000_000,
            min_samples: 3,
            incomplete_warn_fraction: 0.5,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {0}: expected key = value")]
    Syntax(usize),
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`")]
    InvalidValue { line: usize, key: String },
    #[error("{0}")]
    Invalid(&'static str),
}

impl HeuristicConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            self.cv_threshold,
            self.max_min_ratio,
            self.max_median_ratio,
            self.incomplete_warn_fraction,
        ];
        if positive.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(ConfigError::Invalid(
                "ratio thresholds must be positive and finite",
            ));
        }
        if self.abs_latency_warn_ns == 0 || self.abs_anr_ns == 0 {
            return Err(ConfigError::Invalid("absolute thresholds must be positive"));
        }
        if self.min_samples < 2 {
            return Err(ConfigError::Invalid("min_samples must be at least 2"));
        }
        Ok(())
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are ignored;
    /// missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = HeuristicConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax(line))?;
            let (key, value) = (key.trim(), value.trim());
            let invalid = || ConfigError::InvalidValue {
                line,
                key: key.to_string(),
            };
            let float = || value.parse::<f64>().map_err(|_| invalid());
            let int = || value.replace('_', "").parse::<u64>().map_err(|_| invalid());
            match key {
                "cv_threshold" => cfg.cv_threshold = float()?,
                "max_min_ratio" => cfg.max_min_ratio = float()?,
                "max_median_ratio" => cfg.max_median_ratio = float()?,
                "abs_latency_warn_ns" => cfg.abs_latency_warn_ns = int()?,
                "abs_anr_ns" => cfg.abs_anr_ns = int()?,
                "min_samples" => cfg.min_samples = int()?,
                "incomplete_warn_fraction" => cfg.incomplete_warn_fraction = float()?,
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Queuing,
    Latency,
    Incomplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Heuristic {
    HighVariance,
    MaxMinSpread,
    MaxMedianSpread,
    AbsoluteLatency,
    AnrScale,
    IncompleteFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub observed: f64,
    pub threshold: f64,
    pub stats: Option<MetricStats>,
    pub n_complete: u64,
    pub n_incomplete: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub context: ExecutionContext,
    pub metric: Metric,
    pub heuristic: Heuristic,
    /// Observed value divided by the threshold it exceeded.
    pub score: f64,
    pub evidence: Evidence,
}

pub fn detect_anomalies(stats: &GroupStats, cfg: &HeuristicConfig) -> Vec<Warning> {
    let mut out = Vec::new();
    let mut fire = |metric, heuristic, observed: f64, threshold: f64, m: Option<&MetricStats>| {
        out.push(Warning {
            context: stats.context.clone(),
            metric,
            heuristic,
            score: observed / threshold,
            evidence: Evidence {
                observed,
                threshold,
                stats: m.cloned(),
                n_complete: stats.n_complete,
                n_incomplete: stats.n_incomplete,
            },
        });
    };

    let enough = stats.n_complete >= cfg.min_samples;
    for (metric, m) in [
        (Metric::Queuing, &stats.queuing),
        (Metric::Latency, &stats.latency),
    ] {
        let Some(m) = m else { continue };
        if enough {
            if let Some(cv) = m.cv {
                if cv > cfg.cv_threshold {
                    fire(
                        metric,
                        Heuristic::HighVariance,
                        cv,
                        cfg.cv_threshold,
                        Some(m),
                    );
                }
            }
            let spread = ratio_to_f64(m.max.into(), m.min.max(1).into());
            if spread > cfg.max_min_ratio {
                fire(
                    metric,
                    Heuristic::MaxMinSpread,
                    spread,
                    cfg.max_min_ratio,
                    Some(m),
                );
            }
            let spread = ratio_to_f64(m.max.into(), m.median.max(1).into());
            if spread > cfg.max_median_ratio {
                fire(
                    metric,
                    Heuristic::MaxMedianSpread,
                    spread,
                    cfg.max_median_ratio,
                    Some(m),
                );
            }
        }
        if metric == Metric::Latency {
            for (heuristic, limit) in [
                (Heuristic::AbsoluteLatency, cfg.abs_latency_warn_ns),
                (Heuristic::AnrScale, cfg.abs_anr_ns),
            ] {
                if m.max > limit {
                    fire(metric, heuristic, m.max as f64, limit as f64, Some(m));
                }
            }
        }
    }

    let total = stats.n_complete + stats.n_incomplete;
    if total > 0 {
        let fraction = ratio_to_f64(stats.n_incomplete.into(), total.into());
        if fraction > cfg.incomplete_warn_fraction {
            fire(
                Metric::Incomplete,
                Heuristic::IncompleteFraction,
                fraction,
                cfg.incomplete_warn_fraction,
                None,
            );
        }
    }
    out
}

/// Largest warning score, or 0 without warnings.
pub fn suspiciousness(warnings: &[Warning]) -> f64 {
    warnings.iter().map(|w| w.score).fold(0.0, f64::max)
}
