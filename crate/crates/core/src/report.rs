//! Diagnosis report: ranked group table, execution contexts, testing
//! configurations and per-group histograms.
//!
//! Rows are addressed as `<config>-<context>`, e.g. `0-1` is context 1 of the
//! first configuration.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analyzer::{rank_order, GroupAnalysis, Heuristic, Metric, MetricStats, SessionAnalysis};
use crate::trace_model::Mechanism;

pub const DEFAULT_BINS: usize = 20;
pub const EMPTY_MESSAGE: &str = "no UI-triggered asynchronous tasks observed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bin {
    pub lower_ns: u64,
    pub upper_ns: u64,
    pub count: u64,
}

/// Equal-width bins over `[min, max]`. Bin `i` covers
/// `[min + ceil(i*R/b), min + ceil((i+1)*R/b))` with `R = max - min`; the last
/// bin is closed and holds `max`. With `R = 0` every value lands in the last
/// bin.
pub fn histogram(values: &[u64], bins: usize) -> Vec<Bin> {
    assert!(bins >= 1, "histogram needs at least one bin");
    if values.is_empty() {
        return Vec::new();
    }
    let min = *values.iter().min().unwrap();
    let max = *values.iter().max().unwrap();
    let range = (max - min) as u128;
    let b = bins as u128;
    let lower = |i: u128| min + (i * range).div_ceil(b) as u64;
    let mut out: Vec<Bin> = (0..b)
        .map(|i| Bin {
            lower_ns: lower(i),
            upper_ns: if i + 1 == b { max } else { lower(i + 1) },
            count: 0,
        })
        .collect();
    for &v in values {
        let i = ((v - min) as u128 * b)
            .checked_div(range)
            .map_or(bins - 1, |i| (i as usize).min(bins - 1));
        out[i].count += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEntry {
    pub index: usize,
    pub label: String,
    pub session_id: String,
    pub filtered_out: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub group_ref: String,
    pub frames: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningEntry {
    pub metric: Metric,
    pub heuristic: Heuristic,
    pub score: f64,
    pub observed: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub group_ref: String,
    pub config_index: usize,
    pub context_index: usize,
    pub mechanism: Mechanism,
    pub n: u64,
    pub n_complete: u64,
    pub n_incomplete: u64,
    pub n_cancelled: u64,
    pub queuing: Option<MetricStats>,
    pub latency: Option<MetricStats>,
    pub suspiciousness: f64,
    pub warnings: Vec<WarningEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub group_ref: String,
    pub metric: Metric,
    pub bins: Vec<Bin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub config_entries: Vec<ConfigEntry>,
    pub rows: Vec<Row>,
    pub contexts: Vec<ContextEntry>,
    pub histograms: Vec<Histogram>,
}

fn group_ref(config: usize, context: usize) -> String {
    format!("{config}-{context}")
}

impl DiagnosisReport {
    /// One configuration per analysis, indexed in the given order; rows are
    /// ranked across all of them.
    pub fn build(analyses: &[SessionAnalysis], bins: usize) -> Self {
        let mut config_entries = Vec::new();
        let mut ranked: Vec<(usize, &GroupAnalysis)> = Vec::new();
        for (ci, a) in analyses.iter().enumerate() {
            config_entries.push(ConfigEntry {
                index: ci,
                label: a.config_label.clone(),
                session_id: a.session_id.clone(),
                filtered_out: a.filtered_out,
            });
            ranked.extend(a.groups.iter().map(|g| (ci, g)));
        }
        ranked.sort_by(|(ca, a), (cb, b)| {
            rank_order(a, b).then((ca, a.context_index).cmp(&(cb, b.context_index)))
        });

        let mut contexts: Vec<(usize, usize, ContextEntry)> = Vec::new();
        let mut rows = Vec::new();
        let mut histograms = Vec::new();
        for &(ci, g) in &ranked {
            let r = group_ref(ci, g.context_index);
            let s = &g.stats;
            rows.push(Row {
                group_ref: r.clone(),
                config_index: ci,
                context_index: g.context_index,
                mechanism: s.mechanism,
                n: s.n,
                n_complete: s.n_complete,
                n_incomplete: s.n_incomplete,
                n_cancelled: s.n_cancelled,
                queuing: s.queuing.clone(),
                latency: s.latency.clone(),
                suspiciousness: g.suspiciousness,
                warnings: g
                    .warnings
                    .iter()
                    .map(|w| WarningEntry {
                        metric: w.metric,
                        heuristic: w.heuristic,
                        score: w.score,
                        observed: w.evidence.observed,
                        threshold: w.evidence.threshold,
                    })
                    .collect(),
            });
            contexts.push((
                ci,
                g.context_index,
                ContextEntry {
                    group_ref: r.clone(),
                    frames: s.context.frames().to_vec(),
                },
            ));
            for (metric, values) in [
                (Metric::Queuing, &g.queuing_ns),
                (Metric::Latency, &g.latency_ns),
            ] {
                if !values.is_empty() {
                    histograms.push(Histogram {
                        group_ref: r.clone(),
                        metric,
                        bins: histogram(values, bins),
                    });
                }
            }
        }
        contexts.sort_by_key(|(ci, xi, _)| (*ci, *xi));
        DiagnosisReport {
            config_entries,
            rows,
            contexts: contexts.into_iter().map(|(_, _, c)| c).collect(),
            histograms,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Every `(metric, heuristic)` pair that fired anywhere in the report.
    pub fn fired(&self) -> std::collections::BTreeSet<(Metric, Heuristic)> {
        self.rows
            .iter()
            .flat_map(|r| r.warnings.iter().map(|w| (w.metric, w.heuristic)))
            .collect()
    }
}

/// Duration with an adaptive unit, at most three decimals.
pub fn format_duration(ns: f64) -> String {
    let (value, unit) = if ns < 1e3 {
        (ns, "ns")
    } else if ns < 1e6 {
        (ns / 1e3, "us")
    } else if ns < 1e9 {
        (ns / 1e6, "ms")
    } else {
        (ns / 1e9, "s")
    };
    format!("{}{unit}", trim(value))
}

fn trim(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

pub fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::Queuing => "queuing",
        Metric::Latency => "latency",
        Metric::Incomplete => "incomplete",
    }
}

pub fn heuristic_name(h: Heuristic) -> &'static str {
    match h {
        Heuristic::HighVariance => "high-variance",
        Heuristic::MaxMinSpread => "max-min-spread",
        Heuristic::MaxMedianSpread => "max-median-spread",
        Heuristic::AbsoluteLatency => "absolute-latency",
        Heuristic::AnrScale => "anr-scale",
        Heuristic::IncompleteFraction => "incomplete-fraction",
    }
}

fn stats_line(out: &mut String, name: &str, m: &Option<MetricStats>) {
    let Some(m) = m else {
        writeln!(out, "    {name:<8} -").unwrap();
        return;
    };
    let cv = m.cv.map_or("-".to_string(), trim);
    writeln!(
        out,
        "    {name:<8} mean {}  median {}  min {}  max {}  sd {}  cv {cv}",
        format_duration(m.mean),
        format_duration(m.median as f64),
        format_duration(m.min as f64),
        format_duration(m.max as f64),
        format_duration(m.variance.sqrt()),
    )
    .unwrap();
}

fn observed(w: &WarningEntry) -> (String, String) {
    match w.heuristic {
        Heuristic::AbsoluteLatency | Heuristic::AnrScale => {
            (format_duration(w.observed), format_duration(w.threshold))
        }
        _ => (trim(w.observed), trim(w.threshold)),
    }
}

pub fn render_text(report: &DiagnosisReport) -> String {
    let mut out = String::from("asyncscope diagnosis report\n\n");
    if report.is_empty() {
        writeln!(out, "{EMPTY_MESSAGE}").unwrap();
    } else {
        out.push_str("== statistics (most suspicious first) ==\n");
        for r in &report.rows {
            writeln!(
                out,
                "[{}] {}  n={} complete={} incomplete={} cancelled={}  suspiciousness {}",
                r.group_ref,
                r.mechanism,
                r.n,
                r.n_complete,
                r.n_incomplete,
                r.n_cancelled,
                trim(r.suspiciousness)
            )
            .unwrap();
            stats_line(&mut out, "queuing", &r.queuing);
            stats_line(&mut out, "latency", &r.latency);
            for w in &r.warnings {
                let (obs, thr) = observed(w);
                writeln!(
                    out,
                    "    WARNING {} {}: {obs} > {thr} (score {})",
                    metric_name(w.metric),
                    heuristic_name(w.heuristic),
                    trim(w.score)
                )
                .unwrap();
            }
        }
        out.push_str("\n== execution contexts ==\n");
        for c in &report.contexts {
            writeln!(out, "[{}]", c.group_ref).unwrap();
            for f in &c.frames {
                writeln!(out, "    at {f}").unwrap();
            }
        }
    }
    out.push_str("\n== testing configurations ==\n");
    for c in &report.config_entries {
        writeln!(
            out,
            "[{}] {} (session {}, {} non-UI tasks filtered)",
            c.index, c.label, c.session_id, c.filtered_out
        )
        .unwrap();
    }
    out
}

pub fn render_json(report: &DiagnosisReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn parse_json(text: &str) -> serde_json::Result<DiagnosisReport> {
    serde_json::from_str(text)
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_lower_ns,bin_upper_ns,count\n");
    for b in &h.bins {
        writeln!(out, "{},{},{}", b.lower_ns, b.upper_ns, b.count).unwrap();
    }
    out
}

pub fn histogram_file_name(h: &Histogram) -> String {
    format!("{}_{}.csv", h.group_ref, metric_name(h.metric))
}

/// Writes one CSV per group and metric into `dir`, creating it if needed.
pub fn write_histograms(
    report: &DiagnosisReport,
    dir: impl AsRef<Path>,
) -> io::Result<Vec<String>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for h in &report.histograms {
        let name = histogram_file_name(h);
        std::fs::write(dir.join(&name), histogram_csv(h))?;
        names.push(name);
    }
    Ok(names)
}
