use serde::{Deserialize, Serialize};

use crate::trace_model::{ExecutionContext, Mechanism, TaskRecord};

/// Summary of one duration metric over the complete records of a group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    /// Population variance, ns².
    pub variance: f64,
    /// Lower middle element for even counts.
    pub median: u64,
    pub min: u64,
    pub max: u64,
    /// Coefficient of variation; absent when the mean is zero.
    pub cv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub context: ExecutionContext,
    pub mechanism: Mechanism,
    /// Every record in the group.
    pub n: u64,
    pub n_complete: u64,
    pub n_incomplete: u64,
    pub n_cancelled: u64,
    pub queuing: Option<MetricStats>,
    pub latency: Option<MetricStats>,
}

/// `p / q` rounded to the nearest `f64`, ties to even.
pub fn ratio_to_f64(p: u128, q: u128) -> f64 {
    assert!(q != 0, "ratio_to_f64: zero denominator");
    if p == 0 {
        return 0.0;
    }
    const LOW: u128 = 1 << 55;
    const HIGH: u128 = 1 << 56;
    let mut m = p / q;
    let mut rem = p % q;
    let mut exp: i32 = 0;
    let mut sticky = false;
    if m >= HIGH {
        while m >= HIGH {
            sticky |= m & 1 == 1;
            m >>= 1;
            exp += 1;
        }
        sticky |= rem != 0;
    } else {
        // long division, one bit at a time; `2 * rem` may not fit in u128
        while m < LOW {
            let bit = rem >= q - rem;
            rem = if bit { rem - (q - rem) } else { rem << 1 };
            m = m << 1 | bit as u128;
            exp -= 1;
        }
        sticky = rem != 0;
    }
    // 56 significant bits: 53 kept, 3 for rounding
    let low = m & 7;
    let mut mant = m >> 3;
    exp += 3;
    if low > 4 || (low == 4 && (sticky || mant & 1 == 1)) {
        mant += 1;
    }
    mant as f64 * 2f64.powi(exp)
}

fn metric(mut values: Vec<u64>) -> Option<MetricStats> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    let n = values.len() as u128;
    let sum: u128 = values.iter().map(|&v| v as u128).sum();
    let sum_sq = values
        .iter()
        .try_fold(0u128, |acc, &v| acc.checked_add((v as u128) * (v as u128)));
    let spread = sum_sq
        .and_then(|sq| sq.checked_mul(n))
        .and_then(|nsq| sum.checked_mul(sum).map(|s2| nsq - s2));
    let (variance, cv) = match spread.zip(n.checked_mul(n)) {
        Some((spread, n2)) => {
            let cv = (sum > 0).then(|| ratio_to_f64(spread, sum * sum).sqrt());
            (ratio_to_f64(spread, n2), cv)
        }
        None => {
            // sums beyond 128 bits; fall back to floating point
            let mean = sum as f64 / n as f64;
            let var = values
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / n as f64;
            (var, (mean > 0.0).then(|| var.sqrt() / mean))
        }
    };
    Some(MetricStats {
        mean: ratio_to_f64(sum, n),
        variance,
        median: values[(values.len() - 1) / 2],
        min: values[0],
        max: values[values.len() - 1],
        cv,
    })
}

/// Statistics over the complete records of a group; cancelled and
/// unfinished records are only counted.
pub fn compute_stats(group: &[TaskRecord]) -> GroupStats {
    assert!(!group.is_empty(), "compute_stats: empty group");
    let complete: Vec<&TaskRecord> = group.iter().filter(|r| r.is_complete()).collect();
    let n_cancelled = group.iter().filter(|r| r.cancelled).count() as u64;
    let n_incomplete = group
        .iter()
        .filter(|r| !r.is_complete() && !r.cancelled)
        .count() as u64;
    GroupStats {
        context: group[0].context.clone(),
        mechanism: group[0].mechanism,
        n: group.len() as u64,
        n_complete: complete.len() as u64,
        n_incomplete,
        n_cancelled,
        queuing: metric(complete.iter().filter_map(|r| r.queuing_time()).collect()),
        latency: metric(complete.iter().filter_map(|r| r.latency()).collect()),
    }
}
