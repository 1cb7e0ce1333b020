//! Performance and resource regression detection against an allow-all baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::harness::WorkloadOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Perf,
    Rss,
    Fds,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Perf, Metric::Rss, Metric::Fds];

    fn extract(self, outcome: &WorkloadOutcome) -> Option<f64> {
        match self {
            Metric::Perf => outcome.perf_metric,
            Metric::Rss => Some(outcome.peak_rss as f64),
            Metric::Fds => Some(outcome.peak_fds as f64),
        }
    }
}

/// Sample mean and standard deviation (n - 1 denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl MetricStats {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Some(Self { n, mean, std: var.sqrt() })
    }

    /// Pooled standard deviation of two samples; zero when there are no degrees of freedom.
    pub fn pooled_std(&self, other: &MetricStats) -> f64 {
        let dof = self.n + other.n;
        if dof <= 2 {
            return 0.0;
        }
        let num = (self.n as f64 - 1.0) * self.std.powi(2) + (other.n as f64 - 1.0) * other.std.powi(2);
        (num / (dof - 2) as f64).sqrt()
    }
}

/// Per-metric statistics over a set of successful runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub metrics: BTreeMap<Metric, MetricStats>,
    /// longest successful run, seconds
    pub max_duration: f64,
}

impl BaselineStats {
    pub fn from_outcomes(outcomes: &[WorkloadOutcome]) -> Self {
        let ok: Vec<&WorkloadOutcome> = outcomes.iter().filter(|o| o.success).collect();
        let mut metrics = BTreeMap::new();
        for m in Metric::ALL {
            let samples: Vec<f64> = ok.iter().filter_map(|o| m.extract(o)).collect();
            // a metric emitted by only some runs is unreliable
            if samples.len() == ok.len() {
                if let Some(s) = MetricStats::from_samples(&samples) {
                    metrics.insert(m, s);
                }
            }
        }
        Self {
            metrics,
            max_duration: ok.iter().map(|o| o.duration).fold(0.0, f64::max),
        }
    }
}

/// A metric outside the margin, with its signed relative change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFlag {
    pub metric: Metric,
    pub delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressionCheck {
    pub flags: Vec<RegressionFlag>,
    /// The script printed no metric, so the performance comparison was skipped.
    pub missing_metric: bool,
}

/// Compares probe runs with the baseline.
///
/// A metric is flagged iff its relative change exceeds `margin` and the two
/// means differ by more than twice the pooled standard deviation.
pub fn detect_regressions(baseline: &BaselineStats, probe: &[WorkloadOutcome], margin: f64) -> RegressionCheck {
    let probe_stats = BaselineStats::from_outcomes(probe);
    let mut check = RegressionCheck::default();
    for metric in Metric::ALL {
        let (Some(base), Some(cur)) = (baseline.metrics.get(&metric), probe_stats.metrics.get(&metric)) else {
            if metric == Metric::Perf {
                check.missing_metric = true;
            }
            continue;
        };
        if base.mean == 0.0 {
            continue;
        }
        let diff = cur.mean - base.mean;
        let relative = diff / base.mean.abs();
        if relative.abs() > margin && diff.abs() > 2.0 * base.pooled_std(cur) {
            check.flags.push(RegressionFlag { metric, delta: relative });
        }
    }
    check
}
