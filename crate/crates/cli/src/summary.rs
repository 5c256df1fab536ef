//! Final-summary JSON: per-metric mean and standard deviation over seeds.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// JSON schema of [`Summary`], shipped with the binary.
pub const SCHEMA: &str = include_str!("../schema/summary.schema.json");

/// Metrics of one seed; a metric may be undefined (e.g. an optimal policy
/// that was never reached).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub values: BTreeMap<String, Option<f64>>,
    pub aborted: Option<String>,
}

impl SeedMetrics {
    pub fn new(seed: u64) -> Self {
        SeedMetrics {
            seed,
            values: BTreeMap::new(),
            aborted: None,
        }
    }

    /// Record a metric; non-finite values are stored as undefined.
    pub fn set(&mut self, name: &str, v: Option<f64>) {
        self.values.insert(name.to_string(), v.filter(|x| x.is_finite()));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied().flatten()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// mean over seeds where the metric is defined
    pub mean: Option<f64>,
    /// sample standard deviation (n - 1); 0 for a single defined value
    pub std: Option<f64>,
    /// number of seeds where the metric is defined
    pub count: usize,
    /// per-seed values in seed order
    pub values: Vec<Option<f64>>,
}

impl MetricSummary {
    pub fn of(values: Vec<Option<f64>>) -> Self {
        let xs: Vec<f64> = values.iter().flatten().copied().collect();
        let n = xs.len();
        let (mean, std) = if n == 0 {
            (None, None)
        } else {
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = if n > 1 {
                xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            (Some(mean), Some(var.sqrt()))
        };
        MetricSummary {
            mean,
            std,
            count: n,
            values,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub command: String,
    pub task: String,
    pub scale: f64,
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, MetricSummary>,
    /// seeds stopped early, with the reason
    pub aborted: BTreeMap<String, String>,
    /// the effective (scaled) configuration
    pub config: serde_json::Value,
}

impl Summary {
    pub fn build(command: &str, task: &str, scale: f64, config: serde_json::Value, seeds: &[SeedMetrics]) -> Self {
        let mut names: Vec<&String> = seeds.iter().flat_map(|s| s.values.keys()).collect();
        names.sort();
        names.dedup();
        let metrics = names
            .into_iter()
            .map(|n| (n.clone(), MetricSummary::of(seeds.iter().map(|s| s.get(n)).collect())))
            .collect();
        let aborted = seeds
            .iter()
            .filter_map(|s| s.aborted.clone().map(|r| (s.seed.to_string(), r)))
            .collect();
        Summary {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            task: task.to_string(),
            scale,
            seeds: seeds.iter().map(|s| s.seed).collect(),
            metrics,
            aborted,
            config,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let s: Summary = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "{}: schema_version {} is not {SCHEMA_VERSION}",
                path.display(),
                s.schema_version
            )));
        }
        Ok(s)
    }
}

/// Markdown table of `mean ± std` per metric, one column per summary.
pub fn report(summaries: &[(String, Summary)]) -> String {
    let mut names: Vec<&String> = summaries.iter().flat_map(|(_, s)| s.metrics.keys()).collect();
    names.sort();
    names.dedup();
    let mut out = String::from("| metric |");
    for (label, _) in summaries {
        out.push_str(&format!(" {label} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(summaries.len()));
    out.push('\n');
    for n in names {
        out.push_str(&format!("| {n} |"));
        for (_, s) in summaries {
            let cell = match s.metrics.get(n) {
                Some(MetricSummary {
                    mean: Some(m),
                    std: Some(sd),
                    count,
                    values,
                }) if *count < values.len() => format!(" {m:.4} ± {sd:.4} ({count}/{}) |", values.len()),
                Some(MetricSummary {
                    mean: Some(m),
                    std: Some(sd),
                    ..
                }) => format!(" {m:.4} ± {sd:.4} |"),
                _ => " n/a |".to_string(),
            };
            out.push_str(&cell);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_sample_std() {
        let m = MetricSummary::of(vec![Some(1.0), Some(2.0), Some(3.0)]);
        assert_eq!(m.mean, Some(2.0));
        assert_eq!(m.std, Some(1.0));
        let m = MetricSummary::of(vec![None, Some(5.0)]);
        assert_eq!((m.mean, m.std, m.count), (Some(5.0), Some(0.0), 1));
        assert_eq!(MetricSummary::of(vec![None]).mean, None);
    }

    #[test]
    fn non_finite_is_undefined() {
        let mut s = SeedMetrics::new(0);
        s.set("x", Some(f64::NAN));
        assert_eq!(s.get("x"), None);
    }
}
