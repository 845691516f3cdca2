use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bilevel::log::csv_error;
use crate::error::Result;

/// One CSV row. Aggregate rows carry `mean` or `std` in the seed column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub method: String,
    pub seed: String,
    pub metric: String,
    pub value: f64,
    pub config_digest: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, dataset: &str, method: &str, seed: u64, metric: &str, value: f64, digest: &str) {
        self.rows.push(MetricRow {
            dataset: dataset.into(),
            method: method.into(),
            seed: seed.to_string(),
            metric: metric.into(),
            value,
            config_digest: digest.into(),
        });
    }

    /// Appends a `mean` and a `std` row for every (dataset, method, metric)
    /// group of per-seed rows, in first-appearance order.
    pub fn add_aggregates(&mut self) {
        let mut keys: Vec<(String, String, String, String)> = Vec::new();
        for r in &self.rows {
            if r.seed == "mean" || r.seed == "std" {
                continue;
            }
            let k = (r.dataset.clone(), r.method.clone(), r.metric.clone(), r.config_digest.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let mut extra = Vec::new();
        for (dataset, method, metric, digest) in keys {
            let vals: Vec<f64> = self
                .rows
                .iter()
                .filter(|r| {
                    r.dataset == dataset
                        && r.method == method
                        && r.metric == metric
                        && r.seed != "mean"
                        && r.seed != "std"
                })
                .map(|r| r.value)
                .collect();
            let (mean, std) = mean_std(&vals);
            for (tag, value) in [("mean", mean), ("std", std)] {
                extra.push(MetricRow {
                    dataset: dataset.clone(),
                    method: method.clone(),
                    seed: tag.into(),
                    metric: metric.clone(),
                    value,
                    config_digest: digest.clone(),
                });
            }
        }
        self.rows.extend(extra);
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| crate::error::Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<MetricRow>, _>>()
            .map_err(|e| csv_error(path, e))?;
        Ok(MetricReport { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn aggregates_follow_seed_rows() {
        let mut r = MetricReport::new();
        for (s, v) in [(1, 0.5), (2, 0.7), (3, 0.9)] {
            r.push("d", "rage", s, "auc", v, "x");
            r.push("d", "rage", s, "ap", 1.0, "x");
        }
        r.add_aggregates();
        assert_eq!(r.rows.len(), 3 * 2 + 2 * 2);
        let mean = r.rows.iter().find(|x| x.seed == "mean" && x.metric == "auc").unwrap();
        assert!((mean.value - 0.7).abs() < 1e-12);
    }
}
