use std::fmt::Write as _;
use std::path::Path;

use super::MetricReport;
use crate::error::{Error, Result};
use crate::io_util::atomic_write;

/// Aggregate metrics of several independently seeded instances with
/// their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub metrics: Vec<String>,
    pub instances: Vec<(String, Vec<f64>)>,
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

impl RobustnessReport {
    /// Instance rows, then `Avg.` and `StdDev` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("instance");
        for m in &self.metrics {
            let _ = write!(out, "\t{m}");
        }
        out.push('\n');
        let rows = self
            .instances
            .iter()
            .map(|(l, v)| (l.as_str(), v))
            .chain([("Avg.", &self.mean), ("StdDev", &self.stddev)]);
        for (label, values) in rows {
            out.push_str(label);
            for v in values {
                let _ = write!(out, "\t{v:.4}");
            }
            out.push('\n');
        }
        out
    }
}

/// Instance labels follow A, B, C, ... in input order. Every instance must
/// report the same metrics in the same order.
pub fn robustness_report(instances: &[Vec<MetricReport>]) -> Result<RobustnessReport> {
    if instances.len() < 2 {
        return Err(Error::invalid("robustness report needs at least two instances"));
    }
    let metrics: Vec<String> = instances[0].iter().map(|r| r.name().to_owned()).collect();
    for inst in instances {
        if inst
            .iter()
            .map(MetricReport::name)
            .ne(metrics.iter().map(String::as_str))
        {
            return Err(Error::invalid("instances report different metrics"));
        }
    }
    let rows: Vec<(String, Vec<f64>)> = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| (instance_label(i), inst.iter().map(MetricReport::mean).collect()))
        .collect();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..metrics.len())
        .map(|m| rows.iter().map(|(_, v)| v[m]).sum::<f64>() / n)
        .collect();
    let stddev = (0..metrics.len())
        .map(|m| (rows.iter().map(|(_, v)| (v[m] - mean[m]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
        .collect();
    Ok(RobustnessReport {
        metrics,
        instances: rows,
        mean,
        stddev,
    })
}

fn instance_label(i: usize) -> String {
    if i < 26 {
        char::from(b'A' + i as u8).to_string()
    } else {
        format!("I{}", i + 1)
    }
}

pub fn write_robustness_tsv(report: &RobustnessReport, path: &Path) -> Result<()> {
    let text = report.to_tsv();
    atomic_write(path, |w| w.write_all(text.as_bytes()))
}
