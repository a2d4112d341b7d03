use std::path::Path;

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::MetricReport;
use crate::error::{Error, Result};
use crate::io_util::atomic_write;

/// Two-sided paired t-test on per-query differences `a − b`.
///
/// All-zero differences give 1.0. Constant nonzero differences have zero
/// variance and give 0.0.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("paired t-test needs at least two pairs"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("t-test input"));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(if mean == 0.0 { 1.0 } else { 0.0 });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

/// Pairwise p-values between systems over the queries both evaluated.
pub fn write_significance_tsv(systems: &[(&str, &MetricReport)], path: &Path) -> Result<()> {
    let mut matrix = vec![vec![1.0; systems.len()]; systems.len()];
    for i in 0..systems.len() {
        for j in i + 1..systems.len() {
            let (a, b): (Vec<f64>, Vec<f64>) = systems[i]
                .1
                .per_query()
                .iter()
                .filter_map(|(q, &va)| systems[j].1.get(q).map(|vb| (va, vb)))
                .unzip();
            let p = paired_t_test(&a, &b)?;
            matrix[i][j] = p;
            matrix[j][i] = p;
        }
    }
    atomic_write(path, |w| {
        write!(w, "system")?;
        for (name, _) in systems {
            write!(w, "\t{name}")?;
        }
        writeln!(w)?;
        for ((name, _), row) in systems.iter().zip(&matrix) {
            write!(w, "{name}")?;
            for p in row {
                write!(w, "\t{p:.6}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}
