use std::path::Path;
use std::time::Instant;

use crate::corpus::TextStore;
use crate::encoder::StudentModel;
use crate::error::{Error, Result};
use crate::io_util::atomic_write;

use super::DenseIndex;

/// Nearest-rank percentile: the smallest value with at least `p`% of the
/// sample at or below it.
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty sample"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::invalid(format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(sorted.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseStats {
    pub mean_ms: f64,
    pub p99_ms: f64,
}

impl PhaseStats {
    fn from_samples(samples: &[f64]) -> Result<Self> {
        Ok(Self {
            mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
            p99_ms: nearest_rank_percentile(samples, 99.0)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub batch_size: usize,
    pub k: usize,
    pub passages: usize,
    pub repetitions: usize,
    pub encode: PhaseStats,
    pub retrieve: PhaseStats,
    pub total: PhaseStats,
}

/// Times query encoding and retrieval for `repetitions` batches of
/// `batch_size` queries, cycling through the query set.
pub fn latency_report(
    model: &StudentModel,
    index: &DenseIndex,
    queries: &TextStore,
    k: usize,
    batch_size: usize,
    repetitions: usize,
) -> Result<LatencyReport> {
    if queries.is_empty() {
        return Err(Error::invalid("latency report needs at least one query"));
    }
    if batch_size == 0 || repetitions == 0 {
        return Err(Error::invalid("batch size and repetitions must be positive"));
    }
    if repetitions < 100 {
        log::warn!("{repetitions} repetitions give an unstable p99");
    }
    let records = queries.records();
    let mut encode = Vec::with_capacity(repetitions);
    let mut retrieve = Vec::with_capacity(repetitions);
    let mut total = Vec::with_capacity(repetitions);
    for rep in 0..repetitions {
        let batch: Vec<_> = (0..batch_size)
            .map(|i| &records[(rep * batch_size + i) % records.len()])
            .collect();
        let t0 = Instant::now();
        let vectors = batch
            .iter()
            .map(|q| model.encode_tokens(&q.tokens))
            .collect::<Result<Vec<_>>>()?;
        let t1 = Instant::now();
        let hits = if batch_size == 1 {
            vec![index.search(&vectors[0], k)?]
        } else {
            index.batch_search(&vectors, k)?
        };
        let t2 = Instant::now();
        std::hint::black_box(hits);
        encode.push((t1 - t0).as_secs_f64() * 1e3);
        retrieve.push((t2 - t1).as_secs_f64() * 1e3);
        total.push((t2 - t0).as_secs_f64() * 1e3);
    }
    Ok(LatencyReport {
        batch_size,
        k,
        passages: index.len(),
        repetitions,
        encode: PhaseStats::from_samples(&encode)?,
        retrieve: PhaseStats::from_samples(&retrieve)?,
        total: PhaseStats::from_samples(&total)?,
    })
}

/// One row per report: batch size, then average and p99 per phase.
pub fn write_latency_tsv(reports: &[LatencyReport], path: &Path) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(
            w,
            "batch_size\tk\tpassages\tencode_avg_ms\tencode_p99_ms\tretrieve_avg_ms\tretrieve_p99_ms\ttotal_avg_ms\ttotal_p99_ms"
        )?;
        for r in reports {
            writeln!(
                w,
                "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                r.batch_size,
                r.k,
                r.passages,
                r.encode.mean_ms,
                r.encode.p99_ms,
                r.retrieve.mean_ms,
                r.retrieve.p99_ms,
                r.total.mean_ms,
                r.total.p99_ms
            )?;
        }
        Ok(())
    })
}
