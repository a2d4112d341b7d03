use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use super::{Batch, BatchSampler, BatchSource};
use crate::error::{Error, Result};

/// Batches produced on a background thread and buffered in a bounded queue.
///
/// The producer runs at most `capacity` batches ahead. Dropping the queue
/// disconnects the channel; the producer notices on its next send and
/// exits, and the drop joins it.
pub struct BatchQueue {
    rx: Option<Receiver<Result<Batch>>>,
    handle: Option<JoinHandle<()>>,
    failed: Option<String>,
}

pub fn batch_queue(mut sampler: BatchSampler, capacity: usize) -> Result<BatchQueue> {
    if capacity == 0 {
        return Err(Error::invalid("queue capacity must be at least 1"));
    }
    let (tx, rx) = sync_channel(capacity);
    let handle = std::thread::Builder::new()
        .name("batch-producer".into())
        .spawn(move || loop {
            let batch = sampler.next_batch();
            let failed = batch.is_err();
            if tx.send(batch).is_err() || failed {
                break;
            }
        })
        .map_err(|e| Error::Sampler(format!("failed to start producer: {e}")))?;
    Ok(BatchQueue {
        rx: Some(rx),
        handle: Some(handle),
        failed: None,
    })
}

impl BatchSource for BatchQueue {
    fn next_batch(&mut self) -> Result<Batch> {
        if let Some(msg) = &self.failed {
            return Err(Error::Sampler(format!("producer failed earlier: {msg}")));
        }
        let rx = self.rx.as_ref().expect("receiver lives until drop");
        match rx.recv() {
            Ok(Ok(batch)) => Ok(batch),
            Ok(Err(e)) => {
                self.failed = Some(e.to_string());
                Err(e)
            }
            Err(_) => {
                self.failed = Some("producer exited".into());
                Err(Error::Sampler("producer exited unexpectedly".into()))
            }
        }
    }
}

impl Drop for BatchQueue {
    fn drop(&mut self) {
        drop(self.rx.take());
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{QueryPairs, SamplerConfig, ScoredPair, Strategy, TrainingPool};
    use std::sync::Arc;

    fn sampler(seed: u64, batch_size: usize) -> BatchSampler {
        let pool = TrainingPool::from_queries(
            (0..30)
                .map(|q| QueryPairs {
                    query_id: format!("q{q}"),
                    pairs: (0..4)
                        .map(|i| ScoredPair {
                            pos_id: format!("p{i}"),
                            neg_id: format!("n{i}"),
                            t_pos: 3.0,
                            t_neg: i as f64,
                        })
                        .collect(),
                })
                .collect(),
        )
        .unwrap();
        let config = SamplerConfig {
            strategy: Strategy::Random,
            batch_size,
            seed,
            ..SamplerConfig::default()
        };
        BatchSampler::new(Arc::new(pool), None, config).unwrap()
    }

    #[test]
    fn queued_sequence_matches_single_threaded() {
        for capacity in [1, 3, 16] {
            let mut direct = sampler(42, 4);
            let mut queued = batch_queue(sampler(42, 4), capacity).unwrap();
            for _ in 0..50 {
                assert_eq!(direct.next_batch().unwrap(), queued.next_batch().unwrap());
            }
        }
    }

    #[test]
    fn early_stop_does_not_hang() {
        let mut q = batch_queue(sampler(1, 4), 2).unwrap();
        for _ in 0..5 {
            q.next_batch().unwrap();
        }
        drop(q);
    }

    #[test]
    fn producer_error_is_terminal() {
        // Batch size larger than the pool fails on the first draw.
        let s = sampler(1, 4);
        let mut cfg = s.config().clone();
        cfg.batch_size = 31;
        let bad = BatchSampler::new(Arc::new(s.pool().clone()), None, cfg).unwrap();
        let mut q = batch_queue(bad, 1).unwrap();
        assert!(q.next_batch().is_err());
        assert!(q.next_batch().is_err());
    }

    #[test]
    fn zero_capacity_rejected() {
        assert!(batch_queue(sampler(0, 2), 0).is_err());
    }
}
