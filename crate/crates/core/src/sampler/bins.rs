use super::QueryPairs;

/// A query's pairs split into `h` equal-width teacher-margin ranges.
///
/// Bin `i` covers `[m_min + i·m, m_min + (i+1)·m)`; the last bin is closed
/// at the top so the maximum-margin pair lands in bin `h − 1`. A zero-width
/// span (single pair, or all margins equal) puts everything in bin 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedPairs {
    pub m_min: f64,
    /// Bin width `m`.
    pub width: f64,
    /// Pair indices per bin.
    pub bins: Vec<Vec<usize>>,
    non_empty: Vec<usize>,
}

impl BinnedPairs {
    pub fn h(&self) -> usize {
        self.bins.len()
    }

    /// Bin index for a margin, clamped to `[0, h − 1]`.
    pub fn bin_of(&self, margin: f64) -> usize {
        if self.width <= 0.0 {
            return 0;
        }
        let raw = ((margin - self.m_min) / self.width).floor();
        if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(self.h() - 1)
        }
    }

    /// Indices of bins holding at least one pair.
    pub fn non_empty_bins(&self) -> &[usize] {
        &self.non_empty
    }
}

pub fn compute_margin_bins(query: &QueryPairs, h: usize) -> BinnedPairs {
    assert!(h >= 1, "need at least one bin");
    let margins: Vec<f64> = query.pairs.iter().map(|p| p.margin()).collect();
    let m_min = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let m_max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if margins.len() > 1 && m_max > m_min {
        (m_max - m_min) / h as f64
    } else {
        0.0
    };
    let mut binned = BinnedPairs {
        m_min: if m_min.is_finite() { m_min } else { 0.0 },
        width,
        bins: vec![Vec::new(); h],
        non_empty: Vec::new(),
    };
    for (i, &m) in margins.iter().enumerate() {
        let b = binned.bin_of(m);
        binned.bins[b].push(i);
    }
    binned.non_empty = (0..h).filter(|&b| !binned.bins[b].is_empty()).collect();
    binned
}
