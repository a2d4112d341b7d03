use crate::io_util::fnv1a64;

pub const DEFAULT_D_FEAT: usize = 4096;

/// Sparse bag of hashed tokens: `(feature index, count)` sorted by index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector {
    d_feat: usize,
    entries: Vec<(u32, u32)>,
    total: u32,
}

impl FeatureVector {
    pub fn d_feat(&self) -> usize {
        self.d_feat
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    /// Sum of all counts.
    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn count(&self, index: usize) -> u32 {
        self.entries
            .binary_search_by_key(&(index as u32), |&(i, _)| i)
            .map(|i| self.entries[i].1)
            .unwrap_or(0)
    }

    /// Builds a vector directly from `(index, count)` pairs. Duplicate
    /// indices are merged; zero counts dropped.
    pub fn from_counts(d_feat: usize, counts: impl IntoIterator<Item = (usize, u32)>) -> Self {
        let mut entries: Vec<(u32, u32)> = counts
            .into_iter()
            .filter(|&(_, c)| c > 0)
            .map(|(i, c)| (i as u32, c))
            .collect();
        entries.sort_unstable();
        let mut merged: Vec<(u32, u32)> = Vec::with_capacity(entries.len());
        for (i, c) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => merged.push((i, c)),
            }
        }
        let total = merged.iter().map(|&(_, c)| c).sum();
        Self {
            d_feat,
            entries: merged,
            total,
        }
    }

    /// Counts divided by `max(1, total)`, as used by the student encoder.
    pub fn normalized(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let norm = f64::from(self.total.max(1));
        self.entries
            .iter()
            .map(move |&(i, c)| (i as usize, f64::from(c) / norm))
    }
}

/// Hashes each token with 64-bit FNV-1a over its UTF-8 bytes and buckets it
/// at `hash mod d_feat`; repeated buckets accumulate counts.
pub fn hash_features<S: AsRef<str>>(tokens: &[S], d_feat: usize) -> FeatureVector {
    assert!(d_feat >= 1, "d_feat must be positive");
    FeatureVector::from_counts(
        d_feat,
        tokens
            .iter()
            .map(|t| ((fnv1a64(t.as_ref().as_bytes()) % d_feat as u64) as usize, 1)),
    )
}
