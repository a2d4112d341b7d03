use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

use super::{hash_features, FeatureVector, Scorer};
use crate::corpus::TextRecord;
use crate::error::{Error, Result};
use crate::io_util::{atomic_write, fnv1a64, put_f64s, read_bytes, ByteReader};

pub const DEFAULT_D_EMB: usize = 64;

const MAGIC: &[u8; 4] = b"TSBM";
const VERSION: u8 = 1;

/// Linear bag-of-hashed-tokens encoder: `e = Wᵀ·f / max(1, Σf)`.
///
/// `weights` is row-major `d_feat × d_emb`; row `i` is the embedding of
/// feature bucket `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    d_feat: usize,
    d_emb: usize,
    seed: u64,
    weights: Vec<f64>,
}

impl StudentModel {
    /// Gaussian initialization, `N(0, init_std²)` per entry.
    pub fn new(d_feat: usize, d_emb: usize, init_std: f64, seed: u64) -> Result<Self> {
        if d_feat == 0 || d_emb == 0 {
            return Err(Error::invalid("d_feat and d_emb must be positive"));
        }
        let normal = Normal::new(0.0, init_std).map_err(|e| Error::invalid(format!("init_std: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..d_feat * d_emb).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self {
            d_feat,
            d_emb,
            seed,
            weights,
        })
    }

    pub fn zeros(d_feat: usize, d_emb: usize) -> Self {
        Self {
            d_feat,
            d_emb,
            seed: 0,
            weights: vec![0.0; d_feat * d_emb],
        }
    }

    pub fn from_weights(d_feat: usize, d_emb: usize, seed: u64, weights: Vec<f64>) -> Result<Self> {
        if d_feat == 0 || d_emb == 0 {
            return Err(Error::invalid("d_feat and d_emb must be positive"));
        }
        if weights.len() != d_feat * d_emb {
            return Err(Error::DimensionMismatch {
                expected: d_feat * d_emb,
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("model weights"));
        }
        Ok(Self {
            d_feat,
            d_emb,
            seed,
            weights,
        })
    }

    pub fn d_feat(&self) -> usize {
        self.d_feat
    }

    pub fn d_emb(&self) -> usize {
        self.d_emb
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.d_emb..(i + 1) * self.d_emb]
    }

    pub fn features<S: AsRef<str>>(&self, tokens: &[S]) -> FeatureVector {
        hash_features(tokens, self.d_feat)
    }

    /// Encodes a feature vector into `out` (length `d_emb`).
    pub fn encode_into(&self, features: &FeatureVector, out: &mut [f64]) -> Result<()> {
        if features.d_feat() != self.d_feat {
            return Err(Error::DimensionMismatch {
                expected: self.d_feat,
                actual: features.d_feat(),
            });
        }
        if out.len() != self.d_emb {
            return Err(Error::DimensionMismatch {
                expected: self.d_emb,
                actual: out.len(),
            });
        }
        out.fill(0.0);
        for (i, w) in features.normalized() {
            if i >= self.d_feat {
                return Err(Error::invalid(format!("feature index {i} out of range")));
            }
            for (o, r) in out.iter_mut().zip(self.row(i)) {
                *o += w * r;
            }
        }
        Ok(())
    }

    pub fn encode(&self, features: &FeatureVector) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d_emb];
        self.encode_into(features, &mut out)?;
        Ok(out)
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f64>> {
        self.encode(&self.features(tokens))
    }

    /// Binary checkpoint: magic `TSBM`, version byte, then `d_feat`, `d_emb`,
    /// `seed` as u64 LE and the row-major weights as f64 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(29 + self.weights.len() * 8);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.d_feat as u64).to_le_bytes());
        out.extend_from_slice(&(self.d_emb as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        put_f64s(&mut out, &self.weights);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "checkpoint");
        r.expect_magic(MAGIC, VERSION)?;
        let d_feat = r.len()?;
        let d_emb = r.len()?;
        let seed = r.u64()?;
        let n = d_feat
            .checked_mul(d_emb)
            .ok_or_else(|| Error::Format("checkpoint: shape overflow".into()))?;
        let weights = r.f64s(n)?;
        r.finish()?;
        Self::from_weights(d_feat, d_emb, seed, weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        atomic_write(path, |w| w.write_all(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?)
    }

    /// FNV-1a over the checkpoint bytes; identifies the model an index was
    /// built with.
    pub fn checksum(&self) -> u64 {
        fnv1a64(&self.to_bytes())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dot-product relevance score between an encoded query and passage.
pub fn student_score(q_vec: &[f64], p_vec: &[f64]) -> Result<f64> {
    if q_vec.len() != p_vec.len() {
        return Err(Error::DimensionMismatch {
            expected: q_vec.len(),
            actual: p_vec.len(),
        });
    }
    Ok(dot(q_vec, p_vec))
}

impl Scorer for StudentModel {
    fn score(&self, query: &TextRecord, passage: &TextRecord) -> Result<f64> {
        let q = self.encode_tokens(&query.tokens)?;
        let p = self.encode_tokens(&passage.tokens)?;
        student_score(&q, &p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn zero_model_encodes_zero() {
        let m = StudentModel::zeros(16, 4);
        assert_eq!(m.encode_tokens(&["a", "b"]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn one_hot_returns_row() {
        let m = StudentModel::new(8, 3, 1.0, 5).unwrap();
        let f = FeatureVector::from_counts(8, [(6, 1)]);
        assert_eq!(m.encode(&f).unwrap(), m.row(6));
    }

    #[test]
    fn doubling_counts_is_invariant() {
        let m = StudentModel::new(32, 5, 1.0, 9).unwrap();
        let f1 = FeatureVector::from_counts(32, [(1, 1), (4, 3), (30, 2)]);
        let f2 = FeatureVector::from_counts(32, [(1, 2), (4, 6), (30, 4)]);
        let (a, b) = (m.encode(&f1).unwrap(), m.encode(&f2).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = StudentModel::zeros(16, 4);
        assert!(matches!(
            m.encode(&hash_features(&["a"], 8)),
            Err(Error::DimensionMismatch {
                expected: 16,
                actual: 8
            })
        ));
        assert!(student_score(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn score_examples() {
        assert_eq!(student_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(student_score(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert_eq!(
            student_score(&[1.5, -2.0], &[3.0, 4.0]).unwrap(),
            student_score(&[3.0, 4.0], &[1.5, -2.0]).unwrap()
        );
    }

    #[test]
    fn encoding_is_linear_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (d_feat, d_emb) = (64, 7);
            let m1 = StudentModel::new(d_feat, d_emb, 1.0, rng.random()).unwrap();
            let m2 = StudentModel::new(d_feat, d_emb, 1.0, rng.random()).unwrap();
            let (a, b): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let combo: Vec<f64> = m1
                .weights()
                .iter()
                .zip(m2.weights())
                .map(|(x, y)| a * x + b * y)
                .collect();
            let mc = StudentModel::from_weights(d_feat, d_emb, 0, combo).unwrap();
            let f = FeatureVector::from_counts(
                d_feat,
                (0..5).map(|_| (rng.random_range(0..d_feat), rng.random_range(1..4))),
            );
            let (e1, e2, ec) = (m1.encode(&f).unwrap(), m2.encode(&f).unwrap(), mc.encode(&f).unwrap());
            for i in 0..d_emb {
                assert!((ec[i] - (a * e1[i] + b * e2[i])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_and_rejects_garbage() {
        let m = StudentModel::new(12, 3, 0.5, 77).unwrap();
        let back = StudentModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.seed(), 77);

        let mut bytes = m.to_bytes();
        bytes[4] = 9;
        assert!(StudentModel::from_bytes(&bytes).is_err());
        assert!(StudentModel::from_bytes(&m.to_bytes()[..40]).is_err());
    }
}
