//! Distillation losses over student and teacher scores, each paired with
//! its gradient with respect to the student scores.

use crate::error::{Error, Result};

/// `((s_pos − s_neg) − (t_pos − t_neg))²`.
pub fn margin_mse(s_pos: f64, s_neg: f64, t_pos: f64, t_neg: f64) -> Result<f64> {
    if [s_pos, s_neg, t_pos, t_neg].iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("margin-mse input"));
    }
    let r = (s_pos - s_neg) - (t_pos - t_neg);
    Ok(r * r)
}

/// Scores of every query in a batch against every positive and every
/// negative passage of the batch, row-major `b × b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrices {
    b: usize,
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl ScoreMatrices {
    pub fn new(b: usize, pos: Vec<f64>, neg: Vec<f64>) -> Result<Self> {
        for m in [&pos, &neg] {
            if m.len() != b * b {
                return Err(Error::DimensionMismatch {
                    expected: b * b,
                    actual: m.len(),
                });
            }
        }
        if pos.iter().chain(&neg).any(|x| x.is_nan()) {
            return Err(Error::NonFinite("score matrix"));
        }
        Ok(Self { b, pos, neg })
    }

    pub fn zeros(b: usize) -> Self {
        Self {
            b,
            pos: vec![0.0; b * b],
            neg: vec![0.0; b * b],
        }
    }

    pub fn b(&self) -> usize {
        self.b
    }

    /// Score of query `i` against positive `j`.
    pub fn pos(&self, i: usize, j: usize) -> f64 {
        self.pos[i * self.b + j]
    }

    /// Score of query `i` against negative `j`.
    pub fn neg(&self, i: usize, j: usize) -> f64 {
        self.neg[i * self.b + j]
    }

    pub(crate) fn pos_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.pos[i * self.b + j]
    }

    pub(crate) fn neg_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.neg[i * self.b + j]
    }

    /// Query `i`'s candidate list: every positive, then every negative.
    pub fn list(&self, i: usize) -> Vec<f64> {
        let b = self.b;
        self.pos[i * b..(i + 1) * b]
            .iter()
            .chain(&self.neg[i * b..(i + 1) * b])
            .copied()
            .collect()
    }

    /// Applies the permutation `perm` to queries, positives and negatives
    /// alike.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.b);
        for (i, &pi) in perm.iter().enumerate() {
            for (j, &pj) in perm.iter().enumerate() {
                *out.pos_mut(i, j) = self.pos(pi, pj);
                *out.neg_mut(i, j) = self.neg(pi, pj);
            }
        }
        out
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.b == other.b {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.b,
                actual: other.b,
            })
        }
    }
}

/// Mean Margin-MSE over the batch's own triples (the matrix diagonals)
/// against pairwise teacher scores. Adds `scale · ∂L/∂S` into `grad`.
pub(crate) fn pairwise_term(
    student: &ScoreMatrices,
    teacher: &[(f64, f64)],
    mut grad: Option<(&mut ScoreMatrices, f64)>,
) -> Result<f64> {
    let b = student.b;
    if teacher.len() != b {
        return Err(Error::DimensionMismatch {
            expected: b,
            actual: teacher.len(),
        });
    }
    let mut total = 0.0;
    for (i, &(tp, tn)) in teacher.iter().enumerate() {
        let (sp, sn) = (student.pos(i, i), student.neg(i, i));
        total += margin_mse(sp, sn, tp, tn)?;
        if let Some((g, scale)) = grad.as_mut() {
            let r = (sp - sn) - (tp - tn);
            let d = *scale * 2.0 * r / b as f64;
            *g.pos_mut(i, i) += d;
            *g.neg_mut(i, i) -= d;
        }
    }
    Ok(total / b as f64)
}

/// Mean Margin-MSE over the batch's triples given one pairwise score per
/// triple: `(s_pos, s_neg)` and `(t_pos, t_neg)`.
pub fn pairwise_margin_mse(student: &[(f64, f64)], teacher: &[(f64, f64)]) -> Result<f64> {
    if student.len() != teacher.len() {
        return Err(Error::DimensionMismatch {
            expected: student.len(),
            actual: teacher.len(),
        });
    }
    if student.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = 0.0;
    for (&(sp, sn), &(tp, tn)) in student.iter().zip(teacher) {
        total += margin_mse(sp, sn, tp, tn)?;
    }
    Ok(total / student.len() as f64)
}

/// In-batch Margin-MSE: each query's own positive against every negative
/// and every positive of the batch, normalized by `1 / (2b)`.
///
/// The positive-vs-positive sum includes the query's own positive, a term
/// that is always zero.
pub fn inbatch_margin_mse(student: &ScoreMatrices, teacher: &ScoreMatrices) -> Result<f64> {
    inbatch_margin_mse_term(student, teacher, None)
}

pub(crate) fn inbatch_margin_mse_term(
    student: &ScoreMatrices,
    teacher: &ScoreMatrices,
    mut grad: Option<(&mut ScoreMatrices, f64)>,
) -> Result<f64> {
    student.check_same_shape(teacher)?;
    let b = student.b;
    let norm = 1.0 / (2.0 * b as f64);
    let mut total = 0.0;
    for i in 0..b {
        let (sp, tp) = (student.pos(i, i), teacher.pos(i, i));
        for j in 0..b {
            let r_neg = (sp - student.neg(i, j)) - (tp - teacher.neg(i, j));
            let r_pos = (sp - student.pos(i, j)) - (tp - teacher.pos(i, j));
            total += r_neg * r_neg + r_pos * r_pos;
            if let Some((g, scale)) = grad.as_mut() {
                let dn = *scale * 2.0 * norm * r_neg;
                let dp = *scale * 2.0 * norm * r_pos;
                *g.pos_mut(i, i) += dn + dp;
                *g.neg_mut(i, j) -= dn;
                *g.pos_mut(i, j) -= dp;
            }
        }
    }
    let loss = total * norm;
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite("in-batch loss"))
    }
}

/// `L_pair + α · L_inb`.
pub fn dual_loss(pair_loss: f64, inbatch_loss: f64, alpha: f64) -> Result<f64> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::invalid(format!(
            "alpha must be a finite non-negative number, got {alpha}"
        )));
    }
    Ok(pair_loss + alpha * inbatch_loss)
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    z.iter().map(|x| x - lse).collect()
}

fn check_lists(student: &[f64], teacher: &[f64]) -> Result<()> {
    if student.len() != teacher.len() {
        return Err(Error::DimensionMismatch {
            expected: teacher.len(),
            actual: student.len(),
        });
    }
    if student.len() < 2 {
        return Err(Error::invalid("candidate list needs at least two entries"));
    }
    if student.iter().chain(teacher).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("list scores"));
    }
    Ok(())
}

/// `KL(softmax(teacher) ‖ softmax(student))` for one candidate list.
pub fn kldiv_list_loss(student: &[f64], teacher: &[f64]) -> Result<f64> {
    check_lists(student, teacher)?;
    let (ls, lt) = (log_softmax(student), log_softmax(teacher));
    Ok(lt.iter().zip(&ls).map(|(t, s)| t.exp() * (t - s)).sum::<f64>().max(0.0))
}

/// Cross-entropy of the student's top-one distribution under the
/// teacher's: `−Σ softmax(teacher) · log softmax(student)`.
pub fn listnet_list_loss(student: &[f64], teacher: &[f64]) -> Result<f64> {
    check_lists(student, teacher)?;
    let (ls, lt) = (log_softmax(student), log_softmax(teacher));
    Ok(-lt.iter().zip(&ls).map(|(t, s)| t.exp() * s).sum::<f64>())
}

#[derive(Clone, Copy)]
pub(crate) enum ListKind {
    KlDiv,
    ListNet,
}

/// Mean list loss over the batch's queries; each query ranks all `2b`
/// passages of the batch.
pub(crate) fn inbatch_list_term(
    student: &ScoreMatrices,
    teacher: &ScoreMatrices,
    kind: ListKind,
    mut grad: Option<(&mut ScoreMatrices, f64)>,
) -> Result<f64> {
    student.check_same_shape(teacher)?;
    let b = student.b;
    let mut total = 0.0;
    for i in 0..b {
        let (s, t) = (student.list(i), teacher.list(i));
        total += match kind {
            ListKind::KlDiv => kldiv_list_loss(&s, &t)?,
            ListKind::ListNet => listnet_list_loss(&s, &t)?,
        };
        if let Some((g, scale)) = grad.as_mut() {
            // Both losses share ∂/∂z = softmax(s) − softmax(t).
            let (ls, lt) = (log_softmax(&s), log_softmax(&t));
            for j in 0..2 * b {
                let d = *scale * (ls[j].exp() - lt[j].exp()) / b as f64;
                if j < b {
                    *g.pos_mut(i, j) += d;
                } else {
                    *g.neg_mut(i, j - b) += d;
                }
            }
        }
    }
    Ok(total / b as f64)
}

pub fn kldiv_inbatch_loss(student: &ScoreMatrices, teacher: &ScoreMatrices) -> Result<f64> {
    inbatch_list_term(student, teacher, ListKind::KlDiv, None)
}

pub fn listnet_inbatch_loss(student: &ScoreMatrices, teacher: &ScoreMatrices) -> Result<f64> {
    inbatch_list_term(student, teacher, ListKind::ListNet, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn margin_mse_values() {
        assert_eq!(margin_mse(5.0, 3.0, 9.0, 7.0).unwrap(), 0.0);
        assert_eq!(margin_mse(1.0, 0.0, 4.0, 1.0).unwrap(), 4.0);
        assert!(margin_mse(f64::NAN, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn inbatch_single_query_halves_pair_loss() {
        let s = ScoreMatrices::new(1, vec![2.0], vec![0.5]).unwrap();
        let t = ScoreMatrices::new(1, vec![3.0], vec![0.0]).unwrap();
        let expected = 0.5 * margin_mse(2.0, 0.5, 3.0, 0.0).unwrap();
        assert!((inbatch_margin_mse(&s, &t).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn inbatch_two_queries_by_hand() {
        // Student: pos = [[3,1],[2,4]], neg = [[0,1],[1,0]]
        // Teacher: pos = [[5,2],[1,6]], neg = [[1,3],[2,2]]
        let s = ScoreMatrices::new(2, vec![3.0, 1.0, 2.0, 4.0], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let t = ScoreMatrices::new(2, vec![5.0, 2.0, 1.0, 6.0], vec![1.0, 3.0, 2.0, 2.0]).unwrap();
        // q0 negatives: (3-0)-(5-1)=-1, (3-1)-(5-3)=0; positives: 0, (3-1)-(5-2)=-1
        // q1 negatives: (4-1)-(6-2)=-1, (4-0)-(6-2)=0; positives: (4-2)-(6-1)=-3, 0
        // sum of squares = 1+0+0+1 + 1+0+9+0 = 12; / (2·2) = 3
        assert!((inbatch_margin_mse(&s, &t).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn dual_is_weighted_sum() {
        assert_eq!(dual_loss(1.0, 2.0, 0.75).unwrap(), 2.5);
        assert_eq!(dual_loss(1.3, 2.0, 0.0).unwrap(), 1.3);
        assert!(dual_loss(1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn kl_closed_form() {
        // softmax([1,0]) = (σ, 1−σ), σ = e/(1+e); KL(t‖s) with t = softmax([0,1]).
        let sig = 1.0 / (1.0 + (-1.0f64).exp());
        let (s, t) = ([sig, 1.0 - sig], [1.0 - sig, sig]);
        let expected: f64 = t.iter().zip(&s).map(|(ti, si)| ti * (ti / si).ln()).sum();
        assert!((kldiv_list_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - (2.0 * sig - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn list_losses_at_matching_distributions() {
        let z = [0.3, -1.2, 2.0, 0.0];
        assert!(kldiv_list_loss(&z, &z).unwrap().abs() < 1e-12);
        let shifted: Vec<f64> = z.iter().map(|x| x + 5.0).collect();
        assert!(kldiv_list_loss(&shifted, &z).unwrap().abs() < 1e-12);
        // ListNet bottoms out at the teacher entropy.
        let lt = log_softmax(&z);
        let entropy: f64 = -lt.iter().map(|l| l.exp() * l).sum::<f64>();
        assert!((listnet_list_loss(&z, &z).unwrap() - entropy).abs() < 1e-12);
        assert!(kldiv_list_loss(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn temperature_keeps_zero_point() {
        let z = [0.5, 1.5, -0.3];
        let hot: Vec<f64> = z.iter().map(|x| x * 3.0).collect();
        assert!(kldiv_list_loss(&hot, &hot).unwrap().abs() < 1e-12);
        let other = [1.5, 0.5, -0.3];
        let cold: Vec<f64> = other.iter().map(|x| x * 3.0).collect();
        assert!(kldiv_list_loss(&other, &z).unwrap() != kldiv_list_loss(&cold, &hot).unwrap());
    }

    fn matrices(b: usize) -> impl Strategy<Value = ScoreMatrices> {
        prop::collection::vec(-5.0f64..5.0, 2 * b * b)
            .prop_map(move |v| ScoreMatrices::new(b, v[..b * b].to_vec(), v[b * b..].to_vec()).unwrap())
    }

    proptest! {
        #[test]
        fn margin_mse_translation_invariant(sp in -10.0f64..10.0, sn in -10.0f64..10.0, tp in -10.0f64..10.0, tn in -10.0f64..10.0, c in -100.0f64..100.0) {
            let a = margin_mse(sp, sn, tp, tn).unwrap();
            let b = margin_mse(sp + c, sn + c, tp, tn).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn inbatch_nonnegative_and_zero_on_match((s, t) in (1usize..6).prop_flat_map(|b| (matrices(b), matrices(b)))) {
            prop_assert!(inbatch_margin_mse(&s, &t).unwrap() >= 0.0);
            prop_assert!(inbatch_margin_mse(&s, &s).unwrap().abs() < 1e-12);
            prop_assert!(kldiv_inbatch_loss(&s, &t).unwrap() >= 0.0);
        }

        #[test]
        fn inbatch_permutation_invariant(
            (s, t, perm) in (2usize..6).prop_flat_map(|b| (matrices(b), matrices(b), Just((0..b).collect::<Vec<_>>()).prop_shuffle()))
        ) {
            let a = inbatch_margin_mse(&s, &t).unwrap();
            let p = inbatch_margin_mse(&s.permuted(&perm), &t.permuted(&perm)).unwrap();
            prop_assert!((a - p).abs() < 1e-9 * (1.0 + a));
        }
    }
}
