//! Cosine similarity and the cross-modal contrastive objective.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err};
use crate::{EmbeddingBatch, NnError, ParamStore, Result, Tape, Var};

/// Which pairs enter each softmax denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveVariant {
    /// InfoNCE: the matched pair is part of its own denominator.
    #[default]
    Standard,
    /// Denominator sums over mismatched pairs only (`j ≠ i`).
    ExcludePositive,
}

impl ContrastiveVariant {
    pub fn excludes_positive(self) -> bool {
        matches!(self, ContrastiveVariant::ExcludePositive)
    }
}

pub fn cosine_sim(z1: &[f64], z2: &[f64]) -> Result<f64> {
    if z1.len() != z2.len() || z1.is_empty() {
        return Err(shape_err(
            "cosine_sim",
            format!("lengths {} and {}", z1.len(), z2.len()),
        ));
    }
    let n1 = z1.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n2 = z2.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(NnError::ZeroVector { op: "cosine_sim" });
    }
    let dot: f64 = z1.iter().zip(z2).map(|(a, b)| a * b).sum();
    Ok((dot / (n1 * n2)).clamp(-1.0, 1.0))
}

/// Records the contrastive loss of raw embeddings `z1`, `z2` (`[n, d]`) on
/// `tape`. Rows are L2-normalized first, so logits are cosine similarities
/// divided by the scalar `tau`.
pub fn contrastive_on_tape(
    tape: &mut Tape,
    z1: Var,
    z2: Var,
    tau: Var,
    variant: ContrastiveVariant,
) -> Result<Var> {
    let u = tape.l2_normalize(z1)?;
    let v = tape.l2_normalize(z2)?;
    tape.info_nce(u, v, tau, variant.excludes_positive())
}

/// Value of the two-direction contrastive loss between two embedding
/// batches of matching shape.
pub fn contrastive_loss(
    z1: &EmbeddingBatch,
    z2: &EmbeddingBatch,
    tau: f64,
    variant: ContrastiveVariant,
) -> Result<f64> {
    if z1.n() != z2.n() || z1.d() != z2.d() {
        return Err(shape_err(
            "contrastive_loss",
            format!("{}×{} vs {}×{}", z1.n(), z1.d(), z2.n(), z2.d()),
        ));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(arg_err(
            "contrastive_loss",
            format!("temperature {tau} must be > 0"),
        ));
    }
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let a = tape.constant(vec![z1.n(), z1.d()], z1.values().to_vec())?;
    let b = tape.constant(vec![z2.n(), z2.d()], z2.values().to_vec())?;
    let t = tape.constant(vec![1], vec![tau])?;
    let l = contrastive_on_tape(&mut tape, a, b, t, variant)?;
    Ok(tape.scalar(l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use matmodal_core::rng::Xoshiro256;
    use proptest::prelude::*;

    fn batch(rows: &[Vec<f64>]) -> EmbeddingBatch {
        EmbeddingBatch::from_rows(rows).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_relative_eq!(
            cosine_sim(&[1., 2., 3.], &[1., 2., 3.]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_eq!(cosine_sim(&[1., 0.], &[0., 1.]).unwrap(), 0.0);
        assert_relative_eq!(
            cosine_sim(&[1., 1.], &[1., 0.]).unwrap(),
            0.5f64.sqrt(),
            epsilon = 1e-15
        );
        assert!(matches!(
            cosine_sim(&[0., 0.], &[1., 0.]),
            Err(NnError::ZeroVector { .. })
        ));
        assert!(cosine_sim(&[1.], &[1., 0.]).is_err());
    }

    #[test]
    fn uniform_similarities() {
        let rows = vec![vec![0.3, -1.2, 0.5]; 4];
        let z = batch(&rows);
        let std = contrastive_loss(&z, &z, 0.1, ContrastiveVariant::Standard).unwrap();
        let excl = contrastive_loss(&z, &z, 0.1, ContrastiveVariant::ExcludePositive).unwrap();
        assert!((std - 4f64.ln()).abs() < 1e-9, "{std}");
        assert!((excl - 3f64.ln()).abs() < 1e-9, "{excl}");
    }

    #[test]
    fn orthogonal_matched_batch() {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let z = batch(&rows);
        let l = contrastive_loss(&z, &z, 0.05, ContrastiveVariant::Standard).unwrap();
        // -log(e^20 / (e^20 + 3)) in both directions.
        let oracle = (1.0 + 3.0 * (-20f64).exp()).ln();
        assert!(l < 1e-8, "{l}");
        assert_relative_eq!(l, oracle, max_relative = 1e-9);
    }

    #[test]
    fn contract_violations() {
        let a = batch(&[vec![1., 0.], vec![0., 1.]]);
        let b = batch(&[vec![1., 0.], vec![0., 1.], vec![1., 1.]]);
        assert!(contrastive_loss(&a, &b, 0.1, ContrastiveVariant::Standard).is_err());
        assert!(contrastive_loss(&a, &a, 0.0, ContrastiveVariant::Standard).is_err());
        let one = batch(&[vec![1., 0.]]);
        assert!(contrastive_loss(&one, &one, 0.1, ContrastiveVariant::Standard).is_err());
        let zero = batch(&[vec![0., 0.], vec![0., 1.]]);
        assert!(contrastive_loss(&zero, &a, 0.1, ContrastiveVariant::Standard).is_err());
    }

    fn random_rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = Xoshiro256::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.normal()).collect())
            .collect()
    }

    proptest! {
        #[test]
        fn symmetric_and_permutation_invariant(seed in 0u64..10_000, n in 2usize..9, shift in 1usize..8) {
            let r1 = random_rows(seed, n, 5);
            let r2 = random_rows(seed + 1, n, 5);
            for variant in [ContrastiveVariant::Standard, ContrastiveVariant::ExcludePositive] {
                let l12 = contrastive_loss(&batch(&r1), &batch(&r2), 0.1, variant).unwrap();
                let l21 = contrastive_loss(&batch(&r2), &batch(&r1), 0.1, variant).unwrap();
                prop_assert_eq!(l12, l21);
                let perm: Vec<usize> = (0..n).map(|i| (i * (2 * shift + 1) + shift) % n).collect();
                let mut sorted = perm.clone();
                sorted.sort();
                sorted.dedup();
                if sorted.len() == n {
                    let p1: Vec<Vec<f64>> = perm.iter().map(|i| r1[*i].clone()).collect();
                    let p2: Vec<Vec<f64>> = perm.iter().map(|i| r2[*i].clone()).collect();
                    let lp = contrastive_loss(&batch(&p1), &batch(&p2), 0.1, variant).unwrap();
                    prop_assert_eq!(l12, lp);
                }
                if variant == ContrastiveVariant::Standard {
                    prop_assert!(l12 >= 0.0);
                }
            }
        }

        #[test]
        fn cosine_scale_invariant(seed in 0u64..10_000, a in 0.01..100.0f64, b in 0.01..100.0f64) {
            let r = random_rows(seed, 2, 6);
            let base = cosine_sim(&r[0], &r[1]).unwrap();
            let s0: Vec<f64> = r[0].iter().map(|x| x * a).collect();
            let s1: Vec<f64> = r[1].iter().map(|x| x * b).collect();
            prop_assert!((base - cosine_sim(&s0, &s1).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&base));
        }
    }
}
