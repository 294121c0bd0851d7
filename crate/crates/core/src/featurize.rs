//! Composition descriptors: stoichiometry-weighted statistics of elemental
//! properties.
//!
//! Layout (50 values): for each of the 8 properties in
//! [`PROPERTY_NAMES`] order, the 6 statistics in [`STAT_NAMES`] order,
//! followed by the L2 norm of the fraction vector and the number of
//! distinct elements.

use crate::crystal::Composition;
use crate::elements::{ElementTable, N_PROPERTIES, PROPERTY_NAMES};
use crate::Result;

pub const STAT_NAMES: [&str; 6] = ["mean", "avg_dev", "min", "max", "range", "mode"];
pub const FEATURE_LEN: usize = N_PROPERTIES * STAT_NAMES.len() + 2;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Statistic `stat` of property `prop`, both by index.
    pub fn get(&self, prop: usize, stat: usize) -> f64 {
        self.0[prop * STAT_NAMES.len() + stat]
    }

    pub fn l2_norm(&self) -> f64 {
        self.0[FEATURE_LEN - 2]
    }

    pub fn n_elements(&self) -> f64 {
        self.0[FEATURE_LEN - 1]
    }
}

/// Names matching the feature layout, e.g. `electronegativity_avg_dev`.
pub fn feature_names() -> Vec<String> {
    let mut names: Vec<String> = PROPERTY_NAMES
        .iter()
        .flat_map(|p| STAT_NAMES.iter().map(move |s| format!("{p}_{s}")))
        .collect();
    names.push("fraction_l2_norm".into());
    names.push("n_elements".into());
    names
}

pub fn magpie_features(composition: &Composition, table: &ElementTable) -> Result<FeatureVector> {
    // Ascending Z, so the mode tie-break (lower Z wins) falls out of a
    // strict `>` comparison.
    let fractions = composition.fractions();
    let mut props = Vec::with_capacity(fractions.len());
    for (z, _) in &fractions {
        props.push(table.get(*z)?.properties);
    }
    let mode_idx =
        fractions.iter().enumerate().fold(
            0,
            |best, (i, (_, x))| if *x > fractions[best].1 { i } else { best },
        );

    let mut out = Vec::with_capacity(FEATURE_LEN);
    for p in 0..N_PROPERTIES {
        let vals: Vec<f64> = props.iter().map(|row| row[p]).collect();
        let mean: f64 = fractions.iter().zip(&vals).map(|((_, x), v)| x * v).sum();
        let avg_dev: f64 = fractions
            .iter()
            .zip(&vals)
            .map(|((_, x), v)| x * (v - mean).abs())
            .sum();
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.extend([mean, avg_dev, min, max, max - min, vals[mode_idx]]);
    }
    let l2 = fractions.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
    out.push(l2);
    out.push(fractions.len() as f64);
    Ok(FeatureVector(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const Z_IDX: usize = 0;

    fn feats(pairs: &[(u8, f64)]) -> FeatureVector {
        magpie_features(
            &Composition::new(pairs.iter().copied()).unwrap(),
            ElementTable::builtin(),
        )
        .unwrap()
    }

    #[test]
    fn layout() {
        assert_eq!(FEATURE_LEN, 50);
        assert_eq!(feature_names().len(), FEATURE_LEN);
        assert_eq!(feats(&[(26, 2.0), (8, 3.0)]).0.len(), FEATURE_LEN);
    }

    #[test]
    fn fe2o3_mean_atomic_number() {
        let f = feats(&[(26, 2.0), (8, 3.0)]);
        assert_relative_eq!(
            f.get(Z_IDX, 0),
            (2.0 * 26.0 + 3.0 * 8.0) / 5.0,
            epsilon = 1e-12
        );
        // mode: O has the larger fraction.
        assert_eq!(f.get(Z_IDX, 5), 8.0);
        assert_eq!(f.n_elements(), 2.0);
    }

    #[test]
    fn nacl_atomic_number_statistics() {
        let f = feats(&[(11, 1.0), (17, 1.0)]);
        let got: Vec<f64> = (0..6).map(|s| f.get(Z_IDX, s)).collect();
        assert_eq!(got, vec![14.0, 3.0, 11.0, 17.0, 6.0, 11.0]);
        assert_relative_eq!(f.l2_norm(), 0.5f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn single_element_statistics_degenerate() {
        let f = feats(&[(29, 4.0)]);
        let cu = ElementTable::builtin().get(29).unwrap();
        for p in 0..N_PROPERTIES {
            assert_eq!(f.get(p, 1), 0.0);
            assert_eq!(f.get(p, 4), 0.0);
            for s in [0, 2, 3, 5] {
                assert_eq!(f.get(p, s), cu.properties[p]);
            }
        }
        assert_eq!(f.l2_norm(), 1.0);
    }

    #[test]
    fn unknown_element_errors() {
        let table = ElementTable::parse("8 O 8 15.999 3.44 2 16 66 6 87 0").unwrap();
        let comp = Composition::new([(26, 1.0), (8, 1.0)]).unwrap();
        assert!(matches!(
            magpie_features(&comp, &table),
            Err(crate::Error::MissingElement(26))
        ));
    }

    proptest! {
        #[test]
        fn scale_and_order_invariant(
            zs in prop::collection::btree_set(1u8..=98, 1..5),
            amts in prop::collection::vec(1u32..8, 5),
            k in 1u32..6,
        ) {
            let pairs: Vec<(u8, f64)> = zs.iter().zip(&amts).map(|(z, a)| (*z, *a as f64)).collect();
            let base = feats(&pairs);
            let scaled: Vec<(u8, f64)> = pairs.iter().map(|(z, a)| (*z, a * k as f64)).collect();
            let reversed: Vec<(u8, f64)> = pairs.iter().rev().copied().collect();
            for (x, y) in base.0.iter().zip(&feats(&scaled).0) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
            prop_assert_eq!(&base, &feats(&reversed));
            prop_assert!(base.0.iter().all(|v| v.is_finite()));
        }
    }
}
