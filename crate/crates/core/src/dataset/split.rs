use serde::{Deserialize, Serialize};

use crate::rng::Xoshiro256;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    /// Train / validation / test fractions.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: [0.6, 0.2, 0.2],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], seed: u64) -> Result<Self> {
        let spec = Self { ratios, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "split ratios must be nonnegative, got {:?}",
                self.ratios
            )));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded Fisher–Yates shuffle of `0..n`, cut at ⌊r₀n⌋ and ⌊(r₀+r₁)n⌋.
///
/// The cut points carry a 1e-9 guard so that products such as 0.6·5
/// that land a hair under an integer still floor to it.
pub fn split(n: usize, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument(
            "cannot split an empty dataset".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    Xoshiro256::seed_from_u64(spec.seed).shuffle(&mut idx);
    let cut = |frac: f64| ((frac * n as f64 + 1e-9).floor() as usize).min(n);
    let c1 = cut(spec.ratios[0]);
    let c2 = cut(spec.ratios[0] + spec.ratios[1]).max(c1);
    Ok(Split {
        train: idx[..c1].to_vec(),
        val: idx[c1..c2].to_vec(),
        test: idx[c2..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sizes(s: &Split) -> (usize, usize, usize) {
        (s.train.len(), s.val.len(), s.test.len())
    }

    #[test]
    fn sixty_twenty_twenty() {
        let spec = SplitSpec::default();
        assert_eq!(sizes(&split(100, &spec).unwrap()), (60, 20, 20));
        assert_eq!(sizes(&split(5, &spec).unwrap()), (3, 1, 1));
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = SplitSpec::new([0.6, 0.2, 0.2], 17).unwrap();
        assert_eq!(split(1000, &spec).unwrap(), split(1000, &spec).unwrap());
        let other = SplitSpec::new([0.6, 0.2, 0.2], 18).unwrap();
        assert_ne!(split(1000, &spec).unwrap(), split(1000, &other).unwrap());
    }

    #[test]
    fn rejects_bad_ratios() {
        assert!(SplitSpec::new([0.5, 0.2, 0.2], 0).is_err());
        assert!(SplitSpec::new([1.2, -0.1, -0.1], 0).is_err());
        assert!(split(0, &SplitSpec::default()).is_err());
    }

    proptest! {
        #[test]
        fn partitions_are_disjoint_and_exhaustive(n in 1usize..=1000, seed in any::<u64>()) {
            let s = split(n, &SplitSpec { ratios: [0.6, 0.2, 0.2], seed }).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(s.train.len(), (0.6 * n as f64 + 1e-9).floor() as usize);
        }
    }
}
