use rand::seq::{index, SliceRandom};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng;

/// Fraction of training labels to shuffle, and the seed for doing it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub fraction: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(format!("noise fraction must be in [0,1], got {fraction}")));
        }
        Ok(Self { fraction, seed })
    }

    pub fn none() -> Self {
        Self { fraction: 0.0, seed: 0 }
    }
}

// absorbs representation error such as 0.3 * 10 = 3.0000000000000004
const COUNT_SLACK: f64 = 1e-9;

/// Picks `⌈fraction · n⌉` rows and permutes their labels among themselves.
/// The overall label multiset is unchanged.
pub fn inject_label_noise(t: &Matrix, spec: &NoiseSpec) -> Result<Matrix> {
    let spec = NoiseSpec::new(spec.fraction, spec.seed)?;
    let n = t.rows();
    let k = ((spec.fraction * n as f64) - COUNT_SLACK).ceil().max(0.0) as usize;
    let k = k.min(n);
    let mut r = rng::seeded(spec.seed);
    let mut chosen = index::sample(&mut r, n, k).into_vec();
    chosen.sort_unstable();
    let mut shuffled = chosen.clone();
    shuffled.shuffle(&mut r);
    let mut out = t.clone();
    for (&dst, &src) in chosen.iter().zip(&shuffled) {
        out.row_mut(dst).copy_from_slice(t.row(src));
    }
    Ok(out)
}

/// `k` independent draws of `⌊frac · n⌋` distinct indices each.
pub fn subsample_train_sets(n: usize, k: usize, frac: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::InvalidArgument(format!("subsample fraction must be in (0,1], got {frac}")));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one subsample".into()));
    }
    let size = ((frac * n as f64) + COUNT_SLACK).floor() as usize;
    let size = size.min(n);
    let mut r = rng::seeded(seed);
    Ok((0..k).map(|_| index::sample(&mut r, n, size).into_vec()).collect())
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::harness::labels_to_one_hot;
    use proptest::prelude::*;

    fn class_counts(m: &Matrix) -> Vec<usize> {
        let mut c = vec![0; m.cols()];
        for row in m.iter_rows() {
            c[row.iter().position(|&v| v == 1.0).unwrap()] += 1;
        }
        c
    }

    proptest! {
        #[test]
        fn label_noise_keeps_the_label_multiset(labels in prop::collection::vec(0usize..4, 1..80), frac in 0.0f64..=1.0, seed: u64) {
            let t = labels_to_one_hot(&labels, 4).unwrap();
            let noisy = inject_label_noise(&t, &NoiseSpec::new(frac, seed).unwrap()).unwrap();
            prop_assert_eq!(class_counts(&t), class_counts(&noisy));
            let changed = t.iter_rows().zip(noisy.iter_rows()).filter(|(a, b)| a != b).count();
            prop_assert!(changed as f64 <= (frac * labels.len() as f64).ceil());
        }
    }
}
