use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::manifest::Manifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    /// train, val, test
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { fractions: [0.8, 0.1, 0.1], seed: 0 }
    }
}

impl SplitSpec {
    /// `(train, val, test)` sizes: floor, floor, remainder.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize), EvalError> {
        let f = self.fractions;
        if f.iter().any(|v| !(*v >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(EvalError::BadFractions(f));
        }
        if n < 3 {
            return Err(EvalError::TooFewItems(n));
        }
        // the small epsilon keeps products like 0.8 * 735 from landing just under an integer
        let train = ((f[0] * n as f64) + 1e-9).floor() as usize;
        let val = (((f[1] * n as f64) + 1e-9).floor() as usize).min(n - train);
        Ok((train, val, n - train - val))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Manifest,
    pub val: Manifest,
    pub test: Manifest,
}

/// Seeded shuffle, then floor / floor / remainder. Each part keeps the shuffled order.
pub fn split_dataset(manifest: &Manifest, spec: &SplitSpec) -> Result<Split, EvalError> {
    let n = manifest.images.len();
    let (train, val, _) = spec.sizes(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let part = |idx: &[usize]| Manifest {
        images: idx.iter().map(|&i| manifest.images[i].clone()).collect(),
        classes: manifest.classes.clone(),
    };
    Ok(Split { train: part(&order[..train]), val: part(&order[train..train + val]), test: part(&order[train + val..]) })
}
