use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ForgeConfig;
use crate::head::HeadInput;

/// Keeps every input and adds, for each known one, a label-1 copy whose
/// embedding segment carries i.i.d. `N(0, 1)` noise.
pub fn forge_gaussian(inputs: &[HeadInput<f64>], embedding: Range<usize>, config: &ForgeConfig) -> Vec<HeadInput<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut out = Vec::with_capacity(inputs.len() * 2);
    for input in inputs {
        out.push(input.clone());
        if input.y != 0 {
            continue;
        }
        let mut x = input.x.clone();
        for v in &mut x[embedding.clone()] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += z;
        }
        out.push(HeadInput { x, y: 1 });
    }
    out
}
