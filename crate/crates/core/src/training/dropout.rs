use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::ModelConfig;
use crate::tensor::{Real, Tensor};

/// Inverted-dropout masks for one sentence. Each mask is drawn once and
/// reused at every time step of that sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks<T> {
    pub encoder_forward: Tensor<T>,
    pub encoder_backward: Tensor<T>,
    /// Over the whole `L×D` feature matrix; `None` for text-only models.
    pub image: Option<Tensor<T>>,
    pub decoder: Tensor<T>,
    /// Applied to the tanh layer right before the output projection.
    pub readout: Tensor<T>,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream for (`seed`, `step`, `sentence`).
pub fn mask_seed(seed: u64, step: u64, sentence: u64) -> u64 {
    mix(mix(mix(seed) ^ step) ^ sentence)
}

fn bernoulli_mask<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Tensor<T> {
    if p == 0.0 {
        return Tensor::ones(shape);
    }
    let keep = T::of(1.0 / (1.0 - p));
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    Tensor::new(shape, data).expect("mask shape")
}

/// Samples the masks for one sentence at one training step. Entries are
/// `0` with probability `p` and `1/(1−p)` otherwise; `p = 0` gives ones.
pub fn make_dropout_masks<T: Real>(config: &ModelConfig, p: f64, seed: u64, step: u64, sentence: u64) -> DropoutMasks<T> {
    assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed(seed, step, sentence));
    DropoutMasks {
        encoder_forward: bernoulli_mask(&mut rng, &[1, config.enc_hidden], p),
        encoder_backward: bernoulli_mask(&mut rng, &[1, config.enc_hidden], p),
        image: config
            .multimodal
            .then(|| bernoulli_mask(&mut rng, &[config.feat_len, config.feat_dim], p)),
        decoder: bernoulli_mask(&mut rng, &[1, config.dec_hidden], p),
        readout: bernoulli_mask(&mut rng, &[1, config.proj_dim], p),
    }
}
