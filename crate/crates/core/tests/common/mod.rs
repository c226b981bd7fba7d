#![allow(dead_code)]

pub mod oracles;

use mmnmt::data::TrainingTriple;
use mmnmt::vision::{synth_features, FeatureStore};
use mmnmt::{Model, ModelConfig, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every parameter drawn uniformly from `(-scale, scale)`.
pub fn randomized<T: Real>(config: ModelConfig, seed: u64, scale: f64) -> Model<T> {
    let mut model = Model::<T>::zeros(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        for x in model.params_mut().get_mut(id).data_mut() {
            *x = T::of(rng.random_range(-scale..scale));
        }
    }
    model
}

pub fn random_sentence(rng: &mut ChaCha8Rng, vocab: usize, min: usize, max: usize) -> Vec<usize> {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| rng.random_range(4..vocab)).collect()
}

/// Desk-sized multimodal configuration used by the overfit runs.
pub fn desk_config(src_vocab: usize, tgt_vocab: usize, multimodal: bool) -> ModelConfig {
    let mut cfg = ModelConfig::tiny(src_vocab, tgt_vocab, multimodal);
    cfg.src_emb = 16;
    cfg.tgt_emb = 16;
    cfg.enc_hidden = 32;
    cfg.dec_hidden = 32;
    cfg.att_dim = 32;
    cfg.proj_dim = 16;
    cfg.feat_len = 8;
    cfg.feat_dim = 16;
    cfg
}

/// `n` random source sentences, each mapped token-by-token through a
/// fixed permutation to form the target, with one synthetic image each.
pub fn synthetic_pairs(n: usize, vocab: usize, seed: u64, cfg: &ModelConfig) -> (Vec<TrainingTriple>, FeatureStore<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feats = synth_features::<f32>(seed + 1, cfg.feat_len, cfg.feat_dim, n);
    let triples = (0..n)
        .map(|i| {
            let src = random_sentence(&mut rng, vocab, 3, 7);
            let tgt = src.iter().map(|&x| 4 + (x * 7) % (vocab - 4)).collect();
            TrainingTriple {
                src,
                tgt,
                image_id: Some(feats[i].image_id.clone()),
                line: i + 1,
            }
        })
        .collect();
    (triples, FeatureStore::new(cfg.feat_len, cfg.feat_dim, feats).unwrap())
}
