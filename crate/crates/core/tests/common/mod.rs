#![allow(dead_code)]

pub mod oracle;

use awe_qbe::corpus::CorpusSpec;
use awe_qbe::features::FeatureSequence;
use awe_qbe::model::{ModelConfig, SoftmaxMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A network small enough for exhaustive finite differences.
pub fn tiny_config(mode: SoftmaxMode) -> ModelConfig {
    ModelConfig {
        input_dim: 6,
        stage_channels: vec![2, 2, 3, 3],
        stage_blocks: vec![1, 1, 1, 1],
        stage_downsample: vec![false, true, true, true],
        softmax_mode: mode,
        segment_frames: None,
        batch_size: 4,
        epochs: 12,
        ..ModelConfig::desk()
    }
    .with_vocabulary(&[2, 2])
}

pub fn tiny_spec(seed: u64) -> CorpusSpec {
    CorpusSpec {
        num_words_lang_a: 2,
        num_words_lang_b: 2,
        num_speakers: 4,
        instances_per_word_per_speaker: 2,
        feature_dim: 6,
        word_len_frames: (8, 12),
        num_search_utterances: 4,
        words_per_utterance: (1, 2),
        silence_len_frames: (3, 6),
        seed,
        ..CorpusSpec::default()
    }
}

pub fn random_seq(rng: &mut ChaCha8Rng, frames: usize, dim: usize) -> FeatureSequence {
    let data = (0..frames * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    FeatureSequence::new(data, frames, dim).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Initialized weights with random biases, so no unit sits exactly on a
/// ReLU kink and the tiny network is not dead.
pub fn generic_params(cfg: &ModelConfig, seed: u64) -> awe_qbe::model::NetworkParams<f32> {
    let mut p = awe_qbe::model::build_network(cfg).unwrap();
    let mut r = rng(seed);
    for (name, t) in p.names.iter().zip(p.tensors.iter_mut()) {
        if name.ends_with(".bias") {
            for v in t.data_mut() {
                *v = r.random_range(-0.2f32..0.3);
            }
        }
    }
    p
}
