//! A tiny synthetic corpus that a small decoder can memorize: ten videos of
//! five random frames each, one fixed caption per video.

use std::fs;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{
    build_vocab, encode_caption, write_feature_file, write_manifest, Dataset, Example, FeatureFile, ManifestRecord,
    Split, Vocabulary,
};
use crate::decoder::{DecoderConfig, VideoInput};
use crate::error::Result;
use crate::train::{AdamConfig, TrainConfig};

pub const TOY_FRAMES: usize = 5;
pub const TOY_WIDTH: usize = 16;

pub const TOY_CAPTIONS: [&str; 10] = [
    "a man is playing a guitar",
    "a woman is slicing a tomato",
    "a dog is running on grass",
    "a cat is chasing a ball",
    "a man is riding a horse",
    "a woman is playing a piano",
    "a dog is swimming",
    "a child is riding a bike",
    "a man is slicing bread",
    "a cat is sleeping on a bed",
];

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub features: Vec<FeatureFile>,
    pub manifest: Vec<ManifestRecord>,
    pub vocab: Vocabulary,
}

impl ToyCorpus {
    /// The corpus as an in-memory [`Dataset`], without touching disk.
    pub fn dataset(&self) -> Dataset {
        let examples = self
            .features
            .iter()
            .zip(&self.manifest)
            .map(|(f, r)| Example {
                video: VideoInput::new(f.video_id.clone(), f.to_tensor()).expect("rank-2 features"),
                split: r.split,
                captions: r
                    .captions
                    .iter()
                    .map(|c| encode_caption(&r.video_id, c, &self.vocab))
                    .collect(),
            })
            .collect();
        Dataset { examples }
    }
}

/// Builds the corpus; frame values are standard normal draws from `seed`.
pub fn toy_corpus(seed: u64) -> ToyCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::new();
    let mut manifest = Vec::new();
    for (i, caption) in TOY_CAPTIONS.iter().enumerate() {
        let id = format!("toy{i:02}");
        let values = (0..TOY_FRAMES * TOY_WIDTH)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                x as f32
            })
            .collect();
        features.push(FeatureFile::new(id.clone(), TOY_FRAMES, TOY_WIDTH, values).expect("fixed extents"));
        manifest.push(ManifestRecord {
            video_id: id,
            split: Split::Train,
            captions: vec![(*caption).to_owned()],
        });
    }
    let vocab = build_vocab(&TOY_CAPTIONS, 1).expect("nonempty corpus");
    ToyCorpus {
        features,
        manifest,
        vocab,
    }
}

/// Decoder settings sized for the toy corpus.
pub fn toy_decoder_config(seed: u64) -> DecoderConfig {
    DecoderConfig {
        n: 32,
        d_a: 16,
        max_caption_len: 12,
        seed,
        ..Default::default()
    }
}

pub fn toy_train_config() -> TrainConfig {
    TrainConfig {
        adam: AdamConfig::default(),
        batch_size: 1,
        epochs: 500,
        target_loss: Some(0.05),
        ..Default::default()
    }
}

/// Writes `features/<id>.vff`, `manifest.jsonl` and `vocab.tsv` under `dir`.
pub fn write_toy_corpus(corpus: &ToyCorpus, dir: &Path) -> Result<()> {
    let features = dir.join("features");
    fs::create_dir_all(&features)?;
    for f in &corpus.features {
        write_feature_file(f, &features.join(format!("{}.vff", f.video_id)))?;
    }
    write_manifest(&corpus.manifest, &dir.join("manifest.jsonl"))?;
    corpus.vocab.save(&dir.join("vocab.tsv"))
}
