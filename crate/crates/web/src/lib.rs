//! Browser bindings for three small demos: cross-convolution fusion of two
//! vectors, soft versus dot attention over a handful of slots, and training
//! the toy captioner in place with per-step attention readouts.
//!
//! Every export is a thin wrapper over a plain Rust function so the logic is
//! testable natively.

use memdec_core::attention::{dot_attention, soft_attention, AttentionParams};
use memdec_core::data::Split;
use memdec_core::decoder::Decoder;
use memdec_core::eval::{greedy_decode, GenerationRecord};
use memdec_core::fusion::{ccmf_fuse, CcmfParams};
use memdec_core::params::{ParamGroup, ParamLayout, ParamSet};
use memdec_core::tensor::{Tape, Tensor};
use memdec_core::toy::{toy_corpus, toy_decoder_config, toy_train_config, ToyCorpus};
use memdec_core::train::{train_epoch, AdamState, TrainConfig, TrainItem};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn init(layout: ParamLayout, seed: u64) -> ParamSet {
    layout.initialize(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Fuses two equal-width vectors with randomly initialized kernel maps.
pub fn fuse_vectors(visual: &[f64], lexical: &[f64], seed: u64) -> Result<Vec<f64>, String> {
    let n = visual.len();
    if n == 0 || lexical.len() != n {
        return Err(format!(
            "vectors must share a positive width, got {n} and {}",
            lexical.len()
        ));
    }
    let mut layout = ParamLayout::new();
    let ids = CcmfParams::declare(&mut layout, "fusion", n);
    let params = init(layout, seed);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let v = tape.leaf(Tensor::vector(visual.to_vec()));
    let c = tape.leaf(Tensor::vector(lexical.to_vec()));
    let fused = ccmf_fuse(&mut tape, v, c, &ids.map(|id| bound[id])).map_err(|e| e.to_string())?;
    Ok(tape.value(fused).data().to_vec())
}

/// Soft and dot attention weights of `query` over `k` slots stored row-major.
pub fn attention_weights(query: &[f64], slots: &[f64], k: usize, d_a: usize, seed: u64) -> Result<String, String> {
    let n = query.len();
    if n == 0 || k == 0 || d_a == 0 || slots.len() != k * n {
        return Err(format!("expected {k} slots of width {n}, got {} values", slots.len()));
    }
    let mut layout = ParamLayout::new();
    let ids = AttentionParams::declare(&mut layout, "attn", n, n, d_a, ParamGroup::Core);
    let params = init(layout, seed);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let q = tape.leaf(Tensor::vector(query.to_vec()));
    let s = tape.leaf(Tensor::new(vec![k, n], slots.to_vec()).map_err(|e| e.to_string())?);
    let soft = soft_attention(&mut tape, q, s, &ids.map(|id| bound[id])).map_err(|e| e.to_string())?;
    let dot = dot_attention(&mut tape, q, s).map_err(|e| e.to_string())?;
    Ok(json!({
        "soft": tape.value(soft.weights).data(),
        "dot": tape.value(dot.weights).data(),
    })
    .to_string())
}

/// The toy captioner, trained a few epochs at a time.
pub struct ToyModel {
    corpus: ToyCorpus,
    dataset: memdec_core::data::Dataset,
    decoder: Decoder,
    params: ParamSet,
    state: AdamState,
    train: TrainConfig,
    seed: u64,
    epoch: usize,
    last_loss: Option<f64>,
}

impl ToyModel {
    pub fn create(seed: u64) -> Result<ToyModel, String> {
        let corpus = toy_corpus(seed);
        let dataset = corpus.dataset();
        let width = dataset.feature_width().unwrap_or(0);
        let decoder = Decoder::new(&toy_decoder_config(seed), corpus.vocab.len(), width).map_err(|e| e.to_string())?;
        let params = decoder.init_params();
        let train = toy_train_config();
        let state = AdamState::new(train.adam, &params);
        Ok(ToyModel {
            corpus,
            dataset,
            decoder,
            params,
            state,
            train,
            seed,
            epoch: 0,
            last_loss: None,
        })
    }

    /// Runs `epochs` more epochs and returns the mean loss of the last one.
    pub fn advance(&mut self, epochs: usize) -> Result<f64, String> {
        let items: Vec<TrainItem<'_>> = self
            .dataset
            .pairs(Split::Train)
            .into_iter()
            .map(|(i, j)| TrainItem {
                video: &self.dataset.examples[i].video,
                caption: &self.dataset.examples[i].captions[j].tokens,
            })
            .collect();
        for _ in 0..epochs {
            self.epoch += 1;
            let stats = train_epoch(
                &self.decoder,
                &mut self.params,
                &mut self.state,
                &items,
                &self.train,
                self.seed,
                self.epoch,
            )
            .map_err(|e| e.to_string())?;
            self.last_loss = Some(stats.loss);
        }
        self.last_loss.ok_or_else(|| "no epochs run".to_owned())
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Greedy caption and attention trace for video `index`, as JSON.
    pub fn describe(&self, index: usize) -> Result<String, String> {
        let example = self
            .dataset
            .examples
            .get(index)
            .ok_or_else(|| format!("video index {index} out of range"))?;
        let g = greedy_decode(
            &self.decoder,
            &self.params,
            &example.video,
            self.decoder.config().max_caption_len,
        )
        .map_err(|e| e.to_string())?;
        let record = GenerationRecord::new(g, &self.corpus.vocab);
        let words: Vec<&str> = record
            .tokens
            .iter()
            .map(|&t| self.corpus.vocab.token(t).unwrap_or("<unk>"))
            .collect();
        Ok(json!({
            "video": record.video_id,
            "reference": self.corpus.manifest[index].captions[0],
            "caption": record.caption,
            "words": words,
            "attention": record.attention,
        })
        .to_string())
    }

    pub fn videos(&self) -> usize {
        self.dataset.examples.len()
    }
}

/// Cross-convolution fusion of two vectors of the same width.
#[wasm_bindgen]
pub fn fuse(visual: &[f64], lexical: &[f64], seed: u64) -> Result<Vec<f64>, JsValue> {
    fuse_vectors(visual, lexical, seed).map_err(|e| JsValue::from_str(&e))
}

/// JSON `{"soft": [...], "dot": [...]}` attention weights.
#[wasm_bindgen]
pub fn attend(query: &[f64], slots: &[f64], k: usize, d_a: usize, seed: u64) -> Result<String, JsValue> {
    attention_weights(query, slots, k, d_a, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub struct ToyDemo {
    model: ToyModel,
}

#[wasm_bindgen]
impl ToyDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<ToyDemo, JsValue> {
        ToyModel::create(seed)
            .map(|model| ToyDemo { model })
            .map_err(|e| JsValue::from_str(&e))
    }

    pub fn train(&mut self, epochs: usize) -> Result<f64, JsValue> {
        self.model.advance(epochs).map_err(|e| JsValue::from_str(&e))
    }

    pub fn epoch(&self) -> usize {
        self.model.epoch()
    }

    pub fn videos(&self) -> usize {
        self.model.videos()
    }

    pub fn describe(&self, index: usize) -> Result<String, JsValue> {
        self.model.describe(index).map_err(|e| JsValue::from_str(&e))
    }
}
