//! Greedy caption generation, metrics and evaluation reports.

mod metrics;

pub use metrics::{bleu4, bleu_stats, cider, cider_scores, sentence_bleu_smoothed, BleuStats, MAX_ORDER};

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{decode_tokens, tokenize, Example, Vocabulary, EOS};
use crate::decoder::{Decoder, VideoInput};
use crate::error::{read_text, write_file, Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Tape, Var};

/// Attention weights collected during generation. `memory[l][t]` is layer
/// `l + 1`'s read at step `t + 1` (`None` where the layer had nothing to
/// read); `visual[s][t]` is visual-attention site `s` at step `t + 1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub memory: Vec<Vec<Option<Vec<f64>>>>,
    pub visual: Vec<Vec<Vec<f64>>>,
}

impl AttentionTrace {
    /// Every recorded weight vector, in no particular order.
    pub fn all_weights(&self) -> impl Iterator<Item = &[f64]> {
        self.memory
            .iter()
            .flatten()
            .filter_map(|w| w.as_deref())
            .chain(self.visual.iter().flatten().map(Vec::as_slice))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub video_id: String,
    /// Emitted words, without BOS/EOS.
    pub tokens: Vec<usize>,
    pub attention: AttentionTrace,
}

impl Generation {
    pub fn text(&self, vocab: &Vocabulary) -> String {
        decode_tokens(&self.tokens, vocab)
    }
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn collect(tape: &Tape, var: Var) -> Vec<f64> {
    tape.value(var).data().to_vec()
}

/// Emits the most probable word at each step until EOS or `max_len` words.
pub fn greedy_decode(decoder: &Decoder, params: &ParamSet, video: &VideoInput, max_len: usize) -> Result<Generation> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let mut session = decoder.start(&mut tape, &bound, video)?;
    let mut tokens = Vec::new();
    let mut trace = AttentionTrace::default();
    let mut prev = crate::data::BOS;
    for _ in 0..max_len {
        let step = session.step(&mut tape, prev)?;
        let att = &step.attention;
        trace.memory.resize_with(att.memory.len(), Vec::new);
        for (l, w) in att.memory.iter().enumerate() {
            trace.memory[l].push(w.map(|v| collect(&tape, v)));
        }
        trace.visual.resize_with(att.visual.len(), Vec::new);
        for (s, &w) in att.visual.iter().enumerate() {
            trace.visual[s].push(collect(&tape, w));
        }
        let word = argmax(tape.value(step.output_logits()).data());
        if word == EOS {
            break;
        }
        tokens.push(word);
        prev = word;
    }
    Ok(Generation {
        video_id: video.id.clone(),
        tokens,
        attention: trace,
    })
}

/// One line of a generation dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub video_id: String,
    pub caption: String,
    pub tokens: Vec<usize>,
    pub attention: AttentionTrace,
}

impl GenerationRecord {
    pub fn new(g: Generation, vocab: &Vocabulary) -> Self {
        GenerationRecord {
            caption: g.text(vocab),
            video_id: g.video_id,
            tokens: g.tokens,
            attention: g.attention,
        }
    }
}

pub fn write_generations(records: &[GenerationRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    write_file(path, out)
}

pub fn read_generations(path: &Path) -> Result<Vec<GenerationRecord>> {
    read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu4: f64,
    pub cider: f64,
    /// Mean generated caption length in words.
    pub mean_len: f64,
    pub config_hash: String,
}

/// SHA-256 over the decoder configuration and model extents, hex encoded.
pub fn config_hash(decoder: &Decoder) -> String {
    let payload = serde_json::json!({
        "decoder": decoder.config(),
        "vocab_size": decoder.vocab_size(),
        "feature_width": decoder.feature_width(),
    });
    let digest = Sha256::digest(payload.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Metrics of generated captions against the references of the same videos,
/// in the same order.
pub fn score_captions(captions: &[String], references: &[Vec<String>], config_hash: String) -> Result<EvalReport> {
    let cands: Vec<Vec<String>> = captions.iter().map(|c| tokenize(c)).collect();
    let refs: Vec<Vec<Vec<String>>> = references
        .iter()
        .map(|r| r.iter().map(|c| tokenize(c)).collect())
        .collect();
    Ok(EvalReport {
        bleu4: bleu4(&cands, &refs)?,
        cider: cider(&cands, &refs)?,
        mean_len: cands.iter().map(Vec::len).sum::<usize>() as f64 / cands.len().max(1) as f64,
        config_hash,
    })
}

/// Greedy-decodes every example and scores the results against their
/// reference captions.
pub fn evaluate_split(
    decoder: &Decoder,
    params: &ParamSet,
    examples: &[&Example],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<(EvalReport, Vec<GenerationRecord>)> {
    if examples.is_empty() {
        return Err(Error::EmptyInput { op: "evaluate_split" });
    }
    let mut records = Vec::with_capacity(examples.len());
    for ex in examples {
        records.push(GenerationRecord::new(
            greedy_decode(decoder, params, &ex.video, max_len)?,
            vocab,
        ));
    }
    let captions: Vec<String> = records.iter().map(|r| r.caption.clone()).collect();
    let refs: Vec<Vec<String>> = examples
        .iter()
        .map(|e| e.captions.iter().map(|c| c.text.clone()).collect())
        .collect();
    let report = score_captions(&captions, &refs, config_hash(decoder))?;
    Ok((report, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecoderConfig;
    use crate::tensor::Tensor;

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5, 0.2]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }

    fn small(kind: &str) -> (Decoder, ParamSet, VideoInput) {
        let cfg = DecoderConfig {
            n: 6,
            d_a: 4,
            decoder: kind.parse().unwrap(),
            ..Default::default()
        };
        let d = Decoder::new(&cfg, 10, 5).unwrap();
        let p = d.init_params();
        let v = VideoInput::new(
            "v",
            Tensor::new(vec![3, 5], (0..15).map(|i| (i as f64).cos()).collect()).unwrap(),
        )
        .unwrap();
        (d, p, v)
    }

    #[test]
    fn eos_biased_head_gives_empty_caption() {
        for kind in ["memory", "lstm"] {
            let (d, mut p, v) = small(kind);
            let id = p.find("out_head.b").unwrap();
            let mut b = p.get(id).clone();
            b.data_mut()[EOS] = 1e6;
            p.set(id, b).unwrap();
            let g = greedy_decode(&d, &p, &v, 7).unwrap();
            assert!(g.tokens.is_empty());
        }
    }

    #[test]
    fn length_bounded_and_weights_normalized() {
        for kind in ["memory", "lstm"] {
            let (d, mut p, v) = small(kind);
            let id = p.find("out_head.b").unwrap();
            let mut b = p.get(id).clone();
            b.data_mut()[EOS] = -1e6;
            p.set(id, b).unwrap();
            let g = greedy_decode(&d, &p, &v, 4).unwrap();
            assert_eq!(g.tokens.len(), 4);
            let mut count = 0;
            for w in g.attention.all_weights() {
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                count += 1;
            }
            assert!(count > 0);
            assert_eq!(greedy_decode(&d, &p, &v, 4).unwrap(), g);
        }
    }

    #[test]
    fn memory_trace_shape() {
        let (d, mut p, v) = small("memory");
        let id = p.find("out_head.b").unwrap();
        let mut b = p.get(id).clone();
        b.data_mut()[EOS] = -1e6;
        p.set(id, b).unwrap();
        let g = greedy_decode(&d, &p, &v, 3).unwrap();
        assert_eq!(g.attention.memory.len(), 5);
        assert_eq!(g.attention.visual.len(), 2);
        for layer in &g.attention.memory {
            assert_eq!(layer.len(), 3);
            assert!(layer[0].is_none());
            // Bank holds t entries when step t + 1 reads it.
            assert_eq!(layer[1].as_ref().unwrap().len(), 1);
            assert_eq!(layer[2].as_ref().unwrap().len(), 2);
        }
        for site in &g.attention.visual {
            assert!(site.iter().all(|w| w.len() == 3));
        }
    }

    #[test]
    fn hash_tracks_config() {
        let (a, _, _) = small("memory");
        let (b, _, _) = small("lstm");
        assert_eq!(config_hash(&a).len(), 64);
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
