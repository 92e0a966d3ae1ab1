//! Caption decoders: the five-layer hierarchical memory decoder and a
//! one-layer attention LSTM baseline, behind one incremental interface.

mod audit;
mod loss;
mod lstm;
mod memory;

pub use audit::{count_params, AuditItem, AuditScope, ParamAudit};
pub use loss::{multilayer_loss, LossBreakdown};
pub use lstm::{lstm_baseline_step, LstmCellParams, LstmDecoder, LstmParams, LstmSession};
pub use memory::{
    cold_start_step, gated_activation, layer_step, memory_step, predict_word, project_and_pool, ColdStartState,
    DecoderParams, LayerOutput, MemoryBank, MemoryDecoder, MemoryLayerParams, MemorySession, MemoryStepOutput,
    VideoContext,
};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionKind;
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamLayout, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

/// Number of stacked memory layers.
pub const NUM_LAYERS: usize = 5;
/// 1-based indices of the layers that carry a supervised word head.
pub const SUPERVISED_LAYERS: [usize; 3] = [1, 3, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    #[default]
    Memory,
    Lstm,
}

impl std::str::FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memory" => Ok(DecoderKind::Memory),
            "lstm" => Ok(DecoderKind::Lstm),
            other => Err(Error::Config(format!("unknown decoder `{other}` (memory|lstm)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    /// Channel width of projected features, fusion results and hidden states.
    pub n: usize,
    /// Attention width.
    pub d_a: usize,
    pub lambda1: f64,
    pub lambda3: f64,
    pub lambda5: f64,
    pub max_caption_len: usize,
    pub seed: u64,
    pub attention: AttentionKind,
    pub decoder: DecoderKind,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            n: 512,
            d_a: 100,
            lambda1: 0.2,
            lambda3: 0.2,
            lambda5: 0.6,
            max_caption_len: 30,
            seed: 42,
            attention: AttentionKind::Soft,
            decoder: DecoderKind::Memory,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d_a == 0 {
            return Err(Error::Config("n and d_a must be positive".into()));
        }
        if self.max_caption_len == 0 {
            return Err(Error::Config("max_caption_len must be positive".into()));
        }
        let lambdas = self.lambdas();
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative, got {lambdas:?}"
            )));
        }
        let sum: f64 = lambdas.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "lambda1 + lambda3 + lambda5 must sum to 1, got {sum}"
            )));
        }
        if !(self.lambda5 > self.lambda1 && self.lambda5 > self.lambda3) {
            return Err(Error::Config(format!(
                "lambda5 ({}) must be larger than lambda1 ({}) and lambda3 ({})",
                self.lambda5, self.lambda1, self.lambda3
            )));
        }
        Ok(())
    }

    pub fn lambdas(&self) -> [f64; 3] {
        [self.lambda1, self.lambda3, self.lambda5]
    }
}

/// One video's raw frame descriptors, `[m, q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoInput {
    pub id: String,
    pub features: Tensor,
}

impl VideoInput {
    pub fn new(id: impl Into<String>, features: Tensor) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::InvalidArgument(format!(
                "frame features must be [m, q], got {:?}",
                features.shape()
            )));
        }
        Ok(VideoInput {
            id: id.into(),
            features,
        })
    }

    pub fn frames(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.features.shape()[1]
    }
}

/// Attention weights produced during one decoding step.
#[derive(Debug, Clone, Default)]
pub struct StepAttention {
    /// Memory attention per layer; `None` where no memory read happened
    /// (first step, or a decoder without memory layers).
    pub memory: Vec<Option<Var>>,
    /// Visual attention per site.
    pub visual: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct DecodeStep {
    /// Logits for every supervised head, output head last.
    pub heads: Vec<Var>,
    pub attention: StepAttention,
}

impl DecodeStep {
    pub fn output_logits(&self) -> Var {
        *self.heads.last().expect("at least one head")
    }
}

/// Either decoder, constructed from a config.
#[derive(Debug, Clone)]
pub enum Decoder {
    Memory(MemoryDecoder),
    Lstm(LstmDecoder),
}

impl Decoder {
    pub fn new(config: &DecoderConfig, vocab_size: usize, feature_width: usize) -> Result<Self> {
        config.validate()?;
        Ok(match config.decoder {
            DecoderKind::Memory => Decoder::Memory(MemoryDecoder::new(config, vocab_size, feature_width)?),
            DecoderKind::Lstm => Decoder::Lstm(LstmDecoder::new(config, vocab_size, feature_width)?),
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        match self {
            Decoder::Memory(d) => d.config(),
            Decoder::Lstm(d) => d.config(),
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        match self {
            Decoder::Memory(d) => d.layout(),
            Decoder::Lstm(d) => d.layout(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Decoder::Memory(d) => d.vocab_size(),
            Decoder::Lstm(d) => d.vocab_size(),
        }
    }

    pub fn feature_width(&self) -> usize {
        match self {
            Decoder::Memory(d) => d.feature_width(),
            Decoder::Lstm(d) => d.feature_width(),
        }
    }

    /// Fresh parameters drawn from the config seed.
    pub fn init_params(&self) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config().seed);
        self.layout().clone().initialize(&mut rng)
    }

    /// Loss weight of each head, aligned with [`DecodeStep::heads`].
    pub fn head_weights(&self) -> Vec<f64> {
        match self {
            Decoder::Memory(d) => d.config().lambdas().to_vec(),
            Decoder::Lstm(_) => vec![1.0],
        }
    }

    pub fn head_labels(&self) -> Vec<&'static str> {
        match self {
            Decoder::Memory(_) => vec!["layer1", "layer3", "layer5"],
            Decoder::Lstm(_) => vec!["lstm"],
        }
    }

    /// Starts decoding one video on `tape`.
    pub fn start<'d>(&'d self, tape: &mut Tape, bound: &BoundParams, video: &VideoInput) -> Result<Session<'d>> {
        if video.width() != self.feature_width() {
            return Err(Error::shape(
                "decoder features",
                video.features.shape(),
                &[video.frames(), self.feature_width()],
            ));
        }
        Ok(match self {
            Decoder::Memory(d) => Session::Memory(Box::new(d.start(tape, bound, video)?)),
            Decoder::Lstm(d) => Session::Lstm(d.start(tape, bound, video)?),
        })
    }

    /// Teacher-forced pass over a caption `[BOS, w_1, …, w_k, EOS]`: step `t`
    /// is conditioned on `caption[t − 1]` and predicts `caption[t]`.
    pub fn teacher_forced(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        video: &VideoInput,
        caption: &[usize],
    ) -> Result<Vec<DecodeStep>> {
        if caption.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "caption needs at least BOS and one target, got {} tokens",
                caption.len()
            )));
        }
        if let Some(&bad) = caption.iter().find(|&&t| t >= self.vocab_size()) {
            return Err(Error::IndexOutOfRange {
                op: "caption token",
                index: bad,
                extent: self.vocab_size(),
            });
        }
        let mut session = self.start(tape, bound, video)?;
        caption[..caption.len() - 1]
            .iter()
            .map(|&prev| session.step(tape, prev))
            .collect()
    }
}

/// Incremental decoding state for one video on one tape.
pub enum Session<'d> {
    Memory(Box<memory::MemorySession<'d>>),
    Lstm(lstm::LstmSession<'d>),
}

impl Session<'_> {
    /// Runs one step conditioned on the previous token (BOS at the first step).
    pub fn step(&mut self, tape: &mut Tape, prev_token: usize) -> Result<DecodeStep> {
        match self {
            Session::Memory(s) => s.step(tape, prev_token),
            Session::Lstm(s) => s.step(tape, prev_token),
        }
    }
}

/// 64-bit FNV-1a, used to derive per-video seeds from ids.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(DecoderConfig::default().validate().is_ok());
        let bad_sum = DecoderConfig {
            lambda5: 0.5,
            ..Default::default()
        };
        let msg = bad_sum.validate().unwrap_err().to_string();
        assert!(msg.contains("sum to 1"), "{msg}");
        let bad_order = DecoderConfig {
            lambda1: 0.5,
            lambda3: 0.1,
            lambda5: 0.4,
            ..Default::default()
        };
        assert!(bad_order.validate().unwrap_err().to_string().contains("larger"));
        let zero = DecoderConfig {
            lambda1: 0.0,
            lambda3: 0.0,
            lambda5: 1.0,
            ..Default::default()
        };
        assert!(zero.validate().is_ok());
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("lstm".parse::<DecoderKind>().unwrap(), DecoderKind::Lstm);
        assert_eq!("dot".parse::<AttentionKind>().unwrap(), AttentionKind::Dot);
        assert!("gru".parse::<DecoderKind>().is_err());
    }
}
