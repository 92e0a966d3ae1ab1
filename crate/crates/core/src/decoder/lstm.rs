//! One-layer attention LSTM used as the recurrent baseline.
//!
//! The cell reads `[word embedding, attended frame context]` where the context
//! is soft attention over the raw frame descriptors, queried by the previous
//! hidden state. Gate order inside the stacked `4n` pre-activation is
//! input, forget, candidate, output.

use super::{DecodeStep, DecoderConfig, StepAttention, VideoInput};
use crate::attention::{dot_attention, soft_attention, AttentionKind, AttentionParams};
use crate::error::{Error, Result};
use crate::params::{Affine, BoundParams, ParamGroup, ParamId, ParamLayout};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmCellParams<T> {
    /// `[input width, 4n]`.
    pub wx: T,
    /// `[n, 4n]`.
    pub wh: T,
    /// `[4n]`.
    pub b: T,
}

impl<T: Copy> LstmCellParams<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> LstmCellParams<U> {
        LstmCellParams {
            wx: f(self.wx),
            wh: f(self.wh),
            b: f(self.b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    pub cell: LstmCellParams<T>,
    pub vis_attn: Option<AttentionParams<T>>,
    pub out_head: Affine<T>,
    pub embedding: T,
}

impl<T: Copy> LstmParams<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> LstmParams<U> {
        LstmParams {
            cell: self.cell.map(&f),
            vis_attn: self.vis_attn.map(|a| a.map(&f)),
            out_head: self.out_head.map(&f),
            embedding: f(self.embedding),
        }
    }
}

/// Standard LSTM update. Returns `(hidden, cell)`.
pub fn lstm_baseline_step(
    tape: &mut Tape,
    prev_hidden: Var,
    prev_cell: Var,
    word_embedding: Var,
    visual_context: Var,
    params: &LstmCellParams<Var>,
) -> Result<(Var, Var)> {
    let n = tape.shape(prev_hidden)[0];
    if tape.shape(prev_cell) != [n] || tape.shape(params.b) != [4 * n] {
        return Err(Error::shape("lstm_baseline_step", tape.shape(prev_cell), &[n]));
    }
    let x = tape.concat(&[word_embedding, visual_context])?;
    let zx = tape.linear(x, params.wx, Some(params.b))?;
    let zh = tape.linear(prev_hidden, params.wh, None)?;
    let z = tape.add(zx, zh)?;
    let gate = |tape: &mut Tape, k: usize| tape.slice(z, k * n, n);
    let i = gate(tape, 0)?;
    let i = tape.sigmoid(i);
    let f = gate(tape, 1)?;
    let f = tape.sigmoid(f);
    let g = gate(tape, 2)?;
    let g = tape.tanh(g);
    let o = gate(tape, 3)?;
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, prev_cell)?;
    let write = tape.mul(i, g)?;
    let cell = tape.add(keep, write)?;
    let squashed = tape.tanh(cell);
    let hidden = tape.mul(o, squashed)?;
    Ok((hidden, cell))
}

#[derive(Debug, Clone)]
pub struct LstmDecoder {
    config: DecoderConfig,
    vocab_size: usize,
    feature_width: usize,
    layout: ParamLayout,
    ids: LstmParams<ParamId>,
}

impl LstmDecoder {
    pub fn new(config: &DecoderConfig, vocab_size: usize, feature_width: usize) -> Result<Self> {
        if vocab_size == 0 || feature_width == 0 {
            return Err(Error::Config(
                "vocabulary size and feature width must be positive".into(),
            ));
        }
        let n = config.n;
        let q = feature_width;
        if config.attention == AttentionKind::Dot && q != n {
            return Err(Error::Config(format!(
                "dot attention in the LSTM baseline compares the hidden state with raw frame features and needs n == q (n = {n}, q = {q})"
            )));
        }
        let mut layout = ParamLayout::new();
        let input = n + q;
        let cell = LstmCellParams {
            wx: layout.add("lstm.wx", &[input, 4 * n], input, ParamGroup::Core),
            wh: layout.add("lstm.wh", &[n, 4 * n], n, ParamGroup::Core),
            b: layout.add("lstm.b", &[4 * n], n, ParamGroup::Core),
        };
        let vis_attn = (config.attention == AttentionKind::Soft)
            .then(|| AttentionParams::declare(&mut layout, "vis_attn", n, q, config.d_a, ParamGroup::Core));
        let ids = LstmParams {
            cell,
            vis_attn,
            out_head: Affine::declare(&mut layout, "out_head", n, vocab_size, ParamGroup::OutputHead),
            embedding: layout.add("embedding", &[vocab_size, n], n, ParamGroup::Embedding),
        };
        Ok(LstmDecoder {
            config: config.clone(),
            vocab_size,
            feature_width,
            layout,
            ids,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub(super) fn start<'d>(
        &'d self,
        tape: &mut Tape,
        bound: &BoundParams,
        video: &VideoInput,
    ) -> Result<LstmSession<'d>> {
        let n = self.config.n;
        let frames = tape.constant(video.features.clone());
        Ok(LstmSession {
            decoder: self,
            p: self.ids.map(|id| bound[id]),
            frames,
            hidden: tape.constant(Tensor::zeros(&[n])),
            cell: tape.constant(Tensor::zeros(&[n])),
        })
    }
}

pub struct LstmSession<'d> {
    decoder: &'d LstmDecoder,
    p: LstmParams<Var>,
    frames: Var,
    hidden: Var,
    cell: Var,
}

impl LstmSession<'_> {
    pub fn step(&mut self, tape: &mut Tape, prev_token: usize) -> Result<DecodeStep> {
        if prev_token >= self.decoder.vocab_size {
            return Err(Error::IndexOutOfRange {
                op: "previous token",
                index: prev_token,
                extent: self.decoder.vocab_size,
            });
        }
        let word = tape.row(self.p.embedding, prev_token)?;
        let attn = match &self.p.vis_attn {
            Some(a) => soft_attention(tape, self.hidden, self.frames, a)?,
            None => dot_attention(tape, self.hidden, self.frames)?,
        };
        let (hidden, cell) = lstm_baseline_step(tape, self.hidden, self.cell, word, attn.pooled, &self.p.cell)?;
        self.hidden = hidden;
        self.cell = cell;
        let logits = self.p.out_head.apply(tape, hidden)?;
        Ok(DecodeStep {
            heads: vec![logits],
            attention: StepAttention {
                memory: Vec::new(),
                visual: vec![attn.weights],
            },
        })
    }
}
