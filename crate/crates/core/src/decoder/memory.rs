//! Hierarchical memory decoder.
//!
//! Per step `t ≥ 2`:
//!
//! ```text
//! layer 1  input M_t = fuse(V, C_t)                      bank: M_1..M_{t-1}
//! layer 2  input I²_t = [h¹_t, φ¹_t(Z)] · w_2 + b_2      bank: I²_1..I²_{t-1}
//! layer 3  input h²_t                                     bank: h²_1..h²_{t-1}
//! layer 4  input h³_t                                     bank: h³_1..h³_{t-1}
//! layer 5  input I⁵_t = h⁴_t + φ⁴_t(Z)                   bank: I⁵_1..I⁵_{t-1}
//! ```
//!
//! Each layer attends over its bank with its own input as the query and
//! produces `tanh(x·w_f + b_f) ⊙ σ(A·w_g + b_g)`, then appends its input to
//! the bank. Step 1 has empty banks: every layer adds a seeded normal vector
//! to its incoming signal and uses that input in place of the attention read.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{fnv1a, DecodeStep, DecoderConfig, StepAttention, VideoInput, NUM_LAYERS};
use crate::attention::{attend_bank, dot_attention, soft_attention, AttentionKind, AttentionParams, AttentionResult};
use crate::error::{Error, Result};
use crate::fusion::{ccmf_fuse, CcmfParams};
use crate::params::{Affine, BoundParams, ParamGroup, ParamId, ParamLayout};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryLayerParams<T> {
    pub wf: T,
    pub bf: T,
    pub wg: T,
    pub bg: T,
    /// `None` when the decoder uses dot-product attention.
    pub mem_attn: Option<AttentionParams<T>>,
}

impl<T: Copy> MemoryLayerParams<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> MemoryLayerParams<U> {
        MemoryLayerParams {
            wf: f(self.wf),
            bf: f(self.bf),
            wg: f(self.wg),
            bg: f(self.bg),
            mem_attn: self.mem_attn.map(|a| a.map(&f)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<T> {
    pub fusion: CcmfParams<T>,
    pub layers: Vec<MemoryLayerParams<T>>,
    /// `w_2, b_2`: `[2n, n]` and `[n]`.
    pub concat_proj: Affine<T>,
    pub vis_attn_1: Option<AttentionParams<T>>,
    pub vis_attn_4: Option<AttentionParams<T>>,
    /// `w_p, b_p` applied to `h⁵ + φ⁴`.
    pub out_head: Affine<T>,
    pub aux_head_1: Affine<T>,
    pub aux_head_3: Affine<T>,
    /// `[vocab, n]`.
    pub embedding: T,
    /// `W_c`, `[q, n]`.
    pub feature_proj: T,
}

impl<T: Copy> DecoderParams<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> DecoderParams<U> {
        DecoderParams {
            fusion: self.fusion.map(&f),
            layers: self.layers.iter().map(|l| l.map(&f)).collect(),
            concat_proj: self.concat_proj.map(&f),
            vis_attn_1: self.vis_attn_1.map(|a| a.map(&f)),
            vis_attn_4: self.vis_attn_4.map(|a| a.map(&f)),
            out_head: self.out_head.map(&f),
            aux_head_1: self.aux_head_1.map(&f),
            aux_head_3: self.aux_head_3.map(&f),
            embedding: f(self.embedding),
            feature_proj: f(self.feature_proj),
        }
    }
}

impl DecoderParams<ParamId> {
    fn declare(layout: &mut ParamLayout, config: &DecoderConfig, vocab: usize, q: usize) -> Self {
        let n = config.n;
        let d_a = config.d_a;
        let soft = config.attention == AttentionKind::Soft;
        let attn = |layout: &mut ParamLayout, prefix: &str| {
            soft.then(|| AttentionParams::declare(layout, prefix, n, n, d_a, ParamGroup::Core))
        };
        let fusion = CcmfParams::declare(layout, "fusion", n);
        let layers = (1..=NUM_LAYERS)
            .map(|l| MemoryLayerParams {
                wf: layout.add(format!("layer{l}.wf"), &[n, n], n, ParamGroup::Core),
                bf: layout.add(format!("layer{l}.bf"), &[n], n, ParamGroup::Core),
                wg: layout.add(format!("layer{l}.wg"), &[n, n], n, ParamGroup::Core),
                bg: layout.add(format!("layer{l}.bg"), &[n], n, ParamGroup::Core),
                mem_attn: attn(layout, &format!("layer{l}.mem_attn")),
            })
            .collect();
        let concat_proj = Affine::declare(layout, "concat_proj", 2 * n, n, ParamGroup::Core);
        let vis_attn_1 = attn(layout, "vis_attn_1");
        let vis_attn_4 = attn(layout, "vis_attn_4");
        DecoderParams {
            fusion,
            layers,
            concat_proj,
            vis_attn_1,
            vis_attn_4,
            out_head: Affine::declare(layout, "out_head", n, vocab, ParamGroup::OutputHead),
            aux_head_1: Affine::declare(layout, "aux_head_1", n, vocab, ParamGroup::AuxHead),
            aux_head_3: Affine::declare(layout, "aux_head_3", n, vocab, ParamGroup::AuxHead),
            embedding: layout.add("embedding", &[vocab, n], n, ParamGroup::Embedding),
            feature_proj: layout.add("feature_proj", &[q, n], q, ParamGroup::FeatureProjection),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MemoryDecoder {
    config: DecoderConfig,
    vocab_size: usize,
    feature_width: usize,
    layout: ParamLayout,
    ids: DecoderParams<ParamId>,
}

impl MemoryDecoder {
    pub fn new(config: &DecoderConfig, vocab_size: usize, feature_width: usize) -> Result<Self> {
        if vocab_size == 0 || feature_width == 0 {
            return Err(Error::Config(
                "vocabulary size and feature width must be positive".into(),
            ));
        }
        let mut layout = ParamLayout::new();
        let ids = DecoderParams::declare(&mut layout, config, vocab_size, feature_width);
        Ok(MemoryDecoder {
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

    pub fn ids(&self) -> &DecoderParams<ParamId> {
        &self.ids
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    /// Projects the video, draws its cold-start vectors and records both on
    /// the tape.
    pub fn context(&self, tape: &mut Tape, p: &DecoderParams<Var>, video: &VideoInput) -> Result<VideoContext> {
        let x = tape.constant(video.features.clone());
        let (z, v) = project_and_pool(tape, x, p.feature_proj)?;
        let cold = ColdStartState::generate(self.config.seed, &video.id, self.config.n);
        let cold = cold.h.into_iter().map(|h| tape.constant(h)).collect();
        Ok(VideoContext { z, v, cold })
    }

    pub(super) fn start<'d>(
        &'d self,
        tape: &mut Tape,
        bound: &BoundParams,
        video: &VideoInput,
    ) -> Result<MemorySession<'d>> {
        let p = self.ids.map(|id| bound[id]);
        let ctx = self.context(tape, &p, video)?;
        Ok(MemorySession {
            decoder: self,
            p,
            ctx,
            bank: MemoryBank::new(),
        })
    }
}

/// Per-video values shared by every step.
#[derive(Debug, Clone)]
pub struct VideoContext {
    /// Projected frames, `[m, n]`.
    pub z: Var,
    /// Mean of the projected frames, `[n]`.
    pub v: Var,
    /// Cold-start vectors, one per layer.
    pub cold: Vec<Var>,
}

/// Seeded standard-normal vectors used at the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct ColdStartState {
    pub h: Vec<Tensor>,
}

impl ColdStartState {
    /// Reproducible from `(seed, video_id, n)`.
    pub fn generate(seed: u64, video_id: &str, n: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(video_id.as_bytes()).rotate_left(17));
        let h = (0..NUM_LAYERS)
            .map(|_| Tensor::vector((0..n).map(|_| StandardNormal.sample(&mut rng)).collect()))
            .collect();
        ColdStartState { h }
    }
}

/// Per-layer ordered sets of stored vectors.
#[derive(Debug, Clone, Default)]
pub struct MemoryBank {
    layers: [Vec<Var>; NUM_LAYERS],
}

impl MemoryBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Entries of 1-based `layer`.
    pub fn entries(&self, layer: usize) -> &[Var] {
        &self.layers[layer - 1]
    }

    pub fn len(&self, layer: usize) -> usize {
        self.layers[layer - 1].len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(Vec::is_empty)
    }

    fn push(&mut self, layer: usize, v: Var) {
        self.layers[layer - 1].push(v);
    }
}

/// `Z = X · W_c` and `V = mean_i Z_i`.
pub fn project_and_pool(tape: &mut Tape, x: Var, wc: Var) -> Result<(Var, Var)> {
    if tape.shape(x).len() != 2 {
        return Err(Error::shape("project_and_pool", tape.shape(x), tape.shape(wc)));
    }
    let z = tape.linear(x, wc, None)?;
    let v = tape.mean_rows(z)?;
    Ok((z, v))
}

/// `tanh(input · w_f + b_f) ⊙ σ(attended · w_g + b_g)`.
pub fn gated_activation(tape: &mut Tape, input: Var, attended: Var, layer: &MemoryLayerParams<Var>) -> Result<Var> {
    let f = tape.linear(input, layer.wf, Some(layer.bf))?;
    let f = tape.tanh(f);
    let g = tape.linear(attended, layer.wg, Some(layer.bg))?;
    let g = tape.sigmoid(g);
    tape.mul(f, g)
}

#[derive(Debug, Clone, Copy)]
pub struct LayerOutput {
    pub h: Var,
    /// Memory attention weights over the bank entries read this step.
    pub weights: Var,
}

/// One memory layer at a step `t ≥ 2`: attends over the layer's bank with
/// `input` as query, applies the gated unit, then stores `input`.
pub fn layer_step(
    tape: &mut Tape,
    layer: usize,
    input: Var,
    bank: &mut MemoryBank,
    params: &MemoryLayerParams<Var>,
) -> Result<LayerOutput> {
    if !(1..=NUM_LAYERS).contains(&layer) {
        return Err(Error::IndexOutOfRange {
            op: "layer_step",
            index: layer,
            extent: NUM_LAYERS,
        });
    }
    if bank.len(layer) == 0 {
        return Err(Error::InvalidArgument(format!(
            "memory bank of layer {layer} is empty after the first step"
        )));
    }
    let AttentionResult { weights, pooled } = attend_bank(tape, input, bank.entries(layer), params.mem_attn.as_ref())?;
    let h = gated_activation(tape, input, pooled, params)?;
    bank.push(layer, input);
    Ok(LayerOutput { h, weights })
}

fn visual_attention(
    tape: &mut Tape,
    query: Var,
    z: Var,
    params: Option<&AttentionParams<Var>>,
) -> Result<AttentionResult> {
    match params {
        Some(p) => soft_attention(tape, query, z, p),
        None => dot_attention(tape, query, z),
    }
}

fn concat_input(tape: &mut Tape, h: Var, phi: Var, proj: &Affine<Var>) -> Result<Var> {
    let cat = tape.concat(&[h, phi])?;
    proj.apply(tape, cat)
}

/// Everything one step produces.
#[derive(Debug, Clone)]
pub struct MemoryStepOutput {
    /// `h¹..h⁵`.
    pub hidden: [Var; NUM_LAYERS],
    /// The input each layer consumed (and stored) this step.
    pub inputs: [Var; NUM_LAYERS],
    /// `φ¹(Z)` and `φ⁴(Z)`.
    pub phi: [Var; 2],
    /// Logits of the layer-1, layer-3 and output heads.
    pub logits: [Var; 3],
    pub memory_weights: [Option<Var>; NUM_LAYERS],
    pub visual_weights: [Var; 2],
}

fn heads(tape: &mut Tape, p: &DecoderParams<Var>, h1: Var, h3: Var, h5: Var, phi4: Var) -> Result<[Var; 3]> {
    let l1 = p.aux_head_1.apply(tape, h1)?;
    let l3 = p.aux_head_3.apply(tape, h3)?;
    let out_in = tape.add(h5, phi4)?;
    let l5 = p.out_head.apply(tape, out_in)?;
    Ok([l1, l3, l5])
}

/// First step: layer 1 consumes `H¹ + V`; layer `l > 1` consumes
/// `Hˡ + h¹ˡ⁻¹` routed through its usual input construction. With empty banks
/// the attention read is replaced by the layer input. Seeds every bank.
pub fn cold_start_step(
    tape: &mut Tape,
    ctx: &VideoContext,
    bank: &mut MemoryBank,
    p: &DecoderParams<Var>,
) -> Result<MemoryStepOutput> {
    if !bank.is_empty() {
        return Err(Error::InvalidArgument("cold start needs empty memory banks".into()));
    }
    let x1 = tape.add(ctx.cold[0], ctx.v)?;
    let h1 = gated_activation(tape, x1, x1, &p.layers[0])?;

    let u2 = tape.add(ctx.cold[1], h1)?;
    let vis1 = visual_attention(tape, u2, ctx.z, p.vis_attn_1.as_ref())?;
    let x2 = concat_input(tape, u2, vis1.pooled, &p.concat_proj)?;
    let h2 = gated_activation(tape, x2, x2, &p.layers[1])?;

    let x3 = tape.add(ctx.cold[2], h2)?;
    let h3 = gated_activation(tape, x3, x3, &p.layers[2])?;

    let x4 = tape.add(ctx.cold[3], h3)?;
    let h4 = gated_activation(tape, x4, x4, &p.layers[3])?;

    let u5 = tape.add(ctx.cold[4], h4)?;
    let vis4 = visual_attention(tape, u5, ctx.z, p.vis_attn_4.as_ref())?;
    let x5 = tape.add(u5, vis4.pooled)?;
    let h5 = gated_activation(tape, x5, x5, &p.layers[4])?;

    let inputs = [x1, x2, x3, x4, x5];
    for (l, &x) in inputs.iter().enumerate() {
        bank.push(l + 1, x);
    }
    let logits = heads(tape, p, h1, h3, h5, vis4.pooled)?;
    Ok(MemoryStepOutput {
        hidden: [h1, h2, h3, h4, h5],
        inputs,
        phi: [vis1.pooled, vis4.pooled],
        logits,
        memory_weights: [None; NUM_LAYERS],
        visual_weights: [vis1.weights, vis4.weights],
    })
}

/// A step `t ≥ 2` given the lexical feature `C_t`.
pub fn memory_step(
    tape: &mut Tape,
    ctx: &VideoContext,
    bank: &mut MemoryBank,
    p: &DecoderParams<Var>,
    lexical: Var,
) -> Result<MemoryStepOutput> {
    let m = ccmf_fuse(tape, ctx.v, lexical, &p.fusion)?;
    let o1 = layer_step(tape, 1, m, bank, &p.layers[0])?;

    let vis1 = visual_attention(tape, o1.h, ctx.z, p.vis_attn_1.as_ref())?;
    let x2 = concat_input(tape, o1.h, vis1.pooled, &p.concat_proj)?;
    let o2 = layer_step(tape, 2, x2, bank, &p.layers[1])?;
    let o3 = layer_step(tape, 3, o2.h, bank, &p.layers[2])?;
    let o4 = layer_step(tape, 4, o3.h, bank, &p.layers[3])?;

    let vis4 = visual_attention(tape, o4.h, ctx.z, p.vis_attn_4.as_ref())?;
    let x5 = tape.add(o4.h, vis4.pooled)?;
    let o5 = layer_step(tape, 5, x5, bank, &p.layers[4])?;

    let logits = heads(tape, p, o1.h, o3.h, o5.h, vis4.pooled)?;
    Ok(MemoryStepOutput {
        hidden: [o1.h, o2.h, o3.h, o4.h, o5.h],
        inputs: [m, x2, o2.h, o3.h, x5],
        phi: [vis1.pooled, vis4.pooled],
        logits,
        memory_weights: [o1, o2, o3, o4, o5].map(|o| Some(o.weights)),
        visual_weights: [vis1.weights, vis4.weights],
    })
}

/// `softmax(w_p (h⁵ + φ⁴) + b_p)`.
pub fn predict_word(tape: &mut Tape, h5: Var, phi4: Var, head: &Affine<Var>) -> Result<Var> {
    let x = tape.add(h5, phi4)?;
    let logits = head.apply(tape, x)?;
    tape.softmax(logits)
}

pub struct MemorySession<'d> {
    decoder: &'d MemoryDecoder,
    p: DecoderParams<Var>,
    ctx: VideoContext,
    bank: MemoryBank,
}

impl MemorySession<'_> {
    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn context(&self) -> &VideoContext {
        &self.ctx
    }

    pub fn params(&self) -> &DecoderParams<Var> {
        &self.p
    }

    /// Runs one step and returns the full per-layer output.
    pub fn step_full(&mut self, tape: &mut Tape, prev_token: usize) -> Result<MemoryStepOutput> {
        if prev_token >= self.decoder.vocab_size {
            return Err(Error::IndexOutOfRange {
                op: "previous token",
                index: prev_token,
                extent: self.decoder.vocab_size,
            });
        }
        if self.bank.is_empty() {
            // the first step is conditioned on BOS implicitly; the token is unused
            return cold_start_step(tape, &self.ctx, &mut self.bank, &self.p);
        }
        let c = tape.row(self.p.embedding, prev_token)?;
        memory_step(tape, &self.ctx, &mut self.bank, &self.p, c)
    }

    pub fn step(&mut self, tape: &mut Tape, prev_token: usize) -> Result<DecodeStep> {
        let out = self.step_full(tape, prev_token)?;
        Ok(DecodeStep {
            heads: out.logits.to_vec(),
            attention: StepAttention {
                memory: out.memory_weights.to_vec(),
                visual: out.visual_weights.to_vec(),
            },
        })
    }
}
