//! Finite-difference verification of every tape primitive, every model block
//! and the full training loss of each decoder variant at a tiny size.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::attention::{dot_attention, soft_attention, AttentionKind, AttentionParams};
use crate::decoder::{
    gated_activation, lstm_baseline_step, Decoder, DecoderConfig, DecoderKind, LstmCellParams, MemoryLayerParams,
    VideoInput,
};
use crate::error::Result;
use crate::fusion::{ccmf_fuse, CcmfParams};
use crate::params::{Affine, BoundParams};
use crate::tensor::{grad_check_many, GradCheckReport, Tape, Tensor, Var};
use crate::train::caption_loss;

pub const SUITE_EPSILON: f64 = 1e-6;
pub const SUITE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < SUITE_TOLERANCE
    }
}

struct Points(ChaCha8Rng);

impl Points {
    fn tensor(&mut self, shape: &[usize]) -> Tensor {
        let d = Uniform::new_inclusive(-1.0, 1.0).expect("finite range");
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| d.sample(&mut self.0)).collect()).expect("positive extents")
    }

    /// Values bounded away from zero, for functions with a kink there.
    fn off_zero(&mut self, shape: &[usize]) -> Tensor {
        let mut t = self.tensor(shape);
        t.data_mut().iter_mut().for_each(|x| *x = x.signum() * (0.2 + x.abs()));
        t
    }
}

type Check = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn entry(name: &'static str, f: Check, points: Vec<Tensor>) -> Result<SuiteEntry> {
    Ok(SuiteEntry {
        name,
        report: grad_check_many(f, &points, SUITE_EPSILON)?,
    })
}

/// Projects a non-scalar output onto fixed random weights so every output
/// component contributes to the checked scalar.
fn probe(tape: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone().reshaped(tape.shape(y).to_vec())?);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn primitive(
    name: &'static str,
    out_numel: usize,
    pts: &mut Points,
    inputs: Vec<Tensor>,
    f: fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<SuiteEntry> {
    let w = pts.tensor(&[out_numel]);
    entry(
        name,
        Box::new(move |t, v| {
            let y = f(t, v)?;
            probe(t, y, &w)
        }),
        inputs,
    )
}

fn primitives(p: &mut Points) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    let (a, b) = (p.tensor(&[3, 4]), p.tensor(&[4, 2]));
    let bias = p.tensor(&[2]);
    out.push(primitive("linear", 6, p, vec![a, b, bias], |t, v| {
        t.linear(v[0], v[1], Some(v[2]))
    })?);
    let x = p.tensor(&[4]);
    let w = p.tensor(&[4, 3]);
    out.push(primitive("linear/vector", 3, p, vec![x, w], |t, v| {
        t.linear(v[0], v[1], None)
    })?);
    let (m, r) = (p.tensor(&[3, 4]), p.tensor(&[4]));
    out.push(primitive("add_row", 12, p, vec![m, r], |t, v| t.add_row(v[0], v[1]))?);
    let (k, s) = (p.tensor(&[5]), p.tensor(&[5]));
    out.push(primitive("circular_conv", 5, p, vec![k, s], |t, v| {
        t.circular_conv(v[0], v[1])
    })?);
    let x = p.tensor(&[6]);
    out.push(primitive("softmax", 6, p, vec![x], |t, v| t.softmax(v[0]))?);
    let x = p.tensor(&[5]);
    out.push(primitive("tanh", 5, p, vec![x], |t, v| Ok(t.tanh(v[0])))?);
    let x = p.tensor(&[5]);
    out.push(primitive("sigmoid", 5, p, vec![x], |t, v| Ok(t.sigmoid(v[0])))?);
    let x = p.off_zero(&[6]);
    out.push(primitive("relu", 6, p, vec![x], |t, v| Ok(t.relu(v[0])))?);
    let x = p.tensor(&[4]);
    out.push(primitive("scale", 4, p, vec![x], |t, v| Ok(t.scale(v[0], -1.7)))?);
    let (x, y) = (p.tensor(&[2, 3]), p.tensor(&[2, 3]));
    out.push(primitive("add", 6, p, vec![x, y], |t, v| t.add(v[0], v[1]))?);
    let (x, y) = (p.tensor(&[4]), p.tensor(&[4]));
    out.push(primitive("mul", 4, p, vec![x, y], |t, v| t.mul(v[0], v[1]))?);
    let (x, y) = (p.tensor(&[2]), p.tensor(&[3]));
    out.push(primitive("concat", 5, p, vec![x, y], |t, v| t.concat(&[v[0], v[1]]))?);
    let (x, y) = (p.tensor(&[3]), p.tensor(&[3]));
    out.push(primitive("stack", 9, p, vec![x, y], |t, v| {
        t.stack(&[v[0], v[1], v[0]])
    })?);
    let x = p.tensor(&[2, 3]);
    out.push(primitive("sum", 1, p, vec![x], |t, v| Ok(t.sum(v[0])))?);
    let x = p.tensor(&[4, 3]);
    out.push(primitive("mean_rows", 3, p, vec![x], |t, v| t.mean_rows(v[0]))?);
    let x = p.tensor(&[4, 3]);
    out.push(primitive("row", 3, p, vec![x], |t, v| t.row(v[0], 2))?);
    let x = p.tensor(&[2, 3]);
    out.push(primitive("reshape", 6, p, vec![x], |t, v| t.reshape(v[0], &[3, 2]))?);
    let x = p.tensor(&[2, 3]);
    out.push(primitive("transpose", 6, p, vec![x], |t, v| t.transpose(v[0]))?);
    let x = p.tensor(&[7]);
    out.push(primitive("slice", 3, p, vec![x], |t, v| t.slice(v[0], 2, 3))?);
    let x = p.tensor(&[5]);
    out.push(entry(
        "cross_entropy",
        Box::new(|t, v| {
            let s = t.softmax(v[0])?;
            t.cross_entropy(s, 3)
        }),
        vec![x],
    )?);
    Ok(out)
}

fn blocks(p: &mut Points) -> Result<Vec<SuiteEntry>> {
    let n = 6;
    let d_a = 4;
    let mut out = Vec::new();

    let pts = vec![p.tensor(&[n]), p.tensor(&[n]), p.tensor(&[n, n]), p.tensor(&[n, n])];
    let w = p.tensor(&[n]);
    out.push(entry(
        "ccmf_fuse",
        Box::new(move |t, v| {
            let m = ccmf_fuse(t, v[0], v[1], &CcmfParams { w1: v[2], w2: v[3] })?;
            probe(t, m, &w)
        }),
        pts,
    )?);

    let pts = vec![
        p.tensor(&[n]),
        p.tensor(&[3, n]),
        p.tensor(&[d_a]),
        p.tensor(&[n, d_a]),
        p.tensor(&[n, d_a]),
        p.tensor(&[d_a]),
    ];
    let w = p.tensor(&[n]);
    out.push(entry(
        "soft_attention",
        Box::new(move |t, v| {
            let params = AttentionParams {
                w: v[2],
                wa: v[3],
                ua: v[4],
                ba: v[5],
            };
            let r = soft_attention(t, v[0], v[1], &params)?;
            probe(t, r.pooled, &w)
        }),
        pts,
    )?);

    let pts = vec![p.tensor(&[n]), p.tensor(&[4, n])];
    let w = p.tensor(&[n]);
    out.push(entry(
        "dot_attention",
        Box::new(move |t, v| {
            let r = dot_attention(t, v[0], v[1])?;
            probe(t, r.pooled, &w)
        }),
        pts,
    )?);

    let pts = vec![
        p.tensor(&[n]),
        p.tensor(&[n]),
        p.tensor(&[n, n]),
        p.tensor(&[n]),
        p.tensor(&[n, n]),
        p.tensor(&[n]),
    ];
    let w = p.tensor(&[n]);
    out.push(entry(
        "gated_activation",
        Box::new(move |t, v| {
            let layer = MemoryLayerParams {
                wf: v[2],
                bf: v[3],
                wg: v[4],
                bg: v[5],
                mem_attn: None,
            };
            let h = gated_activation(t, v[0], v[1], &layer)?;
            probe(t, h, &w)
        }),
        pts,
    )?);

    let q = 5;
    let pts = vec![
        p.tensor(&[n]),
        p.tensor(&[n]),
        p.tensor(&[n]),
        p.tensor(&[q]),
        p.tensor(&[n + q, 4 * n]),
        p.tensor(&[n, 4 * n]),
        p.tensor(&[4 * n]),
    ];
    let w = p.tensor(&[2 * n]);
    out.push(entry(
        "lstm_cell",
        Box::new(move |t, v| {
            let cell = LstmCellParams {
                wx: v[4],
                wh: v[5],
                b: v[6],
            };
            let (h, c) = lstm_baseline_step(t, v[0], v[1], v[2], v[3], &cell)?;
            let hc = t.concat(&[h, c])?;
            probe(t, hc, &w)
        }),
        pts,
    )?);

    let pts = vec![p.tensor(&[n]), p.tensor(&[2 * n, n]), p.tensor(&[n])];
    let w = p.tensor(&[n]);
    out.push(entry(
        "affine",
        Box::new(move |t, v| {
            let a = Affine { w: v[1], b: v[2] };
            let x = t.concat(&[v[0], v[0]])?;
            let y = a.apply(t, x)?;
            probe(t, y, &w)
        }),
        pts,
    )?);
    Ok(out)
}

/// The tiny end-to-end configuration: `n = 8`, `d_a = 4`, 11 words, a
/// caption of 4 predicted tokens and 3 frames.
pub fn tiny_config(attention: AttentionKind, decoder: DecoderKind) -> DecoderConfig {
    DecoderConfig {
        n: 8,
        d_a: 4,
        max_caption_len: 6,
        seed: 11,
        attention,
        decoder,
        ..Default::default()
    }
}

pub const TINY_VOCAB: usize = 11;
pub const TINY_FRAMES: usize = 3;
pub const TINY_WIDTH: usize = 5;
/// `[BOS, w, w, w, EOS]`: four predicted tokens.
pub const TINY_CAPTION: [usize; 5] = [1, 6, 4, 9, 2];

fn end_to_end(name: &'static str, config: DecoderConfig, p: &mut Points) -> Result<SuiteEntry> {
    let decoder = Decoder::new(&config, TINY_VOCAB, TINY_WIDTH)?;
    let video = VideoInput::new("tiny", p.tensor(&[TINY_FRAMES, TINY_WIDTH]))?;
    let params = decoder.init_params();
    entry(
        name,
        Box::new(move |t, v| {
            let bound = BoundParams::from_vars(v.to_vec());
            Ok(caption_loss(&decoder, t, &bound, &video, &TINY_CAPTION)?.total)
        }),
        params.values().to_vec(),
    )
}

/// Runs the whole suite with inputs drawn from `seed`.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut p = Points(ChaCha8Rng::seed_from_u64(seed));
    let mut out = primitives(&mut p)?;
    out.extend(blocks(&mut p)?);
    out.push(end_to_end(
        "loss/memory",
        tiny_config(AttentionKind::Soft, DecoderKind::Memory),
        &mut p,
    )?);
    out.push(end_to_end(
        "loss/memory-dot",
        tiny_config(AttentionKind::Dot, DecoderKind::Memory),
        &mut p,
    )?);
    out.push(end_to_end(
        "loss/lstm",
        tiny_config(AttentionKind::Soft, DecoderKind::Lstm),
        &mut p,
    )?);
    Ok(out)
}
