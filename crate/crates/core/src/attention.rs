//! Additive soft attention and the scaled dot-product variant.
//!
//! Both score every slot against a query, normalize with a softmax and pool
//! the slots with the resulting weights. The same code serves memory
//! attention (slots = a memory bank) and visual attention (slots = projected
//! frame features).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParamLayout};
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    #[default]
    Soft,
    Dot,
}

impl std::str::FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(AttentionKind::Soft),
            "dot" => Ok(AttentionKind::Dot),
            other => Err(Error::Config(format!("unknown attention kind `{other}` (soft|dot)"))),
        }
    }
}

/// Parameters of one additive attention site.
///
/// The maps are stored input-major (`[width, d_a]`) and applied on the right,
/// so `query · wa` is the usual `W_a · query` with `W_a = waᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionParams<T> {
    /// Score projection, `[d_a]`.
    pub w: T,
    /// Query map, `[query width, d_a]`.
    pub wa: T,
    /// Slot map, `[slot width, d_a]`.
    pub ua: T,
    /// `[d_a]`.
    pub ba: T,
}

impl<T: Copy> AttentionParams<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> AttentionParams<U> {
        AttentionParams {
            w: f(self.w),
            wa: f(self.wa),
            ua: f(self.ua),
            ba: f(self.ba),
        }
    }
}

impl AttentionParams<ParamId> {
    pub fn declare(
        layout: &mut ParamLayout,
        prefix: &str,
        query_width: usize,
        slot_width: usize,
        d_a: usize,
        group: ParamGroup,
    ) -> Self {
        AttentionParams {
            w: layout.add(format!("{prefix}.w"), &[d_a], d_a, group),
            wa: layout.add(format!("{prefix}.wa"), &[query_width, d_a], query_width, group),
            ua: layout.add(format!("{prefix}.ua"), &[slot_width, d_a], slot_width, group),
            ba: layout.add(format!("{prefix}.ba"), &[d_a], query_width, group),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionResult {
    /// Softmax weights over slots, `[k]`.
    pub weights: Var,
    /// Weighted sum of slots, `[slot width]`.
    pub pooled: Var,
}

fn slot_dims(tape: &Tape, slots: Var) -> Result<(usize, usize)> {
    match tape.shape(slots) {
        [k, n] => Ok((*k, *n)),
        other => Err(Error::shape("attention slots", other, &[])),
    }
}

fn pool(tape: &mut Tape, scores: Var, slots: Var) -> Result<AttentionResult> {
    let weights = tape.softmax(scores)?;
    let pooled = tape.linear(weights, slots, None)?;
    Ok(AttentionResult { weights, pooled })
}

/// `e_i = wᵀ tanh(W_a q + U_a s_i + b_a)`, `α = softmax(e)`, `pooled = Σ α_i s_i`.
///
/// `slots` is a `[k, n]` matrix, one slot per row.
pub fn soft_attention(
    tape: &mut Tape,
    query: Var,
    slots: Var,
    params: &AttentionParams<Var>,
) -> Result<AttentionResult> {
    let (k, _) = slot_dims(tape, slots)?;
    let d_a = tape.shape(params.w)[0];
    let q = tape.linear(query, params.wa, Some(params.ba))?;
    let s = tape.linear(slots, params.ua, None)?;
    let pre = tape.add_row(s, q)?;
    let act = tape.tanh(pre);
    let w = tape.reshape(params.w, &[d_a, 1])?;
    let e = tape.linear(act, w, None)?;
    let e = tape.reshape(e, &[k])?;
    pool(tape, e, slots)
}

/// `e_i = (q · s_i) / √n` followed by the same softmax pooling.
pub fn dot_attention(tape: &mut Tape, query: Var, slots: Var) -> Result<AttentionResult> {
    let (k, n) = slot_dims(tape, slots)?;
    if tape.shape(query) != [n] {
        return Err(Error::shape("dot_attention", tape.shape(query), &[n]));
    }
    let q = tape.reshape(query, &[n, 1])?;
    let e = tape.linear(slots, q, None)?;
    let e = tape.reshape(e, &[k])?;
    let e = tape.scale(e, 1.0 / (n as f64).sqrt());
    pool(tape, e, slots)
}

/// Stacks a sequence of slot vectors and attends over them. An empty slot set
/// is an error; the decoder handles its first step separately.
pub fn attend_bank(
    tape: &mut Tape,
    query: Var,
    bank: &[Var],
    params: Option<&AttentionParams<Var>>,
) -> Result<AttentionResult> {
    if bank.is_empty() {
        return Err(Error::EmptyInput { op: "attention" });
    }
    let slots = tape.stack(bank)?;
    match params {
        Some(p) => soft_attention(tape, query, slots, p),
        None => dot_attention(tape, query, slots),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check_many, Tensor};

    fn scalar_params(tape: &mut Tape) -> AttentionParams<Var> {
        AttentionParams {
            w: tape.leaf(Tensor::vector(vec![1.0])),
            wa: tape.leaf(Tensor::identity(1)),
            ua: tape.leaf(Tensor::identity(1)),
            ba: tape.leaf(Tensor::vector(vec![0.0])),
        }
    }

    fn random_params(tape: &mut Tape, n: usize, d_a: usize, salt: u64) -> AttentionParams<Var> {
        let gen = |len: usize, s: u64| -> Vec<f64> {
            (0..len as u64)
                .map(|i| (((i * 2654435761 + s * 97) % 1000) as f64 / 500.0) - 1.0)
                .collect()
        };
        AttentionParams {
            w: tape.leaf(Tensor::vector(gen(d_a, salt))),
            wa: tape.leaf(Tensor::matrix(n, d_a, gen(n * d_a, salt + 1)).unwrap()),
            ua: tape.leaf(Tensor::matrix(n, d_a, gen(n * d_a, salt + 2)).unwrap()),
            ba: tape.leaf(Tensor::vector(gen(d_a, salt + 3))),
        }
    }

    #[test]
    fn single_slot_gets_all_weight() {
        let mut tape = Tape::new();
        let p = random_params(&mut tape, 3, 2, 1);
        let q = tape.leaf(Tensor::vector(vec![0.1, 0.2, 0.3]));
        let s = tape.leaf(Tensor::vector(vec![1.0, -1.0, 2.0]));
        let r = attend_bank(&mut tape, q, &[s], Some(&p)).unwrap();
        assert_eq!(tape.value(r.weights).data(), &[1.0]);
        assert_eq!(tape.value(r.pooled).data(), tape.value(s).data());
        let r = attend_bank(&mut tape, q, &[s], None).unwrap();
        assert_eq!(tape.value(r.weights).data(), &[1.0]);
    }

    #[test]
    fn identical_slots_are_uniform() {
        let mut tape = Tape::new();
        let p = random_params(&mut tape, 3, 2, 5);
        let q = tape.leaf(Tensor::vector(vec![0.4, -0.2, 0.9]));
        let s = tape.leaf(Tensor::vector(vec![0.5, 0.25, -1.0]));
        let r = attend_bank(&mut tape, q, &[s, s, s, s], Some(&p)).unwrap();
        for w in tape.value(r.weights).data() {
            assert!((w - 0.25).abs() < 1e-15);
        }
        for (a, b) in tape.value(r.pooled).data().iter().zip(tape.value(s).data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_closed_form() {
        let mut tape = Tape::new();
        let p = scalar_params(&mut tape);
        let q = tape.leaf(Tensor::vector(vec![0.0]));
        let s0 = tape.leaf(Tensor::vector(vec![0.0]));
        let s1 = tape.leaf(Tensor::vector(vec![10.0]));
        let r = attend_bank(&mut tape, q, &[s0, s1], Some(&p)).unwrap();
        let e1 = 10f64.tanh();
        let expect1 = e1.exp() / (1.0 + e1.exp());
        let w = tape.value(r.weights).data();
        assert!((w[1] - expect1).abs() < 1e-12);
        assert!((w[0] - 0.2689).abs() < 1e-4);
        assert!((w[1] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn dot_cases() {
        let mut tape = Tape::new();
        // orthogonal query → uniform
        let q = tape.leaf(Tensor::vector(vec![1.0, 0.0]));
        let a = tape.leaf(Tensor::vector(vec![0.0, 3.0]));
        let b = tape.leaf(Tensor::vector(vec![0.0, -1.0]));
        let r = attend_bank(&mut tape, q, &[a, b], None).unwrap();
        assert_eq!(tape.value(r.weights).data(), &[0.5, 0.5]);

        // n = 4, query = s0, s1 = -s0, |s0|² = 4 → e = (2, -2)
        let s0 = tape.leaf(Tensor::vector(vec![1.0, 1.0, 1.0, 1.0]));
        let s1 = tape.leaf(Tensor::vector(vec![-1.0, -1.0, -1.0, -1.0]));
        let r = attend_bank(&mut tape, s0, &[s0, s1], None).unwrap();
        let z = 2f64.exp() + (-2f64).exp();
        let w = tape.value(r.weights).data();
        assert!((w[0] - 2f64.exp() / z).abs() < 1e-15);
        assert!((w[1] - (-2f64).exp() / z).abs() < 1e-15);
    }

    #[test]
    fn empty_bank_rejected() {
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::vector(vec![1.0]));
        assert!(matches!(
            attend_bank(&mut tape, q, &[], None),
            Err(Error::EmptyInput { .. })
        ));
    }

    #[test]
    fn gradient_checks_both_variants() {
        let n = 3;
        let d_a = 2;
        let gen = |len: usize, s: usize| -> Vec<f64> {
            (0..len)
                .map(|i| (((i * 37 + s * 11) % 17) as f64 - 8.0) / 9.0)
                .collect()
        };
        let points = vec![
            Tensor::vector(gen(n, 1)),
            Tensor::matrix(4, n, gen(4 * n, 2)).unwrap(),
            Tensor::vector(gen(d_a, 3)),
            Tensor::matrix(n, d_a, gen(n * d_a, 4)).unwrap(),
            Tensor::matrix(n, d_a, gen(n * d_a, 5)).unwrap(),
            Tensor::vector(gen(d_a, 6)),
        ];
        let soft = grad_check_many(
            |tape, x| {
                let p = AttentionParams {
                    w: x[2],
                    wa: x[3],
                    ua: x[4],
                    ba: x[5],
                };
                let r = soft_attention(tape, x[0], x[1], &p)?;
                let sq = tape.mul(r.pooled, r.pooled)?;
                Ok(tape.sum(sq))
            },
            &points,
            1e-6,
        )
        .unwrap();
        assert!(soft.max_rel_error < 1e-4, "{soft:?}");

        let dot = grad_check_many(
            |tape, x| {
                let r = dot_attention(tape, x[0], x[1])?;
                let sq = tape.mul(r.pooled, r.pooled)?;
                Ok(tape.sum(sq))
            },
            &points[..2],
            1e-6,
        )
        .unwrap();
        assert!(dot.max_rel_error < 1e-4, "{dot:?}");
    }
}
