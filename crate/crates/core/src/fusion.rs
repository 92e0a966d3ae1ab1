//! Cross-convolution fusion of the visual mean vector with a word embedding.
//!
//! Each modality is mapped into a convolution kernel that is then applied to
//! the *other* modality:
//!
//! ```text
//! kernel1 = V · W1ᵀ        A = kernel2 ⊛ V
//! kernel2 = C · W2ᵀ        B = kernel1 ⊛ C
//! M = ReLU(A) + ReLU(B)
//! ```
//!
//! `⊛` is circular convolution, so every intermediate keeps width `n` and no
//! padding convention is needed.

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParamLayout};
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcmfParams<T> {
    /// Visual-to-kernel map, `n × n`.
    pub w1: T,
    /// Lexical-to-kernel map, `n × n`.
    pub w2: T,
}

impl<T: Copy> CcmfParams<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> CcmfParams<U> {
        CcmfParams {
            w1: f(self.w1),
            w2: f(self.w2),
        }
    }
}

impl CcmfParams<ParamId> {
    pub fn declare(layout: &mut ParamLayout, prefix: &str, n: usize) -> Self {
        CcmfParams {
            w1: layout.add(format!("{prefix}.w1"), &[n, n], n, ParamGroup::Core),
            w2: layout.add(format!("{prefix}.w2"), &[n, n], n, ParamGroup::Core),
        }
    }
}

/// Fuses visual vector `visual` and lexical vector `lexical` (both width `n`).
pub fn ccmf_fuse(tape: &mut Tape, visual: Var, lexical: Var, params: &CcmfParams<Var>) -> Result<Var> {
    let vs = tape.shape(visual).to_vec();
    let cs = tape.shape(lexical).to_vec();
    if vs.len() != 1 || vs != cs {
        return Err(Error::shape("ccmf_fuse", &vs, &cs));
    }
    let n = vs[0];
    for w in [params.w1, params.w2] {
        if tape.shape(w) != [n, n] {
            return Err(Error::shape("ccmf_fuse weight", tape.shape(w), &[n, n]));
        }
    }
    let w1t = tape.transpose(params.w1)?;
    let w2t = tape.transpose(params.w2)?;
    let kernel1 = tape.linear(visual, w1t, None)?;
    let kernel2 = tape.linear(lexical, w2t, None)?;
    let a = tape.circular_conv(kernel2, visual)?;
    let b = tape.circular_conv(kernel1, lexical)?;
    let ra = tape.relu(a);
    let rb = tape.relu(b);
    tape.add(ra, rb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check_many, Tensor};

    fn fuse_values(v: &[f64], c: &[f64], w1: Tensor, w2: Tensor) -> Vec<f64> {
        let mut tape = Tape::new();
        let params = CcmfParams {
            w1: tape.leaf(w1),
            w2: tape.leaf(w2),
        };
        let v = tape.leaf(Tensor::vector(v.to_vec()));
        let c = tape.leaf(Tensor::vector(c.to_vec()));
        let m = ccmf_fuse(&mut tape, v, c, &params).unwrap();
        tape.value(m).data().to_vec()
    }

    /// Double-loop reference for the identity-weight case.
    fn oracle_identity(v: &[f64], c: &[f64]) -> Vec<f64> {
        let n = v.len();
        (0..n)
            .map(|i| {
                let mut a = 0.0;
                let mut b = 0.0;
                for j in 0..n {
                    let l = (i as isize - j as isize).rem_euclid(n as isize) as usize;
                    a += c[j] * v[l];
                    b += v[j] * c[l];
                }
                a.max(0.0) + b.max(0.0)
            })
            .collect()
    }

    #[test]
    fn zero_visual_gives_zero() {
        let out = fuse_values(&[0.0; 3], &[1.0, -2.0, 0.5], Tensor::identity(3), Tensor::identity(3));
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn scalar_case() {
        for (v, c) in [(2.0, 3.0), (-1.5, 2.0), (-2.0, -0.5)] {
            let out = fuse_values(&[v], &[c], Tensor::identity(1), Tensor::identity(1));
            assert_eq!(out, vec![2.0 * f64::max(0.0, v * c)]);
        }
    }

    #[test]
    fn identity_weights_match_double_loop() {
        let v = [0.3, -1.2, 0.7, 2.0];
        let c = [-0.4, 0.9, 1.1, -0.2];
        let out = fuse_values(&v, &c, Tensor::identity(4), Tensor::identity(4));
        let expect = oracle_identity(&v, &c);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // symmetric under identity maps
        let swapped = fuse_values(&c, &v, Tensor::identity(4), Tensor::identity(4));
        for (a, b) in out.iter().zip(&swapped) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_uses_transposed_weight() {
        // W1 = [[0, 1], [0, 0]] so V·W1ᵀ = (v1, 0); C path disabled via W2 = 0.
        let w1 = Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let out = fuse_values(&[1.0, 2.0], &[3.0, 5.0], w1, Tensor::zeros(&[2, 2]));
        // kernel1 = (2, 0); B = kernel1 ⊛ C = (6, 10)
        assert_eq!(out, vec![6.0, 10.0]);
    }

    #[test]
    fn rejects_width_mismatch() {
        let mut tape = Tape::new();
        let params = CcmfParams {
            w1: tape.leaf(Tensor::identity(3)),
            w2: tape.leaf(Tensor::identity(3)),
        };
        let v = tape.leaf(Tensor::vector(vec![1.0; 3]));
        let c = tape.leaf(Tensor::vector(vec![1.0; 2]));
        assert!(ccmf_fuse(&mut tape, v, c, &params).is_err());
    }

    #[test]
    fn gradient_check_all_inputs() {
        let points = [
            Tensor::vector(vec![0.5, -0.3, 0.8, 0.1]),
            Tensor::vector(vec![-0.2, 0.6, 0.4, -0.9]),
            Tensor::matrix(4, 4, (0..16).map(|i| ((i * 7 % 11) as f64 - 5.0) / 9.0).collect()).unwrap(),
            Tensor::matrix(4, 4, (0..16).map(|i| ((i * 5 % 13) as f64 - 6.0) / 10.0).collect()).unwrap(),
        ];
        let report = grad_check_many(
            |tape, x| {
                let params = CcmfParams { w1: x[2], w2: x[3] };
                let m = ccmf_fuse(tape, x[0], x[1], &params)?;
                let sq = tape.mul(m, m)?;
                Ok(tape.sum(sq))
            },
            &points,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
