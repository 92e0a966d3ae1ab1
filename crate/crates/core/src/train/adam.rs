use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every parameter of one [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. Gradients are checked for NaN/inf before
/// anything is modified.
pub fn adam_step(params: &mut ParamSet, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.values().len() || state.m.len() != grads.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.values().len()
        )));
    }
    for (id, g) in params.ids().zip(grads) {
        let p = params.get(id);
        if g.shape() != p.shape() || state.m[id.index()].shape() != p.shape() {
            return Err(Error::TensorShape {
                name: params.name(id).to_owned(),
                found: g.shape().to_vec(),
                expected: p.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(params.name(id).to_owned()));
        }
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (k, g) in grads.iter().enumerate() {
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        let p = params.values_mut()[k].data_mut();
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ParamGroup, ParamLayout};

    fn scalar_set(x: f64) -> ParamSet {
        let mut layout = ParamLayout::new();
        let id = layout.add("x", &[1], 1, ParamGroup::Core);
        let mut p = layout.zeros();
        p.set(id, Tensor::scalar(x)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_set(0.7);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut p, &[Tensor::scalar(0.0)], &mut s).unwrap();
        assert_eq!(p.values()[0].data()[0], 0.7);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.02] {
            let mut p = scalar_set(1.0);
            let mut s = AdamState::new(AdamConfig::default(), &p);
            adam_step(&mut p, &[Tensor::scalar(g)], &mut s).unwrap();
            let delta = p.values()[0].data()[0] - 1.0;
            assert!((delta + 1e-3 * f64::signum(g)).abs() < 1e-8, "{delta}");
        }
    }

    fn run_square(lr: f64, steps: i32) -> (f64, f64) {
        let mut p = scalar_set(1.0);
        let config = AdamConfig {
            lr,
            ..Default::default()
        };
        let mut s = AdamState::new(config, &p);
        for _ in 0..steps {
            let x = p.values()[0].data()[0];
            adam_step(&mut p, &[Tensor::scalar(2.0 * x)], &mut s).unwrap();
        }
        // Independent scalar recurrence.
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=steps {
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            x -= lr * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        (p.values()[0].data()[0], x)
    }

    #[test]
    fn minimizes_square() {
        // At lr 1e-3 each step moves roughly lr, so 500 steps cover about half
        // the distance to the minimum.
        let (got, oracle) = run_square(1e-3, 500);
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 0.5605075254378474).abs() < 1e-9, "{got}");
        let (got, oracle) = run_square(1e-2, 500);
        assert!((got - oracle).abs() < 1e-12);
        assert!(got.abs() < 0.1);
    }

    #[test]
    fn nan_names_parameter() {
        let mut p = scalar_set(1.0);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        let err = adam_step(&mut p, &[Tensor::scalar(f64::NAN)], &mut s).unwrap_err();
        assert!(err.to_string().contains("`x`"));
        assert_eq!(s.step, 0);
        assert_eq!(p.values()[0].data()[0], 1.0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::vector(vec![3.0, 0.0]), Tensor::vector(vec![4.0])];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        let after: f64 = g.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);
        let mut small = vec![Tensor::vector(vec![0.1])];
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small[0].data()[0], 0.1);
    }
}
