//! Named parameter storage shared by every model in the crate.
//!
//! Models describe their parameters as a [`ParamLayout`] (names, shapes and
//! counting groups, no values), which is enough for auditing. A [`ParamSet`]
//! pairs a layout with values; [`ParamSet::bind`] turns it into tape leaves
//! for one forward pass.

use std::ops::Index;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which part of a model a parameter belongs to, for counting purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamGroup {
    /// Decoding machinery proper: memory layers, attention sites, concat
    /// projection, fusion, or the recurrent cell of a baseline.
    Core,
    Embedding,
    OutputHead,
    /// Heads that exist only to supervise hidden layers during training.
    AuxHead,
    FeatureProjection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    #[serde(skip)]
    pub fan_in: usize,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, group: ParamGroup) -> ParamId {
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            group,
            fan_in,
        });
        ParamId(self.specs.len() - 1)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn total(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    /// Draws every parameter uniformly from `±1/√fan_in`.
    pub fn initialize(self, rng: &mut ChaCha8Rng) -> ParamSet {
        let values = self
            .specs
            .iter()
            .map(|spec| {
                let bound = 1.0 / (spec.fan_in.max(1) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let data = (0..spec.numel()).map(|_| dist.sample(rng)).collect();
                Tensor::new(spec.shape.clone(), data).expect("layout shapes are positive")
            })
            .collect();
        ParamSet { layout: self, values }
    }

    pub fn zeros(self) -> ParamSet {
        let values = self.specs.iter().map(|s| Tensor::zeros(&s.shape)).collect();
        ParamSet { layout: self, values }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layout: ParamLayout,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.layout.specs[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.layout.specs.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Replaces one value, checking the shape against the layout.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let spec = &self.layout.specs[id.0];
        if value.shape() != spec.shape.as_slice() {
            return Err(Error::TensorShape {
                name: spec.name.clone(),
                found: value.shape().to_vec(),
                expected: spec.shape.clone(),
            });
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self.values.iter().map(|v| tape.leaf(v.clone())).collect(),
        }
    }

    /// Per-parameter gradients in layout order (zeros for unused ones).
    pub fn gradients(&self, tape: &Tape, bound: &BoundParams, grads: &Gradients) -> Vec<Tensor> {
        bound.vars.iter().map(|&v| grads.tensor(tape, v)).collect()
    }
}

/// Tape leaves for a [`ParamSet`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Binds already-recorded vars, one per layout entry in order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        BoundParams { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Index<ParamId> for BoundParams {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// Weight + bias pair applied as `x · w + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine<T> {
    pub w: T,
    pub b: T,
}

impl<T: Copy> Affine<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> Affine<U> {
        Affine {
            w: f(self.w),
            b: f(self.b),
        }
    }
}

impl Affine<ParamId> {
    pub fn declare(layout: &mut ParamLayout, prefix: &str, fan_in: usize, fan_out: usize, group: ParamGroup) -> Self {
        Affine {
            w: layout.add(format!("{prefix}.w"), &[fan_in, fan_out], fan_in, group),
            b: layout.add(format!("{prefix}.b"), &[fan_out], fan_in, group),
        }
    }
}

impl Affine<Var> {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.linear(x, self.w, Some(self.b))
    }
}
