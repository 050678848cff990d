use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::params::{Bound, ParamStore};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
    None,
}

pub fn activate<T: Real>(tape: &mut Tape<T>, x: Var, act: Activation) -> Var {
    match act {
        Activation::Gelu => tape.gelu(x),
        Activation::Relu => tape.relu(x),
        Activation::None => x,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearWeights<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> LinearWeights<T> {
    /// Normal init with std `gain / sqrt(fan_in)`, zero bias.
    pub fn random(fan_in: usize, fan_out: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let std = gain / (fan_in.max(1) as f64).sqrt();
        Self {
            w: Tensor::randn(&[fan_in, fan_out], std, rng),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Tensor::zeros(&[fan_in, fan_out]),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.cols()
    }

    pub fn insert_into(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<()> {
        store.insert(format!("{prefix}.w"), self.w.clone())?;
        store.insert(format!("{prefix}.b"), self.b.clone())
    }

    pub fn from_store(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        Ok(Self {
            w: store.get(&format!("{prefix}.w"))?.clone(),
            b: store.get(&format!("{prefix}.b"))?.clone(),
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl LinearVars {
    pub fn from_bound(bound: &Bound, prefix: &str) -> Result<Self> {
        Ok(Self {
            w: bound.get(&format!("{prefix}.w"))?,
            b: bound.get(&format!("{prefix}.b"))?,
        })
    }

    pub fn bind<T: Real>(w: &LinearWeights<T>, tape: &mut Tape<T>, trainable: bool) -> Self {
        let push = |tape: &mut Tape<T>, t: &Tensor<T>| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        Self {
            w: push(tape, &w.w),
            b: push(tape, &w.b),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.linear(x, self.w, self.b)
    }
}

/// Stack of linear layers; `hidden` activation between layers, none after
/// the last.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpWeights<T> {
    pub layers: Vec<LinearWeights<T>>,
}

impl<T: Real> MlpWeights<T> {
    /// `widths = [in, hidden.., out]`.
    pub fn random(widths: &[usize], rng: &mut impl Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| LinearWeights::random(w[0], w[1], 1.0, rng))
            .collect();
        Self { layers }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Self {
            layers: widths
                .windows(2)
                .map(|w| LinearWeights::zeros(w[0], w[1]))
                .collect(),
        }
    }

    pub fn insert_into(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            l.insert_into(store, &format!("{prefix}.{i}"))?;
        }
        Ok(())
    }

    pub fn from_store(store: &ParamStore<T>, prefix: &str, depth: usize) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| LinearWeights::from_store(store, &format!("{prefix}.{i}")))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Plain evaluation without a tape.
    pub fn eval(&self, x: &Tensor<T>, hidden: Activation) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = MlpVars::bind(self, &mut tape, false);
        let xv = tape.constant(x.clone());
        let y = vars.forward(&mut tape, xv, hidden)?;
        Ok(tape.value(y).clone())
    }
}

#[derive(Clone, Debug)]
pub struct MlpVars {
    pub layers: Vec<LinearVars>,
}

impl MlpVars {
    pub fn from_bound(bound: &Bound, prefix: &str, depth: usize) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| LinearVars::from_bound(bound, &format!("{prefix}.{i}")))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn bind<T: Real>(w: &MlpWeights<T>, tape: &mut Tape<T>, trainable: bool) -> Self {
        Self {
            layers: w
                .layers
                .iter()
                .map(|l| LinearVars::bind(l, tape, trainable))
                .collect(),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var, hidden: Activation) -> Result<Var> {
        if self.layers.is_empty() {
            return Err(Error::contract("empty MLP"));
        }
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, h)?;
            if i + 1 < self.layers.len() {
                h = activate(tape, h, hidden);
            }
        }
        Ok(h)
    }
}
