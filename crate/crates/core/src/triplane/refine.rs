use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::attention::{attention_stack, AttentionBlockVars, AttentionBlockWeights};
use crate::nn::layers::{Activation, MlpVars, MlpWeights};
use crate::nn::params::{Bound, ParamStore};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::real::Real;
use crate::triplane::planes::{SphericalTriplane, TriplaneLayout};

/// Learnable query tokens, the cross-attention stack that lets them read
/// the image, and the projection to the triplane width.
#[derive(Clone, Debug, PartialEq)]
pub struct TriplaneBranchWeights<T> {
    pub tokens: Tensor<T>,
    pub stack: Vec<AttentionBlockWeights<T>>,
    /// `C_t → hidden → C_tri`, ReLU between the layers.
    pub projection: MlpWeights<T>,
}

pub const PROJECTION_ACTIVATION: Activation = Activation::Relu;

impl<T: Real> TriplaneBranchWeights<T> {
    pub fn random(
        layout: &TriplaneLayout,
        width: usize,
        blocks: usize,
        heads: usize,
        c_tri: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            tokens: Tensor::randn(&[layout.token_count(), width], 0.02, rng),
            stack: (0..blocks)
                .map(|_| AttentionBlockWeights::random(width, heads, rng))
                .collect::<Result<_>>()?,
            projection: MlpWeights::random(&[width, width, c_tri], rng),
        })
    }

    pub fn insert_into(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<()> {
        store.insert(format!("{prefix}.tokens"), self.tokens.clone())?;
        for (i, b) in self.stack.iter().enumerate() {
            b.insert_into(store, &format!("{prefix}.block{i}"))?;
        }
        self.projection.insert_into(store, &format!("{prefix}.proj"))
    }

    pub fn from_store(store: &ParamStore<T>, prefix: &str, blocks: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            tokens: store.get(&format!("{prefix}.tokens"))?.clone(),
            stack: (0..blocks)
                .map(|i| AttentionBlockWeights::from_store(store, &format!("{prefix}.block{i}"), heads))
                .collect::<Result<_>>()?,
            projection: MlpWeights::from_store(store, &format!("{prefix}.proj"), 2)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TriplaneBranchVars {
    pub tokens: Var,
    pub stack: Vec<AttentionBlockVars>,
    pub projection: MlpVars,
}

impl TriplaneBranchVars {
    pub fn bind<T: Real>(w: &TriplaneBranchWeights<T>, tape: &mut Tape<T>, trainable: bool) -> Self {
        let tokens = if trainable {
            tape.param(w.tokens.clone())
        } else {
            tape.constant(w.tokens.clone())
        };
        Self {
            tokens,
            stack: w.stack.iter().map(|b| b.bind(tape, trainable)).collect(),
            projection: MlpVars::bind(&w.projection, tape, trainable),
        }
    }

    pub fn from_bound(bound: &Bound, prefix: &str, blocks: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            tokens: bound.get(&format!("{prefix}.tokens"))?,
            stack: (0..blocks)
                .map(|i| AttentionBlockVars::from_bound(bound, &format!("{prefix}.block{i}"), heads))
                .collect::<Result<_>>()?,
            projection: MlpVars::from_bound(bound, &format!("{prefix}.proj"), 2)?,
        })
    }
}

/// Runs the tokens through the stack against `image_tokens`, then projects.
/// Returns the `6·H·W × C_tri` plane tokens.
pub fn refine_var<T: Real>(
    tape: &mut Tape<T>,
    tokens: Var,
    image_tokens: Var,
    stack: &[AttentionBlockVars],
    projection: &MlpVars,
    layout: &TriplaneLayout,
) -> Result<Var> {
    let n = tape.value(tokens).rows();
    if n != layout.token_count() {
        return Err(Error::dim("refine_triplane_tokens", tape.shape(tokens), &[layout.token_count()]));
    }
    let x = attention_stack(tape, tokens, image_tokens, stack)?;
    projection.forward(tape, x, PROJECTION_ACTIVATION)
}

/// Tape-free refinement into a [`SphericalTriplane`].
pub fn refine_triplane_tokens<T: Real>(
    tokens: &Tensor<T>,
    image_tokens: &Tensor<T>,
    stack: &[AttentionBlockWeights<T>],
    projection: &MlpWeights<T>,
    layout: TriplaneLayout,
) -> Result<SphericalTriplane<T>> {
    let mut tape = Tape::new();
    let t = tape.constant(tokens.clone());
    let img = tape.constant(image_tokens.clone());
    let stack: Vec<_> = stack.iter().map(|b| b.bind(&mut tape, false)).collect();
    let proj = MlpVars::bind(projection, &mut tape, false);
    let out = refine_var(&mut tape, t, img, &stack, &proj, &layout)?;
    SphericalTriplane::new(layout, tape.value(out).clone())
}
