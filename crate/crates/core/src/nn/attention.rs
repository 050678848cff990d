//! Pre-normalized multi-head cross-attention block:
//!
//! ```text
//! x   = q + Wo · MHA(LN_q(q), LN_kv(kv))
//! out = x + W2 · GELU(W1 · LN_ff(x))
//! ```
//!
//! Projections carry no bias. Self-attention is the special case `kv = q`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layers::LinearWeights;
use crate::nn::params::{Bound, ParamStore};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::real::Real;

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlockWeights<T> {
    pub heads: usize,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub ff1: Tensor<T>,
    pub ff2: Tensor<T>,
    pub ln_q: (Tensor<T>, Tensor<T>),
    pub ln_kv: (Tensor<T>, Tensor<T>),
    pub ln_ff: (Tensor<T>, Tensor<T>),
}

const MATRICES: [&str; 6] = ["wq", "wk", "wv", "wo", "ff1", "ff2"];
const NORMS: [&str; 3] = ["ln_q", "ln_kv", "ln_ff"];

impl<T: Real> AttentionBlockWeights<T> {
    /// Random block with feed-forward width `4 · dim`. Output projections
    /// start small so a fresh stack stays close to the identity.
    pub fn random(dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        check_heads(dim, heads)?;
        let ff = 4 * dim;
        let w = |i: usize, o: usize, gain: f64, rng: &mut _| LinearWeights::<T>::random(i, o, gain, rng).w;
        Ok(Self {
            heads,
            wq: w(dim, dim, 1.0, rng),
            wk: w(dim, dim, 1.0, rng),
            wv: w(dim, dim, 1.0, rng),
            wo: w(dim, dim, 0.3, rng),
            ff1: w(dim, ff, 1.0, rng),
            ff2: w(ff, dim, 0.3, rng),
            ln_q: (Tensor::full(&[dim], T::one()), Tensor::zeros(&[dim])),
            ln_kv: (Tensor::full(&[dim], T::one()), Tensor::zeros(&[dim])),
            ln_ff: (Tensor::full(&[dim], T::one()), Tensor::zeros(&[dim])),
        })
    }

    /// Every matrix and norm scale zero: the block reduces to its residuals.
    pub fn zeros(dim: usize, heads: usize) -> Result<Self> {
        check_heads(dim, heads)?;
        let z = |r, c| Tensor::zeros(&[r, c]);
        let ln = || (Tensor::zeros(&[dim]), Tensor::zeros(&[dim]));
        Ok(Self {
            heads,
            wq: z(dim, dim),
            wk: z(dim, dim),
            wv: z(dim, dim),
            wo: z(dim, dim),
            ff1: z(dim, 4 * dim),
            ff2: z(4 * dim, dim),
            ln_q: ln(),
            ln_kv: ln(),
            ln_ff: ln(),
        })
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }

    fn matrices(&self) -> [&Tensor<T>; 6] {
        [&self.wq, &self.wk, &self.wv, &self.wo, &self.ff1, &self.ff2]
    }

    fn norms(&self) -> [&(Tensor<T>, Tensor<T>); 3] {
        [&self.ln_q, &self.ln_kv, &self.ln_ff]
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.is_finite())
            && self.norms().iter().all(|(g, b)| g.is_finite() && b.is_finite())
    }

    pub fn insert_into(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<()> {
        for (name, m) in MATRICES.iter().zip(self.matrices()) {
            store.insert(format!("{prefix}.{name}"), m.clone())?;
        }
        for (name, (g, b)) in NORMS.iter().zip(self.norms()) {
            store.insert(format!("{prefix}.{name}.g"), g.clone())?;
            store.insert(format!("{prefix}.{name}.b"), b.clone())?;
        }
        Ok(())
    }

    pub fn from_store(store: &ParamStore<T>, prefix: &str, heads: usize) -> Result<Self> {
        let m = |n: &str| store.get(&format!("{prefix}.{n}")).cloned();
        let ln = |n: &str| -> Result<(Tensor<T>, Tensor<T>)> {
            Ok((m(&format!("{n}.g"))?, m(&format!("{n}.b"))?))
        };
        let w = Self {
            heads,
            wq: m("wq")?,
            wk: m("wk")?,
            wv: m("wv")?,
            wo: m("wo")?,
            ff1: m("ff1")?,
            ff2: m("ff2")?,
            ln_q: ln("ln_q")?,
            ln_kv: ln("ln_kv")?,
            ln_ff: ln("ln_ff")?,
        };
        check_heads(w.dim(), heads)?;
        Ok(w)
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> AttentionBlockVars {
        let mut push = |t: &Tensor<T>| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        AttentionBlockVars {
            heads: self.heads,
            wq: push(&self.wq),
            wk: push(&self.wk),
            wv: push(&self.wv),
            wo: push(&self.wo),
            ff1: push(&self.ff1),
            ff2: push(&self.ff2),
            ln_q: (push(&self.ln_q.0), push(&self.ln_q.1)),
            ln_kv: (push(&self.ln_kv.0), push(&self.ln_kv.1)),
            ln_ff: (push(&self.ln_ff.0), push(&self.ln_ff.1)),
        }
    }
}

fn check_heads(dim: usize, heads: usize) -> Result<()> {
    if heads == 0 || dim % heads != 0 {
        return Err(Error::contract(format!(
            "head count {heads} must divide channel width {dim}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionBlockVars {
    pub heads: usize,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub ff1: Var,
    pub ff2: Var,
    pub ln_q: (Var, Var),
    pub ln_kv: (Var, Var),
    pub ln_ff: (Var, Var),
}

impl AttentionBlockVars {
    pub fn from_bound(bound: &Bound, prefix: &str, heads: usize) -> Result<Self> {
        let g = |n: &str| bound.get(&format!("{prefix}.{n}"));
        Ok(Self {
            heads,
            wq: g("wq")?,
            wk: g("wk")?,
            wv: g("wv")?,
            wo: g("wo")?,
            ff1: g("ff1")?,
            ff2: g("ff2")?,
            ln_q: (g("ln_q.g")?, g("ln_q.b")?),
            ln_kv: (g("ln_kv.g")?, g("ln_kv.b")?),
            ln_ff: (g("ln_ff.g")?, g("ln_ff.b")?),
        })
    }
}

/// One cross-attention block: `queries[N_q×C]` attend to `context[N_kv×C]`.
pub fn cross_attention_block<T: Real>(
    tape: &mut Tape<T>,
    queries: Var,
    context: Var,
    w: &AttentionBlockVars,
) -> Result<Var> {
    let c = tape.value(queries).cols();
    let wdim = tape.value(w.wq).rows();
    if tape.value(context).cols() != c || wdim != c {
        return Err(Error::dim(
            "cross_attention",
            tape.shape(queries),
            tape.shape(context),
        ));
    }
    check_heads(c, w.heads)?;
    let eps = T::c(LN_EPS);
    let hq = tape.layer_norm(queries, w.ln_q.0, w.ln_q.1, eps)?;
    let hkv = tape.layer_norm(context, w.ln_kv.0, w.ln_kv.1, eps)?;
    let q = tape.matmul(hq, w.wq)?;
    let k = tape.matmul(hkv, w.wk)?;
    let v = tape.matmul(hkv, w.wv)?;

    let d = c / w.heads;
    let scale = T::one() / T::c(d as f64).sqrt();
    let mut head_out = Vec::with_capacity(w.heads);
    for h in 0..w.heads {
        let qh = tape.slice_cols(q, h * d, (h + 1) * d)?;
        let kh = tape.slice_cols(k, h * d, (h + 1) * d)?;
        let vh = tape.slice_cols(v, h * d, (h + 1) * d)?;
        let scores = tape.matmul_nt(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax(scores);
        head_out.push(tape.matmul(attn, vh)?);
    }
    let heads = if head_out.len() == 1 {
        head_out[0]
    } else {
        tape.concat_cols(&head_out)?
    };
    let attn_out = tape.matmul(heads, w.wo)?;
    let x = tape.add(queries, attn_out)?;

    let hf = tape.layer_norm(x, w.ln_ff.0, w.ln_ff.1, eps)?;
    let f1 = tape.matmul(hf, w.ff1)?;
    let f1 = tape.gelu(f1);
    let f2 = tape.matmul(f1, w.ff2)?;
    tape.add(x, f2)
}

/// Applies a stack of blocks in order, all attending to the same context.
pub fn attention_stack<T: Real>(
    tape: &mut Tape<T>,
    queries: Var,
    context: Var,
    blocks: &[AttentionBlockVars],
) -> Result<Var> {
    blocks
        .iter()
        .try_fold(queries, |x, b| cross_attention_block(tape, x, context, b))
}

/// Tape-free evaluation of one block.
pub fn cross_attention<T: Real>(
    queries: &Tensor<T>,
    context: &Tensor<T>,
    w: &AttentionBlockWeights<T>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vars = w.bind(&mut tape, false);
    let q = tape.constant(queries.clone());
    let kv = tape.constant(context.clone());
    let out = cross_attention_block(&mut tape, q, kv, &vars)?;
    Ok(tape.value(out).clone())
}
