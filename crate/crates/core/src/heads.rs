//! Gaussian attribute decoders.
//!
//! A shared two-layer GELU trunk feeds one fused linear head whose 14 raw
//! outputs are split as
//!
//! | columns | attribute | activation |
//! |---------|-----------|------------|
//! | 0..3    | color     | sigmoid |
//! | 3       | opacity   | sigmoid |
//! | 4..7    | scale     | `s_max · sigmoid` |
//! | 7..11   | rotation  | normalize, zero vector → identity `(1, 0, 0, 0)` |
//! | 11..14  | offset    | `ε · tanh` |

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{LinearVars, LinearWeights, MlpVars, MlpWeights};
use crate::nn::params::{Bound, ParamStore};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::nn::Activation;
use crate::real::Real;

pub const RAW_WIDTH: usize = 14;
pub const COARSE_OFFSET_BOUND: f64 = 0.15;
pub const DENSE_OFFSET_BOUND: f64 = 0.056;
pub const DEFAULT_SCALE_MAX: f64 = 0.05;
pub const IDENTITY_QUAT: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub offset_bound: f64,
    pub scale_max: f64,
}

/// Starting values for the head biases, expressed in attribute space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderInit {
    pub opacity: f64,
    pub scale: f64,
    pub head_gain: f64,
}

impl Default for DecoderInit {
    fn default() -> Self {
        Self {
            opacity: 0.5,
            scale: 0.5 * DEFAULT_SCALE_MAX,
            head_gain: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderWeights<T> {
    pub trunk: MlpWeights<T>,
    pub head: LinearWeights<T>,
    pub offset_bound: f64,
    pub scale_max: f64,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

impl<T: Real> DecoderWeights<T> {
    pub fn random(cfg: &DecoderConfig, init: &DecoderInit, rng: &mut impl Rng) -> Result<Self> {
        check_cfg(cfg)?;
        let trunk = MlpWeights::random(&[cfg.in_dim, cfg.hidden, cfg.hidden], rng);
        let mut head = LinearWeights::random(cfg.hidden, RAW_WIDTH, init.head_gain, rng);
        let b = head.b.data_mut();
        b[3] = T::c(logit(init.opacity));
        for v in &mut b[4..7] {
            *v = T::c(logit(init.scale / cfg.scale_max));
        }
        b[7] = T::one();
        Ok(Self {
            trunk,
            head,
            offset_bound: cfg.offset_bound,
            scale_max: cfg.scale_max,
        })
    }

    pub fn zeros(cfg: &DecoderConfig) -> Result<Self> {
        check_cfg(cfg)?;
        Ok(Self {
            trunk: MlpWeights::zeros(&[cfg.in_dim, cfg.hidden, cfg.hidden]),
            head: LinearWeights::zeros(cfg.hidden, RAW_WIDTH),
            offset_bound: cfg.offset_bound,
            scale_max: cfg.scale_max,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.trunk.layers[0].fan_in()
    }

    pub fn insert_into(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<()> {
        self.trunk.insert_into(store, &format!("{prefix}.trunk"))?;
        self.head.insert_into(store, &format!("{prefix}.head"))
    }

    pub fn from_store(store: &ParamStore<T>, prefix: &str, offset_bound: f64, scale_max: f64) -> Result<Self> {
        Ok(Self {
            trunk: MlpWeights::from_store(store, &format!("{prefix}.trunk"), 2)?,
            head: LinearWeights::from_store(store, &format!("{prefix}.head"))?,
            offset_bound,
            scale_max,
        })
    }
}

fn check_cfg(cfg: &DecoderConfig) -> Result<()> {
    if !(cfg.offset_bound > 0.0) || !(cfg.scale_max > 0.0) {
        return Err(Error::contract("offset bound and scale cap must be positive"));
    }
    Ok(())
}

/// Decoder bound to a tape.
#[derive(Clone, Debug)]
pub struct DecoderVars {
    pub trunk: MlpVars,
    pub head: LinearVars,
    pub offset_bound: f64,
    pub scale_max: f64,
}

impl DecoderVars {
    pub fn from_bound(bound: &Bound, prefix: &str, offset_bound: f64, scale_max: f64) -> Result<Self> {
        Ok(Self {
            trunk: MlpVars::from_bound(bound, &format!("{prefix}.trunk"), 2)?,
            head: LinearVars::from_bound(bound, &format!("{prefix}.head"))?,
            offset_bound,
            scale_max,
        })
    }

    pub fn bind<T: Real>(w: &DecoderWeights<T>, tape: &mut Tape<T>, trainable: bool) -> Self {
        Self {
            trunk: MlpVars::bind(&w.trunk, tape, trainable),
            head: LinearVars::bind(&w.head, tape, trainable),
            offset_bound: w.offset_bound,
            scale_max: w.scale_max,
        }
    }
}

/// Per-point attributes as tape variables.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVars {
    pub color: Var,
    pub opacity: Var,
    pub scale: Var,
    pub rotation: Var,
    pub offset: Var,
}

/// Per-point attributes: color `N×3`, opacity `N×1`, scale `N×3`,
/// rotation `N×4` (unit quaternion, scalar first) and offset `N×3`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianAttrs<T> {
    pub color: Tensor<T>,
    pub opacity: Tensor<T>,
    pub scale: Tensor<T>,
    pub rotation: Tensor<T>,
    pub offset: Tensor<T>,
}

impl<T: Real> GaussianAttrs<T> {
    pub fn len(&self) -> usize {
        self.color.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_tape(tape: &Tape<T>, v: &GaussianVars) -> Self {
        Self {
            color: tape.value(v.color).clone(),
            opacity: tape.value(v.opacity).clone(),
            scale: tape.value(v.scale).clone(),
            rotation: tape.value(v.rotation).clone(),
            offset: tape.value(v.offset).clone(),
        }
    }
}

/// Runs the decoder on `features[N × in_dim]`.
pub fn decode_var<T: Real>(tape: &mut Tape<T>, w: &DecoderVars, features: Var) -> Result<GaussianVars> {
    let x = tape.value(features);
    let in_dim = tape.value(w.trunk.layers[0].w).rows();
    if x.cols() != in_dim {
        return Err(Error::dim("decode", x.shape(), tape.shape(w.trunk.layers[0].w)));
    }
    if let Some(i) = x.first_non_finite() {
        return Err(Error::NonFinite {
            what: "point features (row)",
            index: i / x.cols().max(1),
        });
    }
    let h = w.trunk.forward(tape, features, Activation::Gelu)?;
    let h = tape.gelu(h);
    let raw = w.head.forward(tape, h)?;

    let color = tape.slice_cols(raw, 0, 3)?;
    let color = tape.sigmoid(color);
    let opacity = tape.slice_cols(raw, 3, 4)?;
    let opacity = tape.sigmoid(opacity);
    let scale = tape.slice_cols(raw, 4, 7)?;
    let scale = tape.sigmoid(scale);
    let scale = tape.scale(scale, T::c(w.scale_max));
    let rotation = tape.slice_cols(raw, 7, 11)?;
    let rotation = tape.normalize_rows(rotation, &IDENTITY_QUAT.map(T::c))?;
    let offset = tape.slice_cols(raw, 11, 14)?;
    let offset = tape.tanh(offset);
    let offset = tape.scale(offset, T::c(w.offset_bound));
    Ok(GaussianVars {
        color,
        opacity,
        scale,
        rotation,
        offset,
    })
}

/// Tape-free decoding.
pub fn decode<T: Real>(features: &Tensor<T>, w: &DecoderWeights<T>) -> Result<GaussianAttrs<T>> {
    let mut tape = Tape::new();
    let vars = DecoderVars::bind(w, &mut tape, false);
    let x = tape.constant(features.clone());
    let out = decode_var(&mut tape, &vars, x)?;
    Ok(GaussianAttrs::from_tape(&tape, &out))
}

/// Coarse stage: point features straight from the attention stack.
pub fn decode_coarse<T: Real>(point_features: &Tensor<T>, w: &DecoderWeights<T>) -> Result<GaussianAttrs<T>> {
    decode(point_features, w)
}

/// Dense stage: densified point features concatenated with aggregated
/// triplane features.
pub fn decode_dense<T: Real>(
    point_features: &Tensor<T>,
    triplane_features: &Tensor<T>,
    w: &DecoderWeights<T>,
) -> Result<GaussianAttrs<T>> {
    if point_features.rows() != triplane_features.rows() {
        return Err(Error::dim("decode_dense", point_features.shape(), triplane_features.shape()));
    }
    let width = point_features.cols() + triplane_features.cols();
    if width != w.in_dim() {
        return Err(Error::dim("decode_dense", &[point_features.rows(), width], &[w.in_dim()]));
    }
    let mut tape = Tape::new();
    let vars = DecoderVars::bind(w, &mut tape, false);
    let a = tape.constant(point_features.clone());
    let b = tape.constant(triplane_features.clone());
    let x = tape.concat_cols(&[a, b])?;
    let out = decode_var(&mut tape, &vars, x)?;
    Ok(GaussianAttrs::from_tape(&tape, &out))
}
