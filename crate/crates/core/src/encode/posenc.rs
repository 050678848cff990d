use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PositionalEncoderConfig {
    pub frequencies: usize,
    pub include_input: bool,
}

impl Default for PositionalEncoderConfig {
    fn default() -> Self {
        Self {
            frequencies: 6,
            include_input: false,
        }
    }
}

impl PositionalEncoderConfig {
    pub fn out_dim(&self) -> usize {
        3 * 2 * self.frequencies + if self.include_input { 3 } else { 0 }
    }
}

/// Sinusoidal encoding of `N × 3` points.
///
/// Column order: the raw `(x, y, z)` first when `include_input` is set, then
/// axis-major blocks `[sin(2⁰πv), cos(2⁰πv), sin(2¹πv), cos(2¹πv), …]` for
/// `x`, then `y`, then `z`.
pub fn positional_encode<T: Real>(points: &Tensor<T>, cfg: &PositionalEncoderConfig) -> Result<Tensor<T>> {
    if points.shape().len() != 2 || points.cols() != 3 {
        return Err(Error::dim("positional_encode", points.shape(), &[points.rows(), 3]));
    }
    if cfg.frequencies == 0 {
        return Err(Error::contract("positional encoding needs at least one frequency"));
    }
    let width = cfg.out_dim();
    let mut out = Vec::with_capacity(points.rows() * width);
    for r in 0..points.rows() {
        let p = points.row(r);
        if cfg.include_input {
            out.extend_from_slice(p);
        }
        for &v in p {
            let mut freq = T::c(PI);
            for _ in 0..cfg.frequencies {
                let a = freq * v;
                out.push(a.sin());
                out.push(a.cos());
                freq = freq + freq;
            }
        }
    }
    Tensor::new(&[points.rows(), width], out)
}
