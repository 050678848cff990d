use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{Activation, MlpVars, MlpWeights};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::raster::{rasterize, rasterize_var, Camera, CloudVars, GaussianCloud};
use crate::real::Real;

pub const DECODER_ACTIVATION: Activation = Activation::Relu;

/// Per-pixel `C_feat → hidden → 3` MLP turning a feature image into RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDecoderWeights<T> {
    pub mlp: MlpWeights<T>,
}

impl<T: Real> FeatureDecoderWeights<T> {
    pub fn random(c_feat: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            mlp: MlpWeights::random(&[c_feat, hidden, 3], rng),
        }
    }

    /// Passes the first three channels through unchanged
    /// (`relu(x) − relu(−x) = x`).
    pub fn identity(c_feat: usize) -> Self {
        let mut mlp = MlpWeights::zeros(&[c_feat, 6, 3]);
        for k in 0..3.min(c_feat) {
            mlp.layers[0].w.data_mut()[k * 6 + k] = T::one();
            mlp.layers[0].w.data_mut()[k * 6 + 3 + k] = -T::one();
            mlp.layers[1].w.data_mut()[k * 3 + k] = T::one();
            mlp.layers[1].w.data_mut()[(3 + k) * 3 + k] = -T::one();
        }
        Self { mlp }
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.layers[0].fan_in()
    }
}

/// Rasterizes per-point features over a zero background; `HW × C_feat`.
pub fn render_feature_image<T: Real>(
    cloud: &GaussianCloud<T>,
    features: &Tensor<T>,
    cam: &Camera,
) -> Result<Tensor<T>> {
    let with = cloud.with_colors(features.clone())?;
    let bg = vec![0.0; features.cols()];
    Ok(rasterize(&with, cam, &bg)?.color_tensor())
}

pub fn decode_to_rgb<T: Real>(feature_image: &Tensor<T>, w: &FeatureDecoderWeights<T>) -> Result<Tensor<T>> {
    if feature_image.cols() != w.in_dim() {
        return Err(Error::dim("decode_to_rgb", feature_image.shape(), &[feature_image.rows(), w.in_dim()]));
    }
    w.mlp.eval(feature_image, DECODER_ACTIVATION)
}

/// Tape version: renders `features` through `cloud`'s geometry and decodes.
/// Returns `(rgb[HW × 3], alpha[HW × 1])`.
pub fn render_decoded_var<T: Real>(
    tape: &mut Tape<T>,
    cloud: &CloudVars,
    features: Var,
    cam: &Camera,
    decoder: &MlpVars,
) -> Result<(Var, Var)> {
    let c = tape.value(features).cols();
    let img = rasterize_var(tape, &cloud.with_colors(features), cam, &vec![0.0; c])?;
    let feat = tape.slice_cols(img, 0, c)?;
    let alpha = tape.slice_cols(img, c, c + 1)?;
    let rgb = decoder.forward(tape, feat, DECODER_ACTIVATION)?;
    Ok((rgb, alpha))
}
