use crate::encode::{extract_image_features, fuse_layers_var, ImageFeatureSet};
use crate::error::{Error, Result, StageExt};
use crate::heads::{decode_var, DecoderVars, GaussianVars};
use crate::imageio::Image;
use crate::nn::{attention_stack, Activation, AttentionBlockVars, Bound, MlpVars, Tape, Tensor, Var};
use crate::pipeline::config::ModelConfig;
use crate::pipeline::model::{
    ModelWeights, Template, AGGREGATOR, COARSE, DENSE, EXTRACTOR, FEATURE_DECODER, FUSION, POINT_BLOCK, POINT_EMBED,
    TRIPLANE,
};
use crate::raster::{Camera, CloudVars, GaussianCloud};
use crate::real::Real;
use crate::triplane::{
    decode_to_rgb, query_var, refine_var, render_feature_image, AggregatorVars, FeatureDecoderWeights,
    SphericalTriplane, TriplaneBranchVars,
};

/// Every trainable sub-network of [`ModelWeights`] bound to one tape. The
/// frozen image backbone is left off: its features are computed up front.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub bound: Bound,
    pub fusion: MlpVars,
    pub embed: MlpVars,
    pub point_blocks: Vec<AttentionBlockVars>,
    pub coarse: DecoderVars,
    pub dense: DecoderVars,
    pub triplane: TriplaneBranchVars,
    pub aggregator: AggregatorVars,
    pub feature_decoder: MlpVars,
}

impl ModelVars {
    pub fn bind<T: Real>(w: &ModelWeights<T>, tape: &mut Tape<T>, trainable: bool) -> Result<Self> {
        let cfg = &w.config;
        let bound = w
            .store
            .bind_with(tape, |name| (!name.starts_with(EXTRACTOR)).then_some(trainable));
        Ok(Self {
            fusion: MlpVars::from_bound(&bound, FUSION, 2)?,
            embed: MlpVars::from_bound(&bound, POINT_EMBED, 2)?,
            point_blocks: (0..cfg.point_blocks)
                .map(|i| AttentionBlockVars::from_bound(&bound, &format!("{POINT_BLOCK}{i}"), cfg.heads))
                .collect::<Result<_>>()?,
            coarse: DecoderVars::from_bound(&bound, COARSE, cfg.coarse_offset, cfg.scale_max)?,
            dense: DecoderVars::from_bound(&bound, DENSE, cfg.dense_offset, cfg.scale_max)?,
            triplane: TriplaneBranchVars::from_bound(&bound, TRIPLANE, cfg.triplane_blocks, cfg.heads)?,
            aggregator: AggregatorVars::from_bound(&bound, AGGREGATOR, cfg.ray_samples, cfg.ray_spacing)?,
            feature_decoder: MlpVars::from_bound(&bound, FEATURE_DECODER, 2)?,
            bound,
        })
    }
}

/// Handles to everything one forward pass produces.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub coarse: CloudVars,
    pub dense: CloudVars,
    /// Densified coarse positions, `M_D × 3`, before the dense offsets.
    pub dense_base: Var,
    /// Refined plane tokens, absent when the branch is disabled.
    pub triplane_tokens: Option<Var>,
    /// Aggregated per-point triplane features, `M_D × C_agg`.
    pub triplane_features: Var,
}

fn cloud(positions: Var, a: &GaussianVars) -> CloudVars {
    CloudVars {
        positions,
        colors: a.color,
        opacity: a.opacity,
        scales: a.scale,
        rotations: a.rotation,
    }
}

/// The full feed-forward pass on a tape.
pub fn forward_var<T: Real>(
    tape: &mut Tape<T>,
    vars: &ModelVars,
    cfg: &ModelConfig,
    template: &Template,
    features: &ImageFeatureSet<T>,
) -> Result<ForwardVars> {
    let image_tokens = fuse_layers_var(tape, features, &vars.fusion).stage("encode")?;

    let encoded = tape.constant(template.encoded_vertices());
    let points = vars.embed.forward(tape, encoded, Activation::Gelu).stage("point branch")?;
    let points = attention_stack(tape, points, image_tokens, &vars.point_blocks).stage("point branch")?;

    let coarse = decode_var(tape, &vars.coarse, points).stage("coarse decode")?;
    let canonical = tape.constant(template.vertices());
    let coarse_pos = tape.add(canonical, coarse.offset).stage("coarse decode")?;

    let dense_base = template.table.densify_var(tape, coarse_pos).stage("densify")?;
    let dense_points = template.table.densify_var(tape, points).stage("densify")?;

    let (triplane_tokens, triplane_features) = if cfg.triplane_enabled {
        let layout = cfg.triplane_layout();
        let tb = &vars.triplane;
        let tokens = refine_var(tape, tb.tokens, image_tokens, &tb.stack, &tb.projection, &layout).stage("triplane")?;
        let f = query_var(tape, tokens, layout, dense_base, &template.rig, &vars.aggregator, cfg.ray_mode)
            .stage("triplane")?;
        (Some(tokens), f)
    } else {
        let zeros = Tensor::zeros(&[template.dense_count(), cfg.aggregate_channels]);
        (None, tape.constant(zeros))
    };

    let x = tape.concat_cols(&[dense_points, triplane_features]).stage("dense decode")?;
    let dense = decode_var(tape, &vars.dense, x).stage("dense decode")?;
    let dense_pos = tape.add(dense_base, dense.offset).stage("dense decode")?;

    Ok(ForwardVars {
        coarse: cloud(coarse_pos, &coarse),
        dense: cloud(dense_pos, &dense),
        dense_base,
        triplane_tokens,
        triplane_features,
    })
}

/// Output of one tape-free reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction<T> {
    pub coarse: GaussianCloud<T>,
    pub dense: GaussianCloud<T>,
    pub dense_base: Tensor<T>,
    pub triplane: Option<SphericalTriplane<T>>,
    pub triplane_features: Tensor<T>,
}

impl<T: Real> Reconstruction<T> {
    /// The triplane branch's own render: dense geometry carrying the
    /// aggregated features, decoded per pixel to RGB. `HW × 3`.
    pub fn render_triplane_branch(&self, weights: &ModelWeights<T>, cam: &Camera) -> Result<Tensor<T>> {
        let mlp = crate::nn::MlpWeights::from_store(&weights.store, FEATURE_DECODER, 2)?;
        let img = render_feature_image(&self.dense, &self.triplane_features, cam)?;
        decode_to_rgb(&img, &FeatureDecoderWeights { mlp })
    }
}

/// Reconstruction from precomputed image features.
pub fn reconstruct_from_features<T: Real>(
    features: &ImageFeatureSet<T>,
    weights: &ModelWeights<T>,
    template: &Template,
) -> Result<Reconstruction<T>> {
    let mut tape = Tape::new();
    let vars = ModelVars::bind(weights, &mut tape, false)?;
    let out = forward_var(&mut tape, &vars, &weights.config, template, features)?;
    let triplane = match out.triplane_tokens {
        Some(t) => Some(SphericalTriplane::new(weights.config.triplane_layout(), tape.value(t).clone())?),
        None => None,
    };
    Ok(Reconstruction {
        coarse: out.coarse.value(&tape),
        dense: out.dense.value(&tape),
        dense_base: tape.value(out.dense_base).clone(),
        triplane,
        triplane_features: tape.value(out.triplane_features).clone(),
    })
}

/// Single-image reconstruction: backbone features, then the feed-forward pass.
pub fn reconstruct<T: Real>(image: &Image, weights: &ModelWeights<T>, template: &Template) -> Result<Reconstruction<T>> {
    let size = weights.config.image_size;
    if image.width != size || image.height != size {
        return Err(Error::dim("input image", &[image.height, image.width], &[size, size])).stage("encode");
    }
    let features = extract_image_features(image, &weights.extractor()?).stage("encode")?;
    reconstruct_from_features(&features, weights, template)
}

/// Asserts the output contract: counts, offset bounds, unit quaternions and
/// attribute ranges.
pub fn check_reconstruction<T: Real>(rec: &Reconstruction<T>, cfg: &ModelConfig, template: &Template) -> Result<()> {
    let fail = |msg: String| Err(Error::contract(msg));
    if rec.coarse.len() != template.coarse_count() {
        return fail(format!("coarse count {} ≠ {}", rec.coarse.len(), template.coarse_count()));
    }
    if rec.dense.len() != template.dense_count() {
        return fail(format!("dense count {} ≠ {}", rec.dense.len(), template.dense_count()));
    }
    let eps = T::epsilon().f64();
    let bound_check = |pos: &Tensor<T>, base: &Tensor<T>, bound: f64, what: &str| -> Result<()> {
        for (i, (&p, &b)) in pos.data().iter().zip(base.data()).enumerate() {
            let tol = 4.0 * eps * (1.0 + b.f64().abs());
            if (p - b).f64().abs() > bound + tol {
                return fail(format!("{what} offset {} exceeds {bound} at point {}", (p - b).f64(), i / 3));
            }
        }
        Ok(())
    };
    bound_check(&rec.coarse.positions, &template.vertices(), cfg.coarse_offset, "coarse")?;
    bound_check(&rec.dense.positions, &rec.dense_base, cfg.dense_offset, "dense")?;
    for (name, c) in [("coarse", &rec.coarse), ("dense", &rec.dense)] {
        let unit = |t: &Tensor<T>, lo: f64, hi: f64, what: &str| -> Result<()> {
            match t.data().iter().position(|v| !(v.f64() >= lo && v.f64() <= hi)) {
                Some(i) => fail(format!("{name} {what} out of [{lo}, {hi}] at index {i}")),
                None => Ok(()),
            }
        };
        unit(&c.colors, 0.0, 1.0, "color")?;
        unit(&c.opacity, 0.0, 1.0, "opacity")?;
        unit(&c.scales, 0.0, cfg.scale_max * (1.0 + eps), "scale")?;
        for i in 0..c.len() {
            let n: f64 = c.rotations.row(i).iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e3 * eps {
                return fail(format!("{name} quaternion {i} has norm {n}"));
            }
        }
    }
    Ok(())
}
