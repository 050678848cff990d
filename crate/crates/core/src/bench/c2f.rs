//! Coarse-to-fine versus direct dense attention in the point branch.
//!
//! Both paths end with `M_D` point features. The coarse-to-fine path attends
//! with the `M_C` template vertices and densifies afterwards; the direct path
//! densifies the template first and runs the same attention stack over all
//! `M_D` points.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::alloc::measure_peak;
use crate::encode::{extract_image_features, fuse_layers_var, positional_encode, ImageFeatureSet};
use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::nn::{attention_stack, Activation, Tape, Tensor};
use crate::pipeline::{ModelConfig, ModelVars, ModelWeights, Template};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathCost {
    /// Points that went through the attention stack.
    pub attended: usize,
    /// Best wall time over the repeats.
    pub seconds: f64,
    /// Peak heap growth during one run; absent without the counting allocator.
    pub peak_bytes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C2fReport {
    pub dense_count: usize,
    pub coarse_to_fine: PathCost,
    pub direct: PathCost,
    /// Direct time over coarse-to-fine time.
    pub speedup: f64,
    /// Direct peak memory over coarse-to-fine peak memory.
    pub memory_ratio: Option<f64>,
    /// Shape of the point features both paths produce, `M_D × C`.
    pub output_shape: [usize; 2],
}

struct Setup {
    weights: ModelWeights<f32>,
    template: Template,
    features: ImageFeatureSet<f32>,
    dense_encoded: Tensor<f32>,
}

fn setup(cfg: &ModelConfig, seed: u64) -> Result<Setup> {
    let weights = ModelWeights::<f32>::init(cfg, seed)?;
    let template = Template::build(cfg)?;
    let n = cfg.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = Image::new(n, n, 3, Tensor::<f32>::uniform(&[n * n * 3], 0.0, 1.0, &mut rng).into_data())?;
    let features = extract_image_features(&image, &weights.extractor()?)?;
    let dense_vertices = template.table.densify_features(&template.vertices::<f64>())?;
    let dense_encoded = positional_encode(&dense_vertices, &cfg.positional())?.cast();
    Ok(Setup {
        weights,
        template,
        features,
        dense_encoded,
    })
}

/// Point-branch features via attention over the coarse vertices, then
/// densification.
fn coarse_to_fine(s: &Setup) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let vars = ModelVars::bind(&s.weights, &mut tape, false)?;
    let tokens = fuse_layers_var(&mut tape, &s.features, &vars.fusion)?;
    let encoded = tape.constant(s.template.encoded_vertices());
    let points = vars.embed.forward(&mut tape, encoded, Activation::Gelu)?;
    let points = attention_stack(&mut tape, points, tokens, &vars.point_blocks)?;
    let dense = s.template.table.densify_var(&mut tape, points)?;
    Ok(tape.shape(dense).to_vec())
}

/// The same features computed by attending with every dense point.
fn direct(s: &Setup) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let vars = ModelVars::bind(&s.weights, &mut tape, false)?;
    let tokens = fuse_layers_var(&mut tape, &s.features, &vars.fusion)?;
    let encoded = tape.constant(s.dense_encoded.clone());
    let points = vars.embed.forward(&mut tape, encoded, Activation::Gelu)?;
    let points = attention_stack(&mut tape, points, tokens, &vars.point_blocks)?;
    Ok(tape.shape(points).to_vec())
}

fn cost(attended: usize, repeats: usize, f: impl Fn() -> Result<Vec<usize>>) -> Result<(PathCost, Vec<usize>)> {
    let (shape, peak) = measure_peak(&f);
    let shape = shape?;
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok((
        PathCost {
            attended,
            seconds: best,
            peak_bytes: peak,
        },
        shape,
    ))
}

pub fn run_c2f_bench(cfg: &ModelConfig, seed: u64, repeats: usize) -> Result<C2fReport> {
    let s = setup(cfg, seed)?;
    let (c2f, shape_a) = cost(s.template.coarse_count(), repeats, || coarse_to_fine(&s))?;
    let (dir, shape_b) = cost(s.template.dense_count(), repeats, || direct(&s))?;
    if shape_a != shape_b {
        return Err(Error::contract(format!("paths disagree on output shape: {shape_a:?} vs {shape_b:?}")));
    }
    let memory_ratio = match (c2f.peak_bytes, dir.peak_bytes) {
        (Some(a), Some(b)) if a > 0 => Some(b as f64 / a as f64),
        _ => None,
    };
    Ok(C2fReport {
        dense_count: s.template.dense_count(),
        coarse_to_fine: c2f,
        direct: dir,
        speedup: dir.seconds / c2f.seconds,
        memory_ratio,
        output_shape: [shape_a[0], shape_a[1]],
    })
}
