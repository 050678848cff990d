//! Finite-difference gradient suite over every differentiable operation.
//!
//! Each case builds a small graph at 64-bit precision, projects its output
//! onto a fixed random tensor to get a scalar, and compares the tape
//! gradient of every input entry against central differences. The last
//! case checks the full training loss of the micro config on randomly
//! chosen weights.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encode::{extract_image_features, fuse_layers_var, ImageFeatureSet};
use crate::error::Result;
use crate::heads::{decode_var, DecoderConfig, DecoderInit, DecoderVars, DecoderWeights};
use crate::imageio::Image;
use crate::nn::gradcheck::{numeric_gradient, relative_error};
use crate::nn::{cross_attention_block, AttentionBlockWeights, MlpVars, MlpWeights, Tape, Tensor, Var};
use crate::pipeline::{
    compute_losses_var, loss_and_gradients, ModelConfig, ModelWeights, NoPerceptual, Template, TrainConfig,
    TrainingSample, ViewRenders, ViewTarget,
};
use crate::raster::{rasterize_var, Camera, CloudVars};
use crate::synthdata::{focal_from_fov, generate_scene, render_view, SceneSpec};
use crate::triplane::{
    query_var, ray_samples_var, refine_var, render_decoded_var, sample_var, AggregatorVars, AggregatorWeights,
    RayMode, TriplaneLayout, VirtualCameraRig,
};

/// Tolerance for single operations.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Tolerance for the end-to-end loss.
pub const END_TO_END_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    /// Gradient entries compared.
    pub entries: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    /// Probes discarded as non-smooth (end-to-end case only).
    pub skipped: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradSuiteReport {
    pub seed: u64,
    pub checks: Vec<GradCheck>,
}

impl GradSuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

/// Relative errors are taken against `max(|a|, |n|, floor)` with the floor
/// this fraction of the input's largest gradient entry. Entries far below
/// that scale carry only the round-off of the difference quotient.
const FLOOR_FRACTION: f64 = 1e-3;

struct Checker {
    rng: ChaCha8Rng,
    checks: Vec<GradCheck>,
}

impl Checker {
    /// Checks `sum(build(inputs) ⊙ P)` for a random `P` against central
    /// differences with step `h` on every input entry.
    fn op(&mut self, name: &str, inputs: &[Tensor<f64>], h: f64, build: &Build) -> Result<()> {
        let probe_seed: u64 = self.rng.random();
        let run = |xs: &[Tensor<f64>], grads: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
            let y = build(&mut tape, &vars)?;
            let mut prng = ChaCha8Rng::seed_from_u64(probe_seed);
            let p = tape.constant(Tensor::randn(tape.shape(y), 1.0, &mut prng));
            let m = tape.mul(y, p)?;
            let loss = tape.sum(m);
            let value = tape.value(loss).data()[0];
            if !grads {
                return Ok((value, Vec::new()));
            }
            let mut g = tape.backward(loss)?;
            Ok((value, vars.iter().map(|&v| g.take(v)).collect()))
        };
        let (_, analytic) = run(inputs, true)?;
        let mut worst: f64 = 0.0;
        let mut entries = 0;
        for (i, x) in inputs.iter().enumerate() {
            let mut failure = None;
            let numeric = numeric_gradient(
                &mut |t| {
                    let mut xs = inputs.to_vec();
                    xs[i] = t.clone();
                    match run(&xs, false) {
                        Ok((v, _)) => v,
                        Err(e) => {
                            failure.get_or_insert(e);
                            f64::NAN
                        }
                    }
                },
                x,
                h,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            let floor = analytic[i].data().iter().fold(0.0, |m: f64, v| m.max(v.abs())) * FLOOR_FRACTION;
            let floor = floor.max(f64::MIN_POSITIVE);
            for (a, n) in analytic[i].data().iter().zip(numeric.data()) {
                worst = worst.max(relative_error(*a, *n, floor));
            }
            entries += x.len();
        }
        self.push(name, entries, worst, OP_TOLERANCE);
        Ok(())
    }

    fn push(&mut self, name: &str, entries: usize, err: f64, tolerance: f64) {
        self.checks.push(GradCheck {
            name: name.to_string(),
            entries,
            max_relative_error: err,
            tolerance,
            skipped: 0,
            // NaN fails.
            passed: err <= tolerance,
        });
    }

    fn randn(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::randn(shape, 1.0, &mut self.rng)
    }

    fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::uniform(shape, lo, hi, &mut self.rng)
    }
}

/// Entries pushed at least `margin` away from zero, for ops with a kink there.
fn away_from_zero(t: Tensor<f64>, margin: f64) -> Tensor<f64> {
    t.map(|v| if v >= 0.0 { v + margin } else { v - margin })
}

fn tape_ops(c: &mut Checker) -> Result<()> {
    let a = c.randn(&[4, 3]);
    let b = c.randn(&[4, 3]);
    let ab = [a.clone(), b.clone()];
    let h = 1e-5;
    c.op("add", &ab, h, &|t, v| t.add(v[0], v[1]))?;
    c.op("sub", &ab, h, &|t, v| t.sub(v[0], v[1]))?;
    c.op("mul", &ab, h, &|t, v| t.mul(v[0], v[1]))?;
    c.op("scale", &ab[..1], h, &|t, v| Ok(t.scale(v[0], 2.5)))?;
    c.op("sigmoid", &ab[..1], h, &|t, v| Ok(t.sigmoid(v[0])))?;
    c.op("tanh", &ab[..1], h, &|t, v| Ok(t.tanh(v[0])))?;
    c.op("gelu", &ab[..1], h, &|t, v| Ok(t.gelu(v[0])))?;
    c.op("exp", &ab[..1], h, &|t, v| Ok(t.exp(v[0])))?;
    c.op("softmax", &ab[..1], h, &|t, v| Ok(t.softmax(v[0])))?;
    c.op("sum", &ab[..1], h, &|t, v| Ok(t.sum(v[0])))?;
    c.op("mean", &ab[..1], h, &|t, v| Ok(t.mean(v[0])))?;
    c.op("slice_cols", &ab[..1], h, &|t, v| t.slice_cols(v[0], 1, 3))?;
    c.op("concat_cols", &ab, h, &|t, v| t.concat_cols(&[v[0], v[1], v[0]]))?;
    c.op("concat_rows", &ab, h, &|t, v| t.concat_rows(&[v[1], v[0]]))?;
    c.op("reshape", &ab[..1], h, &|t, v| t.reshape(v[0], &[2, 6]))?;
    c.op("matmul_nt", &ab, h, &|t, v| t.matmul_nt(v[0], v[1]))?;
    c.op("normalize_rows", &ab[..1], h, &|t, v| t.normalize_rows(v[0], &[1.0, 0.0, 0.0]))?;

    let kinked = [away_from_zero(a.clone(), 0.1), b.clone()];
    c.op("relu", &kinked[..1], h, &|t, v| Ok(t.relu(v[0])))?;
    let diff = [away_from_zero(a.clone(), 0.1), Tensor::zeros(&[4, 3])];
    c.op("l1_mean", &diff, h, &|t, v| t.l1_mean(v[0], v[1]))?;

    let x = c.randn(&[3, 4]);
    let w = c.randn(&[4, 5]);
    let bias = c.randn(&[5]);
    c.op("matmul", &[x.clone(), w.clone()], h, &|t, v| t.matmul(v[0], v[1]))?;
    let row = c.randn(&[4]);
    c.op("add_row", &[x.clone(), row], h, &|t, v| t.add_row(v[0], v[1]))?;
    c.op("linear", &[x.clone(), w, bias], h, &|t, v| t.linear(v[0], v[1], v[2]))?;
    let gamma = c.randn(&[4]);
    let beta = c.randn(&[4]);
    c.op("layer_norm", &[x, gamma, beta], h, &|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5))?;

    let parents = Rc::new(vec![[0u32, 1, 2], [3, 3, 0], [1, 2, 3], [2, 0, 1]]);
    let weights = Rc::new(vec![[0.2, 0.3, 0.5], [0.5, 0.25, 0.25], [1.0, 0.0, 0.0], [0.1, 0.6, 0.3]]);
    let rows = c.randn(&[4, 3]);
    c.op("mix_rows", &[rows], h, &|t, v| t.mix_rows(v[0], parents.clone(), weights.clone()))
}

fn attention(c: &mut Checker) -> Result<()> {
    let w = AttentionBlockWeights::<f64>::random(4, 2, &mut c.rng)?;
    let q = c.randn(&[3, 4]);
    let kv = c.randn(&[2, 4]);
    let inputs = vec![
        q,
        kv,
        w.wq.clone(),
        w.wk.clone(),
        w.wv.clone(),
        w.wo.clone(),
        w.ff1.clone(),
        w.ff2.clone(),
        w.ln_q.0.clone(),
        w.ln_q.1.clone(),
        w.ln_kv.0.clone(),
        w.ln_kv.1.clone(),
        w.ln_ff.0.clone(),
        w.ln_ff.1.clone(),
    ];
    c.op("cross_attention_block", &inputs, 1e-5, &|t, v| {
        let mut bw = w.bind(t, false);
        bw.wq = v[2];
        bw.wk = v[3];
        bw.wv = v[4];
        bw.wo = v[5];
        bw.ff1 = v[6];
        bw.ff2 = v[7];
        bw.ln_q = (v[8], v[9]);
        bw.ln_kv = (v[10], v[11]);
        bw.ln_ff = (v[12], v[13]);
        cross_attention_block(t, v[0], v[1], &bw)
    })
}

fn geometry_and_encode(c: &mut Checker, cfg: &ModelConfig, template: &Template) -> Result<()> {
    let x = c.randn(&[template.coarse_count(), 2]);
    c.op("densify", &[x], 1e-5, &|t, v| template.table.densify_var(t, v[0]))?;

    let features = random_features(c, cfg)?;
    let fusion = MlpWeights::<f64>::random(&[features.layers.len() * features.layers[0].cols(), 6, 4], &mut c.rng);
    let inputs = fusion.layers.iter().flat_map(|l| [l.w.clone(), l.b.clone()]).collect::<Vec<_>>();
    c.op("fuse_layers", &inputs, 1e-5, &|t, v| {
        let mut m = MlpVars::bind(&fusion, t, false);
        for (i, l) in m.layers.iter_mut().enumerate() {
            l.w = v[2 * i];
            l.b = v[2 * i + 1];
        }
        fuse_layers_var(t, &features, &m)
    })
}

fn random_features(c: &mut Checker, cfg: &ModelConfig) -> Result<ImageFeatureSet<f64>> {
    let n = cfg.image_size;
    let image = Image::new(n, n, 3, (0..n * n * 3).map(|_| c.rng.random::<f32>()).collect())?;
    let weights = ModelWeights::<f64>::init(cfg, c.rng.random())?;
    extract_image_features(&image, &weights.extractor()?)
}

fn decoder(c: &mut Checker) -> Result<()> {
    let dcfg = DecoderConfig {
        in_dim: 5,
        hidden: 6,
        offset_bound: 0.15,
        scale_max: 0.05,
    };
    let w = DecoderWeights::<f64>::random(&dcfg, &DecoderInit::default(), &mut c.rng)?;
    let x = c.randn(&[4, 5]);
    let mut inputs = vec![x];
    for l in &w.trunk.layers {
        inputs.extend([l.w.clone(), l.b.clone()]);
    }
    inputs.extend([w.head.w.clone(), w.head.b.clone()]);
    c.op("decode", &inputs, 1e-5, &|t, v| {
        let mut d = DecoderVars::bind(&w, t, false);
        for (i, l) in d.trunk.layers.iter_mut().enumerate() {
            l.w = v[1 + 2 * i];
            l.b = v[2 + 2 * i];
        }
        let k = 1 + 2 * d.trunk.layers.len();
        d.head.w = v[k];
        d.head.b = v[k + 1];
        let g = decode_var(t, &d, v[0])?;
        t.concat_cols(&[g.color, g.opacity, g.scale, g.rotation, g.offset])
    })
}

const LAYOUT: TriplaneLayout = TriplaneLayout {
    height: 5,
    width: 7,
    r_max: 1.5,
};

fn triplane(c: &mut Checker) -> Result<()> {
    let tokens = c.randn(&[LAYOUT.token_count(), 3]);
    let pts = c.uniform(&[6, 3], -0.9, 0.9);
    c.op("triplane_sample", &[tokens.clone(), pts], 1e-5, &|t, v| sample_var(t, v[0], v[1], LAYOUT))?;

    let origins = Rc::new(vec![[0.0, 0.0, 2.7], [2.7, 0.0, 0.0], [0.0, 0.0, -2.7], [-2.7, 0.0, 0.0]]);
    let pts = c.uniform(&[4, 3], -0.5, 0.5);
    c.op("ray_samples", &[pts], 1e-5, &|t, v| ray_samples_var(t, v[0], origins.clone(), 5, 0.05))?;

    let rig = VirtualCameraRig::default();
    let agg = AggregatorWeights::<f64>::random(3, 0.05, 3, 4, &mut c.rng)?;
    let pts = c.uniform(&[5, 3], -0.7, 0.7);
    for (name, mode) in [("query_nearest", RayMode::Nearest), ("query_average", RayMode::Average)] {
        c.op(name, &[tokens.clone(), pts.clone()], 1e-5, &|t, v| {
            let a = AggregatorVars::bind(&agg, t, false);
            query_var(t, v[0], LAYOUT, v[1], &rig, &a, mode)
        })?;
    }

    let layout = TriplaneLayout {
        height: 2,
        width: 2,
        r_max: 1.0,
    };
    let block = AttentionBlockWeights::<f64>::random(4, 2, &mut c.rng)?;
    let projection = MlpWeights::<f64>::random(&[4, 4, 3], &mut c.rng);
    let tokens = c.randn(&[layout.token_count(), 4]);
    let image_tokens = c.randn(&[3, 4]);
    let mut inputs = vec![tokens, image_tokens];
    for l in &projection.layers {
        inputs.extend([l.w.clone(), l.b.clone()]);
    }
    c.op("triplane_refine", &inputs, 1e-5, &|t, v| {
        let stack = [block.bind(t, false)];
        let mut proj = MlpVars::bind(&projection, t, false);
        for (i, l) in proj.layers.iter_mut().enumerate() {
            l.w = v[2 + 2 * i];
            l.b = v[3 + 2 * i];
        }
        refine_var(t, v[0], v[1], &stack, &proj, &layout)
    })
}

/// A few wide splats in front of the camera. Every pixel stays inside every
/// splat's support so no truncation boundary moves during the probe.
fn wide_cloud(c: &mut Checker, n: usize, channels: usize) -> [Tensor<f64>; 5] {
    let positions = c.uniform(&[n, 3], -0.3, 0.3);
    let colors = c.uniform(&[n, channels], 0.0, 1.0);
    let opacity = c.uniform(&[n, 1], 0.05, 0.7);
    let scales = c.uniform(&[n, 3], 1.0, 1.6);
    let mut rotations = c.randn(&[n, 4]);
    for i in 0..n {
        let r = rotations.row_mut(i);
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter_mut().for_each(|v| *v /= norm);
    }
    [positions, colors, opacity, scales, rotations]
}

fn cloud_vars(v: &[Var]) -> CloudVars {
    CloudVars {
        positions: v[0],
        colors: v[1],
        opacity: v[2],
        scales: v[3],
        rotations: v[4],
    }
}

fn raster(c: &mut Checker) -> Result<()> {
    let cam = Camera::look_at([0.4, 0.3, 3.0], [0.0; 3], 10.0, 8, 8);
    let cloud = wide_cloud(c, 3, 3);
    c.op("rasterize", &cloud, 1e-5, &|t, v| rasterize_var(t, &cloud_vars(v), &cam, &[0.2; 3]))?;

    let mut inputs = wide_cloud(c, 3, 4).to_vec();
    inputs.push(c.randn(&[3, 4]));
    let decoder = MlpWeights::<f64>::random(&[4, 5, 3], &mut c.rng);
    c.op("render_decoded", &inputs, 1e-5, &|t, v| {
        let d = MlpVars::bind(&decoder, t, false);
        let (rgb, alpha) = render_decoded_var(t, &cloud_vars(v), v[5], &cam, &d)?;
        t.concat_cols(&[rgb, alpha])
    })
}

fn losses(c: &mut Checker) -> Result<()> {
    let cam = Camera::look_at([0.0, 0.0, 3.0], [0.0; 3], 10.0, 4, 4);
    let npx = 16;
    let targets: Vec<ViewTarget<f64>> = (0..2)
        .map(|_| ViewTarget {
            camera: cam.clone(),
            rgb: c.uniform(&[npx, 3], 0.0, 1.0),
            mask: c.uniform(&[npx, 1], 0.0, 1.0),
        })
        .collect();
    // Predictions stay at least 0.05 away from the targets so the L1 kink
    // is never crossed.
    let mut inputs = Vec::new();
    for t in &targets {
        for target in [&t.rgb, &t.rgb, &t.mask, &t.mask, &t.rgb] {
            let shift = c.uniform(target.shape(), 0.05, 0.3);
            let sign = c.uniform(target.shape(), -1.0, 1.0);
            inputs.push(Tensor::from_fn(target.shape(), |i| {
                target.data()[i] + shift.data()[i] * sign.data()[i].signum()
            }));
        }
    }
    let reference = c.randn(&[6, 2]);
    inputs.push(away_from_zero(c.randn(&[6, 2]), 0.05).zip_map(&reference, |a, b| a + b)?);
    let weights = TrainConfig::default().losses;
    c.op("losses", &inputs, 1e-5, &|t, v| {
        let renders: Vec<ViewRenders> = (0..2)
            .map(|i| ViewRenders {
                coarse_rgb: v[5 * i],
                dense_rgb: v[5 * i + 1],
                coarse_alpha: v[5 * i + 2],
                dense_alpha: v[5 * i + 3],
                triplane_rgb: Some(v[5 * i + 4]),
            })
            .collect();
        let l = compute_losses_var(t, &renders, &targets, Some((v[10], &reference)), &weights, &NoPerceptual)?;
        Ok(l.total)
    })
}

/// Total micro-config loss against central differences at `count` randomly
/// chosen weights with a non-negligible gradient.
///
/// Every trainable weight is jittered first so zero-initialized biases do
/// not sit exactly on a ReLU kink. A probe whose two one-sided slopes
/// disagree straddles a kink or a splat's support boundary, where central
/// differences say nothing about the derivative; it is counted in
/// `skipped` and another weight is drawn.
fn end_to_end(c: &mut Checker, cfg: &ModelConfig, template: &Template, count: usize) -> Result<()> {
    let mut weights = ModelWeights::<f64>::init(cfg, c.rng.random())?;
    for (name, t) in weights.store.iter_mut() {
        if ModelWeights::<f64>::is_trainable(name) {
            for v in t.data_mut() {
                *v += 0.02 * c.rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
    }
    let sample = micro_sample(cfg, &weights, &[(0.0, 0.0), (40.0, 10.0)])?;
    let tc = TrainConfig::default();
    let views = [0, 1];
    let (terms, grads) = loss_and_gradients(&weights, template, &sample, &views, &tc, &NoPerceptual)?;
    let f0 = terms.total;
    let loss_at =
        |w: &ModelWeights<f64>| -> Result<f64> { Ok(loss_and_gradients(w, template, &sample, &views, &tc, &NoPerceptual)?.0.total) };
    let names: Vec<&String> = grads.keys().collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    let mut attempts = 0;
    while checked < count && attempts < 100 * count {
        attempts += 1;
        let name = names[c.rng.random_range(0..names.len())];
        let g = &grads[name];
        let i = c.rng.random_range(0..g.len());
        let analytic = g.data()[i];
        if analytic.abs() < 1e-7 {
            continue;
        }
        let mut probe = weights.clone();
        let orig = weights.store.get(name)?.data()[i];
        probe.store.get_mut(name)?.data_mut()[i] = orig + h;
        let fp = loss_at(&probe)?;
        probe.store.get_mut(name)?.data_mut()[i] = orig - h;
        let fm = loss_at(&probe)?;
        let (right, left) = ((fp - f0) / h, (f0 - fm) / h);
        if (right - left).abs() > 0.1 * right.abs().max(left.abs()).max(analytic.abs()) {
            skipped += 1;
            continue;
        }
        worst = worst.max(relative_error(analytic, (fp - fm) / (2.0 * h), 1e-8));
        checked += 1;
    }
    if checked < count {
        worst = f64::NAN;
    }
    c.push("end_to_end_micro", checked, worst, END_TO_END_TOLERANCE);
    c.checks.last_mut().expect("just pushed").skipped = skipped;
    Ok(())
}

fn micro_sample(cfg: &ModelConfig, weights: &ModelWeights<f64>, views: &[(f64, f64)]) -> Result<TrainingSample<f64>> {
    let size = cfg.image_size;
    let scene = generate_scene(&SceneSpec {
        seed: 3,
        blob_count: 80,
        ..SceneSpec::default()
    })?;
    let focal = focal_from_fov(18.83, size);
    let targets = views
        .iter()
        .map(|&(yaw, pitch)| {
            let camera = Camera::orbit(yaw, pitch, 2.7, focal, size, size);
            let (rgb, mask) = render_view(&scene, &camera)?;
            Ok(ViewTarget {
                camera,
                rgb: rgb.to_tensor(),
                mask: mask.to_tensor(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = Image::from_tensor(&targets[0].rgb, size, size)?;
    let features = extract_image_features(&reference, &weights.extractor()?)?;
    Ok(TrainingSample {
        features,
        views: targets,
        reference: 0,
        reference_triplane: None,
    })
}

/// Runs every case. Errors only on setup failures; a failed comparison is
/// reported in the returned checks.
pub fn run_grad_suite(seed: u64) -> Result<GradSuiteReport> {
    let mut c = Checker {
        rng: ChaCha8Rng::seed_from_u64(seed),
        checks: Vec::new(),
    };
    let cfg = ModelConfig::micro();
    let template = Template::build(&cfg)?;
    tape_ops(&mut c)?;
    attention(&mut c)?;
    geometry_and_encode(&mut c, &cfg, &template)?;
    decoder(&mut c)?;
    triplane(&mut c)?;
    raster(&mut c)?;
    losses(&mut c)?;
    end_to_end(&mut c, &cfg, &template, 10)?;
    Ok(GradSuiteReport { seed, checks: c.checks })
}
