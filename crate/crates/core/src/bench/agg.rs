//! Aggregation benchmark on a 1D ray-marching oracle.
//!
//! Each synthetic ray carries an explicit density field made of a few
//! Gaussian bumps near a surface and a smooth color field. The ground truth
//! is the color volume rendering produces along that ray, computed by brute
//! force. A strategy only sees `K` feature samples (color plus density)
//! around a query point that sits near, but not exactly on, the surface, and
//! has to predict the rendered color through a small trained head.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, MlpVars, MlpWeights, ParamStore, Tape, Tensor};
use crate::pipeline::optim::{learning_rate, Adam};
use crate::triplane::{gaussian_weights, sample_offsets};

/// Color channels plus one density channel.
pub const FEATURE_DIM: usize = 4;
const DENSITY_SCALE: f64 = 50.0;

/// One density bump: `amplitude · exp(−(t − center)² / 2 width²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

/// Density and color along one ray, parameterized by signed distance `t`
/// from the first surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayField {
    pub bumps: Vec<Bump>,
    /// Per channel `(frequency, phase)` of `0.5 + 0.4 sin(ω t + φ)`.
    pub color: [(f64, f64); 3],
    /// Where the query point sits on this ray.
    pub query: f64,
}

impl RayField {
    pub fn density(&self, t: f64) -> f64 {
        self.bumps
            .iter()
            .map(|b| b.amplitude * (-(t - b.center).powi(2) / (2.0 * b.width * b.width)).exp())
            .sum()
    }

    pub fn color_at(&self, t: f64) -> [f64; 3] {
        self.color.map(|(w, p)| 0.5 + 0.4 * (w * t + p).sin())
    }

    /// Color channels followed by the scaled density.
    pub fn feature(&self, t: f64) -> [f64; FEATURE_DIM] {
        let c = self.color_at(t);
        [c[0], c[1], c[2], self.density(t) / DENSITY_SCALE]
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        let surface = rng.random_range(-0.05..0.05);
        let mut bumps = vec![Bump {
            center: surface,
            width: rng.random_range(0.01..0.04),
            amplitude: rng.random_range(5.0..60.0),
        }];
        for _ in 0..rng.random_range(0..3) {
            bumps.push(Bump {
                center: surface + rng.random_range(0.04..0.25),
                width: rng.random_range(0.01..0.05),
                amplitude: rng.random_range(5.0..60.0),
            });
        }
        let color = [(); 3].map(|_| (rng.random_range(4.0..16.0), rng.random_range(0.0..std::f64::consts::TAU)));
        Self {
            bumps,
            color,
            query: surface + rng.random_range(-0.03..0.03),
        }
    }
}

/// Midpoint-rule volume rendering over `[t0, t1]` with `steps` segments.
/// Returns the composited color and the per-segment weights `T_i α_i`.
pub fn march(field: &RayField, t0: f64, t1: f64, steps: usize) -> Result<([f64; 3], Vec<f64>)> {
    if steps == 0 || !(t1 > t0) {
        return Err(Error::contract(format!("need steps ≥ 1 and t1 > t0, got {steps}, [{t0}, {t1}]")));
    }
    let dt = (t1 - t0) / steps as f64;
    let mut transmittance = 1.0;
    let mut rgb = [0.0; 3];
    let mut weights = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = t0 + (i as f64 + 0.5) * dt;
        let alpha = 1.0 - (-field.density(t) * dt).exp();
        let w = transmittance * alpha;
        let c = field.color_at(t);
        for k in 0..3 {
            rgb[k] += w * c[k];
        }
        weights.push(w);
        transmittance *= 1.0 - alpha;
    }
    Ok((rgb, weights))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggBenchSpec {
    pub seed: u64,
    pub train_rays: usize,
    pub test_rays: usize,
    /// `K_m` for the multi-sample strategies.
    pub samples: usize,
    pub spacing: f64,
    pub hidden: usize,
    pub steps: usize,
    pub lr: f64,
    pub march_steps: usize,
    /// Marching interval relative to the first surface.
    pub near: f64,
    pub far: f64,
}

impl Default for AggBenchSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            train_rays: 1024,
            test_rays: 512,
            samples: 32,
            spacing: 0.01,
            hidden: 64,
            steps: 600,
            lr: 3e-3,
            march_steps: 2048,
            near: -0.6,
            far: 0.9,
        }
    }
}

/// How the `K` samples of a ray become the head's input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Only the sample at the query point.
    Single,
    /// Gaussian-weighted sum over sample indices with this σ.
    Fixed { sigma: f64 },
    /// All samples concatenated and handed to the MLP.
    Mlp,
}

impl Strategy {
    pub fn name(&self) -> String {
        match self {
            Strategy::Single => "single".into(),
            Strategy::Fixed { sigma } => format!("sigma_{sigma}"),
            Strategy::Mlp => "mlp".into(),
        }
    }

    /// The four strategies of the ablation.
    pub fn ablation() -> [Strategy; 4] {
        [
            Strategy::Single,
            Strategy::Fixed { sigma: 1.0 },
            Strategy::Fixed { sigma: 10.0 },
            Strategy::Mlp,
        ]
    }

    fn input(&self, field: &RayField, k: usize, spacing: f64) -> Result<Vec<f64>> {
        match *self {
            Strategy::Single => Ok(field.feature(field.query).to_vec()),
            Strategy::Fixed { sigma } => {
                let w = gaussian_weights(k, sigma)?;
                let mut out = vec![0.0; FEATURE_DIM];
                for (o, wj) in sample_offsets(k, spacing).into_iter().zip(w) {
                    for (acc, f) in out.iter_mut().zip(field.feature(field.query + o)) {
                        *acc += wj * f;
                    }
                }
                Ok(out)
            }
            Strategy::Mlp => Ok(sample_offsets(k, spacing)
                .into_iter()
                .flat_map(|o| field.feature(field.query + o))
                .collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: String,
    pub samples: usize,
    pub train_mse: f64,
    pub test_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggBenchReport {
    pub spec: AggBenchSpec,
    pub results: Vec<StrategyResult>,
    /// Mean number of local maxima of the marching weights per test ray.
    pub mean_weight_peaks: f64,
}

impl AggBenchReport {
    pub fn test_mse(&self, strategy: &str) -> Option<f64> {
        self.results.iter().find(|r| r.strategy == strategy).map(|r| r.test_mse)
    }
}

struct Split {
    fields: Vec<RayField>,
    targets: Tensor<f64>,
}

fn make_split(spec: &AggBenchSpec, n: usize, rng: &mut impl Rng) -> Result<Split> {
    let fields: Vec<RayField> = (0..n).map(|_| RayField::random(rng)).collect();
    let mut targets = Vec::with_capacity(n * 3);
    for f in &fields {
        targets.extend(march(f, spec.near, spec.far, spec.march_steps)?.0);
    }
    Ok(Split {
        fields,
        targets: Tensor::new(&[n, 3], targets)?,
    })
}

fn inputs(strategy: Strategy, split: &Split, spec: &AggBenchSpec) -> Result<Tensor<f64>> {
    let rows = split
        .fields
        .iter()
        .map(|f| strategy.input(f, spec.samples, spec.spacing))
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows)
}

fn mse(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Fits a `[in, hidden, 3]` GELU head with full-batch Adam and returns the
/// train and test MSE.
fn fit(strategy: Strategy, train: &Split, test: &Split, spec: &AggBenchSpec, seed: u64) -> Result<(f64, f64)> {
    let x_train = inputs(strategy, train, spec)?;
    let x_test = inputs(strategy, test, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    MlpWeights::<f64>::random(&[x_train.cols(), spec.hidden, 3], &mut rng).insert_into(&mut store, "head")?;
    let mut adam = Adam::new(0.9, 0.999, 1e-8)?;
    for step in 0..spec.steps {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, |_| true);
        let head = MlpVars::from_bound(&bound, "head", 2)?;
        let x = tape.constant(x_train.clone());
        let y = tape.constant(train.targets.clone());
        let pred = head.forward(&mut tape, x, Activation::Gelu)?;
        let diff = tape.sub(pred, y)?;
        let sq = tape.mul(diff, diff)?;
        let loss = tape.mean(sq);
        let handles: Vec<_> = bound.iter().map(|(n, v)| (n.clone(), *v)).collect();
        let mut grads = tape.backward(loss)?;
        let grads: BTreeMap<String, Tensor<f64>> = handles.into_iter().map(|(n, v)| (n, grads.take(v))).collect();
        adam.update(&mut store, &grads, learning_rate(spec.lr, 0, spec.steps, step))?;
    }
    let head = MlpWeights::from_store(&store, "head", 2)?;
    let train_mse = mse(&head.eval(&x_train, Activation::Gelu)?, &train.targets);
    let test_mse = mse(&head.eval(&x_test, Activation::Gelu)?, &test.targets);
    Ok((train_mse, test_mse))
}

fn count_peaks(w: &[f64]) -> usize {
    let floor = w.iter().cloned().fold(0.0, f64::max) * 1e-3;
    (1..w.len().saturating_sub(1))
        .filter(|&i| w[i] > floor && w[i] > w[i - 1] && w[i] >= w[i + 1])
        .count()
}

/// Runs the given strategies on one shared set of rays.
pub fn run_agg_bench(spec: &AggBenchSpec, strategies: &[Strategy]) -> Result<AggBenchReport> {
    if spec.samples == 0 || spec.train_rays == 0 || spec.test_rays == 0 || spec.hidden == 0 {
        return Err(Error::contract("aggregation bench needs non-zero sizes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = make_split(spec, spec.train_rays, &mut rng)?;
    let test = make_split(spec, spec.test_rays, &mut rng)?;
    let mut peaks = 0usize;
    for f in &test.fields {
        peaks += count_peaks(&march(f, spec.near, spec.far, spec.march_steps)?.1);
    }
    let head_seed = rng.random();
    let mut results = Vec::with_capacity(strategies.len());
    for &s in strategies {
        let (train_mse, test_mse) = fit(s, &train, &test, spec, head_seed)?;
        results.push(StrategyResult {
            strategy: s.name(),
            samples: if s == Strategy::Single { 1 } else { spec.samples },
            train_mse,
            test_mse,
        });
    }
    Ok(AggBenchReport {
        spec: *spec,
        results,
        mean_weight_peaks: peaks as f64 / spec.test_rays as f64,
    })
}
