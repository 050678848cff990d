use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{Activation, MlpVars, MlpWeights};
use crate::nn::params::{Bound, ParamStore};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::real::Real;
use crate::triplane::coords::HEAD_TO_TRIPLANE;
use crate::triplane::planes::{sample_var, TriplaneLayout};
use crate::triplane::rays::{ray_samples_var, VirtualCameraRig};

/// How rig cameras are combined for each query point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RayMode {
    /// One ray from the best-aligned camera.
    #[default]
    Nearest,
    /// Aggregate a ray from every camera and average the results.
    Average,
}

/// MLP over the `K·C_tri` concatenation of one ray's samples.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatorWeights<T> {
    pub mlp: MlpWeights<T>,
    pub samples: usize,
    pub spacing: f64,
}

impl<T: Real> AggregatorWeights<T> {
    pub fn random(samples: usize, spacing: f64, c_tri: usize, c_agg: usize, rng: &mut impl Rng) -> Result<Self> {
        check(samples, spacing)?;
        Ok(Self {
            mlp: MlpWeights::random(&[samples * c_tri, c_agg, c_agg], rng),
            samples,
            spacing,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.layers.last().map_or(0, |l| l.fan_out())
    }

    pub fn insert_into(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<()> {
        self.mlp.insert_into(store, prefix)
    }

    pub fn from_store(store: &ParamStore<T>, prefix: &str, samples: usize, spacing: f64) -> Result<Self> {
        check(samples, spacing)?;
        Ok(Self {
            mlp: MlpWeights::from_store(store, prefix, 2)?,
            samples,
            spacing,
        })
    }
}

fn check(samples: usize, spacing: f64) -> Result<()> {
    if samples == 0 || !(spacing > 0.0) {
        return Err(Error::contract(format!(
            "aggregator needs K ≥ 1 and δ > 0, got {samples} and {spacing}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct AggregatorVars {
    pub mlp: MlpVars,
    pub samples: usize,
    pub spacing: f64,
}

impl AggregatorVars {
    pub fn bind<T: Real>(w: &AggregatorWeights<T>, tape: &mut Tape<T>, trainable: bool) -> Self {
        Self {
            mlp: MlpVars::bind(&w.mlp, tape, trainable),
            samples: w.samples,
            spacing: w.spacing,
        }
    }

    pub fn from_bound(bound: &Bound, prefix: &str, samples: usize, spacing: f64) -> Result<Self> {
        Ok(Self {
            mlp: MlpVars::from_bound(bound, prefix, 2)?,
            samples,
            spacing,
        })
    }
}

/// Aggregates one ray: `samples[K × C_tri]` in near-to-far order.
pub fn aggregate<T: Real>(samples: &Tensor<T>, w: &AggregatorWeights<T>) -> Result<Tensor<T>> {
    if samples.rows() != w.samples {
        return Err(Error::dim("aggregate", samples.shape(), &[w.samples, samples.cols()]));
    }
    let flat = samples.clone().reshape(&[1, samples.len()])?;
    w.mlp.eval(&flat, Activation::Gelu)
}

/// Normalized Gaussian weights over sample indices, centered on the middle.
pub fn gaussian_weights(k: usize, sigma: f64) -> Result<Vec<f64>> {
    if k == 0 || !(sigma > 0.0) {
        return Err(Error::contract(format!("need k ≥ 1 and σ > 0, got {k} and {sigma}")));
    }
    let center = (k as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..k)
        .map(|j| (-(j as f64 - center).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Hand-set baseline: a Gaussian-weighted sum of a ray's samples.
pub fn fixed_weight_aggregate<T: Real>(samples: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    let w = gaussian_weights(samples.rows(), sigma)?;
    let mut out = Tensor::zeros(&[1, samples.cols()]);
    for (j, &wj) in w.iter().enumerate() {
        for (o, &v) in out.data_mut().iter_mut().zip(samples.row(j)) {
            *o += T::c(wj) * v;
        }
    }
    Ok(out)
}

/// Full per-point triplane query on a tape: ray samples from the rig,
/// rotation into the triplane frame, triplane lookups, concatenation along
/// the ray and the aggregator MLP. Points and the rig are in the head frame.
/// Returns `N × C_agg`.
pub fn query_var<T: Real>(
    tape: &mut Tape<T>,
    tokens: Var,
    layout: TriplaneLayout,
    points: Var,
    rig: &VirtualCameraRig,
    agg: &AggregatorVars,
    mode: RayMode,
) -> Result<Var> {
    let n = tape.value(points).rows();
    let c_tri = tape.value(tokens).cols();
    let k = agg.samples;
    let rotation = tape.constant(Tensor::from_fn(&[3, 3], |i| T::c(HEAD_TO_TRIPLANE[i / 3][i % 3])));
    let one_rig = |tape: &mut Tape<T>, origins: Vec<[f64; 3]>| -> Result<Var> {
        let s = ray_samples_var(tape, points, Rc::new(origins), k, agg.spacing)?;
        let s = tape.matmul(s, rotation)?;
        let f = sample_var(tape, tokens, s, layout)?;
        let f = tape.reshape(f, &[n, k * c_tri])?;
        agg.mlp.forward(tape, f, Activation::Gelu)
    };
    match mode {
        RayMode::Nearest => {
            let pv = tape.value(points);
            let origins = (0..n)
                .map(|i| {
                    let r = pv.row(i);
                    rig.cameras()[rig.choose([r[0].f64(), r[1].f64(), r[2].f64()])].position
                })
                .collect();
            one_rig(tape, origins)
        }
        RayMode::Average => {
            let mut total: Option<Var> = None;
            for cam in rig.cameras() {
                let y = one_rig(tape, vec![cam.position; n])?;
                total = Some(match total {
                    None => y,
                    Some(t) => tape.add(t, y)?,
                });
            }
            let total = total.expect("rig has cameras");
            Ok(tape.scale(total, T::c(1.0 / rig.cameras().len() as f64)))
        }
    }
}
