use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::raster::camera::{dot, normalize, Vec3};
use crate::raster::GaussianCloud;

/// Largest radial push of a protrusion, as a fraction of the base radius.
pub const MAX_PROTRUSION: f64 = 0.15;

/// Procedural stand-in for a head: colored blobs on a sphere with a few
/// bumps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub blob_count: usize,
    pub base_radius: f64,
    pub protrusions: usize,
    /// Blob size as a fraction of the base radius, `[lo, hi]`.
    pub scale_range: [f64; 2],
    /// Per-blob color noise amplitude.
    pub color_jitter: f64,
    pub opacity: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            blob_count: 600,
            base_radius: 0.26,
            protrusions: 3,
            scale_range: [0.08, 0.16],
            color_jitter: 0.05,
            opacity: 0.95,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        let ok = self.base_radius > 0.0
            && lo > 0.0
            && lo <= hi
            && (0.0..=1.0).contains(&self.color_jitter)
            && (0.0..=1.0).contains(&self.opacity);
        if !ok {
            return Err(Error::contract(format!("invalid scene spec {self:?}")));
        }
        Ok(())
    }
}

fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v: Vec3 = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        if dot(v, v) > 1e-12 {
            return normalize(v);
        }
    }
}

/// Deterministic ground-truth cloud for `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<GaussianCloud<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bumps: Vec<(Vec3, f64)> = (0..spec.protrusions)
        .map(|_| (unit_vector(&mut rng), rng.random_range(0.5..1.0)))
        .collect();
    let phases: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let freqs: [f64; 3] = std::array::from_fn(|_| rng.random_range(1.0..3.0));

    let n = spec.blob_count;
    let (mut pos, mut col, mut opa, mut scl, mut rot) = (
        Vec::with_capacity(n * 3),
        Vec::with_capacity(n * 3),
        Vec::with_capacity(n),
        Vec::with_capacity(n * 3),
        Vec::with_capacity(n * 4),
    );
    for _ in 0..n {
        let d = unit_vector(&mut rng);
        // Bumps are smooth caps; the largest one sets the radial push.
        let push = bumps
            .iter()
            .map(|&(b, h)| h * ((dot(d, b) - 0.7) / 0.3).clamp(0.0, 1.0).powi(2))
            .fold(0.0, f64::max);
        let r = spec.base_radius * (1.0 + MAX_PROTRUSION * push);
        pos.extend(d.map(|c| c * r));
        for k in 0..3 {
            let base = 0.5 + 0.35 * (freqs[k] * std::f64::consts::PI * d[(k + 1) % 3] + phases[k]).sin();
            let jitter = spec.color_jitter * rng.random_range(-1.0..=1.0);
            col.push((base + jitter).clamp(0.02, 0.98));
        }
        opa.push(spec.opacity);
        let s = spec.base_radius * rng.random_range(spec.scale_range[0]..=spec.scale_range[1]);
        scl.extend([s, s, 0.5 * s]);
        let q = loop {
            let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nq > 1e-9 {
                break q.map(|v| v / nq);
            }
        };
        rot.extend(q);
    }
    GaussianCloud::new(
        Tensor::new(&[n, 3], pos)?,
        Tensor::new(&[n, 3], col)?,
        Tensor::new(&[n, 1], opa)?,
        Tensor::new(&[n, 3], scl)?,
        Tensor::new(&[n, 4], rot)?,
    )
}
