//! Tiled versus naive rasterizer timing.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::Tensor;
use crate::raster::{rasterize, rasterize_naive, Camera, GaussianCloud, RenderOutput};
use crate::synthdata::focal_from_fov;

/// Random splats inside a ball of radius 0.5 around the origin.
pub fn random_cloud(n: usize, seed: u64) -> Result<GaussianCloud<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos = Vec::with_capacity(n * 3);
    while pos.len() < n * 3 {
        let p: [f64; 3] = [(); 3].map(|_| rng.random_range(-0.5..0.5));
        if p.iter().map(|v| v * v).sum::<f64>() <= 0.25 {
            pos.extend(p);
        }
    }
    let colors = Tensor::uniform(&[n, 3], 0.0, 1.0, &mut rng);
    let opacity = Tensor::uniform(&[n, 1], 0.05, 0.9, &mut rng);
    let scales = Tensor::uniform(&[n, 3], 0.004, 0.03, &mut rng);
    let mut rot = Tensor::randn(&[n, 4], 1.0, &mut rng);
    for i in 0..n {
        let r = rot.row_mut(i);
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        r.iter_mut().for_each(|v| *v /= norm);
    }
    GaussianCloud::new(Tensor::new(&[n, 3], pos)?, colors, opacity, scales, rot)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterCase {
    pub gaussians: usize,
    pub resolution: usize,
    pub naive_seconds: f64,
    pub tiled_seconds: f64,
    pub speedup: f64,
    /// Largest per-channel difference over color and alpha.
    pub max_deviation: f64,
}

fn max_deviation(a: &RenderOutput, b: &RenderOutput) -> f64 {
    let color = a.color.iter().zip(&b.color).map(|(x, y)| (x - y).abs());
    let alpha = a.alpha.iter().zip(&b.alpha).map(|(x, y)| (x - y).abs());
    color.chain(alpha).fold(0.0, f64::max)
}

fn timed<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed().as_secs_f64())
}

/// One single-run measurement of both renderers on the same scene.
pub fn raster_case(gaussians: usize, resolution: usize, seed: u64) -> Result<RasterCase> {
    let cloud = random_cloud(gaussians, seed)?;
    let cam = Camera::orbit(0.0, 0.0, 2.7, focal_from_fov(18.83, resolution), resolution, resolution);
    let bg = [0.0; 3];
    let (naive, naive_seconds) = timed(|| rasterize_naive(&cloud, &cam, &bg));
    let (tiled, tiled_seconds) = timed(|| rasterize(&cloud, &cam, &bg));
    let (naive, tiled) = (naive?, tiled?);
    Ok(RasterCase {
        gaussians,
        resolution,
        naive_seconds,
        tiled_seconds,
        speedup: naive_seconds / tiled_seconds,
        max_deviation: max_deviation(&naive, &tiled),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterBenchReport {
    pub seed: u64,
    pub cases: Vec<RasterCase>,
}

/// Every `(N, resolution)` combination.
pub fn run_raster_bench(counts: &[usize], resolutions: &[usize], seed: u64) -> Result<RasterBenchReport> {
    let mut cases = Vec::new();
    for &n in counts {
        for &r in resolutions {
            cases.push(raster_case(n, r, seed)?);
        }
    }
    Ok(RasterBenchReport { seed, cases })
}
