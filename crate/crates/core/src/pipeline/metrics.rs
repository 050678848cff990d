use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::pipeline::forward::Reconstruction;
use crate::pipeline::loss::ViewTarget;
use crate::raster::rasterize;
use crate::real::Real;

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    let sa = [a.height, a.width, a.channels];
    let sb = [b.height, b.width, b.channels];
    if sa != sb {
        return Err(Error::dim("image metric", &sa, &sb));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio for images in `[0, 1]`, capped at
/// [`PSNR_CAP`] dB when the images (nearly) coincide.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of a `h × w` plane.
fn filter(plane: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity over all valid 11×11 Gaussian windows,
/// averaged over channels. Both sides must be at least 11 pixels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::contract(format!(
            "SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {}×{}",
            a.width, a.height
        )));
    }
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let (w, h, c) = (a.width, a.height, a.channels);
    let mut total = 0.0;
    for ch in 0..c {
        let x: Vec<f64> = (0..w * h).map(|p| a.data[p * c + ch] as f64).collect();
        let y: Vec<f64> = (0..w * h).map(|p| b.data[p * c + ch] as f64).collect();
        let prod = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(p, q)| p * q).collect() };
        let (mx, _, _) = filter(&x, w, h, &k);
        let (my, _, _) = filter(&y, w, h, &k);
        let (sxx, _, _) = filter(&prod(&x, &x), w, h, &k);
        let (syy, _, _) = filter(&prod(&y, &y), w, h, &k);
        let (sxy, _, _) = filter(&prod(&x, &y), w, h, &k);
        let n = mx.len();
        let mut sum = 0.0;
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + C1) * (2.0 * cov + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
        }
        total += sum / n as f64;
    }
    Ok(total / c as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-view PSNR / SSIM plus their means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MetricsReport {
    pub fn from_views(views: Vec<ViewMetrics>) -> Self {
        let n = views.len().max(1) as f64;
        let mean_psnr = views.iter().map(|v| v.psnr).sum::<f64>() / n;
        let mean_ssim = views.iter().map(|v| v.ssim).sum::<f64>() / n;
        Self {
            views,
            mean_psnr,
            mean_ssim,
        }
    }

    pub fn evaluate(pairs: &[(String, Image, Image)]) -> Result<Self> {
        let views = pairs
            .iter()
            .map(|(name, pred, target)| {
                Ok(ViewMetrics {
                    view: name.clone(),
                    psnr: psnr(pred, target)?,
                    ssim: ssim(pred, target)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_views(views))
    }
}

/// Renders the dense Gaussians of `rec` from every target camera and scores
/// them against the target RGB.
pub fn evaluate_reconstruction<T: Real>(
    rec: &Reconstruction<T>,
    targets: &[(String, &ViewTarget<T>)],
    background: &[f64; 3],
) -> Result<MetricsReport> {
    let pairs = targets
        .iter()
        .map(|(name, t)| {
            let pred = rasterize(&rec.dense, &t.camera, background)?.color_image();
            let truth = Image::from_tensor(&t.rgb, t.camera.width, t.camera.height)?;
            Ok((name.clone(), pred, truth))
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::evaluate(&pairs)
}
