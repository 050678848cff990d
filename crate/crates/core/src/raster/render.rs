//! Tiled forward compositing, the naive reference renderer, and the
//! analytic backward pass.
//!
//! Internally everything is evaluated in `f64` whatever the caller's scalar
//! type; per-Gaussian inputs are widened on entry.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::nn::tensor::Tensor;
use crate::raster::camera::Camera;
use crate::raster::project::{project, project_backward, Projection};
use crate::real::Real;

pub const TILE: usize = 16;
/// Compositing stops once transmittance drops below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Squared Mahalanobis radius of the 3σ kernel support.
pub const KERNEL_CUTOFF: f64 = 9.0;

/// Renderable Gaussians: positions `N×3`, colors `N×C` (RGB or arbitrary
/// feature channels), opacity `N×1`, scales `N×3`, rotations `N×4`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud<T> {
    pub positions: Tensor<T>,
    pub colors: Tensor<T>,
    pub opacity: Tensor<T>,
    pub scales: Tensor<T>,
    pub rotations: Tensor<T>,
}

impl<T: Real> GaussianCloud<T> {
    pub fn new(
        positions: Tensor<T>,
        colors: Tensor<T>,
        opacity: Tensor<T>,
        scales: Tensor<T>,
        rotations: Tensor<T>,
    ) -> Result<Self> {
        let c = Self {
            positions,
            colors,
            opacity,
            scales,
            rotations,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn empty(channels: usize) -> Self {
        Self {
            positions: Tensor::zeros(&[0, 3]),
            colors: Tensor::zeros(&[0, channels]),
            opacity: Tensor::zeros(&[0, 1]),
            scales: Tensor::zeros(&[0, 3]),
            rotations: Tensor::zeros(&[0, 4]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.rows();
        let check = |t: &Tensor<T>, cols: usize| -> Result<()> {
            if t.shape().len() != 2 || t.rows() != n || (cols > 0 && t.cols() != cols) {
                return Err(Error::dim("gaussian_cloud", self.positions.shape(), t.shape()));
            }
            Ok(())
        };
        check(&self.positions, 3)?;
        check(&self.colors, 0)?;
        check(&self.opacity, 1)?;
        check(&self.scales, 3)?;
        check(&self.rotations, 4)
    }

    pub fn len(&self) -> usize {
        self.positions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.colors.cols()
    }

    pub fn cast<U: Real>(&self) -> GaussianCloud<U> {
        GaussianCloud {
            positions: self.positions.cast(),
            colors: self.colors.cast(),
            opacity: self.opacity.cast(),
            scales: self.scales.cast(),
            rotations: self.rotations.cast(),
        }
    }

    /// Same geometry with a different per-point payload.
    pub fn with_colors(&self, colors: Tensor<T>) -> Result<Self> {
        Self::new(
            self.positions.clone(),
            colors,
            self.opacity.clone(),
            self.scales.clone(),
            self.rotations.clone(),
        )
    }

    /// Concatenates two clouds with the same channel count.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        let cat = |a: &Tensor<T>, b: &Tensor<T>| -> Result<Tensor<T>> {
            let mut d = a.data().to_vec();
            d.extend_from_slice(b.data());
            Tensor::new(&[a.rows() + b.rows(), a.cols().max(b.cols())], d)
        };
        if self.channels() != other.channels() {
            return Err(Error::dim("concat", self.colors.shape(), other.colors.shape()));
        }
        Self::new(
            cat(&self.positions, &other.positions)?,
            cat(&self.colors, &other.colors)?,
            cat(&self.opacity, &other.opacity)?,
            cat(&self.scales, &other.scales)?,
            cat(&self.rotations, &other.rotations)?,
        )
    }
}

/// Composited image plus diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// `H·W × C`, row-major pixels.
    pub color: Vec<f64>,
    /// `H·W`, `1 − T_final`.
    pub alpha: Vec<f64>,
    /// Gaussians that contributed to each pixel.
    pub contributors: Vec<u32>,
    /// Gaussians outside the near/far range.
    pub culled: usize,
    /// Gaussians whose screen covariance could not be inverted.
    pub singular: usize,
}

impl RenderOutput {
    pub fn color_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.color.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn alpha_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.alpha.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn color_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            &[self.width * self.height, self.channels],
            self.color.iter().map(|&v| T::c(v)).collect(),
        )
        .expect("render shape")
    }
}

#[derive(Clone, Debug)]
struct Splat {
    index: usize,
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    /// Inclusive pixel bounds of the 3σ ellipse, clipped to the image.
    px: [usize; 2],
    py: [usize; 2],
}

/// Projected, depth-sorted Gaussians shared by every renderer.
struct Prepared {
    splats: Vec<Splat>,
    /// Colors of `splats`, same order, `C` values each.
    colors: Vec<f64>,
    projections: Vec<Option<Projection>>,
    culled: usize,
    singular: usize,
}

fn prepare<T: Real>(cloud: &GaussianCloud<T>, cam: &Camera) -> Result<Prepared> {
    cam.validate()?;
    cloud.validate()?;
    let w = cam.rotation();
    let c = cloud.channels();
    let (mut culled, mut singular) = (0, 0);
    let mut projections = Vec::with_capacity(cloud.len());
    let mut visible: Vec<(f64, Splat)> = Vec::new();
    for i in 0..cloud.len() {
        let v3 = |t: &Tensor<T>| -> [f64; 3] {
            let r = t.row(i);
            [r[0].f64(), r[1].f64(), r[2].f64()]
        };
        let q = cloud.rotations.row(i);
        let quat = [q[0].f64(), q[1].f64(), q[2].f64(), q[3].f64()];
        let mut sing = false;
        let proj = project(v3(&cloud.positions), v3(&cloud.scales), quat, cam, &w, &mut sing);
        let Some(p) = proj else {
            if sing {
                singular += 1;
            } else {
                culled += 1;
            }
            projections.push(None);
            continue;
        };
        let rx = (KERNEL_CUTOFF * p.cov2d[0]).sqrt();
        let ry = (KERNEL_CUTOFF * p.cov2d[2]).sqrt();
        // Pixel centers sit at integer + 0.5.
        let x0 = (p.mean[0] - rx - 0.5).ceil();
        let x1 = (p.mean[0] + rx - 0.5).floor();
        let y0 = (p.mean[1] - ry - 0.5).ceil();
        let y1 = (p.mean[1] + ry - 0.5).floor();
        let (wmax, hmax) = ((cam.width - 1) as f64, (cam.height - 1) as f64);
        let on_screen = x1 >= 0.0 && y1 >= 0.0 && x0 <= wmax && y0 <= hmax && x0 <= x1 && y0 <= y1;
        if on_screen {
            visible.push((
                p.depth,
                Splat {
                    index: i,
                    mean: p.mean,
                    conic: p.conic,
                    opacity: cloud.opacity.row(i)[0].f64(),
                    px: [x0.max(0.0) as usize, x1.min(wmax) as usize],
                    py: [y0.max(0.0) as usize, y1.min(hmax) as usize],
                },
            ));
        }
        projections.push(Some(p));
    }
    visible.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.index.cmp(&b.1.index)));
    let splats: Vec<Splat> = visible.into_iter().map(|(_, s)| s).collect();
    let mut colors = Vec::with_capacity(splats.len() * c);
    for s in &splats {
        colors.extend(cloud.colors.row(s.index).iter().map(|v| v.f64()));
    }
    Ok(Prepared {
        splats,
        colors,
        projections,
        culled,
        singular,
    })
}

fn check_background(bg: &[f64], channels: usize) -> Result<()> {
    if bg.len() != channels {
        return Err(Error::dim("background", &[bg.len()], &[channels]));
    }
    Ok(())
}

struct TileGrid {
    cols: usize,
    rows: usize,
    lists: Vec<Vec<u32>>,
}

fn bin_tiles(prep: &Prepared, cam: &Camera) -> TileGrid {
    let cols = cam.width.div_ceil(TILE);
    let rows = cam.height.div_ceil(TILE);
    let mut lists = vec![Vec::new(); cols * rows];
    for (k, s) in prep.splats.iter().enumerate() {
        for ty in s.py[0] / TILE..=s.py[1] / TILE {
            for tx in s.px[0] / TILE..=s.px[1] / TILE {
                lists[ty * cols + tx].push(k as u32);
            }
        }
    }
    TileGrid { cols, rows, lists }
}

#[inline]
fn kernel(s: &Splat, x: f64, y: f64) -> Option<(f64, f64, f64, f64)> {
    let dx = x - s.mean[0];
    let dy = y - s.mean[1];
    let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
    if q > KERNEL_CUTOFF {
        return None;
    }
    let g = (-0.5 * q).exp();
    let alpha = s.opacity * g;
    if !(alpha > 0.0) {
        return None;
    }
    Some((alpha, g, dx, dy))
}

/// Front-to-back compositing of one pixel over `order` (indices into the
/// sorted splats). Writes `C` color values and returns `(T_final, count)`.
#[inline]
fn composite_pixel(
    prep: &Prepared,
    order: impl Iterator<Item = usize>,
    x: f64,
    y: f64,
    bg: &[f64],
    out: &mut [f64],
) -> (f64, u32) {
    let c = bg.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut t = 1.0;
    let mut count = 0;
    for k in order {
        let s = &prep.splats[k];
        let Some((alpha, ..)) = kernel(s, x, y) else {
            continue;
        };
        let w = alpha * t;
        let col = &prep.colors[k * c..(k + 1) * c];
        for ch in 0..c {
            out[ch] += col[ch] * w;
        }
        t *= 1.0 - alpha;
        count += 1;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    for ch in 0..c {
        out[ch] += t * bg[ch];
    }
    (t, count)
}

fn empty_output(cam: &Camera, channels: usize, prep: &Prepared) -> RenderOutput {
    RenderOutput {
        width: cam.width,
        height: cam.height,
        channels,
        color: vec![0.0; cam.width * cam.height * channels],
        alpha: vec![0.0; cam.width * cam.height],
        contributors: vec![0; cam.width * cam.height],
        culled: prep.culled,
        singular: prep.singular,
    }
}

/// Tiled renderer: each 16×16 tile composites only the Gaussians whose 3σ
/// bounds touch it.
pub fn rasterize<T: Real>(cloud: &GaussianCloud<T>, cam: &Camera, background: &[f64]) -> Result<RenderOutput> {
    let c = cloud.channels();
    check_background(background, c)?;
    let prep = prepare(cloud, cam)?;
    let grid = bin_tiles(&prep, cam);
    let (w, h) = (cam.width, cam.height);

    struct TileOut {
        color: Vec<f64>,
        trans: Vec<f64>,
        count: Vec<u32>,
    }
    let tiles: Vec<TileOut> = (0..grid.cols * grid.rows)
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % grid.cols, t / grid.cols);
            let (x0, y0) = (tx * TILE, ty * TILE);
            let (x1, y1) = ((x0 + TILE).min(w), (y0 + TILE).min(h));
            let n = (x1 - x0) * (y1 - y0);
            let mut out = TileOut {
                color: vec![0.0; n * c],
                trans: vec![1.0; n],
                count: vec![0; n],
            };
            let list = &grid.lists[t];
            let mut i = 0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let (tr, cnt) = composite_pixel(
                        &prep,
                        list.iter().map(|&k| k as usize),
                        x as f64 + 0.5,
                        y as f64 + 0.5,
                        background,
                        &mut out.color[i * c..(i + 1) * c],
                    );
                    out.trans[i] = tr;
                    out.count[i] = cnt;
                    i += 1;
                }
            }
            out
        })
        .collect();

    let mut res = empty_output(cam, c, &prep);
    for (t, tile) in tiles.iter().enumerate() {
        let (tx, ty) = (t % grid.cols, t / grid.cols);
        let (x0, y0) = (tx * TILE, ty * TILE);
        let (x1, y1) = ((x0 + TILE).min(w), (y0 + TILE).min(h));
        let mut i = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y * w + x;
                res.color[p * c..(p + 1) * c].copy_from_slice(&tile.color[i * c..(i + 1) * c]);
                res.alpha[p] = 1.0 - tile.trans[i];
                res.contributors[p] = tile.count[i];
                i += 1;
            }
        }
    }
    Ok(res)
}

/// Reference renderer: every pixel visits every projected Gaussian in depth
/// order, with no binning.
pub fn rasterize_naive<T: Real>(cloud: &GaussianCloud<T>, cam: &Camera, background: &[f64]) -> Result<RenderOutput> {
    let c = cloud.channels();
    check_background(background, c)?;
    let prep = prepare(cloud, cam)?;
    let mut res = empty_output(cam, c, &prep);
    let mut px = vec![0.0; c];
    for y in 0..cam.height {
        for x in 0..cam.width {
            let (t, cnt) = composite_pixel(&prep, 0..prep.splats.len(), x as f64 + 0.5, y as f64 + 0.5, background, &mut px);
            let p = y * cam.width + x;
            res.color[p * c..(p + 1) * c].copy_from_slice(&px);
            res.alpha[p] = 1.0 - t;
            res.contributors[p] = cnt;
        }
    }
    Ok(res)
}

/// Gradients for every Gaussian parameter, `f64`, shaped like the cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudGrads {
    pub positions: Tensor<f64>,
    pub colors: Tensor<f64>,
    pub opacity: Tensor<f64>,
    pub scales: Tensor<f64>,
    pub rotations: Tensor<f64>,
}

/// Per-Gaussian screen-space gradient layout inside the accumulators.
const G_MEAN: usize = 0;
const G_CONIC: usize = 2;
const G_OPACITY: usize = 5;
const G_COLOR: usize = 6;

struct Contribution {
    k: usize,
    alpha: f64,
    kernel: f64,
    trans: f64,
    dx: f64,
    dy: f64,
}

/// Analytic gradients given upstream gradients on the color (`H·W × C`) and
/// alpha (`H·W`) images. Each tile re-runs its forward pass, then walks the
/// contributors back to front keeping the normalized color behind the
/// current Gaussian, so no division by `1 − α` is needed.
pub fn rasterize_backward<T: Real>(
    cloud: &GaussianCloud<T>,
    cam: &Camera,
    background: &[f64],
    grad_color: &[f64],
    grad_alpha: &[f64],
) -> Result<CloudGrads> {
    let c = cloud.channels();
    check_background(background, c)?;
    let npx = cam.width * cam.height;
    if grad_color.len() != npx * c || grad_alpha.len() != npx {
        return Err(Error::dim("rasterize_backward", &[npx, c], &[grad_color.len(), grad_alpha.len()]));
    }
    let prep = prepare(cloud, cam)?;
    let grid = bin_tiles(&prep, cam);
    let (w, h) = (cam.width, cam.height);
    let stride = G_COLOR + c;

    let partials: Vec<Vec<f64>> = (0..grid.cols * grid.rows)
        .into_par_iter()
        .map(|t| {
            let list = &grid.lists[t];
            let mut acc = vec![0.0; list.len() * stride];
            if list.is_empty() {
                return acc;
            }
            let (tx, ty) = (t % grid.cols, t / grid.cols);
            let (x0, y0) = (tx * TILE, ty * TILE);
            let (x1, y1) = ((x0 + TILE).min(w), (y0 + TILE).min(h));
            let mut stack: Vec<Contribution> = Vec::new();
            let mut behind = vec![0.0; c];
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = y * w + x;
                    let gc = &grad_color[p * c..(p + 1) * c];
                    let ga = grad_alpha[p];
                    if ga == 0.0 && gc.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                    stack.clear();
                    let mut trans = 1.0;
                    for (local, &k) in list.iter().enumerate() {
                        let s = &prep.splats[k as usize];
                        let Some((alpha, g, dx, dy)) = kernel(s, fx, fy) else {
                            continue;
                        };
                        stack.push(Contribution {
                            k: local,
                            alpha,
                            kernel: g,
                            trans,
                            dx,
                            dy,
                        });
                        trans *= 1.0 - alpha;
                        if trans < MIN_TRANSMITTANCE {
                            break;
                        }
                    }
                    behind.copy_from_slice(background);
                    let mut q_behind = 1.0;
                    for e in stack.iter().rev() {
                        let k = list[e.k] as usize;
                        let s = &prep.splats[k];
                        let col = &prep.colors[k * c..(k + 1) * c];
                        let a = &mut acc[e.k * stride..(e.k + 1) * stride];
                        let mut g_alpha = ga * e.trans * q_behind;
                        for ch in 0..c {
                            g_alpha += gc[ch] * e.trans * (col[ch] - behind[ch]);
                            a[G_COLOR + ch] += gc[ch] * e.alpha * e.trans;
                            behind[ch] = col[ch] * e.alpha + (1.0 - e.alpha) * behind[ch];
                        }
                        q_behind *= 1.0 - e.alpha;
                        a[G_OPACITY] += g_alpha * e.kernel;
                        let g_q = -0.5 * e.alpha * g_alpha;
                        let [ca, cb, cc] = s.conic;
                        a[G_CONIC] += g_q * e.dx * e.dx;
                        a[G_CONIC + 1] += g_q * 2.0 * e.dx * e.dy;
                        a[G_CONIC + 2] += g_q * e.dy * e.dy;
                        a[G_MEAN] += -g_q * 2.0 * (ca * e.dx + cb * e.dy);
                        a[G_MEAN + 1] += -g_q * 2.0 * (cb * e.dx + cc * e.dy);
                    }
                }
            }
            acc
        })
        .collect();

    // Fixed-order reduction keeps results run-to-run identical.
    let mut screen = vec![0.0; prep.splats.len() * stride];
    for (t, acc) in partials.iter().enumerate() {
        for (local, &k) in grid.lists[t].iter().enumerate() {
            let dst = &mut screen[k as usize * stride..(k as usize + 1) * stride];
            for (d, s) in dst.iter_mut().zip(&acc[local * stride..(local + 1) * stride]) {
                *d += s;
            }
        }
    }

    let n = cloud.len();
    let mut g = CloudGrads {
        positions: Tensor::zeros(&[n, 3]),
        colors: Tensor::zeros(&[n, c]),
        opacity: Tensor::zeros(&[n, 1]),
        scales: Tensor::zeros(&[n, 3]),
        rotations: Tensor::zeros(&[n, 4]),
    };
    let rot = cam.rotation();
    for (k, s) in prep.splats.iter().enumerate() {
        let a = &screen[k * stride..(k + 1) * stride];
        let i = s.index;
        let proj = prep.projections[i].as_ref().expect("visible splat has a projection");
        let pg = project_backward(
            proj,
            cam,
            &rot,
            [a[G_MEAN], a[G_MEAN + 1]],
            [a[G_CONIC], a[G_CONIC + 1], a[G_CONIC + 2]],
        );
        g.positions.row_mut(i).copy_from_slice(&pg.position);
        g.scales.row_mut(i).copy_from_slice(&pg.scale);
        g.rotations.row_mut(i).copy_from_slice(&pg.rotation);
        g.opacity.row_mut(i)[0] = a[G_OPACITY];
        g.colors.row_mut(i).copy_from_slice(&a[G_COLOR..]);
    }
    Ok(g)
}
