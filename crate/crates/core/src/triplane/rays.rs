use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::raster::camera::{dot, norm, Camera, Vec3};
use crate::real::Real;

pub const RIG_RADIUS: f64 = 2.7;
pub const RIG_AZIMUTHS: [f64; 4] = [0.0, 90.0, 180.0, 270.0];

/// Four virtual cameras on the equator looking at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct VirtualCameraRig {
    cameras: Vec<Camera>,
}

impl Default for VirtualCameraRig {
    fn default() -> Self {
        Self {
            cameras: RIG_AZIMUTHS
                .iter()
                .map(|&yaw| Camera::orbit(yaw, 0.0, RIG_RADIUS, 64.0, 64, 64))
                .collect(),
        }
    }
}

impl VirtualCameraRig {
    pub fn new(cameras: Vec<Camera>) -> Result<Self> {
        if cameras.len() != 4 {
            return Err(Error::contract(format!("rig needs 4 cameras, got {}", cameras.len())));
        }
        for c in &cameras {
            c.validate()?;
            if norm(c.target) > 1e-12 {
                return Err(Error::contract("rig cameras must look at the origin"));
            }
        }
        Ok(Self { cameras })
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    /// Index of the camera on the point's side of the head: the one whose
    /// direction from the origin best aligns with the point's. Ties go to
    /// the lowest index; the origin maps to camera 0.
    pub fn choose(&self, p: Vec3) -> usize {
        let n = norm(p);
        if n == 0.0 {
            return 0;
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (i, c) in self.cameras.iter().enumerate() {
            let d = dot(c.position, p) / (norm(c.position) * n);
            if d > best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

/// Signed offsets of the `k` samples along the ray, near to far.
pub fn sample_offsets(k: usize, spacing: f64) -> Vec<f64> {
    let center = (k as f64 - 1.0) / 2.0;
    (0..k).map(|j| (j as f64 - center) * spacing).collect()
}

fn ray_direction(p: Vec3, origin: Vec3) -> (Vec3, f64) {
    let d = [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]];
    let l = norm(d);
    if l == 0.0 {
        ([0.0, 0.0, 1.0], 0.0)
    } else {
        ([d[0] / l, d[1] / l, d[2] / l], l)
    }
}

/// `k` points on the ray from `origin` through `p`, centered on `p` and
/// spaced `spacing` apart, nearest first.
pub fn ray_samples(p: Vec3, origin: Vec3, k: usize, spacing: f64) -> Result<Vec<Vec3>> {
    if k == 0 || !(spacing > 0.0) {
        return Err(Error::contract(format!("need k ≥ 1 and spacing > 0, got {k} and {spacing}")));
    }
    let (d, _) = ray_direction(p, origin);
    Ok(sample_offsets(k, spacing)
        .into_iter()
        .map(|o| [p[0] + o * d[0], p[1] + o * d[1], p[2] + o * d[2]])
        .collect())
}

/// Tape version over `points[N × 3]` with one ray origin per point. The
/// result is `(N·k) × 3`, the `k` samples of each point in consecutive rows.
/// Gradients flow through the ray direction as well as the center.
pub fn ray_samples_var<T: Real>(
    tape: &mut Tape<T>,
    points: Var,
    origins: Rc<Vec<Vec3>>,
    k: usize,
    spacing: f64,
) -> Result<Var> {
    let pv = tape.value(points);
    if pv.cols() != 3 || pv.rows() != origins.len() {
        return Err(Error::dim("ray_samples", pv.shape(), &[origins.len(), 3]));
    }
    let n = pv.rows();
    let mut data = Vec::with_capacity(n * k * 3);
    for i in 0..n {
        let r = pv.row(i);
        for s in ray_samples([r[0].f64(), r[1].f64(), r[2].f64()], origins[i], k, spacing)? {
            data.extend(s.map(T::c));
        }
    }
    let out = Tensor::new(&[n * k, 3], data)?;
    let offsets = sample_offsets(k, spacing);
    Ok(tape.custom(
        &[points],
        out,
        Box::new(move |ctx| {
            let pv = ctx.inputs[0];
            let mut gp = Tensor::zeros(pv.shape());
            for i in 0..n {
                let r = pv.row(i);
                let (d, l) = ray_direction([r[0].f64(), r[1].f64(), r[2].f64()], origins[i]);
                let mut acc = [0.0; 3];
                for (j, &o) in offsets.iter().enumerate() {
                    let g = ctx.grad.row(i * k + j);
                    let g = [g[0].f64(), g[1].f64(), g[2].f64()];
                    // ∂s/∂p = I + (o / l)(I − d dᵀ)
                    let gd = dot(g, d);
                    let s = if l > 0.0 { o / l } else { 0.0 };
                    for a in 0..3 {
                        acc[a] += g[a] + s * (g[a] - d[a] * gd);
                    }
                }
                for (dst, v) in gp.row_mut(i).iter_mut().zip(acc) {
                    *dst = T::c(v);
                }
            }
            vec![Some(gp)]
        }),
    ))
}
