//! Brute-force references shared by the unit tests and the acceptance run.

#![allow(dead_code)]

use headsplat::geometry::{DenseEntry, DensificationTable};
use headsplat::nn::{AttentionBlockWeights, Tensor};
use headsplat::raster::{project, Camera, GaussianCloud};
use headsplat::triplane::{SphericalCoords, SphericalTriplane, TriplaneLayout, SLICES};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn layer_norm_oracle(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * g[j] + b[j])
        .collect()
}

pub fn gelu_oracle(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn vec_mat(v: &[f64], m: &Tensor<f64>) -> Vec<f64> {
    (0..m.cols())
        .map(|j| (0..m.rows()).map(|i| v[i] * m.at(i, j)).sum())
        .collect()
}

/// Explicit per-row, per-head loops; shares no code with the tape.
pub fn attention_oracle(q: &Tensor<f64>, kv: &Tensor<f64>, w: &AttentionBlockWeights<f64>) -> Vec<Vec<f64>> {
    let c = q.cols();
    let d = c / w.heads;
    let hkv: Vec<Vec<f64>> = (0..kv.rows())
        .map(|r| layer_norm_oracle(kv.row(r), w.ln_kv.0.data(), w.ln_kv.1.data()))
        .collect();
    let keys: Vec<Vec<f64>> = hkv.iter().map(|h| vec_mat(h, &w.wk)).collect();
    let vals: Vec<Vec<f64>> = hkv.iter().map(|h| vec_mat(h, &w.wv)).collect();
    let mut out = Vec::new();
    for r in 0..q.rows() {
        let hq = layer_norm_oracle(q.row(r), w.ln_q.0.data(), w.ln_q.1.data());
        let qq = vec_mat(&hq, &w.wq);
        let mut concat = vec![0.0; c];
        for h in 0..w.heads {
            let mut scores: Vec<f64> = keys
                .iter()
                .map(|k| (0..d).map(|e| qq[h * d + e] * k[h * d + e]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
            for s in scores.iter_mut() {
                *s = (*s - mx).exp() / z;
            }
            for e in 0..d {
                concat[h * d + e] = scores.iter().zip(&vals).map(|(a, v)| a * v[h * d + e]).sum();
            }
        }
        let attn = vec_mat(&concat, &w.wo);
        let x: Vec<f64> = q.row(r).iter().zip(&attn).map(|(a, b)| a + b).collect();
        let hf = layer_norm_oracle(&x, w.ln_ff.0.data(), w.ln_ff.1.data());
        let f1: Vec<f64> = vec_mat(&hf, &w.ff1).into_iter().map(gelu_oracle).collect();
        let f2 = vec_mat(&f1, &w.ff2);
        out.push(x.iter().zip(&f2).map(|(a, b)| a + b).collect());
    }
    out
}

/// Tent-kernel reference for one plane: every texel contributes
/// `max(0, 1 − |x − i|)·max(0, 1 − |y − j|)` at continuous texel coordinates.
pub fn tent_plane(tri: &SphericalTriplane<f64>, plane: usize, u: f64, v: f64, wrap_rows: bool, wrap_cols: bool) -> Vec<f64> {
    let (h, w) = (tri.layout.height, tri.layout.width);
    let coord = |t: f64, n: usize, wrap: bool| {
        let x = t * n as f64 - 0.5;
        if wrap {
            x
        } else {
            x.clamp(0.0, (n - 1) as f64)
        }
    };
    let (y, x) = (coord(u, h, wrap_rows), coord(v, w, wrap_cols));
    let idx = |i: i64, n: usize, wrap: bool| -> Option<usize> {
        if wrap {
            Some(i.rem_euclid(n as i64) as usize)
        } else if i >= 0 && (i as usize) < n {
            Some(i as usize)
        } else {
            None
        }
    };
    let mut out = vec![0.0; tri.channels()];
    for j in -1..=h as i64 {
        for i in -1..=w as i64 {
            let wt = (1.0 - (y - j as f64).abs()).max(0.0) * (1.0 - (x - i as f64).abs()).max(0.0);
            if wt == 0.0 {
                continue;
            }
            let (Some(r), Some(c)) = (idx(j, h, wrap_rows), idx(i, w, wrap_cols)) else {
                continue;
            };
            for slice in 0..SLICES {
                for (o, v) in out.iter_mut().zip(tri.texel(plane, slice, r, c)) {
                    *o += wt * v;
                }
            }
        }
    }
    out
}

pub fn tent_sample(tri: &SphericalTriplane<f64>, c: &SphericalCoords) -> Vec<f64> {
    let parts = [
        tent_plane(tri, 0, c.theta, c.phi, false, true),
        tent_plane(tri, 1, c.theta, c.r, false, false),
        tent_plane(tri, 2, c.phi, c.r, true, false),
    ];
    (0..tri.channels()).map(|k| parts.iter().map(|p| p[k]).sum()).collect()
}

pub fn random_table(rng: &mut ChaCha8Rng, source: usize, extra: usize) -> DensificationTable {
    let mut entries: Vec<DenseEntry> = (0..source as u32).map(DenseEntry::identity).collect();
    for _ in 0..extra {
        let raw: [f64; 3] = [rng.random(), rng.random(), rng.random::<f64>() + 1e-3];
        let s: f64 = raw.iter().sum();
        entries.push(DenseEntry {
            parents: [
                rng.random_range(0..source as u32),
                rng.random_range(0..source as u32),
                rng.random_range(0..source as u32),
            ],
            weights: raw.map(|w| w / s),
        });
    }
    DensificationTable::new(source, entries).unwrap()
}

pub fn explicit_sum(t: &DensificationTable, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    t.entries()
        .iter()
        .map(|e| {
            (0..rows[0].len())
                .map(|c| (0..3).map(|k| e.weights[k] * rows[e.parents[k] as usize][c]).sum())
                .collect()
        })
        .collect()
}

/// Front-to-back compositing written straight from the formula: every
/// projected splat, sorted by depth, tested against every pixel center.
pub fn composite_oracle(cloud: &GaussianCloud<f64>, cam: &Camera, background: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ch = cloud.channels();
    let w = cam.rotation();
    let mut projected = Vec::new();
    for i in 0..cloud.len() {
        let r = |t: &Tensor<f64>| [t.row(i)[0], t.row(i)[1], t.row(i)[2]];
        let q = cloud.rotations.row(i);
        let mut singular = false;
        if let Some(p) = project(r(&cloud.positions), r(&cloud.scales), [q[0], q[1], q[2], q[3]], cam, &w, &mut singular) {
            projected.push((p.depth, i, p));
        }
    }
    projected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let npx = cam.width * cam.height;
    let mut color = vec![0.0; npx * ch];
    let mut alpha = vec![0.0; npx];
    for y in 0..cam.height {
        for x in 0..cam.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut col = vec![0.0; ch];
            let mut t = 1.0;
            for (_, i, p) in &projected {
                let (dx, dy) = (px - p.mean[0], py - p.mean[1]);
                let det = p.cov2d[0] * p.cov2d[2] - p.cov2d[1] * p.cov2d[1];
                let maha = (p.cov2d[2] * dx * dx - 2.0 * p.cov2d[1] * dx * dy + p.cov2d[0] * dy * dy) / det;
                if maha > 9.0 {
                    continue;
                }
                let a = cloud.opacity.row(*i)[0] * (-0.5 * maha).exp();
                for k in 0..ch {
                    col[k] += cloud.colors.row(*i)[k] * a * t;
                }
                t *= 1.0 - a;
            }
            let pix = y * cam.width + x;
            for k in 0..ch {
                color[pix * ch + k] = col[k] + t * background[k];
            }
            alpha[pix] = 1.0 - t;
        }
    }
    (color, alpha)
}

pub fn random_triplane(rng: &mut ChaCha8Rng, layout: TriplaneLayout, c: usize) -> SphericalTriplane<f64> {
    SphericalTriplane::new(layout, Tensor::randn(&[layout.token_count(), c], 1.0, rng)).unwrap()
}

pub fn cam(w: usize, h: usize) -> Camera {
    Camera::look_at([0.0, 0.0, 3.0], [0.0; 3], 1.2 * w as f64, w, h)
}

pub fn random_quat(rng: &mut impl Rng) -> [f64; 4] {
    let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

pub fn random_cloud(rng: &mut impl Rng, n: usize, channels: usize, spread: f64, smin: f64, smax: f64) -> GaussianCloud<f64> {
    let mut pos = Vec::new();
    let mut col = Vec::new();
    let mut op = Vec::new();
    let mut sc = Vec::new();
    let mut rot = Vec::new();
    for _ in 0..n {
        pos.extend((0..3).map(|_| rng.random_range(-spread..spread)));
        col.extend((0..channels).map(|_| rng.random_range(0.0..1.0)));
        op.push(rng.random_range(0.05..0.95));
        sc.extend((0..3).map(|_| rng.random_range(smin..smax)));
        rot.extend(random_quat(rng));
    }
    GaussianCloud::new(
        Tensor::new(&[n, 3], pos).unwrap(),
        Tensor::new(&[n, channels], col).unwrap(),
        Tensor::new(&[n, 1], op).unwrap(),
        Tensor::new(&[n, 3], sc).unwrap(),
        Tensor::new(&[n, 4], rot).unwrap(),
    )
    .unwrap()
}
