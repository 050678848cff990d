use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::raster::camera::Vec3;
use crate::real::Real;
use crate::triplane::coords::{spherical_coords, spherical_jacobian, SphericalCoords};

/// Number of feature maps: three coordinate-pair planes, two slices each.
pub const MAP_COUNT: usize = 6;
pub const SLICES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Axis {
    R,
    Theta,
    Phi,
}

impl Axis {
    fn pick(self, c: &SphericalCoords) -> f64 {
        match self {
            Axis::R => c.r,
            Axis::Theta => c.theta,
            Axis::Phi => c.phi,
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn wraps(self) -> bool {
        self == Axis::Phi
    }
}

/// `(row axis, column axis)` of each plane.
const PLANES: [(Axis, Axis); 3] = [(Axis::Theta, Axis::Phi), (Axis::Theta, Axis::R), (Axis::Phi, Axis::R)];

/// Grid geometry shared by every map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriplaneLayout {
    pub height: usize,
    pub width: usize,
    pub r_max: f64,
}

impl TriplaneLayout {
    pub fn token_count(&self) -> usize {
        MAP_COUNT * self.height * self.width
    }

    /// Token row for texel `(row, col)` of slice `slice` on plane `plane`.
    pub fn token(&self, plane: usize, slice: usize, row: usize, col: usize) -> usize {
        ((plane * SLICES + slice) * self.height + row) * self.width + col
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || !(self.r_max > 0.0) {
            return Err(Error::contract(format!("invalid triplane layout {self:?}")));
        }
        Ok(())
    }
}

/// Six `H × W × C` maps stored as `6·H·W` token rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SphericalTriplane<T> {
    pub layout: TriplaneLayout,
    pub tokens: Tensor<T>,
}

impl<T: Real> SphericalTriplane<T> {
    pub fn new(layout: TriplaneLayout, tokens: Tensor<T>) -> Result<Self> {
        layout.validate()?;
        if tokens.shape().len() != 2 || tokens.rows() != layout.token_count() {
            return Err(Error::dim("triplane tokens", tokens.shape(), &[layout.token_count(), tokens.cols()]));
        }
        if let Some(i) = tokens.first_non_finite() {
            return Err(Error::NonFinite {
                what: "triplane tokens",
                index: i,
            });
        }
        Ok(Self { layout, tokens })
    }

    pub fn constant(layout: TriplaneLayout, channels: usize, value: T) -> Result<Self> {
        Self::new(layout, Tensor::full(&[layout.token_count(), channels], value))
    }

    pub fn channels(&self) -> usize {
        self.tokens.cols()
    }

    pub fn texel(&self, plane: usize, slice: usize, row: usize, col: usize) -> &[T] {
        self.tokens.row(self.layout.token(plane, slice, row, col))
    }

    /// Sum over the six maps of the bilinear sample at `p`.
    pub fn sample(&self, p: Vec3) -> Vec<T> {
        let mut out = vec![T::zero(); self.channels()];
        accumulate(&self.tokens, &self.layout, &stencil(&self.layout, p), &mut out);
        out
    }

    /// Sum of the six bilinear samples at already-normalized coordinates.
    pub fn sample_coords(&self, c: &SphericalCoords) -> Vec<T> {
        let mut out = vec![T::zero(); self.channels()];
        let s = Stencil {
            planes: plane_stencils(&self.layout, c),
            point: [0.0; 3],
            clamped: c.clamped,
        };
        accumulate(&self.tokens, &self.layout, &s, &mut out);
        out
    }

    /// Samples every row of an `N × 3` tensor. Also returns how many points
    /// had their radius clamped.
    pub fn sample_points(&self, points: &Tensor<T>) -> Result<(Tensor<T>, usize)> {
        check_points(points)?;
        let c = self.channels();
        let mut out = Tensor::zeros(&[points.rows(), c]);
        let mut clamped = 0;
        for i in 0..points.rows() {
            let s = stencil(&self.layout, point_of(points.row(i)));
            clamped += s.clamped as usize;
            accumulate(&self.tokens, &self.layout, &s, out.row_mut(i));
        }
        Ok((out, clamped))
    }
}

fn check_points<T: Real>(points: &Tensor<T>) -> Result<()> {
    if points.shape().len() != 2 || points.cols() != 3 {
        return Err(Error::dim("triplane query", points.shape(), &[points.rows(), 3]));
    }
    Ok(())
}

fn point_of<T: Real>(row: &[T]) -> Vec3 {
    [row[0].f64(), row[1].f64(), row[2].f64()]
}

/// Linear interpolation taps along one grid axis:
/// `value = (1 − f)·t[i0] + f·t[i1]`, with `df = ∂f/∂coordinate`.
#[derive(Clone, Copy, Debug)]
struct Taps {
    i0: usize,
    i1: usize,
    f: f64,
    df: f64,
}

/// Texel centers sit at `(i + 0.5) / n`; wrapping axes are periodic, the
/// others clamp to the edge texels.
fn taps(u: f64, n: usize, wrap: bool) -> Taps {
    let x = u * n as f64 - 0.5;
    if wrap {
        let x0 = x.floor();
        let i0 = (x0 as i64).rem_euclid(n as i64) as usize;
        return Taps {
            i0,
            i1: (i0 + 1) % n,
            f: x - x0,
            df: n as f64,
        };
    }
    let last = n - 1;
    if x <= 0.0 {
        Taps { i0: 0, i1: 0, f: 0.0, df: 0.0 }
    } else if x >= last as f64 {
        Taps {
            i0: last,
            i1: last,
            f: 0.0,
            df: 0.0,
        }
    } else {
        let x0 = x.floor();
        Taps {
            i0: x0 as usize,
            i1: x0 as usize + 1,
            f: x - x0,
            df: n as f64,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct PlaneStencil {
    rows: Taps,
    cols: Taps,
}

impl PlaneStencil {
    /// `(row, col, weight)` for the four neighbours.
    fn corners(&self) -> [(usize, usize, f64); 4] {
        let (r, c) = (&self.rows, &self.cols);
        [
            (r.i0, c.i0, (1.0 - r.f) * (1.0 - c.f)),
            (r.i0, c.i1, (1.0 - r.f) * c.f),
            (r.i1, c.i0, r.f * (1.0 - c.f)),
            (r.i1, c.i1, r.f * c.f),
        ]
    }
}

#[derive(Clone, Copy, Debug)]
struct Stencil {
    planes: [PlaneStencil; 3],
    point: Vec3,
    clamped: bool,
}

fn plane_stencils(layout: &TriplaneLayout, c: &SphericalCoords) -> [PlaneStencil; 3] {
    PLANES.map(|(ra, ca)| PlaneStencil {
        rows: taps(ra.pick(c), layout.height, ra.wraps()),
        cols: taps(ca.pick(c), layout.width, ca.wraps()),
    })
}

fn stencil(layout: &TriplaneLayout, p: Vec3) -> Stencil {
    let c = spherical_coords(p, layout.r_max);
    Stencil {
        planes: plane_stencils(layout, &c),
        point: p,
        clamped: c.clamped,
    }
}

fn accumulate<T: Real>(tokens: &Tensor<T>, layout: &TriplaneLayout, s: &Stencil, out: &mut [T]) {
    for (k, ps) in s.planes.iter().enumerate() {
        for (row, col, w) in ps.corners() {
            if w == 0.0 {
                continue;
            }
            let w = T::c(w);
            for slice in 0..SLICES {
                let t = tokens.row(layout.token(k, slice, row, col));
                for (o, &v) in out.iter_mut().zip(t) {
                    *o += w * v;
                }
            }
        }
    }
}

/// Gradient of `Σ_c g_c · sample_c(p)` with respect to `p`.
fn point_gradient<T: Real>(tokens: &Tensor<T>, layout: &TriplaneLayout, s: &Stencil, g: &[T]) -> Vec3 {
    let jac = spherical_jacobian(s.point, layout.r_max);
    let mut out = [0.0; 3];
    // Texel value summed over slices, dotted with the upstream gradient.
    let gdot = |plane: usize, row: usize, col: usize| -> f64 {
        (0..SLICES)
            .map(|slice| {
                let t = tokens.row(layout.token(plane, slice, row, col));
                t.iter().zip(g).map(|(&v, &gg)| (v * gg).f64()).sum::<f64>()
            })
            .sum()
    };
    for (k, ps) in s.planes.iter().enumerate() {
        let (r, c) = (&ps.rows, &ps.cols);
        if r.df == 0.0 && c.df == 0.0 {
            continue;
        }
        let t00 = gdot(k, r.i0, c.i0);
        let t01 = gdot(k, r.i0, c.i1);
        let t10 = gdot(k, r.i1, c.i0);
        let t11 = gdot(k, r.i1, c.i1);
        let d_row = r.df * ((1.0 - c.f) * (t10 - t00) + c.f * (t11 - t01));
        let d_col = c.df * ((1.0 - r.f) * (t01 - t00) + r.f * (t11 - t10));
        let (ra, ca) = PLANES[k];
        for i in 0..3 {
            out[i] += d_row * jac[ra.index()][i] + d_col * jac[ca.index()][i];
        }
    }
    out
}

/// Differentiable triplane query: `tokens[6·H·W × C]`, `points[N × 3]` →
/// `N × C`. Gradients flow to both the tokens and the query points.
pub fn sample_var<T: Real>(tape: &mut Tape<T>, tokens: Var, points: Var, layout: TriplaneLayout) -> Result<Var> {
    layout.validate()?;
    let tv = tape.value(tokens);
    if tv.rows() != layout.token_count() {
        return Err(Error::dim("triplane tokens", tv.shape(), &[layout.token_count(), tv.cols()]));
    }
    let pv = tape.value(points);
    check_points(pv)?;
    let stencils: Vec<Stencil> = (0..pv.rows()).map(|i| stencil(&layout, point_of(pv.row(i)))).collect();
    let c = tv.cols();
    let mut out = Tensor::zeros(&[pv.rows(), c]);
    for (i, s) in stencils.iter().enumerate() {
        accumulate(tv, &layout, s, out.row_mut(i));
    }
    Ok(tape.custom(
        &[tokens, points],
        out,
        Box::new(move |ctx| {
            let g_tokens = ctx.needs[0].then(|| {
                let mut gt = Tensor::zeros(ctx.inputs[0].shape());
                for (i, s) in stencils.iter().enumerate() {
                    let g = ctx.grad.row(i);
                    for (k, ps) in s.planes.iter().enumerate() {
                        for (row, col, w) in ps.corners() {
                            if w == 0.0 {
                                continue;
                            }
                            let w = T::c(w);
                            for slice in 0..SLICES {
                                let dst = gt.row_mut(layout.token(k, slice, row, col));
                                for (d, &gg) in dst.iter_mut().zip(g) {
                                    *d += w * gg;
                                }
                            }
                        }
                    }
                }
                gt
            });
            let g_points = ctx.needs[1].then(|| {
                let mut gp = Tensor::zeros(ctx.inputs[1].shape());
                for (i, s) in stencils.iter().enumerate() {
                    let d = point_gradient(ctx.inputs[0], &layout, s, ctx.grad.row(i));
                    for (dst, v) in gp.row_mut(i).iter_mut().zip(d) {
                        *dst = T::c(v);
                    }
                }
                gp
            });
            vec![g_tokens, g_points]
        }),
    ))
}
