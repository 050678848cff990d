use crate::error::Result;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::raster::camera::Camera;
use crate::raster::render::{rasterize, rasterize_backward, GaussianCloud};
use crate::real::Real;

/// A Gaussian cloud whose attributes live on a tape.
#[derive(Clone, Copy, Debug)]
pub struct CloudVars {
    pub positions: Var,
    pub colors: Var,
    pub opacity: Var,
    pub scales: Var,
    pub rotations: Var,
}

impl CloudVars {
    fn inputs(&self) -> [Var; 5] {
        [self.positions, self.colors, self.opacity, self.scales, self.rotations]
    }

    pub fn value<T: Real>(&self, tape: &Tape<T>) -> GaussianCloud<T> {
        GaussianCloud {
            positions: tape.value(self.positions).clone(),
            colors: tape.value(self.colors).clone(),
            opacity: tape.value(self.opacity).clone(),
            scales: tape.value(self.scales).clone(),
            rotations: tape.value(self.rotations).clone(),
        }
    }

    pub fn with_colors(&self, colors: Var) -> Self {
        Self { colors, ..*self }
    }
}

fn cloud_from<T: Real>(t: &[&Tensor<T>]) -> GaussianCloud<T> {
    GaussianCloud {
        positions: t[0].clone(),
        colors: t[1].clone(),
        opacity: t[2].clone(),
        scales: t[3].clone(),
        rotations: t[4].clone(),
    }
}

/// Differentiable render. The result is `H·W × (C + 1)`: the composited
/// channels followed by alpha.
pub fn rasterize_var<T: Real>(
    tape: &mut Tape<T>,
    cloud: &CloudVars,
    cam: &Camera,
    background: &[f64],
) -> Result<Var> {
    let value = cloud.value(tape);
    let out = rasterize(&value, cam, background)?;
    let c = out.channels;
    let npx = out.width * out.height;
    let mut data = Vec::with_capacity(npx * (c + 1));
    for p in 0..npx {
        data.extend(out.color[p * c..(p + 1) * c].iter().map(|&v| T::c(v)));
        data.push(T::c(out.alpha[p]));
    }
    let result = Tensor::new(&[npx, c + 1], data)?;
    let cam = cam.clone();
    let bg = background.to_vec();
    Ok(tape.custom(
        &cloud.inputs(),
        result,
        Box::new(move |ctx| {
            let cl = cloud_from(&ctx.inputs);
            let mut gc = Vec::with_capacity(npx * c);
            let mut ga = Vec::with_capacity(npx);
            for p in 0..npx {
                let row = ctx.grad.row(p);
                gc.extend(row[..c].iter().map(|v| v.f64()));
                ga.push(row[c].f64());
            }
            let g = rasterize_backward(&cl, &cam, &bg, &gc, &ga).expect("backward mirrors a successful forward");
            vec![
                Some(g.positions.cast()),
                Some(g.colors.cast()),
                Some(g.opacity.cast()),
                Some(g.scales.cast()),
                Some(g.rotations.cast()),
            ]
        }),
    ))
}
