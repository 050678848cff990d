use crate::error::{Error, Result};
use crate::nn::{Tape, Tensor, Var};
use crate::pipeline::config::LossWeights;
use crate::raster::Camera;
use crate::real::Real;

/// One supervised view: camera plus ground-truth RGB (`HW × 3`) and
/// silhouette (`HW × 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct ViewTarget<T> {
    pub camera: Camera,
    pub rgb: Tensor<T>,
    pub mask: Tensor<T>,
}

/// Renders of one view from both branches, as tape handles.
#[derive(Clone, Copy, Debug)]
pub struct ViewRenders {
    pub coarse_rgb: Var,
    pub coarse_alpha: Var,
    pub dense_rgb: Var,
    pub dense_alpha: Var,
    /// Decoded feature render; `None` when the triplane branch is off.
    pub triplane_rgb: Option<Var>,
}

/// A perceptual image distance that can be plugged into the RGB loss.
pub trait PerceptualLoss<T: Real> {
    fn name(&self) -> &str;

    /// Scalar distance between two `HW × 3` images, or `None` if this
    /// plug-in contributes nothing.
    fn loss_var(&self, tape: &mut Tape<T>, pred: Var, target: Var, width: usize, height: usize) -> Result<Option<Var>>;
}

/// Default plug-in: no perceptual network is shipped.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoPerceptual;

impl<T: Real> PerceptualLoss<T> for NoPerceptual {
    fn name(&self) -> &str {
        "none"
    }

    fn loss_var(&self, _: &mut Tape<T>, _: Var, _: Var, _: usize, _: usize) -> Result<Option<Var>> {
        Ok(None)
    }
}

/// Per-term values, already weighted by their `λ`, averaged over views.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub gaussian_rgb: f64,
    pub triplane_rgb: f64,
    pub mask: f64,
    pub triplane_feature: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        [self.gaussian_rgb, self.triplane_rgb, self.mask, self.triplane_feature, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

impl std::fmt::Display for LossTerms {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "total={:.6e} gaussian_rgb={:.6e} triplane_rgb={:.6e} mask={:.6e} triplane_feature={:.6e}",
            self.total, self.gaussian_rgb, self.triplane_rgb, self.mask, self.triplane_feature
        )
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub gaussian_rgb: Var,
    pub triplane_rgb: Var,
    pub mask: Var,
    pub triplane_feature: Var,
}

impl LossVars {
    pub fn terms<T: Real>(&self, tape: &Tape<T>) -> LossTerms {
        let v = |x: Var| tape.value(x).data()[0].f64();
        LossTerms {
            gaussian_rgb: v(self.gaussian_rgb),
            triplane_rgb: v(self.triplane_rgb),
            mask: v(self.mask),
            triplane_feature: v(self.triplane_feature),
            total: v(self.total),
        }
    }
}

fn scalar<T: Real>(tape: &mut Tape<T>, v: f64) -> Var {
    tape.constant(Tensor::scalar(T::c(v)))
}

/// `a + s·b` for scalars; skips the term when `s` is zero.
fn add_scaled<T: Real>(tape: &mut Tape<T>, a: Var, b: Var, s: f64) -> Result<Var> {
    if s == 0.0 {
        return Ok(a);
    }
    let b = tape.scale(b, T::c(s));
    tape.add(a, b)
}

fn rgb_loss<T: Real>(
    tape: &mut Tape<T>,
    pred: Var,
    target: Var,
    cam: &Camera,
    w: &LossWeights,
    perceptual: &dyn PerceptualLoss<T>,
) -> Result<Var> {
    let l1 = tape.l1_mean(pred, target)?;
    let mut out = tape.scale(l1, T::c(w.l1));
    if w.perceptual != 0.0 {
        if let Some(p) = perceptual.loss_var(tape, pred, target, cam.width, cam.height)? {
            out = add_scaled(tape, out, p, w.perceptual)?;
        }
    }
    Ok(out)
}

/// `λ3·L_rgb^G + λ4·L_rgb^T + λ5·L_mask + λ6·L_tri`, each image term
/// averaged over the supplied views. The Gaussian RGB and mask terms sum the
/// coarse and dense stages with their sub-weights. `reference_triplane`
/// pairs the predicted tokens with a target; without it `L_tri` is zero.
pub fn compute_losses_var<T: Real>(
    tape: &mut Tape<T>,
    renders: &[ViewRenders],
    targets: &[ViewTarget<T>],
    reference_triplane: Option<(Var, &Tensor<T>)>,
    w: &LossWeights,
    perceptual: &dyn PerceptualLoss<T>,
) -> Result<LossVars> {
    w.validate()?;
    if renders.len() != targets.len() || renders.is_empty() {
        return Err(Error::dim("compute_losses views", &[renders.len()], &[targets.len()]));
    }
    let mut g_sum = scalar(tape, 0.0);
    let mut t_sum = scalar(tape, 0.0);
    let mut m_sum = scalar(tape, 0.0);
    for (r, t) in renders.iter().zip(targets) {
        let rgb = tape.constant(t.rgb.clone());
        let mask = tape.constant(t.mask.clone());
        let cam = &t.camera;
        let lc = rgb_loss(tape, r.coarse_rgb, rgb, cam, w, perceptual)?;
        let ld = rgb_loss(tape, r.dense_rgb, rgb, cam, w, perceptual)?;
        g_sum = add_scaled(tape, g_sum, lc, w.coarse_stage)?;
        g_sum = add_scaled(tape, g_sum, ld, w.dense_stage)?;
        if let Some(tri) = r.triplane_rgb {
            let lt = rgb_loss(tape, tri, rgb, cam, w, perceptual)?;
            t_sum = tape.add(t_sum, lt)?;
        }
        let mc = tape.l1_mean(r.coarse_alpha, mask)?;
        let md = tape.l1_mean(r.dense_alpha, mask)?;
        m_sum = add_scaled(tape, m_sum, mc, w.coarse_stage)?;
        m_sum = add_scaled(tape, m_sum, md, w.dense_stage)?;
    }
    let inv = T::c(1.0 / renders.len() as f64);
    let g = tape.scale(g_sum, inv * T::c(w.gaussian_rgb));
    let tr = tape.scale(t_sum, inv * T::c(w.triplane_rgb));
    let m = tape.scale(m_sum, inv * T::c(w.mask));
    let f = match reference_triplane {
        Some((tokens, reference)) => {
            let r = tape.constant(reference.clone());
            let l = tape.l1_mean(tokens, r)?;
            tape.scale(l, T::c(w.triplane_feature))
        }
        None => scalar(tape, 0.0),
    };
    let total = tape.add(g, tr)?;
    let total = tape.add(total, m)?;
    let total = tape.add(total, f)?;
    Ok(LossVars {
        total,
        gaussian_rgb: g,
        triplane_rgb: tr,
        mask: m,
        triplane_feature: f,
    })
}

/// Rendered images of one view as plain tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView<T> {
    pub coarse_rgb: Tensor<T>,
    pub coarse_alpha: Tensor<T>,
    pub dense_rgb: Tensor<T>,
    pub dense_alpha: Tensor<T>,
    pub triplane_rgb: Option<Tensor<T>>,
}

/// Tape-free [`compute_losses_var`].
pub fn compute_losses<T: Real>(
    renders: &[RenderedView<T>],
    targets: &[ViewTarget<T>],
    triplane: Option<(&Tensor<T>, &Tensor<T>)>,
    w: &LossWeights,
    perceptual: &dyn PerceptualLoss<T>,
) -> Result<LossTerms> {
    let mut tape = Tape::new();
    let vars: Vec<ViewRenders> = renders
        .iter()
        .map(|r| ViewRenders {
            coarse_rgb: tape.constant(r.coarse_rgb.clone()),
            coarse_alpha: tape.constant(r.coarse_alpha.clone()),
            dense_rgb: tape.constant(r.dense_rgb.clone()),
            dense_alpha: tape.constant(r.dense_alpha.clone()),
            triplane_rgb: r.triplane_rgb.as_ref().map(|t| tape.constant(t.clone())),
        })
        .collect();
    let tri = triplane.map(|(pred, reference)| (tape.constant(pred.clone()), reference));
    let out = compute_losses_var(&mut tape, &vars, targets, tri, w, perceptual)?;
    Ok(out.terms(&tape))
}
