use std::collections::BTreeMap;

use crate::encode::ImageFeatureSet;
use crate::error::{Error, Result, StageExt};
use crate::nn::{Tape, Tensor};
use crate::pipeline::config::TrainConfig;
use crate::pipeline::forward::{forward_var, ModelVars};
use crate::pipeline::loss::{compute_losses_var, LossTerms, NoPerceptual, PerceptualLoss, ViewRenders, ViewTarget};
use crate::pipeline::model::{ModelWeights, Template};
use crate::pipeline::optim::{learning_rate, Adam};
use crate::raster::rasterize_var;
use crate::real::Real;
use crate::triplane::render_decoded_var;

/// One scene: features of the reference image plus every supervised view.
#[derive(Clone, Debug)]
pub struct TrainingSample<T> {
    pub features: ImageFeatureSet<T>,
    pub views: Vec<ViewTarget<T>>,
    /// Index into `views` of the image the features came from.
    pub reference: usize,
    /// Optional target for the triplane feature loss.
    pub reference_triplane: Option<Tensor<T>>,
}

/// Loss and gradient of every trainable tensor, by name.
pub fn loss_and_gradients<T: Real>(
    weights: &ModelWeights<T>,
    template: &Template,
    sample: &TrainingSample<T>,
    views: &[usize],
    cfg: &TrainConfig,
    perceptual: &dyn PerceptualLoss<T>,
) -> Result<(LossTerms, BTreeMap<String, Tensor<T>>)> {
    let mut tape = Tape::new();
    let vars = ModelVars::bind(weights, &mut tape, true)?;
    let fwd = forward_var(&mut tape, &vars, &weights.config, template, &sample.features)?;
    let bg = cfg.background;
    let mut renders = Vec::with_capacity(views.len());
    let mut targets = Vec::with_capacity(views.len());
    for &i in views {
        let target = sample
            .views
            .get(i)
            .ok_or_else(|| Error::contract(format!("view index {i} out of range")))?;
        let cam = &target.camera;
        let split = |tape: &mut Tape<T>, img| -> Result<_> { Ok((tape.slice_cols(img, 0, 3)?, tape.slice_cols(img, 3, 4)?)) };
        let c = rasterize_var(&mut tape, &fwd.coarse, cam, &bg).stage("render coarse")?;
        let (coarse_rgb, coarse_alpha) = split(&mut tape, c)?;
        let d = rasterize_var(&mut tape, &fwd.dense, cam, &bg).stage("render dense")?;
        let (dense_rgb, dense_alpha) = split(&mut tape, d)?;
        let triplane_rgb = if weights.config.triplane_enabled {
            let (rgb, _) = render_decoded_var(&mut tape, &fwd.dense, fwd.triplane_features, cam, &vars.feature_decoder)
                .stage("render triplane")?;
            Some(rgb)
        } else {
            None
        };
        renders.push(ViewRenders {
            coarse_rgb,
            coarse_alpha,
            dense_rgb,
            dense_alpha,
            triplane_rgb,
        });
        targets.push(target.clone());
    }
    let reference = match (fwd.triplane_tokens, &sample.reference_triplane) {
        (Some(t), Some(r)) => Some((t, r)),
        _ => None,
    };
    let loss = compute_losses_var(&mut tape, &renders, &targets, reference, &cfg.losses, perceptual).stage("loss")?;
    let terms = loss.terms(&tape);
    let handles: Vec<(String, crate::nn::Var)> = vars
        .bound
        .iter()
        .filter(|(_, v)| tape.requires_grad(**v))
        .map(|(n, v)| (n.clone(), *v))
        .collect();
    let mut grads = tape.backward(loss.total)?;
    let out = handles.into_iter().map(|(n, v)| (n, grads.take(v))).collect();
    Ok((terms, out))
}

/// Per-step summary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub lr: f64,
    pub terms: LossTerms,
}

/// Owns the weights and optimizer state of one training run.
pub struct Trainer<T: Real> {
    pub weights: ModelWeights<T>,
    pub template: Template,
    pub config: TrainConfig,
    pub step: usize,
    adam: Adam<T>,
    perceptual: Box<dyn PerceptualLoss<T>>,
}

impl<T: Real> Trainer<T> {
    pub fn new(weights: ModelWeights<T>, template: Template, config: TrainConfig) -> Result<Self> {
        config.losses.validate()?;
        let adam = Adam::new(config.beta1, config.beta2, config.eps)?;
        Ok(Self {
            weights,
            template,
            config,
            step: 0,
            adam,
            perceptual: Box::new(NoPerceptual),
        })
    }

    pub fn with_perceptual(mut self, p: Box<dyn PerceptualLoss<T>>) -> Self {
        self.perceptual = p;
        self
    }

    /// Views used at the current step: all of them, or a rotating window of
    /// `views_per_step` consecutive indices.
    pub fn views_for_step(&self, view_count: usize) -> Vec<usize> {
        let k = self.config.views_per_step;
        if k == 0 || k >= view_count {
            return (0..view_count).collect();
        }
        let start = (self.step * k) % view_count;
        (0..k).map(|j| (start + j) % view_count).collect()
    }

    pub fn learning_rate(&self) -> f64 {
        let c = &self.config;
        learning_rate(c.base_lr, c.warmup_steps, c.total_steps, self.step)
    }

    pub fn train_step(&mut self, sample: &TrainingSample<T>) -> Result<StepReport> {
        let views = self.views_for_step(sample.views.len());
        let (terms, grads) = loss_and_gradients(
            &self.weights,
            &self.template,
            sample,
            &views,
            &self.config,
            self.perceptual.as_ref(),
        )?;
        let bad_grad = grads.iter().find(|(_, g)| !g.is_finite()).map(|(n, _)| n.clone());
        if !terms.is_finite() || bad_grad.is_some() {
            let mut dump = terms.to_string();
            if let Some(n) = bad_grad {
                dump.push_str(&format!(" non-finite gradient in `{n}`"));
            }
            return Err(Error::Diverged {
                step: self.step,
                terms: dump,
            });
        }
        let lr = self.learning_rate();
        self.adam.update(&mut self.weights.store, &grads, lr)?;
        let report = StepReport {
            step: self.step,
            lr,
            terms,
        };
        self.step += 1;
        Ok(report)
    }
}
