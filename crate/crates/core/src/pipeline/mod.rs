//! End-to-end model: weights and config, the feed-forward pass, losses,
//! the trainer, checkpoints and image metrics.
//!
//! One reconstruction runs
//!
//! 1. fused image tokens from the four backbone layers,
//! 2. point tokens from `γ(V)` refined by cross-attention to the image,
//! 3. the coarse decoder (positions `V + offset`),
//! 4. barycentric densification of coarse positions and point tokens,
//! 5. triplane refinement and ray-aggregated queries at the dense points,
//! 6. the dense decoder on `[point tokens ‖ triplane features]`.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod gradsuite;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::{LossWeights, ModelConfig, TemplateSpec, TrainConfig};
pub use forward::{
    check_reconstruction, forward_var, reconstruct, reconstruct_from_features, ForwardVars, ModelVars,
    Reconstruction,
};
pub use gradsuite::{run_grad_suite, GradCheck, GradSuiteReport};
pub use loss::{
    compute_losses, compute_losses_var, LossTerms, LossVars, NoPerceptual, PerceptualLoss, RenderedView, ViewRenders,
    ViewTarget,
};
pub use metrics::{evaluate_reconstruction, psnr, ssim, MetricsReport, ViewMetrics};
pub use model::{ModelWeights, Template};
pub use optim::{learning_rate, Adam};
pub use train::{loss_and_gradients, StepReport, Trainer, TrainingSample};
