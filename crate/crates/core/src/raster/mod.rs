//! Differentiable tiled Gaussian splatting.

pub mod camera;
pub mod op;
pub mod project;
pub mod render;

pub use camera::Camera;
pub use op::{rasterize_var, CloudVars};
pub use project::{covariance, project, project_backward, quat_to_matrix, Projection, COV_REGULARIZATION};
pub use render::{
    rasterize, rasterize_backward, rasterize_naive, CloudGrads, GaussianCloud, RenderOutput,
    KERNEL_CUTOFF, MIN_TRANSMITTANCE, TILE,
};
