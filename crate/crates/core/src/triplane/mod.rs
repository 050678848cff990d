//! Spherical triplane branch.
//!
//! Six `H × W` maps cover three spherical coordinate planes, `(θ, φ)`,
//! `(θ, r)` and `(φ, r)`, with two slices each; lookups sum all six
//! bilinear samples. Each query point casts a short ray from a virtual rig
//! camera, samples the triplane along it and lets an MLP weigh the samples.

pub mod aggregate;
pub mod coords;
pub mod feature_render;
pub mod planes;
pub mod rays;
pub mod refine;

pub use aggregate::{
    aggregate, fixed_weight_aggregate, gaussian_weights, query_var, AggregatorVars, AggregatorWeights, RayMode,
};
pub use coords::{
    head_to_triplane, spherical_coords, spherical_jacobian, spherical_to_point, SphericalCoords, HEAD_TO_TRIPLANE,
};
pub use feature_render::{decode_to_rgb, render_decoded_var, render_feature_image, FeatureDecoderWeights};
pub use planes::{sample_var, SphericalTriplane, TriplaneLayout, MAP_COUNT, SLICES};
pub use rays::{ray_samples, ray_samples_var, sample_offsets, VirtualCameraRig, RIG_AZIMUTHS, RIG_RADIUS};
pub use refine::{refine_triplane_tokens, refine_var, TriplaneBranchVars, TriplaneBranchWeights};
