//! Positional encoding of template vertices and image tokenization.

pub mod features;
pub mod posenc;

pub use features::{
    concat_layers, embed_patches, extract_image_features, fuse_layers, fuse_layers_var,
    grid_positions, patchify, ExtractorConfig, ExtractorWeights, FeatureSource, ImageFeatureSet,
    FEATURE_LAYERS,
};
pub use posenc::{positional_encode, PositionalEncoderConfig};
