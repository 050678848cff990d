//! Coarse-to-fine feed-forward Gaussian head reconstruction.
//!
//! The crate is organized bottom-up:
//!
//! * [`nn`]: tensors, a reverse-mode tape and transformer blocks.
//! * [`geometry`]: template meshes, area-driven subdivision and barycentric
//!   densification of points and features.
//! * [`encode`]: positional encoding and the toy image backbone with
//!   multi-layer feature fusion.
//! * [`heads`]: Gaussian attribute decoders with bounded offsets.
//! * [`triplane`]: spherical triplane tokens, ray-based multi-sample queries
//!   and learned aggregation.
//! * [`raster`]: differentiable tiled Gaussian splatting.
//! * [`pipeline`]: end-to-end reconstruction, losses, training, checkpoints
//!   and image metrics.
//! * [`synthdata`]: procedural scenes and multiview camera sampling.
//! * [`bundle`] and [`imageio`]: the named-tensor file format and PNG I/O.
//! * [`bench`]: the aggregation, rasterizer and coarse-to-fine harnesses.

pub mod bench;
pub mod bundle;
pub mod encode;
pub mod error;
pub mod geometry;
pub mod heads;
pub mod imageio;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod real;
pub mod synthdata;
pub mod triplane;

pub use error::{Error, Result};
pub use real::{DType, Real};
