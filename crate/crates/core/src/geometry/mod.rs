//! Template meshes, area-driven subdivision and barycentric densification.

pub mod mesh;
pub mod subdivide;

pub use mesh::{load_mesh, triangle_area, CanonicalMesh, FLAME_VERTEX_COUNT};
pub use subdivide::{
    subdivide, DenseEntry, DensificationTable, Subdivision, DEFAULT_AREA_THRESHOLD,
    DEFAULT_MAX_DEPTH,
};
