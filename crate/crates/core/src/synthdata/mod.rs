//! Procedural multiview data: blob-sphere scenes, camera samplers and the
//! dataset writer / validator.
//!
//! Layout of a generated dataset:
//!
//! ```text
//! out/
//!   manifest.json
//!   scene_0000/view_00.png   RGB render
//!   scene_0000/mask_00.png   silhouette (accumulated alpha)
//!   ...
//! ```

pub mod cameras;
pub mod dataset;
pub mod scene;

pub use cameras::{
    focal_from_fov, sample_camera, CameraMode, CameraSample, CameraSamplerSpec, EQUATORIAL_VIEWS, RANDOM_360_VIEWS,
};
pub use dataset::{
    load_sample, load_view, render_dataset, render_view, validate_manifest, DatasetManifest, DatasetSpec, SampleRecord,
    ViewRecord, MANIFEST_FILE,
};
pub use scene::{generate_scene, SceneSpec, MAX_PROTRUSION};
