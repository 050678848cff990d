use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encode::extract_image_features;
use crate::error::{Error, Result, StageExt};
use crate::imageio::Image;
use crate::pipeline::{ModelWeights, TrainingSample, ViewTarget};
use crate::raster::camera::norm;
use crate::raster::{rasterize, Camera, GaussianCloud};
use crate::real::Real;
use crate::synthdata::cameras::{sample_camera, CameraMode, CameraSample, CameraSamplerSpec, EQUATORIAL_VIEWS, RANDOM_360_VIEWS};
use crate::synthdata::scene::{generate_scene, SceneSpec};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything that determines a generated dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub seed: u64,
    pub samples: usize,
    /// Training views per sample (`N_v`), one of them the reference.
    pub views: usize,
    /// Additional evaluation-only views per sample.
    pub held_out: usize,
    pub image_size: usize,
    /// Template for every scene; the seed is replaced per sample.
    pub scene: SceneSpec,
    pub cameras: CameraSamplerSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 1,
            views: 6,
            held_out: 1,
            image_size: 64,
            scene: SceneSpec::default(),
            cameras: CameraSamplerSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    /// Paths relative to the manifest directory.
    pub image: String,
    pub silhouette: String,
    /// CRC-32 of the two files as written.
    pub image_crc32: u32,
    pub silhouette_crc32: u32,
    pub pose: CameraSample,
    pub camera: Camera,
    pub reference: bool,
    pub held_out: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub scene_id: String,
    pub scene: SceneSpec,
    pub views: Vec<ViewRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// RGB render over a black background and its accumulated alpha.
pub fn render_view(cloud: &GaussianCloud<f64>, cam: &Camera) -> Result<(Image, Image)> {
    let out = rasterize(cloud, cam, &[0.0; 3])?;
    let mask = Image::new(cam.width, cam.height, 1, out.alpha.iter().map(|&a| a as f32).collect())?;
    Ok((out.color_image(), mask))
}

/// Camera poses for one sample: `views + held_out` draws, in order.
fn draw_poses(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Result<Vec<CameraSample>> {
    let total = spec.views + spec.held_out;
    match spec.cameras.mode {
        CameraMode::Random360 => {
            let pool_size = EQUATORIAL_VIEWS + RANDOM_360_VIEWS;
            if total > pool_size {
                return Err(Error::contract(format!("360° mode offers {pool_size} views, asked for {total}")));
            }
            let pool = (0..pool_size)
                .map(|i| sample_camera(&spec.cameras, i, rng))
                .collect::<Result<Vec<_>>>()?;
            let picks = rand::seq::index::sample(rng, pool_size, total);
            Ok(picks.into_iter().map(|i| pool[i]).collect())
        }
        _ => (0..total).map(|i| sample_camera(&spec.cameras, i, rng)).collect(),
    }
}

/// Generates every scene, renders its views and writes images plus
/// `manifest.json` under `out_dir`.
pub fn render_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.scene.validate()?;
    spec.cameras.validate()?;
    if spec.views == 0 || spec.image_size == 0 {
        return Err(Error::contract("need at least one view and a non-empty image size"));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let plans = (0..spec.samples)
        .map(|s| {
            let scene = SceneSpec {
                seed: rng.next_u64(),
                ..spec.scene
            };
            let mut cam_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
            let poses = draw_poses(spec, &mut cam_rng)?;
            let reference = cam_rng.random_range(0..spec.views);
            Ok((s, scene, poses, reference))
        })
        .collect::<Result<Vec<_>>>()?;

    let size = spec.image_size;
    let samples = plans
        .into_par_iter()
        .map(|(s, scene, poses, reference)| {
            let cloud = generate_scene(&scene)?;
            let scene_id = format!("scene_{s:04}");
            std::fs::create_dir_all(out_dir.join(&scene_id))?;
            let views = poses
                .iter()
                .enumerate()
                .map(|(v, pose)| {
                    let camera = pose.camera(size, size);
                    let (rgb, mask) = render_view(&cloud, &camera)?;
                    let image = format!("{scene_id}/view_{v:02}.png");
                    let silhouette = format!("{scene_id}/mask_{v:02}.png");
                    rgb.save(&out_dir.join(&image))?;
                    mask.save(&out_dir.join(&silhouette))?;
                    Ok(ViewRecord {
                        image_crc32: file_crc(&out_dir.join(&image))?,
                        silhouette_crc32: file_crc(&out_dir.join(&silhouette))?,
                        image,
                        silhouette,
                        pose: *pose,
                        camera,
                        reference: v == reference,
                        held_out: v >= spec.views,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SampleRecord { scene_id, scene, views })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest { spec: *spec, samples };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn file_crc(path: &Path) -> Result<u32> {
    Ok(crc32fast::hash(&std::fs::read(path)?))
}

/// Checks the manifest's structure and that every file it names exists with
/// the recorded checksum.
pub fn validate_manifest(manifest: &DatasetManifest, root: &Path) -> Result<()> {
    let bad = |msg: String| Err(Error::contract(msg));
    let spec = &manifest.spec;
    if manifest.samples.len() != spec.samples {
        return bad(format!("manifest lists {} samples, spec says {}", manifest.samples.len(), spec.samples));
    }
    for s in &manifest.samples {
        let train = s.views.iter().filter(|v| !v.held_out).count();
        if train != spec.views || s.views.len() != spec.views + spec.held_out {
            return bad(format!("{}: expected {} + {} views", s.scene_id, spec.views, spec.held_out));
        }
        let refs = s.views.iter().filter(|v| v.reference).count();
        if refs != 1 || s.views.iter().any(|v| v.reference && v.held_out) {
            return bad(format!("{}: needs exactly one training reference view, found {refs}", s.scene_id));
        }
        for v in &s.views {
            for (f, crc) in [(&v.image, v.image_crc32), (&v.silhouette, v.silhouette_crc32)] {
                if !root.join(f).is_file() {
                    return bad(format!("{}: missing file {f}", s.scene_id));
                }
                let actual = file_crc(&root.join(f))?;
                if actual != crc {
                    return bad(format!("{}: {f} has checksum {actual:08x}, manifest records {crc:08x}", s.scene_id));
                }
            }
            v.camera.validate()?;
            if norm(v.camera.target) != 0.0 || !(norm(v.camera.position) > 0.0) {
                return bad(format!("{}: camera for {} must look at the origin from a positive distance", s.scene_id, v.image));
            }
        }
    }
    Ok(())
}

pub fn load_view<T: Real>(root: &Path, v: &ViewRecord) -> Result<ViewTarget<T>> {
    let rgb = Image::load(&root.join(&v.image), false)?;
    let mask = Image::load(&root.join(&v.silhouette), true)?;
    if (rgb.width, rgb.height) != (v.camera.width, v.camera.height) {
        return Err(Error::dim("view image", &[rgb.height, rgb.width], &[v.camera.height, v.camera.width]));
    }
    Ok(ViewTarget {
        camera: v.camera.clone(),
        rgb: rgb.to_tensor(),
        mask: mask.to_tensor(),
    })
}

/// Training views (with backbone features of the reference image) and the
/// held-out views of one manifest sample.
pub fn load_sample<T: Real>(
    manifest: &DatasetManifest,
    root: &Path,
    index: usize,
    weights: &ModelWeights<T>,
) -> Result<(TrainingSample<T>, Vec<ViewTarget<T>>)> {
    let s = manifest
        .samples
        .get(index)
        .ok_or_else(|| Error::contract(format!("sample {index} out of range")))?;
    let mut views = Vec::new();
    let mut held_out = Vec::new();
    let mut reference = None;
    for v in &s.views {
        let target = load_view(root, v)?;
        if v.held_out {
            held_out.push(target);
        } else {
            if v.reference {
                reference = Some((views.len(), root.join(&v.image)));
            }
            views.push(target);
        }
    }
    let (reference, path) = reference.ok_or_else(|| Error::contract(format!("{} has no reference view", s.scene_id)))?;
    let features = reference_features(&path, weights)?;
    Ok((
        TrainingSample {
            features,
            views,
            reference,
            reference_triplane: None,
        },
        held_out,
    ))
}

fn reference_features<T: Real>(path: &PathBuf, weights: &ModelWeights<T>) -> Result<crate::encode::ImageFeatureSet<T>> {
    let image = Image::load(path, false)?;
    let size = weights.config.image_size;
    if image.width != size || image.height != size {
        return Err(Error::dim("reference image", &[image.height, image.width], &[size, size])).stage("encode");
    }
    extract_image_features(&image, &weights.extractor()?).stage("encode")
}
