use headsplat::imageio::Image;
use headsplat::raster::camera::{norm, normalize, sub};
use headsplat::raster::GaussianCloud;
use headsplat::synthdata::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[test]
fn radius_and_fov_statistics_match_the_sampler_spec() {
    let spec = CameraSamplerSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws: Vec<CameraSample> = (0..100_000).map(|i| sample_camera(&spec, i, &mut rng).unwrap()).collect();
    let (rm, rs) = mean_sd(&draws.iter().map(|d| d.radius).collect::<Vec<_>>());
    let (fm, fs) = mean_sd(&draws.iter().map(|d| d.fov).collect::<Vec<_>>());
    assert!((rm - 2.7).abs() / 2.7 < 0.01, "radius mean {rm}");
    assert!((rs - 0.1).abs() / 0.1 < 0.01 || (rs - 0.1).abs() < 0.001, "radius sd {rs}");
    assert!((fm - 18.83).abs() / 18.83 < 0.01, "fov mean {fm}");
    assert!((fs - 1.0).abs() < 0.01, "fov sd {fs}");
    assert!(draws.iter().all(|d| d.yaw.abs() <= 36.0 && d.pitch.abs() <= 26.0));
}

#[test]
fn equatorial_mode_is_evenly_spaced_at_zero_pitch() {
    let spec = CameraSamplerSpec::with_mode(CameraMode::Equatorial8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let yaws: Vec<f64> = (0..8).map(|i| sample_camera(&spec, i, &mut rng).unwrap().yaw).collect();
    assert_eq!(yaws, vec![0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0]);
    let pitches: Vec<f64> = (0..8).map(|i| sample_camera(&spec, i, &mut rng).unwrap().pitch).collect();
    assert!(pitches.iter().all(|&p| p == 0.0));
}

#[test]
fn random_360_starts_with_the_ring_then_covers_the_circle() {
    let spec = CameraSamplerSpec::with_mode(CameraMode::Random360);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws: Vec<CameraSample> = (0..EQUATORIAL_VIEWS + 2000).map(|i| sample_camera(&spec, i, &mut rng).unwrap()).collect();
    for (i, d) in draws.iter().take(EQUATORIAL_VIEWS).enumerate() {
        assert_eq!(d.yaw, 45.0 * i as f64);
    }
    let rest = &draws[EQUATORIAL_VIEWS..];
    assert!(rest.iter().all(|d| (0.0..360.0).contains(&d.yaw) && d.pitch.abs() <= 26.0));
    assert!(rest.iter().any(|d| d.yaw > 300.0) && rest.iter().any(|d| d.yaw < 60.0));
}

#[test]
fn fov_conversion_examples() {
    assert!((focal_from_fov(90.0, 64) - 32.0).abs() < 1e-12);
    let f = focal_from_fov(18.83, 64);
    assert!((f - 64.0 / (2.0 * (18.83f64.to_radians() / 2.0).tan())).abs() < 1e-12);
}

#[test]
fn invalid_sampler_specs_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for spec in [
        CameraSamplerSpec { radius_sd: -1.0, ..Default::default() },
        CameraSamplerSpec { fov_mean: 0.0, ..Default::default() },
        CameraSamplerSpec { pitch_range: 100.0, ..Default::default() },
    ] {
        assert!(sample_camera(&spec, 0, &mut rng).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sampled_cameras_look_at_the_origin(seed in any::<u64>(), mode in 0usize..3, index in 0usize..40) {
        let mode = [CameraMode::FrontRange, CameraMode::Equatorial8, CameraMode::Random360][mode];
        let spec = CameraSamplerSpec::with_mode(mode);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sample_camera(&spec, index, &mut rng).unwrap();
        let cam = s.camera(32, 32);
        cam.validate().unwrap();
        prop_assert!((norm(cam.position) - s.radius).abs() < 1e-9);
        let to_origin = normalize(sub([0.0; 3], cam.position));
        let f = cam.forward();
        prop_assert!((0..3).all(|i| (f[i] - to_origin[i]).abs() < 1e-12));
        prop_assert!(s.radius > 0.0);
    }

    #[test]
    fn blob_centers_stay_within_the_generator_bound(seed in any::<u64>(), blobs in 1usize..200, radius in 0.05f64..1.0) {
        let spec = SceneSpec { seed, blob_count: blobs, base_radius: radius, ..SceneSpec::default() };
        let cloud = generate_scene(&spec).unwrap();
        prop_assert_eq!(cloud.len(), blobs);
        for i in 0..blobs {
            let p = cloud.positions.row(i);
            prop_assert!(norm([p[0], p[1], p[2]]) <= 1.2 * radius);
        }
        cloud.validate().unwrap();
    }
}

#[test]
fn scenes_are_deterministic_per_seed() {
    let spec = SceneSpec { seed: 5, ..SceneSpec::default() };
    assert_eq!(generate_scene(&spec).unwrap(), generate_scene(&spec).unwrap());
    let other = SceneSpec { seed: 6, ..spec };
    assert_ne!(generate_scene(&spec).unwrap(), generate_scene(&other).unwrap());
    assert_eq!(generate_scene(&spec).unwrap().len(), spec.blob_count);
}

#[test]
fn empty_scene_has_an_empty_silhouette() {
    let cam = CameraSample { yaw: 0.0, pitch: 0.0, radius: 2.7, fov: 18.83 }.camera(16, 16);
    let (rgb, mask) = render_view(&GaussianCloud::empty(3), &cam).unwrap();
    assert!(rgb.data.iter().all(|&v| v == 0.0));
    assert!(mask.data.iter().all(|&v| v == 0.0));
}

fn small_spec(seed: u64) -> DatasetSpec {
    DatasetSpec {
        seed,
        samples: 2,
        views: 6,
        held_out: 1,
        image_size: 24,
        scene: SceneSpec { blob_count: 120, ..SceneSpec::default() },
        cameras: CameraSamplerSpec::default(),
    }
}

#[test]
fn generated_dataset_validates_and_has_one_reference_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    let m = render_dataset(&small_spec(4), dir.path()).unwrap();
    validate_manifest(&m, dir.path()).unwrap();
    assert_eq!(m.samples.len(), 2);
    for s in &m.samples {
        assert_eq!(s.views.len(), 7);
        assert_eq!(s.views.iter().filter(|v| v.reference).count(), 1);
        assert_eq!(s.views.iter().filter(|v| v.held_out).count(), 1);
    }
    let loaded = DatasetManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded, m);
}

#[test]
fn dataset_generation_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    render_dataset(&small_spec(7), a.path()).unwrap();
    render_dataset(&small_spec(7), b.path()).unwrap();
    let mut files: Vec<_> = walk(a.path());
    files.sort();
    assert!(files.len() > 10);
    for rel in files {
        assert_eq!(std::fs::read(a.path().join(&rel)).unwrap(), std::fs::read(b.path().join(&rel)).unwrap(), "{rel:?}");
    }
}

fn walk(root: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out
}

#[test]
fn rerendering_a_stored_camera_reproduces_the_stored_image() {
    let dir = tempfile::tempdir().unwrap();
    let m = render_dataset(&small_spec(9), dir.path()).unwrap();
    let stored = DatasetManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
    for s in &stored.samples {
        let cloud = generate_scene(&s.scene).unwrap();
        for v in &s.views {
            let (rgb, mask) = render_view(&cloud, &v.camera).unwrap();
            let on_disk = Image::load(&dir.path().join(&v.image), false).unwrap();
            assert_eq!(rgb.to_bytes_u8(), on_disk.to_bytes_u8());
            let mask_disk = Image::load(&dir.path().join(&v.silhouette), true).unwrap();
            assert_eq!(mask.to_bytes_u8(), mask_disk.to_bytes_u8());
            assert_eq!(v.pose.camera(v.camera.width, v.camera.height), v.camera);
        }
    }
    assert_eq!(stored, m);
}

#[test]
fn validator_catches_missing_or_modified_files_and_bad_reference_flags() {
    let dir = tempfile::tempdir().unwrap();
    let m = render_dataset(&small_spec(1), dir.path()).unwrap();

    let mut two_refs = m.clone();
    for v in &mut two_refs.samples[0].views {
        v.reference = !v.held_out;
    }
    assert!(validate_manifest(&two_refs, dir.path()).is_err());

    let mut off_target = m.clone();
    off_target.samples[1].views[0].camera.target = [0.1, 0.0, 0.0];
    assert!(validate_manifest(&off_target, dir.path()).is_err());

    let image = dir.path().join(&m.samples[0].views[1].image);
    let mut bytes = std::fs::read(&image).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x01;
    std::fs::write(&image, &bytes).unwrap();
    let err = validate_manifest(&m, dir.path()).unwrap_err();
    assert!(err.to_string().contains("checksum"), "{err}");
    bytes[last] ^= 0x01;
    std::fs::write(&image, &bytes).unwrap();
    validate_manifest(&m, dir.path()).unwrap();

    std::fs::remove_file(dir.path().join(&m.samples[1].views[2].silhouette)).unwrap();
    let err = validate_manifest(&m, dir.path()).unwrap_err();
    assert!(err.to_string().contains("missing file"), "{err}");
}

#[test]
fn random_360_datasets_draw_from_the_view_pool() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec {
        cameras: CameraSamplerSpec::with_mode(CameraMode::Random360),
        samples: 1,
        ..small_spec(2)
    };
    let m = render_dataset(&spec, dir.path()).unwrap();
    validate_manifest(&m, dir.path()).unwrap();
    let too_many = DatasetSpec { views: 40, ..spec };
    assert!(render_dataset(&too_many, dir.path()).is_err());
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, b"x").unwrap();
    let err = render_dataset(&small_spec(0), &file.join("sub")).unwrap_err();
    assert!(matches!(err, headsplat::Error::Io(_)), "{err:?}");
}
