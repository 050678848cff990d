use headsplat::bench::*;
use headsplat::pipeline::ModelConfig;
use proptest::prelude::*;

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

/// One density bump with constant color (0.5, 0.9, 0.1).
fn bump(center: f64, width: f64, amplitude: f64) -> RayField {
    RayField {
        bumps: vec![Bump {
            center,
            width,
            amplitude,
        }],
        color: [(0.0, 0.0), (0.0, std::f64::consts::FRAC_PI_2), (0.0, -std::f64::consts::FRAC_PI_2)],
        query: center,
    }
}

#[test]
fn marching_matches_the_closed_form_for_constant_color() {
    // Optical depth of a Gaussian bump over the whole line is
    // amplitude · width · √(2π); with constant color the rendered value is
    // color · (1 − e^{−depth}).
    let f = bump(0.1, 0.03, 20.0);
    let depth = 20.0 * 0.03 * (2.0 * std::f64::consts::PI).sqrt();
    let (rgb, w) = march(&f, -0.5, 0.7, 20000).unwrap();
    let coverage = 1.0 - (-depth).exp();
    let want = [0.5, 0.9, 0.1].map(|c| c * coverage);
    for k in 0..3 {
        assert!((rgb[k] - want[k]).abs() < 1e-6, "{k}: {} vs {}", rgb[k], want[k]);
    }
    assert!((w.iter().sum::<f64>() - coverage).abs() < 1e-9);
}

#[test]
fn marching_rejects_empty_intervals() {
    let f = bump(0.0, 0.1, 1.0);
    assert!(march(&f, 0.5, 0.5, 10).is_err());
    assert!(march(&f, 0.0, 1.0, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn marching_weights_are_a_partition_of_coverage(seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let f = RayField::random(&mut rng);
        let (rgb, w) = march(&f, -0.6, 0.9, 512).unwrap();
        let total: f64 = w.iter().sum();
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!(total <= 1.0 + 1e-12);
        for c in rgb {
            prop_assert!(c >= 0.0 && c <= total * 0.9 + 1e-12);
        }
    }
}

#[test]
fn small_aggregation_bench_is_deterministic() {
    let spec = AggBenchSpec {
        train_rays: 64,
        test_rays: 32,
        samples: 8,
        hidden: 8,
        steps: 20,
        march_steps: 256,
        ..AggBenchSpec::default()
    };
    let a = run_agg_bench(&spec, &headsplat::bench::Strategy::ablation()).unwrap();
    let b = run_agg_bench(&spec, &headsplat::bench::Strategy::ablation()).unwrap();
    assert_eq!(a, b);
    let names: Vec<_> = a.results.iter().map(|r| r.strategy.as_str()).collect();
    assert_eq!(names, ["single", "sigma_1", "sigma_10", "mlp"]);
    assert_eq!(a.results[0].samples, 1);
    assert!(a.results.iter().all(|r| r.test_mse.is_finite() && r.test_mse >= 0.0));
    assert!(a.mean_weight_peaks >= 1.0);
    let json = serde_json::to_string(&a).unwrap();
    assert!(json.contains("\"strategy\":\"mlp\""));
}

#[test]
fn tiled_and_naive_renderers_agree_on_a_small_scene() {
    let case = raster_case(300, 48, 5).unwrap();
    assert!(case.max_deviation < 1e-9, "{}", case.max_deviation);
    assert_eq!((case.gaussians, case.resolution), (300, 48));
}

#[test]
fn random_clouds_stay_in_the_unit_ball() {
    let c = random_cloud(500, 1).unwrap();
    for i in 0..500 {
        let p = c.positions.row(i);
        assert!(p.iter().map(|v| v * v).sum::<f64>() <= 0.25);
    }
}

#[test]
fn both_point_branch_paths_produce_dense_features() {
    let cfg = ModelConfig::micro();
    let r = run_c2f_bench(&cfg, 0, 1).unwrap();
    assert_eq!(r.output_shape, [r.dense_count, cfg.width]);
    assert!(r.direct.attended > r.coarse_to_fine.attended);
    assert!(r.memory_ratio.is_some());
}
