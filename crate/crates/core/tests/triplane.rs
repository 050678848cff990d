mod common;

use common::*;
use std::f64::consts::PI;
use std::rc::Rc;

use headsplat::nn::gradcheck::{max_relative_error, numeric_gradient};
use headsplat::nn::{AttentionBlockWeights, LinearWeights, MlpWeights, Tape, Tensor};
use headsplat::raster::{rasterize, Camera, GaussianCloud};
use headsplat::triplane::*;
use headsplat::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LAYOUT: TriplaneLayout = TriplaneLayout {
    height: 5,
    width: 7,
    r_max: 1.5,
};

#[test]
fn spherical_coord_examples() {
    let c = spherical_coords([0.0, 0.0, 2.0], 2.0);
    assert_eq!((c.r, c.theta, c.phi, c.clamped), (1.0, 0.0, 0.0, false));
    let c = spherical_coords([0.0, 1.0, 0.0], 2.0);
    assert!((c.r - 0.5).abs() < 1e-15 && (c.theta - 0.5).abs() < 1e-15 && (c.phi - 0.25).abs() < 1e-15);
    let c = spherical_coords([0.0; 3], 2.0);
    assert_eq!((c.r, c.theta, c.phi), (0.0, 0.5, 0.0));
    let c = spherical_coords([3.0, 0.0, 0.0], 2.0);
    assert!(c.clamped);
    assert_eq!(c.r, 1.0);
    let c = spherical_coords([1.0, -1e-300, 0.0], 2.0);
    assert!(c.phi < 1.0);
}

#[test]
fn spherical_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.8..0.8));
        let jac = spherical_jacobian(p, 1.5);
        for a in 0..3 {
            let h = 1e-6;
            let mut pp = p;
            let mut pm = p;
            pp[a] += h;
            pm[a] -= h;
            let (cp, cm) = (spherical_coords(pp, 1.5), spherical_coords(pm, 1.5));
            let mut dphi = cp.phi - cm.phi;
            if dphi > 0.5 {
                dphi -= 1.0;
            } else if dphi < -0.5 {
                dphi += 1.0;
            }
            let num = [(cp.r - cm.r) / (2.0 * h), (cp.theta - cm.theta) / (2.0 * h), dphi / (2.0 * h)];
            for k in 0..3 {
                assert!((jac[k][a] - num[k]).abs() < 1e-6 * (1.0 + num[k].abs()), "{k} {a}");
            }
        }
    }
}

#[test]
fn constant_planes_give_six_times_value() {
    let tri = SphericalTriplane::constant(LAYOUT, 4, 0.75f64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        for v in tri.sample(p) {
            assert!((v - 4.5).abs() < 1e-12);
        }
    }
}

#[test]
fn texel_center_query_returns_texel_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Use a square grid so one (r, θ, φ) lands on texel centers everywhere.
    let layout = TriplaneLayout {
        height: 6,
        width: 6,
        r_max: 1.0,
    };
    let tri = random_triplane(&mut rng, layout, 3);
    let (ir, it, ip) = (2usize, 3usize, 1usize);
    let c = SphericalCoords {
        r: (ir as f64 + 0.5) / 6.0,
        theta: (it as f64 + 0.5) / 6.0,
        phi: (ip as f64 + 0.5) / 6.0,
        clamped: false,
    };
    let got = tri.sample_coords(&c);
    let texels = [(0, it, ip), (1, it, ir), (2, ip, ir)];
    for k in 0..3 {
        let want: f64 = texels
            .iter()
            .map(|&(pl, r, col)| (0..SLICES).map(|s| tri.texel(pl, s, r, col)[k]).sum::<f64>())
            .sum();
        assert!((got[k] - want).abs() < 1e-12);
    }
    // Same through a 3D point.
    let p = spherical_to_point(c.r, c.theta, c.phi, 1.0);
    let via_point = tri.sample(p);
    for k in 0..3 {
        assert!((via_point[k] - got[k]).abs() < 1e-9);
    }
}

#[test]
fn phi_wraps() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tri = random_triplane(&mut rng, LAYOUT, 5);
    for _ in 0..20 {
        let (r, t) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let a = tri.sample_coords(&SphericalCoords {
            r,
            theta: t,
            phi: 0.0,
            clamped: false,
        });
        let b = tri.sample_coords(&SphericalCoords {
            r,
            theta: t,
            phi: 1.0,
            clamped: false,
        });
        assert_eq!(a, b);
    }
}

#[test]
fn triplane_validation() {
    assert!(matches!(
        SphericalTriplane::new(LAYOUT, Tensor::<f64>::zeros(&[10, 2])),
        Err(Error::Dimension { .. })
    ));
    let mut t = Tensor::<f64>::zeros(&[LAYOUT.token_count(), 2]);
    t.data_mut()[7] = f64::NAN;
    assert!(matches!(SphericalTriplane::new(LAYOUT, t), Err(Error::NonFinite { .. })));
    let big = TriplaneLayout {
        height: 64,
        width: 64,
        r_max: 1.0,
    };
    assert_eq!(big.token_count(), 24576);
}

#[test]
fn sample_var_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tri = random_triplane(&mut rng, LAYOUT, 3);
    let pts = Tensor::from_fn(&[6, 3], |_| rng.random_range(-0.9..0.9));
    let probe = Tensor::randn(&[6, 3], 1.0, &mut rng);
    let run = |tokens: &Tensor<f64>, pts: &Tensor<f64>| -> (f64, Tensor<f64>, Tensor<f64>) {
        let mut tape = Tape::new();
        let t = tape.param(tokens.clone());
        let p = tape.param(pts.clone());
        let s = sample_var(&mut tape, t, p, LAYOUT).unwrap();
        let w = tape.constant(probe.clone());
        let m = tape.mul(s, w).unwrap();
        let l = tape.sum(m);
        let v = tape.value(l).data()[0];
        let g = tape.backward(l).unwrap();
        (v, g.get(t), g.get(p))
    };
    let (_, gt, gp) = run(&tri.tokens, &pts);
    let nt = numeric_gradient(&mut |t| run(t, &pts).0, &tri.tokens, 1e-6);
    let np = numeric_gradient(&mut |p| run(&tri.tokens, p).0, &pts, 1e-6);
    assert!(max_relative_error(&gt, &nt, 1e-6) < 1e-6);
    assert!(max_relative_error(&gp, &np, 1e-4) < 1e-4, "{gp:?} {np:?}");
    let (direct, _) = tri.sample_points(&pts).unwrap();
    let mut tape = Tape::new();
    let t = tape.constant(tri.tokens.clone());
    let p = tape.constant(pts.clone());
    let s = sample_var(&mut tape, t, p, LAYOUT).unwrap();
    assert_eq!(tape.value(s), &direct);
}

#[test]
fn rig_and_camera_choice() {
    let rig = VirtualCameraRig::default();
    assert_eq!(rig.cameras().len(), 4);
    for c in rig.cameras() {
        assert!((headsplat::raster::camera::norm(c.position) - RIG_RADIUS).abs() < 1e-12);
        assert_eq!(c.target, [0.0; 3]);
    }
    assert_eq!(rig.choose([0.0, 0.0, 1.0]), 0);
    assert_eq!(rig.choose([1.0, 0.2, 0.1]), 1);
    assert_eq!(rig.choose([0.0, 0.5, -1.0]), 2);
    assert_eq!(rig.choose([-1.0, 0.0, 0.0]), 3);
    // Exactly between cameras 0 and 1: lowest index wins.
    assert_eq!(rig.choose([1.0, 0.0, 1.0]), 0);
    assert_eq!(rig.choose([0.0; 3]), 0);
    assert!(VirtualCameraRig::new(rig.cameras()[..3].to_vec()).is_err());
}

#[test]
fn ray_sample_examples() {
    let p = [0.1, 0.2, 0.3];
    assert_eq!(ray_samples(p, [0.0, 0.0, 2.7], 1, 0.01).unwrap(), vec![p]);
    let s = ray_samples(p, [0.0, 0.0, 2.7], 32, 0.01).unwrap();
    assert_eq!(s.len(), 32);
    // Nearest first.
    let d = |q: [f64; 3]| headsplat::raster::camera::norm([q[0], q[1], q[2] - 2.7]);
    assert!(s.windows(2).all(|w| d(w[0]) < d(w[1])));
    assert!(ray_samples(p, [0.0; 3], 0, 0.01).is_err());
    assert!(ray_samples(p, [0.0; 3], 3, 0.0).is_err());
}

#[test]
fn ray_samples_var_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pts = Tensor::from_fn(&[4, 3], |_| rng.random_range(-0.5..0.5));
    let origins = Rc::new(vec![[0.0, 0.0, 2.7], [2.7, 0.0, 0.0], [0.0, 0.0, -2.7], [-2.7, 0.0, 0.0]]);
    let probe = Tensor::randn(&[20, 3], 1.0, &mut rng);
    let run = |pts: &Tensor<f64>| -> (f64, Tensor<f64>) {
        let mut tape = Tape::new();
        let p = tape.param(pts.clone());
        let s = ray_samples_var(&mut tape, p, origins.clone(), 5, 0.05).unwrap();
        let w = tape.constant(probe.clone());
        let m = tape.mul(s, w).unwrap();
        let l = tape.sum(m);
        let v = tape.value(l).data()[0];
        (v, tape.backward(l).unwrap().get(p))
    };
    let (_, g) = run(&pts);
    let n = numeric_gradient(&mut |p| run(p).0, &pts, 1e-6);
    assert!(max_relative_error(&g, &n, 1e-6) < 1e-6);
}

fn gelu_ref(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

fn dense_ref(x: &[f64], l: &LinearWeights<f64>) -> Vec<f64> {
    (0..l.fan_out())
        .map(|o| l.b.data()[o] + x.iter().enumerate().map(|(i, v)| v * l.w.data()[i * l.fan_out() + o]).sum::<f64>())
        .collect()
}

#[test]
fn aggregate_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w1 = AggregatorWeights::<f64>::random(1, 0.01, 4, 6, &mut rng).unwrap();
    let s = Tensor::randn(&[1, 4], 1.0, &mut rng);
    assert_eq!(aggregate(&s, &w1).unwrap(), w1.mlp.eval(&s, headsplat::nn::Activation::Gelu).unwrap());

    let mut zero = AggregatorWeights::<f64>::random(3, 0.01, 4, 6, &mut rng).unwrap();
    for l in &mut zero.mlp.layers {
        l.w = Tensor::zeros(l.w.shape());
    }
    let out = aggregate(&Tensor::randn(&[3, 4], 5.0, &mut rng), &zero).unwrap();
    assert_eq!(out.data(), zero.mlp.layers[1].b.data());

    assert!(matches!(aggregate(&Tensor::zeros(&[2, 4]), &zero), Err(Error::Dimension { .. })));
}

#[test]
fn fixed_weight_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = Tensor::<f64>::randn(&[9, 3], 1.0, &mut rng);
    let wide = fixed_weight_aggregate(&s, 1e6).unwrap();
    for k in 0..3 {
        let mean: f64 = (0..9).map(|j| s.row(j)[k]).sum::<f64>() / 9.0;
        assert!((wide.data()[k] - mean).abs() < 1e-6);
    }
    let narrow = fixed_weight_aggregate(&s, 1e-6).unwrap();
    assert_eq!(narrow.data(), s.row(4));
    assert!(fixed_weight_aggregate(&s, 0.0).is_err());
}

#[test]
fn refine_identity_and_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let layout = TriplaneLayout {
        height: 2,
        width: 3,
        r_max: 1.0,
    };
    let c = 8;
    let tokens = Tensor::randn(&[layout.token_count(), c], 1.0, &mut rng);
    let image = Tensor::randn(&[10, c], 1.0, &mut rng);
    // relu(x) − relu(−x) realizes the identity.
    let mut proj = MlpWeights::<f64>::zeros(&[c, 2 * c, c]);
    for k in 0..c {
        proj.layers[0].w.data_mut()[k * 2 * c + k] = 1.0;
        proj.layers[0].w.data_mut()[k * 2 * c + c + k] = -1.0;
        proj.layers[1].w.data_mut()[k * c + k] = 1.0;
        proj.layers[1].w.data_mut()[(c + k) * c + k] = -1.0;
    }
    let zero_stack = vec![AttentionBlockWeights::zeros(c, 2).unwrap(); 2];
    let tri = refine_triplane_tokens(&tokens, &image, &zero_stack, &proj, layout).unwrap();
    assert!(tri.tokens.max_abs_diff(&tokens) < 1e-12);

    let stack: Vec<_> = (0..2).map(|_| AttentionBlockWeights::random(c, 2, &mut rng).unwrap()).collect();
    let tri = refine_triplane_tokens(&tokens, &image, &stack, &proj, layout).unwrap();
    let step1 = headsplat::nn::cross_attention(&tokens, &image, &stack[0]).unwrap();
    let step2 = headsplat::nn::cross_attention(&step1, &image, &stack[1]).unwrap();
    assert_eq!(tri.tokens, proj.eval(&step2, headsplat::nn::Activation::Relu).unwrap());

    let short = Tensor::randn(&[5, c], 1.0, &mut rng);
    assert!(matches!(
        refine_triplane_tokens(&short, &image, &stack, &proj, layout),
        Err(Error::Dimension { .. })
    ));
}

fn two_point_cloud(channels: usize, rng: &mut ChaCha8Rng) -> GaussianCloud<f64> {
    GaussianCloud::new(
        Tensor::new(&[2, 3], vec![0.05, 0.0, 0.1, -0.05, 0.02, -0.1]).unwrap(),
        Tensor::from_fn(&[2, channels], |_| rng.random_range(0.0..1.0)),
        Tensor::new(&[2, 1], vec![0.7, 0.6]).unwrap(),
        Tensor::new(&[2, 3], vec![0.1, 0.08, 0.05, 0.07, 0.12, 0.05]).unwrap(),
        Tensor::new(&[2, 4], vec![1.0, 0.0, 0.0, 0.0, 0.9, 0.1, 0.3, 0.0]).unwrap(),
    )
    .unwrap()
}

#[test]
fn feature_render_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cam = Camera::look_at([0.0, 0.0, 3.0], [0.0; 3], 30.0, 24, 24);
    let mut cloud = two_point_cloud(3, &mut rng);
    cloud.opacity.data_mut()[0] = 1.0;
    let single = GaussianCloud::new(
        cloud.positions.select_rows(&[0]),
        cloud.colors.select_rows(&[0]),
        cloud.opacity.select_rows(&[0]),
        cloud.scales.select_rows(&[0]),
        cloud.rotations.select_rows(&[0]),
    )
    .unwrap();
    let feat = render_feature_image(&single, &single.colors, &cam).unwrap();
    let rgb = decode_to_rgb(&feat, &FeatureDecoderWeights::identity(3)).unwrap();
    let direct = rasterize(&single, &cam, &[0.0; 3]).unwrap().color_tensor::<f64>();
    assert!(rgb.max_abs_diff(&direct) < 1e-12);

    let dec = FeatureDecoderWeights::<f64>::random(5, 8, &mut rng);
    let zeros = render_feature_image(&cloud, &Tensor::zeros(&[2, 5]), &cam).unwrap();
    let out = decode_to_rgb(&zeros, &dec).unwrap();
    let bias = dec.mlp.eval(&Tensor::zeros(&[1, 5]), headsplat::nn::Activation::Relu).unwrap();
    for p in 0..24 * 24 {
        assert_eq!(out.row(p), bias.data());
    }
    assert!(decode_to_rgb(&zeros, &FeatureDecoderWeights::identity(3)).is_err());
}

#[test]
fn query_var_shapes_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tri = random_triplane(&mut rng, LAYOUT, 2);
    let rig = VirtualCameraRig::default();
    let agg = AggregatorWeights::<f64>::random(3, 0.05, 2, 4, &mut rng).unwrap();
    let pts = Tensor::from_fn(&[5, 3], |_| rng.random_range(-0.7..0.7));
    for mode in [RayMode::Nearest, RayMode::Average] {
        let run = |tokens: &Tensor<f64>| -> (f64, Tensor<f64>) {
            let mut tape = Tape::new();
            let t = tape.param(tokens.clone());
            let p = tape.constant(pts.clone());
            let a = AggregatorVars::bind(&agg, &mut tape, false);
            let q = query_var(&mut tape, t, LAYOUT, p, &rig, &a, mode).unwrap();
            assert_eq!(tape.shape(q), &[5, 4]);
            let l = tape.sum(q);
            let v = tape.value(l).data()[0];
            (v, tape.backward(l).unwrap().get(t))
        };
        let (_, g) = run(&tri.tokens);
        let n = numeric_gradient(&mut |t| run(t).0, &tri.tokens, 1e-6);
        assert!(max_relative_error(&g, &n, 1e-6) < 1e-5);
    }
    // Nearest mode equals the explicit sample → concat → MLP path.
    let mut tape = Tape::new();
    let t = tape.constant(tri.tokens.clone());
    let p = tape.constant(pts.clone());
    let a = AggregatorVars::bind(&agg, &mut tape, false);
    let q = query_var(&mut tape, t, LAYOUT, p, &rig, &a, RayMode::Nearest).unwrap();
    for i in 0..5 {
        let r = pts.row(i);
        let pi = [r[0], r[1], r[2]];
        let origin = rig.cameras()[rig.choose(pi)].position;
        let rows: Vec<Vec<f64>> = ray_samples(pi, origin, 3, 0.05).unwrap().into_iter().map(|s| tri.sample(head_to_triplane(s))).collect();
        let want = aggregate(&Tensor::from_rows(&rows).unwrap(), &agg).unwrap();
        let got = tape.value(q).row(i);
        for k in 0..4 {
            assert!((got[k] - want.data()[k]).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sample_matches_tent_oracle(seed in any::<u64>(), x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tri = random_triplane(&mut rng, LAYOUT, 3);
        let p = [x, y, z];
        let got = tri.sample(p);
        let want = tent_sample(&tri, &spherical_coords(p, LAYOUT.r_max));
        for k in 0..3 {
            prop_assert!((got[k] - want[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_is_continuous(seed in any::<u64>(), x in -1.4f64..1.4, y in -1.4f64..1.4, z in -1.4f64..1.4, dir in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tri = SphericalTriplane::new(LAYOUT, Tensor::from_fn(&[LAYOUT.token_count(), 2], |_| rng.random_range(-1.0f64..1.0))).unwrap();
        let mut q = [x, y, z];
        q[dir] += 1e-9;
        let (a, b) = (tri.sample([x, y, z]), tri.sample(q));
        for k in 0..2 {
            prop_assert!((a[k] - b[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn spherical_round_trip(r in 0.01f64..1.0, theta in 0.001f64..0.999, phi in 0.0f64..1.0) {
        let p = spherical_to_point(r, theta, phi, 2.0);
        let c = spherical_coords(p, 2.0);
        prop_assert!((c.r - r).abs() < 1e-10);
        prop_assert!((c.theta - theta).abs() < 1e-10);
        let dphi = (c.phi - phi).abs();
        prop_assert!(dphi.min(1.0 - dphi) < 1e-10);
        let back = spherical_to_point(c.r, c.theta, c.phi, 2.0);
        for i in 0..3 {
            prop_assert!((back[i] - p[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn ray_samples_are_centered_and_collinear(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0, k in 1usize..40, cam in 0usize..4) {
        let rig = VirtualCameraRig::default();
        let p = [x, y, z];
        let s = ray_samples(p, rig.cameras()[cam].position, k, 0.01).unwrap();
        for a in 0..3 {
            let mean: f64 = s.iter().map(|q| q[a]).sum::<f64>() / k as f64;
            prop_assert!((mean - p[a]).abs() < 1e-12);
        }
        let seg: Vec<[f64; 3]> = s.windows(2).map(|w| std::array::from_fn(|a| w[1][a] - w[0][a])).collect();
        for w in seg.windows(2) {
            let c = headsplat::raster::camera::cross(w[0], w[1]);
            prop_assert!(headsplat::raster::camera::norm(c) < 1e-10);
        }
    }

    #[test]
    fn aggregate_matches_concat_matmul(seed in any::<u64>(), k in 1usize..6, c in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = AggregatorWeights::<f64>::random(k, 0.01, c, 7, &mut rng).unwrap();
        let s = Tensor::randn(&[k, c], 1.0, &mut rng);
        let got = aggregate(&s, &w).unwrap();
        let flat: Vec<f64> = (0..k).flat_map(|j| s.row(j).to_vec()).collect();
        let h: Vec<f64> = dense_ref(&flat, &w.mlp.layers[0]).into_iter().map(gelu_ref).collect();
        let want = dense_ref(&h, &w.mlp.layers[1]);
        for i in 0..7 {
            prop_assert!((got.data()[i] - want[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn fixed_weights_match_normal_pdf(k in 1usize..40, sigma in 0.2f64..20.0) {
        let w = gaussian_weights(k, sigma).unwrap();
        let center = (k as f64 - 1.0) / 2.0;
        let pdf: Vec<f64> = (0..k)
            .map(|j| (-0.5 * ((j as f64 - center) / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt()))
            .collect();
        let total: f64 = pdf.iter().sum();
        for j in 0..k {
            prop_assert!((w[j] - pdf[j] / total).abs() < 1e-12);
        }
    }

    /// Two Gaussians carrying 5 feature channels against a per-pixel
    /// compositing loop.
    #[test]
    fn feature_image_matches_compositing_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = two_point_cloud(5, &mut rng);
        let cam = Camera::look_at([0.0, 0.0, 3.0], [0.0; 3], 30.0, 12, 12);
        let img = render_feature_image(&cloud, &cloud.colors, &cam).unwrap();
        let rot = cam.rotation();
        let mut order = Vec::new();
        for i in 0..2 {
            let r = |t: &Tensor<f64>| [t.row(i)[0], t.row(i)[1], t.row(i)[2]];
            let q = cloud.rotations.row(i);
            let mut s = false;
            let p = headsplat::raster::project(r(&cloud.positions), r(&cloud.scales), [q[0], q[1], q[2], q[3]], &cam, &rot, &mut s).unwrap();
            order.push((p.depth, i, p));
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        for py in 0..12 {
            for px in 0..12 {
                let mut t = 1.0f64;
                let mut acc = [0.0f64; 5];
                for (_, i, p) in &order {
                    let (dx, dy) = (px as f64 + 0.5 - p.mean[0], py as f64 + 0.5 - p.mean[1]);
                    let q = p.conic[0] * dx * dx + 2.0 * p.conic[1] * dx * dy + p.conic[2] * dy * dy;
                    if q > 9.0 {
                        continue;
                    }
                    let a = cloud.opacity.row(*i)[0] * (-0.5 * q).exp();
                    for k in 0..5 {
                        acc[k] += a * t * cloud.colors.row(*i)[k];
                    }
                    t *= 1.0 - a;
                }
                for k in 0..5 {
                    prop_assert!((img.row(py * 12 + px)[k] - acc[k]).abs() < 1e-6);
                }
            }
        }
    }
}
