mod common;

use common::*;
use headsplat::nn::gradcheck::{max_relative_error, numeric_gradient};
use headsplat::nn::{cross_attention, AttentionBlockWeights, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

// ------------------------------------------------------------------ oracles

fn matmul_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i][j] += a.at(i, p) * b.at(p, j);
            }
        }
    }
    out
}

// ------------------------------------------------------------------ linear

#[test]
fn linear_identity_and_hand_sum() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 2], &[2.0, 3.0]));
    let w = tape.constant(Tensor::identity(2));
    let b = tape.constant(Tensor::zeros(&[2]));
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[2.0, 3.0]);

    let w = tape.constant(t(&[2, 1], &[1.0, 1.0]));
    let b = tape.constant(t(&[1], &[1.0]));
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[6.0]);
}

#[test]
fn linear_matches_triple_loop() {
    let mut r = rng(1);
    let a = Tensor::<f64>::randn(&[3, 4], 1.0, &mut r);
    let w = Tensor::<f64>::randn(&[4, 2], 1.0, &mut r);
    let mut tape = Tape::new();
    let (av, wv) = (tape.constant(a.clone()), tape.constant(w.clone()));
    let bv = tape.constant(Tensor::zeros(&[2]));
    let y = tape.linear(av, wv, bv).unwrap();
    let oracle = matmul_oracle(&a, &w);
    for i in 0..3 {
        for j in 0..2 {
            assert!((tape.value(y).at(i, j) - oracle[i][j]).abs() < 1e-12);
        }
    }
}

#[test]
fn linear_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[2, 3]));
    let w = tape.constant(Tensor::zeros(&[4, 2]));
    let b = tape.constant(Tensor::zeros(&[2]));
    let err = tape.linear(x, w, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
}

// ----------------------------------------------------------------- softmax

fn softmax_of(v: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, v.len()], v));
    let y = tape.softmax(x);
    tape.value(y).data().to_vec()
}

#[test]
fn softmax_examples() {
    for p in softmax_of(&[0.0, 0.0, 0.0]) {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    let p = softmax_of(&[0.0, 2f64.ln()]);
    assert!((p[0] - 1.0 / 3.0).abs() < 1e-15 && (p[1] - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(softmax_of(&[1000.0, 1000.0]), vec![0.5, 0.5]);
}

// --------------------------------------------------------------- attention

#[test]
fn single_key_gets_all_attention() {
    // Zero feed-forward isolates the attention sub-layer: with one key every
    // query receives exactly that key's projected value.
    let mut r = rng(2);
    let mut w = AttentionBlockWeights::<f64>::random(8, 2, &mut r).unwrap();
    w.ff1 = Tensor::zeros(w.ff1.shape());
    let kv = Tensor::randn(&[1, 8], 1.0, &mut r);
    let q1 = Tensor::randn(&[3, 8], 1.0, &mut r);
    let q2 = Tensor::randn(&[2, 8], 5.0, &mut r);
    let d1 = cross_attention(&q1, &kv, &w).unwrap().zip_map(&q1, |a, b| a - b).unwrap();
    let d2 = cross_attention(&q2, &kv, &w).unwrap().zip_map(&q2, |a, b| a - b).unwrap();
    for i in 0..3 {
        for j in 0..8 {
            assert!((d1.at(i, j) - d1.at(0, j)).abs() < 1e-12);
        }
    }
    for j in 0..8 {
        assert!((d2.at(1, j) - d1.at(0, j)).abs() < 1e-12);
    }
}

#[test]
fn zero_block_is_identity() {
    let mut r = rng(3);
    let w = AttentionBlockWeights::<f64>::zeros(8, 2).unwrap();
    let q = Tensor::randn(&[5, 8], 1.0, &mut r);
    let kv = Tensor::randn(&[4, 8], 1.0, &mut r);
    assert_eq!(cross_attention(&q, &kv, &w).unwrap(), q);
}

#[test]
fn attention_matches_explicit_loop_oracle() {
    let mut r = rng(4);
    let w = AttentionBlockWeights::<f64>::random(8, 2, &mut r).unwrap();
    let q = Tensor::randn(&[3, 8], 1.0, &mut r);
    let kv = Tensor::randn(&[4, 8], 1.0, &mut r);
    let out = cross_attention(&q, &kv, &w).unwrap();
    let oracle = attention_oracle(&q, &kv, &w);
    for i in 0..3 {
        for j in 0..8 {
            assert!((out.at(i, j) - oracle[i][j]).abs() < 1e-10);
        }
    }
}

#[test]
fn attention_rejects_channel_mismatch() {
    let mut r = rng(5);
    let w = AttentionBlockWeights::<f64>::random(8, 2, &mut r).unwrap();
    let q = Tensor::randn(&[3, 8], 1.0, &mut r);
    let kv = Tensor::randn(&[4, 6], 1.0, &mut r);
    assert!(cross_attention(&q, &kv, &w).is_err());
    assert!(AttentionBlockWeights::<f64>::random(8, 3, &mut r).is_err());
}

// ---------------------------------------------------------------- backward

#[test]
fn square_derivative() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0f64));
    let y = tape.mul(x, x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).data(), &[6.0]);
}

#[test]
fn unrelated_tensor_gets_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0f64));
    let z = tape.param(Tensor::<f64>::zeros(&[2, 2]));
    let y = tape.mul(x, x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(z), Tensor::zeros(&[2, 2]));
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::<f64>::zeros(&[2]));
    assert!(tape.backward(x).is_err());
}

/// Checks d(loss)/d(input) for a graph built by `build` on every input.
fn check_grad(
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
    tol: f64,
) {
    let run = |xs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = build(&mut tape, &vars);
        (tape, vars, out)
    };
    let (tape, vars, out) = run(inputs);
    let grads = tape.backward(out).unwrap();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v);
        let mut f = |x: &Tensor<f64>| {
            let mut xs = inputs.to_vec();
            xs[i] = x.clone();
            let (tape, _, out) = run(&xs);
            tape.value(out).data()[0]
        };
        let numeric = numeric_gradient(&mut f, &inputs[i], 1e-5);
        // Entries far below the largest gradient only carry rounding noise.
        let floor = analytic.data().iter().fold(1e-6f64, |m, v| m.max(1e-3 * v.abs()));
        let err = max_relative_error(&analytic, &numeric, floor);
        assert!(err < tol, "input {i}: relative error {err}");
    }
}

/// A fixed random projection so every op is checked against a non-trivial
/// upstream gradient.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Var {
    let shape = tape.shape(y).to_vec();
    let mut r = rng(seed);
    let p = tape.constant(Tensor::randn(&shape, 1.0, &mut r));
    let m = tape.mul(y, p).unwrap();
    tape.sum(m)
}

#[test]
fn composite_linear_softmax_sum_gradient() {
    let mut r = rng(6);
    let x = Tensor::randn(&[3, 4], 1.0, &mut r);
    let w = Tensor::randn(&[4, 5], 1.0, &mut r);
    let b = Tensor::randn(&[5], 1.0, &mut r);
    check_grad(
        &[x, w, b],
        &|tape, v| {
            let y = tape.linear(v[0], v[1], v[2]).unwrap();
            let s = tape.softmax(y);
            // Plain sum of a softmax is constant; weight it first.
            project(tape, s, 60)
        },
        1e-6,
    );
}

#[test]
fn elementwise_op_gradients() {
    let mut r = rng(7);
    let a = Tensor::randn(&[4, 3], 1.0, &mut r);
    let b = Tensor::randn(&[4, 3], 1.0, &mut r);
    type Op = fn(&mut Tape<f64>, Var, Var) -> Var;
    let ops: Vec<(&str, Op)> = vec![
        ("add", |t, a, b| t.add(a, b).unwrap()),
        ("sub", |t, a, b| t.sub(a, b).unwrap()),
        ("mul", |t, a, b| t.mul(a, b).unwrap()),
        ("sigmoid", |t, a, _| t.sigmoid(a)),
        ("tanh", |t, a, _| t.tanh(a)),
        ("gelu", |t, a, _| t.gelu(a)),
        ("exp", |t, a, _| t.exp(a)),
        ("scale", |t, a, _| t.scale(a, 2.5)),
        ("softmax", |t, a, _| t.softmax(a)),
        ("slice", |t, a, _| t.slice_cols(a, 1, 3).unwrap()),
        ("concat_cols", |t, a, b| t.concat_cols(&[a, b, a]).unwrap()),
        ("concat_rows", |t, a, b| t.concat_rows(&[b, a]).unwrap()),
        ("matmul_nt", |t, a, b| t.matmul_nt(a, b).unwrap()),
        ("reshape", |t, a, _| t.reshape(a, &[2, 6]).unwrap()),
        ("normalize", |t, a, _| t.normalize_rows(a, &[1.0, 0.0, 0.0]).unwrap()),
    ];
    for (name, op) in ops {
        eprintln!("checking {name}");
        check_grad(
            &[a.clone(), b.clone()],
            &|tape, v| {
                let y = op(tape, v[0], v[1]);
                project(tape, y, 70)
            },
            1e-5,
        );
    }
}

#[test]
fn relu_and_l1_gradients_away_from_kinks() {
    // Keep entries away from 0 so central differences do not straddle a kink.
    let a = Tensor::from_fn(&[3, 3], |i| if i % 2 == 0 { 0.5 + i as f64 * 0.1 } else { -0.4 - i as f64 * 0.1 });
    let b = Tensor::from_fn(&[3, 3], |i| (i as f64 * 0.37).sin() * 0.2);
    check_grad(
        &[a.clone(), b.clone()],
        &|tape, v| {
            let y = tape.relu(v[0]);
            project(tape, y, 80)
        },
        1e-5,
    );
    check_grad(&[a, b], &|tape, v| tape.l1_mean(v[0], v[1]).unwrap(), 1e-5);
}

#[test]
fn layer_norm_and_linear_gradients() {
    let mut r = rng(8);
    let x = Tensor::randn(&[4, 6], 1.0, &mut r);
    let g = Tensor::randn(&[6], 1.0, &mut r);
    let b = Tensor::randn(&[6], 1.0, &mut r);
    check_grad(
        &[x.clone(), g, b.clone()],
        &|tape, v| {
            let y = tape.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
            project(tape, y, 90)
        },
        1e-5,
    );
    let w = Tensor::randn(&[6, 2], 1.0, &mut r);
    let bias = Tensor::randn(&[2], 1.0, &mut r);
    check_grad(
        &[x.clone(), w.clone(), bias.clone()],
        &|tape, v| {
            let y = tape.linear(v[0], v[1], v[2]).unwrap();
            project(tape, y, 91)
        },
        1e-5,
    );
    check_grad(
        &[x, w, bias],
        &|tape, v| {
            let y = tape.matmul(v[0], v[1]).unwrap();
            let y = tape.add_row(y, v[2]).unwrap();
            project(tape, y, 92)
        },
        1e-5,
    );
}

#[test]
fn mix_rows_gradient() {
    let mut r = rng(9);
    let x = Tensor::randn(&[4, 3], 1.0, &mut r);
    let parents = std::rc::Rc::new(vec![[0u32, 1, 2], [3, 3, 0], [1, 2, 3]]);
    let weights = std::rc::Rc::new(vec![[0.2, 0.3, 0.5], [0.5, 0.25, 0.25], [1.0, 0.0, 0.0]]);
    check_grad(
        &[x],
        &|tape, v| {
            let y = tape.mix_rows(v[0], parents.clone(), weights.clone()).unwrap();
            project(tape, y, 93)
        },
        1e-5,
    );
}

#[test]
fn attention_block_gradients() {
    let mut r = rng(10);
    let w = AttentionBlockWeights::<f64>::random(4, 2, &mut r).unwrap();
    let q = Tensor::randn(&[3, 4], 1.0, &mut r);
    let kv = Tensor::randn(&[2, 4], 1.0, &mut r);
    let inputs = vec![
        q,
        kv,
        w.wq.clone(),
        w.wk.clone(),
        w.wv.clone(),
        w.wo.clone(),
        w.ff1.clone(),
        w.ff2.clone(),
        w.ln_q.0.clone(),
        w.ln_kv.1.clone(),
    ];
    check_grad(
        &inputs,
        &|tape, v| {
            let mut bw = w.bind(tape, false);
            bw.wq = v[2];
            bw.wk = v[3];
            bw.wv = v[4];
            bw.wo = v[5];
            bw.ff1 = v[6];
            bw.ff2 = v[7];
            bw.ln_q.0 = v[8];
            bw.ln_kv.1 = v[9];
            let y = headsplat::nn::cross_attention_block(tape, v[0], v[1], &bw).unwrap();
            project(tape, y, 94)
        },
        1e-5,
    );
}

// -------------------------------------------------------------- properties

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn softmax_sums_to_one(v in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = softmax_of(&v);
        let s: f64 = p.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x > 0.0 || v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min) > 700.0));
    }

    #[test]
    fn attention_matches_oracle_on_random_shapes(
        seed in 0u64..1_000_000,
        nq in 1usize..6,
        nkv in 1usize..6,
        heads in prop::sample::select(vec![1usize, 2, 4]),
    ) {
        let mut r = rng(seed);
        let w = AttentionBlockWeights::<f64>::random(8, heads, &mut r).unwrap();
        let q = Tensor::randn(&[nq, 8], 1.0, &mut r);
        let kv = Tensor::randn(&[nkv, 8], 1.0, &mut r);
        let out = cross_attention(&q, &kv, &w).unwrap();
        let oracle = attention_oracle(&q, &kv, &w);
        for i in 0..nq {
            for j in 0..8 {
                prop_assert!((out.at(i, j) - oracle[i][j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn attention_is_query_permutation_equivariant(seed in 0u64..1_000_000, shift in 1usize..5) {
        let mut r = rng(seed);
        let w = AttentionBlockWeights::<f64>::random(8, 2, &mut r).unwrap();
        let q = Tensor::randn(&[5, 8], 1.0, &mut r);
        let kv = Tensor::randn(&[3, 8], 1.0, &mut r);
        let perm: Vec<usize> = (0..5).map(|i| (i + shift) % 5).collect();
        let out = cross_attention(&q, &kv, &w).unwrap();
        let out_p = cross_attention(&q.select_rows(&perm), &kv, &w).unwrap();
        prop_assert!(out.select_rows(&perm).max_abs_diff(&out_p) < 1e-12);
    }

    #[test]
    fn linear_gradient_matches_finite_differences(seed in 0u64..1_000_000, m in 1usize..4, k in 1usize..4, n in 1usize..4) {
        let mut r = rng(seed);
        let x = Tensor::<f64>::randn(&[m, k], 1.0, &mut r);
        let w = Tensor::<f64>::randn(&[k, n], 1.0, &mut r);
        let b = Tensor::<f64>::randn(&[n], 1.0, &mut r);
        check_grad(&[x, w, b], &|tape, v| {
            let y = tape.linear(v[0], v[1], v[2]).unwrap();
            let y = tape.gelu(y);
            project(tape, y, seed)
        }, 1e-5);
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let mut r = rng(11);
    let w = AttentionBlockWeights::<f32>::random(16, 4, &mut r).unwrap();
    let q = Tensor::randn(&[40, 16], 1.0, &mut r);
    let kv = Tensor::randn(&[30, 16], 1.0, &mut r);
    let a = cross_attention(&q, &kv, &w).unwrap();
    let b = cross_attention(&q, &kv, &w).unwrap();
    assert_eq!(a, b);
}
