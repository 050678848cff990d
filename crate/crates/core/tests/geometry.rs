mod common;

use common::*;
use std::io::Write;
use std::path::Path;

use headsplat::geometry::*;
use headsplat::nn::{Tape, Tensor};
use headsplat::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TETRA: &str = "# tetrahedron
v 0 0 0
v 1 0 0
v 0 1 0
v 0 0 1
f 1 3 2
f 1 2 4
f 1 4 3
f 2 3 4
";

fn write_tmp(contents: &[u8]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(contents).unwrap();
    f
}

fn big_triangle() -> CanonicalMesh {
    CanonicalMesh::new(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        vec![[0, 1, 2]],
    )
    .unwrap()
}

#[test]
fn tetrahedron_obj_loads() {
    let f = write_tmp(TETRA.as_bytes());
    let m = load_mesh(f.path()).unwrap();
    assert_eq!(m.vertex_count(), 4);
    assert_eq!(m.faces.len(), 4);
}

#[test]
fn icosphere_counts() {
    let m = CanonicalMesh::icosphere(3, 1.0);
    // V = 10·4ⁿ + 2, F = 20·4ⁿ
    assert_eq!(m.vertex_count(), 10 * 64 + 2);
    assert_eq!(m.faces.len(), 20 * 64);
    m.validate().unwrap();
    let f = write_tmp(m.to_obj().as_bytes());
    let back = load_mesh(f.path()).unwrap();
    assert_eq!(back.vertex_count(), 642);
    assert_eq!(back.faces.len(), 1280);
}

#[test]
fn binary_mesh_round_trip() {
    let m = CanonicalMesh::icosphere(1, 0.5);
    let f = write_tmp(&m.to_binary());
    let back = load_mesh(f.path()).unwrap();
    assert_eq!(back.faces, m.faces);
    assert_eq!(back.to_binary(), m.to_binary());
}

#[test]
fn flame_template_when_available() {
    // The licensed template is not vendored; point HEADSPLAT_FLAME_OBJ at it.
    let Ok(path) = std::env::var("HEADSPLAT_FLAME_OBJ") else {
        eprintln!("HEADSPLAT_FLAME_OBJ not set; skipping");
        return;
    };
    let m = load_mesh(Path::new(&path)).unwrap();
    assert_eq!(m.vertex_count(), FLAME_VERTEX_COUNT);
}

#[test]
fn obj_errors_carry_line_numbers() {
    let missing = load_mesh(Path::new("/definitely/not/here.obj"));
    assert!(matches!(missing, Err(Error::Io(_))));

    let f = write_tmp(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 x\n");
    match load_mesh(f.path()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected parse error, got {other:?}"),
    }

    let f = write_tmp(b"v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 1 2 7\n");
    match load_mesh(f.path()) {
        Err(Error::Parse { line, msg, .. }) => {
            assert_eq!(line, 5);
            assert!(msg.contains("out of range"), "{msg}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }

    let f = write_tmp(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n");
    assert!(matches!(load_mesh(f.path()), Err(Error::Parse { line: 5, .. })));
}

#[test]
fn degenerate_face_rejected() {
    let r = CanonicalMesh::new(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
        vec![[0, 1, 2]],
    );
    assert!(matches!(r, Err(Error::Contract(_))));
}

#[test]
fn small_faces_give_identity_table() {
    let m = CanonicalMesh::icosphere(2, 1.0);
    let s = subdivide(&m, 10.0, 3).unwrap();
    assert_eq!(s.table.len(), m.vertex_count());
    assert_eq!(s.oversized, 0);
    for (i, e) in s.table.entries().iter().enumerate() {
        assert_eq!(*e, DenseEntry::identity(i as u32));
    }
}

#[test]
fn one_level_on_a_single_triangle() {
    let m = big_triangle();
    let s = subdivide(&m, 0.1, 1).unwrap();
    assert_eq!(s.table.len(), 6);
    let mut seen = Vec::new();
    for e in &s.table.entries()[3..] {
        let nonzero: Vec<usize> = (0..3).filter(|&k| e.weights[k] != 0.0).collect();
        assert_eq!(nonzero.len(), 2);
        for &k in &nonzero {
            assert_eq!(e.weights[k], 0.5);
        }
        let mut edge: Vec<u32> = nonzero.iter().map(|&k| e.parents[k]).collect();
        edge.sort();
        seen.push(edge);
    }
    seen.sort();
    assert_eq!(seen, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
    assert_eq!(s.faces.len(), 4);
    // Area 0.5 / 4 = 0.125 > 0.1, and no depth is left.
    assert_eq!(s.oversized, 4);
}

#[test]
fn threshold_must_be_positive() {
    assert!(matches!(subdivide(&big_triangle(), 0.0, 2), Err(Error::Contract(_))));
    assert!(matches!(subdivide(&big_triangle(), -1.0, 2), Err(Error::Contract(_))));
}

#[test]
fn deep_subdivision_meets_threshold_and_composes_weights() {
    let m = CanonicalMesh::icosphere(1, 1.0);
    let lambda = 0.004;
    let s = subdivide(&m, lambda, 6).unwrap();
    assert_eq!(s.oversized, 0);
    let dense = s.table.densify_points(&m.vertices).unwrap();
    for f in &s.faces {
        let a = triangle_area(dense[f[0] as usize], dense[f[1] as usize], dense[f[2] as usize]);
        assert!(a <= lambda, "implied face area {a}");
    }
    // Composed weights are relative to original vertices only.
    s.table.validate().unwrap();
    for e in s.table.entries() {
        assert!((e.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    // Deterministic construction.
    let again = subdivide(&m, lambda, 6).unwrap();
    assert_eq!(again.table, s.table);
    assert_eq!(again.faces, s.faces);
}

#[test]
fn default_area_threshold() {
    assert_eq!(DEFAULT_AREA_THRESHOLD, 2.0e-6);
}

#[test]
fn centroid_and_identity() {
    let t = DensificationTable::new(
        3,
        vec![
            DenseEntry::identity(0),
            DenseEntry::identity(1),
            DenseEntry::identity(2),
            DenseEntry {
                parents: [0, 1, 2],
                weights: [1.0 / 3.0; 3],
            },
        ],
    )
    .unwrap();
    let p = [[-0.0, 1.5, 3.0], [2.0, -7.25, 0.1], [1e-300, 4.0, -2.0]];
    let d = t.densify_points(&p).unwrap();
    for i in 0..3 {
        for k in 0..3 {
            assert_eq!(d[i][k].to_bits(), p[i][k].to_bits());
        }
    }
    for k in 0..3 {
        let c = (p[0][k] + p[1][k] + p[2][k]) / 3.0;
        assert!((d[3][k] - c).abs() < 1e-12);
    }
    assert!(matches!(t.densify_points(&p[..2]), Err(Error::Dimension { .. })));
}

#[test]
fn constant_features_stay_constant() {
    let m = CanonicalMesh::icosphere(1, 1.0);
    let s = subdivide(&m, 0.01, 3).unwrap();
    let f = Tensor::<f64>::full(&[m.vertex_count(), 5], 0.7);
    let d = s.table.densify_features(&f).unwrap();
    assert_eq!(d.rows(), s.table.len());
    for &v in d.data() {
        assert!((v - 0.7).abs() < 1e-15);
    }
    for i in 0..m.vertex_count() {
        assert_eq!(d.row(i), f.row(i));
    }
}

#[test]
fn table_binary_round_trip_and_corruption() {
    let m = CanonicalMesh::icosphere(1, 1.0);
    let t = subdivide(&m, 0.01, 3).unwrap().table;
    let bytes = t.to_bytes();
    assert_eq!(&bytes[..4], b"PLDT");
    let back = DensificationTable::from_bytes(&bytes).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.to_bytes(), bytes);
    assert!(DensificationTable::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(DensificationTable::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
}

#[test]
fn cap_drops_finest_entries() {
    let m = CanonicalMesh::icosphere(1, 1.0);
    let t = subdivide(&m, 0.001, 3).unwrap().table;
    let capped = t.clone().capped(100);
    assert_eq!(capped.len(), 100);
    assert_eq!(capped.entries(), &t.entries()[..100]);
    assert_eq!(t.clone().capped(5).len(), m.vertex_count());
}

#[test]
fn densify_var_matches_tensor_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = CanonicalMesh::icosphere(1, 1.0);
    let t = subdivide(&m, 0.01, 2).unwrap().table;
    let f = Tensor::<f64>::randn(&[m.vertex_count(), 4], 1.0, &mut rng);
    let mut tape = Tape::new();
    let x = tape.param(f.clone());
    let y = t.densify_var(&mut tape, x).unwrap();
    assert_eq!(tape.value(y), &t.densify_features(&f).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn densify_points_matches_explicit_sum(seed in any::<u64>(), source in 3usize..40, extra in 0usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_table(&mut rng, source, extra);
        let pts: Vec<[f64; 3]> = (0..source)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let got = t.densify_points(&pts).unwrap();
        let rows: Vec<Vec<f64>> = pts.iter().map(|p| p.to_vec()).collect();
        let want = explicit_sum(&t, &rows);
        for (g, w) in got.iter().zip(&want) {
            for k in 0..3 {
                prop_assert!((g[k] - w[k]).abs() < 1e-12);
            }
        }
        for i in 0..source {
            prop_assert_eq!(got[i], pts[i]);
        }
        // Convex hull: each coordinate lies between its parents' extremes.
        for (e, g) in t.entries().iter().zip(&got) {
            for k in 0..3 {
                let vals = e.parents.map(|p| pts[p as usize][k]);
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(g[k] >= lo - 1e-12 && g[k] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn densify_features_matches_explicit_sum(seed in any::<u64>(), source in 3usize..30, extra in 0usize..50, ch in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_table(&mut rng, source, extra);
        let f = Tensor::<f64>::randn(&[source, ch], 1.0, &mut rng);
        let got = t.densify_features(&f).unwrap();
        let rows: Vec<Vec<f64>> = (0..source).map(|i| f.row(i).to_vec()).collect();
        let want = explicit_sum(&t, &rows);
        for (i, w) in want.iter().enumerate() {
            for c in 0..ch {
                prop_assert!((got.at(i, c) - w[c]).abs() < 1e-12);
            }
        }
        for i in 0..source {
            prop_assert_eq!(got.row(i), f.row(i));
        }
    }

    #[test]
    fn densify_commutes_with_affine_maps(seed in any::<u64>(), source in 3usize..20, extra in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_table(&mut rng, source, extra);
        let pts: Vec<[f64; 3]> = (0..source)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let a: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0)));
        let b: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let affine = |p: [f64; 3]| -> [f64; 3] {
            std::array::from_fn(|r| a[r][0] * p[0] + a[r][1] * p[1] + a[r][2] * p[2] + b[r])
        };
        let lhs = t.densify_points(&pts.iter().map(|&p| affine(p)).collect::<Vec<_>>()).unwrap();
        let rhs: Vec<[f64; 3]> = t.densify_points(&pts).unwrap().into_iter().map(affine).collect();
        for (l, r) in lhs.iter().zip(&rhs) {
            for k in 0..3 {
                prop_assert!((l[k] - r[k]).abs() < 1e-10);
            }
        }
    }
}
