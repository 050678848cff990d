use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::geometry::mesh::{triangle_area, ByteReader, CanonicalMesh};
use crate::nn::tape::{mix_rows_forward, Tape, Var};
use crate::nn::tensor::Tensor;
use crate::real::Real;

pub const DEFAULT_AREA_THRESHOLD: f64 = 2.0e-6;
pub const DEFAULT_MAX_DEPTH: usize = 3;

const TABLE_MAGIC: &[u8; 4] = b"PLDT";
const TABLE_VERSION: u32 = 1;

/// One dense point expressed as a convex combination of three source vertices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenseEntry {
    pub parents: [u32; 3],
    pub weights: [f64; 3],
}

impl DenseEntry {
    pub fn identity(i: u32) -> Self {
        Self {
            parents: [i, i, i],
            weights: [1.0, 0.0, 0.0],
        }
    }
}

/// Precomputed upsampler from `source_count` vertices to `len()` points.
/// The first `source_count` entries are identities.
#[derive(Clone, Debug, PartialEq)]
pub struct DensificationTable {
    source_count: usize,
    entries: Vec<DenseEntry>,
}

/// Result of [`subdivide`]: the table plus the implied triangulation.
#[derive(Clone, Debug)]
pub struct Subdivision {
    pub table: DensificationTable,
    /// Faces over dense indices after the last refinement pass.
    pub faces: Vec<[u32; 3]>,
    /// Faces still above the area threshold when `max_depth` ran out.
    pub oversized: usize,
}

struct Patch {
    corners: [u32; 3],
    origin: usize,
}

/// Recursively applies 1:4 midpoint subdivision to every face whose area
/// exceeds `area_threshold`, at most `max_depth` times. Entries are emitted
/// level by level, so truncating the table drops the finest points first.
pub fn subdivide(mesh: &CanonicalMesh, area_threshold: f64, max_depth: usize) -> Result<Subdivision> {
    if !(area_threshold > 0.0) {
        return Err(Error::contract(format!(
            "area threshold must be positive, got {area_threshold}"
        )));
    }
    if max_depth == 0 {
        return Err(Error::contract("max_depth must be at least 1"));
    }
    let m = mesh.vertex_count();
    let mut entries: Vec<DenseEntry> = (0..m as u32).map(DenseEntry::identity).collect();
    // Positions and barycentrics (relative to the origin face) per dense
    // vertex; originals use their own slot in the origin face on demand.
    let mut positions: Vec<[f64; 3]> = mesh.vertices.clone();

    let mut done: Vec<[u32; 3]> = Vec::new();
    let mut active: Vec<Patch> = mesh
        .faces
        .iter()
        .enumerate()
        .map(|(i, &f)| Patch {
            corners: f,
            origin: i,
        })
        .collect();

    let area = |positions: &[[f64; 3]], c: [u32; 3]| {
        triangle_area(
            positions[c[0] as usize],
            positions[c[1] as usize],
            positions[c[2] as usize],
        )
    };

    for _ in 0..max_depth {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::new();
        for patch in active {
            if area(&positions, patch.corners) <= area_threshold {
                done.push(patch.corners);
                continue;
            }
            let origin = mesh.faces[patch.origin];
            let [a, b, c] = patch.corners;
            let mut mid = |u: u32, v: u32| -> u32 {
                *midpoints.entry((u.min(v), u.max(v))).or_insert_with(|| {
                    let wu = barycentric_in(&entries, u, origin);
                    let wv = barycentric_in(&entries, v, origin);
                    let weights = [
                        0.5 * (wu[0] + wv[0]),
                        0.5 * (wu[1] + wv[1]),
                        0.5 * (wu[2] + wv[2]),
                    ];
                    entries.push(DenseEntry {
                        parents: origin,
                        weights,
                    });
                    let (pu, pv) = (positions[u as usize], positions[v as usize]);
                    positions.push([
                        0.5 * (pu[0] + pv[0]),
                        0.5 * (pu[1] + pv[1]),
                        0.5 * (pu[2] + pv[2]),
                    ]);
                    (entries.len() - 1) as u32
                })
            };
            let ab = mid(a, b);
            let bc = mid(b, c);
            let ca = mid(c, a);
            for corners in [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]] {
                next.push(Patch {
                    corners,
                    origin: patch.origin,
                });
            }
        }
        active = next;
        if active.is_empty() {
            break;
        }
    }
    let oversized = active
        .iter()
        .filter(|p| area(&positions, p.corners) > area_threshold)
        .count();
    done.extend(active.iter().map(|p| p.corners));

    Ok(Subdivision {
        table: DensificationTable {
            source_count: m,
            entries,
        },
        faces: done,
        oversized,
    })
}

/// Barycentric coordinates of dense vertex `v` with respect to `face`.
/// A midpoint created from a neighbouring face lies on a shared edge, so its
/// weights are re-expressed over `face`'s corners.
fn barycentric_in(entries: &[DenseEntry], v: u32, face: [u32; 3]) -> [f64; 3] {
    let e = &entries[v as usize];
    let mut out = [0.0; 3];
    for k in 0..3 {
        if e.weights[k] == 0.0 {
            continue;
        }
        let slot = face
            .iter()
            .position(|&f| f == e.parents[k])
            .expect("subdivided vertex must lie on its origin face");
        out[slot] += e.weights[k];
    }
    out
}

impl DensificationTable {
    pub fn new(source_count: usize, entries: Vec<DenseEntry>) -> Result<Self> {
        let t = Self {
            source_count,
            entries,
        };
        t.validate()?;
        Ok(t)
    }

    /// Identity-only table: densification is a no-op.
    pub fn identity(source_count: usize) -> Self {
        Self {
            source_count,
            entries: (0..source_count as u32).map(DenseEntry::identity).collect(),
        }
    }

    pub fn source_count(&self) -> usize {
        self.source_count
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[DenseEntry] {
        &self.entries
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.len() < self.source_count {
            return Err(Error::contract("table shorter than its source count"));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if i < self.source_count && *e != DenseEntry::identity(i as u32) {
                return Err(Error::contract(format!("entry {i} should be an identity entry")));
            }
            if e.parents.iter().any(|&p| p as usize >= self.source_count) {
                return Err(Error::contract(format!("entry {i} has a parent out of range")));
            }
            if e.weights.iter().any(|&w| !(w >= 0.0)) {
                return Err(Error::contract(format!("entry {i} has a negative weight")));
            }
            let s: f64 = e.weights.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::contract(format!("entry {i} weights sum to {s}")));
            }
        }
        Ok(())
    }

    /// Keeps at most `max_dense` entries (never fewer than the identities).
    pub fn capped(mut self, max_dense: usize) -> Self {
        self.entries.truncate(max_dense.max(self.source_count));
        self
    }

    pub fn parents(&self) -> Vec<[u32; 3]> {
        self.entries.iter().map(|e| e.parents).collect()
    }

    pub fn weights<T: Real>(&self) -> Vec<[T; 3]> {
        self.entries
            .iter()
            .map(|e| e.weights.map(T::c))
            .collect()
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.source_count {
            return Err(Error::dim("densify", &[rows], &[self.source_count]));
        }
        Ok(())
    }

    /// `p'ᵢ = Σₖ wₖ · p[parentₖ]` for every entry.
    pub fn densify_points(&self, points: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        self.check_rows(points.len())?;
        Ok(self
            .entries
            .iter()
            .map(|e| {
                let mut out = [0.0; 3];
                for k in 0..3 {
                    let p = points[e.parents[k] as usize];
                    for d in 0..3 {
                        out[d] = if k == 0 { e.weights[0] * p[d] } else { out[d] + e.weights[k] * p[d] };
                    }
                }
                out
            })
            .collect())
    }

    /// Row-wise barycentric interpolation of a `source_count × C` tensor.
    pub fn densify_features<T: Real>(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_rows(features.rows())?;
        let data = mix_rows_forward(features, &self.parents(), &self.weights::<T>());
        Tensor::new(&[self.len(), features.cols()], data)
    }

    /// Differentiable variant of [`Self::densify_features`].
    pub fn densify_var<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.check_rows(tape.value(x).rows())?;
        tape.mix_rows(x, Rc::new(self.parents()), Rc::new(self.weights::<T>()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.entries.len() * 24);
        out.extend_from_slice(TABLE_MAGIC);
        out.extend_from_slice(&TABLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.source_count as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            for p in e.parents {
                out.extend_from_slice(&p.to_le_bytes());
            }
            for w in e.weights {
                out.extend_from_slice(&(w as f32).to_le_bytes());
            }
        }
        out
    }

    /// Weights are stored as `f32`; identities and dyadic midpoint weights
    /// survive the narrowing exactly.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != TABLE_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "bad table magic".into(),
            });
        }
        let version = r.u32()?;
        if version != TABLE_VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported table version {version}"),
            });
        }
        let source_count = r.u32()? as usize;
        let n = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let parents = [r.u32()?, r.u32()?, r.u32()?];
            let weights = [r.f32()? as f64, r.f32()? as f64, r.f32()? as f64];
            entries.push(DenseEntry { parents, weights });
        }
        if r.pos() != bytes.len() {
            return Err(Error::Format {
                offset: r.pos() as u64,
                msg: "trailing bytes after table".into(),
            });
        }
        Self::new(source_count, entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
