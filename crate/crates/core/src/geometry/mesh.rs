use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Reference vertex count of the FLAME head template.
pub const FLAME_VERTEX_COUNT: usize = 5023;

const MESH_MAGIC: &[u8; 4] = b"PLMS";
const MESH_VERSION: u32 = 1;
const MIN_FACE_AREA: f64 = 1e-12;

/// Triangle mesh in canonical (template) space.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
}

impl CanonicalMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (i, v) in self.vertices.iter().enumerate() {
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite {
                    what: "mesh vertex",
                    index: i,
                });
            }
        }
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&idx| idx as usize >= n) {
                return Err(Error::contract(format!(
                    "face {i} references a vertex outside 0..{n}"
                )));
            }
            let area = self.face_area(i);
            if area <= MIN_FACE_AREA {
                return Err(Error::contract(format!(
                    "face {i} is degenerate (area {area:e})"
                )));
            }
        }
        Ok(())
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face].map(|i| self.vertices[i as usize]);
        triangle_area(a, b, c)
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for v in &mut self.vertices {
            for c in v.iter_mut() {
                *c *= s;
            }
        }
        self
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            s.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
        }
        for f in &self.faces {
            s.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
        }
        s
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.vertices.len() * 12 + self.faces.len() * 12);
        out.extend_from_slice(MESH_MAGIC);
        out.extend_from_slice(&MESH_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.vertices.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.faces.len() as u32).to_le_bytes());
        for v in &self.vertices {
            for c in v {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        for f in &self.faces {
            for i in f {
                out.extend_from_slice(&i.to_le_bytes());
            }
        }
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != MESH_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "bad mesh magic".into(),
            });
        }
        let version = r.u32()?;
        if version != MESH_VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported mesh version {version}"),
            });
        }
        let (nv, nf) = (r.u32()? as usize, r.u32()? as usize);
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            vertices.push([r.f32()? as f64, r.f32()? as f64, r.f32()? as f64]);
        }
        let mut faces = Vec::with_capacity(nf);
        for _ in 0..nf {
            faces.push([r.u32()?, r.u32()?, r.u32()?]);
        }
        Self::new(vertices, faces)
    }

    pub fn from_obj_str(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut face_lines = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line_no = ln + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let coords: Vec<f64> = parts
                        .take(3)
                        .map(|p| p.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| perr(line_no, format!("bad vertex: {e}")))?;
                    if coords.len() != 3 {
                        return Err(perr(line_no, "vertex needs 3 coordinates".into()));
                    }
                    vertices.push([coords[0], coords[1], coords[2]]);
                }
                Some("f") => {
                    let idx: Vec<i64> = parts
                        .map(|p| p.split('/').next().unwrap_or("").parse::<i64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| perr(line_no, format!("bad face index: {e}")))?;
                    if idx.len() != 3 {
                        return Err(perr(line_no, format!("expected a triangle, got {} indices", idx.len())));
                    }
                    let mut f = [0u32; 3];
                    for (k, &i) in idx.iter().enumerate() {
                        if i < 1 {
                            return Err(perr(line_no, format!("face index {i} is not 1-based positive")));
                        }
                        f[k] = (i - 1) as u32;
                    }
                    faces.push(f);
                    face_lines.push(line_no);
                }
                _ => {}
            }
        }
        for (f, &line_no) in faces.iter().zip(&face_lines) {
            if let Some(&bad) = f.iter().find(|&&i| i as usize >= vertices.len()) {
                return Err(perr(
                    line_no,
                    format!("face index {} out of range ({} vertices)", bad + 1, vertices.len()),
                ));
            }
        }
        Self::new(vertices, faces)
    }

    /// Unit icosahedron refined `subdivisions` times, projected onto a sphere.
    pub fn icosphere(subdivisions: usize, radius: f64) -> Self {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<[f64; 3]> = vec![
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ]
        .into_iter()
        .map(normalize)
        .collect();
        let mut faces: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            let mut midpoint = |a: u32, b: u32, verts: &mut Vec<[f64; 3]>| -> u32 {
                let key = (a.min(b), a.max(b));
                *mid.entry(key).or_insert_with(|| {
                    let (pa, pb) = (verts[a as usize], verts[b as usize]);
                    verts.push(normalize([
                        pa[0] + pb[0],
                        pa[1] + pb[1],
                        pa[2] + pb[2],
                    ]));
                    (verts.len() - 1) as u32
                })
            };
            for [a, b, c] in faces {
                let ab = midpoint(a, b, &mut vertices);
                let bc = midpoint(b, c, &mut vertices);
                let ca = midpoint(c, a, &mut vertices);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        for v in &mut vertices {
            for c in v.iter_mut() {
                *c *= radius;
            }
        }
        Self { vertices, faces }
    }
}

/// Reads an OBJ subset (`v`/`f` lines, 1-based triangles) or the binary
/// `PLMS` mesh format, chosen by the file's leading bytes.
pub fn load_mesh(path: &Path) -> Result<CanonicalMesh> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(MESH_MAGIC) {
        return CanonicalMesh::from_binary(&bytes);
    }
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("not UTF-8: {e}"),
    })?;
    CanonicalMesh::from_obj_str(&text, path)
}

pub fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let x = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Little-endian cursor that reports the failing offset.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("truncated: wanted {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
