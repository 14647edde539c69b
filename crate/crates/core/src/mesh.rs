//! Manifold triangle meshes: loading, validation and derived geometry.
//!
//! A [`TriMesh`] is immutable once built. Construction validates index
//! ranges, edge manifoldness, consistent orientation and triangle degeneracy,
//! and precomputes face areas, normals and the lumped (mixed-Voronoi) vertex
//! mass used as the diagonal mass matrix everywhere downstream.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Triangles whose area is below this fraction of the squared bounding-box
/// diagonal are rejected.
pub const DEGENERACY_RATIO: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("face at line {line} has {count} vertices; only triangles are supported")]
    NonTriangleFace { line: usize, count: usize },
    #[error("unsupported mesh format '{0}'")]
    UnknownFormat(String),
    #[error("mesh has no faces")]
    Empty,
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("face {face} repeats a vertex")]
    RepeatedVertex { face: usize },
    #[error("edge ({0}, {1}) has more than two incident faces")]
    NonManifold(usize, usize),
    #[error("edge ({0}, {1}) is traversed twice in the same direction")]
    InconsistentOrientation(usize, usize),
    #[error("face {face} is degenerate (area {area:e})")]
    DegenerateTriangle { face: usize, area: f64 },
    #[error("vertex {0} is not referenced by any face")]
    IsolatedVertex(usize),
}

/// Supported ASCII mesh formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self, MeshError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        match ext.as_str() {
            "off" => Ok(MeshFormat::Off),
            "obj" => Ok(MeshFormat::Obj),
            other => Err(MeshError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    /// Sorted unique undirected edges `(i, j)` with `i < j`.
    edges: Vec<[usize; 2]>,
    /// Number of faces incident to each entry of `edges` (1 or 2).
    edge_faces: Vec<u8>,
    face_areas: Vec<f64>,
    face_normals: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
    mass: Vec<f64>,
}

impl TriMesh {
    /// Validates connectivity and geometry and precomputes derived fields.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if faces.is_empty() {
            return Err(MeshError::Empty);
        }
        let n = vertices.len();
        let mut used = vec![false; n];
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i >= n {
                    return Err(MeshError::IndexOutOfRange { face: fi, index: i, count: n });
                }
                used[i] = true;
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::RepeatedVertex { face: fi });
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(MeshError::IsolatedVertex(v));
        }

        // directed half-edge -> count, undirected -> incident faces
        let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3);
        let mut undirected: HashMap<(usize, usize), u8> = HashMap::with_capacity(faces.len() * 3);
        for f in &faces {
            for c in 0..3 {
                let (a, b) = (f[c], f[(c + 1) % 3]);
                let d = directed.entry((a, b)).or_insert(0);
                *d += 1;
                let key = (a.min(b), a.max(b));
                let u = undirected.entry(key).or_insert(0);
                *u = u.saturating_add(1);
            }
        }
        let mut edges: Vec<([usize; 2], u8)> =
            undirected.into_iter().map(|((a, b), c)| ([a, b], c)).collect();
        edges.sort_unstable();
        for &([a, b], c) in &edges {
            if c > 2 {
                return Err(MeshError::NonManifold(a, b));
            }
            if directed.get(&(a, b)).copied().unwrap_or(0) > 1
                || directed.get(&(b, a)).copied().unwrap_or(0) > 1
            {
                return Err(MeshError::InconsistentOrientation(a, b));
            }
        }

        let diag2 = bbox_diagonal_sq(&vertices);
        let threshold = DEGENERACY_RATIO * diag2;
        let mut face_areas = Vec::with_capacity(faces.len());
        let mut face_normals = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            let cross = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
            let area = 0.5 * cross.norm();
            if !(area > threshold) {
                return Err(MeshError::DegenerateTriangle { face: fi, area });
            }
            face_areas.push(area);
            face_normals.push(cross / (2.0 * area));
        }

        let mut vertex_normals = vec![Vec3::zeros(); n];
        for (fi, f) in faces.iter().enumerate() {
            let weighted = face_normals[fi] * face_areas[fi];
            for &i in f {
                vertex_normals[i] += weighted;
            }
        }
        for nrm in &mut vertex_normals {
            let len = nrm.norm();
            if len > 0.0 {
                *nrm /= len;
            }
        }

        let mass = mixed_voronoi_mass(&vertices, &faces)?;
        let (edges, edge_faces) = edges.into_iter().unzip();
        Ok(TriMesh {
            vertices,
            faces,
            edges,
            edge_faces,
            face_areas,
            face_normals,
            vertex_normals,
            mass,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }

    pub fn face_normals(&self) -> &[Vec3] {
        &self.face_normals
    }

    pub fn vertex_normals(&self) -> &[Vec3] {
        &self.vertex_normals
    }

    /// Lumped per-vertex mass (mixed Voronoi areas).
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn total_area(&self) -> f64 {
        self.face_areas.iter().sum()
    }

    pub fn boundary_edge_count(&self) -> usize {
        self.edge_faces.iter().filter(|&&c| c == 1).count()
    }

    pub fn is_closed(&self) -> bool {
        self.boundary_edge_count() == 0
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edge_count() as i64 + self.face_count() as i64
    }

    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal_sq(&self.vertices).sqrt()
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edges
            .iter()
            .map(|&[a, b]| (self.vertices[a] - self.vertices[b]).norm())
            .fold(0.0, f64::max)
    }

    /// Vertex adjacency lists, each sorted ascending.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertex_count()];
        for &[a, b] in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Faces incident to each vertex, in face order.
    pub fn vertex_faces(&self) -> Vec<Vec<usize>> {
        let mut vf = vec![Vec::new(); self.vertex_count()];
        for (fi, f) in self.faces.iter().enumerate() {
            for &i in f {
                vf[i].push(fi);
            }
        }
        vf
    }

    /// Sum of area-weighted face normals; near zero for a closed, consistently
    /// oriented surface.
    pub fn signed_normal_sum(&self) -> Vec3 {
        self.face_normals
            .iter()
            .zip(&self.face_areas)
            .map(|(n, a)| n * *a)
            .sum()
    }

    /// Returns a copy with every vertex mapped through `f`, revalidated.
    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Result<Self, MeshError> {
        TriMesh::new(self.vertices.iter().map(f).collect(), self.faces.clone())
    }

    /// Content hash of vertex positions (bitwise) and connectivity.
    pub fn content_hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.vertices.len() as u64).to_le_bytes());
        for v in &self.vertices {
            for c in v.iter() {
                h.update(c.to_bits().to_le_bytes());
            }
        }
        h.update((self.faces.len() as u64).to_le_bytes());
        for f in &self.faces {
            for &i in f {
                h.update((i as u64).to_le_bytes());
            }
        }
        let digest = h.finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(b)
    }

    pub fn write_off(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(out, "OFF")?;
        writeln!(out, "{} {} {}", self.vertex_count(), self.face_count(), self.edge_count())?;
        for v in &self.vertices {
            writeln!(out, "{} {} {}", v.x, v.y, v.z)?;
        }
        for f in &self.faces {
            writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
        }
        out.flush()
    }

    pub fn write_obj(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for v in &self.vertices {
            writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for f in &self.faces {
            writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        out.flush()
    }
}

/// Flips `v` so its first non-negligible component is positive.
pub fn canonical_sign(v: Vec3) -> Vec3 {
    for c in v.iter() {
        if c.abs() > 1e-12 {
            return if *c < 0.0 { -v } else { v };
        }
    }
    v
}

/// Unit vector perpendicular to `normal`: +x projected onto the plane, or +y
/// when +x is (nearly) parallel to `normal`.
pub fn tangent_fallback(normal: &Vec3) -> Vec3 {
    for e in [Vec3::x(), Vec3::y()] {
        let t = e - normal * normal.dot(&e);
        let len = t.norm();
        if len >= 1e-8 {
            return t / len;
        }
    }
    // normal is not unit or degenerate; any axis will do
    Vec3::z()
}

fn bbox_diagonal_sq(vertices: &[Vec3]) -> f64 {
    if vertices.is_empty() {
        return 0.0;
    }
    let mut lo = vertices[0];
    let mut hi = vertices[0];
    for v in vertices {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    (hi - lo).norm_squared()
}

fn cot(a: &Vec3, b: &Vec3) -> f64 {
    a.dot(b) / a.cross(b).norm()
}

/// Meyer mixed-Voronoi lumped mass.
///
/// Non-obtuse triangles contribute the circumcentric Voronoi area to each
/// corner; obtuse triangles give half their area to the obtuse corner and a
/// quarter to each other corner.
pub fn vertex_mass(mesh: &TriMesh) -> Result<Vec<f64>, MeshError> {
    mixed_voronoi_mass(&mesh.vertices, &mesh.faces)
}

fn mixed_voronoi_mass(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<Vec<f64>, MeshError> {
    let threshold = DEGENERACY_RATIO * bbox_diagonal_sq(vertices);
    let mut mass = vec![0.0; vertices.len()];
    for (fi, f) in faces.iter().enumerate() {
        let p = [vertices[f[0]], vertices[f[1]], vertices[f[2]]];
        let area = 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
        if !(area > threshold) {
            return Err(MeshError::DegenerateTriangle { face: fi, area });
        }
        let obtuse = (0..3).find(|&c| {
            let a = p[(c + 1) % 3] - p[c];
            let b = p[(c + 2) % 3] - p[c];
            a.dot(&b) < 0.0
        });
        match obtuse {
            Some(c) => {
                mass[f[c]] += area / 2.0;
                mass[f[(c + 1) % 3]] += area / 4.0;
                mass[f[(c + 2) % 3]] += area / 4.0;
            }
            None => {
                for c in 0..3 {
                    let i = c;
                    let j = (c + 1) % 3;
                    let k = (c + 2) % 3;
                    // corner k is opposite edge (i, j); corner j opposite (i, k)
                    let cot_k = cot(&(p[i] - p[k]), &(p[j] - p[k]));
                    let cot_j = cot(&(p[i] - p[j]), &(p[k] - p[j]));
                    let eij = (p[j] - p[i]).norm_squared();
                    let eik = (p[k] - p[i]).norm_squared();
                    mass[f[i]] += (eij * cot_k + eik * cot_j) / 8.0;
                }
            }
        }
    }
    Ok(mass)
}

/// Loads an OFF or OBJ triangle mesh, preserving vertex order.
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriMesh, MeshError> {
    let text = fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        MeshFormat::Off => parse_off(&text),
        MeshFormat::Obj => parse_obj(&text),
    }
}

/// Loads a mesh, picking the format from the file extension.
pub fn load_mesh_auto(path: &Path) -> Result<TriMesh, MeshError> {
    load_mesh(path, MeshFormat::from_path(path)?)
}

fn parse_f64(tok: &str, line: usize) -> Result<f64, MeshError> {
    tok.parse().map_err(|_| MeshError::Parse {
        line,
        message: format!("expected a number, found '{tok}'"),
    })
}

fn parse_usize(tok: &str, line: usize) -> Result<usize, MeshError> {
    tok.parse().map_err(|_| MeshError::Parse {
        line,
        message: format!("expected a non-negative integer, found '{tok}'"),
    })
}

pub fn parse_off(text: &str) -> Result<TriMesh, MeshError> {
    // (1-based line number, tokens) for every non-empty, non-comment line
    let mut lines = text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
    });
    let (hline, header) = lines.next().ok_or(MeshError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    if header[0] != "OFF" {
        return Err(MeshError::Parse {
            line: hline,
            message: format!("expected 'OFF' header, found '{}'", header[0]),
        });
    }
    // counts may follow the header on the same line
    let (cline, counts) = if header.len() > 1 {
        (hline, header[1..].to_vec())
    } else {
        lines.next().ok_or(MeshError::Parse {
            line: hline + 1,
            message: "missing counts line".into(),
        })?
    };
    if counts.len() < 2 {
        return Err(MeshError::Parse {
            line: cline,
            message: "counts line needs vertex and face counts".into(),
        });
    }
    let nv = parse_usize(counts[0], cline)?;
    let nf = parse_usize(counts[1], cline)?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, toks) = lines.next().ok_or(MeshError::Parse {
            line: cline,
            message: "unexpected end of file in vertex block".into(),
        })?;
        if toks.len() < 3 {
            return Err(MeshError::Parse { line: ln, message: "vertex needs 3 coordinates".into() });
        }
        vertices.push(Vec3::new(
            parse_f64(toks[0], ln)?,
            parse_f64(toks[1], ln)?,
            parse_f64(toks[2], ln)?,
        ));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, toks) = lines.next().ok_or(MeshError::Parse {
            line: cline,
            message: "unexpected end of file in face block".into(),
        })?;
        let count = parse_usize(toks[0], ln)?;
        if count != 3 {
            return Err(MeshError::NonTriangleFace { line: ln, count });
        }
        if toks.len() < 4 {
            return Err(MeshError::Parse { line: ln, message: "face needs 3 indices".into() });
        }
        faces.push([
            parse_usize(toks[1], ln)?,
            parse_usize(toks[2], ln)?,
            parse_usize(toks[3], ln)?,
        ]);
    }
    TriMesh::new(vertices, faces)
}

pub fn parse_obj(text: &str) -> Result<TriMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let l = raw.split('#').next().unwrap_or("").trim();
        let mut toks = l.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<&str> = toks.collect();
                if c.len() < 3 {
                    return Err(MeshError::Parse { line: ln, message: "vertex needs 3 coordinates".into() });
                }
                vertices.push(Vec3::new(parse_f64(c[0], ln)?, parse_f64(c[1], ln)?, parse_f64(c[2], ln)?));
            }
            Some("f") => {
                let c: Vec<&str> = toks.collect();
                if c.len() != 3 {
                    return Err(MeshError::NonTriangleFace { line: ln, count: c.len() });
                }
                let mut f = [0usize; 3];
                for (slot, tok) in f.iter_mut().zip(&c) {
                    let idx_tok = tok.split('/').next().unwrap_or("");
                    let idx: i64 = idx_tok.parse().map_err(|_| MeshError::Parse {
                        line: ln,
                        message: format!("bad face index '{tok}'"),
                    })?;
                    *slot = if idx > 0 {
                        (idx - 1) as usize
                    } else if idx < 0 && (-idx) as usize <= vertices.len() {
                        vertices.len() - (-idx) as usize
                    } else {
                        return Err(MeshError::Parse { line: ln, message: format!("bad face index '{tok}'") });
                    };
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces)
}
