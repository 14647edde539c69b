//! Synthetic shapes with ground-truth correspondence.
//!
//! Base shapes (icosphere, subdivided box "bar", open or capped cylinder),
//! near-isometric bend/twist deformations that keep connectivity, and
//! midpoint remeshing that keeps the surface but changes the discretization.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{canonical_sign, load_mesh_auto, tangent_fallback, MeshError, TriMesh, Vec3};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("resolution {0} is too small")]
    ResolutionTooSmall(usize),
    #[error("deformation magnitude {magnitude} outside the stable range for {mode:?}")]
    MagnitudeOutOfRange { mode: DeformMode, magnitude: f64 },
    #[error("invalid dataset config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest error: {0}")]
    Manifest(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.display().to_string(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "resolution")]
pub enum BaseKind {
    /// Unit-radius icosphere with the given number of subdivisions.
    Icosphere(usize),
    /// Box of cross-section 1x1 and length 8 along z, with `n` grid cells per
    /// unit length.
    Bar(usize),
    /// Open cylinder of radius 1 and height 4 along z, `n` segments around.
    Cylinder(usize),
    /// Round bar: capped cylinder of radius 0.5 and length 8 along z, `n`
    /// segments around and `4n` rings.
    Rod(usize),
}

pub fn gen_base(kind: BaseKind) -> Result<TriMesh, SynthError> {
    match kind {
        BaseKind::Icosphere(s) => icosphere(s),
        BaseKind::Bar(n) => bar(n, 8.0),
        BaseKind::Cylinder(n) => cylinder(1.0, 4.0, n, (n / 2).max(2), false),
        BaseKind::Rod(n) => cylinder(0.5, 8.0, n, 4 * n, true),
    }
}

/// Icosahedron inscribed in the unit sphere, subdivided `subdivisions` times
/// with midpoints projected back to the sphere. Has `10 * 4^s + 2` vertices.
pub fn icosphere(subdivisions: usize) -> Result<TriMesh, SynthError> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
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
    ];
    let mut vertices: Vec<Vec3> = raw.iter().map(|p| Vec3::new(p[0], p[1], p[2]).normalize()).collect();
    let mut faces: Vec<[usize; 3]> = vec![
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
        let (v, f) = subdivide(&vertices, &faces, true);
        vertices = v;
        faces = f;
    }
    Ok(TriMesh::new(vertices, faces)?)
}

/// 1-to-4 midpoint subdivision. New vertices are appended in order of first
/// appearance while walking faces; with `project` they are pushed to the unit
/// sphere.
fn subdivide(vertices: &[Vec3], faces: &[[usize; 3]], project: bool) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let mut out = vertices.to_vec();
    let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |a: usize, b: usize, out: &mut Vec<Vec3>| -> usize {
        let key = (a.min(b), a.max(b));
        *mid.entry(key).or_insert_with(|| {
            let mut p = (out[a] + out[b]) * 0.5;
            if project {
                p = p.normalize();
            }
            out.push(p);
            out.len() - 1
        })
    };
    let mut new_faces = Vec::with_capacity(faces.len() * 4);
    for f in faces {
        let ab = midpoint(f[0], f[1], &mut out);
        let bc = midpoint(f[1], f[2], &mut out);
        let ca = midpoint(f[2], f[0], &mut out);
        new_faces.push([f[0], ab, ca]);
        new_faces.push([f[1], bc, ab]);
        new_faces.push([f[2], ca, bc]);
        new_faces.push([ab, bc, ca]);
    }
    (out, new_faces)
}

/// Closed box `[-0.5, 0.5]^2 x [-len/2, len/2]` with every side split into a
/// regular grid of `n` cells per unit length, outward oriented.
pub fn bar(n: usize, length: f64) -> Result<TriMesh, SynthError> {
    if n < 1 {
        return Err(SynthError::ResolutionTooSmall(n));
    }
    let nx = n;
    let ny = n;
    let nz = ((length * n as f64).round() as usize).max(1);
    let h = [1.0 / nx as f64, 1.0 / ny as f64, length / nz as f64];
    let dims = [nx, ny, nz];
    let on_boundary =
        |i: usize, j: usize, k: usize| i == 0 || j == 0 || k == 0 || i == nx || j == ny || k == nz;
    let mut index = HashMap::new();
    let mut vertices = Vec::new();
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                if on_boundary(i, j, k) {
                    index.insert([i, j, k], vertices.len());
                    vertices.push(Vec3::new(
                        i as f64 * h[0] - 0.5,
                        j as f64 * h[1] - 0.5,
                        k as f64 * h[2] - length / 2.0,
                    ));
                }
            }
        }
    }
    let mut faces = Vec::new();
    // each side: fixed axis `a` at value 0 or dims[a]; the other two axes (u, v)
    // are chosen so that u x v points along -a (low side) or +a (high side)
    for a in 0..3 {
        let (u, v) = ((a + 1) % 3, (a + 2) % 3);
        for high in [false, true] {
            let fixed = if high { dims[a] } else { 0 };
            for q in 0..dims[v] {
                for p in 0..dims[u] {
                    let at = |du: usize, dv: usize| {
                        let mut c = [0usize; 3];
                        c[a] = fixed;
                        c[u] = p + du;
                        c[v] = q + dv;
                        index[&c]
                    };
                    let (c00, c10, c11, c01) = (at(0, 0), at(1, 0), at(1, 1), at(0, 1));
                    // alternate diagonals so the grid has no preferred shear
                    let flip = (p + q) % 2 == 1;
                    let quad = if flip {
                        [[c00, c10, c01], [c10, c11, c01]]
                    } else {
                        [[c00, c10, c11], [c00, c11, c01]]
                    };
                    for mut t in quad {
                        if !high {
                            t.swap(1, 2);
                        }
                        faces.push(t);
                    }
                }
            }
        }
    }
    Ok(TriMesh::new(vertices, faces)?)
}

/// Open cylinder around the z axis, outward oriented. `segments` around,
/// `rings` cells along the axis. With `caps`, both ends are closed by fans
/// around a center vertex.
pub fn cylinder(radius: f64, height: f64, segments: usize, rings: usize, caps: bool) -> Result<TriMesh, SynthError> {
    if segments < 3 || rings < 1 || segments * (rings + 1) < 12 {
        return Err(SynthError::ResolutionTooSmall(segments));
    }
    let mut vertices = Vec::new();
    for r in 0..=rings {
        let z = height * (r as f64 / rings as f64 - 0.5);
        for s in 0..segments {
            let phi = 2.0 * PI * s as f64 / segments as f64;
            vertices.push(Vec3::new(radius * phi.cos(), radius * phi.sin(), z));
        }
    }
    let at = |r: usize, s: usize| r * segments + (s % segments);
    let mut faces = Vec::new();
    for r in 0..rings {
        for s in 0..segments {
            faces.push([at(r, s), at(r, s + 1), at(r + 1, s + 1)]);
            faces.push([at(r, s), at(r + 1, s + 1), at(r + 1, s)]);
        }
    }
    if caps {
        let bottom = vertices.len();
        vertices.push(Vec3::new(0.0, 0.0, -height / 2.0));
        let top = vertices.len();
        vertices.push(Vec3::new(0.0, 0.0, height / 2.0));
        for s in 0..segments {
            faces.push([bottom, at(0, s + 1), at(0, s)]);
            faces.push([top, at(rings, s), at(rings, s + 1)]);
        }
    }
    Ok(TriMesh::new(vertices, faces)?)
}

/// Flat `nx x ny` grid of unit-spaced quads in the z = 0 plane, each split into
/// two triangles.
pub fn planar_grid(nx: usize, ny: usize, spacing: f64) -> Result<TriMesh, SynthError> {
    if nx < 1 || ny < 1 || (nx + 1) * (ny + 1) < 4 {
        return Err(SynthError::ResolutionTooSmall(nx.min(ny)));
    }
    let mut vertices = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Vec3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
        }
    }
    let at = |i: usize, j: usize| j * (nx + 1) + i;
    let mut faces = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    Ok(TriMesh::new(vertices, faces)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeformMode {
    /// Bend along a circular arc; magnitude is the total bend angle (radians).
    Bend,
    /// Twist about the principal axis; magnitude is radians per unit length.
    Twist,
}

impl DeformMode {
    pub fn max_magnitude(self) -> f64 {
        match self {
            DeformMode::Bend => PI / 2.0,
            DeformMode::Twist => PI,
        }
    }
}

/// Orthonormal frame used by the deformations: `axis` is the shape's
/// principal (largest-variance) axis and `bend` the direction the shape bends
/// towards.
#[derive(Clone, Copy, Debug)]
pub struct AxisFrame {
    pub center: Vec3,
    pub axis: Vec3,
    pub bend: Vec3,
    /// Extent of the vertices along `axis`.
    pub length: f64,
}

impl AxisFrame {
    pub fn of(mesh: &TriMesh) -> Self {
        let v = mesh.vertices();
        let n = v.len() as f64;
        let center: Vec3 = v.iter().sum::<Vec3>() / n;
        let mut cov = Matrix3::zeros();
        for p in v {
            let d = p - center;
            cov += d * d.transpose();
        }
        let eig = SymmetricEigen::new(cov / n);
        let top = eig.eigenvalues.imax();
        let axis = canonical_sign(eig.eigenvectors.column(top).into_owned());
        let bend = tangent_fallback(&axis);
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let s = (p - center).dot(&axis);
            (lo.min(s), hi.max(s))
        });
        AxisFrame { center, axis, bend, length: hi - lo }
    }
}

pub fn deform(mesh: &TriMesh, mode: DeformMode, magnitude: f64) -> Result<TriMesh, SynthError> {
    deform_in_frame(mesh, mode, magnitude, &AxisFrame::of(mesh))
}

pub fn deform_in_frame(
    mesh: &TriMesh,
    mode: DeformMode,
    magnitude: f64,
    frame: &AxisFrame,
) -> Result<TriMesh, SynthError> {
    if !magnitude.is_finite() || magnitude.abs() > mode.max_magnitude() {
        return Err(SynthError::MagnitudeOutOfRange { mode, magnitude });
    }
    if magnitude == 0.0 {
        return Ok(mesh.clone());
    }
    let third = frame.axis.cross(&frame.bend);
    let out = match mode {
        DeformMode::Bend => {
            let kappa = magnitude / frame.length;
            let radius = 1.0 / kappa;
            mesh.map_vertices(|p| {
                let d = p - frame.center;
                let s = d.dot(&frame.axis);
                let y = d.dot(&frame.bend);
                let w = d.dot(&third);
                let phi = kappa * s;
                let r = radius - y;
                frame.center + frame.axis * (r * phi.sin()) + frame.bend * (radius - r * phi.cos()) + third * w
            })?
        }
        DeformMode::Twist => mesh.map_vertices(|p| {
            let d = p - frame.center;
            let s = d.dot(&frame.axis);
            let y = d.dot(&frame.bend);
            let w = d.dot(&third);
            let (sn, cs) = (magnitude * s).sin_cos();
            frame.center + frame.axis * s + frame.bend * (cs * y - sn * w) + third * (sn * y + cs * w)
        })?,
    };
    Ok(out)
}

/// Largest relative edge-length change between two meshes sharing
/// connectivity.
pub fn isometry_distortion(a: &TriMesh, b: &TriMesh) -> Option<f64> {
    if a.faces() != b.faces() {
        return None;
    }
    let (va, vb) = (a.vertices(), b.vertices());
    Some(
        a.edges()
            .iter()
            .map(|&[i, j]| {
                let la = (va[i] - va[j]).norm();
                let lb = (vb[i] - vb[j]).norm();
                (lb - la).abs() / la
            })
            .fold(0.0, f64::max),
    )
}

/// Midpoint (1-to-4) subdivision without projection.
///
/// Original vertices keep their indices; one vertex per edge is appended in
/// sorted edge order. Returns the new mesh and, for every new vertex, the
/// original vertex it maps to (the nearer endpoint of its edge, smaller index
/// on ties).
pub fn remesh(mesh: &TriMesh) -> Result<(TriMesh, Vec<usize>), SynthError> {
    let v = mesh.vertices();
    let n = v.len();
    let mut vertices = v.to_vec();
    let mut gt: Vec<usize> = (0..n).collect();
    let mut edge_index = HashMap::with_capacity(mesh.edge_count());
    for &[a, b] in mesh.edges() {
        let m = (v[a] + v[b]) * 0.5;
        let (da, db) = ((m - v[a]).norm(), (m - v[b]).norm());
        let tie = (da - db).abs() <= 1e-12 * da.max(db);
        gt.push(if tie { a.min(b) } else if da < db { a } else { b });
        edge_index.insert((a, b), vertices.len());
        vertices.push(m);
    }
    let mid = |a: usize, b: usize| edge_index[&(a.min(b), a.max(b))];
    let mut faces = Vec::with_capacity(mesh.face_count() * 4);
    for f in mesh.faces() {
        let (ab, bc, ca) = (mid(f[0], f[1]), mid(f[1], f[2]), mid(f[2], f[0]));
        faces.push([f[0], ab, ca]);
        faces.push([f[1], bc, ab]);
        faces.push([f[2], ca, bc]);
        faces.push([ab, bc, ca]);
    }
    Ok((TriMesh::new(vertices, faces)?, gt))
}

#[derive(Clone, Debug)]
pub struct ShapePair {
    pub source: TriMesh,
    pub target: TriMesh,
    /// Ground-truth target vertex for every source vertex.
    pub gt_map: Vec<usize>,
    /// Only defined when source and target share connectivity.
    pub isometry_distortion: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deformation {
    pub mode: DeformMode,
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub base: BaseKind,
    pub deformations: Vec<Deformation>,
    /// How many of the deformations go to training; the rest are held out.
    pub train_count: usize,
    /// Shuffles the train/test split.
    pub seed: u64,
    /// Explicit held-out deformation indices; replaces the seeded split.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub held_out: Vec<usize>,
    /// Also emit a pair whose target is the midpoint-remeshed held-out shape.
    #[serde(default)]
    pub remeshed_pairs: bool,
}

/// A training mesh with one template label per vertex.
#[derive(Clone, Debug)]
pub struct LabeledMesh {
    pub name: String,
    pub mesh: TriMesh,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct NamedPair {
    pub source_name: String,
    pub target_name: String,
    pub pair: ShapePair,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub template: TriMesh,
    pub train: Vec<LabeledMesh>,
    pub test_pairs: Vec<NamedPair>,
}

fn deformation_name(i: usize, d: &Deformation) -> String {
    let mode = match d.mode {
        DeformMode::Bend => "bend",
        DeformMode::Twist => "twist",
    };
    format!("{mode}{i:02}")
}

pub fn make_dataset(config: &DatasetConfig) -> Result<Dataset, SynthError> {
    if config.deformations.is_empty() {
        return Err(SynthError::ConfigInvalid("no deformations".into()));
    }
    if config.train_count > config.deformations.len() {
        return Err(SynthError::ConfigInvalid(format!(
            "train_count {} exceeds {} deformations",
            config.train_count,
            config.deformations.len()
        )));
    }
    let template = gen_base(config.base)?;
    let frame = AxisFrame::of(&template);
    let count = config.deformations.len();
    let (mut train_idx, mut test_idx) = if config.held_out.is_empty() {
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
        let (a, b) = order.split_at(config.train_count);
        (a.to_vec(), b.to_vec())
    } else {
        let mut held = config.held_out.clone();
        held.sort_unstable();
        held.dedup();
        if held.len() != config.held_out.len() || held.iter().any(|&i| i >= count) || count - held.len() != config.train_count {
            return Err(SynthError::ConfigInvalid(format!(
                "held_out {:?} must be distinct indices below {count} leaving train_count = {} for training",
                config.held_out, config.train_count
            )));
        }
        ((0..count).filter(|i| !held.contains(i)).collect(), held)
    };
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let identity: Vec<usize> = (0..template.vertex_count()).collect();
    let mut train = Vec::new();
    for &i in &train_idx {
        let d = config.deformations[i];
        train.push(LabeledMesh {
            name: deformation_name(i, &d),
            mesh: deform_in_frame(&template, d.mode, d.magnitude, &frame)?,
            labels: identity.clone(),
        });
    }
    let mut test_pairs = Vec::new();
    for &i in &test_idx {
        let d = config.deformations[i];
        let name = deformation_name(i, &d);
        let target = deform_in_frame(&template, d.mode, d.magnitude, &frame)?;
        if config.remeshed_pairs {
            let (fine, _) = remesh(&target)?;
            test_pairs.push(NamedPair {
                source_name: "template".into(),
                target_name: format!("{name}_remeshed"),
                pair: ShapePair {
                    source: template.clone(),
                    target: fine,
                    gt_map: identity.clone(),
                    isometry_distortion: None,
                },
            });
        }
        test_pairs.push(NamedPair {
            source_name: "template".into(),
            target_name: name,
            pair: ShapePair {
                isometry_distortion: isometry_distortion(&template, &target),
                source: template.clone(),
                target,
                gt_map: identity.clone(),
            },
        });
    }
    // plain pairs first, remeshed variants after, each in deformation order
    test_pairs.sort_by_key(|p| p.target_name.ends_with("_remeshed"));
    Ok(Dataset { template, train, test_pairs })
}

/// On-disk dataset description. Paths are relative to the manifest file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub config: Option<DatasetConfig>,
    pub template: String,
    pub train: Vec<ManifestMesh>,
    pub pairs: Vec<ManifestPair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestMesh {
    pub name: String,
    pub mesh: String,
    pub labels: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestPair {
    pub source: String,
    pub target: String,
    pub source_mesh: String,
    pub target_mesh: String,
    /// One ground-truth target index per source vertex.
    pub gt: String,
}

fn write_indices(path: &Path, idx: &[usize]) -> Result<(), SynthError> {
    let mut s = String::with_capacity(idx.len() * 6);
    for i in idx {
        s.push_str(&i.to_string());
        s.push('\n');
    }
    fs::write(path, s).map_err(io_err(path))
}

pub fn read_indices(path: &Path) -> Result<Vec<usize>, SynthError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| SynthError::Manifest(format!("{}: bad index on line {}", path.display(), i + 1)))
        })
        .collect()
}

impl Dataset {
    /// Writes meshes (OFF), label files and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path, config: Option<&DatasetConfig>) -> Result<PathBuf, SynthError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let save = |name: &str, mesh: &TriMesh| -> Result<String, SynthError> {
            let file = format!("{name}.off");
            let p = dir.join(&file);
            mesh.write_off(&p).map_err(io_err(&p))?;
            Ok(file)
        };
        let template = save("template", &self.template)?;
        let mut train = Vec::new();
        for lm in &self.train {
            let mesh = save(&lm.name, &lm.mesh)?;
            let labels = format!("{}.labels", lm.name);
            write_indices(&dir.join(&labels), &lm.labels)?;
            train.push(ManifestMesh { name: lm.name.clone(), mesh, labels });
        }
        let mut pairs = Vec::new();
        for p in &self.test_pairs {
            let target_mesh = save(&p.target_name, &p.pair.target)?;
            let source_mesh = if p.source_name == "template" {
                template.clone()
            } else {
                save(&p.source_name, &p.pair.source)?
            };
            let gt = format!("{}__{}.gt", p.source_name, p.target_name);
            write_indices(&dir.join(&gt), &p.pair.gt_map)?;
            pairs.push(ManifestPair {
                source: p.source_name.clone(),
                target: p.target_name.clone(),
                source_mesh,
                target_mesh,
                gt,
            });
        }
        let manifest = DatasetManifest { config: config.cloned(), template, train, pairs };
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| SynthError::Manifest(e.to_string()))?;
        fs::write(&path, json + "\n").map_err(io_err(&path))?;
        Ok(path)
    }

    /// Loads a dataset back from a manifest written by [`Dataset::write`].
    pub fn read(manifest_path: &Path) -> Result<(Dataset, DatasetManifest), SynthError> {
        let manifest = read_manifest(manifest_path)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let template = load_mesh_auto(&dir.join(&manifest.template))?;
        let mut train = Vec::new();
        for m in &manifest.train {
            let mesh = load_mesh_auto(&dir.join(&m.mesh))?;
            let labels = read_indices(&dir.join(&m.labels))?;
            if labels.len() != mesh.vertex_count() {
                return Err(SynthError::Manifest(format!("{}: label count mismatch", m.name)));
            }
            train.push(LabeledMesh { name: m.name.clone(), mesh, labels });
        }
        let mut test_pairs = Vec::new();
        for p in &manifest.pairs {
            let source = load_mesh_auto(&dir.join(&p.source_mesh))?;
            let target = load_mesh_auto(&dir.join(&p.target_mesh))?;
            let gt_map = read_indices(&dir.join(&p.gt))?;
            if gt_map.len() != source.vertex_count() || gt_map.iter().any(|&g| g >= target.vertex_count()) {
                return Err(SynthError::Manifest(format!("{}: invalid ground truth", p.gt)));
            }
            test_pairs.push(NamedPair {
                source_name: p.source.clone(),
                target_name: p.target.clone(),
                pair: ShapePair {
                    isometry_distortion: isometry_distortion(&source, &target),
                    source,
                    target,
                    gt_map,
                },
            });
        }
        Ok((Dataset { template, train, test_pairs }, manifest))
    }
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, SynthError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| SynthError::Manifest(e.to_string()))
}
