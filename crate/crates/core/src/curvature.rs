//! Per-vertex principal curvatures and directions.
//!
//! Each triangle gets a second fundamental form fitted by least squares to the
//! change of vertex normals along its three edges. The per-face tensors are
//! rotated into each vertex's tangent plane, averaged with face-area weights,
//! and diagonalized.

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector2, Vector3};
use thiserror::Error;

use crate::mesh::{canonical_sign, tangent_fallback, TriMesh, Vec3};

#[derive(Debug, Error)]
pub enum CurvatureError {
    #[error("face {0} is degenerate")]
    DegenerateTriangle(usize),
    #[error("vertex {0} has no incident face")]
    IsolatedVertex(usize),
}

/// Relative gap below which a vertex is treated as umbilic.
pub const UMBILIC_RATIO: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct PrincipalFrames {
    pub k_min: Vec<f64>,
    pub k_max: Vec<f64>,
    /// Unit tangent direction of the larger-magnitude principal curvature,
    /// sign-canonicalized; the global-axis fallback at umbilic vertices.
    pub dir_max: Vec<Vec3>,
    pub normal: Vec<Vec3>,
    pub umbilic: Vec<bool>,
}

impl PrincipalFrames {
    pub fn len(&self) -> usize {
        self.k_min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_min.is_empty()
    }
}

/// Rotates the orthonormal pair `(u, v)` rigidly so that `u x v` becomes
/// `new_normal`.
fn rotate_frame(u: &Vec3, v: &Vec3, new_normal: &Vec3) -> (Vec3, Vec3) {
    let old_normal = u.cross(v);
    let ndot = old_normal.dot(new_normal);
    if ndot <= -1.0 {
        return (-u, -v);
    }
    let perp_old = new_normal - old_normal * ndot;
    let dperp = (old_normal + new_normal) / (1.0 + ndot);
    (u - dperp * u.dot(&perp_old), v - dperp * v.dot(&perp_old))
}

/// Least-squares second fundamental form of one face in the basis `(u, v)`.
fn face_tensor(p: [Vec3; 3], n: [Vec3; 3], u: &Vec3, v: &Vec3) -> Matrix2<f64> {
    // unknowns (e, f, g) of [[e, f], [f, g]]; two equations per edge
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for c in 0..3 {
        let (a, b) = ((c + 1) % 3, (c + 2) % 3);
        let e = p[b] - p[a];
        let dn = n[b] - n[a];
        let (eu, ev) = (e.dot(u), e.dot(v));
        let rows = [(Vector3::new(eu, ev, 0.0), dn.dot(u)), (Vector3::new(0.0, eu, ev), dn.dot(v))];
        for (r, rhs) in rows {
            ata += r * r.transpose();
            atb += r * rhs;
        }
    }
    // the system is full rank for any non-degenerate triangle
    let x = ata.cholesky().map(|c| c.solve(&atb)).unwrap_or_else(Vector3::zeros);
    Matrix2::new(x[0], x[1], x[1], x[2])
}

pub fn estimate_frames(mesh: &TriMesh) -> Result<PrincipalFrames, CurvatureError> {
    let nv = mesh.vertex_count();
    let verts = mesh.vertices();
    let normals = mesh.vertex_normals();
    let mut incident = vec![0usize; nv];
    for f in mesh.faces() {
        for &i in f {
            incident[i] += 1;
        }
    }
    if let Some(v) = incident.iter().position(|&c| c == 0) {
        return Err(CurvatureError::IsolatedVertex(v));
    }

    // vertex tangent bases (vu, vv) with vu x vv = normal
    let bases: Vec<(Vec3, Vec3)> = normals
        .iter()
        .map(|nrm| {
            let vu = tangent_fallback(nrm);
            (vu, nrm.cross(&vu))
        })
        .collect();

    let mut acc = vec![Matrix2::<f64>::zeros(); nv];
    let mut weight = vec![0.0; nv];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let area = mesh.face_areas()[fi];
        if !(area > 0.0) {
            return Err(CurvatureError::DegenerateTriangle(fi));
        }
        let p = [verts[f[0]], verts[f[1]], verts[f[2]]];
        let n = [normals[f[0]], normals[f[1]], normals[f[2]]];
        let fnrm = mesh.face_normals()[fi];
        let fu = (p[1] - p[0]).normalize();
        let fv = fnrm.cross(&fu);
        let tensor = face_tensor(p, n, &fu, &fv);
        for &i in f {
            let (ru, rv) = rotate_frame(&fu, &fv, &normals[i]);
            let (vu, vv) = &bases[i];
            let m = Matrix2::new(vu.dot(&ru), vu.dot(&rv), vv.dot(&ru), vv.dot(&rv));
            acc[i] += m * tensor * m.transpose() * area;
            weight[i] += area;
        }
    }

    let mut frames = PrincipalFrames {
        k_min: Vec::with_capacity(nv),
        k_max: Vec::with_capacity(nv),
        dir_max: Vec::with_capacity(nv),
        normal: normals.to_vec(),
        umbilic: Vec::with_capacity(nv),
    };
    for i in 0..nv {
        let t = acc[i] / weight[i];
        let t = (t + t.transpose()) * 0.5;
        let eig = SymmetricEigen::new(t);
        let (l0, l1) = (eig.eigenvalues[0], eig.eigenvalues[1]);
        let (k_min, k_max) = if l0 <= l1 { (l0, l1) } else { (l1, l0) };
        let dominant = if l0.abs() >= l1.abs() { 0 } else { 1 };
        let umbilic = (k_max - k_min).abs() < UMBILIC_RATIO * (k_max.abs() + k_min.abs() + 1e-12);
        let nrm = normals[i];
        let dir = if umbilic {
            tangent_fallback(&nrm)
        } else {
            let c: Vector2<f64> = eig.eigenvectors.column(dominant).into_owned();
            let (vu, vv) = &bases[i];
            let d = vu * c[0] + vv * c[1];
            // re-project to kill round-off along the normal
            (d - nrm * nrm.dot(&d)).normalize()
        };
        frames.k_min.push(k_min);
        frames.k_max.push(k_max);
        frames.dir_max.push(canonical_sign(dir));
        frames.umbilic.push(umbilic);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{cylinder, icosphere, planar_grid};
    use nalgebra::Rotation3;

    #[test]
    fn sphere_curvature_is_one() {
        let m = icosphere(3).unwrap();
        let f = estimate_frames(&m).unwrap();
        for i in 0..m.vertex_count() {
            assert!((f.k_min[i] - 1.0).abs() < 0.1, "k_min {}", f.k_min[i]);
            assert!((f.k_max[i] - 1.0).abs() < 0.1, "k_max {}", f.k_max[i]);
        }
    }

    #[test]
    fn plane_is_flat_and_umbilic() {
        let m = planar_grid(6, 5, 0.3).unwrap();
        let f = estimate_frames(&m).unwrap();
        assert!(f.k_min.iter().chain(&f.k_max).all(|k| k.abs() < 1e-6));
        assert!(f.umbilic.iter().all(|&u| u));
        // fallback direction is +x for a z-normal plane
        assert!(f.dir_max.iter().all(|d| (d - Vec3::x()).norm() < 1e-12));
    }

    #[test]
    fn cylinder_curvatures_and_direction() {
        let r = 2.0;
        let m = cylinder(r, 6.0, 48, 12, false).unwrap();
        let f = estimate_frames(&m).unwrap();
        let mut checked = 0;
        for (i, p) in m.vertices().iter().enumerate() {
            if p.z.abs() > 1.5 {
                continue;
            }
            checked += 1;
            assert!((f.k_max[i] - 1.0 / r).abs() < 0.05 / r, "k_max {}", f.k_max[i]);
            assert!(f.k_min[i].abs() < 0.05 / r, "k_min {}", f.k_min[i]);
            let angle = f.dir_max[i].dot(&Vec3::z()).abs().asin().to_degrees();
            assert!(angle < 5.0, "dir_max off the circumferential by {angle} deg");
        }
        assert!(checked > 100);
    }

    #[test]
    fn frame_invariants() {
        let m = cylinder(1.0, 3.0, 20, 6, true).unwrap();
        let f = estimate_frames(&m).unwrap();
        for i in 0..m.vertex_count() {
            assert!(f.k_max[i] >= f.k_min[i]);
            assert!(f.dir_max[i].dot(&f.normal[i]).abs() < 1e-8);
            assert!((f.dir_max[i].norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rotation_covariance_and_scale() {
        let m = cylinder(1.5, 4.0, 32, 8, false).unwrap();
        let f = estimate_frames(&m).unwrap();
        let rot = Rotation3::from_euler_angles(0.3, -0.7, 1.1);
        let moved = m.map_vertices(|p| rot * p + Vec3::new(1.0, 2.0, -3.0)).unwrap();
        let g = estimate_frames(&moved).unwrap();
        for i in 0..m.vertex_count() {
            if f.umbilic[i] {
                continue;
            }
            let d = rot * f.dir_max[i];
            let err = (d - g.dir_max[i]).norm().min((d + g.dir_max[i]).norm());
            assert!(err < 1e-6, "vertex {i}: {err}");
            assert!((rot * f.normal[i] - g.normal[i]).norm() < 1e-9);
            assert!((f.k_max[i] - g.k_max[i]).abs() < 1e-8);
        }
        let s = 3.0;
        let big = m.map_vertices(|p| p * s).unwrap();
        let h = estimate_frames(&big).unwrap();
        for i in 0..m.vertex_count() {
            assert!((h.k_max[i] - f.k_max[i] / s).abs() < 1e-10);
            assert!((h.k_min[i] - f.k_min[i] / s).abs() < 1e-10);
        }
    }

    #[test]
    fn convex_sphere_positive() {
        let f = estimate_frames(&icosphere(2).unwrap()).unwrap();
        assert!(f.k_min.iter().all(|&k| k > 0.0));
    }
}
