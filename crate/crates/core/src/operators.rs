//! Discrete isotropic and anisotropic Laplace-Beltrami operators.
//!
//! Both are returned as an [`OperatorPair`]: a positive semi-definite sparse
//! stiffness matrix (the weak form of `-div(D grad f)`) and the lumped mass
//! vector. The anisotropic version uses piecewise-linear finite elements with
//! a per-triangle conductivity tensor oriented by the principal curvature
//! directions.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Rotation2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curvature::PrincipalFrames;
use crate::mesh::{tangent_fallback, TriMesh, Vec3};
use crate::sparse::CsrMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum OperatorError {
    #[error("anisotropy level must be >= 0, got {0}")]
    NegativeAlpha(f64),
    #[error("face {0} is degenerate")]
    DegenerateTriangle(usize),
    #[error("frames cover {frames} vertices but the mesh has {mesh}")]
    FrameMeshMismatch { frames: usize, mesh: usize },
    #[error("unsupported direction count {0}; expected 1, 2 or 4")]
    UnsupportedDirectionCount(usize),
}

/// Default anisotropy level (conductivity ratio 1:51).
pub const DEFAULT_ALPHA: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnisoConfig {
    pub alpha: f64,
    /// Rotation from the maximum-curvature direction, radians.
    pub theta: f64,
}

impl AnisoConfig {
    pub const ISOTROPIC: AnisoConfig = AnisoConfig { alpha: 0.0, theta: 0.0 };

    /// The `count` evenly spaced directions `theta_m = m * pi / count`.
    pub fn directions(alpha: f64, count: usize) -> Result<Vec<AnisoConfig>, OperatorError> {
        if !matches!(count, 1 | 2 | 4) {
            return Err(OperatorError::UnsupportedDirectionCount(count));
        }
        if !(alpha >= 0.0) {
            return Err(OperatorError::NegativeAlpha(alpha));
        }
        Ok((0..count)
            .map(|m| AnisoConfig { alpha, theta: m as f64 * PI / count as f64 })
            .collect())
    }
}

/// `R(theta) diag(1 / (1 + alpha), 1) R(theta)^T`.
pub fn anisotropy_tensor(alpha: f64, theta: f64) -> Result<Matrix2<f64>, OperatorError> {
    if !(alpha >= 0.0) {
        return Err(OperatorError::NegativeAlpha(alpha));
    }
    let r = Rotation2::new(theta).into_inner();
    let d = Matrix2::from_diagonal(&Vector2::new(1.0 / (1.0 + alpha), 1.0));
    Ok(r * d * r.transpose())
}

#[derive(Clone, Debug)]
pub struct OperatorPair {
    pub stiffness: CsrMatrix,
    pub mass: Vec<f64>,
    pub config: AnisoConfig,
    /// Content hash of the source mesh.
    pub mesh_hash: u64,
}

impl OperatorPair {
    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    /// Largest absolute row sum of the stiffness matrix.
    pub fn max_row_sum(&self) -> f64 {
        self.stiffness.row_sums().iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

fn cotangent(a: &Vec3, b: &Vec3) -> f64 {
    a.dot(b) / a.cross(b).norm()
}

/// Cotangent Laplacian: `w_ij = -(cot a_ij + cot b_ij) / 2`, diagonal equal to
/// minus the off-diagonal row sum.
pub fn assemble_lbo(mesh: &TriMesh) -> Result<OperatorPair, OperatorError> {
    let v = mesh.vertices();
    let mut trip = Vec::with_capacity(mesh.face_count() * 12);
    for (fi, f) in mesh.faces().iter().enumerate() {
        if !(mesh.face_areas()[fi] > 0.0) {
            return Err(OperatorError::DegenerateTriangle(fi));
        }
        for c in 0..3 {
            let (i, j, k) = (f[c], f[(c + 1) % 3], f[(c + 2) % 3]);
            let w = 0.5 * cotangent(&(v[i] - v[k]), &(v[j] - v[k]));
            trip.extend([(i, j, -w), (j, i, -w), (i, i, w), (j, j, w)]);
        }
    }
    Ok(OperatorPair {
        stiffness: CsrMatrix::from_triplets(mesh.vertex_count(), trip),
        mass: mesh.mass().to_vec(),
        config: AnisoConfig::ISOTROPIC,
        mesh_hash: mesh.content_hash(),
    })
}

/// Unit direction in the plane of face `f` that anchors `theta = 0`: the mean
/// of the corner `dir_max` vectors (sign-aligned to the first corner),
/// projected into the face plane.
pub fn face_direction(mesh: &TriMesh, frames: &PrincipalFrames, face: usize) -> Vec3 {
    let f = mesh.faces()[face];
    let n = mesh.face_normals()[face];
    let d0 = frames.dir_max[f[0]];
    let mut sum = d0;
    for &i in &f[1..] {
        let d = frames.dir_max[i];
        sum += if d.dot(&d0) < 0.0 { -d } else { d };
    }
    let t = sum - n * n.dot(&sum);
    let len = t.norm();
    if len >= 1e-8 {
        t / len
    } else {
        tangent_fallback(&n)
    }
}

/// Anisotropic stiffness `K_ij = sum_T area(T) grad(B_i)^T D_T grad(B_j)` with
/// hat functions `B` and the tensor `D_T` expressed in the face basis whose
/// first axis is [`face_direction`].
pub fn assemble_albo(
    mesh: &TriMesh,
    frames: &PrincipalFrames,
    config: &AnisoConfig,
) -> Result<OperatorPair, OperatorError> {
    if frames.len() != mesh.vertex_count() {
        return Err(OperatorError::FrameMeshMismatch { frames: frames.len(), mesh: mesh.vertex_count() });
    }
    let tensor = anisotropy_tensor(config.alpha, config.theta)?;
    let v = mesh.vertices();
    let mut trip = Vec::with_capacity(mesh.face_count() * 9);
    for (fi, f) in mesh.faces().iter().enumerate() {
        let area = mesh.face_areas()[fi];
        if !(area > 0.0) {
            return Err(OperatorError::DegenerateTriangle(fi));
        }
        let n = mesh.face_normals()[fi];
        let e1 = face_direction(mesh, frames, fi);
        let e2 = n.cross(&e1);
        // grad B_i = n x (x_k - x_j) / (2 area) for the corner cycle (i, j, k)
        let grads: [Vector2<f64>; 3] = std::array::from_fn(|c| {
            let (j, k) = (f[(c + 1) % 3], f[(c + 2) % 3]);
            let g = n.cross(&(v[k] - v[j])) / (2.0 * area);
            Vector2::new(g.dot(&e1), g.dot(&e2))
        });
        for a in 0..3 {
            let dg = tensor * grads[a];
            for b in 0..3 {
                trip.push((f[a], f[b], area * dg.dot(&grads[b])));
            }
        }
    }
    let mut stiffness = CsrMatrix::from_triplets(mesh.vertex_count(), trip);
    symmetrize_in_place(&mut stiffness);
    Ok(OperatorPair { stiffness, mass: mesh.mass().to_vec(), config: *config, mesh_hash: mesh.content_hash() })
}

/// Averages mirrored entries so the stored matrix is exactly symmetric.
fn symmetrize_in_place(m: &mut CsrMatrix) {
    let t: Vec<(usize, usize, f64)> = m
        .triplets()
        .into_iter()
        .map(|(i, j, x)| (i, j, 0.5 * (x + m.get(j, i))))
        .collect();
    *m = CsrMatrix::from_triplets(m.dim(), t);
}

/// One operator per direction `theta_m = m * pi / count`.
pub fn assemble_direction_set(
    mesh: &TriMesh,
    frames: &PrincipalFrames,
    alpha: f64,
    count: usize,
) -> Result<Vec<OperatorPair>, OperatorError> {
    AnisoConfig::directions(alpha, count)?
        .iter()
        .map(|c| if c.alpha == 0.0 { assemble_lbo(mesh) } else { assemble_albo(mesh, frames, c) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::estimate_frames;
    use crate::synth::{bar, cylinder, icosphere, planar_grid};
    use nalgebra::{DMatrix, Rotation3, SymmetricEigen};

    #[test]
    fn tensor_examples() {
        let t = anisotropy_tensor(1.0, 0.0).unwrap();
        assert!((t - Matrix2::new(0.5, 0.0, 0.0, 1.0)).norm() < 1e-15);
        let t = anisotropy_tensor(1.0, PI / 2.0).unwrap();
        assert!((t - Matrix2::new(1.0, 0.0, 0.0, 0.5)).norm() < 1e-15);
        for theta in [0.0, 0.4, 2.0, 5.5] {
            assert!((anisotropy_tensor(0.0, theta).unwrap() - Matrix2::identity()).norm() < 1e-15);
        }
        assert_eq!(anisotropy_tensor(-0.1, 0.0), Err(OperatorError::NegativeAlpha(-0.1)));
        let eig = SymmetricEigen::new(anisotropy_tensor(3.0, 0.7).unwrap());
        let mut ev = [eig.eigenvalues[0], eig.eigenvalues[1]];
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - 0.25).abs() < 1e-15 && (ev[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn direction_set() {
        let d = AnisoConfig::directions(50.0, 4).unwrap();
        let thetas: Vec<f64> = d.iter().map(|c| c.theta).collect();
        assert_eq!(thetas, vec![0.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0]);
        assert!(AnisoConfig::directions(50.0, 3).is_err());
    }

    #[test]
    fn square_diagonal_weight_vanishes() {
        let m = planar_grid(1, 1, 1.0).unwrap();
        let ops = assemble_lbo(&m).unwrap();
        // faces [0,1,3], [0,3,2] share the diagonal 0-3
        assert!(ops.stiffness.get(0, 3).abs() < 1e-15);
        assert!((ops.stiffness.get(0, 1) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn lbo_kernel_and_symmetry() {
        for m in [icosphere(2).unwrap(), bar(2, 8.0).unwrap(), cylinder(1.0, 2.0, 12, 4, false).unwrap()] {
            let ops = assemble_lbo(&m).unwrap();
            assert!(ops.max_row_sum() < 1e-10);
            assert!(ops.stiffness.asymmetry() < 1e-12);
        }
    }

    #[test]
    fn albo_alpha_zero_matches_cotangent() {
        for m in [icosphere(2).unwrap(), bar(2, 8.0).unwrap(), cylinder(1.0, 2.0, 12, 4, false).unwrap()] {
            let f = estimate_frames(&m).unwrap();
            let lbo = assemble_lbo(&m).unwrap();
            let albo = assemble_albo(&m, &f, &AnisoConfig { alpha: 0.0, theta: 0.3 }).unwrap();
            let diff = (lbo.stiffness.to_dense() - albo.stiffness.to_dense()).abs().max();
            assert!(diff < 1e-10, "max diff {diff}");
        }
    }

    #[test]
    fn albo_pi_periodic() {
        let m = cylinder(1.0, 2.0, 16, 5, true).unwrap();
        let f = estimate_frames(&m).unwrap();
        let a = assemble_albo(&m, &f, &AnisoConfig { alpha: 1.0, theta: 0.4 }).unwrap();
        let b = assemble_albo(&m, &f, &AnisoConfig { alpha: 1.0, theta: 0.4 + PI }).unwrap();
        let diff = (a.stiffness.to_dense() - b.stiffness.to_dense()).abs().max();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn albo_psd_zero_rows_symmetric() {
        let m = icosphere(1).unwrap();
        let f = estimate_frames(&m).unwrap();
        for cfg in AnisoConfig::directions(50.0, 4).unwrap() {
            let ops = assemble_albo(&m, &f, &cfg).unwrap();
            assert!(ops.max_row_sum() < 1e-10);
            assert!(ops.stiffness.asymmetry() < 1e-12);
            let eig = SymmetricEigen::new(ops.stiffness.to_dense());
            assert!(eig.eigenvalues.min() > -1e-8);
        }
    }

    #[test]
    fn albo_damps_diffusion_along_direction() {
        // flat grid: frames fall back to +x, so theta = 0 damps x-derivatives
        let m = planar_grid(8, 8, 0.25).unwrap();
        let f = estimate_frames(&m).unwrap();
        let fx: Vec<f64> = m.vertices().iter().map(|p| (3.0 * p.x).sin()).collect();
        let mut last = f64::INFINITY;
        for alpha in [0.0, 1.0, 5.0, 50.0] {
            let ops = assemble_albo(&m, &f, &AnisoConfig { alpha, theta: 0.0 }).unwrap();
            let e = ops.stiffness.quadratic_form(&fx);
            assert!(e < last, "energy {e} did not drop below {last}");
            last = e;
        }
    }

    #[test]
    fn albo_first_mode_varies_along_damped_axis() {
        let m = planar_grid(10, 10, 0.1).unwrap();
        let f = estimate_frames(&m).unwrap();
        let ops = assemble_albo(&m, &f, &AnisoConfig { alpha: 50.0, theta: 0.0 }).unwrap();
        // dense generalized problem through the mass-scaled symmetric form
        let n = m.vertex_count();
        let s = DMatrix::from_fn(n, n, |i, j| {
            ops.stiffness.get(i, j) / (ops.mass[i] * ops.mass[j]).sqrt()
        });
        let eig = SymmetricEigen::new(s);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let phi: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, order[1])] / ops.mass[i].sqrt()).collect();
        // mass-weighted mean squared partial derivatives, per triangle
        let (mut gx, mut gy) = (0.0, 0.0);
        let v = m.vertices();
        for (fi, face) in m.faces().iter().enumerate() {
            let area = m.face_areas()[fi];
            let nrm = m.face_normals()[fi];
            let mut g = Vec3::zeros();
            for c in 0..3 {
                let (j, k) = (face[(c + 1) % 3], face[(c + 2) % 3]);
                g += nrm.cross(&(v[k] - v[j])) / (2.0 * area) * phi[face[c]];
            }
            gx += area * g.x * g.x;
            gy += area * g.y * g.y;
        }
        // x-variation is the cheap direction (conductivity 1/51), so the first
        // non-constant mode is cos(pi x)-like
        assert!(gx > 50.0 * gy, "x energy {gx} vs y energy {gy}");
    }

    #[test]
    fn albo_rigid_invariance() {
        let m = cylinder(1.2, 3.0, 18, 6, false).unwrap();
        let rot = Rotation3::from_euler_angles(0.2, 0.5, -0.9);
        let moved = m.map_vertices(|p| rot * p + Vec3::new(0.5, -1.0, 2.0)).unwrap();
        let cfg = AnisoConfig { alpha: 10.0, theta: 0.6 };
        let a = assemble_albo(&m, &estimate_frames(&m).unwrap(), &cfg).unwrap();
        let b = assemble_albo(&moved, &estimate_frames(&moved).unwrap(), &cfg).unwrap();
        let scale = a.stiffness.to_dense().abs().max();
        let diff = (a.stiffness.to_dense() - b.stiffness.to_dense()).abs().max();
        assert!(diff < 1e-8 * scale, "{diff}");
    }

    #[test]
    fn frame_mismatch() {
        let m = icosphere(0).unwrap();
        let f = estimate_frames(&icosphere(1).unwrap()).unwrap();
        assert!(matches!(
            assemble_albo(&m, &f, &AnisoConfig::ISOTROPIC),
            Err(OperatorError::FrameMeshMismatch { .. })
        ));
    }
}
