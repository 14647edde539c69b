use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3};
use proptest::prelude::*;

use amlconv::curvature::estimate_frames;
use amlconv::mesh::TriMesh;
use amlconv::operators::{assemble_albo, assemble_direction_set, assemble_lbo, AnisoConfig, OperatorPair};
use amlconv::spectrum::solve_eigs;
use amlconv::synth::{cylinder, icosphere, planar_grid};
use amlconv::wavelets::{build_filterbank, KernelSpec};

fn perturbed(mesh: &TriMesh, offsets: &[(f64, f64, f64)]) -> TriMesh {
    let v = mesh
        .vertices()
        .iter()
        .zip(offsets.iter().cycle())
        .map(|(p, &(x, y, z))| p + Vector3::new(x, y, z))
        .collect();
    TriMesh::new(v, mesh.faces().to_vec()).unwrap()
}

fn base(kind: u8) -> TriMesh {
    match kind {
        0 => icosphere(1).unwrap(),
        1 => planar_grid(5, 6, 0.4).unwrap(),
        _ => cylinder(1.0, 2.0, 7, 3, true).unwrap(),
    }
}

fn dense_eigenvalues(ops: &OperatorPair) -> Vec<f64> {
    let s = DMatrix::from_diagonal(&DVector::from_iterator(ops.dim(), ops.mass.iter().map(|m| 1.0 / m.sqrt())));
    let b = &s * ops.stiffness.to_dense() * &s;
    let mut e: Vec<f64> = SymmetricEigen::new((&b + b.transpose()) * 0.5).eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

fn mesh_strategy() -> impl Strategy<Value = TriMesh> {
    (0u8..3, prop::collection::vec((-0.04..0.04f64, -0.04..0.04f64, -0.04..0.04f64), 7..13))
        .prop_map(|(kind, off)| perturbed(&base(kind), &off))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn eigenpairs_match_dense_solver(mesh in mesh_strategy(), alpha in 0.0..80.0f64, theta in 0.0..3.1f64) {
        let frames = estimate_frames(&mesh).unwrap();
        let ops = assemble_albo(&mesh, &frames, &AnisoConfig { alpha, theta }).unwrap();
        let k = mesh.vertex_count() / 3;
        let spec = solve_eigs(&ops, k).unwrap();
        for (a, b) in spec.eigenvalues.iter().zip(dense_eigenvalues(&ops)) {
            prop_assert!((a - b).abs() < 1e-8 * b.abs().max(1.0), "{a} vs {b}");
        }
        prop_assert!(spec.orthonormality_error() < 1e-10);
    }

    #[test]
    fn stiffness_is_symmetric_with_zero_row_sums(mesh in mesh_strategy(), alpha in 0.0..80.0f64) {
        let frames = estimate_frames(&mesh).unwrap();
        for ops in assemble_direction_set(&mesh, &frames, alpha, 4).unwrap() {
            let w = ops.stiffness.to_dense();
            prop_assert!((&w - w.transpose()).amax() < 1e-12);
            prop_assert!(w.row_iter().all(|r| r.sum().abs() < 1e-10));
        }
    }

    #[test]
    fn isotropic_albo_is_lbo(mesh in mesh_strategy(), theta in 0.0..3.1f64) {
        let frames = estimate_frames(&mesh).unwrap();
        let a = assemble_albo(&mesh, &frames, &AnisoConfig { alpha: 0.0, theta }).unwrap();
        let b = assemble_lbo(&mesh).unwrap();
        prop_assert!((a.stiffness.to_dense() - b.stiffness.to_dense()).amax() < 1e-10);
    }

    #[test]
    fn filter_and_adjoint_agree(mesh in mesh_strategy(), seed in 0u64..1000) {
        let frames = estimate_frames(&mesh).unwrap();
        let spectra = assemble_direction_set(&mesh, &frames, 50.0, 2)
            .unwrap()
            .iter()
            .map(|o| solve_eigs(o, 12).unwrap())
            .collect();
        let bank = build_filterbank(spectra, KernelSpec { span: 4.0, ..KernelSpec::default() }, false).unwrap();
        let n = bank.n();
        let x = DMatrix::from_fn(n, 2, |i, j| ((i * 7 + j * 3) as f64 + seed as f64).sin());
        let y = DMatrix::from_fn(n, 2, |i, j| ((i * 5 + j * 11) as f64 * 0.3 + seed as f64).cos());
        for m in 0..2 {
            for j in 0..bank.scale_count() {
                // <F x, y> = <x, F* y>
                let lhs = (bank.apply_filter(m, j, &x, true).unwrap().transpose() * &y).trace();
                let rhs = (x.transpose() * bank.adjoint_apply(m, j, &y, true).unwrap()).trace();
                prop_assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
            }
        }
    }
}
