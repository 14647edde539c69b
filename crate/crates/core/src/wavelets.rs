//! Mexican-hat spectral wavelet filter banks.
//!
//! For a direction `m` with eigenpairs `(lambda_k, phi_k)` the localized
//! wavelet at vertex `v` and scale `t` is
//!
//! ```text
//! Psi_{t,v}(u) = a(v) sum_k g(t lambda_k) phi_k(v) phi_k(u)
//! ```
//!
//! Stacking the wavelets as columns gives `Psi = Phi g Phi^T A`, which is
//! self-adjoint in the mass inner product `<x, y>_A = x^T A y`. Filtering a
//! feature map is therefore `Phi g Phi^T (A X)`, three tall-skinny products,
//! and `N x N` matrices are only ever formed in blocks to compute the per-column
//! L1 normalizers.

use std::f64::consts::E;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectrum::Spectrum;

#[derive(Debug, Error, PartialEq)]
pub enum WaveletError {
    #[error("kernel argument {0} is negative")]
    NegativeInput(f64),
    #[error("cutoff {0} is not positive")]
    NonpositiveCutoff(f64),
    #[error("lambda_max {0} is not positive")]
    NonpositiveLambdaMax(f64),
    #[error("at least one scale is required")]
    NoScales,
    #[error("spectra disagree: {0}")]
    SpectrumMismatch(String),
    #[error("wavelet column (direction {direction}, scale {scale}, vertex {vertex}) has L1 norm {norm:e}")]
    ZeroColumnNorm { direction: usize, scale: usize, vertex: usize, norm: f64 },
    #[error("{what} index {index} out of range (< {bound})")]
    IndexOutOfRange { what: &'static str, index: usize, bound: usize },
    #[error("expected {expected} rows, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("synthesis needs a filter bank built with tighten on")]
    NotTightFrame,
}

/// Columns of `Psi` materialized at once when computing L1 norms.
pub const NORMALIZER_BLOCK: usize = 256;

const NORM_FLOOR: f64 = 1e-14;

/// Band-pass kernel `g(x) = e x^2 exp(-x^2)`, peak 1 at `x = 1`.
pub fn kernel_g(x: f64) -> Result<f64, WaveletError> {
    if x < 0.0 {
        return Err(WaveletError::NegativeInput(x));
    }
    Ok(E * x * x * (-x * x).exp())
}

/// Low-pass kernel `h(x) = exp(-(x / cutoff)^4)`.
pub fn kernel_h(x: f64, cutoff: f64) -> Result<f64, WaveletError> {
    if x < 0.0 {
        return Err(WaveletError::NegativeInput(x));
    }
    if !(cutoff > 0.0) {
        return Err(WaveletError::NonpositiveCutoff(cutoff));
    }
    Ok((-(x / cutoff).powi(4)).exp())
}

/// Log-spaced scales whose band-pass peaks `1 / t_j` run from `lambda_max`
/// down to `lambda_max / span`, so `t` is increasing.
pub fn scales_with_span(lambda_max: f64, count: usize, span: f64) -> Result<Vec<f64>, WaveletError> {
    if !(lambda_max > 0.0) {
        return Err(WaveletError::NonpositiveLambdaMax(lambda_max));
    }
    match count {
        0 => Err(WaveletError::NoScales),
        1 => Ok(vec![2.0 / lambda_max]),
        _ => Ok((0..count)
            .map(|j| span.powf(j as f64 / (count - 1) as f64) / lambda_max)
            .collect()),
    }
}

pub fn select_scales(lambda_max: f64, count: usize) -> Result<Vec<f64>, WaveletError> {
    scales_with_span(lambda_max, count, 40.0)
}

/// Kernel parameters; the actual scales and cutoff are derived per direction
/// from that direction's largest computed eigenvalue.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub scales: usize,
    pub cutoff_fraction: f64,
    pub span: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec { scales: 4, cutoff_fraction: 0.4, span: 40.0 }
    }
}

#[derive(Clone, Debug)]
pub struct FilterBank {
    spectra: Vec<Spectrum>,
    kernel: KernelSpec,
    tight: bool,
    scales: Vec<Vec<f64>>,
    cutoffs: Vec<f64>,
    /// `[m][j]`, length K.
    responses: Vec<Vec<DVector<f64>>>,
    scaling: Vec<DVector<f64>>,
    /// `[m][j]`, length N.
    normalizers: Vec<Vec<DVector<f64>>>,
    frame_bounds: Vec<(f64, f64)>,
    raw_frame_bounds: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct WaveletCoefficients {
    /// `[m][j]`, per-vertex.
    pub wavelet: Vec<Vec<DVector<f64>>>,
    /// `[m]`, per-vertex.
    pub scaling: Vec<DVector<f64>>,
    /// `[m]`, `<f, phi_k>_A`.
    pub sigma: Vec<DVector<f64>>,
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

/// Frame function `h^2 + sum_j g_j^2` at each sampled eigenvalue.
fn frame_function(scaling: &DVector<f64>, responses: &[DVector<f64>]) -> DVector<f64> {
    let mut g = scaling.map(|x| x * x);
    for r in responses {
        g += r.map(|x| x * x);
    }
    g
}

/// Column L1 norms of `Psi = Phi diag(resp) Phi^T A`, `NORMALIZER_BLOCK`
/// columns at a time.
fn column_l1_norms(phi: &DMatrix<f64>, resp: &DVector<f64>, mass: &[f64]) -> DVector<f64> {
    let n = phi.nrows();
    let mut scaled = phi.clone();
    for (mut col, r) in scaled.column_iter_mut().zip(resp.iter()) {
        col *= *r;
    }
    let mut out = DVector::zeros(n);
    let mut start = 0;
    while start < n {
        let len = NORMALIZER_BLOCK.min(n - start);
        let rows = phi.rows(start, len);
        let block = &scaled * rows.transpose();
        for c in 0..len {
            out[start + c] = mass[start + c] * block.column(c).iter().map(|x| x.abs()).sum::<f64>();
        }
        start += len;
    }
    out
}

pub fn build_filterbank(spectra: Vec<Spectrum>, kernel: KernelSpec, tighten: bool) -> Result<FilterBank, WaveletError> {
    assemble(spectra, kernel, tighten, None)
}

/// Rebuilds a bank whose normalizers were computed earlier, skipping the
/// `O(N^2 K)` column sums. `normalizers[m][j]` must have length N.
pub fn build_filterbank_with_normalizers(
    spectra: Vec<Spectrum>,
    kernel: KernelSpec,
    tighten: bool,
    normalizers: Vec<Vec<DVector<f64>>>,
) -> Result<FilterBank, WaveletError> {
    assemble(spectra, kernel, tighten, Some(normalizers))
}

fn assemble(
    spectra: Vec<Spectrum>,
    kernel: KernelSpec,
    tighten: bool,
    cached: Option<Vec<Vec<DVector<f64>>>>,
) -> Result<FilterBank, WaveletError> {
    let first = spectra.first().ok_or_else(|| WaveletError::SpectrumMismatch("no directions".into()))?;
    let (n, k) = (first.n(), first.k());
    for (m, s) in spectra.iter().enumerate() {
        if s.n() != n || s.k() != k {
            return Err(WaveletError::SpectrumMismatch(format!(
                "direction {m} is {}x{}, direction 0 is {n}x{k}",
                s.n(),
                s.k()
            )));
        }
        if s.mass != first.mass {
            return Err(WaveletError::SpectrumMismatch(format!("direction {m} has a different mass matrix")));
        }
    }

    let mut scales = Vec::new();
    let mut cutoffs = Vec::new();
    let mut responses = Vec::new();
    let mut scaling = Vec::new();
    let mut frame_bounds = Vec::new();
    let mut raw_frame_bounds = Vec::new();
    for s in &spectra {
        let lmax = s.lambda_max();
        let t = scales_with_span(lmax, kernel.scales, kernel.span)?;
        let cutoff = kernel.cutoff_fraction * lmax;
        let lam = DVector::from_column_slice(&s.eigenvalues);
        let mut resp: Vec<DVector<f64>> = t
            .iter()
            .map(|&tj| lam.iter().map(|&l| kernel_g(tj * l.max(0.0))).collect::<Result<Vec<_>, _>>().map(DVector::from_vec))
            .collect::<Result<_, _>>()?;
        let mut low = DVector::from_vec(
            lam.iter().map(|&l| kernel_h(l.max(0.0), cutoff)).collect::<Result<Vec<_>, _>>()?,
        );
        let frame = frame_function(&low, &resp);
        raw_frame_bounds.push(bounds(frame.iter().copied()));
        if tighten {
            let root = frame.map(f64::sqrt);
            for r in &mut resp {
                r.component_div_assign(&root);
            }
            low.component_div_assign(&root);
        }
        frame_bounds.push(bounds(frame_function(&low, &resp).iter().copied()));
        scales.push(t);
        cutoffs.push(cutoff);
        responses.push(resp);
        scaling.push(low);
    }

    let normalizers = match cached {
        Some(nz) => {
            let shape_ok = nz.len() == spectra.len()
                && nz.iter().all(|row| row.len() == kernel.scales && row.iter().all(|v| v.len() == n));
            if !shape_ok {
                return Err(WaveletError::SpectrumMismatch("cached normalizers do not fit the spectra".into()));
            }
            nz
        }
        None => {
            let jobs: Vec<(usize, usize)> =
                (0..spectra.len()).flat_map(|m| (0..kernel.scales).map(move |j| (m, j))).collect();
            let norms: Vec<DVector<f64>> = jobs
                .par_iter()
                .map(|&(m, j)| column_l1_norms(&spectra[m].eigenvectors, &responses[m][j], &first.mass))
                .collect();
            let mut nz = vec![Vec::with_capacity(kernel.scales); spectra.len()];
            for (&(m, _), nv) in jobs.iter().zip(norms) {
                nz[m].push(nv);
            }
            nz
        }
    };
    for (m, row) in normalizers.iter().enumerate() {
        for (j, nv) in row.iter().enumerate() {
            if let Some((v, &x)) = nv.iter().enumerate().find(|(_, x)| !(**x >= NORM_FLOOR)) {
                return Err(WaveletError::ZeroColumnNorm { direction: m, scale: j, vertex: v, norm: x });
            }
        }
    }

    Ok(FilterBank { spectra, kernel, tight: tighten, scales, cutoffs, responses, scaling, normalizers, frame_bounds, raw_frame_bounds })
}

impl FilterBank {
    pub fn directions(&self) -> usize {
        self.spectra.len()
    }

    pub fn scale_count(&self) -> usize {
        self.kernel.scales
    }

    pub fn filter_count(&self) -> usize {
        self.directions() * self.scale_count()
    }

    pub fn n(&self) -> usize {
        self.spectra[0].n()
    }

    pub fn k(&self) -> usize {
        self.spectra[0].k()
    }

    pub fn mass(&self) -> &[f64] {
        &self.spectra[0].mass
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn is_tight(&self) -> bool {
        self.tight
    }

    pub fn spectrum(&self, m: usize) -> &Spectrum {
        &self.spectra[m]
    }

    pub fn spectra(&self) -> &[Spectrum] {
        &self.spectra
    }

    pub fn scales(&self, m: usize) -> &[f64] {
        &self.scales[m]
    }

    pub fn cutoff(&self, m: usize) -> f64 {
        self.cutoffs[m]
    }

    pub fn response(&self, m: usize, j: usize) -> &DVector<f64> {
        &self.responses[m][j]
    }

    pub fn scaling_response(&self, m: usize) -> &DVector<f64> {
        &self.scaling[m]
    }

    pub fn normalizer(&self, m: usize, j: usize) -> &DVector<f64> {
        &self.normalizers[m][j]
    }

    /// `(min, max)` of the frame function per direction, after tightening.
    pub fn frame_bounds(&self) -> &[(f64, f64)] {
        &self.frame_bounds
    }

    /// Frame bounds of the untightened kernels.
    pub fn raw_frame_bounds(&self) -> &[(f64, f64)] {
        &self.raw_frame_bounds
    }

    fn check_index(&self, m: usize, j: usize) -> Result<(), WaveletError> {
        if m >= self.directions() {
            return Err(WaveletError::IndexOutOfRange { what: "direction", index: m, bound: self.directions() });
        }
        if j >= self.scale_count() {
            return Err(WaveletError::IndexOutOfRange { what: "scale", index: j, bound: self.scale_count() });
        }
        Ok(())
    }

    fn check_rows(&self, rows: usize) -> Result<(), WaveletError> {
        if rows != self.n() {
            return Err(WaveletError::ShapeMismatch { expected: self.n(), got: rows });
        }
        Ok(())
    }

    fn localized(&self, m: usize, resp: &DVector<f64>, v: usize) -> DVector<f64> {
        let phi = &self.spectra[m].eigenvectors;
        let coef = phi.row(v).transpose().component_mul(resp) * self.mass()[v];
        phi * coef
    }

    /// Explicit (un-normalized) wavelet `Psi_{m, t_j, v}`.
    pub fn wavelet_at(&self, m: usize, j: usize, v: usize) -> Result<DVector<f64>, WaveletError> {
        self.check_index(m, j)?;
        if v >= self.n() {
            return Err(WaveletError::IndexOutOfRange { what: "vertex", index: v, bound: self.n() });
        }
        Ok(self.localized(m, &self.responses[m][j], v))
    }

    /// Explicit scaling function `xi_{m, v}`.
    pub fn scaling_at(&self, m: usize, v: usize) -> Result<DVector<f64>, WaveletError> {
        self.check_index(m, 0)?;
        if v >= self.n() {
            return Err(WaveletError::IndexOutOfRange { what: "vertex", index: v, bound: self.n() });
        }
        Ok(self.localized(m, &self.scaling[m], v))
    }

    /// `Phi_m^T A X`, shared by every scale of direction `m`.
    pub fn project(&self, m: usize, x: &DMatrix<f64>) -> Result<DMatrix<f64>, WaveletError> {
        self.check_index(m, 0)?;
        self.check_rows(x.nrows())?;
        let mut ax = x.clone();
        for (mut row, a) in ax.row_iter_mut().zip(self.mass()) {
            row *= *a;
        }
        Ok(self.spectra[m].eigenvectors.tr_mul(&ax))
    }

    /// Filter output from a projection made by [`FilterBank::project`].
    pub fn filter_projected(&self, m: usize, j: usize, proj: &DMatrix<f64>, normalized: bool) -> DMatrix<f64> {
        let mut c = proj.clone();
        for (mut row, g) in c.row_iter_mut().zip(self.responses[m][j].iter()) {
            row *= *g;
        }
        let mut y = &self.spectra[m].eigenvectors * c;
        if normalized {
            for (mut row, nv) in y.row_iter_mut().zip(self.normalizers[m][j].iter()) {
                row /= *nv;
            }
        }
        y
    }

    /// Filtered feature map: `diag(n)^-1 Phi g Phi^T A X` when normalized,
    /// without the leading diagonal otherwise. Row `v` is the mass inner
    /// product of `X` with `Psi_{t,v} / a(v)`.
    pub fn apply_filter(&self, m: usize, j: usize, x: &DMatrix<f64>, normalized: bool) -> Result<DMatrix<f64>, WaveletError> {
        self.check_index(m, j)?;
        let p = self.project(m, x)?;
        Ok(self.filter_projected(m, j, &p, normalized))
    }

    /// Euclidean adjoint of [`FilterBank::apply_filter`]:
    /// `A Phi g Phi^T diag(n)^-1 Y`.
    pub fn adjoint_apply(&self, m: usize, j: usize, y: &DMatrix<f64>, normalized: bool) -> Result<DMatrix<f64>, WaveletError> {
        self.check_index(m, j)?;
        self.check_rows(y.nrows())?;
        let mut z = y.clone();
        if normalized {
            for (mut row, nv) in z.row_iter_mut().zip(self.normalizers[m][j].iter()) {
                row /= *nv;
            }
        }
        let phi = &self.spectra[m].eigenvectors;
        let mut c = phi.tr_mul(&z);
        for (mut row, g) in c.row_iter_mut().zip(self.responses[m][j].iter()) {
            row *= *g;
        }
        let mut out = phi * c;
        for (mut row, a) in out.row_iter_mut().zip(self.mass()) {
            row *= *a;
        }
        Ok(out)
    }

    pub fn analyze(&self, f: &[f64]) -> Result<WaveletCoefficients, WaveletError> {
        self.check_rows(f.len())?;
        let mass = self.mass();
        let mut out = WaveletCoefficients { wavelet: Vec::new(), scaling: Vec::new(), sigma: Vec::new() };
        for (m, s) in self.spectra.iter().enumerate() {
            let sigma = s.project(f);
            let coeff = |resp: &DVector<f64>| {
                let mut w = &s.eigenvectors * sigma.component_mul(resp);
                for (x, a) in w.iter_mut().zip(mass) {
                    *x *= a;
                }
                w
            };
            out.wavelet.push(self.responses[m].iter().map(coeff).collect());
            out.scaling.push(coeff(&self.scaling[m]));
            out.sigma.push(sigma);
        }
        Ok(out)
    }

    /// Reconstruction `sum_j sum_v a(v)^-1 W_f(t_j, v) Psi_{t_j, v}` plus the
    /// scaling term, for one direction.
    pub fn synthesize(&self, coeffs: &WaveletCoefficients, m: usize) -> Result<DVector<f64>, WaveletError> {
        if !self.tight {
            return Err(WaveletError::NotTightFrame);
        }
        self.check_index(m, 0)?;
        let phi = &self.spectra[m].eigenvectors;
        // sum_v a(v)^-1 c(v) Psi_v = Phi (resp .* Phi^T c)
        let back = |c: &DVector<f64>, resp: &DVector<f64>| phi.tr_mul(c).component_mul(resp);
        let mut acc = back(&coeffs.scaling[m], &self.scaling[m]);
        for (c, r) in coeffs.wavelet[m].iter().zip(&self.responses[m]) {
            acc += back(c, r);
        }
        Ok(phi * acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::estimate_frames;
    use crate::mesh::Vec3;
    use crate::operators::{assemble_direction_set, assemble_lbo};
    use crate::spectrum::solve_eigs;
    use crate::synth::{cylinder, icosphere};
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_bank(k: usize, m: usize, tighten: bool) -> FilterBank {
        let mesh = cylinder(1.0, 2.0, 7, 3, true).unwrap();
        assert_eq!(mesh.vertex_count(), 30);
        let frames = estimate_frames(&mesh).unwrap();
        let ops = assemble_direction_set(&mesh, &frames, 50.0, m).unwrap();
        let spectra = ops.iter().map(|o| solve_eigs(o, k).unwrap()).collect();
        build_filterbank(spectra, KernelSpec::default(), tighten).unwrap()
    }

    fn random_matrix(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// `Psi` by direct summation over eigenpairs, one entry at a time.
    fn brute_psi(bank: &FilterBank, m: usize, j: usize) -> DMatrix<f64> {
        let s = bank.spectrum(m);
        let g = bank.response(m, j);
        DMatrix::from_fn(bank.n(), bank.n(), |u, v| {
            (0..s.k()).map(|k| s.mass[v] * g[k] * s.eigenvectors[(v, k)] * s.eigenvectors[(u, k)]).sum()
        })
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel_g(0.0).unwrap(), 0.0);
        assert!((kernel_g(1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((kernel_g(2.0).unwrap() - 0.199148).abs() < 1e-6);
        assert!((kernel_g(2.0).unwrap() - 4.0 * (-3.0f64).exp()).abs() < 1e-15);
        assert_eq!(kernel_h(0.0, 3.0).unwrap(), 1.0);
        assert!((kernel_h(3.0, 3.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!(kernel_h(30.0, 3.0).unwrap() < 1e-300);
        assert_eq!(kernel_g(-1.0), Err(WaveletError::NegativeInput(-1.0)));
        assert_eq!(kernel_h(1.0, 0.0), Err(WaveletError::NonpositiveCutoff(0.0)));
        // g peaks at 1
        for x in [0.5, 0.9, 0.99, 1.01, 1.1, 2.0] {
            assert!(kernel_g(x).unwrap() < 1.0);
        }
    }

    #[test]
    fn scale_rule() {
        let t = select_scales(10.0, 2).unwrap();
        assert!((t[0] - 0.1).abs() < 1e-15 && (t[1] - 4.0).abs() < 1e-12);
        assert_eq!(select_scales(10.0, 1).unwrap(), vec![0.2]);
        let t = select_scales(3.7, 6).unwrap();
        assert!(t.windows(2).all(|w| w[0] < w[1]) && t[0] > 0.0);
        assert_eq!(select_scales(0.0, 2), Err(WaveletError::NonpositiveLambdaMax(0.0)));
    }

    #[test]
    fn tight_frame_and_bounds() {
        let bank = small_bank(20, 1, true);
        for m in 0..bank.directions() {
            let g = frame_function(bank.scaling_response(m), &bank.responses[m]);
            assert!(g.iter().all(|x| (x - 1.0).abs() < 1e-10));
            let (lo, hi) = bank.frame_bounds()[m];
            assert!((lo - 1.0).abs() < 1e-10 && (hi - 1.0).abs() < 1e-10);
        }
        let loose = small_bank(20, 1, false);
        let (lo, hi) = loose.frame_bounds()[0];
        assert_eq!((lo, hi), loose.raw_frame_bounds()[0]);
        assert!(lo > 0.0 && hi >= lo);
    }

    #[test]
    fn sixteen_filters() {
        let bank = small_bank(20, 4, false);
        assert_eq!(bank.filter_count(), 16);
        for m in 0..4 {
            for j in 0..4 {
                assert!(bank.normalizer(m, j).iter().all(|&x| x > 0.0));
            }
        }
    }

    #[test]
    fn wavelet_columns_match_direct_sum() {
        let bank = small_bank(20, 2, false);
        for m in 0..2 {
            for j in 0..4 {
                let dense = brute_psi(&bank, m, j);
                for v in 0..bank.n() {
                    let w = bank.wavelet_at(m, j, v).unwrap();
                    assert!((w - dense.column(v)).amax() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn wavelet_inner_products() {
        let bank = small_bank(20, 1, false);
        let s = bank.spectrum(0);
        let a = DVector::from_column_slice(&s.mass);
        for v in [0, 7, 29] {
            let w = bank.wavelet_at(0, 2, v).unwrap();
            for k in 0..s.k() {
                let ip = s.eigenvectors.column(k).component_mul(&a).dot(&w);
                let want = s.mass[v] * bank.response(0, 2)[k] * s.eigenvectors[(v, k)];
                assert!((ip - want).abs() < 1e-10);
            }
            // no constant component in the mass inner product
            assert!(a.dot(&w).abs() < 1e-10);
        }
        assert!(matches!(bank.wavelet_at(0, 4, 0), Err(WaveletError::IndexOutOfRange { what: "scale", .. })));
        assert!(matches!(bank.wavelet_at(0, 0, 30), Err(WaveletError::IndexOutOfRange { what: "vertex", .. })));
    }

    #[test]
    fn rigid_motion_keeps_isotropic_wavelets() {
        let mesh = icosphere(1).unwrap();
        let rot = Rotation3::from_euler_angles(0.2, 1.0, -0.4);
        let moved = mesh.map_vertices(|p| rot * p + Vec3::new(3.0, 0.0, 1.0)).unwrap();
        let a = solve_eigs(&assemble_lbo(&mesh).unwrap(), 9).unwrap();
        let b = solve_eigs(&assemble_lbo(&moved).unwrap(), 9).unwrap();
        // few eigenpairs: keep every peak above the first nonzero eigenvalue
        let kernel = KernelSpec { span: 4.0, ..KernelSpec::default() };
        let ba = build_filterbank(vec![a], kernel, false).unwrap();
        let bb = build_filterbank(vec![b], kernel, false).unwrap();
        for j in 0..4 {
            for v in [0, 11, 41] {
                let d = ba.wavelet_at(0, j, v).unwrap() - bb.wavelet_at(0, j, v).unwrap();
                assert!(d.amax() < 1e-6);
            }
        }
    }

    #[test]
    fn analysis_examples() {
        let bank = small_bank(20, 1, true);
        let s = bank.spectrum(0);
        let k = 5;
        let f: Vec<f64> = s.eigenvectors.column(k).iter().copied().collect();
        let c = bank.analyze(&f).unwrap();
        for j in 0..4 {
            for v in 0..bank.n() {
                let want = s.mass[v] * bank.response(0, j)[k] * s.eigenvectors[(v, k)];
                assert!((c.wavelet[0][j][v] - want).abs() < 1e-12);
            }
        }
        let c = bank.analyze(&vec![2.0; bank.n()]).unwrap();
        assert!(c.wavelet[0].iter().all(|w| w.amax() < 1e-10));
        assert!(c.scaling[0].amax() > 1e-3);
        assert!(matches!(bank.analyze(&[1.0]), Err(WaveletError::ShapeMismatch { .. })));
    }

    #[test]
    fn analysis_matches_dense_psi() {
        let bank = small_bank(20, 2, false);
        let f = random_matrix(bank.n(), 1, 3);
        let c = bank.analyze(f.as_slice()).unwrap();
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(bank.mass()));
        for m in 0..2 {
            for j in 0..4 {
                // W_f(v) = <Psi_v, f>_A
                let want = brute_psi(&bank, m, j).transpose() * &a * &f;
                assert!((&c.wavelet[m][j] - want.column(0)).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn synthesis_reconstructs() {
        let bank = small_bank(20, 1, true);
        let s = bank.spectrum(0);
        let coef = random_matrix(20, 1, 5);
        let f = &s.eigenvectors * coef.column(0);
        let back = bank.synthesize(&bank.analyze(f.as_slice()).unwrap(), 0).unwrap();
        assert!((&back - &f).norm() / f.norm() < 1e-6);

        let phi0: Vec<f64> = s.eigenvectors.column(0).iter().copied().collect();
        let c = bank.analyze(&phi0).unwrap();
        let scaling_only = s.eigenvectors.clone() * s.eigenvectors.tr_mul(&c.scaling[0]).component_mul(bank.scaling_response(0));
        assert!((scaling_only - DVector::from_vec(phi0.clone())).amax() < 1e-8);

        // out-of-span energy is dropped: result is the A-orthogonal projection
        let g = random_matrix(bank.n(), 1, 8);
        let back = bank.synthesize(&bank.analyze(g.as_slice()).unwrap(), 0).unwrap();
        let proj = &s.eigenvectors * s.project(g.as_slice());
        assert!((&back - &proj).norm() / proj.norm() < 1e-6);

        let loose = small_bank(20, 1, false);
        let c = loose.analyze(&phi0).unwrap();
        assert_eq!(loose.synthesize(&c, 0).unwrap_err(), WaveletError::NotTightFrame);
    }

    #[test]
    fn apply_filter_matches_dense_operator() {
        let bank = small_bank(20, 4, false);
        let x = random_matrix(bank.n(), 5, 11);
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(bank.mass()));
        let a_inv = DMatrix::from_diagonal(&DVector::from_iterator(bank.n(), bank.mass().iter().map(|m| 1.0 / m)));
        for m in 0..4 {
            for j in 0..4 {
                let psi = brute_psi(&bank, m, j);
                let l1 = DVector::from_iterator(bank.n(), psi.column_iter().map(|c| c.abs().sum()));
                let psi_bar = &psi * DMatrix::from_diagonal(&l1.map(|x| 1.0 / x));
                for v in 0..bank.n() {
                    assert!((psi_bar.column(v).abs().sum() - 1.0).abs() < 1e-9);
                }
                // mass-adjoint of Psi_bar applied to X
                let want = &a_inv * psi_bar.transpose() * &a * &x;
                let got = bank.apply_filter(m, j, &x, true).unwrap();
                assert!((got - want).amax() < 1e-10, "filter ({m}, {j})");
                assert!((bank.normalizer(m, j) - &l1).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn apply_filter_annihilates_constants_and_is_linear() {
        let bank = small_bank(20, 2, false);
        let ones = DMatrix::from_element(bank.n(), 3, 1.7);
        for j in 0..4 {
            assert!(bank.apply_filter(1, j, &ones, true).unwrap().amax() < 1e-9);
        }
        let x = random_matrix(bank.n(), 4, 1);
        let y = random_matrix(bank.n(), 4, 2);
        let lhs = bank.apply_filter(0, 1, &(&x * 2.0 - &y * 0.5), true).unwrap();
        let rhs = bank.apply_filter(0, 1, &x, true).unwrap() * 2.0 - bank.apply_filter(0, 1, &y, true).unwrap() * 0.5;
        assert!((lhs - rhs).amax() < 1e-12);
        assert!(matches!(bank.apply_filter(0, 0, &DMatrix::zeros(3, 2), true), Err(WaveletError::ShapeMismatch { .. })));
    }

    #[test]
    fn adjoint_identity() {
        let bank = small_bank(20, 2, false);
        let x = random_matrix(bank.n(), 4, 21);
        let y = random_matrix(bank.n(), 4, 22);
        for normalized in [false, true] {
            for j in 0..4 {
                let lhs = bank.apply_filter(1, j, &x, normalized).unwrap().dot(&y);
                let rhs = x.dot(&bank.adjoint_apply(1, j, &y, normalized).unwrap());
                assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn cluster_remix_leaves_wavelets_unchanged() {
        // l = 1 and l = 2 harmonics are exactly degenerate on an icosphere
        let mesh = icosphere(2).unwrap();
        let spec = solve_eigs(&assemble_lbo(&mesh).unwrap(), 16).unwrap();
        let mut mixed = spec.clone();
        for (start, len) in [(1usize, 3usize), (4, 5)] {
            let q = random_matrix(len, len, 40 + start as u64).qr().q();
            let block = spec.eigenvectors.columns(start, len) * q;
            mixed.eigenvectors.columns_mut(start, len).copy_from(&block);
        }
        let kernel = KernelSpec { span: 4.0, ..KernelSpec::default() };
        let a = build_filterbank(vec![spec], kernel, false).unwrap();
        let b = build_filterbank(vec![mixed], kernel, false).unwrap();
        for j in 0..4 {
            for v in [0, 17, 100, 161] {
                let d = a.wavelet_at(0, j, v).unwrap() - b.wavelet_at(0, j, v).unwrap();
                assert!(d.amax() < 1e-8, "scale {j} vertex {v}: {}", d.amax());
            }
        }
    }

    #[test]
    fn mismatched_spectra_rejected() {
        let mesh = icosphere(1).unwrap();
        let ops = assemble_lbo(&mesh).unwrap();
        let a = solve_eigs(&ops, 8).unwrap();
        let b = solve_eigs(&ops, 9).unwrap();
        assert!(matches!(build_filterbank(vec![a, b], KernelSpec::default(), false), Err(WaveletError::SpectrumMismatch(_))));
        assert!(matches!(build_filterbank(vec![], KernelSpec::default(), false), Err(WaveletError::SpectrumMismatch(_))));
    }
}
