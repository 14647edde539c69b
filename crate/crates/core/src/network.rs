//! The learnable pipeline and its hand-written backward pass.
//!
//! Per shape: a per-vertex encoder `3 -> hidden -> width` (affine + SELU),
//! `layers` AMLCONV layers
//!
//! ```text
//! Y = Norm(SELU(sum_{m,j} Psi_bar_{m,j}^T X Theta_{m,j}))
//! ```
//!
//! an optional perturbation layer (fixed row shuffle, per-feature scale,
//! SELU, Norm) and an affine classifier over template vertices. Everything is
//! `f64`; parameters are `DMatrix` and vectors are stored as `1 x D` rows so
//! one optimizer loop covers all tensors.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wavelets::{FilterBank, WaveletError};

pub const SELU_LAMBDA: f64 = 1.05070098;
pub const SELU_ALPHA: f64 = 1.67326324;
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("normalization needs at least two vertices")]
    SingleVertexShape,
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    #[error("permutation covers {expected} vertices, input has {got}")]
    PermutationLengthMismatch { expected: usize, got: usize },
    #[error("label {label} at vertex {vertex} is outside [0, {classes})")]
    LabelOutOfRange { vertex: usize, label: usize, classes: usize },
    #[error("no training shapes")]
    EmptyDataset,
    #[error("loss became {loss} at epoch {epoch} on shape {shape}")]
    NonFiniteLoss { epoch: usize, shape: usize, loss: f64 },
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
}

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

/// Derivative of [`selu`] (right derivative at 0 taken from the left branch).
pub fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

fn add_row(z: &mut DMatrix<f64>, b: &DMatrix<f64>) {
    for (j, mut col) in z.column_iter_mut().enumerate() {
        col.add_scalar_mut(b[j]);
    }
}

fn column_sums(x: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_iterator(1, x.ncols(), x.column_iter().map(|c| c.sum()))
}

#[derive(Clone, Debug)]
pub struct NormCache {
    xhat: DMatrix<f64>,
    inv_std: Vec<f64>,
}

/// Per-feature standardization over the vertices of one shape, then
/// `gamma * xhat + beta`.
pub fn norm_forward(x: &DMatrix<f64>, gamma: &DMatrix<f64>, beta: &DMatrix<f64>) -> Result<(DMatrix<f64>, NormCache), NetworkError> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(NetworkError::SingleVertexShape);
    }
    if gamma.len() != d || beta.len() != d {
        return Err(NetworkError::ShapeMismatch { what: "norm parameters", expected: d, got: gamma.len() });
    }
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(d);
    for mut col in xhat.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
        let var = col.norm_squared() / n as f64;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        col *= is;
        inv_std.push(is);
    }
    let mut y = xhat.clone();
    for (j, mut col) in y.column_iter_mut().enumerate() {
        col *= gamma[j];
        col.add_scalar_mut(beta[j]);
    }
    Ok((y, NormCache { xhat, inv_std }))
}

/// Returns `(dX, dgamma, dbeta)`.
pub fn norm_backward(dy: &DMatrix<f64>, gamma: &DMatrix<f64>, cache: &NormCache) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = dy.nrows() as f64;
    let dbeta = column_sums(dy);
    let dgamma = DMatrix::from_iterator(1, dy.ncols(), dy.column_iter().zip(cache.xhat.column_iter()).map(|(a, b)| a.dot(&b)));
    let mut dx = dy.clone();
    for (j, mut col) in dx.column_iter_mut().enumerate() {
        col *= gamma[j];
        let xh = cache.xhat.column(j);
        let s1 = col.sum();
        let s2 = col.dot(&xh);
        for (v, x) in col.iter_mut().zip(xh.iter()) {
            *v = cache.inv_std[j] * (*v - s1 / n - x * s2 / n);
        }
    }
    (dx, dgamma, dbeta)
}

/// Mean cross-entropy over vertices and its gradient wrt the logits.
pub fn loss_ce(logits: &DMatrix<f64>, labels: &[usize]) -> Result<(f64, DMatrix<f64>), NetworkError> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(NetworkError::ShapeMismatch { what: "labels", expected: n, got: labels.len() });
    }
    if let Some((v, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
        return Err(NetworkError::LabelOutOfRange { vertex: v, label: l, classes: c });
    }
    let mut grad = DMatrix::zeros(n, c);
    let mut loss = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.max();
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - logits[(i, labels[i])];
        for k in 0..c {
            grad[(i, k)] = (logits[(i, k)] - lse).exp() / n as f64;
        }
        grad[(i, labels[i])] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

/// Row-wise argmax, first index on ties.
pub fn argmax_rows(x: &DMatrix<f64>) -> Vec<usize> {
    x.row_iter()
        .map(|r| {
            let mut best = 0;
            for (k, v) in r.iter().enumerate() {
                if *v > r[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub width: usize,
    pub layers: usize,
    pub directions: usize,
    pub scales: usize,
    pub classes: usize,
    /// Vertex count the perturbation permutation is drawn for.
    pub vertices: usize,
    pub perturb: bool,
}

impl ModelConfig {
    pub fn new(classes: usize, vertices: usize, perturb: bool) -> Self {
        ModelConfig { input_dim: 3, hidden: 64, width: 128, layers: 4, directions: 4, scales: 4, classes, vertices, perturb }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: DMatrix<f64>,
    pub bias: DMatrix<f64>,
}

impl Affine {
    fn init(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> Self {
        Affine { weight: uniform(rng, d_in, d_out, d_in), bias: DMatrix::zeros(1, d_out) }
    }

    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * &self.weight;
        add_row(&mut z, &self.bias);
        z
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub gamma: DMatrix<f64>,
    pub beta: DMatrix<f64>,
}

impl NormParams {
    fn init(d: usize) -> Self {
        NormParams { gamma: DMatrix::from_element(1, d, 1.0), beta: DMatrix::zeros(1, d) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// Indexed `m * J + j`, each `D_in x D_out`.
    pub theta: Vec<DMatrix<f64>>,
    pub norm: NormParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationParams {
    /// `X_perm[i] = X[perm[i]]`.
    pub perm: Vec<usize>,
    pub scale: DMatrix<f64>,
    pub norm: NormParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Vec<Affine>,
    pub layers: Vec<LayerParams>,
    pub perturbation: Option<PerturbationParams>,
    pub classifier: Affine,
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, fan_in: usize) -> DMatrix<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    // fill row-major so the draw order does not depend on storage order
    let data: Vec<f64> = (0..r * c).map(|_| rng.random_range(-bound..bound)).collect();
    DMatrix::from_row_slice(r, c, &data)
}

/// Seeded uniform random permutation of `0..n`.
pub fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7065_7274_7572_62);
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng);
    p
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let encoder = vec![Affine::init(&mut rng, c.input_dim, c.hidden), Affine::init(&mut rng, c.hidden, c.width)];
        let filters = c.directions * c.scales;
        let layers = (0..c.layers)
            .map(|_| LayerParams {
                theta: (0..filters).map(|_| uniform(&mut rng, c.width, c.width, c.width * filters)).collect(),
                norm: NormParams::init(c.width),
            })
            .collect();
        let perturbation = c.perturb.then(|| PerturbationParams {
            perm: seeded_permutation(c.vertices, seed),
            scale: DMatrix::from_element(1, c.width, 1.0),
            norm: NormParams::init(c.width),
        });
        let classifier = Affine::init(&mut rng, c.width, c.classes);
        Model { config, encoder, layers, perturbation, classifier }
    }

    /// Learnable tensors with stable names, in optimizer order.
    pub fn tensors(&self) -> Vec<(String, &DMatrix<f64>)> {
        let mut out = Vec::new();
        for (i, a) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{i}.weight"), &a.weight));
            out.push((format!("encoder.{i}.bias"), &a.bias));
        }
        let j_count = self.config.scales;
        for (l, layer) in self.layers.iter().enumerate() {
            for (f, t) in layer.theta.iter().enumerate() {
                out.push((format!("conv.{l}.theta.{}.{}", f / j_count, f % j_count), t));
            }
            out.push((format!("conv.{l}.norm.gamma"), &layer.norm.gamma));
            out.push((format!("conv.{l}.norm.beta"), &layer.norm.beta));
        }
        if let Some(p) = &self.perturbation {
            out.push(("perturb.scale".into(), &p.scale));
            out.push(("perturb.norm.gamma".into(), &p.norm.gamma));
            out.push(("perturb.norm.beta".into(), &p.norm.beta));
        }
        out.push(("classifier.weight".into(), &self.classifier.weight));
        out.push(("classifier.bias".into(), &self.classifier.bias));
        out
    }

    /// Same order as [`Model::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let mut out = Vec::new();
        for a in &mut self.encoder {
            out.push(&mut a.weight);
            out.push(&mut a.bias);
        }
        for layer in &mut self.layers {
            out.extend(layer.theta.iter_mut());
            out.push(&mut layer.norm.gamma);
            out.push(&mut layer.norm.beta);
        }
        if let Some(p) = &mut self.perturbation {
            out.push(&mut p.scale);
            out.push(&mut p.norm.gamma);
            out.push(&mut p.norm.beta);
        }
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_bank(&self, bank: &FilterBank) -> Result<(), NetworkError> {
        if bank.directions() != self.config.directions {
            return Err(NetworkError::ShapeMismatch { what: "bank directions", expected: self.config.directions, got: bank.directions() });
        }
        if bank.scale_count() != self.config.scales {
            return Err(NetworkError::ShapeMismatch { what: "bank scales", expected: self.config.scales, got: bank.scale_count() });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct AffineCache {
    input: DMatrix<f64>,
    pre: DMatrix<f64>,
}

#[derive(Clone, Debug)]
struct ConvCache {
    filtered: Vec<DMatrix<f64>>,
    pre: DMatrix<f64>,
    norm: NormCache,
}

#[derive(Clone, Debug)]
struct PerturbCache {
    permuted: DMatrix<f64>,
    pre: DMatrix<f64>,
    norm: NormCache,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    encoder: Vec<AffineCache>,
    conv: Vec<ConvCache>,
    perturb: Option<PerturbCache>,
    head_input: DMatrix<f64>,
    /// Output of the last AMLCONV layer, used as matching descriptors.
    pub descriptors: DMatrix<f64>,
    pub logits: DMatrix<f64>,
}

impl ForwardPass {
    /// Smallest `|x|` over every SELU input of the pass. Central differences
    /// with a step below this never straddle the kink at 0.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.encoder
            .iter()
            .map(|c| &c.pre)
            .chain(self.conv.iter().map(|c| &c.pre))
            .chain(self.perturb.iter().map(|c| &c.pre))
            .map(|m| m.abs().min())
            .fold(f64::INFINITY, f64::min)
    }
}

fn conv_forward(params: &LayerParams, x: &DMatrix<f64>, bank: &FilterBank) -> Result<(DMatrix<f64>, ConvCache), NetworkError> {
    let j_count = bank.scale_count();
    if params.theta.len() != bank.filter_count() {
        return Err(NetworkError::ShapeMismatch { what: "theta count", expected: bank.filter_count(), got: params.theta.len() });
    }
    let d_out = params.theta[0].ncols();
    if params.theta[0].nrows() != x.ncols() {
        return Err(NetworkError::ShapeMismatch { what: "layer input width", expected: params.theta[0].nrows(), got: x.ncols() });
    }
    let mut pre = DMatrix::zeros(x.nrows(), d_out);
    let mut filtered = Vec::with_capacity(bank.filter_count());
    for m in 0..bank.directions() {
        let proj = bank.project(m, x)?;
        for j in 0..j_count {
            let f = bank.filter_projected(m, j, &proj, true);
            pre.gemm(1.0, &f, &params.theta[m * j_count + j], 1.0);
            filtered.push(f);
        }
    }
    let act = pre.map(selu);
    let (y, norm) = norm_forward(&act, &params.norm.gamma, &params.norm.beta)?;
    Ok((y, ConvCache { filtered, pre, norm }))
}

/// One AMLCONV layer.
pub fn amlconv_forward(params: &LayerParams, x: &DMatrix<f64>, bank: &FilterBank) -> Result<DMatrix<f64>, NetworkError> {
    conv_forward(params, x, bank).map(|(y, _)| y)
}

fn perturb_core(params: &PerturbationParams, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, PerturbCache), NetworkError> {
    if params.perm.len() != x.nrows() {
        return Err(NetworkError::PermutationLengthMismatch { expected: params.perm.len(), got: x.nrows() });
    }
    let permuted = x.select_rows(params.perm.iter());
    let mut pre = permuted.clone();
    for (j, mut col) in pre.column_iter_mut().enumerate() {
        col *= params.scale[j];
    }
    let (y, norm) = norm_forward(&pre.map(selu), &params.norm.gamma, &params.norm.beta)?;
    Ok((y, PerturbCache { permuted, pre, norm }))
}

/// Fixed row shuffle, per-feature scale, SELU, Norm.
pub fn perturb_forward(params: &PerturbationParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>, NetworkError> {
    perturb_core(params, x).map(|(y, _)| y)
}

/// Full forward pass with the caches needed by [`backward`].
pub fn forward(model: &Model, coords: &DMatrix<f64>, bank: &FilterBank) -> Result<ForwardPass, NetworkError> {
    model.check_bank(bank)?;
    if coords.nrows() != bank.n() {
        return Err(NetworkError::ShapeMismatch { what: "mesh vertices", expected: bank.n(), got: coords.nrows() });
    }
    if coords.ncols() != model.config.input_dim {
        return Err(NetworkError::ShapeMismatch { what: "input width", expected: model.config.input_dim, got: coords.ncols() });
    }
    let mut h = coords.clone();
    let mut encoder = Vec::new();
    for a in &model.encoder {
        let pre = a.forward(&h);
        let out = pre.map(selu);
        encoder.push(AffineCache { input: h, pre });
        h = out;
    }
    let mut conv = Vec::new();
    for layer in &model.layers {
        let (y, cache) = conv_forward(layer, &h, bank)?;
        conv.push(cache);
        h = y;
    }
    let descriptors = h.clone();
    let perturb = match &model.perturbation {
        Some(p) => {
            let (y, cache) = perturb_core(p, &h)?;
            h = y;
            Some(cache)
        }
        None => None,
    };
    let logits = model.classifier.forward(&h);
    Ok(ForwardPass { encoder, conv, perturb, head_input: h, descriptors, logits })
}

pub fn model_forward(model: &Model, coords: &DMatrix<f64>, bank: &FilterBank) -> Result<DMatrix<f64>, NetworkError> {
    forward(model, coords, bank).map(|f| f.logits)
}

/// Descriptors from the last AMLCONV layer; runs no perturbation or head.
pub fn descriptors(model: &Model, coords: &DMatrix<f64>, bank: &FilterBank) -> Result<DMatrix<f64>, NetworkError> {
    model.check_bank(bank)?;
    if coords.nrows() != bank.n() {
        return Err(NetworkError::ShapeMismatch { what: "mesh vertices", expected: bank.n(), got: coords.nrows() });
    }
    let mut h = coords.clone();
    for a in &model.encoder {
        h = a.forward(&h).map(selu);
    }
    for layer in &model.layers {
        h = amlconv_forward(layer, &h, bank)?;
    }
    Ok(h)
}

fn affine_grads(cache: &AffineCache, dpre: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (cache.input.tr_mul(dpre), column_sums(dpre))
}

/// Gradients of the loss wrt every tensor, in [`Model::tensors`] order,
/// given the gradient wrt the logits.
pub fn backward(model: &Model, pass: &ForwardPass, bank: &FilterBank, dlogits: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let mut head = vec![pass.head_input.tr_mul(dlogits), column_sums(dlogits)];
    let mut dh = dlogits * model.classifier.weight.transpose();

    let mut perturb_grads = Vec::new();
    if let (Some(p), Some(c)) = (&model.perturbation, &pass.perturb) {
        let (dact, dgamma, dbeta) = norm_backward(&dh, &p.norm.gamma, &c.norm);
        let dpre = dact.zip_map(&c.pre, |g, z| g * selu_grad(z));
        let dscale = DMatrix::from_iterator(1, dpre.ncols(), dpre.column_iter().zip(c.permuted.column_iter()).map(|(a, b)| a.dot(&b)));
        let mut dperm = dpre;
        for (j, mut col) in dperm.column_iter_mut().enumerate() {
            col *= p.scale[j];
        }
        let mut dx = DMatrix::zeros(dperm.nrows(), dperm.ncols());
        for (i, &src) in p.perm.iter().enumerate() {
            dx.row_mut(src).copy_from(&dperm.row(i));
        }
        dh = dx;
        perturb_grads = vec![dscale, dgamma, dbeta];
    }

    let j_count = bank.scale_count();
    let mut conv_grads: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(model.layers.len());
    for (layer, cache) in model.layers.iter().zip(&pass.conv).rev() {
        let (dact, dgamma, dbeta) = norm_backward(&dh, &layer.norm.gamma, &cache.norm);
        let dpre = dact.zip_map(&cache.pre, |g, z| g * selu_grad(z));
        let mut grads: Vec<DMatrix<f64>> = cache.filtered.iter().map(|f| f.tr_mul(&dpre)).collect();
        let mut dx = DMatrix::zeros(dpre.nrows(), layer.theta[0].nrows());
        for m in 0..bank.directions() {
            // sum_j A Phi g_j Phi^T D_j^-1 (dpre Theta_j^T), with one final Phi product
            let phi = &bank.spectrum(m).eigenvectors;
            let mut coef = DMatrix::zeros(phi.ncols(), dx.ncols());
            for j in 0..j_count {
                let mut df = &dpre * layer.theta[m * j_count + j].transpose();
                for (mut row, nv) in df.row_iter_mut().zip(bank.normalizer(m, j).iter()) {
                    row /= *nv;
                }
                let mut c = phi.tr_mul(&df);
                for (mut row, g) in c.row_iter_mut().zip(bank.response(m, j).iter()) {
                    row *= *g;
                }
                coef += c;
            }
            dx.gemm(1.0, phi, &coef, 1.0);
        }
        for (mut row, a) in dx.row_iter_mut().zip(bank.mass()) {
            row *= *a;
        }
        dh = dx;
        grads.push(dgamma);
        grads.push(dbeta);
        conv_grads.push(grads);
    }
    conv_grads.reverse();

    let mut enc_grads = Vec::new();
    for (a, cache) in model.encoder.iter().zip(&pass.encoder).rev() {
        let dpre = dh.zip_map(&cache.pre, |g, z| g * selu_grad(z));
        let (dw, db) = affine_grads(cache, &dpre);
        dh = &dpre * a.weight.transpose();
        enc_grads.push((dw, db));
    }
    enc_grads.reverse();

    let mut out = Vec::new();
    for (dw, db) in enc_grads {
        out.push(dw);
        out.push(db);
    }
    for g in conv_grads {
        out.extend(g);
    }
    out.extend(perturb_grads);
    out.append(&mut head);
    out
}

/// Loss and gradients for one labeled shape.
pub fn loss_and_grads(
    model: &Model,
    coords: &DMatrix<f64>,
    labels: &[usize],
    bank: &FilterBank,
) -> Result<(f64, usize, Vec<DMatrix<f64>>), NetworkError> {
    let pass = forward(model, coords, bank)?;
    let (loss, dlogits) = loss_ce(&pass.logits, labels)?;
    let correct = argmax_rows(&pass.logits).iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok((loss, correct, backward(model, &pass, bank, &dlogits)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, weight_decay: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    m: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
}

impl AdamState {
    pub fn new(params: &[&DMatrix<f64>]) -> Self {
        let zeros: Vec<DMatrix<f64>> = params.iter().map(|p| DMatrix::zeros(p.nrows(), p.ncols())).collect();
        AdamState { step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One Adam update; weight decay is added to the gradient.
pub fn adam_step(params: &mut [&mut DMatrix<f64>], grads: &[DMatrix<f64>], state: &mut AdamState, cfg: &AdamConfig) -> Result<(), NetworkError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NetworkError::ShapeMismatch { what: "tensor count", expected: params.len(), got: grads.len() });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(NetworkError::ShapeMismatch { what: "gradient size", expected: p.len(), got: g.len() });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for i in 0..p.len() {
            let gi = g[i] + cfg.weight_decay * p[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

/// Training history row; loss and accuracy are measured on the forward pass
/// preceding each update.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

pub struct TrainItem<'a> {
    pub coords: &'a DMatrix<f64>,
    pub labels: &'a [usize],
    pub bank: &'a FilterBank,
}

/// Trains in place, one full-shape step per item, items shuffled each
/// epoch. `on_epoch` returns `false` to stop early.
pub fn train_model(
    model: &mut Model,
    items: &[TrainItem<'_>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Model) -> bool,
) -> Result<Vec<EpochRecord>, NetworkError> {
    if items.is_empty() {
        return Err(NetworkError::EmptyDataset);
    }
    let mut state = AdamState::new(&model.tensors().into_iter().map(|(_, t)| t).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6f72_6465_72);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut total) = (0.0, 0usize, 0usize);
        for &i in &order {
            let it = &items[i];
            let (loss, ok, grads) = loss_and_grads(model, it.coords, it.labels, it.bank)?;
            if !loss.is_finite() {
                return Err(NetworkError::NonFiniteLoss { epoch, shape: i, loss });
            }
            adam_step(&mut model.tensors_mut(), &grads, &mut state, &cfg.adam)?;
            loss_sum += loss;
            correct += ok;
            total += it.labels.len();
        }
        let rec = EpochRecord { epoch, loss: loss_sum / items.len() as f64, accuracy: correct as f64 / total as f64 };
        log::debug!("epoch {epoch}: loss {:.6} accuracy {:.4}", rec.loss, rec.accuracy);
        let go_on = on_epoch(&rec, model);
        history.push(rec);
        if !go_on {
            break;
        }
    }
    Ok(history)
}

pub fn train(config: ModelConfig, items: &[TrainItem<'_>], cfg: &TrainConfig) -> Result<(Model, Vec<EpochRecord>), NetworkError> {
    let mut model = Model::new(config, cfg.seed);
    let history = train_model(&mut model, items, cfg, |_, _| true)?;
    Ok((model, history))
}

/// Per-vertex features for the encoder: the coordinates as an `N x 3` matrix.
pub fn coordinate_features(vertices: &[crate::mesh::Vec3]) -> DMatrix<f64> {
    DMatrix::from_fn(vertices.len(), 3, |i, j| vertices[i][j])
}

/// Softmax rows, for the alternative matching mode.
pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.max();
        row.apply(|z| *z = (*z - max).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Central-difference gradient of `f` at every entry of `x`.
pub fn numeric_gradient(x: &DMatrix<f64>, step: f64, mut f: impl FnMut(&DMatrix<f64>) -> f64) -> DMatrix<f64> {
    let mut probe = x.clone();
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        g[i] = (up - down) / (2.0 * step);
    }
    g
}

/// `|a - b| / max(|a|, |b|, floor)`, elementwise maximum.
pub fn max_relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}
