//! The batch commands behind the `amlconv` binary. Each returns a summary
//! for the caller to print; all files are written under the config's `out`
//! and `cache` directories.
//!
//! Exit codes: 1 usage, 2 validation, 3 numerical, 4 I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, MatchMode};
use crate::container::{self, Container, ContainerError, Kind};
use crate::corresp::{cumulative_curve, evaluate_with, match_nn, CorrespError, DistanceTable};
use crate::curvature::{estimate_frames, CurvatureError};
use crate::mesh::{load_mesh_auto, MeshError, TriMesh};
use crate::network::{
    coordinate_features, descriptors, model_forward, softmax_rows, train_model, AdamConfig, EpochRecord, Model, ModelConfig,
    NetworkError, TrainConfig, TrainItem,
};
use crate::operators::{assemble_direction_set, AnisoConfig, OperatorError};
use crate::spectrum::{solve_eigs, Spectrum, SpectrumError};
use crate::synth::{make_dataset, read_manifest, Dataset, DatasetManifest, SynthError};
use crate::wavelets::{build_filterbank, FilterBank, KernelSpec, WaveletError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Corresp(#[from] CorrespError),
    #[error("no cached spectrum at {path} (run `spectrum` first)")]
    MissingCache { path: PathBuf },
    #[error("cached spectrum {path} is stale: {reason}")]
    StaleCache { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Container { path: PathBuf, source: ContainerError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        use PipelineError::*;
        match self {
            Usage(_) => 1,
            Config(ConfigError::Io { .. }) | Io { .. } | Container { .. } | MissingCache { .. } => 4,
            Mesh(MeshError::Io { .. }) | Synth(SynthError::Io { .. }) => 4,
            Spectrum(_) | Curvature(_) => 3,
            Wavelet(WaveletError::ZeroColumnNorm { .. } | WaveletError::NotTightFrame) => 3,
            Network(NetworkError::NonFiniteLoss { .. }) => 3,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.into(), source }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    container::write_atomic(path, text.as_bytes()).map_err(|source| PipelineError::Container { path: path.into(), source })
}

fn echo_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    write_file(&dir.join("config.json"), &cfg.to_json())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "mesh".into())
}

/// `<cache>/<mesh>.<alpha>.<m>.spec`
pub fn spectrum_path(cfg: &ExperimentConfig, mesh_path: &Path, m: usize) -> PathBuf {
    cfg.cache.join(format!("{}.{}.{m}.spec", stem(mesh_path), cfg.alpha))
}

/// `<cache>/<mesh>.<alpha>.<M>x<J>[.tight].fbk`
pub fn filterbank_path(cfg: &ExperimentConfig, mesh_path: &Path) -> PathBuf {
    let tight = if cfg.tighten { ".tight" } else { "" };
    cfg.cache.join(format!("{}.{}.{}x{}{tight}.fbk", stem(mesh_path), cfg.alpha, cfg.directions, cfg.scales))
}

/// Eigenpair count actually solved for an `n`-vertex mesh.
pub fn effective_k(cfg: &ExperimentConfig, n: usize) -> usize {
    if cfg.k >= n {
        log::warn!("k = {} clamped to {} for a {n}-vertex mesh", cfg.k, n - 1);
        n - 1
    } else {
        cfg.k
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheStatus {
    Computed,
    Cached,
    Regenerated,
}

#[derive(Clone, Debug, Serialize)]
pub struct CacheReport {
    pub mesh: PathBuf,
    pub direction: usize,
    pub path: PathBuf,
    pub status: CacheStatus,
}

enum Lookup {
    Hit(Spectrum),
    Miss,
    Bad(String),
}

fn lookup(path: &Path, mesh: &TriMesh, want: AnisoConfig, k: usize) -> Lookup {
    if !path.exists() {
        return Lookup::Miss;
    }
    let spec = match Container::read(path, Kind::Spectrum).and_then(|c| container::decode_spectrum(&c)) {
        Ok(s) => s,
        Err(e) => return Lookup::Bad(e.to_string()),
    };
    if spec.mesh_hash != mesh.content_hash() {
        Lookup::Bad("mesh changed".into())
    } else if spec.config != want || spec.k() != k || spec.n() != mesh.vertex_count() {
        Lookup::Bad(format!("made for {:?} with k = {}", spec.config, spec.k()))
    } else {
        Lookup::Hit(spec)
    }
}

/// Solves (or reuses) every direction's spectrum for one mesh.
pub fn ensure_spectra(cfg: &ExperimentConfig, mesh_path: &Path, mesh: &TriMesh) -> Result<(Vec<Spectrum>, Vec<CacheReport>)> {
    let dirs = AnisoConfig::directions(cfg.alpha, cfg.directions)?;
    let k = effective_k(cfg, mesh.vertex_count());
    let mut found: Vec<Option<Spectrum>> = Vec::with_capacity(dirs.len());
    let mut status = Vec::with_capacity(dirs.len());
    for (m, want) in dirs.iter().enumerate() {
        let path = spectrum_path(cfg, mesh_path, m);
        match lookup(&path, mesh, *want, k) {
            Lookup::Hit(s) => {
                found.push(Some(s));
                status.push(CacheStatus::Cached);
            }
            Lookup::Miss => {
                found.push(None);
                status.push(CacheStatus::Computed);
            }
            Lookup::Bad(why) => {
                log::warn!("{}: {why}; regenerating", path.display());
                found.push(None);
                status.push(CacheStatus::Regenerated);
            }
        }
    }
    if found.iter().any(Option::is_none) {
        let frames = estimate_frames(mesh)?;
        let ops = assemble_direction_set(mesh, &frames, cfg.alpha, cfg.directions)?;
        let todo: Vec<usize> = (0..dirs.len()).filter(|&m| found[m].is_none()).collect();
        let solved: Vec<std::result::Result<Spectrum, SpectrumError>> =
            todo.par_iter().map(|&m| solve_eigs(&ops[m], k)).collect();
        fs::create_dir_all(&cfg.cache).map_err(io(&cfg.cache))?;
        for (&m, s) in todo.iter().zip(solved) {
            let s = s?;
            let path = spectrum_path(cfg, mesh_path, m);
            container::encode_spectrum(&s)
                .write_atomic(&path)
                .map_err(|source| PipelineError::Container { path: path.clone(), source })?;
            found[m] = Some(s);
        }
    }
    let reports = status
        .into_iter()
        .enumerate()
        .map(|(m, status)| CacheReport { mesh: mesh_path.into(), direction: m, path: spectrum_path(cfg, mesh_path, m), status })
        .collect();
    Ok((found.into_iter().map(Option::unwrap).collect(), reports))
}

/// Reads cached spectra without computing anything.
pub fn load_spectra(cfg: &ExperimentConfig, mesh_path: &Path, mesh: &TriMesh) -> Result<Vec<Spectrum>> {
    let dirs = AnisoConfig::directions(cfg.alpha, cfg.directions)?;
    let k = effective_k(cfg, mesh.vertex_count());
    dirs.iter()
        .enumerate()
        .map(|(m, want)| {
            let path = spectrum_path(cfg, mesh_path, m);
            match lookup(&path, mesh, *want, k) {
                Lookup::Hit(s) => Ok(s),
                Lookup::Miss => Err(PipelineError::MissingCache { path }),
                Lookup::Bad(reason) => Err(PipelineError::StaleCache { path, reason }),
            }
        })
        .collect()
}

/// Filter bank for a mesh from its cached spectra, reusing (or writing) the
/// FBK1 normalizer cache.
pub fn load_bank(cfg: &ExperimentConfig, mesh_path: &Path, mesh: &TriMesh) -> Result<FilterBank> {
    let spectra = load_spectra(cfg, mesh_path, mesh)?;
    let kernel = KernelSpec { scales: cfg.scales, span: cfg.span, ..KernelSpec::default() };
    let path = filterbank_path(cfg, mesh_path);
    if path.exists() {
        match Container::read(&path, Kind::FilterBank).and_then(|c| container::decode_filterbank(&c, spectra.clone())) {
            Ok(bank) if *bank.kernel() == kernel && bank.is_tight() == cfg.tighten => return Ok(bank),
            Ok(_) => log::warn!("{}: kernel differs; rebuilding", path.display()),
            Err(e) => log::warn!("{}: {e}; rebuilding", path.display()),
        }
    }
    let bank = build_filterbank(spectra, kernel, cfg.tighten)?;
    container::encode_filterbank(&bank)
        .write_atomic(&path)
        .map_err(|source| PipelineError::Container { path: path.clone(), source })?;
    Ok(bank)
}

fn manifest_path(cfg: &ExperimentConfig) -> Result<&Path> {
    cfg.dataset.as_deref().ok_or_else(|| PipelineError::Usage("no dataset manifest given (set \"dataset\")".into()))
}

/// Every distinct mesh file named by a manifest, template first.
pub fn manifest_meshes(manifest_path: &Path, manifest: &DatasetManifest) -> Vec<PathBuf> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out: Vec<PathBuf> = Vec::new();
    let names = std::iter::once(&manifest.template)
        .chain(manifest.train.iter().map(|m| &m.mesh))
        .chain(manifest.pairs.iter().flat_map(|p| [&p.source_mesh, &p.target_mesh]));
    for n in names {
        let p = dir.join(n);
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

/// `spectrum`: solves and caches spectra for the given meshes, or for every
/// mesh of the configured dataset when none are given.
pub fn cmd_spectrum(cfg: &ExperimentConfig, meshes: &[PathBuf]) -> Result<Vec<CacheReport>> {
    let paths = if meshes.is_empty() {
        let mp = manifest_path(cfg)?;
        manifest_meshes(mp, &read_manifest(mp)?)
    } else {
        meshes.to_vec()
    };
    let mut reports = Vec::new();
    for p in &paths {
        let mesh = load_mesh_auto(p)?;
        reports.extend(ensure_spectra(cfg, p, &mesh)?.1);
    }
    Ok(reports)
}

/// `frames`: principal curvatures and directions as CSV.
pub fn cmd_frames(cfg: &ExperimentConfig, mesh_path: &Path) -> Result<PathBuf> {
    let mesh = load_mesh_auto(mesh_path)?;
    let f = estimate_frames(&mesh)?;
    let mut s = String::from("vertex,k_min,k_max,dir_x,dir_y,dir_z,umbilic\n");
    for v in 0..f.len() {
        let d = f.dir_max[v];
        writeln!(s, "{v},{},{},{},{},{},{}", f.k_min[v], f.k_max[v], d[0], d[1], d[2], f.umbilic[v] as u8).unwrap();
    }
    let out = cfg.out.join(format!("{}.frames.csv", stem(mesh_path)));
    write_file(&out, &s)?;
    Ok(out)
}

/// `gen-data`: writes the configured synthetic dataset and its manifest.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let recipe = cfg.generate.as_ref().ok_or_else(|| PipelineError::Usage("no \"generate\" section in the config".into()))?;
    let ds = make_dataset(recipe)?;
    let path = ds.write(&cfg.out, Some(recipe))?;
    echo_config(cfg, &cfg.out)?;
    Ok(path)
}

pub fn model_config(cfg: &ExperimentConfig, template_vertices: usize) -> ModelConfig {
    ModelConfig {
        input_dim: 3,
        hidden: cfg.hidden,
        width: cfg.width,
        layers: cfg.layers,
        directions: cfg.directions,
        scales: cfg.scales,
        classes: template_vertices,
        vertices: template_vertices,
        perturb: cfg.perturb,
    }
}

pub fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.effective_epochs(),
        adam: AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() },
        seed: cfg.seed,
    }
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<(PathBuf, Dataset, DatasetManifest)> {
    let mp = manifest_path(cfg)?.to_path_buf();
    let (ds, manifest) = Dataset::read(&mp)?;
    Ok((mp, ds, manifest))
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss,accuracy\n");
    for r in history {
        writeln!(s, "{},{},{}", r.epoch, r.loss, r.accuracy).unwrap();
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub history: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
}

/// `train`: fits a model on the dataset's training meshes. Spectra must
/// already be cached.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    let (mp, ds, manifest) = load_dataset(cfg)?;
    let dir = mp.parent().unwrap_or(Path::new("."));
    let mut banks = Vec::with_capacity(ds.train.len());
    let mut coords = Vec::with_capacity(ds.train.len());
    for (lm, mm) in ds.train.iter().zip(&manifest.train) {
        banks.push(load_bank(cfg, &dir.join(&mm.mesh), &lm.mesh)?);
        coords.push(coordinate_features(lm.mesh.vertices()));
    }
    let items: Vec<TrainItem> = ds
        .train
        .iter()
        .zip(&coords)
        .zip(&banks)
        .map(|((lm, c), b)| TrainItem { coords: c, labels: &lm.labels, bank: b })
        .collect();
    let mut model = Model::new(model_config(cfg, ds.template.vertex_count()), cfg.seed);
    let history = train_model(&mut model, &items, &train_config(cfg), |r, _| {
        log::info!("epoch {} loss {:.6} accuracy {:.4}", r.epoch, r.loss, r.accuracy);
        true
    })?;
    write_file(&cfg.out.join("history.csv"), &history_csv(&history))?;
    let checkpoint = cfg.checkpoint_path();
    if let Some(d) = checkpoint.parent() {
        fs::create_dir_all(d).map_err(io(d))?;
    }
    container::encode_model(&model, &cfg.to_json())
        .write_atomic(&checkpoint)
        .map_err(|source| PipelineError::Container { path: checkpoint.clone(), source })?;
    echo_config(cfg, &cfg.out)?;
    Ok(TrainSummary { history, checkpoint })
}

pub fn load_model(path: &Path) -> Result<Model> {
    Container::read(path, Kind::Checkpoint)
        .and_then(|c| container::decode_model(&c))
        .map_err(|source| match source {
            ContainerError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => {
                PipelineError::Io { path: path.into(), source: e }
            }
            source => PipelineError::Container { path: path.into(), source },
        })
}

/// Source-to-target vertex map under the configured matching mode.
pub fn match_pair(
    model: &Model,
    mode: MatchMode,
    source: (&TriMesh, &FilterBank),
    target: (&TriMesh, &FilterBank),
) -> Result<Vec<usize>> {
    let (sx, tx) = (coordinate_features(source.0.vertices()), coordinate_features(target.0.vertices()));
    match mode {
        MatchMode::Descriptor => {
            let ds = descriptors(model, &sx, source.1)?;
            let dt = descriptors(model, &tx, target.1)?;
            Ok(match_nn(&ds, &dt)?)
        }
        MatchMode::Softmax => {
            let n = model.config.vertices;
            if model.perturbation.is_some() && (source.0.vertex_count() != n || target.0.vertex_count() != n) {
                log::warn!("softmax matching needs {n}-vertex meshes with a perturbed model; using descriptors");
                return match_pair(model, MatchMode::Descriptor, source, target);
            }
            // nearest neighbour between template-label posteriors
            let ps = softmax_rows(&model_forward(model, &sx, source.1)?);
            let pt = softmax_rows(&model_forward(model, &tx, target.1)?);
            Ok(match_nn(&ps, &pt)?)
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PairResult {
    pub source: String,
    pub target: String,
    pub age_x100: f64,
    pub cge: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalSummary {
    pub pairs: Vec<PairResult>,
    pub mean_age_x100: f64,
    pub pooled_cge: Vec<(f64, f64)>,
}

pub fn curve_csv(curve: &[(f64, f64)]) -> String {
    let mut s = String::from("r,fraction\n");
    for (r, f) in curve {
        writeln!(s, "{r},{f}").unwrap();
    }
    s
}

/// `eval`: matches every held-out pair of the dataset with the trained
/// model and writes per-pair and pooled error curves.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<EvalSummary> {
    let model = load_model(&cfg.checkpoint_path())?;
    let (mp, ds, manifest) = load_dataset(cfg)?;
    let dir = mp.parent().unwrap_or(Path::new("."));
    let radii = cfg.radii.values();
    let mut pairs = Vec::new();
    let mut pooled_errors = Vec::new();
    let mut table_s = String::from("source_mesh,target_mesh,age_x100\n");
    for (np, mpair) in ds.test_pairs.iter().zip(&manifest.pairs) {
        let sb = load_bank(cfg, &dir.join(&mpair.source_mesh), &np.pair.source)?;
        let tb = load_bank(cfg, &dir.join(&mpair.target_mesh), &np.pair.target)?;
        let map = match_pair(&model, cfg.matching, (&np.pair.source, &sb), (&np.pair.target, &tb))?;
        let mut table = DistanceTable::new(&np.pair.target);
        let res = evaluate_with(&map, &np.pair.gt_map, &mut table, &radii)?;
        writeln!(table_s, "{},{},{}", np.source_name, np.target_name, res.age_x100).unwrap();
        write_file(&cfg.out.join(format!("cge_{}__{}.csv", np.source_name, np.target_name)), &curve_csv(&res.cge))?;
        log::info!("{} -> {}: AGE x100 = {:.4}", np.source_name, np.target_name, res.age_x100);
        pooled_errors.extend_from_slice(&res.errors);
        pairs.push(PairResult {
            source: np.source_name.clone(),
            target: np.target_name.clone(),
            age_x100: res.age_x100,
            cge: res.cge,
        });
    }
    if pairs.is_empty() {
        return Err(PipelineError::Usage("the dataset has no evaluation pairs".into()));
    }
    let pooled_cge = cumulative_curve(&pooled_errors, &radii);
    write_file(&cfg.out.join("pairs.csv"), &table_s)?;
    write_file(&cfg.out.join("cge_pooled.csv"), &curve_csv(&pooled_cge))?;
    echo_config(cfg, &cfg.out)?;
    let mean_age_x100 = pairs.iter().map(|p| p.age_x100).sum::<f64>() / pairs.len() as f64;
    Ok(EvalSummary { pairs, mean_age_x100, pooled_cge })
}

/// `wavelet-dump`: one wavelet as a "vertex,value" CSV.
pub fn cmd_wavelet_dump(cfg: &ExperimentConfig, mesh_path: &Path, vertex: usize, direction: usize, scale: usize) -> Result<PathBuf> {
    let mesh = load_mesh_auto(mesh_path)?;
    let bank = load_bank(cfg, mesh_path, &mesh)?;
    let w = bank.wavelet_at(direction, scale, vertex)?;
    let mut s = String::from("vertex,value\n");
    for (v, x) in w.iter().enumerate() {
        writeln!(s, "{v},{x}").unwrap();
    }
    let out = cfg.out.join(format!("{}.wavelet.v{vertex}.m{direction}.j{scale}.csv", stem(mesh_path)));
    write_file(&out, &s)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeshInfo {
    pub vertices: usize,
    pub faces: usize,
    pub edges: usize,
    pub boundary_edges: usize,
    pub closed: bool,
    pub euler_characteristic: i64,
    pub area: f64,
    pub bbox_diagonal: f64,
    pub max_edge_length: f64,
    pub content_hash: String,
}

/// `mesh-info`: validates a mesh and reports its basic measures.
pub fn cmd_mesh_info(mesh_path: &Path) -> Result<MeshInfo> {
    let m = load_mesh_auto(mesh_path)?;
    Ok(MeshInfo {
        vertices: m.vertex_count(),
        faces: m.face_count(),
        edges: m.edge_count(),
        boundary_edges: m.boundary_edge_count(),
        closed: m.is_closed(),
        euler_characteristic: m.euler_characteristic(),
        area: m.total_area(),
        bbox_diagonal: m.bbox_diagonal(),
        max_edge_length: m.max_edge_length(),
        content_hash: format!("{:016x}", m.content_hash()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{icosphere, BaseKind, DatasetConfig, DeformMode, Deformation};

    fn small_cfg(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            cache: dir.join("cache"),
            out: dir.join("out"),
            k: 12,
            directions: 1,
            alpha: 0.0,
            scales: 2,
            span: 4.0,
            hidden: 4,
            width: 6,
            layers: 1,
            epochs: Some(2),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn spectrum_cache_lifecycle() {
        let dir = tempfile::tempdir().unwrap();
        let mesh_path = dir.path().join("ball.off");
        icosphere(1).unwrap().write_off(&mesh_path).unwrap();
        let cfg = ExperimentConfig { directions: 4, alpha: 50.0, ..small_cfg(dir.path()) };

        let first = cmd_spectrum(&cfg, &[mesh_path.clone()]).unwrap();
        assert_eq!(first.len(), 4);
        assert!(first.iter().all(|r| r.status == CacheStatus::Computed));
        assert!(cfg.cache.join("ball.50.3.spec").exists());
        let again = cmd_spectrum(&cfg, &[mesh_path.clone()]).unwrap();
        assert!(again.iter().all(|r| r.status == CacheStatus::Cached));

        let p = spectrum_path(&cfg, &mesh_path, 2);
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'X';
        fs::write(&p, bytes).unwrap();
        let fixed = cmd_spectrum(&cfg, &[mesh_path.clone()]).unwrap();
        let st: Vec<_> = fixed.iter().map(|r| r.status).collect();
        assert_eq!(st, [CacheStatus::Cached, CacheStatus::Cached, CacheStatus::Regenerated, CacheStatus::Cached]);

        let other = ExperimentConfig { k: 10, ..cfg.clone() };
        assert!(matches!(load_spectra(&other, &mesh_path, &icosphere(1).unwrap()), Err(PipelineError::StaleCache { .. })));
        let missing = dir.path().join("none.off");
        assert!(matches!(
            load_spectra(&cfg, &missing, &icosphere(1).unwrap()),
            Err(e @ PipelineError::MissingCache { .. }) if e.exit_code() == 4
        ));
    }

    #[test]
    fn train_and_eval_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg(dir.path());
        cfg.out = dir.path().join("data");
        cfg.generate = Some(DatasetConfig {
            base: BaseKind::Icosphere(1),
            deformations: vec![
                Deformation { mode: DeformMode::Twist, magnitude: 0.1 },
                Deformation { mode: DeformMode::Twist, magnitude: 0.2 },
                Deformation { mode: DeformMode::Bend, magnitude: 0.1 },
            ],
            train_count: 2,
            seed: 1,
            held_out: vec![],
        remeshed_pairs: false,
        });
        let manifest = cmd_gen_data(&cfg).unwrap();
        let mut cfg = ExperimentConfig { dataset: Some(manifest), generate: None, ..cfg };
        cfg.out = dir.path().join("run");
        assert!(matches!(cmd_train(&cfg), Err(PipelineError::MissingCache { .. })));
        cmd_spectrum(&cfg, &[]).unwrap();
        let t = cmd_train(&cfg).unwrap();
        assert_eq!(t.history.len(), 2);
        let hist = fs::read_to_string(cfg.out.join("history.csv")).unwrap();
        assert!(hist.starts_with("epoch,loss,accuracy\n"));
        assert_eq!(hist.lines().count(), 3);
        assert!(cfg.out.join("config.json").exists());

        let ev = cmd_eval(&cfg).unwrap();
        assert_eq!(ev.pairs.len(), 1);
        let cge = fs::read_to_string(cfg.out.join("cge_pooled.csv")).unwrap();
        assert_eq!(cge.lines().count(), 1 + cfg.radii.values().len());
        assert!(fs::read_to_string(cfg.out.join("pairs.csv")).unwrap().starts_with("source_mesh,target_mesh,age_x100\n"));

        let soft = ExperimentConfig { matching: MatchMode::Softmax, ..cfg.clone() };
        assert_eq!(cmd_eval(&soft).unwrap().pairs.len(), 1);
    }

    #[test]
    fn dump_frames_info() {
        let dir = tempfile::tempdir().unwrap();
        let mesh_path = dir.path().join("ball.obj");
        let mesh = icosphere(1).unwrap();
        mesh.write_obj(&mesh_path).unwrap();
        let cfg = small_cfg(dir.path());
        cmd_spectrum(&cfg, &[mesh_path.clone()]).unwrap();
        let out = cmd_wavelet_dump(&cfg, &mesh_path, 3, 0, 1).unwrap();
        let text = fs::read_to_string(out).unwrap();
        assert_eq!(text.lines().count(), 1 + mesh.vertex_count());
        let bank = load_bank(&cfg, &mesh_path, &mesh).unwrap();
        let w = bank.wavelet_at(0, 1, 3).unwrap();
        for (line, x) in text.lines().skip(1).zip(w.iter()) {
            assert_eq!(line.split(',').nth(1).unwrap().parse::<f64>().unwrap(), *x);
        }
        assert!(matches!(cmd_wavelet_dump(&cfg, &mesh_path, 999, 0, 0), Err(e) if e.exit_code() == 2));

        let frames = fs::read_to_string(cmd_frames(&cfg, &mesh_path).unwrap()).unwrap();
        assert_eq!(frames.lines().count(), 1 + mesh.vertex_count());
        let info = cmd_mesh_info(&mesh_path).unwrap();
        assert_eq!((info.vertices, info.faces, info.closed, info.euler_characteristic), (42, 80, true, 2));
        assert!(matches!(cmd_mesh_info(&dir.path().join("nope.off")), Err(e) if e.exit_code() == 4));
    }
}
