//! One binary container for spectrum caches, filter banks and checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic      8 bytes   "SPEC1", "FBK1" or "CKPT1", zero padded
//! version    u32
//! count      u32
//! entries    count x { name_len u32, name utf8, dtype u8, ndim u32,
//!                      shape ndim x u64, offset u64, byte_len u64 }
//! data       raw arrays; offsets are relative to the start of this section
//! ```
//!
//! Matrices are stored column-major with shape `[rows, cols]`.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::network::{Model, ModelConfig};
use crate::operators::AnisoConfig;
use crate::spectrum::Spectrum;
use crate::wavelets::{build_filterbank_with_normalizers, FilterBank, KernelSpec};

pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("missing entry {0:?}")]
    Missing(String),
    #[error("entry {name:?} is not {wanted}")]
    WrongType { name: String, wanted: &'static str },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Spectrum,
    FilterBank,
    Checkpoint,
}

impl Kind {
    pub fn magic(self) -> [u8; 8] {
        let tag: &[u8] = match self {
            Kind::Spectrum => b"SPEC1",
            Kind::FilterBank => b"FBK1",
            Kind::Checkpoint => b"CKPT1",
        };
        let mut m = [0u8; 8];
        m[..tag.len()].copy_from_slice(tag);
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Array {
    F64(Vec<f64>),
    U64(Vec<u64>),
    U8(Vec<u8>),
}

impl Array {
    fn dtype(&self) -> u8 {
        match self {
            Array::F64(_) => 0,
            Array::U64(_) => 1,
            Array::U8(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            Array::F64(v) => v.len(),
            Array::U64(v) => v.len(),
            Array::U8(v) => v.len(),
        }
    }

    fn byte_len(&self) -> usize {
        match self {
            Array::F64(v) => 8 * v.len(),
            Array::U64(v) => 8 * v.len(),
            Array::U8(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Array,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: Kind,
    pub entries: Vec<Entry>,
}

impl Container {
    pub fn new(kind: Kind) -> Self {
        Container { kind, entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Array) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.push(Entry { name: name.into(), shape, data });
    }

    pub fn push_f64(&mut self, name: impl Into<String>, values: &[f64]) {
        self.push(name, vec![values.len()], Array::F64(values.to_vec()));
    }

    pub fn push_u64(&mut self, name: impl Into<String>, values: &[u64]) {
        self.push(name, vec![values.len()], Array::U64(values.to_vec()));
    }

    pub fn push_matrix(&mut self, name: impl Into<String>, m: &DMatrix<f64>) {
        self.push(name, vec![m.nrows(), m.ncols()], Array::F64(m.as_slice().to_vec()));
    }

    pub fn push_str(&mut self, name: impl Into<String>, s: &str) {
        self.push(name, vec![s.len()], Array::U8(s.as_bytes().to_vec()));
    }

    pub fn get(&self, name: &str) -> Result<&Entry, ContainerError> {
        self.entries.iter().find(|e| e.name == name).ok_or_else(|| ContainerError::Missing(name.into()))
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64], ContainerError> {
        match &self.get(name)?.data {
            Array::F64(v) => Ok(v),
            _ => Err(ContainerError::WrongType { name: name.into(), wanted: "f64" }),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64], ContainerError> {
        match &self.get(name)?.data {
            Array::U64(v) => Ok(v),
            _ => Err(ContainerError::WrongType { name: name.into(), wanted: "u64" }),
        }
    }

    pub fn scalar_u64(&self, name: &str) -> Result<u64, ContainerError> {
        self.u64s(name)?.first().copied().ok_or_else(|| ContainerError::Corrupt(format!("{name:?} is empty")))
    }

    pub fn matrix(&self, name: &str) -> Result<DMatrix<f64>, ContainerError> {
        let e = self.get(name)?;
        let data = self.f64s(name)?;
        match e.shape[..] {
            [r, c] => Ok(DMatrix::from_column_slice(r, c, data)),
            _ => Err(ContainerError::WrongType { name: name.into(), wanted: "a matrix" }),
        }
    }

    pub fn string(&self, name: &str) -> Result<String, ContainerError> {
        match &self.get(name)?.data {
            Array::U8(v) => String::from_utf8(v.clone()).map_err(|e| ContainerError::Corrupt(e.to_string())),
            _ => Err(ContainerError::WrongType { name: name.into(), wanted: "text" }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.kind.magic());
        out.write_u32::<LittleEndian>(VERSION).unwrap();
        out.write_u32::<LittleEndian>(self.entries.len() as u32).unwrap();
        let mut offset = 0u64;
        for e in &self.entries {
            out.write_u32::<LittleEndian>(e.name.len() as u32).unwrap();
            out.extend_from_slice(e.name.as_bytes());
            out.write_u8(e.data.dtype()).unwrap();
            out.write_u32::<LittleEndian>(e.shape.len() as u32).unwrap();
            for &s in &e.shape {
                out.write_u64::<LittleEndian>(s as u64).unwrap();
            }
            out.write_u64::<LittleEndian>(offset).unwrap();
            out.write_u64::<LittleEndian>(e.data.byte_len() as u64).unwrap();
            offset += e.data.byte_len() as u64;
        }
        for e in &self.entries {
            match &e.data {
                Array::F64(v) => v.iter().for_each(|x| out.write_f64::<LittleEndian>(*x).unwrap()),
                Array::U64(v) => v.iter().for_each(|x| out.write_u64::<LittleEndian>(*x).unwrap()),
                Array::U8(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], kind: Kind) -> Result<Self, ContainerError> {
        let corrupt = |e: std::io::Error| ContainerError::Corrupt(format!("truncated header: {e}"));
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(corrupt)?;
        if magic != kind.magic() {
            let show = |m: &[u8]| String::from_utf8_lossy(m).trim_end_matches('\0').to_string();
            return Err(ContainerError::BadMagic { expected: show(&kind.magic()), found: show(&magic) });
        }
        let version = cur.read_u32::<LittleEndian>().map_err(corrupt)?;
        if version != VERSION {
            return Err(ContainerError::UnsupportedVersion(version));
        }
        let count = cur.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
        let mut heads = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = cur.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
            let mut name = vec![0u8; len.min(bytes.len())];
            cur.read_exact(&mut name).map_err(corrupt)?;
            let name = String::from_utf8(name).map_err(|e| ContainerError::Corrupt(e.to_string()))?;
            let dtype = cur.read_u8().map_err(corrupt)?;
            let ndim = cur.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(cur.read_u64::<LittleEndian>().map_err(corrupt)? as usize);
            }
            let offset = cur.read_u64::<LittleEndian>().map_err(corrupt)? as usize;
            let byte_len = cur.read_u64::<LittleEndian>().map_err(corrupt)? as usize;
            heads.push((name, dtype, shape, offset, byte_len));
        }
        let data = &bytes[cur.position() as usize..];
        let mut entries = Vec::with_capacity(heads.len());
        for (name, dtype, shape, offset, byte_len) in heads {
            let end = offset.checked_add(byte_len).filter(|&e| e <= data.len());
            let raw = &data[offset..end.ok_or_else(|| ContainerError::Corrupt(format!("{name:?} runs past the end")))?];
            let elems: usize = shape.iter().product();
            let array = match dtype {
                0 | 1 if byte_len != 8 * elems => None,
                2 if byte_len != elems => None,
                0 => Some(Array::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())),
                1 => Some(Array::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())),
                2 => Some(Array::U8(raw.to_vec())),
                _ => None,
            }
            .ok_or_else(|| ContainerError::Corrupt(format!("{name:?}: dtype {dtype}, shape {shape:?}, {byte_len} bytes")))?;
            entries.push(Entry { name, shape, data: array });
        }
        Ok(Container { kind, entries })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn write_atomic(&self, path: &Path) -> Result<(), ContainerError> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path, kind: Kind) -> Result<Self, ContainerError> {
        Self::from_bytes(&fs::read(path)?, kind)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ContainerError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// SPEC1: one solved spectrum.
pub fn encode_spectrum(s: &Spectrum) -> Container {
    let mut c = Container::new(Kind::Spectrum);
    c.push_f64("eigenvalues", &s.eigenvalues);
    c.push_matrix("eigenvectors", &s.eigenvectors);
    c.push_f64("mass", &s.mass);
    c.push_f64("aniso", &[s.config.alpha, s.config.theta]);
    c.push_u64("mesh_hash", &[s.mesh_hash]);
    c
}

pub fn decode_spectrum(c: &Container) -> Result<Spectrum, ContainerError> {
    let eigenvalues = c.f64s("eigenvalues")?.to_vec();
    let eigenvectors = c.matrix("eigenvectors")?;
    let mass = c.f64s("mass")?.to_vec();
    let aniso = c.f64s("aniso")?;
    if eigenvectors.ncols() != eigenvalues.len() || eigenvectors.nrows() != mass.len() || aniso.len() != 2 {
        return Err(ContainerError::Corrupt("spectrum entries disagree in shape".into()));
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
        mass,
        config: AnisoConfig { alpha: aniso[0], theta: aniso[1] },
        mesh_hash: c.scalar_u64("mesh_hash")?,
    })
}

/// FBK1: kernel parameters, per-direction scales and responses, and the
/// L1 normalizers. The eigenvectors stay in the SPEC1 files.
pub fn encode_filterbank(bank: &FilterBank) -> Container {
    let mut c = Container::new(Kind::FilterBank);
    let k = bank.kernel();
    c.push_f64("kernel", &[k.scales as f64, k.cutoff_fraction, k.span]);
    c.push_u64("tight", &[bank.is_tight() as u64]);
    c.push_u64("mesh_hash", &[bank.spectrum(0).mesh_hash]);
    c.push_u64("directions", &[bank.directions() as u64]);
    for m in 0..bank.directions() {
        c.push_f64(format!("scales.{m}"), bank.scales(m));
        c.push_f64(format!("cutoff.{m}"), &[bank.cutoff(m)]);
        c.push_f64(format!("scaling.{m}"), bank.scaling_response(m).as_slice());
        for j in 0..bank.scale_count() {
            c.push_f64(format!("response.{m}.{j}"), bank.response(m, j).as_slice());
            c.push_f64(format!("normalizer.{m}.{j}"), bank.normalizer(m, j).as_slice());
        }
    }
    c
}

/// Rebuilds a bank from its spectra and a cached FBK1. Fails with
/// `Corrupt` if the cache was made from different spectra or kernel.
pub fn decode_filterbank(c: &Container, spectra: Vec<Spectrum>) -> Result<FilterBank, ContainerError> {
    let kv = c.f64s("kernel")?;
    let [scales, cutoff_fraction, span] = kv[..] else {
        return Err(ContainerError::Corrupt("kernel entry".into()));
    };
    let kernel = KernelSpec { scales: scales as usize, cutoff_fraction, span };
    let tight = c.scalar_u64("tight")? != 0;
    let directions = c.scalar_u64("directions")? as usize;
    if directions != spectra.len() || spectra.first().map(|s| s.mesh_hash) != Some(c.scalar_u64("mesh_hash")?) {
        return Err(ContainerError::Corrupt("filter bank was built from other spectra".into()));
    }
    let mut normalizers = Vec::with_capacity(directions);
    for m in 0..directions {
        normalizers.push(
            (0..kernel.scales)
                .map(|j| c.f64s(&format!("normalizer.{m}.{j}")).map(DVector::from_column_slice))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    let bank = build_filterbank_with_normalizers(spectra, kernel, tight, normalizers)
        .map_err(|e| ContainerError::Corrupt(e.to_string()))?;
    for m in 0..directions {
        let same = c.f64s(&format!("scales.{m}"))? == bank.scales(m)
            && c.f64s(&format!("scaling.{m}"))? == bank.scaling_response(m).as_slice()
            && (0..kernel.scales)
                .map(|j| c.f64s(&format!("response.{m}.{j}")).map(|r| r == bank.response(m, j).as_slice()))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .all(|b| b);
        if !same {
            return Err(ContainerError::Corrupt(format!("direction {m}: responses differ from the spectra")));
        }
    }
    Ok(bank)
}

/// CKPT1: every learnable tensor under its [`Model::tensors`] name, the
/// perturbation permutation, the model config and a free-form config echo.
pub fn encode_model(model: &Model, echo: &str) -> Container {
    let mut c = Container::new(Kind::Checkpoint);
    c.push_str("model_config", &serde_json::to_string(&model.config).expect("model config serializes"));
    c.push_str("config", echo);
    if let Some(p) = &model.perturbation {
        c.push_u64("perturb.perm", &p.perm.iter().map(|&i| i as u64).collect::<Vec<_>>());
    }
    for (name, t) in model.tensors() {
        c.push_matrix(name, t);
    }
    c
}

pub fn decode_model(c: &Container) -> Result<Model, ContainerError> {
    let cfg: ModelConfig =
        serde_json::from_str(&c.string("model_config")?).map_err(|e| ContainerError::Corrupt(e.to_string()))?;
    let mut model = Model::new(cfg, 0);
    let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
    let mut loaded = Vec::with_capacity(names.len());
    for name in &names {
        loaded.push(c.matrix(name)?);
    }
    for ((dst, src), name) in model.tensors_mut().into_iter().zip(loaded).zip(&names) {
        if dst.shape() != src.shape() {
            return Err(ContainerError::Corrupt(format!("{name}: shape {:?}, expected {:?}", src.shape(), dst.shape())));
        }
        *dst = src;
    }
    if let Some(p) = &mut model.perturbation {
        let perm: Vec<usize> = c.u64s("perturb.perm")?.iter().map(|&i| i as usize).collect();
        let mut seen = vec![false; perm.len()];
        let valid = perm.len() == p.perm.len() && perm.iter().all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true));
        if !valid {
            return Err(ContainerError::Corrupt("perturb.perm is not a permutation".into()));
        }
        p.perm = perm;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new(Kind::Checkpoint);
        c.push_matrix("w", &DMatrix::from_fn(3, 2, |i, j| i as f64 - 0.5 * j as f64));
        c.push_u64("perm", &[2, 0, 1]);
        c.push_str("config", "{\"a\":1}");
        c.push_f64("empty", &[]);
        c
    }

    #[test]
    fn roundtrip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..8], b"CKPT1\0\0\0");
        let back = Container::from_bytes(&bytes, Kind::Checkpoint).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.matrix("w").unwrap()[(2, 1)], 1.5);
        assert_eq!(back.string("config").unwrap(), "{\"a\":1}");
        assert!(matches!(back.f64s("perm"), Err(ContainerError::WrongType { .. })));
        assert!(matches!(back.get("nope"), Err(ContainerError::Missing(_))));
    }

    #[test]
    fn rejects_bad_input() {
        let bytes = sample().to_bytes();
        assert!(matches!(Container::from_bytes(&bytes, Kind::Spectrum), Err(ContainerError::BadMagic { .. })));
        assert!(matches!(Container::from_bytes(&bytes[..bytes.len() - 3], Kind::Checkpoint), Err(ContainerError::Corrupt(_))));
        assert!(matches!(Container::from_bytes(&bytes[..10], Kind::Checkpoint), Err(ContainerError::Corrupt(_))));
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(Container::from_bytes(&v, Kind::Checkpoint), Err(ContainerError::UnsupportedVersion(9))));
    }

    #[test]
    fn typed_roundtrips() {
        use crate::network::ModelConfig;
        use crate::operators::assemble_lbo;
        use crate::spectrum::solve_eigs;
        use crate::synth::icosphere;
        use crate::wavelets::build_filterbank;

        let mesh = icosphere(1).unwrap();
        let spec = solve_eigs(&assemble_lbo(&mesh).unwrap(), 20).unwrap();
        let back = decode_spectrum(&Container::from_bytes(&encode_spectrum(&spec).to_bytes(), Kind::Spectrum).unwrap()).unwrap();
        assert_eq!(back.eigenvalues, spec.eigenvalues);
        assert_eq!(back.eigenvectors, spec.eigenvectors);
        assert_eq!((back.config, back.mesh_hash), (spec.config, spec.mesh_hash));

        let kernel = KernelSpec { span: 4.0, ..KernelSpec::default() };
        let bank = build_filterbank(vec![spec.clone()], kernel, true).unwrap();
        let fc = Container::from_bytes(&encode_filterbank(&bank).to_bytes(), Kind::FilterBank).unwrap();
        let rebuilt = decode_filterbank(&fc, vec![spec.clone()]).unwrap();
        for j in 0..4 {
            assert_eq!(rebuilt.normalizer(0, j), bank.normalizer(0, j));
        }
        let mut other = spec.clone();
        other.mesh_hash ^= 1;
        assert!(matches!(decode_filterbank(&fc, vec![other]), Err(ContainerError::Corrupt(_))));

        let model = Model::new(ModelConfig { hidden: 5, width: 6, directions: 1, ..ModelConfig::new(7, 42, true) }, 3);
        let mc = Container::from_bytes(&encode_model(&model, "{}").to_bytes(), Kind::Checkpoint).unwrap();
        let m2 = decode_model(&mc).unwrap();
        assert_eq!(m2.tensors(), model.tensors());
        assert_eq!(m2.perturbation.as_ref().unwrap().perm, model.perturbation.as_ref().unwrap().perm);
        assert_eq!(mc.string("config").unwrap(), "{}");
    }

    #[test]
    fn atomic_write() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        sample().write_atomic(&p).unwrap();
        assert_eq!(Container::read(&p, Kind::Checkpoint).unwrap(), sample());
        assert!(!dir.path().join("x.ckpt.tmp").exists());
    }
}
