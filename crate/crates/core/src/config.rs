//! Experiment configuration: one JSON document, overridable from the command
//! line, echoed into every output directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synth::DatasetConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("{field} = {value} is out of range ({range})")]
    OutOfRange { field: &'static str, value: String, range: &'static str },
    #[error("bad radii {0:?}: expected start:stop:step")]
    Radii(String),
}

/// Which features nearest-neighbour matching runs on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Output of the last convolution layer.
    #[default]
    Descriptor,
    /// Nearest neighbour between the softmax posteriors over template
    /// vertices.
    Softmax,
}

/// Evenly spaced radii, written `start:stop:step`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Radii {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for Radii {
    fn default() -> Self {
        Radii { start: 0.0, stop: 0.25, step: 0.0025 }
    }
}

impl Radii {
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let ok = self.start.is_finite()
            && self.stop.is_finite()
            && self.step.is_finite()
            && self.start >= 0.0
            && self.stop >= self.start
            && self.step > 0.0
            && (self.stop - self.start) / self.step <= 1e6;
        if ok {
            Ok(())
        } else {
            Err(ConfigError::Radii(self.to_string()))
        }
    }
}

impl fmt::Display for Radii {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.step)
    }
}

impl FromStr for Radii {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, c] = parts[..] else {
            return Err(ConfigError::Radii(s.into()));
        };
        let p = |t: &str| t.trim().parse::<f64>().map_err(|_| ConfigError::Radii(s.into()));
        let r = Radii { start: p(a)?, stop: p(b)?, step: p(c)? };
        r.validate()?;
        Ok(r)
    }
}

impl Serialize for Radii {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Radii {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Dataset manifest used by `spectrum`, `train` and `eval`.
    pub dataset: Option<PathBuf>,
    /// Dataset recipe used by `gen-data`.
    pub generate: Option<DatasetConfig>,
    /// Spectrum and filter-bank cache directory.
    pub cache: PathBuf,
    pub out: PathBuf,
    /// Checkpoint read by `eval`; defaults to `<out>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,

    pub k: usize,
    pub alpha: f64,
    pub directions: usize,
    pub scales: usize,
    /// Ratio between the widest and narrowest wavelet scale.
    pub span: f64,
    pub tighten: bool,

    pub hidden: usize,
    pub width: usize,
    pub layers: usize,
    pub perturb: bool,
    /// Defaults to 50 with the perturbation layer, 200 without.
    pub epochs: Option<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,

    pub radii: Radii,
    pub matching: MatchMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            generate: None,
            cache: PathBuf::from("cache"),
            out: PathBuf::from("out"),
            checkpoint: None,
            k: 200,
            alpha: 50.0,
            directions: 4,
            scales: 4,
            span: 40.0,
            tighten: false,
            hidden: 64,
            width: 128,
            layers: 4,
            perturb: true,
            epochs: None,
            lr: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
            radii: Radii::default(),
            matching: MatchMode::Descriptor,
        }
    }
}

/// Command-line values that replace config keys when present.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub directions: Option<usize>,
    pub scales: Option<usize>,
    pub perturb: Option<bool>,
    pub epochs: Option<usize>,
    pub radii: Option<Radii>,
}

fn check<T: PartialOrd + fmt::Display>(field: &'static str, v: T, lo: T, hi: T, range: &'static str) -> Result<(), ConfigError> {
    if v >= lo && v <= hi {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange { field, value: v.to_string(), range })
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            cfg.rebase(dir);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(p) = self.dataset.as_mut() {
            fix(p);
        }
        if let Some(p) = self.checkpoint.as_mut() {
            fix(p);
        }
        fix(&mut self.cache);
        fix(&mut self.out);
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = o.k {
            self.k = v;
        }
        if let Some(v) = o.alpha {
            self.alpha = v;
        }
        if let Some(v) = o.directions {
            self.directions = v;
        }
        if let Some(v) = o.scales {
            self.scales = v;
        }
        if let Some(v) = o.perturb {
            self.perturb = v;
        }
        if let Some(v) = o.epochs {
            self.epochs = Some(v);
        }
        if let Some(v) = o.radii {
            self.radii = v;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check("k", self.k, 1, 100_000, "1..=100000")?;
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(ConfigError::OutOfRange { field: "alpha", value: self.alpha.to_string(), range: "finite, >= 0" });
        }
        if ![1, 2, 4].contains(&self.directions) {
            return Err(ConfigError::OutOfRange { field: "directions", value: self.directions.to_string(), range: "1, 2 or 4" });
        }
        check("scales", self.scales, 1, 32, "1..=32")?;
        if !(self.span.is_finite() && self.span > 1.0) {
            return Err(ConfigError::OutOfRange { field: "span", value: self.span.to_string(), range: "finite, > 1" });
        }
        check("hidden", self.hidden, 1, 4096, "1..=4096")?;
        check("width", self.width, 1, 4096, "1..=4096")?;
        check("layers", self.layers, 1, 32, "1..=32")?;
        check("epochs", self.effective_epochs(), 1, 1_000_000, "1..=1000000")?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(ConfigError::OutOfRange { field: "lr", value: self.lr.to_string(), range: "finite, > 0" });
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(ConfigError::OutOfRange {
                field: "weight_decay",
                value: self.weight_decay.to_string(),
                range: "finite, >= 0",
            });
        }
        self.radii.validate()
    }

    pub fn effective_epochs(&self) -> usize {
        self.epochs.unwrap_or(if self.perturb { 50 } else { 200 })
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("model.ckpt"))
    }

    /// The merged config as pretty JSON, with `epochs` resolved.
    pub fn to_json(&self) -> String {
        let mut c = self.clone();
        c.epochs = Some(self.effective_epochs());
        serde_json::to_string_pretty(&c).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_roundtrip() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!((c.k, c.alpha, c.directions, c.scales, c.width, c.layers), (200, 50.0, 4, 4, 128, 4));
        assert_eq!(c.effective_epochs(), 50);
        let v = ExperimentConfig { perturb: false, ..c.clone() };
        assert_eq!(v.effective_epochs(), 200);
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back.epochs, Some(50));
        assert_eq!(back.radii, c.radii);
    }

    #[test]
    fn rejects_unknown_and_out_of_range() {
        assert!(matches!(ExperimentConfig::from_json(r#"{"kk": 3}"#), Err(ConfigError::Parse(_))));
        assert!(matches!(ExperimentConfig::from_json(r#"{"k": 0}"#), Err(ConfigError::OutOfRange { field: "k", .. })));
        assert!(matches!(ExperimentConfig::from_json(r#"{"alpha": -1}"#), Err(ConfigError::OutOfRange { .. })));
        assert!(matches!(ExperimentConfig::from_json(r#"{"lr": 0}"#), Err(ConfigError::OutOfRange { .. })));
        assert!(matches!(ExperimentConfig::from_json(r#"{"radii": "0:1"}"#), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn radii_parse() {
        let r: Radii = "0:0.25:0.0025".parse().unwrap();
        assert_eq!(r.values(), crate::corresp::default_radii());
        assert_eq!("0.1:0.1:1".parse::<Radii>().unwrap().values(), vec![0.1]);
        assert!("0:1:0".parse::<Radii>().is_err());
        assert!("1:0:0.1".parse::<Radii>().is_err());
        assert!("a:b:c".parse::<Radii>().is_err());
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::default();
        let o = Overrides { seed: Some(9), k: Some(30), perturb: Some(false), radii: Some("0:0.1:0.05".parse().unwrap()), ..Default::default() };
        c.apply(&o).unwrap();
        assert_eq!((c.seed, c.k, c.perturb, c.effective_epochs()), (9, 30, false, 200));
        assert_eq!(c.radii.values().len(), 3);
        assert!(c.apply(&Overrides { directions: Some(0), ..Default::default() }).is_err());
    }
}
