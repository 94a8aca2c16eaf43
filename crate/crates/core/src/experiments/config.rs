//! Experiment configuration, read from JSON with unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Activation;
use crate::tensor::DEFAULT_ELEMENT_CAP;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    /// Sequence length `L`.
    pub seq_len: usize,
    pub d_v: usize,
    pub d_k: usize,
    #[serde(default = "one")]
    pub heads: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// Separate `W_Q`, `W_K`.
    #[default]
    Classical,
    /// One `W_QK`.
    Single,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub parameterization: Parameterization,
    #[serde(default = "unit")]
    pub temperature: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for Variant {
    fn default() -> Self {
        Self {
            activation: Activation::Softmax,
            parameterization: Parameterization::Classical,
            temperature: 1.0,
        }
    }
}

impl Variant {
    pub fn label(&self) -> String {
        let act = match self.activation {
            Activation::Softmax => "softmax",
            Activation::Identity => "identity",
        };
        let par = match self.parameterization {
            Parameterization::Classical => "classical",
            Parameterization::Single => "single",
        };
        format!("{act}-{par}-t{}", self.temperature)
    }
}

/// Read from JSON with [`ExperimentConfig::from_json`] (`dims`, `sigma_grid`
/// and `seeds` required) or [`ExperimentConfig::from_json_over`] (every key
/// optional, missing ones taken from a base configuration). Any key not
/// listed here is an error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dims: Dims,
    #[serde(default)]
    pub variant: Variant,
    pub sigma_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Standard deviation of every weight entry; `None` means `√(0.64 / d_v)`.
    #[serde(default)]
    pub weight_init_std: Option<f64>,
    /// Output directory; the `--out` flag takes precedence.
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    #[serde(default = "default_cap")]
    pub element_cap: usize,
    /// Attention depths for the depth experiment.
    #[serde(default = "default_depths")]
    pub depths: Vec<usize>,
}

fn default_cap() -> usize {
    DEFAULT_ELEMENT_CAP
}

fn default_depths() -> Vec<usize> {
    vec![1, 2]
}

/// `n` points spaced evenly in log scale over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Which subcommand a configuration is meant for (selects the defaults).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Verify,
    Scaling,
    Spectrum,
    Histogram,
    Depth,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Scaling => "scaling",
            Command::Spectrum => "spectrum",
            Command::Histogram => "histogram",
            Command::Depth => "depth",
        }
    }
}

impl ExperimentConfig {
    pub fn default_for(command: Command) -> Self {
        let base = Self {
            dims: Dims {
                seq_len: 3,
                d_v: 4,
                d_k: 2,
                heads: 1,
            },
            variant: Variant::default(),
            sigma_grid: vec![1.0],
            seeds: vec![0, 1, 2],
            weight_init_std: None,
            output_path: None,
            element_cap: DEFAULT_ELEMENT_CAP,
            depths: default_depths(),
        };
        let desk = Dims {
            seq_len: 4,
            d_v: 6,
            d_k: 3,
            heads: 1,
        };
        match command {
            Command::Verify => base,
            Command::Scaling => Self {
                dims: desk,
                sigma_grid: log_grid(0.05, 0.5, 12),
                seeds: (0..20).collect(),
                ..base
            },
            Command::Spectrum => Self {
                seeds: (0..10).collect(),
                ..base
            },
            Command::Histogram => Self {
                dims: desk,
                sigma_grid: vec![0.3],
                seeds: (0..20).collect(),
                ..base
            },
            Command::Depth => Self {
                dims: Dims {
                    seq_len: 4,
                    d_v: 4,
                    d_k: 4,
                    heads: 1,
                },
                variant: Variant {
                    activation: Activation::Identity,
                    ..Variant::default()
                },
                sigma_grid: log_grid(0.05, 0.5, 12),
                seeds: (0..20).collect(),
                ..base
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overlay the keys present in `text` on `base`; nested objects merge
    /// key by key, everything else is replaced.
    pub fn from_json_over(text: &str, base: &Self) -> Result<Self> {
        let patch: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if !patch.is_object() {
            return Err(Error::Config("configuration must be a JSON object".into()));
        }
        let mut merged = serde_json::to_value(base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, patch);
        let cfg: Self = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?)
    }

    /// [`ExperimentConfig::from_json_over`] on the defaults of `command`.
    pub fn load_for(path: &Path, command: Command) -> Result<Self> {
        Self::from_json_over(&read(path)?, &Self::default_for(command))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        if d.seq_len == 0 || d.d_v == 0 || d.d_k == 0 || d.heads == 0 {
            return Err(Error::Config("all dims must be at least 1".into()));
        }
        if self.sigma_grid.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "sigma_grid and seeds must be nonempty".into(),
            ));
        }
        if self.sigma_grid.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config(
                "sigma values must be positive and finite".into(),
            ));
        }
        if let Some(s) = self.weight_init_std {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config("weight_init_std must be positive".into()));
            }
        }
        if !(self.variant.temperature > 0.0 && self.variant.temperature.is_finite()) {
            return Err(Error::Temperature(self.variant.temperature));
        }
        if self.element_cap == 0 {
            return Err(Error::Config("element_cap must be positive".into()));
        }
        if self.depths.is_empty() || self.depths.contains(&0) {
            return Err(Error::Config(
                "depths must be nonempty and at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn weight_std(&self) -> f64 {
        self.weight_init_std
            .unwrap_or_else(|| (0.64 / self.dims.d_v as f64).sqrt())
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}
