//! Run configuration files.

use std::path::PathBuf;

use bondcause_core::rca::DEFAULT_EPS;
use bondcause_core::{Error, Result, Rng, ScmSpec, TrainConfig};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Root seed; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateSection>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub rca: RcaSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    /// Recorded steps per trajectory.
    pub steps: usize,
    /// Explicit system; mutually exclusive with `random`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ScmSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomSystem>,
}

/// A random sparse spring system drawn from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSystem {
    pub nodes: usize,
    pub dims: usize,
    #[serde(default)]
    pub change_set: Vec<usize>,
    #[serde(default = "default_parents")]
    pub parents: usize,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default = "default_one")]
    pub trajectories: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confinement: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
}

fn default_parents() -> usize {
    2
}

fn default_density() -> f64 {
    0.2
}

fn default_one() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Window length T.
    pub window: usize,
    /// Rescale to unit maximum absolute value before windowing.
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            window: 10,
            normalize: true,
            corpus: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Prediction,
    Rca,
}

impl Preset {
    pub fn config(self) -> TrainConfig {
        match self {
            Preset::Prediction => TrainConfig::prediction(),
            Preset::Rca => TrainConfig::rca(),
        }
    }
}

/// A preset plus any overridden training fields.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSection {
    pub preset: Preset,
    #[serde(flatten)]
    pub config: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            preset: Preset::Prediction,
            config: TrainConfig::prediction(),
        }
    }
}

impl<'de> Deserialize<'de> for TrainSection {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut table = toml::Table::deserialize(de)?;
        let preset = match table.remove("preset") {
            Some(v) => Preset::deserialize(v).map_err(D::Error::custom)?,
            None => Preset::default(),
        };
        let mut merged = toml::Table::try_from(preset.config()).map_err(D::Error::custom)?;
        merge(&mut merged, table);
        let config = TrainConfig::deserialize(toml::Value::Table(merged)).map_err(D::Error::custom)?;
        Ok(Self { preset, config })
    }
}

/// Overlays `over` on `base`, descending into tables present in both.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RcaSection {
    #[serde(default = "default_extractor")]
    pub extractor: String,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Top-K size for ranking accuracy.
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_extractor() -> String {
    "regime-contrast".into()
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

fn default_k() -> usize {
    2
}

impl Default for RcaSection {
    fn default() -> Self {
        Self {
            extractor: default_extractor(),
            eps: DEFAULT_EPS,
            k: default_k(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies the command-line seed and pins derived seeds so the echo
    /// fully determines a rerun.
    pub fn resolve(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.train.config.seed = self.seed;
        self
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

impl GenerateSection {
    pub fn system(&self, seed: u64) -> Result<ScmSpec> {
        match (&self.spec, &self.random) {
            (Some(spec), None) => Ok(spec.clone()),
            (None, Some(r)) => {
                let mut rng = Rng::new(seed).derive(0);
                let mut spec = ScmSpec::random(r.nodes, r.dims, &r.change_set, r.parents, r.density, &mut rng);
                spec.trajectories = r.trajectories;
                spec.boundary_step = r.boundary_step;
                if let Some(v) = r.k1 {
                    spec.k1 = v;
                }
                if let Some(v) = r.k2 {
                    spec.k2 = v;
                }
                if let Some(v) = r.confinement {
                    spec.confinement = v;
                }
                if let Some(v) = r.h {
                    spec.h = v;
                }
                if let Some(v) = r.sigma_u {
                    spec.sigma_u = v;
                }
                if let Some(v) = r.burn_in {
                    spec.burn_in = v;
                }
                Ok(spec)
            }
            _ => Err(Error::Config("[generate] needs exactly one of `spec` or `random`".into())),
        }
    }
}
