//! Model checkpoints: configuration, normalization statistics, environment,
//! experiment provenance, and every parameter tensor by name.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::data::NormStats;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::models::{BaselineConfig, BaselineModel, SpltConfig, SpltModel};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPLTCK\x00\x01";
pub const VERSION: &str = concat!("splt-core ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug)]
pub enum Model {
    Splt(SpltModel),
    Baseline(BaselineModel),
}

impl Model {
    pub fn store(&self) -> &ParamStore {
        match self {
            Model::Splt(m) => &m.store,
            Model::Baseline(m) => &m.store,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Splt(_) => "splt",
            Model::Baseline(m) => match m.config.kind {
                crate::models::BaselineKind::Bc => "bc",
                crate::models::BaselineKind::Dt => "dt",
            },
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Model::Splt(m) => m.config.state_dim,
            Model::Baseline(m) => m.config.state_dim,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            Model::Splt(m) => m.config.action_dim,
            Model::Baseline(m) => m.config.action_dim,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub env: EnvConfig,
    /// Verbatim experiment configuration the model was trained under.
    pub experiment: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
enum ModelConfig {
    Splt(SpltConfig),
    Baseline(BaselineConfig),
}

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: String,
    model: ModelConfig,
    stats: NormStats,
    env: EnvConfig,
    experiment: serde_json::Value,
    params: Vec<ParamHeader>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let (config, stats) = match &self.model {
            Model::Splt(m) => (ModelConfig::Splt(m.config.clone()), m.stats.clone()),
            Model::Baseline(m) => (ModelConfig::Baseline(m.config.clone()), m.stats.clone()),
        };
        let store = self.model.store();
        let manifest = Manifest {
            version: VERSION.to_string(),
            model: config,
            stats,
            env: self.env.clone(),
            experiment: self.experiment.clone(),
            params: store
                .entries()
                .iter()
                .map(|e| ParamHeader {
                    name: e.name.clone(),
                    shape: e.value.shape().to_vec(),
                })
                .collect(),
        };
        let payload: Vec<f64> = store.entries().iter().flat_map(|e| e.value.data().iter().copied()).collect();
        container::write(path, CHECKPOINT_MAGIC, &manifest, &payload)
    }

    /// Rebuilds the architecture from the stored configuration and loads
    /// every tensor; any name or shape disagreement is an error.
    pub fn load(path: &Path) -> Result<Self> {
        let (m, payload): (Manifest, Vec<f64>) = container::read(path, CHECKPOINT_MAGIC)?;
        let mut stored = ParamStore::new();
        let mut at = 0;
        for h in &m.params {
            let n: usize = h.shape.iter().product();
            let data = payload
                .get(at..at + n)
                .ok_or_else(|| Error::Checkpoint("payload shorter than parameter list".into()))?;
            stored.add(h.name.clone(), Tensor::new(h.shape.clone(), data.to_vec())?, false);
            at += n;
        }
        if at != payload.len() {
            return Err(Error::Checkpoint("payload longer than parameter list".into()));
        }
        let mut rng = crate::rng::rng(0);
        let model = match m.model {
            ModelConfig::Splt(cfg) => {
                let mut model = SpltModel::new(cfg, m.stats, &mut rng)?;
                model.store.load_from(&stored)?;
                Model::Splt(model)
            }
            ModelConfig::Baseline(cfg) => {
                let mut model = BaselineModel::new(cfg, m.stats, &mut rng)?;
                model.store.load_from(&stored)?;
                Model::Baseline(model)
            }
        };
        Ok(Self {
            model,
            env: m.env,
            experiment: m.experiment,
        })
    }
}
