//! Experiment configuration files.
//!
//! Relative paths are resolved against the directory of the config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{ForestConfig, PpcaConfig};
use crate::diffusion::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::ingest::{
    augment, generate_synthetic, load_csv, make_masked_testset, split, Dataset, MaskedCase,
    MaskingProtocol, SplitSpec, SyntheticConfig,
};
use crate::schema::{AssemblyGraph, FeatureSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Diffusion,
    Hotdeck,
    Ppca,
    Forest,
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "diffusion" => Ok(MethodKind::Diffusion),
            "hotdeck" => Ok(MethodKind::Hotdeck),
            "ppca" => Ok(MethodKind::Ppca),
            "forest" => Ok(MethodKind::Forest),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected diffusion, hotdeck, ppca or forest)"
            ))),
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodKind::Diffusion => "diffusion",
            MethodKind::Hotdeck => "hotdeck",
            MethodKind::Ppca => "ppca",
            MethodKind::Forest => "forest",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub data: Option<PathBuf>,
    /// Used instead of the three paths above.
    pub synthetic: Option<SyntheticConfig>,
    /// Seed for synthetic generation and augmentation.
    pub data_seed: u64,
    /// Grow the dataset to this many rows by interpolating neighbours.
    pub augment_to: Option<usize>,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub masking: MaskingProtocol,
    /// Seed for parameter initialization, training and sampling.
    pub seed: u64,
    pub method: MethodKind,
    /// Draws per test case.
    pub samples: usize,
    pub ppca: PpcaConfig,
    pub forest: ForestConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema: None,
            graph: None,
            data: None,
            synthetic: None,
            data_seed: 0,
            augment_to: None,
            split: SplitSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            masking: MaskingProtocol::default(),
            seed: 0,
            method: MethodKind::Diffusion,
            samples: 50,
            ppca: PpcaConfig::default(),
            forest: ForestConfig::default(),
        }
    }
}

/// Loaded data ready for training and evaluation.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub graph: AssemblyGraph,
    pub train: Dataset,
    pub test: Dataset,
}

impl Experiment {
    pub fn schema(&self) -> &Arc<FeatureSchema> {
        self.graph.schema()
    }
}

impl ExperimentConfig {
    /// Reads, resolves and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Quick synthetic setup used by smoke runs.
    pub fn synthetic_quick(rows: usize, coupling: f64) -> Self {
        ExperimentConfig {
            synthetic: Some(SyntheticConfig::assembly(rows, coupling)),
            ..Default::default()
        }
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.schema, &mut self.graph, &mut self.data].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let paths = [("schema", &self.schema), ("graph", &self.graph), ("data", &self.data)];
        match &self.synthetic {
            Some(syn) => {
                if paths.iter().any(|(_, p)| p.is_some()) {
                    return Err(Error::Config(
                        "give either a synthetic section or schema/graph/data paths, not both".into(),
                    ));
                }
                syn.validate()?;
            }
            None => {
                for (name, p) in paths {
                    let p = p
                        .as_ref()
                        .ok_or_else(|| Error::Config(format!("missing '{name}' path")))?;
                    if !p.is_file() {
                        return Err(Error::Config(format!(
                            "{name} file not found: {}",
                            p.display()
                        )));
                    }
                }
            }
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be >= 1".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        if !(self.masking.missing_fraction > 0.0 && self.masking.missing_fraction < 1.0) {
            return Err(Error::Config("masking.missing_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Loads (or generates) the data, augments it and splits it.
    pub fn materialize(&self) -> Result<Experiment> {
        let (graph, data) = match &self.synthetic {
            Some(syn) => {
                let (_, graph, data) = generate_synthetic(syn, self.data_seed)?;
                (graph, data)
            }
            None => {
                let schema = Arc::new(FeatureSchema::load(self.schema.as_ref().expect("validated"))?);
                let graph = AssemblyGraph::load(self.graph.as_ref().expect("validated"), schema.clone())?;
                let data = load_csv(self.data.as_ref().expect("validated"), schema)?;
                (graph, data)
            }
        };
        let data = match self.augment_to {
            Some(n) => augment(&data, n, self.data_seed)?,
            None => data,
        };
        let (train, test) = split(&data, &self.split)?;
        Ok(Experiment { graph, train, test })
    }

    pub fn masked_cases(&self, experiment: &Experiment) -> Result<Vec<MaskedCase>> {
        make_masked_testset(&experiment.test, &self.masking)
    }
}
