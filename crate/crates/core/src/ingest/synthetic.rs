//! Synthetic parametric assemblies with graph-structured latent coupling.
//!
//! Each component carries a latent factor. Latents are propagated along a
//! breadth-first spanning tree of the assembly graph, so that
//! `u_child = coupling·u_parent + sqrt(1 − coupling²)·z` and every latent is
//! marginally standard normal. Numeric features are linear in their
//! component's latent plus independent noise. Two categorical features are
//! added: one that is a deterministic threshold of a numeric driver and one
//! that is independent uniform noise.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::rng;
use crate::schema::{AssemblyGraph, CompleteDesign, FeatureSchema, FeatureSpec, Value};

/// Name of the categorical feature fully determined by its driver.
pub const STRONG_CATEGORICAL: &str = "style";
/// Name of the categorical feature drawn independently of everything else.
pub const NOISE_CATEGORICAL: &str = "colour";

const STRONG_LABELS: [&str; 2] = ["low", "high"];
const NOISE_LABELS: [&str; 4] = ["red", "green", "blue", "black"];
// half-width of numeric ranges, in standard deviations
const RANGE_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticComponent {
    pub name: String,
    pub numeric: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub components: Vec<SyntheticComponent>,
    #[serde(default)]
    pub edges: Vec<[String; 2]>,
    pub coupling: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub rows: usize,
    /// Adds [`STRONG_CATEGORICAL`] to the first component, thresholding its first numeric feature.
    #[serde(default = "yes")]
    pub strong_categorical: bool,
    /// Adds [`NOISE_CATEGORICAL`] to the last component.
    #[serde(default = "yes")]
    pub noise_categorical: bool,
}

fn default_noise() -> f64 {
    0.1
}

fn yes() -> bool {
    true
}

impl SyntheticConfig {
    /// Five components, 18 numeric plus 2 categorical features (D = 20).
    pub fn assembly(rows: usize, coupling: f64) -> Self {
        let comp = |name: &str, numeric| SyntheticComponent {
            name: name.into(),
            numeric,
        };
        let edge = |a: &str, b: &str| [a.to_string(), b.to_string()];
        SyntheticConfig {
            components: vec![
                comp("frame", 4),
                comp("fork", 4),
                comp("wheel", 3),
                comp("seat", 4),
                comp("bar", 3),
            ],
            edges: vec![
                edge("frame", "fork"),
                edge("fork", "wheel"),
                edge("frame", "seat"),
                edge("seat", "bar"),
            ],
            coupling,
            noise: default_noise(),
            rows,
            strong_categorical: true,
            noise_categorical: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config("synthetic config needs components".into()));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::Config(format!(
                "coupling {} must lie in [0, 1]",
                self.coupling
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise {} must be >= 0", self.noise)));
        }
        if self.rows == 0 {
            return Err(Error::Config("synthetic config needs rows > 0".into()));
        }
        if self.strong_categorical && self.components[0].numeric == 0 {
            return Err(Error::Config(
                "strong categorical needs a numeric driver in the first component".into(),
            ));
        }
        for (i, c) in self.components.iter().enumerate() {
            let extra = usize::from(i == 0 && self.strong_categorical)
                + usize::from(i + 1 == self.components.len() && self.noise_categorical);
            if c.numeric + extra == 0 {
                return Err(Error::Config(format!("component '{}' has no features", c.name)));
            }
        }
        Ok(())
    }
}

pub fn driver_feature_name(config: &SyntheticConfig) -> String {
    numeric_name(&config.components[0].name, 0)
}

fn numeric_name(component: &str, k: usize) -> String {
    format!("{component}_x{k}")
}

struct NumericLaw {
    component: usize,
    loading: f64,
    offset: f64,
    scale: f64,
}

/// Builds the schema, graph and dataset described by `config`.
pub fn generate_synthetic(
    config: &SyntheticConfig,
    seed: u64,
) -> Result<(Arc<FeatureSchema>, AssemblyGraph, Dataset)> {
    config.validate()?;
    let mut law_rng = rng::stream(seed, u64::MAX);
    let n_comp = config.components.len();
    let mut features = Vec::new();
    let mut laws: Vec<Option<NumericLaw>> = Vec::new();
    for (ci, comp) in config.components.iter().enumerate() {
        for k in 0..comp.numeric {
            let sign = if law_rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let loading = sign * law_rng.random_range(0.5..1.5);
            let offset = law_rng.random_range(0.0..100.0f64).round();
            let scale = law_rng.random_range(1.0..10.0f64).round();
            let sd = (loading * loading + config.noise * config.noise).sqrt();
            let half = RANGE_SIGMAS * sd * scale;
            features.push(FeatureSpec::numeric(
                numeric_name(&comp.name, k),
                offset - half,
                offset + half,
                comp.name.clone(),
            ));
            laws.push(Some(NumericLaw {
                component: ci,
                loading,
                offset,
                scale,
            }));
        }
        if ci == 0 && config.strong_categorical {
            features.push(FeatureSpec::categorical(
                STRONG_CATEGORICAL,
                STRONG_LABELS,
                comp.name.clone(),
            ));
            laws.push(None);
        }
        if ci + 1 == n_comp && config.noise_categorical {
            features.push(FeatureSpec::categorical(
                NOISE_CATEGORICAL,
                NOISE_LABELS,
                comp.name.clone(),
            ));
            laws.push(None);
        }
    }
    let schema = Arc::new(FeatureSchema::new(
        config.components.iter().map(|c| c.name.clone()).collect(),
        features,
    )?);
    let edges: Vec<(String, String)> = config
        .edges
        .iter()
        .map(|[a, b]| (a.clone(), b.clone()))
        .collect();
    let graph = AssemblyGraph::new(schema.clone(), schema.components().to_vec(), &edges)?;

    // BFS spanning forest: parent of each component, in visiting order
    let mut parent = vec![None; n_comp];
    let mut order = Vec::with_capacity(n_comp);
    let mut seen = vec![false; n_comp];
    for root in 0..n_comp {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(c) = queue.pop_front() {
            order.push(c);
            for &m in graph.neighbors(c) {
                if !seen[m] {
                    seen[m] = true;
                    parent[m] = Some(c);
                    queue.push_back(m);
                }
            }
        }
    }

    let driver = schema.index_of(&driver_feature_name(config));
    let strong = schema.index_of(STRONG_CATEGORICAL);
    let noise_cat = schema.index_of(NOISE_CATEGORICAL);
    let fresh = (1.0 - config.coupling * config.coupling).sqrt();
    let mut rows = Vec::with_capacity(config.rows);
    for r in 0..config.rows {
        let mut rng = rng::stream(seed, r as u64);
        let mut latent = vec![0.0; n_comp];
        for &c in &order {
            let z: f64 = StandardNormal.sample(&mut rng);
            latent[c] = match parent[c] {
                Some(p) => config.coupling * latent[p] + fresh * z,
                None => z,
            };
        }
        let mut values = vec![Value::Missing; schema.len()];
        for (j, law) in laws.iter().enumerate() {
            if let Some(law) = law {
                let eps: f64 = StandardNormal.sample(&mut rng);
                let x = law.loading * latent[law.component] + config.noise * eps;
                let (lo, hi) = schema.feature(j).range().expect("numeric");
                values[j] = Value::Num((law.offset + law.scale * x).clamp(lo, hi));
            }
        }
        if let (Some(s), Some(d)) = (strong, driver) {
            let law = laws[d].as_ref().expect("driver is numeric");
            let v = values[d].as_num().expect("driver set");
            values[s] = Value::Cat(STRONG_LABELS[usize::from(v > law.offset)].into());
        }
        if let Some(k) = noise_cat {
            values[k] = Value::Cat(NOISE_LABELS[rng.random_range(0..NOISE_LABELS.len())].into());
        }
        rows.push(CompleteDesign::new(&schema, values)?);
    }
    let dataset = Dataset::new(schema.clone(), rows, Provenance::Synthetic);
    Ok((schema, graph, dataset))
}
