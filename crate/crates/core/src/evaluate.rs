//! Runs an imputation method over a masked test set and collects every metric.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::baselines::{forest_impute, hotdeck_impute, ppca_fit, ForestConfig, PpcaConfig};
use crate::diffusion::{point_estimate, ImputerModel, SampleSet};
use crate::error::{Error, Result};
use crate::ingest::{Dataset, MaskedCase, MaskingProtocol};
use crate::metrics;
use crate::schema::{CompleteDesign, ObservationMask, Value};

pub const REPORT_VERSION: u32 = 1;
pub const NORMALIZATION_NOTE: &str =
    "numeric values min-max normalized by schema range; categorical values compared by label";

/// An imputation method under evaluation.
pub enum Method<'a> {
    Diffusion(&'a ImputerModel),
    HotDeck,
    Ppca(PpcaConfig),
    Forest(ForestConfig),
    /// Returns the ground truth; useful as a sanity reference.
    Oracle,
}

impl Method<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Diffusion(_) => "diffusion",
            Method::HotDeck => "hotdeck",
            Method::Ppca(_) => "ppca",
            Method::Forest(_) => "forest",
            Method::Oracle => "oracle",
        }
    }

    pub fn is_generative(&self) -> bool {
        matches!(self, Method::Diffusion(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Draws per test case (`K`).
    pub samples: usize,
    pub seed: u64,
    pub kl_bins: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            samples: 50,
            seed: 0,
            kl_bins: metrics::DEFAULT_KL_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHistogram {
    pub generated: Vec<usize>,
    pub dataset: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub report_version: u32,
    pub normalization: String,
    pub method: String,
    pub n_test: usize,
    pub samples_per_case: usize,
    pub rmse: Option<f64>,
    pub error_rate: Option<f64>,
    pub mae: Option<f64>,
    pub r_squared: Option<f64>,
    pub diversity_score: Option<f64>,
    /// KL(generated ‖ training data) per feature that was missing at least once.
    pub feature_kl: BTreeMap<String, f64>,
    /// Only for numeric features missing in every test row.
    pub conditional_distance: BTreeMap<String, f64>,
    pub feature_histograms: BTreeMap<String, FeatureHistogram>,
    /// `M_i`: number of missing features per test row.
    pub missing_per_row: Vec<usize>,
    pub config: serde_json::Value,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Sample sets for every case; deterministic methods repeat their single output.
pub fn run_method(
    method: &Method,
    train: &Dataset,
    cases: &[MaskedCase],
    options: &EvalOptions,
) -> Result<Vec<SampleSet>> {
    let k = options.samples;
    let replicate = |outputs: Vec<CompleteDesign>| -> Vec<SampleSet> {
        outputs
            .into_iter()
            .zip(cases)
            .map(|(o, c)| SampleSet {
                draws: vec![o; k],
                missing: c.partial.mask().missing().collect(),
            })
            .collect()
    };
    let schema = &train.schema;
    Ok(match method {
        Method::Diffusion(model) => {
            let partials: Vec<_> = cases.iter().map(|c| c.partial.clone()).collect();
            model.sample_many(&partials, k, options.seed)?
        }
        Method::HotDeck => replicate(
            cases
                .iter()
                .map(|c| hotdeck_impute(train, &c.partial))
                .collect::<Result<_>>()?,
        ),
        Method::Ppca(cfg) => {
            let model = ppca_fit(train, cfg)?;
            replicate(
                cases
                    .iter()
                    .map(|c| model.impute(schema, &c.partial))
                    .collect::<Result<_>>()?,
            )
        }
        Method::Forest(cfg) => {
            let partials: Vec<_> = cases.iter().map(|c| c.partial.clone()).collect();
            replicate(forest_impute(train, &partials, cfg)?)
        }
        Method::Oracle => replicate(cases.iter().map(|c| c.truth.clone()).collect()),
    })
}

fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Metric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Metrics of precomputed sample sets against the masked cases.
pub fn report_from_samples(
    method_name: &str,
    train: &Dataset,
    cases: &[MaskedCase],
    sets: &[SampleSet],
    options: &EvalOptions,
    config: serde_json::Value,
) -> Result<EvaluationReport> {
    if cases.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let schema = &train.schema;
    let preds: Vec<CompleteDesign> = cases
        .iter()
        .zip(sets)
        .map(|(c, s)| point_estimate(schema, &c.partial, s))
        .collect::<Result<_>>()?;
    let truths: Vec<CompleteDesign> = cases.iter().map(|c| c.truth.clone()).collect();
    let masks: Vec<ObservationMask> = cases.iter().map(|c| c.partial.mask().clone()).collect();

    let rmse = optional(metrics::rmse(&preds, &truths, &masks, schema))?;
    let error_rate = optional(metrics::error_rate(&preds, &truths, &masks, schema))?;
    let mae = optional(metrics::mae(&preds, &truths, &masks, schema))?;
    let r_squared = optional(metrics::r_squared(&preds, &truths, &masks, schema))?.flatten();
    let diversity_score = if options.samples >= 2 {
        optional(metrics::diversity_score(sets, schema, train))?
    } else {
        None
    };

    let mut feature_kl = BTreeMap::new();
    let mut feature_histograms = BTreeMap::new();
    let mut conditional_distance = BTreeMap::new();
    for j in 0..schema.len() {
        let f = schema.feature(j);
        let generated: Vec<Value> = sets
            .iter()
            .filter(|s| s.missing.contains(&j))
            .flat_map(|s| s.values(j).cloned())
            .collect();
        if generated.is_empty() {
            continue;
        }
        let dataset: Vec<Value> = train.column(j).cloned().collect();
        feature_kl.insert(f.name.clone(), metrics::feature_kl(&generated, &dataset, f, options.kl_bins)?);
        feature_histograms.insert(
            f.name.clone(),
            FeatureHistogram {
                generated: metrics::histogram(f, &generated, options.kl_bins),
                dataset: metrics::histogram(f, &dataset, options.kl_bins),
            },
        );
        if f.is_numeric() && sets.iter().all(|s| s.missing.contains(&j)) {
            conditional_distance.insert(
                f.name.clone(),
                metrics::conditional_distance(sets, &truths, schema, j)?,
            );
        }
    }
    Ok(EvaluationReport {
        report_version: REPORT_VERSION,
        normalization: NORMALIZATION_NOTE.into(),
        method: method_name.into(),
        n_test: cases.len(),
        samples_per_case: options.samples,
        rmse,
        error_rate,
        mae,
        r_squared,
        diversity_score,
        feature_kl,
        conditional_distance,
        feature_histograms,
        missing_per_row: masks.iter().map(|m| m.missing_count()).collect(),
        config,
    })
}

/// Evaluates `method` on the masked cases, echoing the protocol and options in the report.
pub fn evaluate(
    method: &Method,
    train: &Dataset,
    cases: &[MaskedCase],
    protocol: &MaskingProtocol,
    options: &EvalOptions,
) -> Result<EvaluationReport> {
    if options.samples == 0 {
        return Err(Error::Config("samples per case must be >= 1".into()));
    }
    let sets = run_method(method, train, cases, options)?;
    let mut config = serde_json::json!({
        "protocol": protocol,
        "options": options,
    });
    match method {
        Method::Diffusion(m) => config["model"] = serde_json::to_value(m.config())?,
        Method::Ppca(c) => config["ppca"] = serde_json::to_value(c)?,
        Method::Forest(c) => config["forest"] = serde_json::to_value(c)?,
        Method::HotDeck | Method::Oracle => {}
    }
    report_from_samples(method.name(), train, cases, &sets, options, config)
}
