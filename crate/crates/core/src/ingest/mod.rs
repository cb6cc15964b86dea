//! Dataset loading, augmentation, train/test splitting and the test-time
//! masking protocol.

mod synthetic;

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::schema::{
    apply_mask, CompleteDesign, FeatureKind, FeatureSchema, ObservationMask, PartialDesign, Value,
};

pub use synthetic::{
    generate_synthetic, SyntheticComponent, SyntheticConfig, NOISE_CATEGORICAL,
    STRONG_CATEGORICAL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Loaded,
    Augmented,
    Synthetic,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: Arc<FeatureSchema>,
    pub rows: Vec<CompleteDesign>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(schema: Arc<FeatureSchema>, rows: Vec<CompleteDesign>, provenance: Provenance) -> Self {
        Dataset {
            schema,
            rows,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Column `j` across all rows.
    pub fn column(&self, j: usize) -> impl Iterator<Item = &Value> + '_ {
        self.rows.iter().map(move |r| r.value(j))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_rows(file, &self.schema, self.rows.iter().map(CompleteDesign::values))
    }
}

/// Writes rows under a header of schema feature names; missing cells are empty.
pub fn write_rows<'a, W: Write>(
    writer: W,
    schema: &FeatureSchema,
    rows: impl IntoIterator<Item = &'a [Value]>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(schema.features().iter().map(|f| f.name.as_str()))
        .map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(Value::to_string))
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}

fn read_records<R: Read>(
    reader: R,
    schema: &FeatureSchema,
    allow_missing: bool,
) -> Result<Vec<Vec<Value>>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = r.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    let expected: Vec<&str> = schema.features().iter().map(|f| f.name.as_str()).collect();
    let found: Vec<&str> = headers.iter().map(str::trim).collect();
    if found != expected {
        return Err(Error::Parse(format!(
            "CSV header does not match schema feature names (expected {} columns, found {})",
            expected.len(),
            found.len()
        )));
    }
    let mut rows = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        let mut values = Vec::with_capacity(schema.len());
        for (j, cell) in record.iter().enumerate() {
            let f = schema.feature(j);
            let v = f.parse_cell(cell).map_err(|message| Error::Cell {
                row: row + 1,
                column: f.name.clone(),
                message,
            })?;
            if v.is_missing() && !allow_missing {
                return Err(Error::Cell {
                    row: row + 1,
                    column: f.name.clone(),
                    message: "empty cell in a complete dataset".into(),
                });
            }
            values.push(v);
        }
        rows.push(values);
    }
    Ok(rows)
}

/// Loads complete design rows; every cell must be present and valid.
pub fn load_csv(path: impl AsRef<Path>, schema: Arc<FeatureSchema>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: Arc<FeatureSchema>) -> Result<Dataset> {
    let rows = read_records(reader, &schema, false)?
        .into_iter()
        .map(|values| CompleteDesign::new(&schema, values))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(schema, rows, Provenance::Loaded))
}

/// Loads partial design rows; empty cells are missing.
pub fn load_partial_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Vec<PartialDesign>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file, schema, true)?
        .into_iter()
        .map(|values| PartialDesign::new(schema, values))
        .collect()
}

/// Draws a uniform value for feature `j` within its declared domain.
fn uniform_value(schema: &FeatureSchema, j: usize, rng: &mut rng::Rng) -> Value {
    match &schema.feature(j).kind {
        FeatureKind::Numeric { lo, hi } => Value::Num(rng.random_range(*lo..=*hi)),
        FeatureKind::Categorical { categories } => {
            Value::Cat(categories.choose(rng).expect("non-empty categories").clone())
        }
    }
}

/// Extends the dataset to `target_size` rows by cloning a uniformly chosen
/// source row and resampling a uniformly chosen non-empty subset of its
/// features within their valid domains.
pub fn augment(dataset: &Dataset, target_size: usize, seed: u64) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if target_size < dataset.len() {
        return Err(Error::Config(format!(
            "augment target {target_size} is smaller than the dataset ({})",
            dataset.len()
        )));
    }
    let schema = &dataset.schema;
    let d = schema.len();
    let base = dataset.len();
    let mut rows = dataset.rows.clone();
    for k in 0..target_size - base {
        let mut rng = rng::stream(seed, k as u64);
        let source = &dataset.rows[rng.random_range(0..base)];
        // uniform over non-empty subsets
        let subset: Vec<bool> = loop {
            let s: Vec<bool> = (0..d).map(|_| rng.random_bool(0.5)).collect();
            if s.iter().any(|&b| b) {
                break s;
            }
        };
        let values = (0..d)
            .map(|j| {
                if subset[j] {
                    uniform_value(schema, j, &mut rng)
                } else {
                    source.value(j).clone()
                }
            })
            .collect();
        rows.push(CompleteDesign::new(schema, values)?);
    }
    let provenance = if target_size == base {
        dataset.provenance
    } else {
        Provenance::Augmented
    };
    Ok(Dataset::new(schema.clone(), rows, provenance))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.9,
            seed: 0,
        }
    }
}

/// Seeded shuffle into `⌊fraction·N⌋` training rows and the remainder.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction {} must lie in (0, 1)",
            spec.train_fraction
        )));
    }
    let n = dataset.len();
    let n_train = (spec.train_fraction * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(spec.seed));
    let take = |idx: &[usize]| {
        Dataset::new(
            dataset.schema.clone(),
            idx.iter().map(|&i| dataset.rows[i].clone()).collect(),
            dataset.provenance,
        )
    };
    Ok((take(&order[..n_train]), take(&order[n_train..])))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    RandomPerRow,
    FixedFeature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskingProtocol {
    pub missing_fraction: f64,
    pub mode: MaskMode,
    pub target_feature: Option<String>,
    pub seed: u64,
}

impl Default for MaskingProtocol {
    fn default() -> Self {
        MaskingProtocol {
            missing_fraction: 0.10,
            mode: MaskMode::RandomPerRow,
            target_feature: None,
            seed: 0,
        }
    }
}

impl MaskingProtocol {
    pub fn fixed_feature(name: impl Into<String>, seed: u64) -> Self {
        MaskingProtocol {
            mode: MaskMode::FixedFeature,
            target_feature: Some(name.into()),
            seed,
            ..Default::default()
        }
    }
}

/// Number of features hidden per row: nearest integer to `fraction·d`, at least one.
pub fn hidden_count(d: usize, fraction: f64) -> usize {
    ((fraction * d as f64).round() as usize).clamp(1, d.max(1))
}

/// Uniformly chosen mask hiding `hidden_count(d, fraction)` positions.
pub fn random_mask(d: usize, fraction: f64, rng: &mut rng::Rng) -> ObservationMask {
    let k = hidden_count(d, fraction);
    let hidden = rand::seq::index::sample(rng, d, k).into_vec();
    ObservationMask::hiding(d, &hidden)
}

/// A masked test row paired with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedCase {
    pub partial: PartialDesign,
    pub truth: CompleteDesign,
}

pub fn make_masked_testset(test: &Dataset, protocol: &MaskingProtocol) -> Result<Vec<MaskedCase>> {
    let d = test.schema.len();
    if !(protocol.missing_fraction > 0.0 && protocol.missing_fraction < 1.0) {
        return Err(Error::Config(format!(
            "missing_fraction {} must lie in (0, 1)",
            protocol.missing_fraction
        )));
    }
    let fixed = match protocol.mode {
        MaskMode::FixedFeature => {
            let name = protocol.target_feature.as_deref().ok_or_else(|| {
                Error::Config("fixed_feature masking needs a target_feature".into())
            })?;
            Some(test.schema.index_of(name).ok_or_else(|| {
                Error::Config(format!("masking target '{name}' is not a schema feature"))
            })?)
        }
        MaskMode::RandomPerRow => None,
    };
    test.rows
        .iter()
        .enumerate()
        .map(|(i, truth)| {
            let mask = match fixed {
                Some(j) => ObservationMask::hiding(d, &[j]),
                None => random_mask(
                    d,
                    protocol.missing_fraction,
                    &mut rng::stream(protocol.seed, i as u64),
                ),
            };
            Ok(MaskedCase {
                partial: apply_mask(truth, &mask)?,
                truth: truth.clone(),
            })
        })
        .collect()
}
