//! Imputation quality, diversity and distribution metrics.
//!
//! Numeric values are compared after min-max normalization by the schema
//! range; categorical values by exact label match.

use crate::diffusion::SampleSet;
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::schema::{CompleteDesign, FeatureSchema, FeatureSpec, ObservationMask, Value};

pub const DEFAULT_KL_BINS: usize = 20;

fn check_aligned(predictions: &[CompleteDesign], truths: &[CompleteDesign], masks: &[ObservationMask]) -> Result<()> {
    if predictions.len() != truths.len() || truths.len() != masks.len() {
        return Err(Error::Metric(format!(
            "misaligned inputs: {} predictions, {} truths, {} masks",
            predictions.len(),
            truths.len(),
            masks.len()
        )));
    }
    Ok(())
}

fn norm(f: &FeatureSpec, v: &Value) -> f64 {
    f.normalize(v.as_num().expect("numeric value"))
}

/// Normalized `(prediction, truth)` pairs at missing numeric positions, per row.
fn numeric_misses(
    predictions: &[CompleteDesign],
    truths: &[CompleteDesign],
    masks: &[ObservationMask],
    schema: &FeatureSchema,
) -> Result<Vec<Vec<(f64, f64)>>> {
    check_aligned(predictions, truths, masks)?;
    let rows: Vec<Vec<(f64, f64)>> = predictions
        .iter()
        .zip(truths)
        .zip(masks)
        .map(|((p, t), m)| {
            m.missing()
                .filter(|&j| schema.feature(j).is_numeric())
                .map(|j| {
                    let f = schema.feature(j);
                    (norm(f, p.value(j)), norm(f, t.value(j)))
                })
                .collect()
        })
        .collect();
    if rows.iter().all(|r| r.is_empty()) {
        return Err(Error::Metric("no missing numeric feature in any row".into()));
    }
    Ok(rows)
}

/// Mean over rows of the per-row root mean squared error on missing numerics.
pub fn rmse(
    predictions: &[CompleteDesign],
    truths: &[CompleteDesign],
    masks: &[ObservationMask],
    schema: &FeatureSchema,
) -> Result<f64> {
    Ok(rmse_of_rows(&numeric_misses(predictions, truths, masks, schema)?))
}

/// RMSE core over per-row `(prediction, truth)` pairs; empty rows are skipped.
/// Returns NaN when every row is empty.
pub fn rmse_of_rows(rows: &[Vec<(f64, f64)>]) -> f64 {
    let per_row: Vec<f64> = rows
        .iter()
        .filter(|r| !r.is_empty())
        .map(|r| (r.iter().map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / r.len() as f64).sqrt())
        .collect();
    per_row.iter().sum::<f64>() / per_row.len() as f64
}

/// Mean over rows of the per-row mismatch fraction on missing categoricals.
pub fn error_rate(
    predictions: &[CompleteDesign],
    truths: &[CompleteDesign],
    masks: &[ObservationMask],
    schema: &FeatureSchema,
) -> Result<f64> {
    check_aligned(predictions, truths, masks)?;
    let mut total = 0.0;
    let mut rows = 0usize;
    for ((p, t), m) in predictions.iter().zip(truths).zip(masks) {
        let cats: Vec<usize> = m.missing().filter(|&j| !schema.feature(j).is_numeric()).collect();
        if cats.is_empty() {
            continue;
        }
        let wrong = cats.iter().filter(|&&j| p.value(j) != t.value(j)).count();
        total += wrong as f64 / cats.len() as f64;
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Metric("no missing categorical feature in any row".into()));
    }
    Ok(total / rows as f64)
}

/// Mean absolute error pooled over all missing numeric cells.
pub fn mae(
    predictions: &[CompleteDesign],
    truths: &[CompleteDesign],
    masks: &[ObservationMask],
    schema: &FeatureSchema,
) -> Result<f64> {
    let cells: Vec<(f64, f64)> = numeric_misses(predictions, truths, masks, schema)?
        .into_iter()
        .flatten()
        .collect();
    Ok(cells.iter().map(|(p, t)| (p - t).abs()).sum::<f64>() / cells.len() as f64)
}

/// `1 − SSE/SST` over pooled missing numeric cells; `None` when the truths are constant.
pub fn r_squared(
    predictions: &[CompleteDesign],
    truths: &[CompleteDesign],
    masks: &[ObservationMask],
    schema: &FeatureSchema,
) -> Result<Option<f64>> {
    let cells: Vec<(f64, f64)> = numeric_misses(predictions, truths, masks, schema)?
        .into_iter()
        .flatten()
        .collect();
    let mean = cells.iter().map(|(_, t)| t).sum::<f64>() / cells.len() as f64;
    let sst: f64 = cells.iter().map(|(_, t)| (t - mean) * (t - mean)).sum();
    if sst == 0.0 {
        return Ok(None);
    }
    let sse: f64 = cells.iter().map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(Some(1.0 - sse / sst))
}

/// Normalized distance between two values of one feature: absolute
/// difference for numerics, 0/1 mismatch for categoricals.
pub fn value_distance(f: &FeatureSpec, a: &Value, b: &Value) -> f64 {
    if f.is_numeric() {
        (norm(f, a) - norm(f, b)).abs()
    } else if a == b {
        0.0
    } else {
        1.0
    }
}

/// Largest pairwise distance among the draws of feature `j`.
pub fn max_pairwise_gap(f: &FeatureSpec, set: &SampleSet, j: usize) -> f64 {
    if f.is_numeric() {
        let (lo, hi) = set
            .values(j)
            .map(|v| norm(f, v))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        hi - lo
    } else {
        let mut values = set.values(j);
        let first = values.next();
        if values.any(|v| Some(v) != first) {
            1.0
        } else {
            0.0
        }
    }
}

/// Per-feature mean absolute Pearson correlation with every other feature
/// (categoricals by integer code; constant columns correlate as 0).
pub fn mean_abs_correlation(train: &Dataset) -> Vec<f64> {
    let schema = &train.schema;
    let d = schema.len();
    let n = train.len() as f64;
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let f = schema.feature(j);
            train
                .column(j)
                .map(|v| match v {
                    Value::Num(x) => *x,
                    Value::Cat(c) => f.category_index(c).expect("valid label") as f64,
                    Value::Missing => unreachable!("complete dataset"),
                })
                .collect()
        })
        .collect();
    let centered: Vec<(Vec<f64>, f64)> = cols
        .iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / n;
            let v: Vec<f64> = c.iter().map(|x| x - mean).collect();
            let ss = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (v, ss)
        })
        .collect();
    (0..d)
        .map(|i| {
            if d < 2 {
                return 0.0;
            }
            let total: f64 = (0..d)
                .filter(|&j| j != i)
                .map(|j| {
                    let (a, sa) = &centered[i];
                    let (b, sb) = &centered[j];
                    if *sa == 0.0 || *sb == 0.0 {
                        0.0
                    } else {
                        (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (sa * sb)).abs()
                    }
                })
                .sum();
            total / (d - 1) as f64
        })
        .collect()
}

/// Features whose mean absolute correlation exceeds the median over all features.
pub fn diversity_eligibility(train: &Dataset) -> Vec<bool> {
    let means = mean_abs_correlation(train);
    let mut sorted = means.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n == 0 {
        0.0
    } else if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    means.iter().map(|&m| m > median).collect()
}

/// Mean over rows of the mean, over eligible missing features, of the largest
/// pairwise gap between draws. Rows without an eligible missing feature are skipped.
pub fn diversity_with(sets: &[SampleSet], schema: &FeatureSchema, eligible: &[bool]) -> Result<f64> {
    let mut total = 0.0;
    let mut rows = 0usize;
    for set in sets {
        if set.len() < 2 {
            return Err(Error::Metric(format!("diversity needs K >= 2 draws, got {}", set.len())));
        }
        let feats: Vec<usize> = set.missing.iter().copied().filter(|&j| eligible[j]).collect();
        if feats.is_empty() {
            continue;
        }
        let sum: f64 = feats.iter().map(|&j| max_pairwise_gap(schema.feature(j), set, j)).sum();
        total += sum / feats.len() as f64;
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Metric("no eligible missing feature in any row".into()));
    }
    Ok(total / rows as f64)
}

/// Diversity with eligibility computed from `train`.
pub fn diversity_score(sets: &[SampleSet], schema: &FeatureSchema, train: &Dataset) -> Result<f64> {
    diversity_with(sets, schema, &diversity_eligibility(train))
}

/// Mean over sets of the largest pairwise gap for feature `j` (no eligibility filter).
pub fn feature_diversity(sets: &[SampleSet], schema: &FeatureSchema, j: usize) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::Metric("no sample sets".into()));
    }
    let mut total = 0.0;
    for set in sets {
        if set.len() < 2 {
            return Err(Error::Metric(format!("diversity needs K >= 2 draws, got {}", set.len())));
        }
        total += max_pairwise_gap(schema.feature(j), set, j);
    }
    Ok(total / sets.len() as f64)
}

/// `KL(p ‖ q)` of two count vectors after adding one to every bin.
pub fn smoothed_kl(generated: &[usize], reference: &[usize]) -> f64 {
    let zp = (generated.iter().sum::<usize>() + generated.len()) as f64;
    let zq = (reference.iter().sum::<usize>() + reference.len()) as f64;
    generated
        .iter()
        .zip(reference)
        .map(|(&g, &r)| {
            let p = (g + 1) as f64 / zp;
            let q = (r + 1) as f64 / zq;
            p * (p / q).ln()
        })
        .sum()
}

/// Histogram counts: equal-width bins over the schema range for numerics,
/// one bin per category for categoricals.
pub fn histogram(f: &FeatureSpec, values: &[Value], bins: usize) -> Vec<usize> {
    match f.categories() {
        Some(cats) => {
            let mut counts = vec![0; cats.len()];
            for v in values {
                counts[f.category_index(v.as_cat().expect("categorical")).expect("valid label")] += 1;
            }
            counts
        }
        None => {
            let mut counts = vec![0; bins];
            for v in values {
                let u = norm(f, v);
                let b = ((u * bins as f64).floor() as isize).clamp(0, bins as isize - 1) as usize;
                counts[b] += 1;
            }
            counts
        }
    }
}

/// `KL(generated ‖ dataset)` in nats over smoothed histograms of one feature.
pub fn feature_kl(generated: &[Value], dataset: &[Value], f: &FeatureSpec, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::Metric(format!("KL needs at least 2 bins, got {bins}")));
    }
    if generated.is_empty() || dataset.is_empty() {
        return Err(Error::Metric("KL needs non-empty samples".into()));
    }
    Ok(smoothed_kl(&histogram(f, generated, bins), &histogram(f, dataset, bins)))
}

/// Mean over rows of `|mean_k S_{k,j} − y_j|` on normalized values of numeric feature `j`.
pub fn conditional_distance(
    sets: &[SampleSet],
    truths: &[CompleteDesign],
    schema: &FeatureSchema,
    j: usize,
) -> Result<f64> {
    let f = schema.feature(j);
    if !f.is_numeric() {
        return Err(Error::Metric(format!("feature '{}' is not numeric", f.name)));
    }
    if sets.len() != truths.len() || sets.is_empty() {
        return Err(Error::Metric("conditional distance needs aligned, non-empty inputs".into()));
    }
    let mut total = 0.0;
    for (set, truth) in sets.iter().zip(truths) {
        if !set.missing.contains(&j) {
            return Err(Error::Metric(format!("feature '{}' is observed in some row", f.name)));
        }
        let mean = set.values(j).map(|v| norm(f, v)).sum::<f64>() / set.len() as f64;
        total += (mean - norm(f, truth.value(j))).abs();
    }
    Ok(total / sets.len() as f64)
}
