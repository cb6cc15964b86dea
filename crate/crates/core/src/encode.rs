//! Numeric encodings of design rows consumed by the networks.
//!
//! Two representations live here. [`EncodedBatch`] is the conditioning view:
//! min-max normalized numerics, category indices and observed flags.
//! [`ContinuousLayout`] is the diffusion view: each numeric feature is one
//! slot holding its standardized normalized value (`2u - 1` until fitted to
//! data), each categorical feature with `C` labels spans
//! `⌈C/2⌉` slots holding a fixed cross-polytope code (`±e_k`), decoded by
//! nearest code.

use std::ops::Range;
use std::sync::Arc;

use ndarray::Array2;

use crate::nn::SlotMap;
use crate::schema::{FeatureSchema, PartialDesign, Value};

/// A batch of partial designs in network-ready form.
///
/// Entries at unobserved positions are payload only: every encoder must
/// ignore them and rely on `observed`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    pub batch: usize,
    pub features: usize,
    /// `B×D` normalized numeric values.
    pub numeric: Array2<f64>,
    /// Flat `b·D + i` category index.
    pub category: Vec<usize>,
    /// Flat `b·D + i` observed flag.
    pub observed: Vec<bool>,
}

impl EncodedBatch {
    pub fn from_partials<'a>(
        schema: &FeatureSchema,
        rows: impl IntoIterator<Item = &'a PartialDesign>,
    ) -> Self {
        let rows: Vec<&PartialDesign> = rows.into_iter().collect();
        let d = schema.len();
        let b = rows.len();
        let mut numeric = Array2::zeros((b, d));
        let mut category = vec![0; b * d];
        let mut observed = vec![false; b * d];
        for (r, row) in rows.iter().enumerate() {
            for (i, v) in row.values().iter().enumerate() {
                let f = schema.feature(i);
                match v {
                    Value::Num(x) => {
                        numeric[[r, i]] = f.normalize(*x);
                        observed[r * d + i] = true;
                    }
                    Value::Cat(label) => {
                        category[r * d + i] =
                            f.category_index(label).expect("validated category");
                        observed[r * d + i] = true;
                    }
                    Value::Missing => {}
                }
            }
        }
        EncodedBatch {
            batch: b,
            features: d,
            numeric,
            category,
            observed,
        }
    }

    pub fn is_observed(&self, b: usize, i: usize) -> bool {
        self.observed[b * self.features + i]
    }

    pub fn category(&self, b: usize, i: usize) -> usize {
        self.category[b * self.features + i]
    }
}

/// Row offsets of each categorical feature inside a stacked embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryTable {
    offsets: Vec<Option<usize>>,
    total: usize,
}

impl CategoryTable {
    pub fn new(schema: &FeatureSchema) -> Self {
        let mut total = 0;
        let offsets = schema
            .features()
            .iter()
            .map(|f| {
                if f.is_numeric() {
                    None
                } else {
                    let o = total;
                    total += f.cardinality();
                    Some(o)
                }
            })
            .collect();
        CategoryTable { offsets, total }
    }

    /// Total rows across all categorical features.
    pub fn rows(&self) -> usize {
        self.total
    }

    pub fn row(&self, feature: usize, category: usize) -> usize {
        self.offsets[feature].expect("categorical feature") + category
    }
}

/// Slot layout of the continuous diffusion space.
#[derive(Debug, Clone)]
pub struct ContinuousLayout {
    schema: Arc<FeatureSchema>,
    feature_slots: Vec<Range<usize>>,
    map: Arc<SlotMap>,
    /// Per-feature `(center, scale)` applied to the normalized numeric value.
    stats: Vec<(f64, f64)>,
}

impl ContinuousLayout {
    pub fn new(schema: Arc<FeatureSchema>) -> Self {
        let mut feature_slots = Vec::with_capacity(schema.len());
        let mut slot_token = Vec::new();
        for (i, f) in schema.features().iter().enumerate() {
            let width = if f.is_numeric() {
                1
            } else {
                f.cardinality().div_ceil(2)
            };
            let start = slot_token.len();
            slot_token.extend(std::iter::repeat_n(i, width));
            feature_slots.push(start..start + width);
        }
        let map = Arc::new(SlotMap {
            slot_token,
            tokens: schema.len(),
        });
        let stats = vec![(0.5, 0.5); schema.len()];
        ContinuousLayout {
            schema,
            feature_slots,
            map,
            stats,
        }
    }

    /// Centers and scales each numeric slot by the mean and standard deviation
    /// of the normalized column in `rows`; scales are floored at `1e-3`.
    pub fn fit_stats<'a>(&mut self, rows: impl IntoIterator<Item = &'a [Value]>) {
        let d = self.schema.len();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut n = 0usize;
        for row in rows {
            n += 1;
            for (i, v) in row.iter().enumerate() {
                if let Value::Num(x) = v {
                    let u = self.schema.feature(i).normalize(*x);
                    sum[i] += u;
                    sq[i] += u * u;
                }
            }
        }
        if n == 0 {
            return;
        }
        for i in 0..d {
            if self.schema.feature(i).is_numeric() {
                let mean = sum[i] / n as f64;
                let var = (sq[i] / n as f64 - mean * mean).max(0.0);
                self.stats[i] = (mean, var.sqrt().max(1e-3));
            }
        }
    }

    pub fn stats(&self) -> &[(f64, f64)] {
        &self.stats
    }

    pub fn set_stats(&mut self, stats: Vec<(f64, f64)>) {
        assert_eq!(stats.len(), self.schema.len(), "stats length");
        self.stats = stats;
    }

    /// Total slot count `L`.
    pub fn width(&self) -> usize {
        self.map.slot_token.len()
    }

    pub fn slots(&self, feature: usize) -> Range<usize> {
        self.feature_slots[feature].clone()
    }

    pub fn slot_map(&self) -> &Arc<SlotMap> {
        &self.map
    }

    /// Writes the code of a present value into `out` (length `width()`).
    pub fn encode_value(&self, feature: usize, value: &Value, out: &mut [f64]) {
        let slots = self.slots(feature);
        let f = self.schema.feature(feature);
        match value {
            Value::Num(x) => {
                let (c, sc) = self.stats[feature];
                out[slots.start] = (f.normalize(*x) - c) / sc;
            }
            Value::Cat(label) => {
                let k = f.category_index(label).expect("validated category");
                for s in slots.clone() {
                    out[s] = 0.0;
                }
                out[slots.start + k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
            }
            Value::Missing => {
                for s in slots {
                    out[s] = 0.0;
                }
            }
        }
    }

    pub fn encode_row(&self, values: &[Value]) -> Vec<f64> {
        let mut out = vec![0.0; self.width()];
        for (i, v) in values.iter().enumerate() {
            self.encode_value(i, v, &mut out);
        }
        out
    }

    /// Maps slot values back to a valid feature value: numerics are clamped
    /// to the declared range, categoricals take the nearest code (lowest index on ties).
    pub fn decode_value(&self, feature: usize, slots: &[f64]) -> Value {
        let f = self.schema.feature(feature);
        if f.is_numeric() {
            let (c, sc) = self.stats[feature];
            let u = (slots[0] * sc + c).clamp(0.0, 1.0);
            let (lo, hi) = f.range().expect("numeric");
            Value::Num(f.denormalize(u).clamp(lo, hi))
        } else {
            // all codes share unit norm, so nearest code = largest signed coordinate
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for k in 0..f.cardinality() {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                let score = sign * slots[k / 2];
                if score > best_score {
                    best_score = score;
                    best = k;
                }
            }
            Value::Cat(f.categories().expect("categorical")[best].clone())
        }
    }

    /// Conditioning batch of `partials` with observed numerics centered and
    /// scaled by the fitted statistics, matching the diffusion slots.
    pub fn encode_batch<'a>(&self, partials: impl IntoIterator<Item = &'a PartialDesign>) -> EncodedBatch {
        let mut batch = EncodedBatch::from_partials(&self.schema, partials);
        let d = batch.features;
        for r in 0..batch.batch {
            for i in 0..d {
                if batch.observed[r * d + i] && self.schema.feature(i).is_numeric() {
                    let (c, sc) = self.stats[i];
                    batch.numeric[[r, i]] = (batch.numeric[[r, i]] - c) / sc;
                }
            }
        }
        batch
    }

    /// Slot mask (`1.0` where the owning feature is hidden) for a row mask.
    pub fn hidden_slots(&self, observed: &[bool]) -> Vec<f64> {
        self.map
            .slot_token
            .iter()
            .map(|&i| if observed[i] { 0.0 } else { 1.0 })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::FeatureSpec;

    fn schema() -> Arc<FeatureSchema> {
        Arc::new(
            FeatureSchema::new(
                vec!["A".into()],
                vec![
                    FeatureSpec::numeric("x", 10.0, 20.0, "A"),
                    FeatureSpec::categorical("c", ["a", "b", "c"], "A"),
                    FeatureSpec::categorical("d", ["y", "n"], "A"),
                ],
            )
            .unwrap(),
        )
    }

    #[test]
    fn layout_widths() {
        let l = ContinuousLayout::new(schema());
        assert_eq!(l.width(), 1 + 2 + 1);
        assert_eq!(l.slots(1), 1..3);
        assert_eq!(l.slot_map().slot_token, vec![0, 1, 1, 2]);
    }

    #[test]
    fn codes_round_trip() {
        let s = schema();
        let l = ContinuousLayout::new(s.clone());
        for label in ["a", "b", "c"] {
            let mut out = vec![0.0; 4];
            l.encode_value(1, &Value::Cat(label.into()), &mut out);
            assert_eq!(l.decode_value(1, &out[1..3]), Value::Cat(label.into()));
        }
        let row = l.encode_row(&[Value::Num(15.0), Value::Cat("c".into()), Value::Cat("n".into())]);
        assert_eq!(row, vec![0.0, 0.0, 1.0, -1.0]);
        assert_eq!(l.decode_value(0, &[5.0]), Value::Num(20.0));
        assert_eq!(l.decode_value(0, &[-0.5]), Value::Num(12.5));
    }

    #[test]
    fn batch_encoding() {
        let s = schema();
        let p = PartialDesign::new(&s, vec![Value::Num(15.0), Value::Missing, Value::Cat("n".into())])
            .unwrap();
        let e = EncodedBatch::from_partials(&s, [&p]);
        assert_eq!(e.numeric[[0, 0]], 0.5);
        assert_eq!(e.observed, vec![true, false, true]);
        assert_eq!(e.category(0, 2), 1);
        let t = CategoryTable::new(&s);
        assert_eq!(t.rows(), 5);
        assert_eq!(t.row(2, 1), 4);
    }
}
