use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::metrics::value_distance;
use crate::schema::{CompleteDesign, PartialDesign};

/// Index of the training row closest to `partial` on its observed positions
/// (mean of per-feature normalized distances); ties go to the lowest index.
pub fn hotdeck_donor(train: &Dataset, partial: &PartialDesign) -> Result<usize> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let schema = &train.schema;
    let observed: Vec<usize> = partial.mask().observed().collect();
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (r, row) in train.rows.iter().enumerate() {
        let d = if observed.is_empty() {
            0.0
        } else {
            observed
                .iter()
                .map(|&j| value_distance(schema.feature(j), partial.value(j), row.value(j)))
                .sum::<f64>()
                / observed.len() as f64
        };
        if d < best_d {
            best_d = d;
            best = r;
        }
    }
    Ok(best)
}

/// Fills every missing position from the nearest donor row.
pub fn hotdeck_impute(train: &Dataset, partial: &PartialDesign) -> Result<CompleteDesign> {
    let donor = &train.rows[hotdeck_donor(train, partial)?];
    partial.complete_with(&train.schema, |j| donor.value(j).clone())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::ingest::Provenance;
    use crate::schema::{FeatureSchema, FeatureSpec, Value};

    fn data(rows: &[(f64, &str, f64)]) -> Dataset {
        let s = Arc::new(
            FeatureSchema::new(
                vec!["A".into()],
                vec![
                    FeatureSpec::numeric("x", 0.0, 10.0, "A"),
                    FeatureSpec::categorical("c", ["a", "b"], "A"),
                    FeatureSpec::numeric("y", 0.0, 1.0, "A"),
                ],
            )
            .unwrap(),
        );
        let rows = rows
            .iter()
            .map(|&(x, c, y)| {
                CompleteDesign::new(&s, vec![Value::Num(x), Value::Cat(c.into()), Value::Num(y)]).unwrap()
            })
            .collect();
        Dataset::new(s, rows, Provenance::Loaded)
    }

    #[test]
    fn hand_distance_table() {
        let d = data(&[(0.0, "a", 0.1), (6.0, "b", 0.2), (5.0, "a", 0.3)]);
        let p = PartialDesign::new(&d.schema, vec![Value::Num(4.0), Value::Cat("b".into()), Value::Missing]).unwrap();
        // distances: (0.4 + 1)/2 = 0.7, (0.2 + 0)/2 = 0.1, (0.1 + 1)/2 = 0.55
        assert_eq!(hotdeck_donor(&d, &p).unwrap(), 1);
        let out = hotdeck_impute(&d, &p).unwrap();
        assert_eq!(out.value(2), &Value::Num(0.2));
        assert_eq!(out.value(0), &Value::Num(4.0));
    }

    #[test]
    fn ties_go_to_the_lowest_row() {
        let d = data(&[(2.0, "a", 0.1), (2.0, "a", 0.2)]);
        let p = PartialDesign::new(&d.schema, vec![Value::Num(4.0), Value::Missing, Value::Missing]).unwrap();
        assert_eq!(hotdeck_donor(&d, &p).unwrap(), 0);
        assert!(hotdeck_donor(&data(&[]), &p).is_err());
    }
}
