//! Shared test support: random instances, naive metric oracles written with
//! plain index loops, and a central-difference gradient checker.

#![allow(dead_code)]

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng as _;

use gdimpute_core::diffusion::SampleSet;
use gdimpute_core::ingest::{Dataset, Provenance};
use gdimpute_core::nn::{Binding, ParamStore, Tape, Var};
use gdimpute_core::rng::{self, Rng};
use gdimpute_core::schema::{
    AssemblyGraph, CompleteDesign, FeatureSchema, FeatureSpec, ObservationMask, PartialDesign, Value,
};

pub const LABELS: [&str; 4] = ["p", "q", "r", "s"];

/// Schema with `comps` components, each holding 1..=3 features; roughly a
/// third of the features categorical with 2..=4 labels.
pub fn random_schema(rng: &mut Rng, comps: usize) -> Arc<FeatureSchema> {
    let names: Vec<String> = (0..comps).map(|c| format!("c{c}")).collect();
    let mut features = Vec::new();
    for c in &names {
        for k in 0..rng.random_range(1..=3) {
            let name = format!("{c}_f{k}");
            if rng.random_bool(0.3) {
                let n = rng.random_range(2..=4);
                features.push(FeatureSpec::categorical(name, LABELS[..n].iter().copied(), c.clone()));
            } else {
                let lo = rng.random_range(-5.0..5.0f64);
                let hi = lo + rng.random_range(0.5..10.0);
                features.push(FeatureSpec::numeric(name, lo, hi, c.clone()));
            }
        }
    }
    Arc::new(FeatureSchema::new(names, features).unwrap())
}

/// Random simple graph over the schema components.
pub fn random_graph(rng: &mut Rng, schema: Arc<FeatureSchema>) -> AssemblyGraph {
    let nodes = schema.components().to_vec();
    let mut edges = Vec::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            if rng.random_bool(0.4) {
                edges.push((nodes[i].clone(), nodes[j].clone()));
            }
        }
    }
    AssemblyGraph::new(schema, nodes, &edges).unwrap()
}

pub fn random_value(f: &FeatureSpec, rng: &mut Rng) -> Value {
    match (f.range(), f.categories()) {
        (Some((lo, hi)), _) => Value::Num(rng.random_range(lo..=hi)),
        (None, Some(c)) => Value::Cat(c[rng.random_range(0..c.len())].clone()),
        _ => unreachable!(),
    }
}

pub fn random_row(schema: &FeatureSchema, rng: &mut Rng) -> CompleteDesign {
    let values = schema.features().iter().map(|f| random_value(f, rng)).collect();
    CompleteDesign::new(schema, values).unwrap()
}

pub fn random_dataset(schema: &Arc<FeatureSchema>, n: usize, rng: &mut Rng) -> Dataset {
    let rows = (0..n).map(|_| random_row(schema, rng)).collect();
    Dataset::new(schema.clone(), rows, Provenance::Synthetic)
}

/// Mask hiding each feature with probability 1/2, at least one.
pub fn random_mask(d: usize, rng: &mut Rng) -> ObservationMask {
    let mut hidden: Vec<usize> = (0..d).filter(|_| rng.random_bool(0.5)).collect();
    if hidden.is_empty() {
        hidden.push(rng.random_range(0..d));
    }
    ObservationMask::hiding(d, &hidden)
}

pub fn partial_of(schema: &FeatureSchema, row: &CompleteDesign, mask: &ObservationMask) -> PartialDesign {
    let values = (0..schema.len())
        .map(|j| if mask.is_observed(j) { row.value(j).clone() } else { Value::Missing })
        .collect();
    PartialDesign::new(schema, values).unwrap()
}

/// `K` draws that keep the truth's observed cells and randomize the rest.
pub fn random_set(schema: &FeatureSchema, truth: &CompleteDesign, mask: &ObservationMask, k: usize, rng: &mut Rng) -> SampleSet {
    let draws = (0..k)
        .map(|_| {
            let values = (0..schema.len())
                .map(|j| {
                    if mask.is_observed(j) {
                        truth.value(j).clone()
                    } else {
                        random_value(schema.feature(j), rng)
                    }
                })
                .collect();
            CompleteDesign::new(schema, values).unwrap()
        })
        .collect();
    SampleSet {
        draws,
        missing: mask.missing().collect(),
    }
}

// ---------------------------------------------------------------------------
// naive oracles

fn num(v: &Value) -> f64 {
    match v {
        Value::Num(x) => *x,
        _ => panic!("not numeric"),
    }
}

fn unit(f: &FeatureSpec, v: &Value) -> f64 {
    let (lo, hi) = f.range().unwrap();
    (num(v) - lo) / (hi - lo)
}

fn cat_code(f: &FeatureSpec, v: &Value) -> f64 {
    let c = f.categories().unwrap();
    let Value::Cat(label) = v else { panic!("not categorical") };
    c.iter().position(|x| x == label).unwrap() as f64
}

pub fn naive_rmse(preds: &[CompleteDesign], truths: &[CompleteDesign], masks: &[ObservationMask], s: &FeatureSchema) -> Option<f64> {
    let mut sum_rows = 0.0;
    let mut n_rows = 0;
    for r in 0..preds.len() {
        let mut se = 0.0;
        let mut m = 0;
        for j in 0..s.len() {
            if !masks[r].is_observed(j) && s.feature(j).is_numeric() {
                let e = unit(s.feature(j), preds[r].value(j)) - unit(s.feature(j), truths[r].value(j));
                se += e * e;
                m += 1;
            }
        }
        if m > 0 {
            sum_rows += (se / m as f64).sqrt();
            n_rows += 1;
        }
    }
    (n_rows > 0).then(|| sum_rows / n_rows as f64)
}

pub fn naive_error_rate(preds: &[CompleteDesign], truths: &[CompleteDesign], masks: &[ObservationMask], s: &FeatureSchema) -> Option<f64> {
    let mut sum_rows = 0.0;
    let mut n_rows = 0;
    for r in 0..preds.len() {
        let mut wrong = 0;
        let mut m = 0;
        for j in 0..s.len() {
            if !masks[r].is_observed(j) && !s.feature(j).is_numeric() {
                m += 1;
                if preds[r].value(j) != truths[r].value(j) {
                    wrong += 1;
                }
            }
        }
        if m > 0 {
            sum_rows += wrong as f64 / m as f64;
            n_rows += 1;
        }
    }
    (n_rows > 0).then(|| sum_rows / n_rows as f64)
}

fn pooled(preds: &[CompleteDesign], truths: &[CompleteDesign], masks: &[ObservationMask], s: &FeatureSchema) -> Vec<(f64, f64)> {
    let mut cells = Vec::new();
    for r in 0..preds.len() {
        for j in 0..s.len() {
            if !masks[r].is_observed(j) && s.feature(j).is_numeric() {
                cells.push((unit(s.feature(j), preds[r].value(j)), unit(s.feature(j), truths[r].value(j))));
            }
        }
    }
    cells
}

pub fn naive_mae(preds: &[CompleteDesign], truths: &[CompleteDesign], masks: &[ObservationMask], s: &FeatureSchema) -> Option<f64> {
    let cells = pooled(preds, truths, masks, s);
    if cells.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for (p, t) in &cells {
        total += (p - t).abs();
    }
    Some(total / cells.len() as f64)
}

pub fn naive_r2(preds: &[CompleteDesign], truths: &[CompleteDesign], masks: &[ObservationMask], s: &FeatureSchema) -> Option<Option<f64>> {
    let cells = pooled(preds, truths, masks, s);
    if cells.is_empty() {
        return None;
    }
    let mut mean = 0.0;
    for (_, t) in &cells {
        mean += t;
    }
    mean /= cells.len() as f64;
    let (mut sse, mut sst) = (0.0, 0.0);
    for (p, t) in &cells {
        sse += (p - t) * (p - t);
        sst += (t - mean) * (t - mean);
    }
    Some((sst != 0.0).then(|| 1.0 - sse / sst))
}

/// Pearson correlation by the textbook two-pass formula.
fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx.sqrt() * syy.sqrt())
    }
}

pub fn naive_eligibility(train: &Dataset) -> Vec<bool> {
    let s = &train.schema;
    let d = s.len();
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            train
                .rows
                .iter()
                .map(|r| {
                    let f = s.feature(j);
                    if f.is_numeric() { num(r.value(j)) } else { cat_code(f, r.value(j)) }
                })
                .collect()
        })
        .collect();
    let mut means = vec![0.0; d];
    for i in 0..d {
        if d < 2 {
            break;
        }
        let mut acc = 0.0;
        for j in 0..d {
            if i != j {
                acc += pearson(&cols[i], &cols[j]).abs();
            }
        }
        means[i] = acc / (d - 1) as f64;
    }
    let mut sorted = means.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if d % 2 == 1 { sorted[d / 2] } else { 0.5 * (sorted[d / 2 - 1] + sorted[d / 2]) };
    means.iter().map(|&m| m > median).collect()
}

fn gap(f: &FeatureSpec, set: &SampleSet, j: usize) -> f64 {
    let mut best: f64 = 0.0;
    for a in 0..set.draws.len() {
        for b in 0..set.draws.len() {
            let (x, y) = (set.draws[a].value(j), set.draws[b].value(j));
            let d = if f.is_numeric() {
                (unit(f, x) - unit(f, y)).abs()
            } else if x == y {
                0.0
            } else {
                1.0
            };
            best = best.max(d);
        }
    }
    best
}

pub fn naive_diversity(sets: &[SampleSet], s: &FeatureSchema, train: &Dataset) -> Option<f64> {
    let eligible = naive_eligibility(train);
    let mut total = 0.0;
    let mut rows = 0;
    for set in sets {
        let mut acc = 0.0;
        let mut m = 0;
        for &j in &set.missing {
            if eligible[j] {
                acc += gap(s.feature(j), set, j);
                m += 1;
            }
        }
        if m > 0 {
            total += acc / m as f64;
            rows += 1;
        }
    }
    (rows > 0).then(|| total / rows as f64)
}

fn naive_bin(f: &FeatureSpec, v: &Value, bins: usize) -> usize {
    match f.categories() {
        Some(_) => cat_code(f, v) as usize,
        None => {
            let u = unit(f, v);
            let mut b = 0;
            // largest b with b/bins <= u, capped to the last bin
            while b + 1 < bins && (b + 1) as f64 <= u * bins as f64 {
                b += 1;
            }
            b
        }
    }
}

pub fn naive_kl(generated: &[Value], dataset: &[Value], f: &FeatureSpec, bins: usize) -> f64 {
    let nb = f.categories().map_or(bins, |c| c.len());
    let mut g = vec![1.0; nb];
    let mut r = vec![1.0; nb];
    for v in generated {
        g[naive_bin(f, v, bins)] += 1.0;
    }
    for v in dataset {
        r[naive_bin(f, v, bins)] += 1.0;
    }
    let zg: f64 = g.iter().sum();
    let zr: f64 = r.iter().sum();
    let mut kl = 0.0;
    for b in 0..nb {
        let p = g[b] / zg;
        let q = r[b] / zr;
        kl += p * (p.ln() - q.ln());
    }
    kl
}

pub fn naive_conditional_distance(sets: &[SampleSet], truths: &[CompleteDesign], s: &FeatureSchema, j: usize) -> f64 {
    let f = s.feature(j);
    let mut total = 0.0;
    for (set, t) in sets.iter().zip(truths) {
        let mut mean = 0.0;
        for d in &set.draws {
            mean += unit(f, d.value(j));
        }
        mean /= set.draws.len() as f64;
        total += (mean - unit(f, t.value(j))).abs();
    }
    total / sets.len() as f64
}

// ---------------------------------------------------------------------------
// gradients

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between the tape gradient of the
/// scalar built by `forward` and central differences over every parameter entry.
pub fn gradient_relative_error(params: &ParamStore, forward: impl Fn(&mut Tape, &Binding) -> Var) -> f64 {
    let eval = |store: &ParamStore| -> f64 {
        let b = Binding::new(store);
        let mut tape = Tape::new();
        let loss = forward(&mut tape, &b);
        tape.value(loss)[[0, 0]]
    };
    let binding = Binding::new(params);
    let mut tape = Tape::new();
    let loss = forward(&mut tape, &binding);
    let analytic = binding.grads(&tape.backward(loss));

    let h = 1e-6;
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    let mut work = params.clone();
    for (name, value) in params.iter() {
        let zero = Array2::zeros(value.dim());
        let g = analytic.get(name).unwrap_or(&zero);
        for idx in 0..value.len() {
            let (r, c) = (idx / value.ncols(), idx % value.ncols());
            let orig = value[[r, c]];
            work.get_mut(name).unwrap()[[r, c]] = orig + h;
            let up = eval(&work);
            work.get_mut(name).unwrap()[[r, c]] = orig - h;
            let down = eval(&work);
            work.get_mut(name).unwrap()[[r, c]] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = g[[r, c]];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
    }
    diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(1e-300)
}

/// Fixed random projection `Σ out ⊙ R` turning a matrix output into a scalar.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let mut r = rng::seeded(seed);
    let dim = tape.value(out).dim();
    let weights = Array2::from_shape_fn(dim, |_| r.random_range(-1.0..1.0));
    let w = tape.leaf(weights);
    let prod = tape.mul(out, w);
    tape.sum(prod)
}
