//! Iterative random-forest imputation in the style of MissForest.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::rng::{self, derive_seed, Rng};
use crate::schema::{CompleteDesign, PartialDesign, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub rounds: usize,
    pub trees: usize,
    pub max_depth: usize,
    /// Features tried per split; `None` means `⌈√(D − 1)⌉`.
    pub max_features: Option<usize>,
    pub min_leaf: usize,
    /// Early stop once the mean change of the imputed cells falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            rounds: 10,
            trees: 25,
            max_depth: 8,
            max_features: None,
            min_leaf: 1,
            tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Regression,
    Classification { classes: usize },
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(Vec<f64>),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// CART tree over dense columns; classes are encoded as `0..C` in `y`.
#[derive(Debug, Clone)]
pub struct Tree {
    root: Node,
    target: Target,
}

struct Grower<'a> {
    cols: &'a [Vec<f64>],
    predictors: &'a [usize],
    y: &'a [f64],
    target: Target,
    max_depth: usize,
    max_features: usize,
    min_leaf: usize,
}

impl Grower<'_> {
    fn leaf(&self, rows: &[usize]) -> Node {
        match self.target {
            Target::Regression => {
                Node::Leaf(vec![rows.iter().map(|&r| self.y[r]).sum::<f64>() / rows.len() as f64])
            }
            Target::Classification { classes } => {
                let mut p = vec![0.0; classes];
                for &r in rows {
                    p[self.y[r] as usize] += 1.0;
                }
                let n = rows.len() as f64;
                p.iter_mut().for_each(|x| *x /= n);
                Node::Leaf(p)
            }
        }
    }

    /// Impurity times count: SSE for regression, `n·Gini` for classification.
    fn impurity(&self, sum: f64, sq: f64, counts: &[f64], n: f64) -> f64 {
        match self.target {
            Target::Regression => sq - sum * sum / n,
            Target::Classification { .. } => n - counts.iter().map(|c| c * c).sum::<f64>() / n,
        }
    }

    fn grow(&self, rows: &mut [usize], depth: usize, rng: &mut Rng) -> Node {
        if depth >= self.max_depth || rows.len() < 2 * self.min_leaf.max(1) {
            return self.leaf(rows);
        }
        let classes = match self.target {
            Target::Classification { classes } => classes,
            Target::Regression => 0,
        };
        let n = rows.len() as f64;
        let (mut tot_sum, mut tot_sq) = (0.0, 0.0);
        let mut tot_counts = vec![0.0; classes];
        for &r in rows.iter() {
            let y = self.y[r];
            tot_sum += y;
            tot_sq += y * y;
            if classes > 0 {
                tot_counts[y as usize] += 1.0;
            }
        }
        let parent = self.impurity(tot_sum, tot_sq, &tot_counts, n);
        if parent <= 1e-12 {
            return self.leaf(rows);
        }

        let k = self.max_features.min(self.predictors.len());
        let tried = sample(rng, self.predictors.len(), k).into_vec();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
        for t in tried {
            let f = self.predictors[t];
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.cols[f][r], self.y[r])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut ls, mut lsq) = (0.0, 0.0);
            let mut lc = vec![0.0; classes];
            for i in 0..pairs.len() - 1 {
                let y = pairs[i].1;
                ls += y;
                lsq += y * y;
                if classes > 0 {
                    lc[y as usize] += 1.0;
                }
                let nl = (i + 1) as f64;
                if i + 1 < self.min_leaf || pairs.len() - i - 1 < self.min_leaf || pairs[i].0 == pairs[i + 1].0 {
                    continue;
                }
                let rc: Vec<f64> = tot_counts.iter().zip(&lc).map(|(t, l)| t - l).collect();
                let score = self.impurity(ls, lsq, &lc, nl)
                    + self.impurity(tot_sum - ls, tot_sq - lsq, &rc, n - nl);
                if best.is_none_or(|(b, _, _)| score < b - 1e-12) {
                    best = Some((score, f, 0.5 * (pairs[i].0 + pairs[i + 1].0)));
                }
            }
        }
        match best {
            Some((score, feature, threshold)) if score < parent - 1e-12 => {
                let mut split = 0;
                for i in 0..rows.len() {
                    if self.cols[feature][rows[i]] <= threshold {
                        rows.swap(i, split);
                        split += 1;
                    }
                }
                let (l, r) = rows.split_at_mut(split);
                Node::Split {
                    feature,
                    threshold,
                    left: Box::new(self.grow(l, depth + 1, rng)),
                    right: Box::new(self.grow(r, depth + 1, rng)),
                }
            }
            _ => self.leaf(rows),
        }
    }
}

impl Tree {
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        cols: &[Vec<f64>],
        predictors: &[usize],
        y: &[f64],
        rows: &mut [usize],
        target: Target,
        max_depth: usize,
        max_features: usize,
        min_leaf: usize,
        rng: &mut Rng,
    ) -> Tree {
        let g = Grower {
            cols,
            predictors,
            y,
            target,
            max_depth,
            max_features,
            min_leaf,
        };
        Tree {
            root: g.grow(rows, 0, rng),
            target,
        }
    }

    /// Leaf output: `[mean]` for regression, class proportions for classification.
    pub fn predict(&self, cols: &[Vec<f64>], row: usize) -> &[f64] {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if cols[*feature][row] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn target(&self) -> Target {
        self.target
    }
}

/// Bootstrap ensemble of trees.
pub struct Forest {
    trees: Vec<Tree>,
}

impl Forest {
    /// Fits `config.trees` trees on `rows`; tree `i` draws from RNG stream `(seed, i)`.
    pub fn fit(
        cols: &[Vec<f64>],
        predictors: &[usize],
        y: &[f64],
        rows: &[usize],
        target: Target,
        config: &ForestConfig,
        seed: u64,
    ) -> Forest {
        let mtry = config
            .max_features
            .unwrap_or_else(|| (predictors.len() as f64).sqrt().ceil() as usize)
            .max(1);
        let trees = (0..config.trees)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng::stream(seed, i as u64);
                let mut boot: Vec<usize> = (0..rows.len()).map(|_| rows[rng.random_range(0..rows.len())]).collect();
                Tree::fit(cols, predictors, y, &mut boot, target, config.max_depth, mtry, config.min_leaf, &mut rng)
            })
            .collect();
        Forest { trees }
    }

    /// Mean prediction (regression) or argmax of mean class proportions, lowest class on ties.
    pub fn predict(&self, cols: &[Vec<f64>], row: usize) -> f64 {
        let first = self.trees[0].predict(cols, row);
        let mut acc = vec![0.0; first.len()];
        for t in &self.trees {
            for (a, v) in acc.iter_mut().zip(t.predict(cols, row)) {
                *a += v;
            }
        }
        match self.trees[0].target() {
            Target::Regression => acc[0] / self.trees.len() as f64,
            Target::Classification { .. } => {
                acc.iter().enumerate().fold(0, |b, (i, &c)| if c > acc[b] { i } else { b }) as f64
            }
        }
    }
}

/// Imputes every partial row, using the complete training rows as extra evidence.
pub fn forest_impute(train: &Dataset, partials: &[PartialDesign], config: &ForestConfig) -> Result<Vec<CompleteDesign>> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let schema = &train.schema;
    let d = schema.len();
    for p in partials {
        if p.len() != d {
            return Err(Error::Design("partial design does not match the training schema".into()));
        }
    }
    let n_train = train.len();
    let n = n_train + partials.len();
    let encode = |j: usize, v: &Value| -> f64 {
        let f = schema.feature(j);
        match v {
            Value::Num(x) => f.normalize(*x),
            Value::Cat(c) => f.category_index(c).expect("valid label") as f64,
            Value::Missing => f64::NAN,
        }
    };
    let mut cols: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            train
                .column(j)
                .chain(partials.iter().map(|p| p.value(j)))
                .map(|v| encode(j, v))
                .collect()
        })
        .collect();
    let missing: Vec<Vec<usize>> = (0..d)
        .map(|j| (n_train..n).filter(|&r| cols[j][r].is_nan()).collect())
        .collect();

    // initial fill: mean for numerics, mode for categoricals
    for j in 0..d {
        if missing[j].is_empty() {
            continue;
        }
        let known: Vec<f64> = cols[j].iter().copied().filter(|x| !x.is_nan()).collect();
        let fill = match schema.feature(j).categories() {
            None => known.iter().sum::<f64>() / known.len() as f64,
            Some(cats) => {
                let mut counts = vec![0usize; cats.len()];
                for &x in &known {
                    counts[x as usize] += 1;
                }
                counts.iter().enumerate().fold(0, |b, (i, &c)| if c > counts[b] { i } else { b }) as f64
            }
        };
        for &r in &missing[j] {
            cols[j][r] = fill;
        }
    }

    let mut order: Vec<usize> = (0..d).filter(|&j| !missing[j].is_empty()).collect();
    order.sort_by_key(|&j| (missing[j].len(), j));
    for round in 0..config.rounds {
        let mut change = 0.0;
        let mut cells = 0usize;
        for &j in &order {
            let predictors: Vec<usize> = (0..d).filter(|&k| k != j).collect();
            let mut hidden = vec![false; n];
            missing[j].iter().for_each(|&r| hidden[r] = true);
            let observed: Vec<usize> = (0..n).filter(|&r| !hidden[r]).collect();
            let target = match schema.feature(j).categories() {
                None => Target::Regression,
                Some(c) => Target::Classification { classes: c.len() },
            };
            let y = cols[j].clone();
            let seed = derive_seed(config.seed, (round * d + j) as u64);
            let forest = Forest::fit(&cols, &predictors, &y, &observed, target, config, seed);
            let preds: Vec<f64> = missing[j].iter().map(|&r| forest.predict(&cols, r)).collect();
            for (&r, p) in missing[j].iter().zip(preds) {
                change += match target {
                    Target::Regression => (p - cols[j][r]).abs(),
                    Target::Classification { .. } => f64::from(u8::from(p != cols[j][r])),
                };
                cols[j][r] = p;
                cells += 1;
            }
        }
        if cells == 0 || change / (cells as f64) < config.tol {
            break;
        }
    }

    partials
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let r = n_train + i;
            p.complete_with(schema, |j| {
                let f = schema.feature(j);
                match f.categories() {
                    None => {
                        let (lo, hi) = f.range().expect("numeric");
                        Value::Num(f.denormalize(cols[j][r]).clamp(lo, hi))
                    }
                    Some(cats) => Value::Cat(cats[cols[j][r] as usize].clone()),
                }
            })
        })
        .collect()
}
