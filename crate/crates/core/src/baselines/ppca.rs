//! Probabilistic PCA fitted by EM on the sample covariance of the numeric columns.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::rng;
use crate::schema::{CompleteDesign, FeatureSchema, PartialDesign, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpcaConfig {
    /// Latent dimension; `None` means `min(8, p − 1)` for `p` numeric features.
    pub latent_dim: Option<usize>,
    /// Convergence threshold on the per-sample log-likelihood change.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PpcaConfig {
    fn default() -> Self {
        PpcaConfig {
            latent_dim: None,
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PpcaModel {
    numeric: Vec<usize>,
    mean: DVector<f64>,
    w: DMatrix<f64>,
    sigma2: f64,
    modes: Vec<Option<Value>>,
    /// Per-sample log-likelihood after each EM iteration (first entry: initial state).
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

/// Per-sample Gaussian log-likelihood of covariance `W Wᵀ + σ² I` given the
/// sample covariance `s`, using the determinant lemma and Woodbury identity.
fn log_likelihood(s: &DMatrix<f64>, w: &DMatrix<f64>, sigma2: f64) -> f64 {
    let p = s.nrows();
    let q = w.ncols();
    let m = w.transpose() * w + DMatrix::identity(q, q) * sigma2;
    let m_chol = m.clone().cholesky().expect("M is positive definite");
    let ln_det_m: f64 = m_chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let ln_det_c = (p - q) as f64 * sigma2.ln() + ln_det_m;
    let wsw = w.transpose() * s * w;
    let tr = (s.trace() - m_chol.solve(&wsw).trace()) / sigma2;
    -0.5 * (p as f64 * (2.0 * std::f64::consts::PI).ln() + ln_det_c + tr)
}

pub fn ppca_fit(train: &Dataset, config: &PpcaConfig) -> Result<PpcaModel> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let schema = &train.schema;
    let numeric: Vec<usize> = schema.numeric_positions().collect();
    let p = numeric.len();
    let n = train.len();
    let modes = (0..schema.len())
        .map(|j| {
            let f = schema.feature(j);
            f.categories().map(|cats| {
                let mut counts = vec![0usize; cats.len()];
                for v in train.column(j) {
                    counts[f.category_index(v.as_cat().expect("categorical")).expect("valid")] += 1;
                }
                let best = counts.iter().enumerate().fold(0, |b, (i, &c)| if c > counts[b] { i } else { b });
                Value::Cat(cats[best].clone())
            })
        })
        .collect();

    let x = DMatrix::from_fn(n, p, |r, c| {
        let j = numeric[c];
        schema.feature(j).normalize(train.rows[r].value(j).as_num().expect("numeric"))
    });
    let mean = DVector::from_fn(p, |c, _| x.column(c).mean());
    let centered = DMatrix::from_fn(n, p, |r, c| x[(r, c)] - mean[c]);
    let s = centered.transpose() * &centered / n as f64;

    let q = config.latent_dim.unwrap_or_else(|| 8.min(p.saturating_sub(1))).min(p.saturating_sub(1));
    let floor = 1e-10 * (s.trace() / p.max(1) as f64).max(1e-300);
    if p == 0 || q == 0 {
        let sigma2 = if p == 0 { 1.0 } else { (s.trace() / p as f64).max(floor) };
        return Ok(PpcaModel {
            numeric,
            mean,
            w: DMatrix::zeros(p, 0),
            sigma2,
            modes,
            log_likelihood: Vec::new(),
            converged: true,
        });
    }

    let mut r = rng::seeded(0);
    let mut w = DMatrix::from_fn(p, q, |_, _| r.random_range(-1.0..1.0));
    let mut sigma2 = (s.trace() / p as f64).max(floor);
    let mut trace = vec![log_likelihood(&s, &w, sigma2)];
    let mut converged = false;
    for _ in 0..config.max_iter {
        let m = w.transpose() * &w + DMatrix::identity(q, q) * sigma2;
        let m_inv = m.try_inverse().ok_or_else(|| Error::NonFinite("PPCA M matrix is singular".into()))?;
        let sw = &s * &w;
        let inner = DMatrix::identity(q, q) * sigma2 + &m_inv * w.transpose() * &sw;
        let inner_inv = inner
            .try_inverse()
            .ok_or_else(|| Error::NonFinite("PPCA update matrix is singular".into()))?;
        let w_new = &sw * inner_inv;
        let sigma2_new = ((s.trace() - (&sw * &m_inv * w_new.transpose()).trace()) / p as f64).max(floor);
        w = w_new;
        sigma2 = sigma2_new;
        let ll = log_likelihood(&s, &w, sigma2);
        let prev = *trace.last().expect("initial entry");
        trace.push(ll);
        if !ll.is_finite() {
            return Err(Error::NonFinite("PPCA log-likelihood is not finite".into()));
        }
        if (ll - prev).abs() < config.tol {
            converged = true;
            break;
        }
    }
    Ok(PpcaModel {
        numeric,
        mean,
        w,
        sigma2,
        modes,
        log_likelihood: trace,
        converged,
    })
}

impl PpcaModel {
    pub fn latent_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn noise_variance(&self) -> f64 {
        self.sigma2
    }

    /// Posterior-mean reconstruction of missing numerics; categoricals by training mode.
    pub fn impute(&self, schema: &FeatureSchema, partial: &PartialDesign) -> Result<CompleteDesign> {
        let obs: Vec<usize> = (0..self.numeric.len())
            .filter(|&c| partial.mask().is_observed(self.numeric[c]))
            .collect();
        let q = self.w.ncols();
        let z = if obs.is_empty() || q == 0 {
            DVector::zeros(q)
        } else {
            let w_o = DMatrix::from_fn(obs.len(), q, |r, k| self.w[(obs[r], k)]);
            let x_o = DVector::from_fn(obs.len(), |r, _| {
                let j = self.numeric[obs[r]];
                schema.feature(j).normalize(partial.value(j).as_num().expect("numeric")) - self.mean[obs[r]]
            });
            let m = w_o.transpose() * &w_o + DMatrix::identity(q, q) * self.sigma2;
            let rhs = w_o.transpose() * x_o;
            m.cholesky()
                .ok_or_else(|| Error::NonFinite("PPCA posterior matrix is not positive definite".into()))?
                .solve(&rhs)
        };
        partial.complete_with(schema, |j| match self.numeric.iter().position(|&n| n == j) {
            Some(c) => {
                let f = schema.feature(j);
                let u = self.mean[c] + (self.w.row(c) * &z)[(0, 0)];
                let (lo, hi) = f.range().expect("numeric");
                Value::Num(f.denormalize(u).clamp(lo, hi))
            }
            None => self.modes[j].clone().expect("categorical mode"),
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::ingest::Provenance;
    use crate::schema::FeatureSpec;

    #[test]
    fn nothing_missing_is_identity() {
        let s = Arc::new(
            FeatureSchema::new(
                vec!["A".into()],
                vec![
                    FeatureSpec::numeric("x", 0.0, 1.0, "A"),
                    FeatureSpec::numeric("y", 0.0, 1.0, "A"),
                    FeatureSpec::numeric("z", 0.0, 1.0, "A"),
                ],
            )
            .unwrap(),
        );
        let mut r = rng::seeded(2);
        let rows = (0..30)
            .map(|_| {
                let v = (0..3).map(|_| Value::Num(r.random_range(0.0..1.0))).collect();
                CompleteDesign::new(&s, v).unwrap()
            })
            .collect::<Vec<_>>();
        let data = Dataset::new(s.clone(), rows, Provenance::Synthetic);
        let m = ppca_fit(&data, &PpcaConfig::default()).unwrap();
        assert_eq!(m.latent_dim(), 2);
        let out = m.impute(&s, &data.rows[3].to_partial()).unwrap();
        assert!(out.bit_eq(&data.rows[3]));
        for pair in m.log_likelihood.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9 * pair[0].abs().max(1.0));
        }
    }
}
