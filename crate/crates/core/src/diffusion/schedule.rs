use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaShape {
    /// `β_t = (linspace(√β_start, √β_end, T))²`.
    Quadratic,
    Linear,
}

/// Noise variance of each ancestral sampling step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReverseVariance {
    /// `β_t`.
    Beta,
    /// `β̃_t = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`.
    Posterior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub shape: BetaShape,
    pub reverse_variance: ReverseVariance,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 50,
            beta_start: 1e-4,
            beta_end: 0.5,
            shape: BetaShape::Quadratic,
            reverse_variance: ReverseVariance::Beta,
        }
    }
}

/// Noise levels indexed by step `t ∈ 1..=T`; index 0 holds the `ᾱ_0 = 1` convention.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    reverse: ReverseVariance,
}

impl NoiseSchedule {
    pub fn new(config: &ScheduleConfig) -> Result<Self> {
        let t = config.steps;
        let (a, b) = (config.beta_start, config.beta_end);
        if t == 0 || !(a > 0.0 && a <= b && b < 1.0) {
            return Err(Error::Config(format!(
                "schedule needs steps >= 1 and 0 < beta_start <= beta_end < 1 (got {t}, {a}, {b})"
            )));
        }
        let frac = |i: usize| if t == 1 { 0.0 } else { i as f64 / (t - 1) as f64 };
        let betas = (0..t)
            .map(|i| match config.shape {
                BetaShape::Quadratic => {
                    let r = a.sqrt() + frac(i) * (b.sqrt() - a.sqrt());
                    r * r
                }
                BetaShape::Linear => a + frac(i) * (b - a),
            })
            .collect();
        Ok(Self::from_betas(betas)?.with_reverse_variance(config.reverse_variance))
    }

    /// Schedule from explicit `β_1..β_T`, each in `[0, 1)`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::Config("betas must be non-empty and inside [0, 1)".into()));
        }
        let mut alphas = vec![1.0];
        let mut alpha_bars = vec![1.0];
        let mut all = vec![0.0];
        for &b in &betas {
            all.push(b);
            alphas.push(1.0 - b);
            alpha_bars.push(alpha_bars.last().unwrap() * (1.0 - b));
        }
        Ok(NoiseSchedule {
            betas: all,
            alphas,
            alpha_bars,
            reverse: ReverseVariance::Beta,
        })
    }

    pub fn with_reverse_variance(mut self, reverse: ReverseVariance) -> Self {
        self.reverse = reverse;
        self
    }

    pub fn steps(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Posterior variance `β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        let denom = 1.0 - self.alpha_bars[t];
        if denom <= 0.0 {
            0.0
        } else {
            self.betas[t] * (1.0 - self.alpha_bars[t - 1]) / denom
        }
    }

    /// Variance of the noise added at reverse step `t`; zero at `t = 1`.
    pub fn sampling_variance(&self, t: usize) -> f64 {
        match (t, self.reverse) {
            (1, _) => 0.0,
            (_, ReverseVariance::Beta) => self.betas[t],
            (_, ReverseVariance::Posterior) => self.posterior_variance(t),
        }
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Config(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    /// `x_t = √ᾱ_t · x0 + √(1 − ᾱ_t) · noise`.
    pub fn forward_noise(&self, x0: &[f64], t: usize, noise: &[f64]) -> Result<Vec<f64>> {
        self.check_step(t)?;
        if x0.len() != noise.len() {
            return Err(Error::Shape("x0 and noise lengths differ".into()));
        }
        let (a, s) = (self.alpha_bars[t].sqrt(), (1.0 - self.alpha_bars[t]).sqrt());
        Ok(x0.iter().zip(noise).map(|(x, e)| a * x + s * e).collect())
    }

    /// Mean of `p(x_{t−1} | x_t)` under an epsilon prediction.
    pub fn reverse_mean(&self, x_t: f64, eps: f64, t: usize) -> f64 {
        let coef = self.betas[t] / (1.0 - self.alpha_bars[t]).sqrt();
        (x_t - coef * eps) / self.alphas[t].sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_endpoints_and_monotone() {
        let s = NoiseSchedule::new(&ScheduleConfig::default()).unwrap();
        assert_eq!(s.steps(), 50);
        assert!((s.beta(1) - 1e-4).abs() < 1e-15);
        assert!((s.beta(50) - 0.5).abs() < 1e-12);
        for t in 1..=50 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn forward_noise_cases() {
        let zero = NoiseSchedule::from_betas(vec![0.0; 5]).unwrap();
        for t in 1..=5 {
            assert_eq!(zero.forward_noise(&[0.3, -2.0], t, &[1.0, 1.0]).unwrap(), vec![0.3, -2.0]);
        }
        // ᾱ_2 = 0.5 · 0.5 = 0.25
        let s = NoiseSchedule::from_betas(vec![0.5, 0.5]).unwrap();
        assert_eq!(s.forward_noise(&[1.0], 2, &[0.0]).unwrap(), vec![0.5]);
        assert!(s.forward_noise(&[1.0], 3, &[0.0]).is_err());
        assert!(s.forward_noise(&[1.0], 0, &[0.0]).is_err());
    }

    #[test]
    fn posterior_variance_first_step_is_zero() {
        let s = NoiseSchedule::new(&ScheduleConfig::default()).unwrap();
        assert_eq!(s.posterior_variance(1), 0.0);
        assert!(s.posterior_variance(10) > 0.0);
    }

    /// Ancestral sampling with the exact noise predictor of `N(0, 1)` data,
    /// `ε̂ = √(1 − ᾱ_t) x_t`, tracked in closed form through the linear updates.
    fn final_variance(s: &NoiseSchedule) -> f64 {
        let mut v = 1.0;
        for t in (1..=s.steps()).rev() {
            let m = s.reverse_mean(1.0, (1.0 - s.alpha_bar(t)).sqrt(), t);
            v = m * m * v + s.sampling_variance(t);
        }
        v
    }

    #[test]
    fn beta_variance_recovers_unit_gaussian() {
        let beta = NoiseSchedule::new(&ScheduleConfig::default()).unwrap();
        assert!((final_variance(&beta) - 1.0).abs() < 1e-3);
        let posterior = NoiseSchedule::new(&ScheduleConfig {
            reverse_variance: ReverseVariance::Posterior,
            ..Default::default()
        })
        .unwrap();
        assert!(final_variance(&posterior) < 0.9);
    }
}
