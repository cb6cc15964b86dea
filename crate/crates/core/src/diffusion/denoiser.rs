use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Binding, ParamStore, SlotMap, Tape, Var};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub blocks: usize,
    pub width: usize,
    pub time_embed_dim: usize,
    pub heads: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            blocks: 4,
            width: 64,
            time_embed_dim: 64,
            heads: 4,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.width == 0 || self.time_embed_dim == 0 || self.heads == 0 {
            return Err(Error::Config("denoiser sizes must all be positive".into()));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "denoiser width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.time_embed_dim % 2 != 0 {
            return Err(Error::Config("time_embed_dim must be even".into()));
        }
        Ok(())
    }
}

/// Sinusoidal embedding of integer steps, `B×dim` (first half sines, second half cosines).
pub fn time_embedding(steps: &[usize], dim: usize) -> Array2<f64> {
    let half = dim / 2;
    Array2::from_shape_fn((steps.len(), dim), |(r, j)| {
        let k = j % half;
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        let a = steps[r] as f64 * freq;
        if j < half {
            a.sin()
        } else {
            a.cos()
        }
    })
}

/// Epsilon predictor: per-feature channels of width `W`, self-attention across
/// the `D` feature tokens, the conditioning tensor and a step embedding added
/// in every residual block.
#[derive(Debug, Clone)]
pub struct Denoiser {
    config: DenoiserConfig,
    map: Arc<SlotMap>,
    cond_dim: usize,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, map: Arc<SlotMap>, cond_dim: usize) -> Result<Self> {
        config.validate()?;
        Ok(Denoiser {
            config,
            map,
            cond_dim,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut Rng) {
        let w = self.config.width;
        let slots = self.map.slot_token.len();
        let tokens = self.map.tokens;
        store.init_weight("den.in.w", slots, w, rng);
        store.init_zeros("den.in.b", tokens, w);
        nn::init_linear(store, "den.cond", self.cond_dim, w, true, rng);
        nn::init_linear(store, "den.time1", self.config.time_embed_dim, w, true, rng);
        nn::init_linear(store, "den.time2", w, w, true, rng);
        for k in 0..self.config.blocks {
            let p = format!("den.block{k}");
            nn::init_linear(store, &format!("{p}.time"), w, w, true, rng);
            nn::init_linear(store, &format!("{p}.cond"), self.cond_dim, w, false, rng);
            for name in ["q", "k", "v", "o"] {
                nn::init_linear(store, &format!("{p}.{name}"), w, w, false, rng);
            }
            nn::init_linear(store, &format!("{p}.ff1"), w, 2 * w, true, rng);
            nn::init_linear(store, &format!("{p}.ff2"), 2 * w, w, true, rng);
        }
        store.init_zeros("den.out.w", slots, w);
        store.init_zeros("den.out.b", 1, slots);
    }

    /// Predicted noise (`B×L`) for slot values `x_t` (`B×L`, observed slots
    /// zeroed), conditioning `cond` (`(B·D)×cond_dim`) and per-row steps.
    pub fn forward(&self, tape: &mut Tape, p: &Binding, x_t: Var, cond: Var, steps: &[usize]) -> Var {
        let tokens = self.map.tokens;
        let w_in = p.var(tape, "den.in.w");
        let b_in = p.var(tape, "den.in.b");
        let mut h = tape.slot_lift(x_t, w_in, b_in, self.map.clone());
        let c = nn::linear(tape, p, "den.cond", cond);
        h = tape.add(h, c);

        let te = tape.leaf(time_embedding(steps, self.config.time_embed_dim));
        let te = nn::linear(tape, p, "den.time1", te);
        let te = tape.silu(te);
        let te = nn::linear(tape, p, "den.time2", te);

        for k in 0..self.config.blocks {
            let pre = format!("den.block{k}");
            let tk = nn::linear(tape, p, &format!("{pre}.time"), te);
            h = tape.add_group_rows(h, tk, tokens);
            let ck = nn::linear(tape, p, &format!("{pre}.cond"), cond);
            h = tape.add(h, ck);

            let n = tape.layer_norm(h);
            let q = nn::linear(tape, p, &format!("{pre}.q"), n);
            let kk = nn::linear(tape, p, &format!("{pre}.k"), n);
            let v = nn::linear(tape, p, &format!("{pre}.v"), n);
            let a = tape.attention(q, kk, v, steps.len(), self.config.heads);
            let o = nn::linear(tape, p, &format!("{pre}.o"), a);
            h = tape.add(h, o);

            let n = tape.layer_norm(h);
            let f = nn::linear(tape, p, &format!("{pre}.ff1"), n);
            let f = tape.silu(f);
            let f = nn::linear(tape, p, &format!("{pre}.ff2"), f);
            h = tape.add(h, f);
        }
        let n = tape.layer_norm(h);
        let w_out = p.var(tape, "den.out.w");
        let b_out = p.var(tape, "den.out.b");
        tape.slot_readout(n, w_out, b_out, self.map.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_embedding_shape_and_zero_step() {
        let e = time_embedding(&[0, 3], 8);
        assert_eq!(e.dim(), (2, 8));
        assert_eq!(e.row(0).to_vec(), vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_ne!(e.row(0), e.row(1));
    }

    #[test]
    fn forward_shape() {
        let map = Arc::new(SlotMap {
            slot_token: vec![0, 1, 1],
            tokens: 2,
        });
        let cfg = DenoiserConfig {
            blocks: 2,
            width: 8,
            time_embed_dim: 4,
            heads: 2,
        };
        let d = Denoiser::new(cfg, map, 6).unwrap();
        let mut store = ParamStore::new();
        d.init_params(&mut store, &mut crate::rng::seeded(0));
        let b = Binding::new(&store);
        let mut tape = Tape::new();
        let x = tape.leaf(Array2::ones((3, 3)));
        let c = tape.leaf(Array2::ones((6, 6)));
        let out = d.forward(&mut tape, &b, x, c, &[1, 2, 3]);
        assert_eq!(tape.value(out).dim(), (3, 3));
    }
}
