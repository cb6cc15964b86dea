//! Feature tokens and their cross-attention fusion with the graph embedding.

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::encode::{CategoryTable, EncodedBatch};
use crate::error::{Error, Result};
use crate::nn::{self, Binding, ParamStore, Tape, Var};
use crate::rng::Rng;
use crate::schema::{FeatureSchema, PartialDesign};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub d_token: usize,
    pub fusion_heads: usize,
    pub dropout: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            d_token: 64,
            fusion_heads: 4,
            dropout: 0.1,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_token == 0 || self.fusion_heads == 0 || self.d_token % self.fusion_heads != 0 {
            return Err(Error::Config(format!(
                "d_token {} must be a positive multiple of fusion_heads {}",
                self.d_token, self.fusion_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// `D×d_token` tokens of one design plus per-token observed flags.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Array2<f64>,
    pub observed: Vec<bool>,
}

/// Fixed sinusoidal encoding: `pe[p, 2k] = sin(p / 10000^(2k/d))`, `pe[p, 2k+1] = cos(..)`.
pub fn positional_encoding(positions: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((positions, d), |(p, j)| {
        let k = j / 2;
        let angle = p as f64 / 10000f64.powf(2.0 * k as f64 / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Debug, Clone)]
pub struct Fusion {
    schema: std::sync::Arc<FeatureSchema>,
    config: FusionConfig,
    categories: CategoryTable,
    pe: Array2<f64>,
    graph_dim: usize,
}

impl Fusion {
    /// `graph_dim` is the width of the graph embedding used as keys and values.
    pub fn new(
        schema: std::sync::Arc<FeatureSchema>,
        config: FusionConfig,
        graph_dim: usize,
    ) -> Result<Self> {
        config.validate()?;
        let categories = CategoryTable::new(&schema);
        let pe = positional_encoding(schema.len(), config.d_token);
        Ok(Fusion {
            schema,
            config,
            categories,
            pe,
            graph_dim,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut Rng) {
        let d = self.config.d_token;
        let n = self.schema.len();
        store.init_normal("tok.num_w", n, d, 1.0, rng);
        store.init_zeros("tok.num_b", n, d);
        if self.categories.rows() > 0 {
            store.init_normal("tok.cat_embed", self.categories.rows(), d, 1.0, rng);
        }
        store.init_normal("tok.mask", 1, d, 1.0, rng);
        nn::init_linear(store, "fuse.q", d, d, false, rng);
        nn::init_linear(store, "fuse.k", self.graph_dim, d, false, rng);
        nn::init_linear(store, "fuse.v", self.graph_dim, d, false, rng);
        nn::init_linear(store, "fuse.o", d, d, false, rng);
        nn::init_linear(store, "fuse.ff1", d, 2 * d, true, rng);
        nn::init_linear(store, "fuse.ff2", 2 * d, d, true, rng);
    }

    /// `(B·D)×d_token` tokens: numeric `w_i·v + b_i`, categorical embedding rows,
    /// a shared mask token wherever the feature is missing.
    pub fn tokenize(&self, tape: &mut Tape, p: &Binding, batch: &EncodedBatch) -> Var {
        let (b, d) = (batch.batch, batch.features);
        let numeric_on: Vec<bool> = (0..b * d)
            .map(|r| batch.observed[r] && self.schema.feature(r % d).is_numeric())
            .collect();
        let x = Array2::from_shape_fn((b, d), |(r, i)| {
            if numeric_on[r * d + i] {
                batch.numeric[[r, i]]
            } else {
                0.0
            }
        });
        let x = tape.leaf(x);
        let w = p.var(tape, "tok.num_w");
        let bias = p.var(tape, "tok.num_b");
        let identity = std::sync::Arc::new(nn::SlotMap {
            slot_token: (0..d).collect(),
            tokens: d,
        });
        let lifted = tape.slot_lift(x, w, bias, identity);
        let mut out = tape.scale_rows(lifted, numeric_on.iter().map(|&on| f64::from(u8::from(on))).collect());

        if self.categories.rows() > 0 {
            let table = p.var(tape, "tok.cat_embed");
            let idx = (0..b * d)
                .map(|r| {
                    let i = r % d;
                    (batch.observed[r] && !self.schema.feature(i).is_numeric())
                        .then(|| self.categories.row(i, batch.category[r]))
                })
                .collect();
            let cat = tape.gather_rows(table, idx);
            out = tape.add(out, cat);
        }
        let mask = p.var(tape, "tok.mask");
        let idx = batch.observed.iter().map(|&o| (!o).then_some(0)).collect();
        let masked = tape.gather_rows(mask, idx);
        tape.add(out, masked)
    }

    /// Cross-attention from position-encoded tokens (queries) to graph nodes
    /// (keys/values), residual, then a pre-norm feed-forward with residual.
    /// `graph` is `(B·N)×graph_dim`, or `None` when there is no graph signal.
    /// Dropout is applied only when `dropout_rng` is given.
    pub fn fuse(
        &self,
        tape: &mut Tape,
        p: &Binding,
        tokens: Var,
        graph: Option<Var>,
        batch: usize,
        mut dropout_rng: Option<&mut Rng>,
    ) -> Var {
        let rows = tape.value(tokens).nrows();
        let d = self.config.d_token;
        let pe = Array2::from_shape_fn((rows, d), |(r, j)| self.pe[[r % self.schema.len(), j]]);
        let pe = tape.leaf(pe);
        let x = tape.add(tokens, pe);
        let h = match graph {
            Some(g) => {
                let q = nn::linear(tape, p, "fuse.q", x);
                let k = nn::linear(tape, p, "fuse.k", g);
                let v = nn::linear(tape, p, "fuse.v", g);
                let a = tape.attention(q, k, v, batch, self.config.fusion_heads);
                let o = nn::linear(tape, p, "fuse.o", a);
                let o = self.dropout(tape, o, dropout_rng.as_deref_mut());
                tape.add(x, o)
            }
            None => x,
        };
        let n = tape.layer_norm(h);
        let f = nn::linear(tape, p, "fuse.ff1", n);
        let f = tape.silu(f);
        let f = nn::linear(tape, p, "fuse.ff2", f);
        let f = self.dropout(tape, f, dropout_rng);
        tape.add(h, f)
    }

    fn dropout(&self, tape: &mut Tape, x: Var, rng: Option<&mut Rng>) -> Var {
        let rate = self.config.dropout;
        match rng {
            Some(rng) if rate > 0.0 => {
                let keep = 1.0 / (1.0 - rate);
                let dim = tape.value(x).dim();
                let m = Array2::from_shape_fn(dim, |_| {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    }
                });
                tape.mul_const(x, m)
            }
            _ => x,
        }
    }

    /// Token sequence of one design under `params`.
    pub fn tokenize_features(&self, design: &PartialDesign, params: &ParamStore) -> Result<TokenSequence> {
        if design.len() != self.schema.len() {
            return Err(Error::Design(format!(
                "design has {} values, schema declares {}",
                design.len(),
                self.schema.len()
            )));
        }
        let batch = EncodedBatch::from_partials(&self.schema, [design]);
        let binding = Binding::new(params);
        let mut tape = Tape::new();
        let t = self.tokenize(&mut tape, &binding, &batch);
        Ok(TokenSequence {
            tokens: tape.value(t).clone(),
            observed: batch.observed,
        })
    }

    /// Conditioning tensor (`D×d_token`) of one token sequence and graph embedding.
    pub fn fuse_tokens(
        &self,
        tokens: &TokenSequence,
        graph: Option<&Array2<f64>>,
        params: &ParamStore,
    ) -> Array2<f64> {
        let binding = Binding::new(params);
        let mut tape = Tape::new();
        let t = tape.leaf(tokens.tokens.clone());
        let g = graph.map(|g| tape.leaf(g.clone()));
        let out = self.fuse(&mut tape, &binding, t, g, 1, None);
        tape.value(out).clone()
    }
}
