//! Conditional denoising diffusion over the missing part of a design.

mod denoiser;
mod schedule;

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use denoiser::{time_embedding, Denoiser, DenoiserConfig};
pub use schedule::{BetaShape, NoiseSchedule, ReverseVariance, ScheduleConfig};

use crate::encode::{ContinuousLayout, EncodedBatch};
use crate::error::{Error, Result};
use crate::fusion::{Fusion, FusionConfig};
use crate::graph_encoder::{GraphEncoder, GraphEncoderConfig, GraphVariant};
use crate::ingest::{random_mask, Dataset};
use crate::nn::{Adam, Binding, ParamStore, Tape, Var};
use crate::rng::{self, derive_seed, Rng};
use crate::schema::{apply_mask, AssemblyGraph, CompleteDesign, FeatureSchema, PartialDesign, Value};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub graph: GraphEncoderConfig,
    pub fusion: FusionConfig,
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of features hidden in each training row's conditioning mask.
    pub missing_fraction: f64,
    pub grad_clip: Option<f64>,
    /// Decay of the weight average kept for sampling; `None` keeps the last iterate.
    pub ema_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            missing_fraction: 0.10,
            grad_clip: Some(1.0),
            ema_decay: Some(0.999),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.missing_fraction > 0.0 && self.missing_fraction < 1.0) {
            return Err(Error::Config("missing_fraction must lie in (0, 1)".into()));
        }
        if self.ema_decay.is_some_and(|d| !(0.0..1.0).contains(&d)) {
            return Err(Error::Config("ema_decay must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        self.fusion.validate()?;
        self.denoiser.validate()?;
        NoiseSchedule::new(&self.schedule).map(|_| ())
    }
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epoch_losses: Vec<f64>,
}

/// `K` completions of one partial design.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub draws: Vec<CompleteDesign>,
    /// Positions that were missing in the input.
    pub missing: Vec<usize>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// `S_{k,j}` over draws `k` for feature `j`.
    pub fn values(&self, j: usize) -> impl Iterator<Item = &Value> + '_ {
        self.draws.iter().map(move |d| d.value(j))
    }
}

/// Trained (or freshly initialized) imputation model.
#[derive(Debug, Clone)]
pub struct ImputerModel {
    schema: Arc<FeatureSchema>,
    graph: AssemblyGraph,
    config: ModelConfig,
    params: ParamStore,
    encoder: GraphEncoder,
    fusion: Fusion,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    layout: ContinuousLayout,
    trained: bool,
}

impl ImputerModel {
    /// Builds the network and draws initial parameters from `seed`.
    pub fn new(graph: AssemblyGraph, config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::skeleton(graph, config)?;
        let mut r = rng::stream(seed, 0);
        model.encoder.init_params(&mut model.params, &mut r);
        model.fusion.init_params(&mut model.params, &mut r);
        model.denoiser.init_params(&mut model.params, &mut r);
        Ok(model)
    }

    fn skeleton(graph: AssemblyGraph, config: ModelConfig) -> Result<Self> {
        let schema = graph.schema().clone();
        let encoder = GraphEncoder::new(graph.clone(), config.graph.clone())?;
        let fusion = Fusion::new(schema.clone(), config.fusion.clone(), config.graph.hidden_dim)?;
        let layout = ContinuousLayout::new(schema.clone());
        let denoiser = Denoiser::new(
            config.denoiser.clone(),
            layout.slot_map().clone(),
            config.fusion.d_token,
        )?;
        let schedule = NoiseSchedule::new(&config.schedule)?;
        Ok(ImputerModel {
            schema,
            graph,
            config,
            params: ParamStore::new(),
            encoder,
            fusion,
            denoiser,
            schedule,
            layout,
            trained: false,
        })
    }

    /// Reassembles a model from stored parts, checking every parameter shape.
    pub fn from_parts(
        graph: AssemblyGraph,
        config: ModelConfig,
        params: ParamStore,
        layout_stats: Vec<(f64, f64)>,
        trained: bool,
    ) -> Result<Self> {
        let reference = Self::new(graph.clone(), config.clone(), 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (name, m) in reference.params.iter() {
            let got = params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?;
            if got.dim() != m.dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    got.dim(),
                    m.dim()
                )));
            }
        }
        if layout_stats.len() != reference.schema.len() {
            return Err(Error::Checkpoint("layout statistics do not match the schema".into()));
        }
        let mut model = Self::skeleton(graph, config)?;
        model.params = params;
        model.layout.set_stats(layout_stats);
        model.trained = trained;
        Ok(model)
    }

    pub fn schema(&self) -> &Arc<FeatureSchema> {
        &self.schema
    }

    pub fn graph(&self) -> &AssemblyGraph {
        &self.graph
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn layout(&self) -> &ContinuousLayout {
        &self.layout
    }

    pub fn encoder(&self) -> &GraphEncoder {
        &self.encoder
    }

    pub fn fusion(&self) -> &Fusion {
        &self.fusion
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Conditioning tensor `(B·D)×d_token` for a batch of partial designs.
    pub fn condition(
        &self,
        tape: &mut Tape,
        p: &Binding,
        batch: &EncodedBatch,
        dropout_rng: Option<&mut Rng>,
    ) -> Var {
        let graph = match self.config.graph.variant {
            GraphVariant::None => None,
            _ => Some(self.encoder.forward(tape, p, batch)),
        };
        let tokens = self.fusion.tokenize(tape, p, batch);
        self.fusion.fuse(tape, p, tokens, graph, batch.batch, dropout_rng)
    }

    /// Epsilon-prediction training with a fresh random conditioning mask per row.
    pub fn train(&mut self, data: &Dataset, config: &TrainConfig, seed: u64) -> Result<LossTrace> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if data.schema.as_ref() != self.schema.as_ref() {
            return Err(Error::Schema("training data schema differs from the model's".into()));
        }
        self.layout.fit_stats(data.rows.iter().map(|r| r.values()));
        let d = self.schema.len();
        let width = self.layout.width();
        let encoded: Vec<Vec<f64>> = data.rows.iter().map(|r| self.layout.encode_row(r.values())).collect();

        let mut order_rng = rng::stream(seed, 1);
        let mut noise_rng = rng::stream(seed, 2);
        let mut dropout_rng = rng::stream(seed, 3);
        let mut opt = Adam::new(config.learning_rate);
        opt.clip = config.grad_clip;
        let steps = self.schedule.steps();
        let mut trace = Vec::with_capacity(config.epochs);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut ema = config.ema_decay.map(|_| self.params.clone());
        let mut updates = 0usize;

        for epoch in 0..config.epochs {
            order.shuffle(&mut order_rng);
            let mut total = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(config.batch_size) {
                let b = chunk.len();
                let mut partials = Vec::with_capacity(b);
                let mut t_steps = Vec::with_capacity(b);
                let mut x_t = Array2::zeros((b, width));
                let mut eps = Array2::zeros((b, width));
                let mut hidden = Array2::zeros((b, width));
                for (r, &row) in chunk.iter().enumerate() {
                    let mask = random_mask(d, config.missing_fraction, &mut noise_rng);
                    let t = noise_rng.random_range(1..=steps);
                    let ab = self.schedule.alpha_bar(t);
                    let hs = self.layout.hidden_slots(mask.as_slice());
                    for s in 0..width {
                        let e: f64 = noise_rng.sample(StandardNormal);
                        if hs[s] > 0.0 {
                            x_t[[r, s]] = ab.sqrt() * encoded[row][s] + (1.0 - ab).sqrt() * e;
                            eps[[r, s]] = e;
                            hidden[[r, s]] = 1.0;
                        }
                    }
                    partials.push(apply_mask(&data.rows[row], &mask)?);
                    t_steps.push(t);
                }
                let count = hidden.sum();
                let batch = self.layout.encode_batch(&partials);

                let binding = Binding::new(&self.params);
                let mut tape = Tape::new();
                let cond = self.condition(&mut tape, &binding, &batch, Some(&mut dropout_rng));
                let xv = tape.leaf(x_t);
                let pred = self.denoiser.forward(&mut tape, &binding, xv, cond, &t_steps);
                let target = tape.leaf(eps);
                let diff = tape.sub(pred, target);
                let diff = tape.mul_const(diff, hidden);
                let sq = tape.mul(diff, diff);
                let sum = tape.sum(sq);
                let loss = tape.scale(sum, 1.0 / count);
                let value = tape.value(loss)[[0, 0]];
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss is {value} at epoch {epoch}, batch {batches}"
                    )));
                }
                let grads = tape.backward(loss);
                let named = binding.grads(&grads);
                drop(binding);
                opt.step(&mut self.params, named);
                updates += 1;
                if let (Some(avg), Some(decay)) = (ema.as_mut(), config.ema_decay) {
                    // short warm-up so early iterates do not dominate brief runs
                    let warm = (1.0 + updates as f64) / (10.0 + updates as f64);
                    avg.ema_update(&self.params, decay.min(warm));
                }
                total += value;
                batches += 1;
            }
            trace.push(total / batches as f64);
        }
        if let Some(avg) = ema {
            self.params = avg;
        }
        self.params.round_to_f32();
        if !self.params.all_finite() {
            return Err(Error::NonFinite("parameters became non-finite during training".into()));
        }
        self.trained = true;
        Ok(LossTrace { epoch_losses: trace })
    }

    fn check_ready(&self, partial: &PartialDesign) -> Result<()> {
        if !self.trained {
            return Err(Error::Config("model is untrained".into()));
        }
        if partial.len() != self.schema.len() {
            return Err(Error::Design(format!(
                "design has {} values, model schema declares {}",
                partial.len(),
                self.schema.len()
            )));
        }
        Ok(())
    }

    /// `K` independent reverse-diffusion draws; trajectory `k` uses the RNG stream `(seed, k)`.
    pub fn sample(&self, partial: &PartialDesign, k: usize, seed: u64) -> Result<SampleSet> {
        self.check_ready(partial)?;
        Ok(self.sample_group(&[partial], k, &[seed]).remove(0))
    }

    /// Samples every design; design `i` uses seed `derive_seed(seed, i)`, so the
    /// result equals calling [`ImputerModel::sample`] with that seed.
    pub fn sample_many(&self, partials: &[PartialDesign], k: usize, seed: u64) -> Result<Vec<SampleSet>> {
        for p in partials {
            self.check_ready(p)?;
        }
        const MAX_TRAJECTORIES: usize = 512;
        let per_chunk = (MAX_TRAJECTORIES / k.max(1)).max(1);
        let indexed: Vec<(usize, &PartialDesign)> = partials.iter().enumerate().collect();
        let out: Vec<Vec<SampleSet>> = indexed
            .par_chunks(per_chunk)
            .map(|chunk| {
                let rows: Vec<&PartialDesign> = chunk.iter().map(|(_, p)| *p).collect();
                let seeds: Vec<u64> = chunk.iter().map(|(i, _)| derive_seed(seed, *i as u64)).collect();
                self.sample_group(&rows, k, &seeds)
            })
            .collect();
        Ok(out.into_iter().flatten().collect())
    }

    fn sample_group(&self, partials: &[&PartialDesign], k: usize, seeds: &[u64]) -> Vec<SampleSet> {
        let d = self.schema.len();
        let width = self.layout.width();
        let mut results: Vec<Option<SampleSet>> = vec![None; partials.len()];
        let active: Vec<usize> = (0..partials.len())
            .filter(|&i| {
                if partials[i].mask().missing_count() == 0 || k == 0 {
                    let full = partials[i]
                        .complete_with(&self.schema, |_| unreachable!())
                        .expect("validated partial");
                    results[i] = Some(SampleSet {
                        draws: vec![full; k],
                        missing: Vec::new(),
                    });
                    false
                } else {
                    true
                }
            })
            .collect();
        if active.is_empty() {
            return results.into_iter().map(Option::unwrap).collect();
        }

        // conditioning once per design, replicated over its K trajectories
        let batch = self.layout.encode_batch(active.iter().map(|&i| partials[i]));
        let cond = {
            let binding = Binding::new(&self.params);
            let mut tape = Tape::new();
            let c = self.condition(&mut tape, &binding, &batch, None);
            tape.value(c).clone()
        };
        let n = active.len() * k;
        let cond_rep = Array2::from_shape_fn((n * d, cond.ncols()), |(r, c)| {
            let traj = r / d;
            cond[[(traj / k) * d + r % d, c]]
        });
        let hidden: Vec<Vec<f64>> = active
            .iter()
            .map(|&i| self.layout.hidden_slots(partials[i].mask().as_slice()))
            .collect();
        let mut rngs: Vec<Rng> = active
            .iter()
            .flat_map(|&i| (0..k).map(move |j| rng::stream(seeds[i], j as u64)))
            .collect();
        let mut x = Array2::zeros((n, width));
        for (r, rg) in rngs.iter_mut().enumerate() {
            let hs = &hidden[r / k];
            for s in 0..width {
                if hs[s] > 0.0 {
                    x[[r, s]] = rg.sample::<f64, _>(StandardNormal);
                }
            }
        }
        for t in (1..=self.schedule.steps()).rev() {
            let eps = {
                let binding = Binding::new(&self.params);
                let mut tape = Tape::new();
                let c = tape.leaf(cond_rep.clone());
                let xv = tape.leaf(x.clone());
                let out = self.denoiser.forward(&mut tape, &binding, xv, c, &vec![t; n]);
                tape.value(out).clone()
            };
            let sigma = self.schedule.sampling_variance(t).sqrt();
            for (r, rg) in rngs.iter_mut().enumerate() {
                let hs = &hidden[r / k];
                for s in 0..width {
                    if hs[s] > 0.0 {
                        let mean = self.schedule.reverse_mean(x[[r, s]], eps[[r, s]], t);
                        let z: f64 = if sigma > 0.0 { rg.sample(StandardNormal) } else { 0.0 };
                        x[[r, s]] = mean + sigma * z;
                    }
                }
            }
        }

        for (a, &i) in active.iter().enumerate() {
            let partial = partials[i];
            let missing: Vec<usize> = partial.mask().missing().collect();
            let draws = (0..k)
                .map(|j| {
                    let row = x.row(a * k + j);
                    partial
                        .complete_with(&self.schema, |f| {
                            let slots = self.layout.slots(f);
                            self.layout
                                .decode_value(f, &row.as_slice().expect("contiguous")[slots])
                        })
                        .expect("decoded values are valid")
                })
                .collect();
            results[i] = Some(SampleSet { draws, missing });
        }
        results.into_iter().map(Option::unwrap).collect()
    }

    /// Mean (numeric) / mode (categorical) of `K` draws.
    pub fn impute_point(&self, partial: &PartialDesign, k: usize, seed: u64) -> Result<CompleteDesign> {
        let set = self.sample(partial, k, seed)?;
        point_estimate(&self.schema, partial, &set)
    }
}

/// Aggregates a sample set into one design: per missing feature, the mean of
/// numeric draws or the most frequent category (lowest index on ties).
pub fn point_estimate(schema: &FeatureSchema, partial: &PartialDesign, set: &SampleSet) -> Result<CompleteDesign> {
    if set.is_empty() {
        return Err(Error::Config("cannot aggregate an empty sample set".into()));
    }
    partial.complete_with(schema, |j| {
        let f = schema.feature(j);
        match f.categories() {
            None => {
                let sum: f64 = set.values(j).map(|v| v.as_num().expect("numeric draw")).sum();
                let (lo, hi) = f.range().expect("numeric");
                Value::Num((sum / set.len() as f64).clamp(lo, hi))
            }
            Some(cats) => {
                let mut counts = vec![0usize; cats.len()];
                for v in set.values(j) {
                    let label = v.as_cat().expect("categorical draw");
                    counts[f.category_index(label).expect("valid label")] += 1;
                }
                let best = counts
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, &c)| if c > counts[b] { i } else { b });
                Value::Cat(cats[best].clone())
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::FeatureSpec;

    fn tiny() -> (Arc<FeatureSchema>, AssemblyGraph) {
        let schema = Arc::new(
            FeatureSchema::new(
                vec!["A".into(), "B".into()],
                vec![
                    FeatureSpec::numeric("x", 0.0, 4.0, "A"),
                    FeatureSpec::categorical("c", ["a", "b", "c"], "A"),
                    FeatureSpec::numeric("y", 0.0, 1.0, "B"),
                ],
            )
            .unwrap(),
        );
        let graph = AssemblyGraph::new(schema.clone(), vec!["A".into(), "B".into()], &[("A".into(), "B".into())])
            .unwrap();
        (schema, graph)
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            graph: GraphEncoderConfig {
                hidden_dim: 8,
                heads: 2,
                ..Default::default()
            },
            fusion: FusionConfig {
                d_token: 8,
                fusion_heads: 2,
                dropout: 0.0,
            },
            denoiser: DenoiserConfig {
                blocks: 1,
                width: 8,
                time_embed_dim: 8,
                heads: 2,
            },
            schedule: ScheduleConfig {
                steps: 5,
                ..Default::default()
            },
        }
    }

    #[test]
    fn point_estimate_mean_and_mode() {
        let (schema, _) = tiny();
        let partial = PartialDesign::new(&schema, vec![Value::Missing, Value::Missing, Value::Num(0.5)]).unwrap();
        let draw = |x: f64, c: &str| {
            CompleteDesign::new(&schema, vec![Value::Num(x), Value::Cat(c.into()), Value::Num(0.5)]).unwrap()
        };
        let set = SampleSet {
            draws: vec![draw(1.0, "a"), draw(3.0, "a"), draw(2.0, "b")],
            missing: vec![0, 1],
        };
        let p = point_estimate(&schema, &partial, &set).unwrap();
        assert_eq!(p.values(), &[Value::Num(2.0), Value::Cat("a".into()), Value::Num(0.5)]);
        let tie = SampleSet {
            draws: vec![draw(1.0, "c"), draw(3.0, "b")],
            missing: vec![0, 1],
        };
        let p = point_estimate(&schema, &partial, &tie).unwrap();
        assert_eq!(p.value(1), &Value::Cat("b".into()));
        let single = SampleSet {
            draws: vec![draw(1.25, "c")],
            missing: vec![0, 1],
        };
        assert!(point_estimate(&schema, &partial, &single).unwrap().bit_eq(&single.draws[0]));
    }

    #[test]
    fn untrained_model_refuses_to_sample() {
        let (schema, graph) = tiny();
        let m = ImputerModel::new(graph, small_config(), 1).unwrap();
        let p = PartialDesign::new(&schema, vec![Value::Missing; 3]).unwrap();
        assert!(m.sample(&p, 2, 0).is_err());
    }

    #[test]
    fn training_is_deterministic_and_sampling_conserves() {
        let (schema, graph) = tiny();
        let rows = (0..40)
            .map(|i| {
                let x = (i % 8) as f64 * 0.5;
                CompleteDesign::new(
                    &schema,
                    vec![
                        Value::Num(x),
                        Value::Cat(["a", "b", "c"][i % 3].into()),
                        Value::Num(x / 4.0),
                    ],
                )
                .unwrap()
            })
            .collect();
        let data = Dataset::new(schema.clone(), rows, crate::ingest::Provenance::Synthetic);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            ..Default::default()
        };
        let mut a = ImputerModel::new(graph.clone(), small_config(), 5).unwrap();
        let ta = a.train(&data, &cfg, 9).unwrap();
        let mut b = ImputerModel::new(graph, small_config(), 5).unwrap();
        let tb = b.train(&data, &cfg, 9).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.params(), b.params());

        let p = PartialDesign::new(&schema, vec![Value::Num(1.0), Value::Missing, Value::Missing]).unwrap();
        let s1 = a.sample(&p, 4, 77).unwrap();
        let s2 = a.sample(&p, 4, 77).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.missing, vec![1, 2]);
        for d in &s1.draws {
            assert!(d.value(0).bit_eq(&Value::Num(1.0)));
        }
        let many = a.sample_many(&[p.clone(), p.clone()], 4, 3).unwrap();
        assert_eq!(many[1], a.sample(&p, 4, derive_seed(3, 1)).unwrap());

        let full = data.rows[0].to_partial();
        let echo = a.sample(&full, 3, 0).unwrap();
        assert!(echo.draws.iter().all(|d| d.bit_eq(&data.rows[0])));
    }
}
