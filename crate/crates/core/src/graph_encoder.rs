//! Message passing over the assembly graph.
//!
//! Each component node starts from the concatenation of its features
//! (normalized numerics, learned category embeddings, zeros where missing)
//! followed by one observed flag per feature. A per-component linear map
//! lifts these unequal widths to `hidden_dim`, then `layers` GCN or GATv2
//! layers mix information between physically connected components.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::encode::{CategoryTable, EncodedBatch};
use crate::error::{Error, Result};
use crate::nn::{self, Binding, Mat, ParamStore, Tape, Var};
use crate::rng::Rng;
use crate::schema::{AssemblyGraph, FeatureSchema, PartialDesign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphVariant {
    Gcn,
    Gatv2,
    None,
}

impl std::str::FromStr for GraphVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(GraphVariant::Gcn),
            "gatv2" => Ok(GraphVariant::Gatv2),
            "none" => Ok(GraphVariant::None),
            other => Err(Error::Config(format!("unknown graph variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphEncoderConfig {
    pub variant: GraphVariant,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub leaky_slope: f64,
    pub category_embed_dim: usize,
}

impl Default for GraphEncoderConfig {
    fn default() -> Self {
        GraphEncoderConfig {
            variant: GraphVariant::Gatv2,
            hidden_dim: 64,
            layers: 2,
            heads: 4,
            leaky_slope: 0.2,
            category_embed_dim: 8,
        }
    }
}

impl GraphEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(
                "graph encoder needs layers, heads and hidden_dim >= 1".into(),
            ));
        }
        if self.variant == GraphVariant::Gatv2 && self.hidden_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by {} heads",
                self.hidden_dim, self.heads
            )));
        }
        if self.category_embed_dim == 0 {
            return Err(Error::Config("category_embed_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// Graph structure replicated over a batch; node row `b·N + n`.
#[derive(Debug, Clone)]
pub struct BatchGraph {
    pub batch: usize,
    pub nodes: usize,
    /// Symmetric-normalized adjacency with self-loops, as `(row, col, weight)`.
    pub gcn: Arc<Vec<(usize, usize, f64)>>,
    /// Directed message edges `src → dst`, self-loops included, grouped by nothing in particular.
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

impl BatchGraph {
    pub fn new(graph: &AssemblyGraph, batch: usize) -> Self {
        let n = graph.node_count();
        Self::from_edges(n, graph.edges(), batch)
    }

    /// Builds from raw undirected edges over `nodes` nodes.
    pub fn from_edges(nodes: usize, edges: &[(usize, usize)], batch: usize) -> Self {
        let mut deg = vec![0usize; nodes];
        for &(a, b) in edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        let mut gcn = Vec::new();
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for b in 0..batch {
            let base = b * nodes;
            for i in 0..nodes {
                gcn.push((base + i, base + i, 1.0 / (deg[i] + 1) as f64));
                src.push(base + i);
                dst.push(base + i);
            }
            for &(i, j) in edges {
                let w = 1.0 / (((deg[i] + 1) * (deg[j] + 1)) as f64).sqrt();
                gcn.push((base + i, base + j, w));
                gcn.push((base + j, base + i, w));
                src.extend([base + j, base + i]);
                dst.extend([base + i, base + j]);
            }
        }
        BatchGraph {
            batch,
            nodes,
            gcn: Arc::new(gcn),
            src,
            dst,
        }
    }
}

/// `h'_i = Σ_{j ∈ N(i) ∪ {i}} h_j W / sqrt((deg_i + 1)(deg_j + 1))`, then SiLU unless `last`.
pub fn gcn_layer(tape: &mut Tape, h: Var, graph: &BatchGraph, w: Var, last: bool) -> Var {
    let hw = tape.matmul(h, w);
    let agg = tape.spmm(graph.gcn.clone(), graph.batch * graph.nodes, hw);
    if last {
        agg
    } else {
        tape.silu(agg)
    }
}

pub struct Gatv2Output {
    pub out: Var,
    /// `E×heads` attention coefficients aligned with `graph.src` / `graph.dst`.
    pub alpha: Var,
}

/// GATv2: `e_ij = aᵀ LeakyReLU(W_dst h_i + W_src h_j)` (the attention vector is
/// applied after the nonlinearity), `α = softmax_j(e)`, `h'_i = ‖_heads Σ_j α_ij W_src h_j`.
#[allow(clippy::too_many_arguments)]
pub fn gatv2_layer(
    tape: &mut Tape,
    h: Var,
    graph: &BatchGraph,
    w_src: Var,
    w_dst: Var,
    att: Var,
    heads: usize,
    slope: f64,
    last: bool,
) -> Gatv2Output {
    let xs = tape.matmul(h, w_src);
    let xd = tape.matmul(h, w_dst);
    let src_rows = tape.gather_rows(xs, graph.src.iter().map(|&s| Some(s)).collect());
    let dst_rows = tape.gather_rows(xd, graph.dst.iter().map(|&d| Some(d)).collect());
    let z = tape.add(src_rows, dst_rows);
    let z = tape.leaky_relu(z, slope);
    let scored = tape.mul_row(z, att);
    let scores = tape.head_sum(scored, heads);
    let alpha = tape.segment_softmax(scores, graph.dst.clone(), graph.batch * graph.nodes);
    let msg = tape.head_mul(src_rows, alpha, heads);
    let agg = tape.scatter_add_rows(msg, graph.dst.clone(), graph.batch * graph.nodes);
    let out = if last { agg } else { tape.silu(agg) };
    Gatv2Output { out, alpha }
}

/// Concrete node inputs for one design.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    /// One vector per graph node, in graph node order.
    pub vectors: Vec<Array1<f64>>,
    /// Observed flag per feature of each node's component.
    pub observed: Vec<Vec<bool>>,
}

/// Per-component context vectors, in graph node order.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEmbedding {
    pub nodes: Vec<String>,
    pub vectors: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct GraphEncoder {
    schema: Arc<FeatureSchema>,
    graph: AssemblyGraph,
    config: GraphEncoderConfig,
    categories: CategoryTable,
}

impl GraphEncoder {
    pub fn new(graph: AssemblyGraph, config: GraphEncoderConfig) -> Result<Self> {
        config.validate()?;
        let schema = graph.schema().clone();
        let categories = CategoryTable::new(&schema);
        Ok(GraphEncoder {
            schema,
            graph,
            config,
            categories,
        })
    }

    pub fn config(&self) -> &GraphEncoderConfig {
        &self.config
    }

    pub fn graph(&self) -> &AssemblyGraph {
        &self.graph
    }

    /// Input width of component `c`'s node vector.
    pub fn node_width(&self, c: usize) -> usize {
        let e = self.config.category_embed_dim;
        self.schema
            .component_features(c)
            .iter()
            .map(|&i| if self.schema.feature(i).is_numeric() { 1 } else { e })
            .sum::<usize>()
            + self.schema.component_features(c).len()
    }

    fn proj_name(&self, c: usize) -> String {
        format!("graph.proj.{}", self.schema.components()[c])
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut Rng) {
        if self.config.variant == GraphVariant::None {
            return;
        }
        let hd = self.config.hidden_dim;
        if self.categories.rows() > 0 {
            store.init_normal(
                "graph.cat_embed",
                self.categories.rows(),
                self.config.category_embed_dim,
                1.0,
                rng,
            );
        }
        for c in 0..self.schema.components().len() {
            nn::init_linear(store, &self.proj_name(c), self.node_width(c), hd, true, rng);
        }
        for l in 0..self.config.layers {
            match self.config.variant {
                GraphVariant::Gcn => store.init_weight(&format!("graph.layer{l}.w"), hd, hd, rng),
                GraphVariant::Gatv2 => {
                    store.init_weight(&format!("graph.layer{l}.w_src"), hd, hd, rng);
                    store.init_weight(&format!("graph.layer{l}.w_dst"), hd, hd, rng);
                    let dh = hd / self.config.heads;
                    store.init_normal(
                        &format!("graph.layer{l}.att"),
                        1,
                        hd,
                        (1.0 / dh as f64).sqrt(),
                        rng,
                    );
                }
                GraphVariant::None => unreachable!(),
            }
        }
    }

    /// Node input matrix (`B×width`) for component `c` on the tape.
    fn node_input(&self, tape: &mut Tape, p: &Binding, batch: &EncodedBatch, c: usize) -> Var {
        let feats = self.schema.component_features(c);
        let b = batch.batch;
        let mut parts = Vec::with_capacity(feats.len() + 1);
        for &i in feats {
            if self.schema.feature(i).is_numeric() {
                let col = Array2::from_shape_fn((b, 1), |(r, _)| {
                    if batch.is_observed(r, i) {
                        batch.numeric[[r, i]]
                    } else {
                        0.0
                    }
                });
                parts.push(tape.leaf(col));
            } else {
                let table = p.var(tape, "graph.cat_embed");
                let idx = (0..b)
                    .map(|r| {
                        batch
                            .is_observed(r, i)
                            .then(|| self.categories.row(i, batch.category(r, i)))
                    })
                    .collect();
                parts.push(tape.gather_rows(table, idx));
            }
        }
        let flags = Array2::from_shape_fn((b, feats.len()), |(r, k)| {
            f64::from(u8::from(batch.is_observed(r, feats[k])))
        });
        parts.push(tape.leaf(flags));
        tape.concat_cols(&parts)
    }

    /// `(B·N)×hidden` embeddings, node row `b·N + n` in graph node order.
    pub fn forward(&self, tape: &mut Tape, p: &Binding, batch: &EncodedBatch) -> Var {
        let n = self.graph.node_count();
        let b = batch.batch;
        let hd = self.config.hidden_dim;
        if self.config.variant == GraphVariant::None {
            return tape.leaf(Array2::zeros((b * n, hd)));
        }
        let mut blocks = Vec::with_capacity(n);
        for node in 0..n {
            let c = self.graph.node_component(node);
            let x = self.node_input(tape, p, batch, c);
            blocks.push(nn::linear(tape, p, &self.proj_name(c), x));
        }
        // node-major → sample-major
        let stacked = tape.concat_rows(&blocks);
        let order = (0..b * n).map(|r| Some((r % n) * b + r / n)).collect();
        let mut h = tape.gather_rows(stacked, order);
        let bg = BatchGraph::new(&self.graph, b);
        for l in 0..self.config.layers {
            let last = l + 1 == self.config.layers;
            h = match self.config.variant {
                GraphVariant::Gcn => {
                    let w = p.var(tape, &format!("graph.layer{l}.w"));
                    gcn_layer(tape, h, &bg, w, last)
                }
                GraphVariant::Gatv2 => {
                    let ws = p.var(tape, &format!("graph.layer{l}.w_src"));
                    let wd = p.var(tape, &format!("graph.layer{l}.w_dst"));
                    let att = p.var(tape, &format!("graph.layer{l}.att"));
                    let heads = self.config.heads;
                    gatv2_layer(tape, h, &bg, ws, wd, att, heads, self.config.leaky_slope, last)
                        .out
                }
                GraphVariant::None => unreachable!(),
            };
        }
        h
    }

    /// Node input vectors for one design under the current embedding parameters.
    pub fn build_node_features(
        &self,
        design: &PartialDesign,
        params: &ParamStore,
    ) -> Result<NodeFeatures> {
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
        let mut vectors = Vec::new();
        let mut observed = Vec::new();
        for node in 0..self.graph.node_count() {
            let c = self.graph.node_component(node);
            let v = self.node_input(&mut tape, &binding, &batch, c);
            vectors.push(tape.value(v).row(0).to_owned());
            observed.push(
                self.schema
                    .component_features(c)
                    .iter()
                    .map(|&i| batch.is_observed(0, i))
                    .collect(),
            );
        }
        Ok(NodeFeatures { vectors, observed })
    }

    pub fn encode(&self, design: &PartialDesign, params: &ParamStore) -> Result<GraphEmbedding> {
        if design.len() != self.schema.len() {
            return Err(Error::Design("design does not match the graph's schema".into()));
        }
        let batch = EncodedBatch::from_partials(&self.schema, [design]);
        Ok(self.encode_batch(&batch, params))
    }

    pub fn encode_batch(&self, batch: &EncodedBatch, params: &ParamStore) -> GraphEmbedding {
        let binding = Binding::new(params);
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &binding, batch);
        GraphEmbedding {
            nodes: self.graph.nodes().to_vec(),
            vectors: tape.value(out).clone(),
        }
    }
}

/// Checks that `params` holds every tensor the encoder needs, with matching shapes.
pub fn check_params(encoder: &GraphEncoder, params: &ParamStore) -> Result<()> {
    let mut reference = ParamStore::new();
    encoder.init_params(&mut reference, &mut crate::rng::seeded(0));
    for (name, m) in reference.iter() {
        let got: &Mat = params.expect(name)?;
        if got.dim() != m.dim() {
            return Err(Error::Shape(format!(
                "parameter '{name}' has shape {:?}, expected {:?}",
                got.dim(),
                m.dim()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{FeatureSpec, Value};

    fn line_schema() -> Arc<FeatureSchema> {
        Arc::new(
            FeatureSchema::new(
                vec!["A".into(), "B".into(), "C".into()],
                vec![
                    FeatureSpec::numeric("a", 0.0, 2.0, "A"),
                    FeatureSpec::categorical("ac", ["u", "v"], "A"),
                    FeatureSpec::numeric("b", 0.0, 1.0, "B"),
                    FeatureSpec::numeric("c", -1.0, 1.0, "C"),
                ],
            )
            .unwrap(),
        )
    }

    fn path(schema: Arc<FeatureSchema>) -> AssemblyGraph {
        AssemblyGraph::new(
            schema,
            vec!["A".into(), "B".into(), "C".into()],
            &[("A".into(), "B".into()), ("B".into(), "C".into())],
        )
        .unwrap()
    }

    fn encoder(variant: GraphVariant) -> (GraphEncoder, ParamStore) {
        let schema = line_schema();
        let cfg = GraphEncoderConfig {
            variant,
            hidden_dim: 8,
            heads: 2,
            category_embed_dim: 3,
            ..Default::default()
        };
        let enc = GraphEncoder::new(path(schema), cfg).unwrap();
        let mut store = ParamStore::new();
        enc.init_params(&mut store, &mut crate::rng::seeded(1));
        (enc, store)
    }

    #[test]
    fn node_features_layout() {
        let (enc, store) = encoder(GraphVariant::Gcn);
        let schema = line_schema();
        // A: numeric(1) + categorical(3) + 2 flags
        assert_eq!(enc.node_width(0), 6);
        let missing = PartialDesign::new(&schema, vec![Value::Missing; 4]).unwrap();
        let nf = enc.build_node_features(&missing, &store).unwrap();
        assert!(nf.vectors.iter().all(|v| v.iter().all(|&x| x == 0.0)));

        let full = PartialDesign::new(
            &schema,
            vec![Value::Num(1.0), Value::Cat("v".into()), Value::Num(0.25), Value::Num(0.0)],
        )
        .unwrap();
        let nf = enc.build_node_features(&full, &store).unwrap();
        assert_eq!(nf.vectors[0][0], 0.5);
        assert_eq!(nf.vectors[0].slice(ndarray::s![4..]).to_vec(), vec![1.0, 1.0]);
        let emb = store.get("graph.cat_embed").unwrap().row(1).to_vec();
        assert_eq!(nf.vectors[0].slice(ndarray::s![1..4]).to_vec(), emb);
        assert!(nf.observed.iter().flatten().all(|&o| o));
        assert_eq!(nf.vectors[2][0], 0.5);
    }

    #[test]
    fn none_variant_is_zero() {
        let (enc, store) = encoder(GraphVariant::None);
        let schema = line_schema();
        let d = PartialDesign::new(&schema, vec![Value::Num(1.0), Value::Missing, Value::Missing, Value::Missing])
            .unwrap();
        let e = enc.encode(&d, &store).unwrap();
        assert_eq!(e.vectors.dim(), (3, 8));
        assert!(e.vectors.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn missing_payload_is_ignored() {
        for variant in [GraphVariant::Gcn, GraphVariant::Gatv2] {
            let (enc, store) = encoder(variant);
            let schema = line_schema();
            let d = PartialDesign::new(
                &schema,
                vec![Value::Missing, Value::Missing, Value::Num(0.3), Value::Num(0.1)],
            )
            .unwrap();
            let mut batch = EncodedBatch::from_partials(&schema, [&d]);
            let a = enc.encode_batch(&batch, &store);
            batch.numeric[[0, 0]] = 123.0;
            batch.category[1] = 1;
            let b = enc.encode_batch(&batch, &store);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn gcn_single_isolated_node_identity() {
        let bg = BatchGraph::from_edges(1, &[], 1);
        let mut tape = Tape::new();
        let h = tape.leaf(Array2::from_shape_vec((1, 3), vec![1.0, -2.0, 0.5]).unwrap());
        let w = tape.leaf(Array2::eye(3));
        let out = gcn_layer(&mut tape, h, &bg, w, true);
        assert_eq!(tape.value(out), tape.value(h));
    }

    #[test]
    fn gcn_path_matches_hand_aggregation() {
        // path 0-1-2, degrees 1,2,1; h scalar per node, W = [2]
        let bg = BatchGraph::from_edges(3, &[(0, 1), (1, 2)], 1);
        let mut tape = Tape::new();
        let h = tape.leaf(Array2::from_shape_vec((3, 1), vec![1.0, 2.0, 3.0]).unwrap());
        let w = tape.leaf(Array2::from_elem((1, 1), 2.0));
        let out = gcn_layer(&mut tape, h, &bg, w, true);
        let s6 = 6f64.sqrt();
        // node0: h0·2/2 + h1·2/√6 ; node1: h0·2/√6 + h1·2/3 + h2·2/√6 ; node2: h1·2/√6 + h2·2/2
        let expected = [1.0 + 4.0 / s6, 2.0 / s6 + 4.0 / 3.0 + 6.0 / s6, 4.0 / s6 + 3.0];
        for (got, want) in tape.value(out).iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        // equal inputs on a two-node graph give equal outputs
        let bg2 = BatchGraph::from_edges(2, &[(0, 1)], 1);
        let h2 = tape.leaf(Array2::from_elem((2, 2), 0.7));
        let w2 = tape.leaf(Array2::from_shape_vec((2, 2), vec![0.3, -1.0, 2.0, 0.1]).unwrap());
        let o2 = gcn_layer(&mut tape, h2, &bg2, w2, false);
        let v = tape.value(o2);
        assert_eq!(v.row(0), v.row(1));
    }

    #[test]
    fn gatv2_isolated_node_attends_to_itself() {
        let bg = BatchGraph::from_edges(1, &[], 1);
        let mut tape = Tape::new();
        let h = tape.leaf(Array2::from_elem((1, 2), 0.4));
        let w = tape.leaf(Array2::eye(2));
        let a = tape.leaf(Array2::from_elem((1, 2), 1.0));
        let o = gatv2_layer(&mut tape, h, &bg, w, w, a, 1, 0.2, true);
        assert_eq!(tape.value(o.alpha)[[0, 0]], 1.0);
    }

    #[test]
    fn gatv2_star_matches_hand_softmax() {
        // star: centre 0 connected to 1 and 2; scalar features, one head.
        let bg = BatchGraph::from_edges(3, &[(0, 1), (0, 2)], 1);
        let mut tape = Tape::new();
        let hv = [1.0, -2.0, 0.5];
        let h = tape.leaf(Array2::from_shape_vec((3, 1), hv.to_vec()).unwrap());
        let (ws, wd, a, slope) = (1.5, -0.5, 2.0, 0.2);
        let w_src = tape.leaf(Array2::from_elem((1, 1), ws));
        let w_dst = tape.leaf(Array2::from_elem((1, 1), wd));
        let att = tape.leaf(Array2::from_elem((1, 1), a));
        let o = gatv2_layer(&mut tape, h, &bg, w_src, w_dst, att, 1, slope, true);
        let leaky = |x: f64| if x > 0.0 { x } else { slope * x };
        let score = |i: usize, j: usize| a * leaky(wd * hv[i] + ws * hv[j]);
        // neighbourhood of node 0 is {0, 1, 2}
        let e: Vec<f64> = [0, 1, 2].iter().map(|&j| score(0, j)).collect();
        let z: f64 = e.iter().map(|x| x.exp()).sum();
        let expect: Vec<f64> = e.iter().map(|x| x.exp() / z).collect();
        let alpha = tape.value(o.alpha);
        for (k, (&s, &d)) in bg.src.iter().zip(&bg.dst).enumerate() {
            if d == 0 {
                assert!((alpha[[k, 0]] - expect[s]).abs() < 1e-12);
            }
        }
        let out0: f64 = (0..3).map(|j| expect[j] * ws * hv[j]).sum();
        assert!((tape.value(o.out)[[0, 0]] - out0).abs() < 1e-12);
    }

    #[test]
    fn locality_on_path_graph() {
        // one layer: node C only sees B and itself, so changing A leaves C unchanged
        let schema = line_schema();
        let cfg = GraphEncoderConfig {
            variant: GraphVariant::Gatv2,
            hidden_dim: 4,
            layers: 1,
            heads: 2,
            category_embed_dim: 2,
            ..Default::default()
        };
        let enc = GraphEncoder::new(path(schema.clone()), cfg).unwrap();
        let mut store = ParamStore::new();
        enc.init_params(&mut store, &mut crate::rng::seeded(4));
        let base = vec![Value::Num(0.5), Value::Cat("u".into()), Value::Num(0.2), Value::Num(0.9)];
        let mut changed = base.clone();
        changed[0] = Value::Num(1.9);
        changed[1] = Value::Cat("v".into());
        let a = enc.encode(&PartialDesign::new(&schema, base).unwrap(), &store).unwrap();
        let b = enc.encode(&PartialDesign::new(&schema, changed).unwrap(), &store).unwrap();
        assert_eq!(a.vectors.row(2), b.vectors.row(2));
        assert_ne!(a.vectors.row(1), b.vectors.row(1));
    }

    #[test]
    fn config_validation() {
        let cfg = GraphEncoderConfig {
            hidden_dim: 10,
            heads: 4,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = GraphEncoderConfig {
            layers: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert_eq!("GATv2".parse::<GraphVariant>().unwrap(), GraphVariant::Gatv2);
    }
}
