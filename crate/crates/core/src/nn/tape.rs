//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! replays it in reverse. Operations are deliberately coarse (fused
//! multi-head attention, layer norm, per-feature slot maps) so a forward
//! pass over a whole batch stays at a few dozen nodes per layer.

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-output-slot feature ownership used by [`Tape::slot_lift`] and [`Tape::slot_readout`].
#[derive(Debug, Clone)]
pub struct SlotMap {
    /// Owning token (feature) of each slot.
    pub slot_token: Vec<usize>,
    pub tokens: usize,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Arc<Vec<f64>>),
    MulConst(Var, Arc<Mat>),
    LeakyRelu(Var, f64),
    Silu(Var),
    Sum(Var),
    GatherRows(Var, Arc<Vec<Option<usize>>>),
    ScatterAddRows(Var, Arc<Vec<usize>>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SpMM(Arc<Vec<(usize, usize, f64)>>, Var),
    HeadSum(Var, usize),
    HeadMul(Var, Var, usize),
    SegmentSoftmax(Var, Arc<Vec<usize>>, usize),
    AddGroupRows(Var, Var, usize),
    SlotLift(Var, Var, Var, Arc<SlotMap>),
    SlotReadout(Var, Var, Var, Arc<SlotMap>),
    Attention(Box<AttentionSaved>),
    LayerNorm(Var, Arc<Vec<f64>>),
}

struct AttentionSaved {
    q: Var,
    k: Var,
    v: Var,
    batch: usize,
    heads: usize,
    /// Row-stochastic attention per `(batch, head)`, index `b * heads + h`.
    probs: Vec<Mat>,
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every tape node.
pub struct Grads(Vec<Option<Mat>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.0.get(v.0).and_then(Option::as_ref)
    }
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Attention probabilities recorded by an [`Tape::attention`] node, index `b * heads + h`.
    pub fn attention_probs(&self, v: Var) -> Option<&[Mat]> {
        match &self.nodes[v.0].op {
            Op::Attention(saved) => Some(&saved.probs),
            _ => None,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    /// `a + row`, broadcasting a `1×m` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    /// `a ⊙ row`, broadcasting a `1×m` row over every row of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) * self.value(row);
        self.push(value, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: Vec<f64>) -> Var {
        let mut value = self.value(a).clone();
        assert_eq!(value.nrows(), factors.len(), "scale_rows length");
        for (mut row, f) in value.rows_mut().into_iter().zip(&factors) {
            row *= *f;
        }
        self.push(value, Op::ScaleRows(a, Arc::new(factors)))
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        let value = self.value(a) * &c;
        self.push(value, Op::MulConst(a, Arc::new(c)))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self
            .value(a)
            .mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(silu);
        self.push(value, Op::Silu(a))
    }

    /// Sum of all entries as a `1×1` matrix.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Output row `r` is input row `idx[r]`, or zeros when `None`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<Option<usize>>) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros((idx.len(), src.ncols()));
        for (r, i) in idx.iter().enumerate() {
            if let Some(i) = i {
                value.row_mut(r).assign(&src.row(*i));
            }
        }
        self.push(value, Op::GatherRows(a, Arc::new(idx)))
    }

    /// Output row `dst[r]` accumulates input row `r`; `n_out` rows total.
    pub fn scatter_add_rows(&mut self, a: Var, dst: Vec<usize>, n_out: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.nrows(), dst.len(), "scatter_add_rows length");
        let mut value = Array2::zeros((n_out, src.ncols()));
        for (r, &d) in dst.iter().enumerate() {
            let mut out = value.row_mut(d);
            out += &src.row(r);
        }
        self.push(value, Op::ScatterAddRows(a, Arc::new(dst)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols row counts");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows col counts");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    /// Sparse constant matrix times `x`: `out[r] += w · x[c]` for each `(r, c, w)`.
    pub fn spmm(&mut self, entries: Arc<Vec<(usize, usize, f64)>>, n_out: usize, x: Var) -> Var {
        let src = self.value(x);
        let mut value = Array2::zeros((n_out, src.ncols()));
        for &(r, c, w) in entries.iter() {
            let mut out = value.row_mut(r);
            out.scaled_add(w, &src.row(c));
        }
        self.push(value, Op::SpMM(entries, x))
    }

    /// Sums each of `heads` contiguous column blocks: `E×(H·d) → E×H`.
    pub fn head_sum(&mut self, a: Var, heads: usize) -> Var {
        let src = self.value(a);
        let dh = src.ncols() / heads;
        let mut value = Array2::zeros((src.nrows(), heads));
        for h in 0..heads {
            let block = src.slice(s![.., h * dh..(h + 1) * dh]).sum_axis(Axis(1));
            value.column_mut(h).assign(&block);
        }
        self.push(value, Op::HeadSum(a, heads))
    }

    /// Scales head block `h` of row `e` by `w[e, h]`: `E×(H·d) ⊙ E×H`.
    pub fn head_mul(&mut self, a: Var, w: Var, heads: usize) -> Var {
        let src = self.value(a);
        let wv = self.value(w);
        let dh = src.ncols() / heads;
        let mut value = src.clone();
        for h in 0..heads {
            let mut block = value.slice_mut(s![.., h * dh..(h + 1) * dh]);
            for (mut row, f) in block.rows_mut().into_iter().zip(wv.column(h)) {
                row *= *f;
            }
        }
        self.push(value, Op::HeadMul(a, w, heads))
    }

    /// Softmax over rows sharing a segment id, independently per column.
    pub fn segment_softmax(&mut self, a: Var, segments: Vec<usize>, n_seg: usize) -> Var {
        let src = self.value(a);
        let cols = src.ncols();
        let mut max = Array2::from_elem((n_seg, cols), f64::NEG_INFINITY);
        for (r, &sg) in segments.iter().enumerate() {
            for c in 0..cols {
                max[[sg, c]] = max[[sg, c]].max(src[[r, c]]);
            }
        }
        let mut value = Array2::zeros(src.dim());
        let mut denom = Array2::<f64>::zeros((n_seg, cols));
        for (r, &sg) in segments.iter().enumerate() {
            for c in 0..cols {
                let e = (src[[r, c]] - max[[sg, c]]).exp();
                value[[r, c]] = e;
                denom[[sg, c]] += e;
            }
        }
        for (r, &sg) in segments.iter().enumerate() {
            for c in 0..cols {
                value[[r, c]] /= denom[[sg, c]];
            }
        }
        self.push(value, Op::SegmentSoftmax(a, Arc::new(segments), n_seg))
    }

    /// Adds row `b` of `t` (`B×m`) to every row of group `b` in `a` (`(B·group)×m`).
    pub fn add_group_rows(&mut self, a: Var, t: Var, group: usize) -> Var {
        let mut value = self.value(a).clone();
        let tv = self.value(t);
        for (r, mut row) in value.rows_mut().into_iter().enumerate() {
            row += &tv.row(r / group);
        }
        self.push(value, Op::AddGroupRows(a, t, group))
    }

    /// Per-token lift of slot values: `x` is `B×L`, `w` is `L×m`, `bias` is `T×m`;
    /// output row `b·T + i` is `bias[i] + Σ_{s owned by i} x[b, s]·w[s]`.
    pub fn slot_lift(&mut self, x: Var, w: Var, bias: Var, map: Arc<SlotMap>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(bias);
        let t = map.tokens;
        let batch = xv.nrows();
        let mut value = Array2::zeros((batch * t, wv.ncols()));
        for b in 0..batch {
            for i in 0..t {
                value.row_mut(b * t + i).assign(&bv.row(i));
            }
            for (s, &i) in map.slot_token.iter().enumerate() {
                let mut out = value.row_mut(b * t + i);
                out.scaled_add(xv[[b, s]], &wv.row(s));
            }
        }
        self.push(value, Op::SlotLift(x, w, bias, map))
    }

    /// Inverse-shaped map of [`Tape::slot_lift`]: `h` is `(B·T)×m`, `w` is `L×m`,
    /// `bias` is `1×L`; output `B×L` with `out[b, s] = h[b·T + token(s)]·w[s] + bias[s]`.
    pub fn slot_readout(&mut self, h: Var, w: Var, bias: Var, map: Arc<SlotMap>) -> Var {
        let hv = self.value(h);
        let wv = self.value(w);
        let bv = self.value(bias);
        let t = map.tokens;
        let batch = hv.nrows() / t;
        let slots = map.slot_token.len();
        let mut value = Array2::zeros((batch, slots));
        for b in 0..batch {
            for (s, &i) in map.slot_token.iter().enumerate() {
                value[[b, s]] = hv.row(b * t + i).dot(&wv.row(s)) + bv[[0, s]];
            }
        }
        self.push(value, Op::SlotReadout(h, w, bias, map))
    }

    /// Multi-head scaled dot-product attention, batched over `batch` groups.
    /// `q` is `(B·Lq)×m`, `k` and `v` are `(B·Lk)×m`; `m` must divide by `heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, batch: usize, heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let m = qv.ncols();
        assert_eq!(m % heads, 0, "width must divide by heads");
        assert_eq!(kv.ncols(), m);
        assert_eq!(vv.ncols(), m);
        let dh = m / heads;
        let lq = qv.nrows() / batch;
        let lk = kv.nrows() / batch;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut value = Array2::zeros((qv.nrows(), m));
        let mut probs = Vec::with_capacity(batch * heads);
        for b in 0..batch {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qb = qv.slice(s![b * lq..(b + 1) * lq, cols.clone()]);
                let kb = kv.slice(s![b * lk..(b + 1) * lk, cols.clone()]);
                let vb = vv.slice(s![b * lk..(b + 1) * lk, cols.clone()]);
                let mut p = qb.dot(&kb.t()) * scale;
                for mut row in p.rows_mut() {
                    let mx = row.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
                    row.mapv_inplace(|x| (x - mx).exp());
                    let z = row.sum();
                    row /= z;
                }
                value
                    .slice_mut(s![b * lq..(b + 1) * lq, cols])
                    .assign(&p.dot(&vb));
                probs.push(p);
            }
        }
        self.push(
            value,
            Op::Attention(Box::new(AttentionSaved {
                q,
                k,
                v,
                batch,
                heads,
                probs,
            })),
        )
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        const EPS: f64 = 1e-5;
        let src = self.value(a);
        let n = src.ncols() as f64;
        let mut value = src.clone();
        let mut inv_std = Vec::with_capacity(src.nrows());
        for mut row in value.rows_mut() {
            let mean = row.sum() / n;
            row -= mean;
            let var = row.dot(&row) / n;
            let inv = 1.0 / (var + EPS).sqrt();
            row *= inv;
            inv_std.push(inv);
        }
        self.push(value, Op::LayerNorm(a, Arc::new(inv_std)))
    }

    /// Gradients of the `1×1` node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[b.0], -&g);
                    accumulate(&mut grads[a.0], g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[row.0], gr);
                    accumulate(&mut grads[a.0], g.clone());
                }
                Op::MulRow(a, row) => {
                    let ga = &g * self.value(*row);
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[row.0], gr);
                }
                Op::Scale(a, c) => accumulate(&mut grads[a.0], &g * *c),
                Op::ScaleRows(a, f) => {
                    let mut ga = g.clone();
                    for (mut row, x) in ga.rows_mut().into_iter().zip(f.iter()) {
                        row *= *x;
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::MulConst(a, c) => accumulate(&mut grads[a.0], &g * c.as_ref()),
                Op::LeakyRelu(a, slope) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|d, &x| {
                            if x <= 0.0 {
                                *d *= *slope
                            }
                        });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Silu(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| {
                        let sg = 1.0 / (1.0 + (-x).exp());
                        *d *= sg * (1.0 + x * (1.0 - sg));
                    });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for (r, i) in idx.iter().enumerate() {
                        if let Some(i) = i {
                            let mut row = ga.row_mut(*i);
                            row += &g.row(r);
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::ScatterAddRows(a, dst) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for (r, &d) in dst.iter().enumerate() {
                        ga.row_mut(r).assign(&g.row(d));
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        let gp = g.slice(s![.., off..off + w]).to_owned();
                        accumulate(&mut grads[p.0], gp);
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        let gp = g.slice(s![off..off + h, ..]).to_owned();
                        accumulate(&mut grads[p.0], gp);
                        off += h;
                    }
                }
                Op::SpMM(entries, x) => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for &(r, c, w) in entries.iter() {
                        let mut row = gx.row_mut(c);
                        row.scaled_add(w, &g.row(r));
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::HeadSum(a, heads) => {
                    let src = self.value(*a);
                    let dh = src.ncols() / heads;
                    let mut ga = Array2::zeros(src.dim());
                    for h in 0..*heads {
                        for c in h * dh..(h + 1) * dh {
                            ga.column_mut(c).assign(&g.column(h));
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::HeadMul(a, w, heads) => {
                    let src = self.value(*a);
                    let wv = self.value(*w);
                    let dh = src.ncols() / heads;
                    let mut ga = g.clone();
                    let mut gw = Array2::zeros(wv.dim());
                    for h in 0..*heads {
                        let cols = s![.., h * dh..(h + 1) * dh];
                        let prod = (&g.slice(cols) * &src.slice(cols)).sum_axis(Axis(1));
                        gw.column_mut(h).assign(&prod);
                        let mut block = ga.slice_mut(cols);
                        for (mut row, f) in block.rows_mut().into_iter().zip(wv.column(h)) {
                            row *= *f;
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[w.0], gw);
                }
                Op::SegmentSoftmax(a, segments, n_seg) => {
                    let y = &node.value;
                    let cols = y.ncols();
                    let mut dot = Array2::<f64>::zeros((*n_seg, cols));
                    for (r, &sg) in segments.iter().enumerate() {
                        for c in 0..cols {
                            dot[[sg, c]] += y[[r, c]] * g[[r, c]];
                        }
                    }
                    let mut ga = Array2::zeros(y.dim());
                    for (r, &sg) in segments.iter().enumerate() {
                        for c in 0..cols {
                            ga[[r, c]] = y[[r, c]] * (g[[r, c]] - dot[[sg, c]]);
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::AddGroupRows(a, t, group) => {
                    let tv = self.value(*t);
                    let mut gt = Array2::zeros(tv.dim());
                    for (r, row) in g.rows().into_iter().enumerate() {
                        let mut out = gt.row_mut(r / group);
                        out += &row;
                    }
                    accumulate(&mut grads[t.0], gt);
                    accumulate(&mut grads[a.0], g.clone());
                }
                Op::SlotLift(x, w, bias, map) => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let t = map.tokens;
                    let batch = xv.nrows();
                    let mut gx = Array2::zeros(xv.dim());
                    let mut gw = Array2::zeros(wv.dim());
                    let mut gb = Array2::zeros(self.value(*bias).dim());
                    for b in 0..batch {
                        for i in 0..t {
                            let mut row = gb.row_mut(i);
                            row += &g.row(b * t + i);
                        }
                        for (s, &i) in map.slot_token.iter().enumerate() {
                            let gr = g.row(b * t + i);
                            gx[[b, s]] = gr.dot(&wv.row(s));
                            let mut wrow = gw.row_mut(s);
                            wrow.scaled_add(xv[[b, s]], &gr);
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                    accumulate(&mut grads[w.0], gw);
                    accumulate(&mut grads[bias.0], gb);
                }
                Op::SlotReadout(h, w, bias, map) => {
                    let hv = self.value(*h);
                    let wv = self.value(*w);
                    let t = map.tokens;
                    let batch = hv.nrows() / t;
                    let mut gh = Array2::zeros(hv.dim());
                    let mut gw = Array2::zeros(wv.dim());
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    for b in 0..batch {
                        for (s, &i) in map.slot_token.iter().enumerate() {
                            let gs = g[[b, s]];
                            let mut hrow = gh.row_mut(b * t + i);
                            hrow.scaled_add(gs, &wv.row(s));
                            let mut wrow = gw.row_mut(s);
                            wrow.scaled_add(gs, &hv.row(b * t + i));
                        }
                    }
                    accumulate(&mut grads[h.0], gh);
                    accumulate(&mut grads[w.0], gw);
                    accumulate(&mut grads[bias.0], gb);
                }
                Op::Attention(saved) => {
                    let (qv, kv, vv) = (
                        self.value(saved.q),
                        self.value(saved.k),
                        self.value(saved.v),
                    );
                    let m = qv.ncols();
                    let heads = saved.heads;
                    let dh = m / heads;
                    let lq = qv.nrows() / saved.batch;
                    let lk = kv.nrows() / saved.batch;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut gq = Array2::zeros(qv.dim());
                    let mut gk = Array2::zeros(kv.dim());
                    let mut gv = Array2::zeros(vv.dim());
                    for b in 0..saved.batch {
                        for h in 0..heads {
                            let cols = h * dh..(h + 1) * dh;
                            let qrows = b * lq..(b + 1) * lq;
                            let krows = b * lk..(b + 1) * lk;
                            let p = &saved.probs[b * heads + h];
                            let go = g.slice(s![qrows.clone(), cols.clone()]);
                            let qb = qv.slice(s![qrows.clone(), cols.clone()]);
                            let kb = kv.slice(s![krows.clone(), cols.clone()]);
                            let vb = vv.slice(s![krows.clone(), cols.clone()]);
                            gv.slice_mut(s![krows.clone(), cols.clone()])
                                .assign(&p.t().dot(&go));
                            let dp = go.dot(&vb.t());
                            let mut ds = &dp * p;
                            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                                let inner = row.sum();
                                row.scaled_add(-inner, &prow);
                            }
                            ds *= scale;
                            gq.slice_mut(s![qrows, cols.clone()]).assign(&ds.dot(&kb));
                            gk.slice_mut(s![krows, cols]).assign(&ds.t().dot(&qb));
                        }
                    }
                    accumulate(&mut grads[saved.q.0], gq);
                    accumulate(&mut grads[saved.k.0], gk);
                    accumulate(&mut grads[saved.v.0], gv);
                }
                Op::LayerNorm(a, inv_std) => {
                    let y = &node.value;
                    let n = y.ncols() as f64;
                    let mut ga = g.clone();
                    for ((mut row, yrow), inv) in
                        ga.rows_mut().into_iter().zip(y.rows()).zip(inv_std.iter())
                    {
                        let mean_g = row.sum() / n;
                        let mean_gy = row.dot(&yrow) / n;
                        row -= mean_g;
                        row.scaled_add(-mean_gy, &yrow);
                        row *= *inv;
                    }
                    accumulate(&mut grads[a.0], ga);
                }
            }
            grads[idx] = Some(g);
        }
        Grads(grads)
    }
}
