use std::cell::RefCell;
use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng as _;

use super::tape::{Grads, Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.params.get_mut(name)
    }

    pub fn expect(&self, name: &str) -> Result<&Mat> {
        self.get(name)
            .ok_or_else(|| Error::Shape(format!("missing parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Mat)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|m| m.len()).sum()
    }

    pub fn extend(&mut self, other: ParamStore) {
        self.params.extend(other.params);
    }

    /// Glorot-uniform `fan_in × fan_out` weight.
    pub fn init_weight(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let m = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
        self.insert(name, m);
    }

    pub fn init_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, Array2::zeros((rows, cols)));
    }

    pub fn init_normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut Rng) {
        use rand_distr::{Distribution, Normal};
        let n = Normal::new(0.0, std).expect("valid std");
        let m = Array2::from_shape_fn((rows, cols), |_| n.sample(rng));
        self.insert(name, m);
    }

    /// `self ← decay·self + (1 − decay)·current`, entry by entry.
    pub fn ema_update(&mut self, current: &ParamStore, decay: f64) {
        for (name, m) in self.params.iter_mut() {
            let c = current.get(name).expect("same parameter set");
            m.zip_mut_with(c, |a, &b| *a = decay * *a + (1.0 - decay) * b);
        }
    }

    /// Rounds every entry to the nearest `f32`, the checkpoint storage precision.
    pub fn round_to_f32(&mut self) {
        for m in self.params.values_mut() {
            m.mapv_inplace(|x| x as f32 as f64);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|m| m.iter().all(|x| x.is_finite()))
    }
}

/// Lazily places parameters on a tape as leaves and maps gradients back to names.
pub struct Binding<'s> {
    store: &'s ParamStore,
    vars: RefCell<BTreeMap<String, Var>>,
}

impl<'s> Binding<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Binding {
            store,
            vars: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    /// Tape variable for `name`; panics if the parameter does not exist, since
    /// model shapes are validated when the store is built.
    pub fn var(&self, tape: &mut Tape, name: &str) -> Var {
        if let Some(v) = self.vars.borrow().get(name) {
            return *v;
        }
        let value = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' not initialized"))
            .clone();
        let v = tape.leaf(value);
        self.vars.borrow_mut().insert(name.to_string(), v);
        v
    }

    /// Gradients for every bound parameter that received one.
    pub fn grads(&self, grads: &Grads) -> BTreeMap<String, Mat> {
        self.vars
            .borrow()
            .iter()
            .filter_map(|(n, v)| grads.get(*v).map(|g| (n.clone(), g.clone())))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
    step: u64,
    m: BTreeMap<String, Mat>,
    v: BTreeMap<String, Mat>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: Some(1.0),
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, mut grads: BTreeMap<String, Mat>) {
        if let Some(clip) = self.clip {
            let norm = grads
                .values()
                .map(|g| g.iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > clip {
                let f = clip / norm;
                for g in grads.values_mut() {
                    *g *= f;
                }
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (name, g) in grads {
            let Some(p) = store.get_mut(&name) else {
                continue;
            };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            let v = self.v.entry(name).or_insert_with(|| Array2::zeros(g.dim()));
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(&g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                });
        }
    }
}
