//! Minimal neural-network toolkit: an autodiff tape, parameter storage and Adam.

mod params;
mod tape;

pub use params::{Adam, Binding, ParamStore};
pub use tape::{Grads, Mat, SlotMap, Tape, Var};

/// `x·W + b` with parameters `{prefix}.w` and (when present) `{prefix}.b`.
pub fn linear(tape: &mut Tape, p: &Binding, prefix: &str, x: Var) -> Var {
    let w = p.var(tape, &format!("{prefix}.w"));
    let y = tape.matmul(x, w);
    let bias = format!("{prefix}.b");
    if p.store().get(&bias).is_some() {
        let b = p.var(tape, &bias);
        tape.add_row(y, b)
    } else {
        y
    }
}

/// Registers a linear layer's parameters; `bias` controls whether `{prefix}.b` exists.
pub fn init_linear(
    store: &mut ParamStore,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    bias: bool,
    rng: &mut crate::rng::Rng,
) {
    store.init_weight(&format!("{prefix}.w"), fan_in, fan_out, rng);
    if bias {
        store.init_zeros(&format!("{prefix}.b"), 1, fan_out);
    }
}
