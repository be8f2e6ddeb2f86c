//! Small building blocks shared by the model components.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamGroup, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        inp: usize,
        out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            w: store.add_glorot(format!("{name}.w"), group, (inp, out), rng),
            b: store.add_zeros(format!("{name}.b"), group, (1, out)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.affine(x, w, b)
    }

    pub fn out_dim(&self, store: &ParamStore) -> usize {
        store.value(self.w).ncols()
    }
}

/// Two-layer feed-forward network with a GELU hidden layer.
#[derive(Clone, Copy, Debug)]
pub struct Mlp2 {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp2 {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        dims: (usize, usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let (inp, hid, out) = dims;
        Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), group, inp, hid, rng),
            output: Linear::new(store, &format!("{name}.output"), group, hid, out, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, drop: &mut Dropout) -> Var {
        let h = self.hidden.forward(tape, store, x);
        let h = tape.gelu(h);
        let h = drop.apply(tape, h);
        self.output.forward(tape, store, h)
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.hidden.w, self.hidden.b, self.output.w, self.output.b]
    }
}

/// Inverted dropout; a no-op without a generator (evaluation mode).
pub struct Dropout<'a> {
    rate: f64,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Dropout<'a> {
    pub fn train(rate: f64, rng: &'a mut ChaCha8Rng) -> Self {
        Self { rate, rng: Some(rng) }
    }

    pub fn eval() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some() && self.rate > 0.0
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        let rate = self.rate;
        let Some(rng) = self.rng.as_deref_mut() else {
            return x;
        };
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let mask = Array2::from_shape_simple_fn(tape.shape(x), || {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let m = tape.leaf(mask);
        tape.mul(x, m)
    }

    pub fn rng(&mut self) -> Option<&mut ChaCha8Rng> {
        self.rng.as_deref_mut()
    }
}
