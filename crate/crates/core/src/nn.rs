//! Recurrent cells, initialisation and the optimiser.

use ndarray::Array2;
use rand::Rng;

use crate::autograd::{Grads, Mat, ParamId, ParamStore, Tape, Var};

/// Matrix with entries drawn uniformly from `[-range, range]`.
pub fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, range: f64) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| {
        if range == 0.0 {
            0.0
        } else {
            rng.random_range(-range..=range)
        }
    })
}

/// A single LSTM cell with gate order input, forget, candidate, output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
        range: f64,
    ) -> Self {
        let w_x = store.add(format!("{name}.w_x"), uniform(rng, input, 4 * hidden, range));
        let w_h = store.add(format!("{name}.w_h"), uniform(rng, hidden, 4 * hidden, range));
        let b = store.add(format!("{name}.b"), uniform(rng, 1, 4 * hidden, range));
        Self {
            w_x,
            w_h,
            b,
            input,
            hidden,
        }
    }

    /// Looks up an existing cell by name.
    pub fn find(store: &ParamStore, name: &str) -> Option<Self> {
        let w_x = store.id(&format!("{name}.w_x"))?;
        let w_h = store.id(&format!("{name}.w_h"))?;
        let b = store.id(&format!("{name}.b"))?;
        let (input, four_h) = store.get(w_x).dim();
        Some(Self {
            w_x,
            w_h,
            b,
            input,
            hidden: four_h / 4,
        })
    }

    pub fn zero_state(&self, t: &mut Tape, batch: usize) -> (Var, Var) {
        let h = t.constant(Array2::zeros((batch, self.hidden)));
        let c = t.constant(Array2::zeros((batch, self.hidden)));
        (h, c)
    }

    /// Projects stacked inputs through `w_x` once; returns one `B×4H` block
    /// per step.
    pub fn project_inputs(&self, t: &mut Tape, inputs: &[Var]) -> Vec<Var> {
        if inputs.is_empty() {
            return Vec::new();
        }
        let batch = t.shape(inputs[0]).0;
        let stacked = t.vstack(inputs);
        let wx = t.param(self.w_x);
        let xw = t.matmul(stacked, wx);
        (0..inputs.len())
            .map(|s| t.slice_rows(xw, s * batch, batch))
            .collect()
    }

    /// One step given the pre-projected input `xw` (`B×4H`).
    pub fn step_projected(&self, t: &mut Tape, xw: Var, h: Var, c: Var) -> (Var, Var) {
        let n = self.hidden;
        let wh = t.param(self.w_h);
        let b = t.param(self.b);
        let hw = t.matmul(h, wh);
        let gates = t.add(xw, hw);
        let gates = t.add_row(gates, b);
        let i = t.slice_cols(gates, 0, n);
        let i = t.sigmoid(i);
        let f = t.slice_cols(gates, n, n);
        let f = t.sigmoid(f);
        let g = t.slice_cols(gates, 2 * n, n);
        let g = t.tanh(g);
        let o = t.slice_cols(gates, 3 * n, n);
        let o = t.sigmoid(o);
        let fc = t.mul(f, c);
        let ig = t.mul(i, g);
        let c_new = t.add(fc, ig);
        let tc = t.tanh(c_new);
        let h_new = t.mul(o, tc);
        (h_new, c_new)
    }

    pub fn step(&self, t: &mut Tape, x: Var, h: Var, c: Var) -> (Var, Var) {
        let wx = t.param(self.w_x);
        let xw = t.matmul(x, wx);
        self.step_projected(t, xw, h, c)
    }

    /// Runs the cell over `inputs` (one `B×in` matrix per step) and returns
    /// the hidden state after every step, in input order.
    ///
    /// `masks[s]` is a `B×1` 0/1 column; rows with 0 carry the previous
    /// state through unchanged. With `reverse` the sequence is consumed from
    /// the last step to the first, so right-padded rows start from the zero
    /// state at their last valid step.
    pub fn run(
        &self,
        t: &mut Tape,
        inputs: &[Var],
        masks: Option<&[Mat]>,
        reverse: bool,
    ) -> Vec<Var> {
        if inputs.is_empty() {
            return Vec::new();
        }
        let batch = t.shape(inputs[0]).0;
        let xw = self.project_inputs(t, inputs);
        let (mut h, mut c) = self.zero_state(t, batch);
        let mut out = vec![h; inputs.len()];
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        for s in order {
            let (h_new, c_new) = self.step_projected(t, xw[s], h, c);
            match masks {
                Some(m) if m[s].iter().any(|&v| v == 0.0) => {
                    h = t.blend(h_new, h, m[s].clone());
                    c = t.blend(c_new, c, m[s].clone());
                }
                _ => {
                    h = h_new;
                    c = c_new;
                }
            }
            out[s] = h;
        }
        out
    }
}

/// Adam with L2 regularisation folded into the gradient and optional
/// global-norm clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
    steps: u64,
}

/// What happened in one optimiser step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    pub clipped: bool,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64, clip_norm: Option<f64>) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            clip_norm,
            m: Vec::new(),
            v: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every parameter present in `grads`; parameters
    /// outside `grads` (including everything that is not in the store) are
    /// left untouched.
    pub fn step(&mut self, store: &mut ParamStore, mut grads: Grads) -> StepStats {
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        if self.weight_decay > 0.0 {
            for (id, g) in grads.iter_mut() {
                g.scaled_add(self.weight_decay, store.get(id));
            }
        }
        let grad_norm = grads.global_norm();
        let mut clipped = false;
        if let Some(max) = self.clip_norm {
            if grad_norm > max {
                grads.scale(max / grad_norm);
                clipped = true;
            }
        }
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        let step = self.lr * bc2.sqrt() / bc1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (id, g) in grads.iter() {
            let m = self.m[id.0].get_or_insert_with(|| Array2::zeros(g.dim()));
            let v = self.v[id.0].get_or_insert_with(|| Array2::zeros(g.dim()));
            let p = store.get_mut(id);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step * *m / (v.sqrt() + eps * bc2.sqrt());
                });
        }
        StepStats { grad_norm, clipped }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let mut store = ParamStore::new();
        let cell = LstmCell {
            w_x: store.add("w_x", array![[0.1, 0.2, 0.3, 0.4]]),
            w_h: store.add("w_h", array![[0.5, -0.5, 0.25, -0.25]]),
            b: store.add("b", array![[0.0, 1.0, 0.0, 0.0]]),
            input: 1,
            hidden: 1,
        };
        let mut t = Tape::new(&store);
        let x = t.constant(array![[2.0]]);
        let h = t.constant(array![[0.5]]);
        let c = t.constant(array![[-1.0]]);
        let (h1, c1) = cell.step(&mut t, x, h, c);
        let i = sigmoid(0.2 + 0.25);
        let f = sigmoid(0.4 - 0.25 + 1.0);
        let g = (0.6f64 + 0.125).tanh();
        let o = sigmoid(0.8 - 0.125);
        let c_exp = f * -1.0 + i * g;
        let h_exp = o * c_exp.tanh();
        assert!((t.scalar(c1) - c_exp).abs() < 1e-15);
        assert!((t.scalar(h1) - h_exp).abs() < 1e-15);
    }

    #[test]
    fn masked_rows_carry_state_and_match_unpadded_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "c", 3, 4, &mut rng, 0.5);
        let xs: Vec<Mat> = (0..3).map(|_| uniform(&mut rng, 2, 3, 1.0)).collect();
        let masks = vec![array![[1.0], [1.0]], array![[1.0], [1.0]], array![[1.0], [0.0]]];
        for reverse in [false, true] {
            let mut t = Tape::new(&store);
            let inputs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
            let out = cell.run(&mut t, &inputs, Some(&masks), reverse);
            // Row 1 alone, truncated to two steps.
            let mut t2 = Tape::new(&store);
            let short: Vec<Var> = xs[..2]
                .iter()
                .map(|x| t2.constant(x.slice(ndarray::s![1..2, ..]).to_owned()))
                .collect();
            let out2 = cell.run(&mut t2, &short, None, reverse);
            for s in 0..2 {
                let a = t.value(out[s]).row(1).to_owned();
                let b = t2.value(out2[s]).row(0).to_owned();
                assert!((&a - &b).iter().all(|d| d.abs() < 1e-14), "step {s} reverse {reverse}");
            }
        }
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let p = store.add("p", array![[3.0, -2.0]]);
        let mut opt = Adam::new(0.1, 0.0, None);
        for _ in 0..500 {
            let grads = {
                let mut t = Tape::new(&store);
                let v = t.param(p);
                let l = t.sum_squares(v);
                t.backward(l)
            };
            opt.step(&mut store, grads);
        }
        assert!(store.get(p).iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn clipping_bounds_the_update_norm() {
        let mut store = ParamStore::new();
        let p = store.add("p", array![[300.0, -400.0]]);
        let mut opt = Adam::new(0.1, 0.0, Some(5.0));
        let grads = {
            let mut t = Tape::new(&store);
            let v = t.param(p);
            let l = t.sum_squares(v);
            t.backward(l)
        };
        let stats = opt.step(&mut store, grads);
        assert!(stats.clipped);
        assert!((stats.grad_norm - 1000.0).abs() < 1e-9);
    }
}
