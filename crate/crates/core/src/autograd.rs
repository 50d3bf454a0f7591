//! A small reverse-mode automatic differentiation tape over dense `f64`
//! matrices.
//!
//! Every value is a 2-d matrix; vectors are `1×n` rows. Operations are
//! evaluated eagerly as they are recorded, and [`Tape::backward`] walks the
//! record in reverse to accumulate gradients for trainable parameters.
//! Constants never receive gradients, which is how frozen tables stay
//! frozen.

use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

pub type Mat = Array2<f64>;

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

/// Gradients of a scalar with respect to every parameter that influenced it.
#[derive(Clone, Debug, Default)]
pub struct Grads {
    params: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Mat)> {
        self.params
            .iter_mut()
            .enumerate()
            .filter_map(|(i, g)| g.as_mut().map(|g| (ParamId(i), g)))
    }

    pub fn global_norm(&self) -> f64 {
        self.iter()
            .map(|(_, g)| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for (_, g) in self.iter_mut() {
            g.mapv_inplace(|x| x * k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|(_, g)| g.iter().all(|x| x.is_finite()))
    }
}

enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    VStack(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Transpose(Var),
    ExpandRows(Var),
    MeanRows(Var),
    SumRows(Var),
    Sum(Var),
    SumSquares(Var),
    RowDot(Var, Var),
    Blend(Var, Var, Mat),
    Nll(Var, Vec<usize>, Mat, Vec<bool>),
}

struct Node {
    op: Op,
    value: Option<Mat>,
    grad: bool,
}

/// Records operations for one forward pass.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

fn softmax_row_inplace(mut row: ndarray::ArrayViewMut1<f64>, mask: Option<ndarray::ArrayView1<f64>>) {
    let mut max = f64::NEG_INFINITY;
    for (j, &x) in row.iter().enumerate() {
        if mask.map_or(true, |m| m[j] > 0.0) {
            max = max.max(x);
        }
    }
    if max == f64::NEG_INFINITY {
        row.fill(0.0);
        return;
    }
    let mut sum = 0.0;
    for (j, x) in row.iter_mut().enumerate() {
        if mask.map_or(true, |m| m[j] > 0.0) {
            *x = (*x - max).exp();
            sum += *x;
        } else {
            *x = 0.0;
        }
    }
    row.mapv_inplace(|x| x / sum);
}

/// Row-wise softmax of a plain matrix (entries with `mask == 0` get zero
/// weight).
pub fn softmax_rows(a: &Mat, mask: Option<&Mat>) -> Mat {
    let mut out = a.clone();
    for (i, row) in out.rows_mut().into_iter().enumerate() {
        softmax_row_inplace(row, mask.map(|m| m.row(i)));
    }
    out
}

/// Log-probability floor used by the NLL.
pub const LOG_PROB_FLOOR: f64 = 1e-12;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (_, Some(m)) => m,
            (Op::Param(id), None) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    fn push(&mut self, op: Op, value: Mat, grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn g(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(Op::Const, m, false)
    }

    pub fn row(&mut self, v: &[f64]) -> Var {
        self.constant(Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap())
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let g = self.g(a) || self.g(b);
        self.push(Op::MatMul(a, b), v, g)
    }

    /// a · bᵀ
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let g = self.g(a) || self.g(b);
        self.push(Op::MatMulT(a, b), v, g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let g = self.g(a) || self.g(b);
        self.push(Op::Add(a, b), v, g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let g = self.g(a) || self.g(b);
        self.push(Op::Sub(a, b), v, g)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let g = self.g(a) || self.g(b);
        self.push(Op::Mul(a, b), v, g)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) / self.value(b);
        let g = self.g(a) || self.g(b);
        self.push(Op::Div(a, b), v, g)
    }

    /// Adds the `1×n` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let v = self.value(a) + self.value(r);
        let g = self.g(a) || self.g(r);
        self.push(Op::AddRow(a, r), v, g)
    }

    /// Multiplies row `i` of `a` by `w[i]` (`w` is `m×1`).
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Var {
        let v = self.value(a) * self.value(w);
        let g = self.g(a) || self.g(w);
        self.push(Op::ScaleRows(a, w), v, g)
    }

    /// Multiplies `a` by the 1×1 node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let v = self.value(a) * k;
        let g = self.g(a) || self.g(s);
        self.push(Op::ScaleBy(a, s), v, g)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        let g = self.g(a);
        self.push(Op::Scale(a, k), v, g)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        let g = self.g(a);
        self.push(Op::Sigmoid(a), v, g)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        let g = self.g(a);
        self.push(Op::Tanh(a), v, g)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(softplus);
        let g = self.g(a);
        self.push(Op::Softplus(a), v, g)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        let g = self.g(a);
        self.push(Op::Exp(a), v, g)
    }

    /// Row-wise softmax; entries where `mask` is zero are excluded.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Mat>) -> Var {
        let v = softmax_rows(self.value(a), mask);
        let g = self.g(a);
        self.push(Op::SoftmaxRows(a), v, g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        let g = parts.iter().any(|&p| self.g(p));
        self.push(Op::ConcatCols(parts.to_vec()), v, g)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        let g = self.g(a);
        self.push(Op::SliceCols(a, start), v, g)
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        let g = parts.iter().any(|&p| self.g(p));
        self.push(Op::VStack(parts.to_vec()), v, g)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let g = self.g(a);
        self.push(Op::SliceRows(a, start), v, g)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), idx);
        let g = self.g(a);
        self.push(Op::GatherRows(a, idx.to_vec()), v, g)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        let g = self.g(a);
        self.push(Op::Transpose(a), v, g)
    }

    /// Repeats a `1×n` row `m` times.
    pub fn expand_rows(&mut self, a: Var, m: usize) -> Var {
        let row = self.value(a);
        let v = row.broadcast((m, row.ncols())).expect("1×n row").to_owned();
        let g = self.g(a);
        self.push(Op::ExpandRows(a), v, g)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        let g = self.g(a);
        self.push(Op::MeanRows(a), v, g)
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let g = self.g(a);
        self.push(Op::SumRows(a), v, g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let g = self.g(a);
        self.push(Op::Sum(a), v, g)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).iter().map(|x| x * x).sum());
        let g = self.g(a);
        self.push(Op::SumSquares(a), v, g)
    }

    /// Row-wise inner products of two equally shaped matrices (`m×1`).
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let v = (self.value(a) * self.value(b))
            .sum_axis(Axis(1))
            .insert_axis(Axis(1));
        let g = self.g(a) || self.g(b);
        self.push(Op::RowDot(a, b), v, g)
    }

    /// `mask ∘ new + (1 − mask) ∘ old` with a constant `m×1` mask.
    pub fn blend(&mut self, new: Var, old: Var, mask: Mat) -> Var {
        let keep = mask.mapv(|m| 1.0 - m);
        let v = self.value(new) * &mask + &(self.value(old) * &keep);
        let g = self.g(new) || self.g(old);
        self.push(Op::Blend(new, old, mask), v, g)
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`; each log-probability is floored at `ln(1e-12)`.
    pub fn nll(&mut self, logits: Var, targets: &[usize]) -> Var {
        let probs = softmax_rows(self.value(logits), None);
        let floor = LOG_PROB_FLOOR.ln();
        let lg = self.value(logits);
        let mut total = 0.0;
        let mut clamped = Vec::with_capacity(targets.len());
        for (i, &t) in targets.iter().enumerate() {
            let row = lg.row(i);
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            let lp = row[t] - lse;
            clamped.push(lp < floor);
            total -= lp.max(floor);
        }
        let g = self.g(logits);
        self.push(
            Op::Nll(logits, targets.to_vec(), probs, clamped),
            Array2::from_elem((1, 1), total),
            g,
        )
    }

    /// Reverse pass from the 1×1 node `root`.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Grads {
            params: (0..self.params.len()).map(|_| None).collect(),
        };
        if !self.g(root) {
            return out;
        }
        grads[root.0] = Some(Array2::ones((1, 1)));

        for i in (0..=root.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.grad {
                continue;
            }
            let acc = |v: Var, delta: Mat, grads: &mut Vec<Option<Mat>>| {
                if !self.nodes[v.0].grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(g) => *g += &delta,
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Const => {}
                Op::Param(id) => out.params[id.0] = Some(gout),
                Op::MatMul(a, b) => {
                    if self.g(*a) {
                        acc(*a, gout.dot(&self.value(*b).t()), &mut grads);
                    }
                    if self.g(*b) {
                        acc(*b, self.value(*a).t().dot(&gout), &mut grads);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.g(*a) {
                        acc(*a, gout.dot(self.value(*b)), &mut grads);
                    }
                    if self.g(*b) {
                        acc(*b, gout.t().dot(self.value(*a)), &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, gout.clone(), &mut grads);
                    acc(*b, gout, &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*a, gout.clone(), &mut grads);
                    acc(*b, -gout, &mut grads);
                }
                Op::Mul(a, b) => {
                    if self.g(*a) {
                        acc(*a, &gout * self.value(*b), &mut grads);
                    }
                    if self.g(*b) {
                        acc(*b, &gout * self.value(*a), &mut grads);
                    }
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    if self.g(*a) {
                        acc(*a, &gout / bv, &mut grads);
                    }
                    if self.g(*b) {
                        let d = -(&gout * self.value(*a)) / &(bv * bv);
                        acc(*b, d, &mut grads);
                    }
                }
                Op::AddRow(a, r) => {
                    if self.g(*r) {
                        acc(*r, gout.sum_axis(Axis(0)).insert_axis(Axis(0)), &mut grads);
                    }
                    acc(*a, gout, &mut grads);
                }
                Op::ScaleRows(a, w) => {
                    if self.g(*w) {
                        let d = (&gout * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                        acc(*w, d, &mut grads);
                    }
                    if self.g(*a) {
                        acc(*a, &gout * self.value(*w), &mut grads);
                    }
                }
                Op::ScaleBy(a, s) => {
                    if self.g(*s) {
                        let d = (&gout * self.value(*a)).sum();
                        acc(*s, Array2::from_elem((1, 1), d), &mut grads);
                    }
                    if self.g(*a) {
                        acc(*a, gout * self.scalar(*s), &mut grads);
                    }
                }
                Op::Scale(a, k) => acc(*a, gout * *k, &mut grads),
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut d = gout;
                    Zip::from(&mut d).and(y).for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(*a, d, &mut grads);
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut d = gout;
                    Zip::from(&mut d).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(*a, d, &mut grads);
                }
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    let mut d = gout;
                    Zip::from(&mut d).and(x).for_each(|d, &x| *d *= sigmoid(x));
                    acc(*a, d, &mut grads);
                }
                Op::Exp(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(*a, gout * y, &mut grads);
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut d = &gout * y;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = drow.sum();
                        Zip::from(&mut drow).and(&yrow).for_each(|d, &y| *d -= y * dot);
                    }
                    acc(*a, d, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        if self.g(p) {
                            acc(p, gout.slice(s![.., off..off + w]).to_owned(), &mut grads);
                        }
                        off += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(self.shape(*a));
                    d.slice_mut(s![.., *start..*start + gout.ncols()]).assign(&gout);
                    acc(*a, d, &mut grads);
                }
                Op::VStack(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        if self.g(p) {
                            acc(p, gout.slice(s![off..off + h, ..]).to_owned(), &mut grads);
                        }
                        off += h;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut d = Array2::zeros(self.shape(*a));
                    d.slice_mut(s![*start..*start + gout.nrows(), ..]).assign(&gout);
                    acc(*a, d, &mut grads);
                }
                Op::GatherRows(a, idx) => {
                    let mut d = Array2::zeros(self.shape(*a));
                    for (k, &r) in idx.iter().enumerate() {
                        let mut row = d.row_mut(r);
                        row += &gout.row(k);
                    }
                    acc(*a, d, &mut grads);
                }
                Op::Transpose(a) => acc(*a, gout.t().to_owned(), &mut grads),
                Op::ExpandRows(a) => {
                    acc(*a, gout.sum_axis(Axis(0)).insert_axis(Axis(0)), &mut grads)
                }
                Op::MeanRows(a) => {
                    let (m, _) = self.shape(*a);
                    let d = gout.broadcast(self.shape(*a)).unwrap().mapv(|x| x / m as f64);
                    acc(*a, d, &mut grads);
                }
                Op::SumRows(a) => {
                    let d = gout.broadcast(self.shape(*a)).unwrap().to_owned();
                    acc(*a, d, &mut grads);
                }
                Op::Sum(a) => {
                    acc(*a, Array2::from_elem(self.shape(*a), gout[[0, 0]]), &mut grads);
                }
                Op::SumSquares(a) => {
                    acc(*a, self.value(*a) * (2.0 * gout[[0, 0]]), &mut grads);
                }
                Op::RowDot(a, b) => {
                    if self.g(*a) {
                        acc(*a, self.value(*b) * &gout, &mut grads);
                    }
                    if self.g(*b) {
                        acc(*b, self.value(*a) * &gout, &mut grads);
                    }
                }
                Op::Blend(new, old, mask) => {
                    if self.g(*new) {
                        acc(*new, &gout * mask, &mut grads);
                    }
                    if self.g(*old) {
                        acc(*old, &gout * &mask.mapv(|m| 1.0 - m), &mut grads);
                    }
                }
                Op::Nll(logits, targets, probs, clamped) => {
                    let k = gout[[0, 0]];
                    let mut d = probs * k;
                    for (i, &t) in targets.iter().enumerate() {
                        if clamped[i] {
                            d.row_mut(i).fill(0.0);
                        } else {
                            d[[i, t]] -= k;
                        }
                    }
                    acc(*logits, d, &mut grads);
                }
            }
        }
        out
    }
}
