use std::collections::HashMap;

use ndarray::{s, Array2, Axis};

use super::linalg;
use super::params::{ParamId, ParamStore};
use crate::error::Result;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Gelu(Var),
    Exp(Var),
    Recip(Var),
    Clamp(Var, f64, f64),
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    SelectRows { x: Var, idx: Vec<usize> },
    ScatterRows { base: Var, src: Var, idx: Vec<usize> },
    IndexAdd { src: Var, idx: Vec<usize> },
    DiagFromRow(Var),
    DiagToRow(Var),
    Inverse(Var),
    SegmentSoftmax { x: Var, groups: Vec<usize> },
    /// Scalar output whose partial derivatives w.r.t. each input were
    /// computed during the forward pass.
    ScalarCustom { inputs: Vec<(Var, Array2<f64>)> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Reverse-mode automatic differentiation tape over dense `f64` matrices.
///
/// Every value is a 2-D array; scalars are `1×1`. Operations append nodes and
/// return their [`Var`]; [`Tape::backward`] walks the tape in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of one scalar with respect to every node on a tape.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not influence the
    /// differentiated scalar.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (or constant) value.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar_leaf(&mut self, x: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), x))
    }

    /// Binds a parameter from `store`, reusing the existing node when the
    /// parameter was already bound on this tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone());
        self.params.insert(id, v);
        v
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&p, &v)| (p, v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `a + row` with `row` (1×c) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row), (1, self.shape(a).1), "add_row: shape mismatch");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row), (1, self.shape(a).1), "mul_row: shape mismatch");
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    /// `a ∘ col` with `col` (r×1) broadcast over the columns of `a`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        assert_eq!(self.shape(col), (self.shape(a).0, 1), "mul_col: shape mismatch");
        let v = self.value(a) * self.value(col);
        self.push(v, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        self.push(v, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    /// Elementwise `1/x`.
    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::recip);
        self.push(v, Op::Recip(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Row-wise normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let mut v = self.value(a).clone();
        let mut inv_std = Vec::with_capacity(v.nrows());
        for mut row in v.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.fold(0.0, |acc, &x| acc + (x - mean) * (x - mean)) / n;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|x| (x - mean) * is);
            inv_std.push(is);
        }
        self.push(v, Op::LayerNorm { x: a, inv_std })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    /// Sums over rows, producing a 1×c row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(v, Op::SumRows(a))
    }

    /// Sums over columns, producing an r×1 column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Array2::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.nrows(), rows, "concat_cols: row mismatch");
            v.slice_mut(s![.., at..at + pv.ncols()]).assign(pv);
            at += pv.ncols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols { x: a, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var], cols: usize) -> Var {
        let rows: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut v = Array2::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.ncols(), cols, "concat_rows: column mismatch");
            v.slice_mut(s![at..at + pv.nrows(), ..]).assign(pv);
            at += pv.nrows();
        }
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// Gathers rows `idx` of `a` (repeats allowed).
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let src = self.value(a);
        let mut v = Array2::zeros((idx.len(), src.ncols()));
        for (k, &i) in idx.iter().enumerate() {
            v.row_mut(k).assign(&src.row(i));
        }
        self.push(
            v,
            Op::SelectRows {
                x: a,
                idx: idx.to_vec(),
            },
        )
    }

    /// Copy of `base` with row `idx[k]` replaced by row `k` of `src`.
    /// Indices must be distinct.
    pub fn scatter_rows(&mut self, base: Var, src: Var, idx: &[usize]) -> Var {
        debug_assert!({
            let mut seen = idx.to_vec();
            seen.sort_unstable();
            seen.windows(2).all(|w| w[0] != w[1])
        });
        let mut v = self.value(base).clone();
        let sv = self.value(src);
        assert_eq!(sv.dim(), (idx.len(), v.ncols()), "scatter_rows: shape mismatch");
        for (k, &i) in idx.iter().enumerate() {
            v.row_mut(i).assign(&sv.row(k));
        }
        self.push(
            v,
            Op::ScatterRows {
                base,
                src,
                idx: idx.to_vec(),
            },
        )
    }

    /// Output with `rows` rows where row `idx[k]` accumulates row `k` of `src`.
    pub fn index_add(&mut self, src: Var, idx: &[usize], rows: usize) -> Var {
        let sv = self.value(src);
        let mut v = Array2::zeros((rows, sv.ncols()));
        for (k, &i) in idx.iter().enumerate() {
            let mut r = v.row_mut(i);
            r += &sv.row(k);
        }
        self.push(
            v,
            Op::IndexAdd {
                src,
                idx: idx.to_vec(),
            },
        )
    }

    pub fn diag_from_row(&mut self, row: Var) -> Var {
        let rv = self.value(row);
        assert_eq!(rv.nrows(), 1);
        let n = rv.ncols();
        let mut v = Array2::zeros((n, n));
        for j in 0..n {
            v[[j, j]] = rv[[0, j]];
        }
        self.push(v, Op::DiagFromRow(row))
    }

    pub fn diag_to_row(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.nrows();
        let v = Array2::from_shape_fn((1, n), |(_, j)| av[[j, j]]);
        self.push(v, Op::DiagToRow(a))
    }

    /// Matrix inverse; fails when the reciprocal condition estimate falls
    /// below `min_rcond`.
    pub fn inverse(&mut self, a: Var, min_rcond: f64) -> Result<Var> {
        let inv = linalg::checked_inverse(self.value(a), min_rcond)?;
        Ok(self.push(inv, Op::Inverse(a)))
    }

    /// Softmax of a column of scores within groups sharing the same label.
    pub fn segment_softmax(&mut self, a: Var, groups: &[usize]) -> Var {
        let x = self.value(a);
        assert_eq!(x.dim(), (groups.len(), 1), "segment_softmax: shape mismatch");
        let mut max: HashMap<usize, f64> = HashMap::new();
        for (k, &g) in groups.iter().enumerate() {
            let e = max.entry(g).or_insert(f64::NEG_INFINITY);
            *e = e.max(x[[k, 0]]);
        }
        let mut v = Array2::zeros(x.dim());
        let mut sum: HashMap<usize, f64> = HashMap::new();
        for (k, &g) in groups.iter().enumerate() {
            let e = (x[[k, 0]] - max[&g]).exp();
            v[[k, 0]] = e;
            *sum.entry(g).or_insert(0.0) += e;
        }
        for (k, &g) in groups.iter().enumerate() {
            v[[k, 0]] /= sum[&g];
        }
        self.push(
            v,
            Op::SegmentSoftmax {
                x: a,
                groups: groups.to_vec(),
            },
        )
    }

    /// Records a scalar computed outside the tape together with its partial
    /// derivatives w.r.t. `inputs`.
    pub fn scalar_custom(&mut self, value: f64, inputs: Vec<(Var, Array2<f64>)>) -> Var {
        for (v, g) in &inputs {
            assert_eq!(self.shape(*v), g.dim(), "scalar_custom: gradient shape mismatch");
        }
        self.push(Array2::from_elem((1, 1), value), Op::ScalarCustom { inputs })
    }

    /// Affine map `x·w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward: output must be a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b));
                    acc(&mut grads, *b, &g * self.value(*a));
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g.clone());
                }
                Op::MulRow(a, row) => {
                    let grow = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, &g * self.value(*row));
                    acc(&mut grads, *row, grow);
                }
                Op::MulCol(a, col) => {
                    let gcol = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *a, &g * self.value(*col));
                    acc(&mut grads, *col, gcol);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, &g * *s),
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(&mut grads, *a, &g * &y.mapv(|t| 1.0 - t * t));
                }
                Op::Gelu(a) => {
                    let d = self.value(*a).mapv(gelu_grad);
                    acc(&mut grads, *a, &g * &d);
                }
                Op::Exp(a) => acc(&mut grads, *a, &g * &node.value),
                Op::Recip(a) => acc(&mut grads, *a, -(&g * &node.value.mapv(|y| y * y))),
                Op::Clamp(a, lo, hi) => {
                    let mut ga = g.clone();
                    ga.zip_mut_with(self.value(*a), |gv, &x| {
                        if x < *lo || x > *hi {
                            *gv = 0.0;
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let gy = &g * y;
                    let dot = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = &gy - &(y * &dot);
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, inv_std } => {
                    let y = &node.value;
                    let n = y.ncols() as f64;
                    let mut ga = Array2::zeros(y.dim());
                    for (r, mut out) in ga.rows_mut().into_iter().enumerate() {
                        let gr = g.row(r);
                        let yr = y.row(r);
                        let mean_g = gr.sum() / n;
                        let mean_gy = gr.dot(&yr) / n;
                        for c in 0..out.len() {
                            out[c] = inv_std[r] * (gr[c] - mean_g - yr[c] * mean_gy);
                        }
                    }
                    acc(&mut grads, *x, ga);
                }
                Op::SumAll(a) => {
                    let shape = self.shape(*a);
                    acc(&mut grads, *a, Array2::from_elem(shape, g[[0, 0]]));
                }
                Op::SumRows(a) => {
                    let shape = self.shape(*a);
                    let ga = g.broadcast(shape).expect("sum_rows broadcast").to_owned();
                    acc(&mut grads, *a, ga);
                }
                Op::SumCols(a) => {
                    let shape = self.shape(*a);
                    let ga = g.broadcast(shape).expect("sum_cols broadcast").to_owned();
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        acc(&mut grads, p, g.slice(s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let mut ga = Array2::zeros(self.shape(*x));
                    let w = g.ncols();
                    ga.slice_mut(s![.., *start..*start + w]).assign(&g);
                    acc(&mut grads, *x, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        acc(&mut grads, p, g.slice(s![at..at + h, ..]).to_owned());
                        at += h;
                    }
                }
                Op::SelectRows { x, idx } => {
                    let mut ga = Array2::zeros(self.shape(*x));
                    for (k, &i) in idx.iter().enumerate() {
                        let mut r = ga.row_mut(i);
                        r += &g.row(k);
                    }
                    acc(&mut grads, *x, ga);
                }
                Op::ScatterRows { base, src, idx } => {
                    let mut gsrc = Array2::zeros(self.shape(*src));
                    let mut gbase = g.clone();
                    for (k, &i) in idx.iter().enumerate() {
                        gsrc.row_mut(k).assign(&g.row(i));
                        gbase.row_mut(i).fill(0.0);
                    }
                    acc(&mut grads, *base, gbase);
                    acc(&mut grads, *src, gsrc);
                }
                Op::IndexAdd { src, idx } => {
                    let mut gsrc = Array2::zeros(self.shape(*src));
                    for (k, &i) in idx.iter().enumerate() {
                        gsrc.row_mut(k).assign(&g.row(i));
                    }
                    acc(&mut grads, *src, gsrc);
                }
                Op::DiagFromRow(row) => {
                    let n = g.nrows();
                    let gr = Array2::from_shape_fn((1, n), |(_, j)| g[[j, j]]);
                    acc(&mut grads, *row, gr);
                }
                Op::DiagToRow(a) => {
                    let n = g.ncols();
                    let mut ga = Array2::zeros((n, n));
                    for j in 0..n {
                        ga[[j, j]] = g[[0, j]];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Inverse(a) => {
                    let yt = node.value.t();
                    let ga = -yt.dot(&g).dot(&yt);
                    acc(&mut grads, *a, ga);
                }
                Op::SegmentSoftmax { x, groups } => {
                    let y = &node.value;
                    let mut dot: HashMap<usize, f64> = HashMap::new();
                    for (k, &grp) in groups.iter().enumerate() {
                        *dot.entry(grp).or_insert(0.0) += g[[k, 0]] * y[[k, 0]];
                    }
                    let ga = Array2::from_shape_fn(y.dim(), |(k, _)| {
                        y[[k, 0]] * (g[[k, 0]] - dot[&groups[k]])
                    });
                    acc(&mut grads, *x, ga);
                }
                Op::ScalarCustom { inputs } => {
                    let s = g[[0, 0]];
                    for (v, local) in inputs {
                        acc(&mut grads, *v, local * s);
                    }
                }
            }
            grads[id] = Some(g);
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            g[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn check(build: impl Fn(&mut Tape, Var) -> Var, x: Array2<f64>) {
        let f = |x: &Array2<f64>| {
            let mut t = Tape::new();
            let v = t.leaf(x.clone());
            let out = build(&mut t, v);
            t.scalar(out)
        };
        let mut t = Tape::new();
        let v = t.leaf(x.clone());
        let out = build(&mut t, v);
        let grads = t.backward(out);
        let analytic = grads.get_or_zeros(v, x.dim());
        let numeric = numeric_grad(f, &x);
        let diff = (&analytic - &numeric).mapv(f64::abs).sum();
        let scale = analytic.mapv(f64::abs).sum() + numeric.mapv(f64::abs).sum();
        assert!(diff / scale.max(1e-12) < 1e-6, "analytic {analytic:?} numeric {numeric:?}");
    }

    #[test]
    fn elementwise_ops_backprop() {
        let x = array![[0.3, -0.7, 1.1], [0.2, 0.5, -1.4]];
        check(|t, v| { let y = t.tanh(v); t.sum_all(y) }, x.clone());
        check(|t, v| { let y = t.gelu(v); t.sum_all(y) }, x.clone());
        check(|t, v| { let y = t.exp(v); let z = t.mul(y, v); t.sum_all(z) }, x.clone());
        check(|t, v| { let e = t.exp(v); let y = t.recip(e); let z = t.mul(y, v); t.sum_all(z) }, x.clone());
        check(|t, v| { let y = t.layer_norm(v, 1e-5); let z = t.mul(y, y); let w = t.mul(z, v); t.sum_all(w) }, x);
    }

    #[test]
    fn softmax_and_structural_ops_backprop() {
        let x = array![[0.3, -0.7, 1.1], [0.2, 0.5, -1.4], [1.0, 0.1, 0.0]];
        check(|t, v| {
            let s = t.softmax_rows(v);
            let w = t.transpose(v);
            let p = t.matmul(s, w);
            let d = t.diag_to_row(p);
            let e = t.exp(d);
            t.sum_all(e)
        }, x.clone());
        check(|t, v| {
            let sel = t.select_rows(v, &[2, 0, 2]);
            let sl = t.slice_cols(sel, 1, 2);
            let cc = t.concat_cols(&[sl, sl]);
            let sq = t.mul(cc, cc);
            t.sum_all(sq)
        }, x.clone());
        check(|t, v| {
            let col = t.sum_cols(v);
            let sm = t.segment_softmax(col, &[0, 1, 0]);
            let row = t.sum_rows(v);
            let dg = t.diag_from_row(row);
            let inv = t.inverse(dg, 1e-12).unwrap();
            let ia = t.index_add(sm, &[1, 1, 0], 2);
            let q = t.mul(ia, ia);
            let a = t.sum_all(q);
            let b = t.sum_all(inv);
            t.add(a, b)
        }, x + 3.0);
    }

    #[test]
    fn scatter_and_inverse_backprop() {
        let x = array![[2.0, 0.3, 0.1], [0.2, 1.5, -0.4], [0.1, 0.2, 1.8]];
        check(|t, v| {
            let src = t.select_rows(v, &[2]);
            let src = t.exp(src);
            let sc = t.scatter_rows(v, src, &[0]);
            let inv = t.inverse(sc, 1e-12).unwrap();
            let sq = t.mul(inv, v);
            t.sum_all(sq)
        }, x);
    }
}
