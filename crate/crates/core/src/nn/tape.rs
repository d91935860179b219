//! Reverse-mode differentiation over row-major f64 matrices.
//!
//! A [`Tape`] records one forward pass; [`Tape::backward`] walks it in
//! reverse and accumulates parameter gradients into [`Grads`].

use ndarray::{s, Array2, Axis};

use super::params::{Grads, Matrix, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

enum Op {
    Constant,
    Param(ParamId),
    Embed { table: ParamId, rows: Vec<usize> },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Matrix, inv_std: Vec<f64> },
    Gelu(Var),
    Tanh(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Pick { x: Var, cols: Vec<usize> },
    Clamp { x: Var, lo: f64, hi: f64 },
    Sum(Var),
}

struct Node {
    value: Matrix,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn log_softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(128),
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).clone();
        self.push(value, Op::Param(id))
    }

    /// Row lookup into a parameter table.
    pub fn embed(&mut self, table: ParamId, rows: &[usize]) -> Var {
        let t = self.params.get(table);
        let mut value = Matrix::zeros((rows.len(), t.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            value.row_mut(i).assign(&t.row(r));
        }
        self.push(
            value,
            Op::Embed {
                table,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.value(a));
        self.push(value, Op::LogSoftmaxRows(a))
    }

    /// Row-wise layer normalization with `1 × n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let value = &xhat * self.value(gain) + self.value(bias);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        self.push(value, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + width]).to_owned();
        self.push(value, Op::SliceCols { x: a, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    /// Column means as a `1 × n` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        self.push(value, Op::MeanRows(a))
    }

    /// Selects `a[r, cols[r]]` for every row, as an `L × 1` column.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Var {
        let av = self.value(a);
        let value = Array2::from_shape_fn((cols.len(), 1), |(r, _)| av[[r, cols[r]]]);
        self.push(
            value,
            Op::Pick {
                x: a,
                cols: cols.to_vec(),
            },
        )
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp { x: a, lo, hi })
    }

    /// Sum of all entries, in row-major order, as `1 × 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).iter().fold(0.0, |acc, &v| acc + v);
        self.push(Array2::from_elem((1, 1), total), Op::Sum(a))
    }

    /// Accumulates `seed · ∂root/∂θ` into `grads`, where every entry of
    /// `root`'s upstream gradient is `seed`.
    pub fn backward(&self, root: Var, seed: f64, grads: &mut Grads) {
        let mut g: Vec<Option<Matrix>> = (0..=root.0).map(|_| None).collect();
        g[root.0] = Some(Matrix::from_elem(self.nodes[root.0].value.raw_dim(), seed));

        fn acc(g: &mut [Option<Matrix>], v: Var, delta: Matrix) {
            match &mut g[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => *grads.get_mut(*id) += &dy,
                Op::Embed { table, rows } => {
                    let gt = grads.get_mut(*table);
                    for (r, &row) in rows.iter().enumerate() {
                        let mut dst = gt.row_mut(row);
                        dst += &dy.row(r);
                    }
                }
                Op::MatMul(a, b) => {
                    let da = dy.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&dy);
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = dy.dot(self.value(*b));
                    let db = dy.t().dot(self.value(*a));
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *b, dy.clone());
                    acc(&mut g, *a, dy);
                }
                Op::AddRow(a, row) => {
                    let dr = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut g, *row, dr);
                    acc(&mut g, *a, dy);
                }
                Op::Scale(a, c) => acc(&mut g, *a, dy * *c),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut dx = &dy * y;
                    for (mut dr, yr) in dx.rows_mut().into_iter().zip(y.rows()) {
                        let dot = dr.sum();
                        dr.zip_mut_with(&yr, |d, &yv| *d -= yv * dot);
                    }
                    acc(&mut g, *a, dx);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut dx = dy.clone();
                    for ((mut dr, yr), dyr) in dx.rows_mut().into_iter().zip(y.rows()).zip(dy.rows()) {
                        let total = dyr.sum();
                        dr.zip_mut_with(&yr, |d, &lp| *d -= lp.exp() * total);
                    }
                    acc(&mut g, *a, dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let dgain = (&dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbias = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &dy * self.value(*gain);
                    let n = xhat.ncols() as f64;
                    let mut dx = Matrix::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let h = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_h = dh.dot(&h);
                        let is = inv_std[r];
                        for c in 0..xhat.ncols() {
                            dx[[r, c]] = is / n * (n * dh[c] - sum_dh - h[c] * sum_dh_h);
                        }
                    }
                    acc(&mut g, *gain, dgain);
                    acc(&mut g, *bias, dbias);
                    acc(&mut g, *x, dx);
                }
                Op::Gelu(a) => {
                    let mut dx = dy;
                    dx.zip_mut_with(self.value(*a), |d, &x| *d *= gelu_grad(x));
                    acc(&mut g, *a, dx);
                }
                Op::Tanh(a) => {
                    let mut dx = dy;
                    dx.zip_mut_with(&node.value, |d, &y| *d *= 1.0 - y * y);
                    acc(&mut g, *a, dx);
                }
                Op::SliceCols { x, start } => {
                    let mut dx = Matrix::zeros(self.value(*x).raw_dim());
                    dx.slice_mut(s![.., *start..*start + dy.ncols()]).assign(&dy);
                    acc(&mut g, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut g, p, dy.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::MeanRows(a) => {
                    let rows = self.value(*a).nrows();
                    let dx = dy
                        .broadcast((rows, dy.ncols()))
                        .expect("row broadcast")
                        .mapv(|v| v / rows as f64);
                    acc(&mut g, *a, dx);
                }
                Op::Pick { x, cols } => {
                    let mut dx = Matrix::zeros(self.value(*x).raw_dim());
                    for (r, &c) in cols.iter().enumerate() {
                        dx[[r, c]] = dy[[r, 0]];
                    }
                    acc(&mut g, *x, dx);
                }
                Op::Clamp { x, lo, hi } => {
                    let mut dx = dy;
                    dx.zip_mut_with(self.value(*x), |d, &v| {
                        if v < *lo || v > *hi {
                            *d = 0.0;
                        }
                    });
                    acc(&mut g, *x, dx);
                }
                Op::Sum(a) => {
                    let d = dy[[0, 0]];
                    acc(&mut g, *a, Matrix::from_elem(self.value(*a).raw_dim(), d));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of `f` against the tape gradient for
    /// every scalar of every parameter.
    fn check(store: &mut ParamStore, f: impl Fn(&mut Tape<'_>) -> Var) {
        let analytic = {
            let mut tape = Tape::new(store);
            let out = f(&mut tape);
            let mut grads = Grads::zeros(store);
            tape.backward(out, 1.0, &mut grads);
            grads
        };
        let eval = |s: &ParamStore| {
            let mut tape = Tape::new(s);
            let out = f(&mut tape);
            tape.scalar(out)
        };
        let h = 1e-5;
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            for idx in 0..store.get(id).len() {
                let (r, c) = (idx / store.get(id).ncols(), idx % store.get(id).ncols());
                let orig = store.get(id)[[r, c]];
                store.get_mut(id)[[r, c]] = orig + h;
                let up = eval(store);
                store.get_mut(id)[[r, c]] = orig - h;
                let down = eval(store);
                store.get_mut(id)[[r, c]] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = analytic.get(id)[[r, c]];
                let scale = an.abs().max(fd.abs());
                if scale > 1e-7 {
                    assert!((an - fd).abs() / scale < 1e-5, "{} [{r},{c}]: {an} vs {fd}", store.name(id));
                } else {
                    assert!((an - fd).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let emb = store.add("emb", uniform(5, 4, 1.0, &mut rng));
        let w = store.add("w", uniform(4, 4, 1.0, &mut rng));
        let b = store.add("b", uniform(1, 4, 1.0, &mut rng));
        let gain = store.add("gain", uniform(1, 4, 1.0, &mut rng));
        let bias = store.add("bias", uniform(1, 4, 1.0, &mut rng));
        let head = store.add("head", uniform(4, 2, 1.0, &mut rng));
        check(&mut store, |t| {
            let x = t.embed(emb, &[1, 3, 1]);
            let wv = t.param(w);
            let bv = t.param(b);
            let h = t.matmul(x, wv);
            let h = t.add_row(h, bv);
            let gv = t.param(gain);
            let bb = t.param(bias);
            let h = t.layer_norm(h, gv, bb);
            let att = t.matmul_t(h, x);
            let att = t.scale(att, 0.5);
            let p = t.softmax_rows(att);
            let mixed = t.matmul(p, x);
            let left = t.slice_cols(mixed, 0, 2);
            let right = t.slice_cols(h, 2, 2);
            let cat = t.concat_cols(&[left, right]);
            let act = t.gelu(cat);
            let act2 = t.tanh(act);
            let z = t.add(act, act2);
            let hv = t.param(head);
            let logits = t.matmul(z, hv);
            let lp = t.log_softmax_rows(logits);
            let picked = t.pick(lp, &[0, 1, 1]);
            let picked = t.clamp(picked, -50.0, 0.0);
            let pooled = t.mean_rows(z);
            let s1 = t.sum(picked);
            let s2 = t.sum(pooled);
            let both = t.add(s1, s2);
            t.sum(both)
        });
    }
}
