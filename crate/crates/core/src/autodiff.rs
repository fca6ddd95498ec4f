//! Reverse-mode automatic differentiation on a per-sample tape.
//!
//! A [`Graph`] records every operation applied to its variables. Parameters
//! are pulled lazily from a borrowed [`ParamStore`]; after
//! [`Graph::backward_into`] their gradients are accumulated into a
//! [`ParamGrads`] buffer. Adaptive solvers that reject a trial step can
//! [`truncate`](Graph::truncate) the tape back to a mark.

use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LinComb(Vec<(Var, f64)>),
    /// `x · wᵀ (+ b)`: x is `n × in`, w is `out × in`, b is `1 × out`.
    Linear(Var, Var, Option<Var>),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Abs(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    StackRows(Vec<Var>),
    SelectRow(Var, usize),
    KronRows(Var, Var),
    Sum(Var),
    Reshape(Var),
    Conv1d { x: Var, w: Var, b: Var, kernel: usize, stride: usize, pad: usize },
    ConvTranspose1d { x: Var, w: Var, b: Var, kernel: usize, stride: usize, pad: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph { store, nodes: Vec::with_capacity(1024), param_vars: vec![None; store.len()] }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every node recorded after `mark` (a value previously returned by
    /// [`len`](Self::len)).
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
        for slot in &mut self.param_vars {
            if matches!(slot, Some(v) if v.0 >= mark) {
                *slot = None;
            }
        }
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.len(), 1);
        t.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param(_) | Op::Input => true,
            op => op_inputs(op).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// A leaf whose gradient is tracked (unlike [`constant`](Self::constant)).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_map(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_map(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_map(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    /// `Σ coeff_i · v_i` over equally shaped variables.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty(), "empty linear combination");
        let first = self.value(terms[0].0);
        let mut out = Tensor::zeros(first.rows(), first.cols());
        for &(v, c) in terms {
            if c != 0.0 {
                out.add_scaled(self.value(v), c);
            }
        }
        self.push(out, Op::LinComb(terms.to_vec()))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (tx, tw) = (self.value(x), self.value(w));
        let (n, din) = tx.shape();
        let (dout, win) = tw.shape();
        assert_eq!(din, win, "linear: input width {din} != weight width {win}");
        let mut out = Tensor::zeros(n, dout);
        if let Some(b) = b {
            let tb = self.value(b);
            assert_eq!(tb.shape(), (1, dout), "linear: bias shape");
            for r in 0..n {
                out.row_slice_mut(r).copy_from_slice(tb.data());
            }
        }
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        // x (n×in) · wᵀ (in×out); wᵀ addressed through strides.
        gemm(n, din, dout, 1.0, (tx.data(), din as isize, 1), (tw.data(), 1, din as isize), beta, out.data_mut(), dout);
        self.push(out, Op::Linear(x, w, b))
    }

    /// Add a `1 × c` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (tx, tr) = (self.value(x), self.value(row));
        assert_eq!(tr.shape(), (1, tx.cols()), "add_row shape");
        let mut out = tx.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_slice_mut(r).iter_mut().zip(tr.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(x, row))
    }

    /// Multiply every row of `x` elementwise by a `1 × c` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let (tx, tr) = (self.value(x), self.value(row));
        assert_eq!(tr.shape(), (1, tx.cols()), "mul_row shape");
        let mut out = tx.clone();
        for r in 0..out.rows() {
            for (o, w) in out.row_slice_mut(r).iter_mut().zip(tr.data()) {
                *o *= w;
            }
        }
        self.push(out, Op::MulRow(x, row))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "empty concat");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let tp = self.value(p);
                assert_eq!(tp.rows(), rows, "concat_cols row mismatch");
                out.row_slice_mut(r)[off..off + tp.cols()].copy_from_slice(tp.row_slice(r));
                off += tp.cols();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let tx = self.value(x);
        assert!(start + len <= tx.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(tx.rows(), len);
        for r in 0..tx.rows() {
            out.row_slice_mut(r).copy_from_slice(&tx.row_slice(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(x, start))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "empty stack");
        let cols = self.value(parts[0]).cols();
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            let tp = self.value(p);
            assert_eq!(tp.cols(), cols, "stack_rows column mismatch");
            data.extend_from_slice(tp.data());
        }
        self.push(Tensor::new(rows, cols, data), Op::StackRows(parts.to_vec()))
    }

    pub fn select_row(&mut self, x: Var, row: usize) -> Var {
        let v = Tensor::row(self.value(x).row_slice(row));
        self.push(v, Op::SelectRow(x, row))
    }

    /// Row-wise Kronecker product: row r of the result is `a_r ⊗ b_r`.
    pub fn kron_rows(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rows(), tb.rows(), "kron_rows row mismatch");
        let (p, q) = (ta.cols(), tb.cols());
        let mut out = Tensor::zeros(ta.rows(), p * q);
        for r in 0..ta.rows() {
            let (ra, rb) = (ta.row_slice(r), tb.row_slice(r));
            let ro = out.row_slice_mut(r);
            for i in 0..p {
                for j in 0..q {
                    ro[i * q + j] = ra[i] * rb[j];
                }
            }
        }
        self.push(out, Op::KronRows(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(a).clone().reshape(rows, cols);
        self.push(v, Op::Reshape(a))
    }

    /// One-dimensional convolution. `x` is `c_in × len`, `w` is
    /// `c_out × (c_in·kernel)`, `b` is `1 × c_out`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (c_in, len) = tx.shape();
        let c_out = tw.rows();
        assert_eq!(tw.cols(), c_in * kernel, "conv1d weight shape");
        assert!(len + 2 * pad >= kernel, "conv1d input shorter than kernel");
        let out_len = (len + 2 * pad - kernel) / stride + 1;
        let mut out = Tensor::zeros(c_out, out_len);
        for o in 0..c_out {
            let wrow = tw.row_slice(o);
            let bias = tb.data()[o];
            for t in 0..out_len {
                let mut acc = bias;
                for ci in 0..c_in {
                    let xrow = tx.row_slice(ci);
                    for k in 0..kernel {
                        let pos = (t * stride + k) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < len {
                            acc += wrow[ci * kernel + k] * xrow[pos as usize];
                        }
                    }
                }
                out.set(o, t, acc);
            }
        }
        self.push(out, Op::Conv1d { x, w, b, kernel, stride, pad })
    }

    /// Transposed 1-D convolution. `x` is `c_in × len`, `w` is
    /// `c_in × (c_out·kernel)`, `b` is `1 × c_out`; output length is
    /// `(len − 1)·stride − 2·pad + kernel`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (c_in, len) = tx.shape();
        assert_eq!(tw.rows(), c_in, "conv_transpose1d weight rows");
        let c_out = tw.cols() / kernel;
        assert_eq!(tw.cols(), c_out * kernel, "conv_transpose1d weight cols");
        let out_len = (len - 1) * stride + kernel - 2 * pad;
        let mut out = Tensor::zeros(c_out, out_len);
        for o in 0..c_out {
            out.row_slice_mut(o).fill(tb.data()[o]);
        }
        for ci in 0..c_in {
            let xrow = tx.row_slice(ci);
            let wrow = tw.row_slice(ci);
            for (t, &xv) in xrow.iter().enumerate() {
                for o in 0..c_out {
                    for k in 0..kernel {
                        let pos = (t * stride + k) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < out_len {
                            let cur = out.get(o, pos as usize);
                            out.set(o, pos as usize, cur + xv * wrow[o * kernel + k]);
                        }
                    }
                }
            }
        }
        self.push(out, Op::ConvTranspose1d { x, w, b, kernel, stride, pad })
    }

    /// Back-propagate from a scalar output; parameter gradients are added to
    /// `acc`.
    pub fn backward_into(&self, output: Var, acc: &mut ParamGrads) -> Gradients {
        let seed = Tensor::full(self.value(output).rows(), self.value(output).cols(), 1.0);
        self.backward_seeded_into(output, seed, acc)
    }

    /// Like [`backward_into`](Self::backward_into) with an explicit upstream
    /// gradient for `output`.
    pub fn backward_seeded_into(&self, output: Var, seed: Tensor, acc: &mut ParamGrads) -> Gradients {
        assert_eq!(seed.shape(), self.value(output).shape(), "seed shape mismatch");
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads, acc);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>], acc: &mut ParamGrads) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant | Op::Input => {}
            Op::Param(id) => acc.get_mut(*id).add_assign(g),
            Op::Add(a, b) => {
                slot(grads, self, *a).add_assign(g);
                slot(grads, self, *b).add_assign(g);
            }
            Op::Sub(a, b) => {
                slot(grads, self, *a).add_assign(g);
                slot(grads, self, *b).add_scaled(g, -1.0);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).clone(), self.value(*b).clone());
                add_zip(slot(grads, self, *a), g, &tb, |g, y| g * y);
                add_zip(slot(grads, self, *b), g, &ta, |g, x| g * x);
            }
            Op::Scale(a, s) => slot(grads, self, *a).add_scaled(g, *s),
            Op::AddScalar(a) => slot(grads, self, *a).add_assign(g),
            Op::LinComb(terms) => {
                for &(v, c) in terms {
                    if c != 0.0 {
                        slot(grads, self, v).add_scaled(g, c);
                    }
                }
            }
            Op::Linear(x, w, b) => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (n, din) = tx.shape();
                let dout = tw.rows();
                // dx += g (n×out) · w (out×in)
                if self.nodes[x.0].needs_grad {
                    let gx = slot(grads, self, *x);
                    gemm(n, dout, din, 1.0, (g.data(), dout as isize, 1), (tw.data(), din as isize, 1), 1.0, gx.data_mut(), din);
                }
                // dw += gᵀ (out×n) · x (n×in)
                if self.nodes[w.0].needs_grad {
                    let gw = slot(grads, self, *w);
                    gemm(dout, n, din, 1.0, (g.data(), 1, dout as isize), (tx.data(), din as isize, 1), 1.0, gw.data_mut(), din);
                }
                if let Some(b) = b {
                    let gb = slot(grads, self, *b);
                    for r in 0..n {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::AddRow(x, row) => {
                slot(grads, self, *x).add_assign(g);
                let gr = slot(grads, self, *row);
                for r in 0..g.rows() {
                    for (o, v) in gr.data_mut().iter_mut().zip(g.row_slice(r)) {
                        *o += v;
                    }
                }
            }
            Op::MulRow(x, row) => {
                let (tx, tr) = (self.value(*x), self.value(*row));
                {
                    let gx = slot(grads, self, *x);
                    for r in 0..g.rows() {
                        for ((o, gv), w) in gx.row_slice_mut(r).iter_mut().zip(g.row_slice(r)).zip(tr.data()) {
                            *o += gv * w;
                        }
                    }
                }
                let gr = slot(grads, self, *row);
                for r in 0..g.rows() {
                    for ((o, gv), xv) in gr.data_mut().iter_mut().zip(g.row_slice(r)).zip(tx.row_slice(r)) {
                        *o += gv * xv;
                    }
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                add_zip(slot(grads, self, *a), g, y, |g, y| g * (1.0 - y * y));
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                add_zip(slot(grads, self, *a), g, y, |g, y| g * y * (1.0 - y));
            }
            Op::Softplus(a) => {
                let x = self.value(*a).clone();
                add_zip(slot(grads, self, *a), g, &x, |g, x| g * sigmoid(x));
            }
            Op::Exp(a) => {
                let y = &node.value;
                add_zip(slot(grads, self, *a), g, y, |g, y| g * y);
            }
            Op::Ln(a) => {
                let x = self.value(*a).clone();
                add_zip(slot(grads, self, *a), g, &x, |g, x| g / x);
            }
            Op::Square(a) => {
                let x = self.value(*a).clone();
                add_zip(slot(grads, self, *a), g, &x, |g, x| 2.0 * g * x);
            }
            Op::Abs(a) => {
                let x = self.value(*a).clone();
                add_zip(slot(grads, self, *a), g, &x, |g, x| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let gp = slot(grads, self, p);
                    for r in 0..g.rows() {
                        for (o, v) in gp.row_slice_mut(r).iter_mut().zip(&g.row_slice(r)[off..off + w]) {
                            *o += v;
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols(x, start) => {
                let w = g.cols();
                let gx = slot(grads, self, *x);
                for r in 0..g.rows() {
                    for (o, v) in gx.row_slice_mut(r)[*start..*start + w].iter_mut().zip(g.row_slice(r)) {
                        *o += v;
                    }
                }
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let gp = slot(grads, self, p);
                    for (o, v) in gp.data_mut().iter_mut().zip(&g.data()[off..off + n]) {
                        *o += v;
                    }
                    off += n;
                }
            }
            Op::SelectRow(x, row) => {
                let gx = slot(grads, self, *x);
                for (o, v) in gx.row_slice_mut(*row).iter_mut().zip(g.data()) {
                    *o += v;
                }
            }
            Op::KronRows(a, b) => {
                let (ta, tb) = (self.value(*a).clone(), self.value(*b).clone());
                let (p, q) = (ta.cols(), tb.cols());
                {
                    let ga = slot(grads, self, *a);
                    for r in 0..g.rows() {
                        let (gr, rb) = (g.row_slice(r), tb.row_slice(r));
                        let out = ga.row_slice_mut(r);
                        for i in 0..p {
                            out[i] += (0..q).map(|j| gr[i * q + j] * rb[j]).sum::<f64>();
                        }
                    }
                }
                let gb = slot(grads, self, *b);
                for r in 0..g.rows() {
                    let (gr, ra) = (g.row_slice(r), ta.row_slice(r));
                    let out = gb.row_slice_mut(r);
                    for (j, o) in out.iter_mut().enumerate().take(q) {
                        *o += (0..p).map(|i| gr[i * q + j] * ra[i]).sum::<f64>();
                    }
                }
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                slot(grads, self, *a).data_mut().iter_mut().for_each(|o| *o += s);
            }
            Op::Reshape(a) => {
                let ga = slot(grads, self, *a);
                for (o, v) in ga.data_mut().iter_mut().zip(g.data()) {
                    *o += v;
                }
            }
            Op::Conv1d { x, w, b, kernel, stride, pad } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (c_in, len) = tx.shape();
                let (c_out, out_len) = g.shape();
                let (kernel, stride, pad) = (*kernel, *stride, *pad);
                {
                    let gb = slot(grads, self, *b);
                    for o in 0..c_out {
                        gb.data_mut()[o] += g.row_slice(o).iter().sum::<f64>();
                    }
                }
                {
                    let gw = slot(grads, self, *w);
                    for o in 0..c_out {
                        for t in 0..out_len {
                            let gv = g.get(o, t);
                            for ci in 0..c_in {
                                for k in 0..kernel {
                                    let pos = (t * stride + k) as isize - pad as isize;
                                    if pos >= 0 && (pos as usize) < len {
                                        gw.data_mut()[o * c_in * kernel + ci * kernel + k] += gv * tx.get(ci, pos as usize);
                                    }
                                }
                            }
                        }
                    }
                }
                if !self.nodes[x.0].needs_grad {
                    return;
                }
                let gx = slot(grads, self, *x);
                for o in 0..c_out {
                    for t in 0..out_len {
                        let gv = g.get(o, t);
                        for ci in 0..c_in {
                            for k in 0..kernel {
                                let pos = (t * stride + k) as isize - pad as isize;
                                if pos >= 0 && (pos as usize) < len {
                                    let idx = ci * len + pos as usize;
                                    gx.data_mut()[idx] += gv * tw.get(o, ci * kernel + k);
                                }
                            }
                        }
                    }
                }
            }
            Op::ConvTranspose1d { x, w, b, kernel, stride, pad } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (c_in, len) = tx.shape();
                let (c_out, out_len) = g.shape();
                let (kernel, stride, pad) = (*kernel, *stride, *pad);
                {
                    let gb = slot(grads, self, *b);
                    for o in 0..c_out {
                        gb.data_mut()[o] += g.row_slice(o).iter().sum::<f64>();
                    }
                }
                {
                    let gw = slot(grads, self, *w);
                    for ci in 0..c_in {
                        for t in 0..len {
                            let xv = tx.get(ci, t);
                            for o in 0..c_out {
                                for k in 0..kernel {
                                    let pos = (t * stride + k) as isize - pad as isize;
                                    if pos >= 0 && (pos as usize) < out_len {
                                        gw.data_mut()[ci * c_out * kernel + o * kernel + k] += xv * g.get(o, pos as usize);
                                    }
                                }
                            }
                        }
                    }
                }
                let gx = slot(grads, self, *x);
                for ci in 0..c_in {
                    for t in 0..len {
                        let mut accv = 0.0;
                        for o in 0..c_out {
                            for k in 0..kernel {
                                let pos = (t * stride + k) as isize - pad as isize;
                                if pos >= 0 && (pos as usize) < out_len {
                                    accv += tw.get(ci, o * kernel + k) * g.get(o, pos as usize);
                                }
                            }
                        }
                        gx.data_mut()[ci * len + t] += accv;
                    }
                }
            }
        }
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Constant | Op::Input | Op::Param(_) => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MulRow(a, b) | Op::KronRows(a, b) => {
            vec![*a, *b]
        }
        Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Tanh(a)
        | Op::Sigmoid(a)
        | Op::Softplus(a)
        | Op::Exp(a)
        | Op::Ln(a)
        | Op::Square(a)
        | Op::Abs(a)
        | Op::SliceCols(a, _)
        | Op::SelectRow(a, _)
        | Op::Sum(a)
        | Op::Reshape(a) => vec![*a],
        Op::LinComb(terms) => terms.iter().map(|t| t.0).collect(),
        Op::Linear(x, w, b) => {
            let mut v = vec![*x, *w];
            v.extend(b);
            v
        }
        Op::ConcatCols(parts) | Op::StackRows(parts) => parts.clone(),
        Op::Conv1d { x, w, b, .. } | Op::ConvTranspose1d { x, w, b, .. } => vec![*x, *w, *b],
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], g: &Graph<'_>, v: Var) -> &'a mut Tensor {
    let t = g.value(v);
    grads[v.0].get_or_insert_with(|| Tensor::zeros(t.rows(), t.cols()))
}

fn add_zip(dst: &mut Tensor, g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) {
    for ((d, &gv), &o) in dst.data_mut().iter_mut().zip(g.data()).zip(other.data()) {
        *d += f(gv, o);
    }
}

/// Per-node gradients from one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the output with respect to `v`, `None` when `v` does not
    /// influence the output.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
