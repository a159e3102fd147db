//! Recorded computation graph with reverse-mode gradients.
//!
//! Every operation appends a node holding its value and the inputs it was
//! computed from. Nodes are appended in evaluation order, so creation order is
//! a topological order and [`Graph::backward`] walks it in reverse.

use std::cell::RefCell;
use std::sync::Arc;

use super::array::{Element, NdArray};
use super::kernels;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    MulConst(Var, Arc<NdArray<T>>),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Conv1d {
        x: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
    },
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        ids: Vec<usize>,
    },
    Scatter {
        src: Var,
        fill: Var,
        src_pos: Vec<usize>,
    },
    Lookup {
        table: Var,
        ids: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Arc<NdArray<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Single-threaded operation recorder.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::dim(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: NdArray<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Records an input array. Parameters are shared, not copied.
    pub fn leaf(&self, value: Arc<NdArray<T>>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    pub fn constant(&self, value: NdArray<T>) -> Var {
        self.leaf(Arc::new(value), false)
    }

    pub fn param(&self, value: NdArray<T>) -> Var {
        self.leaf(Arc::new(value), true)
    }

    pub fn value(&self, v: Var) -> Arc<NdArray<T>> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.data()[0]
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(av.data(), bv.data(), &mut out, m, k, n);
        Ok(self.push(NdArray::new(vec![m, n], out)?, Op::MatMul(a, b), self.needs(&[a, b])))
    }

    fn zip_same(&self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<NdArray<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        NdArray::new(av.shape().to_vec(), data)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), self.needs(&[a, b])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), self.needs(&[a, b])))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), self.needs(&[a, b])))
    }

    /// Adds a `[d]` vector to every row of `[.., d]`.
    pub fn add_row(&self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rank() != 1 || av.last_dim() != bv.len() {
            return Err(shape_err("add_row", av.shape(), bv.shape()));
        }
        let d = bv.len();
        let mut data = av.data().to_vec();
        for (i, x) in data.iter_mut().enumerate() {
            *x = *x + bv.data()[i % d];
        }
        let out = NdArray::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(a, bias), self.needs(&[a, bias])))
    }

    pub fn scale(&self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), self.needs(&[a]))
    }

    /// Elementwise product with a non-differentiable array (dropout masks).
    pub fn mul_const(&self, a: Var, c: Arc<NdArray<T>>) -> Result<Var> {
        let av = self.value(a);
        if av.shape() != c.shape() {
            return Err(shape_err("mul_const", av.shape(), c.shape()));
        }
        let data = av.data().iter().zip(c.data()).map(|(&x, &m)| x * m).collect();
        let out = NdArray::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MulConst(a, c), self.needs(&[a])))
    }

    pub fn relu(&self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push(out, Op::Relu(a), self.needs(&[a]))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, a: Var) -> Var {
        self.softmax_impl(a, false)
    }

    /// Softmax over the last axis of a `[Lq, Lk]` score matrix where row `i`
    /// may only attend to columns `j <= i`. Excluded entries are exactly zero.
    pub fn causal_softmax(&self, a: Var) -> Result<Var> {
        if self.value(a).rank() != 2 {
            return Err(Error::dim("causal_softmax expects a rank-2 score matrix"));
        }
        Ok(self.softmax_impl(a, true))
    }

    fn softmax_impl(&self, a: Var, causal: bool) -> Var {
        let av = self.value(a);
        let d = av.last_dim();
        let mut data = av.data().to_vec();
        for (r, row) in data.chunks_mut(d.max(1)).enumerate() {
            let allowed = if causal { (r + 1).min(d) } else { d };
            let max = row[..allowed].iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for x in row[..allowed].iter_mut() {
                *x = (*x - max).exp();
                total = total + *x;
            }
            for x in row[..allowed].iter_mut() {
                *x = *x / total;
            }
            for x in row[allowed..].iter_mut() {
                *x = T::zero();
            }
        }
        let out = NdArray::new(av.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Softmax(a), self.needs(&[a]))
    }

    /// Normalizes over the last axis with population variance.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.last_dim();
        if d == 0 || xv.rank() == 0 {
            return Err(Error::dim("layer_norm over an empty last axis"));
        }
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(Error::dim(format!(
                "layer_norm: gamma {:?} / beta {:?} do not match last axis {}",
                gv.shape(),
                bv.shape(),
                d
            )));
        }
        let rows = xv.rows();
        let n = T::of(d as f64);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let out = NdArray::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            self.needs(&[x, gamma, beta]),
        ))
    }

    /// 1-D cross-correlation (no kernel flip) along the time axis.
    ///
    /// `x` is `[L, C_in]`, `kernel` is `[K, C_in, C_out]`; output is
    /// `[(L + 2 pad - K) / stride + 1, C_out]`.
    pub fn conv1d(&self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xv, kv) = (self.value(x), self.value(kernel));
        let (sx, sk) = (xv.shape(), kv.shape());
        if sx.len() != 2 || sk.len() != 3 || sx[1] != sk[1] {
            return Err(shape_err("conv1d", sx, sk));
        }
        if stride == 0 {
            return Err(Error::config("conv1d stride must be at least 1"));
        }
        let out_len = conv_out_len(sx[0], sk[0], stride, pad)?;
        let out = kernels::conv1d_forward(xv.data(), kv.data(), sx[0], sk[0], sk[1], sk[2], stride, pad, out_len);
        Ok(self.push(
            NdArray::new(vec![out_len, sk[2]], out)?,
            Op::Conv1d { x, kernel, stride, pad },
            self.needs(&[x, kernel]),
        ))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(Error::dim(format!("transpose of rank-{} array", av.rank())));
        }
        let (m, n) = (av.shape()[0], av.shape()[1]);
        let out = NdArray::new(vec![n, m], kernels::transpose(av.data(), m, n))?;
        Ok(self.push(out, Op::Transpose(a), self.needs(&[a])))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let d = values
            .first()
            .ok_or_else(|| Error::dim("concat_rows of nothing"))?
            .shape()
            .get(1)
            .copied()
            .unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for v in &values {
            if v.rank() != 2 || v.shape()[1] != d {
                return Err(shape_err("concat_rows", values[0].shape(), v.shape()));
            }
            rows += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let out = NdArray::new(vec![rows, d], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), self.needs(parts)))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let rows = values
            .first()
            .ok_or_else(|| Error::dim("concat_cols of nothing"))?
            .shape()
            .first()
            .copied()
            .unwrap_or(0);
        for v in &values {
            if v.rank() != 2 || v.shape()[0] != rows {
                return Err(shape_err("concat_cols", values[0].shape(), v.shape()));
            }
        }
        let total: usize = values.iter().map(|v| v.shape()[1]).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let out = NdArray::new(vec![rows, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), self.needs(parts)))
    }

    /// Columns `[start, start + width)` of a rank-2 array.
    pub fn slice_cols(&self, x: Var, start: usize, width: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || start + width > xv.shape()[1] {
            return Err(Error::dim(format!(
                "slice_cols [{}, {}) out of bounds for {:?}",
                start,
                start + width,
                xv.shape()
            )));
        }
        let rows = xv.shape()[0];
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..start + width]);
        }
        let out = NdArray::new(vec![rows, width], data)?;
        Ok(self.push(out, Op::SliceCols { x, start }, self.needs(&[x])))
    }

    /// Rows `[start, start + count)` of a rank-2 array.
    pub fn slice_rows(&self, x: Var, start: usize, count: usize) -> Result<Var> {
        self.gather_rows(x, &(start..start + count).collect::<Vec<_>>())
    }

    pub fn gather_rows(&self, x: Var, ids: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::dim(format!("gather_rows of rank-{} array", xv.rank())));
        }
        let n = xv.shape()[0];
        let mut data = Vec::with_capacity(ids.len() * xv.shape()[1]);
        for &id in ids {
            if id >= n {
                return Err(Error::Index {
                    id,
                    size: n,
                    context: "gather_rows".into(),
                });
            }
            data.extend_from_slice(xv.row(id));
        }
        let out = NdArray::new(vec![ids.len(), xv.shape()[1]], data)?;
        Ok(self.push(out, Op::GatherRows { x, ids: ids.to_vec() }, self.needs(&[x])))
    }

    /// Builds a `[len, d]` array whose row `src_pos[k]` is row `k` of `src`
    /// and whose remaining rows are copies of the `[d]` vector `fill`.
    pub fn scatter_rows(&self, src: Var, fill: Var, src_pos: &[usize], len: usize) -> Result<Var> {
        let (sv, fv) = (self.value(src), self.value(fill));
        if sv.rank() != 2 || sv.shape()[0] != src_pos.len() {
            return Err(Error::dim(format!(
                "scatter_rows: {} positions for source {:?}",
                src_pos.len(),
                sv.shape()
            )));
        }
        let d = sv.shape()[1];
        if fv.shape() != [d] {
            return Err(shape_err("scatter_rows", sv.shape(), fv.shape()));
        }
        let mut data = Vec::with_capacity(len * d);
        for _ in 0..len {
            data.extend_from_slice(fv.data());
        }
        for (k, &pos) in src_pos.iter().enumerate() {
            if pos >= len {
                return Err(Error::Index {
                    id: pos,
                    size: len,
                    context: "scatter_rows".into(),
                });
            }
            data[pos * d..(pos + 1) * d].copy_from_slice(sv.row(k));
        }
        let out = NdArray::new(vec![len, d], data)?;
        Ok(self.push(
            out,
            Op::Scatter {
                src,
                fill,
                src_pos: src_pos.to_vec(),
            },
            self.needs(&[src, fill]),
        ))
    }

    /// Row lookup into a `[V, d]` table.
    pub fn lookup(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(Error::dim("lookup table must be rank 2"));
        }
        let (v, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    id,
                    size: v,
                    context: "embedding lookup".into(),
                });
            }
            data.extend_from_slice(tv.row(id));
        }
        let out = NdArray::new(vec![ids.len(), d], data)?;
        Ok(self.push(
            out,
            Op::Lookup {
                table,
                ids: ids.to_vec(),
            },
            self.needs(&[table]),
        ))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(NdArray::scalar(s), Op::Sum(a), self.needs(&[a]))
    }

    pub fn mean(&self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.sum() / T::of(av.len().max(1) as f64);
        self.push(NdArray::scalar(m), Op::Mean(a), self.needs(&[a]))
    }

    /// Reverse-mode sweep from a single-element output.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar output, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.value.is_finite() {
            return Err(Error::NonFinite("backward from a non-finite output".into()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            backprop_node(&nodes, node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| matches!(nodes[i].op, Op::Leaf) && nodes[i].requires_grad)
                    .map(|g| NdArray::new(nodes[i].value.shape().to_vec(), g).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }
}

pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = len + 2 * pad;
    if k == 0 || padded < k || stride == 0 {
        return Err(Error::dim(format!(
            "conv1d window {k} larger than padded input {padded} (len {len}, pad {pad}, stride {stride})"
        )));
    }
    Ok((padded - k) / stride + 1)
}

fn acc<T: Element>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
    f(slot);
}

fn backprop_node<T: Element>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let val = |v: Var| -> &NdArray<T> { &nodes[v.0].value };
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            acc(nodes, grads, *a, |ga| kernels::gemm_nt_acc(g, bv.data(), ga, m, n, k));
            acc(nodes, grads, *b, |gb| kernels::gemm_tn_acc(av.data(), g, gb, m, k, n));
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                acc(nodes, grads, *v, |s| {
                    s.iter_mut().zip(g).for_each(|(x, &d)| *x = *x + d)
                });
            }
        }
        Op::Sub(a, b) => {
            acc(nodes, grads, *a, |s| {
                s.iter_mut().zip(g).for_each(|(x, &d)| *x = *x + d)
            });
            acc(nodes, grads, *b, |s| {
                s.iter_mut().zip(g).for_each(|(x, &d)| *x = *x - d)
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            acc(nodes, grads, *a, |s| {
                for i in 0..s.len() {
                    s[i] = s[i] + g[i] * bv.data()[i];
                }
            });
            acc(nodes, grads, *b, |s| {
                for i in 0..s.len() {
                    s[i] = s[i] + g[i] * av.data()[i];
                }
            });
        }
        Op::AddRow(a, bias) => {
            acc(nodes, grads, *a, |s| {
                s.iter_mut().zip(g).for_each(|(x, &d)| *x = *x + d)
            });
            acc(nodes, grads, *bias, |s| {
                let d = s.len();
                for (i, &gi) in g.iter().enumerate() {
                    s[i % d] = s[i % d] + gi;
                }
            });
        }
        Op::Scale(a, c) => {
            acc(nodes, grads, *a, |s| {
                s.iter_mut().zip(g).for_each(|(x, &d)| *x = *x + d * *c)
            });
        }
        Op::MulConst(a, m) => {
            acc(nodes, grads, *a, |s| {
                for i in 0..s.len() {
                    s[i] = s[i] + g[i] * m.data()[i];
                }
            });
        }
        Op::Relu(a) => {
            let av = val(*a);
            acc(nodes, grads, *a, |s| {
                for i in 0..s.len() {
                    if av.data()[i] > T::zero() {
                        s[i] = s[i] + g[i];
                    }
                }
            });
        }
        Op::Softmax(a) => {
            let y = &node.value;
            let d = y.last_dim();
            acc(nodes, grads, *a, |s| {
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &g[r * d..(r + 1) * d];
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for j in 0..d {
                        s[r * d + j] = s[r * d + j] + yr[j] * (gr[j] - dot);
                    }
                }
            });
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let gv = val(*gamma);
            let d = gv.len();
            let rows = rstd.len();
            acc(nodes, grads, *gamma, |s| {
                for r in 0..rows {
                    for j in 0..d {
                        s[j] = s[j] + g[r * d + j] * xhat[r * d + j];
                    }
                }
            });
            acc(nodes, grads, *beta, |s| {
                for r in 0..rows {
                    for j in 0..d {
                        s[j] = s[j] + g[r * d + j];
                    }
                }
            });
            acc(nodes, grads, *x, |s| {
                let n = T::of(d as f64);
                for r in 0..rows {
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..d {
                        let dh = g[r * d + j] * gv.data()[j];
                        mean_dh = mean_dh + dh;
                        mean_dh_h = mean_dh_h + dh * xhat[r * d + j];
                    }
                    mean_dh = mean_dh / n;
                    mean_dh_h = mean_dh_h / n;
                    for j in 0..d {
                        let dh = g[r * d + j] * gv.data()[j];
                        let i = r * d + j;
                        s[i] = s[i] + rstd[r] * (dh - mean_dh - xhat[i] * mean_dh_h);
                    }
                }
            });
        }
        Op::Conv1d { x, kernel, stride, pad } => {
            let (xv, kv) = (val(*x), val(*kernel));
            let (len, k, cin, cout) = (xv.shape()[0], kv.shape()[0], kv.shape()[1], kv.shape()[2]);
            let out_len = node.value.shape()[0];
            acc(nodes, grads, *x, |s| {
                kernels::conv1d_grad_input(g, kv.data(), s, len, k, cin, cout, *stride, *pad, out_len)
            });
            acc(nodes, grads, *kernel, |s| {
                kernels::conv1d_grad_kernel(g, xv.data(), s, len, k, cin, cout, *stride, *pad, out_len)
            });
        }
        Op::Transpose(a) => {
            let out_shape = node.value.shape();
            let t = kernels::transpose(g, out_shape[0], out_shape[1]);
            acc(nodes, grads, *a, |s| {
                s.iter_mut().zip(&t).for_each(|(x, &d)| *x = *x + d)
            });
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let n = val(*p).len();
                let chunk = &g[offset..offset + n];
                acc(nodes, grads, *p, |s| {
                    s.iter_mut().zip(chunk).for_each(|(x, &d)| *x = *x + d)
                });
                offset += n;
            }
        }
        Op::ConcatCols(parts) => {
            let total = node.value.shape()[1];
            let mut col = 0;
            for p in parts {
                let pv = val(*p);
                let (rows, w) = (pv.shape()[0], pv.shape()[1]);
                acc(nodes, grads, *p, |s| {
                    for r in 0..rows {
                        for j in 0..w {
                            s[r * w + j] = s[r * w + j] + g[r * total + col + j];
                        }
                    }
                });
                col += w;
            }
        }
        Op::SliceCols { x, start } => {
            let full = val(*x).shape()[1];
            let (rows, w) = (node.value.shape()[0], node.value.shape()[1]);
            acc(nodes, grads, *x, |s| {
                for r in 0..rows {
                    for j in 0..w {
                        let i = r * full + start + j;
                        s[i] = s[i] + g[r * w + j];
                    }
                }
            });
        }
        Op::GatherRows { x: src, ids } | Op::Lookup { table: src, ids } => {
            let d = val(*src).last_dim();
            acc(nodes, grads, *src, |s| {
                for (k, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        s[id * d + j] = s[id * d + j] + g[k * d + j];
                    }
                }
            });
        }
        Op::Scatter { src, fill, src_pos } => {
            let d = val(*fill).len();
            let len = node.value.shape()[0];
            let mut from_src = vec![usize::MAX; len];
            for (k, &p) in src_pos.iter().enumerate() {
                from_src[p] = k;
            }
            acc(nodes, grads, *src, |s| {
                for (k, &p) in src_pos.iter().enumerate() {
                    for j in 0..d {
                        s[k * d + j] = s[k * d + j] + g[p * d + j];
                    }
                }
            });
            acc(nodes, grads, *fill, |s| {
                for (r, &k) in from_src.iter().enumerate() {
                    if k == usize::MAX {
                        for j in 0..d {
                            s[j] = s[j] + g[r * d + j];
                        }
                    }
                }
            });
        }
        Op::Sum(a) => {
            acc(nodes, grads, *a, |s| s.iter_mut().for_each(|x| *x = *x + g[0]));
        }
        Op::Mean(a) => {
            let n = T::of(val(*a).len().max(1) as f64);
            acc(nodes, grads, *a, |s| s.iter_mut().for_each(|x| *x = *x + g[0] / n));
        }
    }
}

/// Gradients of leaf nodes that require them.
pub struct Gradients<T> {
    grads: Vec<Option<NdArray<T>>>,
}

impl<T: Element> Gradients<T> {
    /// `None` when `v` is not a differentiable leaf or the output does not
    /// depend on it.
    pub fn get(&self, v: Var) -> Option<&NdArray<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<NdArray<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
