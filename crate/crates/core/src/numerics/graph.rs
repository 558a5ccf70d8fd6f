//! Reverse-mode automatic differentiation over an eager tape.
//!
//! Every operation computes its value immediately and records enough
//! information to propagate gradients. Node ids are assigned in creation
//! order, so a single reverse sweep over the tape is a valid topological
//! order.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use super::tensor::{matmul, matmul_ta, matmul_tb};
use super::{real, Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    Add(Var, Var),
    /// `[r,c] + [c]`, the vector added to every row.
    AddRow(Var, Var),
    Mul(Var, Var),
    /// Elementwise product with a constant mask (dropout).
    MulMask(Var, Rc<Vec<F>>),
    Scale(Var, F),
    /// `[m,k] · [k,n]`.
    MatMul(Var, Var),
    /// `[m,k] · [n,k]ᵀ`.
    MatMulTB(Var, Var),
    /// Repeats a length-`c` vector as `n` rows.
    BroadcastRow(Var, usize),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    ConcatCols(Vec<Var>),
    /// `table[ids[t], :]` for each `t`.
    GatherRows(Var, Rc<Vec<usize>>),
    /// `out[r][j] = src[r][idx[r * cols + j]]`.
    GatherPerRow(Var, Rc<Vec<usize>>, usize),
    /// `out[r] = src[r][idx[r]]`.
    PickPerRow(Var, Rc<Vec<usize>>),
    /// Row softmax; entries masked at construction are exactly zero in the
    /// output, which is all the backward pass needs.
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    Relu(Var),
    Log(Var),
    Exp(Var),
    Sum(Var),
}

enum Aux<F> {
    None,
    /// Per-row statistics saved by layer norm for its backward pass.
    LayerNorm { xhat: Vec<F>, rstd: Vec<F> },
}

struct Node<F> {
    shape: Vec<usize>,
    value: Vec<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to `requires_grad` leaves.
pub struct GradMap<F> {
    grads: HashMap<usize, Tensor<F>>,
}

impl<F: Scalar> GradMap<F> {
    /// Gradient for `v`, or `None` if `v` was not reached from the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(&v.0)
    }
}

/// An eager computation tape.
pub struct Graph<F> {
    nodes: RefCell<Vec<Node<F>>>,
    aux: RefCell<Vec<Aux<F>>>,
}

const LAYER_NORM_EPS: f64 = 1e-5;

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            aux: RefCell::new(Vec::new()),
        }
    }

    fn push(&self, shape: Vec<usize>, value: Vec<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.push_aux(shape, value, op, needs_grad, Aux::None)
    }

    fn push_aux(
        &self,
        shape: Vec<usize>,
        value: Vec<F>,
        op: Op<F>,
        needs_grad: bool,
        aux: Aux<F>,
    ) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        self.aux.borrow_mut().push(aux);
        Var(nodes.len() - 1)
    }

    /// Inserts a tensor as a leaf node.
    pub fn leaf(&self, t: Tensor<F>, requires_grad: bool) -> Var {
        let shape = t.shape().to_vec();
        let data = t.data().to_vec();
        self.push(shape, data, Op::Leaf, requires_grad)
    }

    /// Inserts a tensor that never receives gradients.
    pub fn constant(&self, t: Tensor<F>) -> Var {
        self.leaf(t, false)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].shape.clone()
    }

    /// Borrow of a node's value as a slice.
    pub fn value(&self, v: Var) -> Ref<'_, [F]> {
        Ref::map(self.nodes.borrow(), |nodes| &nodes[v.0].value[..])
    }

    /// Clones a node's value out as a tensor.
    pub fn tensor(&self, v: Var) -> Tensor<F> {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node invariant")
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (shape, value, needs) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            assert_eq!(na.shape, nb.shape, "add: shape mismatch");
            let value = na
                .value
                .iter()
                .zip(&nb.value)
                .map(|(&x, &y)| x + y)
                .collect();
            (na.shape.clone(), value, na.needs_grad || nb.needs_grad)
        };
        self.push(shape, value, Op::Add(a, b), needs)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let neg = self.scale(b, -F::one());
        self.add(a, neg)
    }

    /// Adds a length-`c` vector to every row of a `[r,c]` tensor.
    pub fn add_row(&self, a: Var, b: Var) -> Var {
        let (shape, value, needs) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            let c = *na.shape.last().unwrap();
            assert_eq!(nb.value.len(), c, "add_row: row width mismatch");
            let mut value = na.value.clone();
            for row in value.chunks_mut(c) {
                for (x, &y) in row.iter_mut().zip(&nb.value) {
                    *x += y;
                }
            }
            (na.shape.clone(), value, na.needs_grad || nb.needs_grad)
        };
        self.push(shape, value, Op::AddRow(a, b), needs)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (shape, value, needs) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            assert_eq!(na.shape, nb.shape, "mul: shape mismatch");
            let value = na
                .value
                .iter()
                .zip(&nb.value)
                .map(|(&x, &y)| x * y)
                .collect();
            (na.shape.clone(), value, na.needs_grad || nb.needs_grad)
        };
        self.push(shape, value, Op::Mul(a, b), needs)
    }

    /// Elementwise product with a constant mask; no gradient flows to the
    /// mask. Used for dropout.
    pub fn mul_mask(&self, a: Var, mask: Rc<Vec<F>>) -> Var {
        let (shape, value, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            assert_eq!(na.value.len(), mask.len(), "mul_mask: length mismatch");
            let value = na.value.iter().zip(&*mask).map(|(&x, &m)| x * m).collect();
            (na.shape.clone(), value, na.needs_grad)
        };
        self.push(shape, value, Op::MulMask(a, mask), needs)
    }

    pub fn scale(&self, a: Var, s: F) -> Var {
        let (shape, value, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            let value = na.value.iter().map(|&x| x * s).collect();
            (na.shape.clone(), value, na.needs_grad)
        };
        self.push(shape, value, Op::Scale(a, s), needs)
    }

    /// `[m,k] · [k,n] -> [m,n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (m, n, value, needs) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            let (m, ka) = dims2(&na.shape);
            let (kb, n) = dims2(&nb.shape);
            assert_eq!(ka, kb, "matmul: inner dimension mismatch");
            let value = matmul(&na.value, &nb.value, m, ka, n);
            (m, n, value, na.needs_grad || nb.needs_grad)
        };
        self.push(vec![m, n], value, Op::MatMul(a, b), needs)
    }

    /// `[m,k] · [n,k]ᵀ -> [m,n]`.
    pub fn matmul_tb(&self, a: Var, b: Var) -> Var {
        let (m, n, value, needs) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            let (m, ka) = dims2(&na.shape);
            let (n, kb) = dims2(&nb.shape);
            assert_eq!(ka, kb, "matmul_tb: inner dimension mismatch");
            let value = matmul_tb(&na.value, &nb.value, m, ka, n);
            (m, n, value, na.needs_grad || nb.needs_grad)
        };
        self.push(vec![m, n], value, Op::MatMulTB(a, b), needs)
    }

    /// Repeats a vector as `n` identical rows.
    pub fn broadcast_row(&self, v: Var, n: usize) -> Var {
        let (c, value, needs) = {
            let nodes = self.nodes.borrow();
            let nv = &nodes[v.0];
            let c = nv.value.len();
            let mut value = Vec::with_capacity(n * c);
            for _ in 0..n {
                value.extend_from_slice(&nv.value);
            }
            (c, value, nv.needs_grad)
        };
        self.push(vec![n, c], value, Op::BroadcastRow(v, n), needs)
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        let (shape, value, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            let c = *na.shape.last().unwrap();
            assert!(start + len <= c, "slice_cols: out of range");
            let rows = na.value.len() / c;
            let mut value = Vec::with_capacity(rows * len);
            for r in 0..rows {
                value.extend_from_slice(&na.value[r * c + start..r * c + start + len]);
            }
            let mut shape = na.shape.clone();
            *shape.last_mut().unwrap() = len;
            (shape, value, na.needs_grad)
        };
        self.push(shape, value, Op::SliceCols(a, start, len), needs)
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Var {
        let (shape, value, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            let (r, c) = dims2(&na.shape);
            assert!(start + len <= r, "slice_rows: out of range");
            let value = na.value[start * c..(start + len) * c].to_vec();
            (vec![len, c], value, na.needs_grad)
        };
        self.push(shape, value, Op::SliceRows(a, start, len), needs)
    }

    /// Concatenates tensors with equal row counts along columns.
    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: empty input");
        let (rows, total, value, needs) = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].0].value.len() / *nodes[parts[0].0].shape.last().unwrap();
            let widths: Vec<usize> = parts
                .iter()
                .map(|p| *nodes[p.0].shape.last().unwrap())
                .collect();
            let total: usize = widths.iter().sum();
            let mut value = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (p, &w) in parts.iter().zip(&widths) {
                    let v = &nodes[p.0].value;
                    value.extend_from_slice(&v[r * w..(r + 1) * w]);
                }
            }
            let needs = parts.iter().any(|p| nodes[p.0].needs_grad);
            (rows, total, value, needs)
        };
        self.push(
            vec![rows, total],
            value,
            Op::ConcatCols(parts.to_vec()),
            needs,
        )
    }

    /// Embedding lookup: `out[t, :] = table[ids[t], :]`.
    pub fn gather_rows(&self, table: Var, ids: Rc<Vec<usize>>) -> Var {
        let (d, value, needs) = {
            let nodes = self.nodes.borrow();
            let nt = &nodes[table.0];
            let (v, d) = dims2(&nt.shape);
            let mut value = Vec::with_capacity(ids.len() * d);
            for &id in ids.iter() {
                assert!(id < v, "gather_rows: id out of range");
                value.extend_from_slice(&nt.value[id * d..(id + 1) * d]);
            }
            (d, value, nt.needs_grad)
        };
        self.push(
            vec![ids.len(), d],
            value,
            Op::GatherRows(table, ids),
            needs,
        )
    }

    /// Per-row column gather: `out[r][j] = src[r][idx[r * cols + j]]`.
    pub fn gather_per_row(&self, src: Var, idx: Rc<Vec<usize>>, cols: usize) -> Var {
        let (rows, value, needs) = {
            let nodes = self.nodes.borrow();
            let ns = &nodes[src.0];
            let (rows, width) = dims2(&ns.shape);
            assert_eq!(idx.len(), rows * cols, "gather_per_row: index length");
            let mut value = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let row = &ns.value[r * width..(r + 1) * width];
                for j in 0..cols {
                    value.push(row[idx[r * cols + j]]);
                }
            }
            (rows, value, ns.needs_grad)
        };
        self.push(
            vec![rows, cols],
            value,
            Op::GatherPerRow(src, idx, cols),
            needs,
        )
    }

    /// `out[r] = src[r][idx[r]]`; the usual "pick the target logit" step.
    pub fn pick_per_row(&self, src: Var, idx: Rc<Vec<usize>>) -> Var {
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let ns = &nodes[src.0];
            let (rows, width) = dims2(&ns.shape);
            assert_eq!(idx.len(), rows, "pick_per_row: index length");
            let value = idx
                .iter()
                .enumerate()
                .map(|(r, &j)| {
                    assert!(j < width, "pick_per_row: index out of range");
                    ns.value[r * width + j]
                })
                .collect();
            (value, ns.needs_grad)
        };
        self.push(vec![idx.len()], value, Op::PickPerRow(src, idx), needs)
    }

    /// Row-wise softmax. With a mask, illegal entries are exactly zero and
    /// a fully-masked row yields all zeros.
    pub fn softmax_rows(&self, a: Var, mask: Option<Rc<Vec<bool>>>) -> Var {
        let (shape, value, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            let c = *na.shape.last().unwrap();
            if let Some(m) = &mask {
                assert_eq!(m.len(), na.value.len(), "softmax_rows: mask length");
            }
            let rows = na.value.len() / c;
            let mut value = vec![F::zero(); na.value.len()];
            for r in 0..rows {
                let x = &na.value[r * c..(r + 1) * c];
                let out = &mut value[r * c..(r + 1) * c];
                let legal = |j: usize| mask.as_ref().map_or(true, |m| m[r * c + j]);
                let mut mx = F::neg_infinity();
                for j in 0..c {
                    if legal(j) && x[j] > mx {
                        mx = x[j];
                    }
                }
                if mx == F::neg_infinity() {
                    continue; // fully masked row stays zero
                }
                let mut sum = F::zero();
                for j in 0..c {
                    if legal(j) {
                        let e = (x[j] - mx).exp();
                        out[j] = e;
                        sum += e;
                    }
                }
                for v in out.iter_mut() {
                    *v /= sum;
                }
            }
            (na.shape.clone(), value, na.needs_grad)
        };
        self.push(shape, value, Op::SoftmaxRows(a), needs)
    }

    /// Row-wise log-softmax (always fully legal).
    pub fn log_softmax_rows(&self, a: Var) -> Var {
        let (shape, value, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            let c = *na.shape.last().unwrap();
            let rows = na.value.len() / c;
            let mut value = Vec::with_capacity(na.value.len());
            for r in 0..rows {
                let x = &na.value[r * c..(r + 1) * c];
                let mx = x.iter().cloned().fold(F::neg_infinity(), F::max);
                let lse = mx + x.iter().map(|&v| (v - mx).exp()).sum::<F>().ln();
                value.extend(x.iter().map(|&v| v - lse));
            }
            (na.shape.clone(), value, na.needs_grad)
        };
        self.push(shape, value, Op::LogSoftmaxRows(a), needs)
    }

    /// Per-row layer normalization with learned scale and shift.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var) -> Var {
        let eps = real::<F>(LAYER_NORM_EPS);
        let (shape, value, xhat, rstd, needs) = {
            let nodes = self.nodes.borrow();
            let (nx, ng, nb) = (&nodes[x.0], &nodes[gamma.0], &nodes[beta.0]);
            let c = *nx.shape.last().unwrap();
            assert_eq!(ng.value.len(), c, "layer_norm: gamma width");
            assert_eq!(nb.value.len(), c, "layer_norm: beta width");
            let rows = nx.value.len() / c;
            let mut value = Vec::with_capacity(nx.value.len());
            let mut xhat = Vec::with_capacity(nx.value.len());
            let mut rstd = Vec::with_capacity(rows);
            let inv_c = F::one() / real::<F>(c as f64);
            for r in 0..rows {
                let row = &nx.value[r * c..(r + 1) * c];
                let mean = row.iter().cloned().sum::<F>() * inv_c;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_c;
                let rs = F::one() / (var + eps).sqrt();
                rstd.push(rs);
                for (j, &v) in row.iter().enumerate() {
                    let xh = (v - mean) * rs;
                    xhat.push(xh);
                    value.push(xh * ng.value[j] + nb.value[j]);
                }
            }
            let needs = nx.needs_grad || ng.needs_grad || nb.needs_grad;
            (nx.shape.clone(), value, xhat, rstd, needs)
        };
        self.push_aux(
            shape,
            value,
            Op::LayerNorm { x, gamma, beta },
            needs,
            Aux::LayerNorm { xhat, rstd },
        )
    }

    pub fn relu(&self, a: Var) -> Var {
        let (shape, value, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            let value = na.value.iter().map(|&x| x.max(F::zero())).collect();
            (na.shape.clone(), value, na.needs_grad)
        };
        self.push(shape, value, Op::Relu(a), needs)
    }

    pub fn log(&self, a: Var) -> Var {
        let (shape, value, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            let value = na.value.iter().map(|&x| x.ln()).collect();
            (na.shape.clone(), value, na.needs_grad)
        };
        self.push(shape, value, Op::Log(a), needs)
    }

    pub fn exp(&self, a: Var) -> Var {
        let (shape, value, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            let value = na.value.iter().map(|&x| x.exp()).collect();
            (na.shape.clone(), value, na.needs_grad)
        };
        self.push(shape, value, Op::Exp(a), needs)
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&self, a: Var) -> Var {
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            (na.value.iter().cloned().sum::<F>(), na.needs_grad)
        };
        self.push(vec![1], vec![value], Op::Sum(a), needs)
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.nodes.borrow()[a.0].value.len();
        let s = self.sum(a);
        self.scale(s, F::one() / real::<F>(n as f64))
    }

    /// Backpropagates from a scalar loss and returns gradients for every
    /// `requires_grad` leaf reached from it.
    pub fn backward(&self, loss: Var) -> Result<GradMap<F>> {
        let nodes = self.nodes.borrow();
        let aux = self.aux.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);

        for id in (0..=loss.0).rev() {
            if !nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g); // keep for the result map
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, &nodes, *a, |ga| add_into(ga, &g));
                    accumulate(&mut grads, &nodes, *b, |gb| add_into(gb, &g));
                }
                Op::AddRow(a, b) => {
                    accumulate(&mut grads, &nodes, *a, |ga| add_into(ga, &g));
                    let c = nodes[b.0].value.len();
                    accumulate(&mut grads, &nodes, *b, |gb| {
                        for row in g.chunks(c) {
                            for (x, &y) in gb.iter_mut().zip(row) {
                                *x += y;
                            }
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for ((x, &gy), &y) in ga.iter_mut().zip(&g).zip(vb) {
                            *x += gy * y;
                        }
                    });
                    accumulate(&mut grads, &nodes, *b, |gb| {
                        for ((x, &gy), &y) in gb.iter_mut().zip(&g).zip(va) {
                            *x += gy * y;
                        }
                    });
                }
                Op::MulMask(a, mask) => {
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for ((x, &gy), &m) in ga.iter_mut().zip(&g).zip(&**mask) {
                            *x += gy * m;
                        }
                    });
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for (x, &gy) in ga.iter_mut().zip(&g) {
                            *x += gy * s;
                        }
                    });
                }
                Op::MatMul(a, b) => {
                    let (m, k) = dims2(&nodes[a.0].shape);
                    let n = *nodes[b.0].shape.last().unwrap();
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes[a.0].needs_grad {
                        let da = matmul_tb(&g, vb, m, n, k);
                        accumulate(&mut grads, &nodes, *a, |ga| add_into(ga, &da));
                    }
                    if nodes[b.0].needs_grad {
                        let db = matmul_ta(va, &g, k, m, n);
                        accumulate(&mut grads, &nodes, *b, |gb| add_into(gb, &db));
                    }
                }
                Op::MatMulTB(a, b) => {
                    let (m, k) = dims2(&nodes[a.0].shape);
                    let n = nodes[b.0].value.len() / k;
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes[a.0].needs_grad {
                        let da = matmul(&g, vb, m, n, k);
                        accumulate(&mut grads, &nodes, *a, |ga| add_into(ga, &da));
                    }
                    if nodes[b.0].needs_grad {
                        let db = matmul_ta(&g, va, n, m, k);
                        accumulate(&mut grads, &nodes, *b, |gb| add_into(gb, &db));
                    }
                }
                Op::BroadcastRow(v, n) => {
                    let c = nodes[v.0].value.len();
                    accumulate(&mut grads, &nodes, *v, |gv| {
                        for r in 0..*n {
                            for (x, &gy) in gv.iter_mut().zip(&g[r * c..(r + 1) * c]) {
                                *x += gy;
                            }
                        }
                    });
                }
                Op::SliceCols(a, start, len) => {
                    let c = *nodes[a.0].shape.last().unwrap();
                    let rows = nodes[a.0].value.len() / c;
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for r in 0..rows {
                            for j in 0..*len {
                                ga[r * c + start + j] += g[r * len + j];
                            }
                        }
                    });
                }
                Op::SliceRows(a, start, len) => {
                    let c = *nodes[a.0].shape.last().unwrap();
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for (x, &gy) in ga[start * c..(start + len) * c].iter_mut().zip(&g) {
                            *x += gy;
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let widths: Vec<usize> = parts
                        .iter()
                        .map(|p| *nodes[p.0].shape.last().unwrap())
                        .collect();
                    let total: usize = widths.iter().sum();
                    let rows = node.value.len() / total;
                    let mut offset = 0;
                    for (p, &w) in parts.iter().zip(&widths) {
                        let off = offset;
                        accumulate(&mut grads, &nodes, *p, |gp| {
                            for r in 0..rows {
                                for j in 0..w {
                                    gp[r * w + j] += g[r * total + off + j];
                                }
                            }
                        });
                        offset += w;
                    }
                }
                Op::GatherRows(table, ids) => {
                    let d = *nodes[table.0].shape.last().unwrap();
                    accumulate(&mut grads, &nodes, *table, |gt| {
                        for (t, &id) in ids.iter().enumerate() {
                            for j in 0..d {
                                gt[id * d + j] += g[t * d + j];
                            }
                        }
                    });
                }
                Op::GatherPerRow(src, idx, cols) => {
                    let width = *nodes[src.0].shape.last().unwrap();
                    let rows = nodes[src.0].value.len() / width;
                    accumulate(&mut grads, &nodes, *src, |gs| {
                        for r in 0..rows {
                            for j in 0..*cols {
                                gs[r * width + idx[r * cols + j]] += g[r * cols + j];
                            }
                        }
                    });
                }
                Op::PickPerRow(src, idx) => {
                    let width = *nodes[src.0].shape.last().unwrap();
                    accumulate(&mut grads, &nodes, *src, |gs| {
                        for (r, &j) in idx.iter().enumerate() {
                            gs[r * width + j] += g[r];
                        }
                    });
                }
                Op::SoftmaxRows(a) => {
                    let c = *node.shape.last().unwrap();
                    let s = &node.value;
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for r in 0..s.len() / c {
                            let srow = &s[r * c..(r + 1) * c];
                            let grow = &g[r * c..(r + 1) * c];
                            let dot: F = srow.iter().zip(grow).map(|(&x, &y)| x * y).sum();
                            for (x, (&sv, &gv)) in ga[r * c..(r + 1) * c]
                                .iter_mut()
                                .zip(srow.iter().zip(grow))
                            {
                                *x += sv * (gv - dot);
                            }
                        }
                    });
                }
                Op::LogSoftmaxRows(a) => {
                    let c = *node.shape.last().unwrap();
                    let out = &node.value;
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for r in 0..out.len() / c {
                            let orow = &out[r * c..(r + 1) * c];
                            let grow = &g[r * c..(r + 1) * c];
                            let gsum: F = grow.iter().cloned().sum();
                            for (x, (&ov, &gv)) in ga[r * c..(r + 1) * c]
                                .iter_mut()
                                .zip(orow.iter().zip(grow))
                            {
                                *x += gv - ov.exp() * gsum;
                            }
                        }
                    });
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let Aux::LayerNorm { xhat, rstd } = &aux[id] else {
                        unreachable!("layer norm aux missing");
                    };
                    let c = *node.shape.last().unwrap();
                    let rows = node.value.len() / c;
                    let vgamma = &nodes[gamma.0].value;
                    let inv_c = F::one() / real::<F>(c as f64);
                    if nodes[x.0].needs_grad {
                        let mut dx = vec![F::zero(); rows * c];
                        for r in 0..rows {
                            let gxh: Vec<F> = (0..c)
                                .map(|j| g[r * c + j] * vgamma[j])
                                .collect();
                            let xh = &xhat[r * c..(r + 1) * c];
                            let mean_g: F = gxh.iter().cloned().sum::<F>() * inv_c;
                            let mean_gx: F =
                                gxh.iter().zip(xh).map(|(&a, &b)| a * b).sum::<F>() * inv_c;
                            for j in 0..c {
                                dx[r * c + j] = rstd[r] * (gxh[j] - mean_g - xh[j] * mean_gx);
                            }
                        }
                        accumulate(&mut grads, &nodes, *x, |gx| add_into(gx, &dx));
                    }
                    accumulate(&mut grads, &nodes, *gamma, |gg| {
                        for r in 0..rows {
                            for j in 0..c {
                                gg[j] += g[r * c + j] * xhat[r * c + j];
                            }
                        }
                    });
                    accumulate(&mut grads, &nodes, *beta, |gb| {
                        for r in 0..rows {
                            for j in 0..c {
                                gb[j] += g[r * c + j];
                            }
                        }
                    });
                }
                Op::Relu(a) => {
                    let vx = &nodes[a.0].value;
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for ((x, &gy), &v) in ga.iter_mut().zip(&g).zip(vx) {
                            if v > F::zero() {
                                *x += gy;
                            }
                        }
                    });
                }
                Op::Log(a) => {
                    let vx = &nodes[a.0].value;
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for ((x, &gy), &v) in ga.iter_mut().zip(&g).zip(vx) {
                            *x += gy / v;
                        }
                    });
                }
                Op::Exp(a) => {
                    let out = &node.value;
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for ((x, &gy), &o) in ga.iter_mut().zip(&g).zip(out) {
                            *x += gy * o;
                        }
                    });
                }
                Op::Sum(a) => {
                    let gy = g[0];
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for x in ga.iter_mut() {
                            *x += gy;
                        }
                    });
                }
            }
        }

        let mut out = HashMap::new();
        for (id, slot) in grads.into_iter().enumerate() {
            if let Some(gv) = slot {
                let node = &nodes[id];
                if matches!(node.op, Op::Leaf) && node.needs_grad {
                    out.insert(
                        id,
                        Tensor::new(node.shape.clone(), gv).expect("grad shape"),
                    );
                }
            }
        }
        Ok(GradMap { grads: out })
    }
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Graph::new()
    }
}

/// Interprets a rank-1/2 shape as `(rows, cols)`.
fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => unreachable!("tensors are rank 1 or 2"),
    }
}

fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (x, &y) in dst.iter_mut().zip(src) {
        *x += y;
    }
}

/// Applies `f` to the gradient buffer of `v`, allocating it on first touch.
/// Nodes that do not need gradients are skipped entirely.
fn accumulate<F: Scalar>(
    grads: &mut [Option<Vec<F>>],
    nodes: &[Node<F>],
    v: Var,
    f: impl FnOnce(&mut Vec<F>),
) {
    if !nodes[v.0].needs_grad {
        return;
    }
    let slot = &mut grads[v.0];
    if slot.is_none() {
        *slot = Some(vec![F::zero(); nodes[v.0].value.len()]);
    }
    f(slot.as_mut().unwrap());
}
