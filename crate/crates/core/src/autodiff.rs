//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records primitive ops in execution order, so every node's inputs
//! precede it and the tape is acyclic by construction. Parameters are borrowed
//! from their store for the lifetime of the graph rather than copied.

use std::borrow::Cow;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{self, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { lhs: Var, rhs: Var, transpose_rhs: bool },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softmax { input: Var },
    LogSoftmax(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    Gather { table: Var, rows: Vec<usize> },
}

struct Node<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    op: Op,
    tracked: bool,
}

pub struct Graph<'p, T: Scalar = f32> {
    nodes: Vec<Node<'p, T>>,
    params: Vec<(String, Var)>,
    by_name: HashMap<String, Var>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, tracked: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite value produced by {:?}",
                op_name(&op)
            )));
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            tracked,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            tracked: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a named parameter. Repeated calls with the same name return
    /// the same leaf.
    pub fn param(&mut self, name: &str, value: &'p Tensor<T>) -> Var {
        if let Some(&v) = self.by_name.get(name) {
            return v;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            tracked: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.push((name.to_string(), v));
        self.by_name.insert(name.to_string(), v);
        v
    }

    /// Names of the parameters that took part in this graph.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn matmul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.matmul_ext(lhs, rhs, false)
    }

    /// `lhs · rhsᵀ`.
    pub fn matmul_t(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.matmul_ext(lhs, rhs, true)
    }

    fn matmul_ext(&mut self, lhs: Var, rhs: Var, transpose_rhs: bool) -> Result<Var> {
        let out = self.value(lhs).matmul_ext(self.value(rhs), transpose_rhs)?;
        let tracked = self.tracked(lhs) || self.tracked(rhs);
        self.push(out, Op::MatMul { lhs, rhs, transpose_rhs }, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).broadcast_with(self.value(b), |x, y| x + y)?;
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(out, Op::Add(a, b), tracked)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).broadcast_with(self.value(b), |x, y| x * y)?;
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(out, Op::Mul(a, b), tracked)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let k = T::from_f64(s);
        let out = self.value(a).map(|x| x * k);
        let tracked = self.tracked(a);
        self.push(out, Op::Scale(a, s), tracked)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(T::tanh);
        let tracked = self.tracked(a);
        self.push(out, Op::Tanh(a), tracked)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(tensor::sigmoid);
        let tracked = self.tracked(a);
        self.push(out, Op::Sigmoid(a), tracked)
    }

    pub fn softmax_rows(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let out = tensor::softmax_rows(self.value(a), mask.as_deref())?;
        let tracked = self.tracked(a);
        self.push(out, Op::Softmax { input: a }, tracked)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = tensor::log_softmax_rows(self.value(a))?;
        let tracked = self.tracked(a);
        self.push(out, Op::LogSoftmax(a), tracked)
    }

    /// Concatenates matrices along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of zero tensors".into()));
        }
        let dims = parts
            .iter()
            .map(|&p| self.value(p).dims2())
            .collect::<Result<Vec<_>>>()?;
        let out = match axis {
            0 => {
                let c = dims[0].1;
                if dims.iter().any(|d| d.1 != c) {
                    return Err(Error::Dimension(format!("row concat with column counts {dims:?}")));
                }
                let r: usize = dims.iter().map(|d| d.0).sum();
                let mut data = Vec::with_capacity(r * c);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::new(vec![r, c], data)?
            }
            1 => {
                let r = dims[0].0;
                if dims.iter().any(|d| d.0 != r) {
                    return Err(Error::Dimension(format!("column concat with row counts {dims:?}")));
                }
                let c: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(r * c);
                for i in 0..r {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(i));
                    }
                }
                Tensor::new(vec![r, c], data)?
            }
            _ => return Err(Error::Dimension(format!("concat axis {axis}"))),
        };
        let tracked = parts.iter().any(|&p| self.tracked(p));
        self.push(out, Op::Concat { parts: parts.to_vec(), axis }, tracked)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Sum(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Dimension("mean of an empty tensor".into()));
        }
        let s: T = t.data().iter().copied().sum::<T>() / T::from_f64(t.len() as f64);
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Mean(a), tracked)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let tracked = self.tracked(a);
        self.push(out, Op::Transpose(a), tracked)
    }

    /// Embedding lookup: stacks `table[rows[i]]` into a `rows.len() x d` matrix.
    pub fn gather(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (n, d) = t.dims2()?;
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(Error::Dimension(format!("row {r} outside a table of {n} rows")));
            }
            data.extend_from_slice(t.row_slice(r));
        }
        let out = Tensor::new(vec![rows.len(), d], data)?;
        let tracked = self.tracked(table);
        self.push(out, Op::Gather { table, rows: rows.to_vec() }, tracked)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let seed_shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar seed, got shape {seed_shape:?}"
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(seed_shape, T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let contributions = self.local_grads(&node.op, idx, &upstream)?;
            grads[idx] = Some(upstream);
            for (v, g) in contributions {
                if !self.tracked(v) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }

        let leaves = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf) && n.tracked)
            .map(|(i, _)| i)
            .collect::<Vec<_>>();
        let mut leaf_grads = HashMap::new();
        for i in leaves {
            let g = grads[i]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.nodes[i].value.shape()));
            leaf_grads.insert(Var(i), g);
        }
        Ok(Gradients {
            leaves: leaf_grads,
            params: self.params.clone(),
        })
    }

    fn local_grads(&self, op: &Op, idx: usize, up: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let out = self.nodes[idx].value.as_ref();
        Ok(match op {
            Op::Leaf => Vec::new(),
            Op::MatMul { lhs, rhs, transpose_rhs } => {
                let a = self.value(*lhs);
                let b = self.value(*rhs);
                let mut v = Vec::with_capacity(2);
                if self.tracked(*lhs) {
                    // C = A·B -> dA = dC·Bᵀ ; C = A·Bᵀ -> dA = dC·B
                    v.push((*lhs, up.matmul_ext(b, !transpose_rhs)?));
                }
                if self.tracked(*rhs) {
                    let ut = up.transpose()?;
                    let g = if *transpose_rhs {
                        ut.matmul(a)?
                    } else {
                        a.transpose()?.matmul(up)?
                    };
                    v.push((*rhs, g));
                }
                v
            }
            Op::Add(a, b) => vec![
                (*a, up.reduce_to(self.value(*a).shape())?),
                (*b, up.reduce_to(self.value(*b).shape())?),
            ],
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let mut v = Vec::with_capacity(2);
                if self.tracked(*a) {
                    v.push((*a, up.broadcast_with(bv, |g, y| g * y)?.reduce_to(av.shape())?));
                }
                if self.tracked(*b) {
                    v.push((*b, up.broadcast_with(av, |g, x| g * x)?.reduce_to(bv.shape())?));
                }
                v
            }
            Op::Scale(a, s) => {
                let k = T::from_f64(*s);
                vec![(*a, up.map(|g| g * k))]
            }
            Op::Tanh(a) => vec![(*a, zip(up, out, |g, y| g * (T::one() - y * y)))],
            Op::Sigmoid(a) => vec![(*a, zip(up, out, |g, y| g * y * (T::one() - y)))],
            Op::Softmax { input, .. } => {
                let (r, c) = out.dims2()?;
                let mut g = vec![T::zero(); r * c];
                for i in 0..r {
                    let y = out.row_slice(i);
                    let dy = up.row_slice(i);
                    let dot: T = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        g[i * c + j] = y[j] * (dy[j] - dot);
                    }
                }
                vec![(*input, Tensor::new(vec![r, c], g)?)]
            }
            Op::LogSoftmax(a) => {
                let (r, c) = out.dims2()?;
                let mut g = vec![T::zero(); r * c];
                for i in 0..r {
                    let y = out.row_slice(i);
                    let dy = up.row_slice(i);
                    let total: T = dy.iter().copied().sum();
                    for j in 0..c {
                        g[i * c + j] = dy[j] - y[j].exp() * total;
                    }
                }
                vec![(*a, Tensor::new(vec![r, c], g)?)]
            }
            Op::Concat { parts, axis } => {
                let (r, c) = up.dims2()?;
                let mut v = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.value(p).dims2()?;
                    let mut data = Vec::with_capacity(pr * pc);
                    if *axis == 0 {
                        data.extend_from_slice(&up.data()[offset * c..(offset + pr) * c]);
                        offset += pr;
                    } else {
                        for i in 0..r {
                            data.extend_from_slice(&up.row_slice(i)[offset..offset + pc]);
                        }
                        offset += pc;
                    }
                    v.push((p, Tensor::new(vec![pr, pc], data)?));
                }
                v
            }
            Op::Sum(a) => {
                let g = up.data()[0];
                vec![(*a, Tensor::full(self.value(*a).shape(), g))]
            }
            Op::Mean(a) => {
                let n = T::from_f64(self.value(*a).len() as f64);
                let g = up.data()[0] / n;
                vec![(*a, Tensor::full(self.value(*a).shape(), g))]
            }
            Op::Transpose(a) => vec![(*a, up.transpose()?)],
            Op::Gather { table, rows } => {
                let t = self.value(*table);
                let (_, d) = t.dims2()?;
                let mut g = Tensor::zeros(t.shape());
                let gd = g.data_mut();
                for (i, &r) in rows.iter().enumerate() {
                    for (dst, &src) in gd[r * d..(r + 1) * d].iter_mut().zip(up.row_slice(i)) {
                        *dst = *dst + src;
                    }
                }
                vec![(*table, g)]
            }
        })
    }
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul { .. } => "matmul",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Tanh(_) => "tanh",
        Op::Sigmoid(_) => "sigmoid",
        Op::Softmax { .. } => "softmax_rows",
        Op::LogSoftmax(_) => "log_softmax_rows",
        Op::Concat { .. } => "concat",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::Transpose(_) => "transpose",
        Op::Gather { .. } => "gather",
    }
}

/// Gradients of every tracked leaf, with named access for parameters.
pub struct Gradients<T: Scalar> {
    leaves: HashMap<Var, Tensor<T>>,
    params: Vec<(String, Var)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| self.leaves.get(v))
    }

    /// Parameter gradients in registration order.
    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params
            .iter()
            .filter_map(|(n, v)| self.leaves.get(v).map(|g| (n.as_str(), g)))
    }
}
