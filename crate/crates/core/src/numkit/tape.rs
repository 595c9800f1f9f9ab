//! Reverse-mode differentiation over a linear tape.
//!
//! Every primitive appends one node holding its forward value and enough
//! bookkeeping to run its local backward rule. Nodes are only ever appended,
//! so inputs always precede the nodes that consume them and a single reverse
//! sweep visits the graph in topological order.
//!
//! Primitives panic on shape misuse, like slicing past the end of a `Vec`.
//! Higher-level operations validate their inputs and return `Result`.

use std::collections::{BTreeMap, HashMap};

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

static EMPTY_STORE: ParamStore = ParamStore::new();

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// right operand has a single element
    Scalar,
    /// right operand is a vector repeated over every row of the left one
    Row,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: usize,
        b: usize,
        bcast: Broadcast,
    },
    Mul {
        a: usize,
        b: usize,
        bcast: Broadcast,
    },
    Concat {
        parts: Vec<usize>,
    },
    Slice {
        a: usize,
        offset: usize,
    },
    Reshape {
        a: usize,
    },
    Sum {
        a: usize,
    },
    Mean {
        a: usize,
    },
    Tanh {
        a: usize,
    },
    Sigmoid {
        a: usize,
    },
    Softplus {
        a: usize,
    },
    Softmax {
        a: usize,
    },
    Log {
        a: usize,
        floor: f64,
    },
    Exp {
        a: usize,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<f64>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradient of a scalar with respect to every parameter bound on the tape.
/// Parameters that the scalar does not depend on carry an all-zero gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    /// Element-wise accumulation; parameters missing on one side count as zero.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, g) in &other.by_param {
            match self.by_param.get_mut(id) {
                Some(mine) => {
                    for (m, o) in mine.data_mut().iter_mut().zip(g.data()) {
                        *m += o;
                    }
                }
                None => {
                    self.by_param.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.by_param.values_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.by_param
            .values()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their joint L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.by_param.values().all(Tensor::is_finite)
    }
}

/// Recording of primitive applications, bound to a parameter store.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
    }

    /// A tape with no parameters, for pure forward computation on constants.
    pub fn detached() -> Tape<'static> {
        Tape::new(&EMPTY_STORE)
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].value.numel()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Binds a parameter of the store. Repeated binds return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let value = self.store.get(id).clone();
        let v = self.push(value, Op::Param(id), true);
        self.bound.insert(id, v);
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    // ---------------------------------------------------------------------
    // primitives
    // ---------------------------------------------------------------------

    /// Matrix product. A 1-D left operand is a row vector, a 1-D right
    /// operand a column vector; the corresponding output axis is dropped.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (m, k) = match sa.as_slice() {
            [k] => (1, *k),
            [m, k] => (*m, *k),
            _ => panic!("matmul: left operand must be 1-D or 2-D, got {sa:?}"),
        };
        let (k2, n) = match sb.as_slice() {
            [k] => (*k, 1),
            [k, n] => (*k, *n),
            _ => panic!("matmul: right operand must be 1-D or 2-D, got {sb:?}"),
        };
        assert_eq!(k, k2, "matmul: inner dimensions differ ({sa:?} x {sb:?})");
        let out_shape = match (sa.len(), sb.len()) {
            (1, 1) => vec![1],
            (1, 2) => vec![n],
            (2, 1) => vec![m],
            _ => vec![m, n],
        };
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, bv) in row.iter_mut().zip(brow) {
                    *o += x * bv;
                }
            }
        }
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(
            Tensor::new(out_shape, out).expect("matmul shape"),
            Op::MatMul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
            needs,
        )
    }

    fn broadcast_kind(&self, a: Var, b: Var, name: &str) -> Broadcast {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            Broadcast::Same
        } else if tb.numel() == 1 {
            Broadcast::Scalar
        } else if tb.shape().len() == 1 && ta.shape().len() == 2 && ta.cols() == tb.numel() {
            Broadcast::Row
        } else {
            panic!("{name}: cannot broadcast {:?} onto {:?}", tb.shape(), ta.shape())
        }
    }

    fn binary(&mut self, a: Var, b: Var, mul: bool) -> Var {
        let bcast = self.broadcast_kind(a, b, if mul { "mul" } else { "add" });
        let ta = self.value(a);
        let bd = self.value(b).data();
        let cols = ta.cols();
        let out: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match bcast {
                    Broadcast::Same => bd[i],
                    Broadcast::Scalar => bd[0],
                    Broadcast::Row => bd[i % cols],
                };
                if mul {
                    x * y
                } else {
                    x + y
                }
            })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), out).expect("binary shape");
        let needs = self.needs(a.0) || self.needs(b.0);
        let op = if mul {
            Op::Mul { a: a.0, b: b.0, bcast }
        } else {
            Op::Add { a: a.0, b: b.0, bcast }
        };
        self.push(value, op, needs)
    }

    /// Element-wise sum; `b` may be a scalar or a row vector broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, false)
    }

    /// Element-wise product with the same broadcasting rules as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, true)
    }

    /// Concatenation along the first axis. 1-D parts join into a longer
    /// vector; 2-D parts must agree on their column count.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat: no inputs");
        let first = self.shape(parts[0]).to_vec();
        let mut lead = 0;
        for &p in parts {
            let s = self.shape(p);
            assert_eq!(s.len(), first.len(), "concat: rank mismatch ({first:?} vs {s:?})");
            assert_eq!(s[1..], first[1..], "concat: trailing dims differ ({first:?} vs {s:?})");
            lead += s[0];
        }
        let mut data = Vec::with_capacity(parts.iter().map(|&p| self.numel(p)).sum());
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = first;
        shape[0] = lead;
        let needs = parts.iter().any(|p| self.needs(p.0));
        self.push(
            Tensor::new(shape, data).expect("concat shape"),
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
            },
            needs,
        )
    }

    /// `len` entries (1-D) or rows (2-D) starting at `start` along the first axis.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let s = self.shape(a).to_vec();
        assert!(len > 0, "slice: empty range");
        assert!(
            start + len <= s[0],
            "slice: {start}..{} out of bounds for {s:?}",
            start + len
        );
        let stride: usize = s[1..].iter().product();
        let offset = start * stride;
        let data = self.value(a).data()[offset..offset + len * stride].to_vec();
        let mut shape = s;
        shape[0] = len;
        let needs = self.needs(a.0);
        self.push(
            Tensor::new(shape, data).expect("slice shape"),
            Op::Slice { a: a.0, offset },
            needs,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = self.value(a).clone();
        assert_eq!(
            shape.iter().product::<usize>(),
            value.numel(),
            "reshape: {:?} -> {shape:?}",
            value.shape()
        );
        let needs = self.needs(a.0);
        self.push(value.reshaped(shape.to_vec()), Op::Reshape { a: a.0 }, needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a.0);
        self.push(Tensor::scalar(s), Op::Sum { a: a.0 }, needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let needs = self.needs(a.0);
        self.push(Tensor::scalar(s), Op::Mean { a: a.0 }, needs)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("unary shape");
        let needs = self.needs(a.0);
        self.push(value, op, needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh { a: a.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid { a: a.0 })
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus { a: a.0 })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp { a: a.0 })
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.log_clamped(a, 0.0)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Var {
        // f64::max would swallow a NaN input
        self.unary(
            a,
            move |x| if x.is_nan() { x } else { x.max(floor).ln() },
            Op::Log { a: a.0, floor },
        )
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let cols = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let value = Tensor::new(t.shape().to_vec(), data).expect("softmax shape");
        let needs = self.needs(a.0);
        self.push(value, Op::Softmax { a: a.0 }, needs)
    }

    /// Rows of `table` selected by `ids`, shape `[ids.len(), dim]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        assert_eq!(t.shape().len(), 2, "embedding: table must be 2-D");
        assert!(!ids.is_empty(), "embedding: no ids");
        let (rows, dim) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            assert!(id < rows, "embedding: id {id} out of range for {rows} rows");
            data.extend_from_slice(t.row(id));
        }
        let needs = self.needs(table.0);
        self.push(
            Tensor::new(vec![ids.len(), dim], data).expect("embedding shape"),
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
            },
            needs,
        )
    }

    /// `-Σ_r Σ_c targets[r,c] · log softmax(logits[r,:])[c]` as a scalar.
    /// Targets are soft counts and are not differentiated.
    pub fn cross_entropy(&mut self, logits: Var, targets: &Tensor) -> Var {
        let t = self.value(logits);
        assert_eq!(
            t.shape(),
            targets.shape(),
            "cross_entropy: logits and targets differ in shape"
        );
        let cols = t.cols();
        let mut probs = t.data().to_vec();
        let mut loss = 0.0;
        for (row, (lrow, trow)) in probs
            .chunks_mut(cols)
            .zip(t.data().chunks(cols).zip(targets.data().chunks(cols)))
        {
            let max = lrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + lrow.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for (c, (&l, &w)) in lrow.iter().zip(trow).enumerate() {
                loss -= w * (l - lse);
                row[c] = (l - lse).exp();
            }
        }
        let needs = self.needs(logits.0);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.data().to_vec(),
                probs,
            },
            needs,
        )
    }

    // ---------------------------------------------------------------------
    // composites (no dedicated backward rule)
    // ---------------------------------------------------------------------

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let c = self.scalar(factor);
        self.mul(a, c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = self.scalar(c);
        self.add(a, c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    /// Row `i` of a matrix as a 1-D vector.
    pub fn row(&mut self, a: Var, i: usize) -> Var {
        let cols = self.value(a).cols();
        let r = self.slice(a, i, 1);
        self.reshape(r, &[cols])
    }

    /// Stacks equally sized 1-D vectors into a `[n, d]` matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Var {
        let d = self.numel(rows[0]);
        let flat = self.concat(rows);
        self.reshape(flat, &[rows.len(), d])
    }

    // ---------------------------------------------------------------------
    // reverse sweep
    // ---------------------------------------------------------------------

    /// Gradient of the scalar `loss` with respect to every bound parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.numel(loss) != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();
        for (&id, &v) in &self.bound {
            out.by_param.insert(id, Tensor::zeros(self.value(v).shape()));
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            if let Op::Param(id) = node.op {
                let slot = out.by_param.get_mut(&id).expect("bound param");
                slot.data_mut().copy_from_slice(&g);
            }
        }
        Ok(out)
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], i: usize) -> Option<&'g mut [f64]> {
        if !self.nodes[i].needs_grad {
            return None;
        }
        let n = self.nodes[i].value.numel();
        Some(grads[i].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::MatMul { a, b, m, k, n } => {
                let ad = self.nodes[a].value.data();
                let bd = self.nodes[b].value.data();
                if let Some(ga) = self.grad_slot(grads, a) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(gb) = self.grad_slot(grads, b) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = ad[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * gv;
                            }
                        }
                    }
                }
            }
            &Op::Add { a, b, bcast } => {
                if let Some(ga) = self.grad_slot(grads, a) {
                    for (o, gv) in ga.iter_mut().zip(g) {
                        *o += gv;
                    }
                }
                let cols = node.value.cols();
                if let Some(gb) = self.grad_slot(grads, b) {
                    reduce_broadcast(gb, g, bcast, cols, |_| 1.0);
                }
            }
            &Op::Mul { a, b, bcast } => {
                let ad = self.nodes[a].value.data();
                let bd = self.nodes[b].value.data();
                let cols = node.value.cols();
                if let Some(ga) = self.grad_slot(grads, a) {
                    for (i, (o, gv)) in ga.iter_mut().zip(g).enumerate() {
                        let bv = match bcast {
                            Broadcast::Same => bd[i],
                            Broadcast::Scalar => bd[0],
                            Broadcast::Row => bd[i % cols],
                        };
                        *o += gv * bv;
                    }
                }
                if let Some(gb) = self.grad_slot(grads, b) {
                    reduce_broadcast(gb, g, bcast, cols, |i| ad[i]);
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p].value.numel();
                    if let Some(gp) = self.grad_slot(grads, p) {
                        for (o, gv) in gp.iter_mut().zip(&g[offset..offset + n]) {
                            *o += gv;
                        }
                    }
                    offset += n;
                }
            }
            &Op::Slice { a, offset } => {
                if let Some(ga) = self.grad_slot(grads, a) {
                    for (o, gv) in ga[offset..offset + g.len()].iter_mut().zip(g) {
                        *o += gv;
                    }
                }
            }
            &Op::Reshape { a } => {
                if let Some(ga) = self.grad_slot(grads, a) {
                    for (o, gv) in ga.iter_mut().zip(g) {
                        *o += gv;
                    }
                }
            }
            &Op::Sum { a } => {
                if let Some(ga) = self.grad_slot(grads, a) {
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            &Op::Mean { a } => {
                if let Some(ga) = self.grad_slot(grads, a) {
                    let s = g[0] / ga.len() as f64;
                    for o in ga.iter_mut() {
                        *o += s;
                    }
                }
            }
            &Op::Tanh { a } => {
                if let Some(ga) = self.grad_slot(grads, a) {
                    for ((o, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                        *o += gv * (1.0 - yv * yv);
                    }
                }
            }
            &Op::Sigmoid { a } => {
                if let Some(ga) = self.grad_slot(grads, a) {
                    for ((o, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                        *o += gv * yv * (1.0 - yv);
                    }
                }
            }
            &Op::Softplus { a } => {
                let x = self.nodes[a].value.data();
                if let Some(ga) = self.grad_slot(grads, a) {
                    for ((o, gv), xv) in ga.iter_mut().zip(g).zip(x) {
                        *o += gv * sigmoid(*xv);
                    }
                }
            }
            &Op::Exp { a } => {
                if let Some(ga) = self.grad_slot(grads, a) {
                    for ((o, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                        *o += gv * yv;
                    }
                }
            }
            &Op::Log { a, floor } => {
                let x = self.nodes[a].value.data();
                if let Some(ga) = self.grad_slot(grads, a) {
                    for ((o, gv), &xv) in ga.iter_mut().zip(g).zip(x) {
                        if xv > floor || xv.is_nan() {
                            *o += gv / xv;
                        }
                    }
                }
            }
            &Op::Softmax { a } => {
                let cols = node.value.cols();
                if let Some(ga) = self.grad_slot(grads, a) {
                    for ((orow, grow), yrow) in ga.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((o, gv), yv) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let dim = self.nodes[*table].value.cols();
                if let Some(gt) = self.grad_slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, gv) in gt[id * dim..(id + 1) * dim].iter_mut().zip(&g[r * dim..(r + 1) * dim]) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let cols = self.nodes[*logits].value.cols();
                if let Some(gl) = self.grad_slot(grads, *logits) {
                    for ((orow, trow), prow) in gl.chunks_mut(cols).zip(targets.chunks(cols)).zip(probs.chunks(cols)) {
                        let mass: f64 = trow.iter().sum();
                        for ((o, t), p) in orow.iter_mut().zip(trow).zip(prow) {
                            *o += g[0] * (mass * p - t);
                        }
                    }
                }
            }
        }
    }
}

fn reduce_broadcast(gb: &mut [f64], g: &[f64], bcast: Broadcast, cols: usize, factor: impl Fn(usize) -> f64) {
    match bcast {
        Broadcast::Same => {
            for (i, (o, gv)) in gb.iter_mut().zip(g).enumerate() {
                *o += gv * factor(i);
            }
        }
        Broadcast::Scalar => {
            gb[0] += g.iter().enumerate().map(|(i, gv)| gv * factor(i)).sum::<f64>();
        }
        Broadcast::Row => {
            for (i, gv) in g.iter().enumerate() {
                gb[i % cols] += gv * factor(i);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable in-place softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
