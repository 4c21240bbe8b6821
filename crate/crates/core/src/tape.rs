//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Operations compute values
//! eagerly and, when the tape is active, append one record per op; the
//! records form a topological order by construction, and [`Tape::backward`]
//! replays them once in reverse. An inactive tape runs the identical
//! forward arithmetic without recording, which is how frozen models and
//! evaluation passes execute.
//!
//! Broadcasting is deliberately limited: binary ops accept equal shapes or
//! a rank-0 scalar against a tensor, and the few structured patterns the
//! networks need (bias rows, row broadcast/gather, column concat) are
//! dedicated ops with hand-written adjoints.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Elementwise op kinds accepted by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Div,
    Relu,
    Elu,
    Softplus,
    Log,
    Exp,
    Square,
}

impl ElementwiseKind {
    pub fn is_binary(self) -> bool {
        matches!(
            self,
            ElementwiseKind::Add | ElementwiseKind::Sub | ElementwiseKind::Mul | ElementwiseKind::Div
        )
    }

    pub const ALL: [ElementwiseKind; 10] = [
        ElementwiseKind::Add,
        ElementwiseKind::Sub,
        ElementwiseKind::Mul,
        ElementwiseKind::Div,
        ElementwiseKind::Relu,
        ElementwiseKind::Elu,
        ElementwiseKind::Softplus,
        ElementwiseKind::Log,
        ElementwiseKind::Exp,
        ElementwiseKind::Square,
    ];
}

/// Reduction kinds accepted by [`Tape::reduce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnaryKind {
    Relu,
    Elu,
    Softplus,
    Log,
    Square,
    ClampMin,
}

#[derive(Debug)]
enum OpRecord<S: Scalar> {
    Leaf,
    Matmul {
        a: Arc<Vec<S>>,
        b: Arc<Vec<S>>,
        m: usize,
        k: usize,
        n: usize,
    },
    /// Same-shape binary op; operand values saved only when the adjoint
    /// needs them.
    Bin {
        kind: BinKind,
        a: Option<Arc<Vec<S>>>,
        b: Option<Arc<Vec<S>>>,
    },
    /// Binary op between a rank-0 scalar and a tensor.
    BinScalar {
        kind: BinKind,
        scalar_is_lhs: bool,
        scalar: S,
        tensor: Option<Arc<Vec<S>>>,
    },
    Unary {
        kind: UnaryKind,
        x: Arc<Vec<S>>,
        floor: S,
    },
    /// exp saves its output: the adjoint is g * exp(x).
    Exp {
        out: Arc<Vec<S>>,
    },
    /// Elementwise op defined by plain function pointers; `dfn` maps the
    /// saved input to the local derivative.
    CustomUnary {
        dfn: fn(S) -> S,
        x: Arc<Vec<S>>,
    },
    ReduceAll {
        kind: ReduceKind,
        n: usize,
    },
    ReduceAxis {
        kind: ReduceKind,
        axis: usize,
        rows: usize,
        cols: usize,
    },
    /// [n,d] + [d] with the bias added to every row.
    AddRow {
        rows: usize,
        cols: usize,
    },
    /// [d] replicated into n rows.
    BroadcastRow {
        rows: usize,
        cols: usize,
    },
    CrossEntropy {
        probs: Arc<Vec<S>>,
        labels: Arc<Vec<usize>>,
        classes: usize,
    },
    ConcatCols {
        rows: usize,
        d_left: usize,
        d_right: usize,
    },
    ConcatRows {
        part_rows: Vec<usize>,
        cols: usize,
    },
    SelectRows {
        indices: Arc<Vec<usize>>,
        in_rows: usize,
        cols: usize,
    },
    LogMeanExp {
        weights: Arc<Vec<S>>,
    },
}

#[derive(Debug)]
struct Node<S: Scalar> {
    op: OpRecord<S>,
    inputs: Vec<Option<usize>>,
    out_numel: usize,
    needs_grad: bool,
}

/// Gradients keyed by the tape node that produced each tensor.
#[derive(Debug, Default)]
pub struct GradStore<S: Scalar> {
    by_node: HashMap<usize, Tensor<S>>,
}

impl<S: Scalar> GradStore<S> {
    /// Gradient of the loss with respect to `t`, present for every
    /// requires-grad leaf of the consumed tape.
    pub fn get(&self, t: &Tensor<S>) -> Option<&Tensor<S>> {
        t.node().and_then(|id| self.by_node.get(&id))
    }

    pub fn contains(&self, t: &Tensor<S>) -> bool {
        self.get(t).is_some()
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }
}

#[derive(Debug)]
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    /// Leaf node ids with their shapes, for zero-filling absent gradients.
    leaves: Vec<(usize, Vec<usize>, bool)>,
    active: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Tape::active()
    }
}

impl<S: Scalar> Tape<S> {
    /// A recording tape.
    pub fn active() -> Self {
        Tape { nodes: Vec::new(), leaves: Vec::new(), active: true }
    }

    /// A non-recording tape: ops run the same arithmetic but produce
    /// constants. Used for frozen models and evaluation passes.
    pub fn inactive() -> Self {
        Tape { nodes: Vec::new(), leaves: Vec::new(), active: false }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers `t` as a leaf. On an inactive tape this is a detach.
    pub fn leaf(&mut self, t: &Tensor<S>, requires_grad: bool) -> Tensor<S> {
        let mut out = t.detach();
        if self.active {
            let id = self.nodes.len();
            self.nodes.push(Node {
                op: OpRecord::Leaf,
                inputs: Vec::new(),
                out_numel: out.numel(),
                needs_grad: requires_grad,
            });
            self.leaves.push((id, out.shape().to_vec(), requires_grad));
            out.node = Some(id);
            out.requires_grad = requires_grad;
        }
        out
    }

    fn check_inputs(&self, inputs: &[&Tensor<S>]) -> Result<()> {
        for t in inputs {
            if let Some(id) = t.node() {
                if id >= self.nodes.len() {
                    return Err(Error::contract(
                        "input tensor carries a handle from another tape",
                    ));
                }
            }
        }
        Ok(())
    }

    fn record(
        &mut self,
        op: OpRecord<S>,
        inputs: &[&Tensor<S>],
        shape: Vec<usize>,
        values: Vec<S>,
    ) -> Tensor<S> {
        let mut out = Tensor::from_parts(shape, values);
        if self.active {
            let ids: Vec<Option<usize>> = inputs.iter().map(|t| t.node()).collect();
            let needs = ids
                .iter()
                .flatten()
                .any(|&id| self.nodes[id].needs_grad);
            let id = self.nodes.len();
            self.nodes.push(Node { op, inputs: ids, out_numel: out.numel(), needs_grad: needs });
            out.node = Some(id);
            out.requires_grad = needs;
        }
        out
    }

    // ── Matrix product ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_inputs(&[a, b])?;
        if a.rank() != 2 || b.rank() != 2 {
            return Err(Error::dimension(format!(
                "matmul expects rank-2 operands, got {:?} x {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (k2, n) = (b.shape()[0], b.shape()[1]);
        if k != k2 {
            return Err(Error::dimension(format!(
                "matmul inner dimensions disagree: {:?} x {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let values = matmul_vals(a.values(), b.values(), m, k, n);
        Ok(self.record(
            OpRecord::Matmul { a: a.values_arc(), b: b.values_arc(), m, k, n },
            &[a, b],
            vec![m, n],
            values,
        ))
    }

    // ── Elementwise binary ─────────────────────────────────────────────

    pub fn add(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(BinKind::Div, a, b)
    }

    fn binary(&mut self, kind: BinKind, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_inputs(&[a, b])?;
        if kind == BinKind::Div && b.values().iter().any(|v| *v == S::zero()) {
            return Err(Error::domain("division by zero"));
        }
        if a.shape() == b.shape() {
            let values: Vec<S> = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(&x, &y)| apply_bin(kind, x, y))
                .collect();
            let (sa, sb) = saved_bin_operands(kind, a, b);
            return Ok(self.record(
                OpRecord::Bin { kind, a: sa, b: sb },
                &[a, b],
                a.shape().to_vec(),
                values,
            ));
        }
        // Scalar-vs-tensor broadcast is the only shape mixing permitted.
        if a.is_scalar() ^ b.is_scalar() {
            let scalar_is_lhs = a.is_scalar();
            let (s, t) = if scalar_is_lhs { (a, b) } else { (b, a) };
            let sv = s.value();
            let values: Vec<S> = t
                .values()
                .iter()
                .map(|&x| {
                    if scalar_is_lhs {
                        apply_bin(kind, sv, x)
                    } else {
                        apply_bin(kind, x, sv)
                    }
                })
                .collect();
            let tensor = matches!(kind, BinKind::Mul | BinKind::Div).then(|| t.values_arc());
            return Ok(self.record(
                OpRecord::BinScalar { kind, scalar_is_lhs, scalar: sv, tensor },
                &[a, b],
                t.shape().to_vec(),
                values,
            ));
        }
        Err(Error::dimension(format!(
            "elementwise shapes disagree: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )))
    }

    // ── Elementwise unary ──────────────────────────────────────────────

    pub fn relu(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.unary(UnaryKind::Relu, x, S::zero())
    }

    pub fn elu(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.unary(UnaryKind::Elu, x, S::zero())
    }

    pub fn softplus(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.unary(UnaryKind::Softplus, x, S::zero())
    }

    pub fn log(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.unary(UnaryKind::Log, x, S::zero())
    }

    pub fn square(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.unary(UnaryKind::Square, x, S::zero())
    }

    /// max(x, floor), elementwise.
    pub fn clamp_min(&mut self, x: &Tensor<S>, floor: S) -> Result<Tensor<S>> {
        self.unary(UnaryKind::ClampMin, x, floor)
    }

    fn unary(&mut self, kind: UnaryKind, x: &Tensor<S>, floor: S) -> Result<Tensor<S>> {
        self.check_inputs(&[x])?;
        if kind == UnaryKind::Log {
            if let Some(v) = x.values().iter().find(|v| **v <= S::zero()) {
                return Err(Error::domain(format!("log of non-positive value {v}")));
            }
        }
        let values: Vec<S> = x.values().iter().map(|&v| apply_unary(kind, v, floor)).collect();
        Ok(self.record(
            OpRecord::Unary { kind, x: x.values_arc(), floor },
            &[x],
            x.shape().to_vec(),
            values,
        ))
    }

    pub fn exp(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_inputs(&[x])?;
        let values: Vec<S> = x.values().iter().map(|v| v.exp()).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("exp overflow to non-finite value"));
        }
        let saved = Arc::new(values.clone());
        Ok(self.record(OpRecord::Exp { out: saved }, &[x], x.shape().to_vec(), values))
    }

    /// Elementwise op given by plain function pointers. `dfn` receives the
    /// saved input value and returns the local derivative.
    pub fn custom_unary(
        &mut self,
        x: &Tensor<S>,
        fwd: fn(S) -> S,
        dfn: fn(S) -> S,
    ) -> Result<Tensor<S>> {
        self.check_inputs(&[x])?;
        let values: Vec<S> = x.values().iter().map(|&v| fwd(v)).collect();
        Ok(self.record(
            OpRecord::CustomUnary { dfn, x: x.values_arc() },
            &[x],
            x.shape().to_vec(),
            values,
        ))
    }

    /// Dispatcher over the named elementwise kinds: binary kinds take two
    /// inputs, unary kinds one.
    pub fn elementwise(&mut self, kind: ElementwiseKind, inputs: &[&Tensor<S>]) -> Result<Tensor<S>> {
        let expect = if kind.is_binary() { 2 } else { 1 };
        if inputs.len() != expect {
            return Err(Error::contract(format!(
                "{kind:?} takes {expect} input(s), got {}",
                inputs.len()
            )));
        }
        match kind {
            ElementwiseKind::Add => self.add(inputs[0], inputs[1]),
            ElementwiseKind::Sub => self.sub(inputs[0], inputs[1]),
            ElementwiseKind::Mul => self.mul(inputs[0], inputs[1]),
            ElementwiseKind::Div => self.div(inputs[0], inputs[1]),
            ElementwiseKind::Relu => self.relu(inputs[0]),
            ElementwiseKind::Elu => self.elu(inputs[0]),
            ElementwiseKind::Softplus => self.softplus(inputs[0]),
            ElementwiseKind::Log => self.log(inputs[0]),
            ElementwiseKind::Exp => self.exp(inputs[0]),
            ElementwiseKind::Square => self.square(inputs[0]),
        }
    }

    // ── Reductions ─────────────────────────────────────────────────────

    /// Sum or mean over all elements (`axis = None`) or over one axis of a
    /// rank-2 tensor.
    pub fn reduce(&mut self, kind: ReduceKind, x: &Tensor<S>, axis: Option<usize>) -> Result<Tensor<S>> {
        self.check_inputs(&[x])?;
        match axis {
            None => {
                let n = x.numel();
                let total: S = x.values().iter().copied().sum();
                let v = match kind {
                    ReduceKind::Sum => total,
                    ReduceKind::Mean => total / S::from_lit(n as f64),
                };
                Ok(self.record(OpRecord::ReduceAll { kind, n }, &[x], Vec::new(), vec![v]))
            }
            Some(axis) => {
                if x.rank() != 2 {
                    return Err(Error::dimension(format!(
                        "axis reduction expects a rank-2 tensor, got {:?}",
                        x.shape()
                    )));
                }
                if axis > 1 {
                    return Err(Error::dimension(format!("axis {axis} out of range for rank 2")));
                }
                let (rows, cols) = (x.shape()[0], x.shape()[1]);
                let (out_len, denom) = if axis == 0 { (cols, rows) } else { (rows, cols) };
                let mut out = vec![S::zero(); out_len];
                for i in 0..rows {
                    for j in 0..cols {
                        let slot = if axis == 0 { j } else { i };
                        out[slot] = out[slot] + x.values()[i * cols + j];
                    }
                }
                if kind == ReduceKind::Mean {
                    let d = S::from_lit(denom as f64);
                    for v in &mut out {
                        *v = *v / d;
                    }
                }
                Ok(self.record(
                    OpRecord::ReduceAxis { kind, axis, rows, cols },
                    &[x],
                    vec![out_len],
                    out,
                ))
            }
        }
    }

    pub fn sum_all(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.reduce(ReduceKind::Sum, x, None)
    }

    pub fn mean_all(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.reduce(ReduceKind::Mean, x, None)
    }

    // ── Structured shape ops ───────────────────────────────────────────

    /// [n,d] + [d]: adds `bias` to every row of `x`.
    pub fn add_row(&mut self, x: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_inputs(&[x, bias])?;
        if x.rank() != 2 || bias.rank() != 1 || x.shape()[1] != bias.shape()[0] {
            return Err(Error::dimension(format!(
                "add_row expects [n,d] + [d], got {:?} + {:?}",
                x.shape(),
                bias.shape()
            )));
        }
        let (rows, cols) = (x.shape()[0], x.shape()[1]);
        let mut values = x.values().to_vec();
        for i in 0..rows {
            for j in 0..cols {
                values[i * cols + j] = values[i * cols + j] + bias.values()[j];
            }
        }
        Ok(self.record(OpRecord::AddRow { rows, cols }, &[x, bias], vec![rows, cols], values))
    }

    /// [d] replicated into `rows` rows.
    pub fn broadcast_row(&mut self, v: &Tensor<S>, rows: usize) -> Result<Tensor<S>> {
        self.check_inputs(&[v])?;
        if v.rank() != 1 {
            return Err(Error::dimension(format!(
                "broadcast_row expects a rank-1 tensor, got {:?}",
                v.shape()
            )));
        }
        let cols = v.shape()[0];
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            values.extend_from_slice(v.values());
        }
        Ok(self.record(OpRecord::BroadcastRow { rows, cols }, &[v], vec![rows, cols], values))
    }

    /// Mean over rows of `-log softmax(logits)[label]`, stabilized by
    /// per-row max subtraction.
    pub fn cross_entropy_logits(&mut self, logits: &Tensor<S>, labels: &[usize]) -> Result<Tensor<S>> {
        self.check_inputs(&[logits])?;
        if logits.rank() != 2 {
            return Err(Error::dimension("cross_entropy expects rank-2 logits".to_string()));
        }
        let (n, k) = (logits.shape()[0], logits.shape()[1]);
        if labels.len() != n {
            return Err(Error::dimension(format!(
                "{} labels for {} logit rows",
                labels.len(),
                n
            )));
        }
        if n == 0 {
            return Err(Error::contract("cross_entropy on an empty batch"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::index(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = vec![S::zero(); n * k];
        let mut total = S::zero();
        for i in 0..n {
            let row = &logits.values()[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut denom = S::zero();
            for j in 0..k {
                let e = (row[j] - max).exp();
                probs[i * k + j] = e;
                denom = denom + e;
            }
            for j in 0..k {
                probs[i * k + j] = probs[i * k + j] / denom;
            }
            // loss_i = logsumexp(row) - row[label]
            total = total + denom.ln() + max - row[labels[i]];
        }
        let mean = total / S::from_lit(n as f64);
        Ok(self.record(
            OpRecord::CrossEntropy {
                probs: Arc::new(probs),
                labels: Arc::new(labels.to_vec()),
                classes: k,
            },
            &[logits],
            Vec::new(),
            vec![mean],
        ))
    }

    /// [n,da] ++ [n,db] -> [n,da+db].
    pub fn concat_cols(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_inputs(&[a, b])?;
        if a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0] {
            return Err(Error::dimension(format!(
                "concat_cols expects matching row counts, got {:?} ++ {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (rows, da, db) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut values = Vec::with_capacity(rows * (da + db));
        for i in 0..rows {
            values.extend_from_slice(&a.values()[i * da..(i + 1) * da]);
            values.extend_from_slice(&b.values()[i * db..(i + 1) * db]);
        }
        Ok(self.record(
            OpRecord::ConcatCols { rows, d_left: da, d_right: db },
            &[a, b],
            vec![rows, da + db],
            values,
        ))
    }

    /// Stacks parts vertically; each part is rank-2 `[r,d]` or rank-1 `[d]`
    /// (treated as a single row).
    pub fn concat_rows(&mut self, parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
        if parts.is_empty() {
            return Err(Error::contract("concat_rows of zero parts"));
        }
        self.check_inputs(parts)?;
        let cols = match parts[0].rank() {
            1 => parts[0].shape()[0],
            2 => parts[0].shape()[1],
            _ => return Err(Error::dimension("concat_rows expects rank-1 or rank-2 parts".to_string())),
        };
        let mut part_rows = Vec::with_capacity(parts.len());
        let mut values = Vec::new();
        for p in parts {
            let (r, d) = match p.rank() {
                1 => (1, p.shape()[0]),
                2 => (p.shape()[0], p.shape()[1]),
                _ => return Err(Error::dimension("concat_rows expects rank-1 or rank-2 parts".to_string())),
            };
            if d != cols {
                return Err(Error::dimension(format!(
                    "concat_rows width mismatch: {d} vs {cols}"
                )));
            }
            part_rows.push(r);
            values.extend_from_slice(p.values());
        }
        let rows: usize = part_rows.iter().sum();
        Ok(self.record(
            OpRecord::ConcatRows { part_rows, cols },
            parts,
            vec![rows, cols],
            values,
        ))
    }

    /// Gathers rows of a rank-2 tensor; repeated indices are allowed and
    /// accumulate in the adjoint.
    pub fn select_rows(&mut self, x: &Tensor<S>, indices: &[usize]) -> Result<Tensor<S>> {
        self.check_inputs(&[x])?;
        if x.rank() != 2 {
            return Err(Error::dimension("select_rows expects a rank-2 tensor".to_string()));
        }
        let (in_rows, cols) = (x.shape()[0], x.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= in_rows) {
            return Err(Error::index(format!("row {bad} out of {in_rows}")));
        }
        let mut values = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            values.extend_from_slice(&x.values()[i * cols..(i + 1) * cols]);
        }
        Ok(self.record(
            OpRecord::SelectRows { indices: Arc::new(indices.to_vec()), in_rows, cols },
            &[x],
            vec![indices.len(), cols],
            values,
        ))
    }

    /// log(mean(exp(x))) over all elements, computed via max-shift.
    pub fn log_mean_exp(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_inputs(&[x])?;
        if x.numel() == 0 {
            return Err(Error::contract("log_mean_exp of an empty tensor"));
        }
        let max = x.values().iter().copied().fold(S::neg_infinity(), S::max);
        let mut weights = vec![S::zero(); x.numel()];
        let mut denom = S::zero();
        for (w, &v) in weights.iter_mut().zip(x.values()) {
            let e = (v - max).exp();
            *w = e;
            denom = denom + e;
        }
        let out = max + (denom / S::from_lit(x.numel() as f64)).ln();
        for w in &mut weights {
            *w = *w / denom;
        }
        Ok(self.record(
            OpRecord::LogMeanExp { weights: Arc::new(weights) },
            &[x],
            Vec::new(),
            vec![out],
        ))
    }

    // ── Backward ───────────────────────────────────────────────────────

    /// Backpropagates from a scalar loss, consuming the tape. Every
    /// requires-grad leaf receives an entry (zeros when disconnected).
    pub fn backward(self, loss: &Tensor<S>) -> Result<GradStore<S>> {
        let loss_id = loss.node().ok_or_else(|| {
            Error::contract("backward: loss tensor is not on the tape")
        })?;
        if loss.numel() != 1 {
            return Err(Error::contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                loss.shape()
            )));
        }
        if loss_id >= self.nodes.len() {
            return Err(Error::contract("backward: loss handle from another tape"));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss_id] = Some(vec![S::one()]);

        for id in (0..nodes.len()).rev() {
            let node = &nodes[id];
            // leaf gradients stay in place for collection below
            if matches!(node.op, OpRecord::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let contribs = node_adjoints(node, &g);
            for (slot, contrib) in contribs {
                let Some(Some(input_id)) = node.inputs.get(slot).copied() else {
                    continue;
                };
                if !nodes[input_id].needs_grad {
                    continue;
                }
                let dst = grads[input_id]
                    .get_or_insert_with(|| vec![S::zero(); nodes[input_id].out_numel]);
                debug_assert_eq!(dst.len(), contrib.len());
                for (d, c) in dst.iter_mut().zip(contrib) {
                    *d = *d + c;
                }
            }
        }

        let mut by_node = HashMap::new();
        for (id, shape, requires) in self.leaves {
            if !requires {
                continue;
            }
            let values = grads[id].take().unwrap_or_else(|| {
                vec![S::zero(); shape.iter().product()]
            });
            by_node.insert(id, Tensor::from_parts(shape, values));
        }
        Ok(GradStore { by_node })
    }
}

/// Per-input adjoint contributions of one node given its output gradient.
/// Returns (input slot, gradient values) pairs.
fn node_adjoints<S: Scalar>(node: &Node<S>, g: &[S]) -> Vec<(usize, Vec<S>)> {
    match &node.op {
        OpRecord::Leaf => Vec::new(),
        OpRecord::Matmul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            // dA = g . B^T
            let mut da = vec![S::zero(); m * k];
            for i in 0..m {
                for p in 0..k {
                    let mut acc = S::zero();
                    let grow = &g[i * n..(i + 1) * n];
                    let brow = &b[p * n..(p + 1) * n];
                    for j in 0..n {
                        acc = acc + grow[j] * brow[j];
                    }
                    da[i * k + p] = acc;
                }
            }
            // dB = A^T . g
            let mut db = vec![S::zero(); k * n];
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                let grow = &g[i * n..(i + 1) * n];
                for (p, &av) in arow.iter().enumerate() {
                    let drow = &mut db[p * n..(p + 1) * n];
                    for j in 0..n {
                        drow[j] = drow[j] + av * grow[j];
                    }
                }
            }
            vec![(0, da), (1, db)]
        }
        OpRecord::Bin { kind, a, b } => match kind {
            BinKind::Add => vec![(0, g.to_vec()), (1, g.to_vec())],
            BinKind::Sub => vec![(0, g.to_vec()), (1, g.iter().map(|&v| -v).collect())],
            BinKind::Mul => {
                let a = a.as_ref().expect("mul saves lhs");
                let b = b.as_ref().expect("mul saves rhs");
                vec![
                    (0, g.iter().zip(b.iter()).map(|(&gv, &bv)| gv * bv).collect()),
                    (1, g.iter().zip(a.iter()).map(|(&gv, &av)| gv * av).collect()),
                ]
            }
            BinKind::Div => {
                let a = a.as_ref().expect("div saves lhs");
                let b = b.as_ref().expect("div saves rhs");
                let da: Vec<S> = g.iter().zip(b.iter()).map(|(&gv, &bv)| gv / bv).collect();
                let db: Vec<S> = g
                    .iter()
                    .zip(a.iter().zip(b.iter()))
                    .map(|(&gv, (&av, &bv))| -gv * av / (bv * bv))
                    .collect();
                vec![(0, da), (1, db)]
            }
        },
        OpRecord::BinScalar { kind, scalar_is_lhs, scalar, tensor } => {
            let (scalar_slot, tensor_slot) = if *scalar_is_lhs { (0, 1) } else { (1, 0) };
            let s = *scalar;
            match kind {
                BinKind::Add => vec![
                    (scalar_slot, vec![g.iter().copied().sum()]),
                    (tensor_slot, g.to_vec()),
                ],
                BinKind::Sub => {
                    if *scalar_is_lhs {
                        // s - t
                        vec![
                            (0, vec![g.iter().copied().sum()]),
                            (1, g.iter().map(|&v| -v).collect()),
                        ]
                    } else {
                        // t - s
                        vec![
                            (1, vec![-g.iter().copied().sum::<S>()]),
                            (0, g.to_vec()),
                        ]
                    }
                }
                BinKind::Mul => {
                    let t = tensor.as_ref().expect("scalar mul saves tensor");
                    let ds: S = g.iter().zip(t.iter()).map(|(&gv, &tv)| gv * tv).sum();
                    vec![
                        (scalar_slot, vec![ds]),
                        (tensor_slot, g.iter().map(|&v| v * s).collect()),
                    ]
                }
                BinKind::Div => {
                    let t = tensor.as_ref().expect("scalar div saves tensor");
                    if *scalar_is_lhs {
                        // s / t
                        let ds: S = g.iter().zip(t.iter()).map(|(&gv, &tv)| gv / tv).sum();
                        let dt: Vec<S> = g
                            .iter()
                            .zip(t.iter())
                            .map(|(&gv, &tv)| -gv * s / (tv * tv))
                            .collect();
                        vec![(0, vec![ds]), (1, dt)]
                    } else {
                        // t / s
                        let dt: Vec<S> = g.iter().map(|&gv| gv / s).collect();
                        let ds: S = g
                            .iter()
                            .zip(t.iter())
                            .map(|(&gv, &tv)| -gv * tv / (s * s))
                            .sum();
                        vec![(0, dt), (1, vec![ds])]
                    }
                }
            }
        }
        OpRecord::Unary { kind, x, floor } => {
            let dx: Vec<S> = g
                .iter()
                .zip(x.iter())
                .map(|(&gv, &xv)| gv * unary_derivative(*kind, xv, *floor))
                .collect();
            vec![(0, dx)]
        }
        OpRecord::Exp { out } => {
            let dx: Vec<S> = g.iter().zip(out.iter()).map(|(&gv, &ov)| gv * ov).collect();
            vec![(0, dx)]
        }
        OpRecord::CustomUnary { dfn, x } => {
            let dx: Vec<S> = g.iter().zip(x.iter()).map(|(&gv, &xv)| gv * dfn(xv)).collect();
            vec![(0, dx)]
        }
        OpRecord::ReduceAll { kind, n } => {
            let scale = match kind {
                ReduceKind::Sum => S::one(),
                ReduceKind::Mean => S::one() / S::from_lit(*n as f64),
            };
            let gv = g[0] * scale;
            vec![(0, vec![gv; *n])]
        }
        OpRecord::ReduceAxis { kind, axis, rows, cols } => {
            let denom = if *axis == 0 { *rows } else { *cols };
            let scale = match kind {
                ReduceKind::Sum => S::one(),
                ReduceKind::Mean => S::one() / S::from_lit(denom as f64),
            };
            let mut dx = vec![S::zero(); rows * cols];
            for i in 0..*rows {
                for j in 0..*cols {
                    let slot = if *axis == 0 { j } else { i };
                    dx[i * cols + j] = g[slot] * scale;
                }
            }
            vec![(0, dx)]
        }
        OpRecord::AddRow { rows, cols } => {
            let mut dbias = vec![S::zero(); *cols];
            for i in 0..*rows {
                for j in 0..*cols {
                    dbias[j] = dbias[j] + g[i * cols + j];
                }
            }
            vec![(0, g.to_vec()), (1, dbias)]
        }
        OpRecord::BroadcastRow { rows, cols } => {
            let mut dv = vec![S::zero(); *cols];
            for i in 0..*rows {
                for j in 0..*cols {
                    dv[j] = dv[j] + g[i * cols + j];
                }
            }
            vec![(0, dv)]
        }
        OpRecord::CrossEntropy { probs, labels, classes } => {
            let n = labels.len();
            let scale = g[0] / S::from_lit(n as f64);
            let mut dx = Vec::with_capacity(n * classes);
            for i in 0..n {
                for j in 0..*classes {
                    let indicator = if labels[i] == j { S::one() } else { S::zero() };
                    dx.push((probs[i * classes + j] - indicator) * scale);
                }
            }
            vec![(0, dx)]
        }
        OpRecord::ConcatCols { rows, d_left, d_right } => {
            let total = d_left + d_right;
            let mut da = Vec::with_capacity(rows * d_left);
            let mut db = Vec::with_capacity(rows * d_right);
            for i in 0..*rows {
                da.extend_from_slice(&g[i * total..i * total + d_left]);
                db.extend_from_slice(&g[i * total + d_left..(i + 1) * total]);
            }
            vec![(0, da), (1, db)]
        }
        OpRecord::ConcatRows { part_rows, cols } => {
            let mut out = Vec::with_capacity(part_rows.len());
            let mut offset = 0;
            for (slot, &r) in part_rows.iter().enumerate() {
                out.push((slot, g[offset..offset + r * cols].to_vec()));
                offset += r * cols;
            }
            out
        }
        OpRecord::SelectRows { indices, in_rows, cols } => {
            let mut dx = vec![S::zero(); in_rows * cols];
            for (pos, &src) in indices.iter().enumerate() {
                for j in 0..*cols {
                    dx[src * cols + j] = dx[src * cols + j] + g[pos * cols + j];
                }
            }
            vec![(0, dx)]
        }
        OpRecord::LogMeanExp { weights } => {
            let dx: Vec<S> = weights.iter().map(|&w| g[0] * w).collect();
            vec![(0, dx)]
        }
    }
}

fn apply_bin<S: Scalar>(kind: BinKind, a: S, b: S) -> S {
    match kind {
        BinKind::Add => a + b,
        BinKind::Sub => a - b,
        BinKind::Mul => a * b,
        BinKind::Div => a / b,
    }
}

fn saved_bin_operands<S: Scalar>(
    kind: BinKind,
    a: &Tensor<S>,
    b: &Tensor<S>,
) -> (Option<Arc<Vec<S>>>, Option<Arc<Vec<S>>>) {
    match kind {
        BinKind::Add | BinKind::Sub => (None, None),
        BinKind::Mul | BinKind::Div => (Some(a.values_arc()), Some(b.values_arc())),
    }
}

fn apply_unary<S: Scalar>(kind: UnaryKind, x: S, floor: S) -> S {
    match kind {
        UnaryKind::Relu => {
            if x > S::zero() {
                x
            } else {
                S::zero()
            }
        }
        UnaryKind::Elu => {
            if x > S::zero() {
                x
            } else {
                x.exp_m1()
            }
        }
        UnaryKind::Softplus => softplus_stable(x),
        UnaryKind::Log => x.ln(),
        UnaryKind::Square => x * x,
        UnaryKind::ClampMin => x.max(floor),
    }
}

fn unary_derivative<S: Scalar>(kind: UnaryKind, x: S, floor: S) -> S {
    match kind {
        UnaryKind::Relu => {
            if x > S::zero() {
                S::one()
            } else {
                S::zero()
            }
        }
        UnaryKind::Elu => {
            if x > S::zero() {
                S::one()
            } else {
                x.exp()
            }
        }
        UnaryKind::Softplus => sigmoid_stable(x),
        UnaryKind::Log => S::one() / x,
        UnaryKind::Square => (S::one() + S::one()) * x,
        UnaryKind::ClampMin => {
            if x >= floor {
                S::one()
            } else {
                S::zero()
            }
        }
    }
}

/// softplus(x) = max(x, 0) + log1p(exp(-|x|)); never overflows.
pub fn softplus_stable<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid computed without overflow on either tail.
pub fn sigmoid_stable<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn matmul_vals<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_projector() {
        let mut tape = Tape::<f64>::inactive();
        let eye = t2(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let a = t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let prod = tape.matmul(&eye, &a).unwrap();
        assert_eq!(prod, a);

        let proj = t2(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let b = t2(&[vec![5.0, 6.0], vec![7.0, 8.0]]);
        let out = tape.matmul(&proj, &b).unwrap();
        assert_eq!(out, t2(&[vec![5.0, 6.0], vec![0.0, 0.0]]));
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let mut tape = Tape::<f64>::inactive();
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(matches!(tape.matmul(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn softplus_values() {
        let mut tape = Tape::<f64>::inactive();
        let x = Tensor::from_vec(vec![3], vec![0.0, 50.0, -50.0]).unwrap();
        let y = tape.softplus(&x).unwrap();
        assert_eq!(y.values()[0], std::f64::consts::LN_2);
        // overflow-safe: softplus(50) is 50 to within 1e-15
        assert!((y.values()[1] - 50.0).abs() < 1e-15);
        assert!(y.values()[2] > 0.0 && y.values()[2] < 1e-20);
    }

    #[test]
    fn elu_limits() {
        let mut tape = Tape::<f64>::inactive();
        let x = Tensor::from_vec(vec![2], vec![0.0, -30.0]).unwrap();
        let y = tape.elu(&x).unwrap();
        assert_eq!(y.values()[0], 0.0);
        assert!((y.values()[1] - (-1.0)).abs() < 1e-9);
    }

    #[test]
    fn log_domain_error() {
        let mut tape = Tape::<f64>::inactive();
        let x = Tensor::from_vec(vec![2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(tape.log(&x), Err(Error::Domain(_))));
    }

    #[test]
    fn scalar_broadcast_ops() {
        let mut tape = Tape::<f64>::inactive();
        let x = Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let s = Tensor::scalar(2.0);
        assert_eq!(tape.mul(&x, &s).unwrap().values(), &[2.0, 4.0, 6.0]);
        assert_eq!(tape.mul(&s, &x).unwrap().values(), &[2.0, 4.0, 6.0]);
        assert_eq!(tape.sub(&s, &x).unwrap().values(), &[1.0, 0.0, -1.0]);
        assert_eq!(tape.div(&x, &s).unwrap().values(), &[0.5, 1.0, 1.5]);
    }

    #[test]
    fn division_by_zero_rejected() {
        let mut tape = Tape::<f64>::inactive();
        let x = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let z = Tensor::from_vec(vec![2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(tape.div(&x, &z), Err(Error::Domain(_))));
    }

    #[test]
    fn reduce_sum_and_mean() {
        let mut tape = Tape::<f64>::inactive();
        let x = Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(tape.sum_all(&x).unwrap().value(), 6.0);
        let m = t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(tape.reduce(ReduceKind::Sum, &m, Some(0)).unwrap().values(), &[4.0, 6.0]);
        assert_eq!(tape.reduce(ReduceKind::Mean, &m, Some(1)).unwrap().values(), &[1.5, 3.5]);
        assert!(tape.reduce(ReduceKind::Sum, &m, Some(2)).is_err());
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let mut tape = Tape::<f64>::active();
        let x = tape.leaf(&Tensor::filled(vec![4], 7.0), true);
        let loss = tape.mean_all(&x).unwrap();
        assert_eq!(loss.value(), 7.0);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().values(), &[0.25; 4]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut tape = Tape::<f64>::inactive();
        let logits = Tensor::zeros(vec![3, 4]);
        let loss = tape.cross_entropy_logits(&logits, &[0, 1, 3]).unwrap();
        assert!((loss.value() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturated_logits() {
        let mut tape = Tape::<f64>::inactive();
        let mut rows = Vec::new();
        for y in [0usize, 2] {
            let mut r = vec![0.0; 3];
            r[y] = 30.0;
            rows.push(r);
        }
        let logits = t2(&rows);
        let loss = tape.cross_entropy_logits(&logits, &[0, 2]).unwrap();
        assert!(loss.value() < 1e-9);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut tape = Tape::<f64>::inactive();
        let logits = Tensor::zeros(vec![2, 3]);
        assert!(matches!(
            tape.cross_entropy_logits(&logits, &[0, 3]),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::<f64>::active();
        let x = tape.leaf(&Tensor::from_vec(vec![3], vec![1.0, -2.0, 3.0]).unwrap(), true);
        let loss = tape.sum_all(&x).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_zero_scaled_is_zeros() {
        let mut tape = Tape::<f64>::active();
        let x = tape.leaf(&Tensor::from_vec(vec![3], vec![1.0, -2.0, 3.0]).unwrap(), true);
        let zero = Tensor::scalar(0.0);
        let scaled = tape.mul(&zero, &x).unwrap();
        let loss = tape.sum_all(&scaled).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::<f64>::active();
        let x = tape.leaf(&Tensor::zeros(vec![3]), true);
        let y = tape.relu(&x).unwrap();
        assert!(matches!(tape.backward(&y), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_requires_tape_handle() {
        let tape = Tape::<f64>::active();
        let loose = Tensor::<f64>::scalar(1.0);
        assert!(matches!(tape.backward(&loose), Err(Error::Contract(_))));
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient() {
        let mut tape = Tape::<f64>::active();
        let x = tape.leaf(&Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap(), true);
        let unused = tape.leaf(&Tensor::from_vec(vec![2], vec![5.0, 6.0]).unwrap(), true);
        let loss = tape.sum_all(&x).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&unused).unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn inactive_tape_records_nothing() {
        let mut tape = Tape::<f64>::inactive();
        let x = tape.leaf(&Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap(), true);
        let y = tape.square(&x).unwrap();
        assert!(x.node().is_none());
        assert!(y.node().is_none());
        assert!(tape.is_empty());
    }

    #[test]
    fn constants_never_receive_gradients() {
        let mut tape = Tape::<f64>::active();
        let c = Tensor::from_vec(vec![2], vec![3.0, 4.0]).unwrap(); // no leaf call
        let x = tape.leaf(&Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap(), true);
        let prod = tape.mul(&x, &c).unwrap();
        let loss = tape.sum_all(&prod).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads.get(&x).unwrap().values(), &[3.0, 4.0]);
        assert!(grads.get(&c).is_none());
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut tape = Tape::<f64>::active();
            let x = tape.leaf(
                &Tensor::from_vec(vec![2, 2], vec![0.3, -1.7, 2.9, 0.01]).unwrap(),
                true,
            );
            let w = tape.leaf(
                &Tensor::from_vec(vec![2, 2], vec![1.5, -0.2, 0.7, 0.9]).unwrap(),
                true,
            );
            let h = tape.matmul(&x, &w).unwrap();
            let a = tape.softplus(&h).unwrap();
            let loss = tape.mean_all(&a).unwrap();
            let grads = tape.backward(&loss).unwrap();
            (loss.value(), grads.get(&w).unwrap().values().to_vec())
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1.len(), g2.len());
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn chain_rule_matches_fused_expression() {
        let point = Tensor::from_vec(vec![3], vec![0.4, -0.9, 1.3]).unwrap();
        // staged: g(x) = x^2 + 1, f(y) = sum(log y)
        let staged = {
            let mut tape = Tape::<f64>::active();
            let x = tape.leaf(&point, true);
            let sq = tape.square(&x).unwrap();
            let one = Tensor::scalar(1.0);
            let y = tape.add(&sq, &one).unwrap();
            let lg = tape.log(&y).unwrap();
            let loss = tape.sum_all(&lg).unwrap();
            let grads = tape.backward(&loss).unwrap();
            grads.get(&x).unwrap().values().to_vec()
        };
        // fused in one closure
        let fused = {
            let mut tape = Tape::<f64>::active();
            let x = tape.leaf(&point, true);
            let one = Tensor::scalar(1.0);
            let sq = tape.square(&x).unwrap();
            let y = tape.add(&sq, &one).unwrap();
            let lg = tape.log(&y).unwrap();
            let loss = tape.sum_all(&lg).unwrap();
            let grads = tape.backward(&loss).unwrap();
            grads.get(&x).unwrap().values().to_vec()
        };
        for (a, b) in staged.iter().zip(&fused) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn select_rows_accumulates_repeats() {
        let mut tape = Tape::<f64>::active();
        let x = tape.leaf(&t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]), true);
        let sel = tape.select_rows(&x, &[0, 0, 1]).unwrap();
        let loss = tape.sum_all(&sel).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().values(), &[2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn log_mean_exp_of_constant_is_constant() {
        let mut tape = Tape::<f64>::inactive();
        let x = Tensor::filled(vec![5], 0.0);
        assert_eq!(tape.log_mean_exp(&x).unwrap().value(), 0.0);
        let c = Tensor::filled(vec![7], 3.25);
        assert!((tape.log_mean_exp(&c).unwrap().value() - 3.25).abs() < 1e-12);
    }

    #[test]
    fn concat_rows_stacks_and_splits() {
        let mut tape = Tape::<f64>::active();
        let a = tape.leaf(&Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap(), true);
        let b = tape.leaf(&Tensor::from_vec(vec![2], vec![3.0, 4.0]).unwrap(), true);
        let stack = tape.concat_rows(&[&a, &b]).unwrap();
        assert_eq!(stack.shape(), &[2, 2]);
        let first = tape.select_rows(&stack, &[0]).unwrap();
        let loss = tape.sum_all(&first).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&a).unwrap().values(), &[1.0, 1.0]);
        assert_eq!(grads.get(&b).unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn exp_overflow_is_a_domain_error() {
        let mut tape = Tape::<f64>::inactive();
        let x = Tensor::from_vec(vec![1], vec![1000.0]).unwrap();
        assert!(matches!(tape.exp(&x), Err(Error::Domain(_))));
    }

    #[test]
    fn works_at_single_precision() {
        let mut tape = Tape::<f32>::active();
        let x = tape.leaf(&crate::tensor::Tensor::<f32>::from_vec(vec![2], vec![1.0, 2.0]).unwrap(), true);
        let y = tape.square(&x).unwrap();
        let loss = tape.sum_all(&y).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().values(), &[2.0f32, 4.0]);
    }
}
