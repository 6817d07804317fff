//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Operations append nodes to a [`Tape`] in evaluation order, so node inputs
//! always precede the node itself. [`Tape::backward`] walks the nodes once in
//! reverse and accumulates gradients into every reachable input.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::params::{ParamId, ParamSet};
use super::tensor::{ensure_finite, gemm, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a specific [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

/// Ragged partition of a column of values into consecutive segments.
///
/// `offsets` has one more entry than there are segments; segment `r` covers
/// `offsets[r]..offsets[r + 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    /// Builds segments from per-segment lengths. Every segment must be non-empty.
    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut offsets = vec![0];
        let mut total = 0;
        for len in lengths {
            if len == 0 {
                return Err(Error::domain("segments must be non-empty"));
            }
            total += len;
            offsets.push(total);
        }
        Ok(Self { offsets })
    }

    /// `count` segments of `width` values each.
    pub fn uniform(count: usize, width: usize) -> Result<Self> {
        Self::from_lengths(std::iter::repeat_n(width, count))
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn range(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r + 1]
    }

    /// Index of the first value of every segment.
    pub fn starts(&self) -> Vec<usize> {
        self.offsets[..self.offsets.len() - 1].to_vec()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    L2NormalizeRows(usize),
    Exp(usize),
    Ln(usize),
    LogSumExpRows(usize),
    SumRows(usize),
    Sum(usize),
    Mean(usize),
    GatherRows(usize, Vec<usize>),
    PairDot {
        queries: usize,
        keys: usize,
        pairs: Vec<(usize, usize)>,
        scale: f64,
    },
    PairConcat {
        queries: usize,
        keys: usize,
        pairs: Vec<(usize, usize)>,
    },
    SegmentLogSumExp(usize, Segments),
    SegmentSum(usize, Segments),
    Reshape(usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a computation for reverse-mode differentiation.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: HashMap<ParamId, usize>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass.
pub struct Gradients {
    tape: u64,
    nodes: Vec<Option<Tensor>>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if the loss depends on it.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.nodes.get(var.index).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.index()).and_then(Option::as_ref)
    }

    /// Per-parameter gradients indexed like the [`ParamSet`] they came from.
    pub fn params(&self) -> &[Option<Tensor>] {
        &self.params
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        assert_eq!(var.tape, self.id, "variable belongs to a different tape");
        &self.nodes[var.index].value
    }

    fn check(&self, var: Var) -> Result<usize> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(Error::State(
                "variable was not recorded on this tape".to_string(),
            ));
        }
        Ok(var.index)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn push_checked(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        ensure_finite(op_name, value.data())?;
        Ok(self.push(value, op))
    }

    /// Records a constant input; no gradient is reported for it other than via [`Gradients::wrt`].
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a parameter leaf. Repeated calls with the same id reuse one node.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if let Some(&index) = self.params.get(&id) {
            return Var {
                tape: self.id,
                index,
            };
        }
        let var = self.push(params.get(id).clone(), Op::Param);
        self.params.insert(id, var.index);
        var
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ad, bd) = (self.nodes[ia].value.dims2()?, self.nodes[ib].value.dims2()?);
        if ad.1 != bd.0 {
            return Err(Error::shape("matmul", format!("{ad:?} x {bd:?}")));
        }
        let (c, m, n) = gemm(
            self.nodes[ia].value.data(),
            ad,
            false,
            self.nodes[ib].value.data(),
            bd,
            false,
        );
        self.push_checked("matmul", Tensor::from_parts(vec![m, n], c), Op::MatMul(ia, ib))
    }

    /// Adds a 1×m (or m-element) row to every row of an n×m matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(row)?);
        let (n, m) = self.nodes[ia].value.dims2()?;
        let bias = self.nodes[ib].value.data();
        if bias.len() != m {
            return Err(Error::shape("add_row", format!("row of {} vs {m} columns", bias.len())));
        }
        let mut out = self.nodes[ia].value.data().to_vec();
        for r in 0..n {
            for (o, b) in out[r * m..(r + 1) * m].iter_mut().zip(bias) {
                *o += b;
            }
        }
        self.push_checked("add_row", Tensor::from_parts(vec![n, m], out), Op::AddRow(ia, ib))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.shape() != vb.shape() {
            return Err(Error::shape(name, format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let out: Vec<f64> = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let shape = va.shape().to_vec();
        self.push_checked(name, Tensor::from_parts(shape, out), op(ia, ib))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        let out: Vec<f64> = v.data().iter().map(|x| f(*x)).collect();
        let shape = v.shape().to_vec();
        self.push_checked(name, Tensor::from_parts(shape, out), op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.check(a)?;
        self.map("scale", a, |x| x * c, Op::Scale(ia, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.check(a)?;
        self.map("add_scalar", a, |x| x + c, Op::AddScalar(ia))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.map("relu", a, |x| x.max(0.0), Op::Relu(ia))
    }

    /// Elementwise `exp`. Overflow is reported as [`Error::Overflow`], never clamped.
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        if let Some(&big) = v.data().iter().find(|x| x.exp().is_infinite()) {
            return Err(Error::Overflow { op: "exp", value: big });
        }
        self.map("exp", a, f64::exp, Op::Exp(ia))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        if self.nodes[ia].value.data().iter().any(|x| *x <= 0.0) {
            return Err(Error::domain("ln of a non-positive value"));
        }
        self.map("ln", a, f64::ln, Op::Ln(ia))
    }

    /// Divides every row by its Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        let (n, m) = v.dims2()?;
        let mut out = v.data().to_vec();
        for r in 0..n {
            let row = &mut out[r * m..(r + 1) * m];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                return Err(Error::domain(format!("cannot normalize zero row {r}")));
            }
            row.iter_mut().for_each(|x| *x /= norm);
        }
        self.push_checked(
            "l2_normalize_rows",
            Tensor::from_parts(vec![n, m], out),
            Op::L2NormalizeRows(ia),
        )
    }

    /// Row-wise `max + ln Σ exp(x − max)`: n×m → n×1.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let (n, m) = self.nodes[ia].value.dims2()?;
        if m == 0 {
            return Err(Error::domain("logsumexp over an empty row"));
        }
        let v = &self.nodes[ia].value;
        let out: Vec<f64> = (0..n).map(|r| lse_unchecked(v.row(r))).collect();
        self.push_checked(
            "logsumexp_rows",
            Tensor::from_parts(vec![n, 1], out),
            Op::LogSumExpRows(ia),
        )
    }

    /// Row sums: n×m → n×1.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let (n, _) = self.nodes[ia].value.dims2()?;
        let v = &self.nodes[ia].value;
        let out: Vec<f64> = (0..n).map(|r| v.row(r).iter().sum()).collect();
        self.push_checked("sum_rows", Tensor::from_parts(vec![n, 1], out), Op::SumRows(ia))
    }

    /// Sum of all entries, as a 1×1 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let s: f64 = self.nodes[ia].value.data().iter().sum();
        self.push_checked("sum", Tensor::from_parts(vec![1, 1], vec![s]), Op::Sum(ia))
    }

    /// Mean of all entries, as a 1×1 tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        if v.is_empty() {
            return Err(Error::domain("mean of an empty tensor"));
        }
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push_checked("mean", Tensor::from_parts(vec![1, 1], vec![s]), Op::Mean(ia))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.gather_rows(indices)?;
        Ok(self.push(out, Op::GatherRows(ia, indices.to_vec())))
    }

    /// `scale · queries[r] · keys[k]` for every `(r, k)` pair: P×1.
    pub fn pair_dot(
        &mut self,
        queries: Var,
        keys: Var,
        pairs: &[(usize, usize)],
        scale: f64,
    ) -> Result<Var> {
        let (iq, ik) = (self.check(queries)?, self.check(keys)?);
        let (q, k) = (&self.nodes[iq].value, &self.nodes[ik].value);
        let ((nq, d), (nk, dk)) = (q.dims2()?, k.dims2()?);
        if d != dk {
            return Err(Error::shape("pair_dot", format!("query dim {d} vs key dim {dk}")));
        }
        let mut out = Vec::with_capacity(pairs.len());
        for &(r, j) in pairs {
            if r >= nq {
                return Err(Error::IndexOutOfRange { index: r, len: nq });
            }
            if j >= nk {
                return Err(Error::IndexOutOfRange { index: j, len: nk });
            }
            out.push(scale * dot(q.row(r), k.row(j)));
        }
        let op = Op::PairDot {
            queries: iq,
            keys: ik,
            pairs: pairs.to_vec(),
            scale,
        };
        self.push_checked("pair_dot", Tensor::from_parts(vec![pairs.len(), 1], out), op)
    }

    /// `[queries[r], keys[k]]` for every pair: P×(dq+dk).
    pub fn pair_concat(&mut self, queries: Var, keys: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let (iq, ik) = (self.check(queries)?, self.check(keys)?);
        let (q, k) = (&self.nodes[iq].value, &self.nodes[ik].value);
        let ((nq, dq), (nk, dk)) = (q.dims2()?, k.dims2()?);
        let mut out = Vec::with_capacity(pairs.len() * (dq + dk));
        for &(r, j) in pairs {
            if r >= nq {
                return Err(Error::IndexOutOfRange { index: r, len: nq });
            }
            if j >= nk {
                return Err(Error::IndexOutOfRange { index: j, len: nk });
            }
            out.extend_from_slice(q.row(r));
            out.extend_from_slice(k.row(j));
        }
        let op = Op::PairConcat {
            queries: iq,
            keys: ik,
            pairs: pairs.to_vec(),
        };
        Ok(self.push(Tensor::from_parts(vec![pairs.len(), dq + dk], out), op))
    }

    /// Log-sum-exp of each segment of a P×1 column: P×1 → S×1.
    pub fn segment_logsumexp(&mut self, a: Var, segments: &Segments) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.data();
        if v.len() != segments.total() {
            return Err(Error::shape(
                "segment_logsumexp",
                format!("{} values vs {} segmented", v.len(), segments.total()),
            ));
        }
        let out: Vec<f64> = (0..segments.count())
            .map(|s| lse_unchecked(&v[segments.range(s)]))
            .collect();
        self.push_checked(
            "segment_logsumexp",
            Tensor::from_parts(vec![segments.count(), 1], out),
            Op::SegmentLogSumExp(ia, segments.clone()),
        )
    }

    /// Plain sum of each segment: P×1 → S×1.
    pub fn segment_sum(&mut self, a: Var, segments: &Segments) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.data();
        if v.len() != segments.total() {
            return Err(Error::shape(
                "segment_sum",
                format!("{} values vs {} segmented", v.len(), segments.total()),
            ));
        }
        let out: Vec<f64> = (0..segments.count())
            .map(|s| v[segments.range(s)].iter().sum())
            .collect();
        self.push_checked(
            "segment_sum",
            Tensor::from_parts(vec![segments.count(), 1], out),
            Op::SegmentSum(ia, segments.clone()),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.reshape(shape)?;
        Ok(self.push(out, Op::Reshape(ia)))
    }

    /// Reverse pass from a one-element output with seed gradient 1.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.backward_with(output, 1.0)
    }

    /// Reverse pass from a one-element output with the given seed gradient.
    pub fn backward_with(&self, output: Var, output_grad: f64) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called before any forward computation".into()));
        }
        let out = self.check(output)?;
        if self.nodes[out].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output has shape {:?}, expected one element", self.nodes[out].value.shape()),
            ));
        }
        if !output_grad.is_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out] = Some(Tensor::from_parts(
            self.nodes[out].value.shape().to_vec(),
            vec![output_grad],
        ));

        for i in (0..=out).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let max_param = self.params.keys().map(|p| p.index() + 1).max().unwrap_or(0);
        let mut params: Vec<Option<Tensor>> = (0..max_param).map(|_| None).collect();
        for (&id, &node) in &self.params {
            params[id.index()] = grads[node].clone();
        }
        for g in grads.iter().flatten() {
            ensure_finite("backward", g.data())?;
        }
        Ok(Gradients {
            tape: self.id,
            nodes: grads,
            params,
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (ad, bd) = (va.dims2()?, vb.dims2()?);
                let gdims = (ad.0, bd.1);
                let (da, _, _) = gemm(gd, gdims, false, vb.data(), bd, true);
                let (db, _, _) = gemm(va.data(), ad, true, gd, gdims, false);
                accumulate(grads, *a, va.shape(), &da);
                accumulate(grads, *b, vb.shape(), &db);
            }
            Op::AddRow(a, b) => {
                let (n, m) = node.value.dims2()?;
                accumulate(grads, *a, node.value.shape(), gd);
                let mut db = vec![0.0; m];
                for r in 0..n {
                    for (acc, x) in db.iter_mut().zip(&gd[r * m..(r + 1) * m]) {
                        *acc += x;
                    }
                }
                let shape = self.nodes[*b].value.shape().to_vec();
                accumulate(grads, *b, &shape, &db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, node.value.shape(), gd);
                accumulate(grads, *b, node.value.shape(), gd);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, node.value.shape(), gd);
                let neg: Vec<f64> = gd.iter().map(|x| -x).collect();
                accumulate(grads, *b, node.value.shape(), &neg);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                let da: Vec<f64> = gd.iter().zip(vb).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = gd.iter().zip(va).map(|(g, x)| g * x).collect();
                accumulate(grads, *a, node.value.shape(), &da);
                accumulate(grads, *b, node.value.shape(), &db);
            }
            Op::Scale(a, c) => {
                let da: Vec<f64> = gd.iter().map(|x| x * c).collect();
                accumulate(grads, *a, node.value.shape(), &da);
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                let shape = self.nodes[*a].value.shape().to_vec();
                accumulate(grads, *a, &shape, gd);
            }
            Op::Relu(a) => {
                let x = self.nodes[*a].value.data();
                let da: Vec<f64> = gd
                    .iter()
                    .zip(x)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(grads, *a, node.value.shape(), &da);
            }
            Op::Exp(a) => {
                let da: Vec<f64> = gd.iter().zip(node.value.data()).map(|(g, y)| g * y).collect();
                accumulate(grads, *a, node.value.shape(), &da);
            }
            Op::Ln(a) => {
                let x = self.nodes[*a].value.data();
                let da: Vec<f64> = gd.iter().zip(x).map(|(g, x)| g / x).collect();
                accumulate(grads, *a, node.value.shape(), &da);
            }
            Op::L2NormalizeRows(a) => {
                let x = &self.nodes[*a].value;
                let (n, m) = x.dims2()?;
                let y = node.value.data();
                let mut da = vec![0.0; n * m];
                for r in 0..n {
                    let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let (yr, gr) = (&y[r * m..(r + 1) * m], &gd[r * m..(r + 1) * m]);
                    let proj = dot(yr, gr);
                    for c in 0..m {
                        da[r * m + c] = (gr[c] - yr[c] * proj) / norm;
                    }
                }
                accumulate(grads, *a, x.shape(), &da);
            }
            Op::LogSumExpRows(a) => {
                let x = &self.nodes[*a].value;
                let (n, m) = x.dims2()?;
                let out = node.value.data();
                let mut da = vec![0.0; n * m];
                for r in 0..n {
                    for c in 0..m {
                        da[r * m + c] = gd[r] * (x.data()[r * m + c] - out[r]).exp();
                    }
                }
                accumulate(grads, *a, x.shape(), &da);
            }
            Op::SumRows(a) => {
                let x = &self.nodes[*a].value;
                let (n, m) = x.dims2()?;
                let mut da = vec![0.0; n * m];
                for r in 0..n {
                    da[r * m..(r + 1) * m].iter_mut().for_each(|v| *v = gd[r]);
                }
                accumulate(grads, *a, x.shape(), &da);
            }
            Op::Sum(a) => {
                let x = &self.nodes[*a].value;
                let da = vec![gd[0]; x.len()];
                accumulate(grads, *a, x.shape(), &da);
            }
            Op::Mean(a) => {
                let x = &self.nodes[*a].value;
                let da = vec![gd[0] / x.len() as f64; x.len()];
                accumulate(grads, *a, x.shape(), &da);
            }
            Op::GatherRows(a, idx) => {
                let x = &self.nodes[*a].value;
                let m = x.cols();
                let mut da = vec![0.0; x.len()];
                for (k, &r) in idx.iter().enumerate() {
                    for c in 0..m {
                        da[r * m + c] += gd[k * m + c];
                    }
                }
                accumulate(grads, *a, x.shape(), &da);
            }
            Op::PairDot {
                queries,
                keys,
                pairs,
                scale,
            } => {
                let (q, k) = (&self.nodes[*queries].value, &self.nodes[*keys].value);
                let d = q.cols();
                let mut dq = vec![0.0; q.len()];
                let mut dk = vec![0.0; k.len()];
                for (p, &(r, j)) in pairs.iter().enumerate() {
                    let w = gd[p] * scale;
                    if w == 0.0 {
                        continue;
                    }
                    let (qr, kj) = (q.row(r), k.row(j));
                    for c in 0..d {
                        dq[r * d + c] += w * kj[c];
                        dk[j * d + c] += w * qr[c];
                    }
                }
                accumulate(grads, *queries, q.shape(), &dq);
                accumulate(grads, *keys, k.shape(), &dk);
            }
            Op::PairConcat {
                queries,
                keys,
                pairs,
            } => {
                let (q, k) = (&self.nodes[*queries].value, &self.nodes[*keys].value);
                let (dqc, dkc) = (q.cols(), k.cols());
                let w = dqc + dkc;
                let mut dq = vec![0.0; q.len()];
                let mut dk = vec![0.0; k.len()];
                for (p, &(r, j)) in pairs.iter().enumerate() {
                    let gp = &gd[p * w..(p + 1) * w];
                    for c in 0..dqc {
                        dq[r * dqc + c] += gp[c];
                    }
                    for c in 0..dkc {
                        dk[j * dkc + c] += gp[dqc + c];
                    }
                }
                accumulate(grads, *queries, q.shape(), &dq);
                accumulate(grads, *keys, k.shape(), &dk);
            }
            Op::SegmentLogSumExp(a, segs) => {
                let x = &self.nodes[*a].value;
                let out = node.value.data();
                let mut da = vec![0.0; x.len()];
                for s in 0..segs.count() {
                    for p in segs.range(s) {
                        da[p] = gd[s] * (x.data()[p] - out[s]).exp();
                    }
                }
                accumulate(grads, *a, x.shape(), &da);
            }
            Op::SegmentSum(a, segs) => {
                let x = &self.nodes[*a].value;
                let mut da = vec![0.0; x.len()];
                for s in 0..segs.count() {
                    da[segs.range(s)].iter_mut().for_each(|v| *v = gd[s]);
                }
                accumulate(grads, *a, x.shape(), &da);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], index: usize, shape: &[usize], delta: &[f64]) {
    match &mut grads[index] {
        Some(g) => {
            for (acc, d) in g.data_mut().iter_mut().zip(delta) {
                *acc += d;
            }
        }
        slot @ None => *slot = Some(Tensor::from_parts(shape.to_vec(), delta.to_vec())),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Shifted log-sum-exp of a non-empty finite slice.
pub(crate) fn lse_unchecked(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}
