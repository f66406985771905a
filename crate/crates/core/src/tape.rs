//! Wengert tape: reverse-mode AD over dense tensors.
//!
//! Operations are recorded in forward order and replayed in reverse to
//! accumulate gradients (sum over all paths). The tape is rebuilt for every
//! forward pass (define-by-run) and is confined to one logical thread; the
//! spike nonlinearity records a hard-threshold forward with a surrogate
//! derivative backward.

use crate::error::{Error, Result};
use crate::surrogate::SurrogateSpec;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`]. Valid only for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// A recorded primitive operation; payloads are input node ids plus whatever
/// the backward rule needs.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    AddScalar { a: usize },
    Clamp { a: usize, lo: f64, hi: f64 },
    Detach { a: usize },
    Spike { v: usize, v_th: f64, spec: SurrogateSpec },
    SigmoidShift { v: usize, center: f64, steep: f64 },
    AddRow { a: usize, bias: usize },
    SoftmaxRows { a: usize },
    CeMean { p: usize, labels: Vec<usize>, eps: f64 },
    KlMean { p: usize, q: usize, eps: f64 },
    SumAll { a: usize },
    MeanAll { a: usize },
    Sqrt { a: usize },
}

/// Recorded computation graph: node values plus the op list, in topological
/// order by construction.
impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b }
            | Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::Mul { a, b } => vec![*a, *b],
            Op::AddRow { a, bias } => vec![*a, *bias],
            Op::Scale { a, .. }
            | Op::AddScalar { a }
            | Op::Clamp { a, .. }
            | Op::Detach { a }
            | Op::SoftmaxRows { a }
            | Op::CeMean { p: a, .. }
            | Op::SumAll { a }
            | Op::MeanAll { a }
            | Op::Sqrt { a } => vec![*a],
            Op::Spike { v, .. } | Op::SigmoidShift { v, .. } => vec![*v],
            Op::KlMean { p, q, .. } => vec![*p, *q],
        }
    }
}

pub struct Tape {
    ops: Vec<Op>,
    vals: Vec<Tensor>,
    rng_seed: u64,
}

impl Tape {
    pub fn new(rng_seed: u64) -> Self {
        Tape {
            ops: Vec::new(),
            vals: Vec::new(),
            rng_seed,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.0]
    }

    pub fn value_data(&self, v: Var) -> &[f64] {
        self.vals[v.0].data()
    }

    /// Accumulated gradient of a node; populated for every node once
    /// [`Tape::backward`] has run.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.vals[v.0].grad.as_deref()
    }

    /// Every node's inputs precede it in the op list; holds by construction
    /// since vars only come from this tape's own record methods.
    pub fn is_topologically_ordered(&self) -> bool {
        self.ops
            .iter()
            .enumerate()
            .all(|(idx, op)| op.inputs().iter().all(|&i| i < idx))
    }

    fn push(&mut self, op: Op, val: Tensor) -> Var {
        self.ops.push(op);
        self.vals.push(val);
        Var(self.vals.len() - 1)
    }

    /// Register a leaf tensor (input, parameter, or constant).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    // ── Linear algebra ───────────────────────────────────────────────

    /// `a[m×k] · b[k×n]`; backward is `dA = G·Bᵀ`, `dB = Aᵀ·G`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.vals[a.0].shape(), self.vals[b.0].shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dim {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.vals[a.0].data(), self.vals[b.0].data(), m, k, n);
        let val = Tensor::from_vec(vec![m, n], out)?;
        Ok(self.push(Op::MatMul { a: a.0, b: b.0 }, val))
    }

    /// `a[r×c] + bias[c]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let cols = self.vals[a.0].cols();
        if self.vals[bias.0].numel() != cols {
            return Err(Error::Dim {
                op: "add_row",
                left: self.vals[a.0].shape().to_vec(),
                right: self.vals[bias.0].shape().to_vec(),
            });
        }
        let b = self.vals[bias.0].data();
        let data: Vec<f64> = self.vals[a.0]
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % cols])
            .collect();
        let val = Tensor::from_vec(self.vals[a.0].shape().to_vec(), data)?;
        Ok(self.push(
            Op::AddRow {
                a: a.0,
                bias: bias.0,
            },
            val,
        ))
    }

    // ── Elementwise ──────────────────────────────────────────────────

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.vals[a.0].shape() != self.vals[b.0].shape() {
            return Err(Error::Dim {
                op: name,
                left: self.vals[a.0].shape().to_vec(),
                right: self.vals[b.0].shape().to_vec(),
            });
        }
        let data: Vec<f64> = self.vals[a.0]
            .data()
            .iter()
            .zip(self.vals[b.0].data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let val = Tensor::from_vec(self.vals[a.0].shape().to_vec(), data)?;
        Ok(self.push(op, val))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data: Vec<f64> = self.vals[a.0].data().iter().map(|&x| c * x).collect();
        let val = Tensor::from_vec(self.vals[a.0].shape().to_vec(), data).unwrap();
        self.push(Op::Scale { a: a.0, c }, val)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let data: Vec<f64> = self.vals[a.0].data().iter().map(|&x| x + c).collect();
        let val = Tensor::from_vec(self.vals[a.0].shape().to_vec(), data).unwrap();
        self.push(Op::AddScalar { a: a.0 }, val)
    }

    /// Box clip; gradient is 1 inside `[lo, hi]` (inclusive), 0 outside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::contract(format!("clamp interval [{lo}, {hi}]")));
        }
        let data: Vec<f64> = self.vals[a.0]
            .data()
            .iter()
            .map(|&x| x.clamp(lo, hi))
            .collect();
        let val = Tensor::from_vec(self.vals[a.0].shape().to_vec(), data)?;
        Ok(self.push(Op::Clamp { a: a.0, lo, hi }, val))
    }

    /// Identity forward, zero backward (gradient stop).
    pub fn detach(&mut self, a: Var) -> Var {
        let val = Tensor::from_vec(
            self.vals[a.0].shape().to_vec(),
            self.vals[a.0].data().to_vec(),
        )
        .unwrap();
        self.push(Op::Detach { a: a.0 }, val)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.vals[a.0].data().iter().map(|&x| x.sqrt()).collect();
        let val = Tensor::from_vec(self.vals[a.0].shape().to_vec(), data).unwrap();
        self.push(Op::Sqrt { a: a.0 }, val)
    }

    // ── Spiking nonlinearity ─────────────────────────────────────────

    /// Hard threshold: 1 iff `v >= v_th` (threshold-inclusive), else 0.
    /// Backward uses the surrogate derivative at `v - v_th`; the forward
    /// output is identical for every [`SurrogateSpec`].
    pub fn spike(&mut self, v: Var, v_th: f64, spec: SurrogateSpec) -> Var {
        let data: Vec<f64> = self.vals[v.0]
            .data()
            .iter()
            .map(|&x| if x >= v_th { 1.0 } else { 0.0 })
            .collect();
        let val = Tensor::from_vec(self.vals[v.0].shape().to_vec(), data).unwrap();
        self.push(Op::Spike { v: v.0, v_th, spec }, val)
    }

    /// Smooth stand-in for [`Tape::spike`] with the same center, used to
    /// validate the tape against finite differences.
    pub fn sigmoid_shift(&mut self, v: Var, center: f64, steep: f64) -> Var {
        let data: Vec<f64> = self.vals[v.0]
            .data()
            .iter()
            .map(|&x| 1.0 / (1.0 + (-steep * (x - center)).exp()))
            .collect();
        let val = Tensor::from_vec(self.vals[v.0].shape().to_vec(), data).unwrap();
        self.push(
            Op::SigmoidShift {
                v: v.0,
                center,
                steep,
            },
            val,
        )
    }

    // ── Probability / loss primitives ────────────────────────────────

    /// Numerically stable (max-subtracted) softmax over the last axis.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = &self.vals[a.0];
        let (rows, cols) = (t.rows(), t.cols());
        if cols < 1 {
            return Err(Error::Dim {
                op: "softmax_rows",
                left: t.shape().to_vec(),
                right: vec![],
            });
        }
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            crate::tensor::softmax_row_into(t.row(r), &mut data[r * cols..(r + 1) * cols]);
        }
        let val = Tensor::from_vec(t.shape().to_vec(), data)?;
        Ok(self.push(Op::SoftmaxRows { a: a.0 }, val))
    }

    /// Mean over rows of `-ln(max(p[i, labels[i]], eps))`.
    pub fn ce_mean(&mut self, p: Var, labels: &[usize], eps: f64) -> Result<Var> {
        let t = &self.vals[p.0];
        let (rows, cols) = (t.rows(), t.cols());
        if labels.len() != rows {
            return Err(Error::Dim {
                op: "ce_mean",
                left: vec![rows],
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= cols) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {cols} classes"
            )));
        }
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            total += -(t.row(r)[y].max(eps)).ln();
        }
        let val = Tensor::scalar(total / rows as f64);
        Ok(self.push(
            Op::CeMean {
                p: p.0,
                labels: labels.to_vec(),
                eps,
            },
            val,
        ))
    }

    /// Mean over rows of `Σ_j p_ij (ln max(p_ij, eps) - ln max(q_ij, eps))`,
    /// the clamped KL divergence; exactly zero when `p == q`, differentiable
    /// with respect to both arguments.
    pub fn kl_mean(&mut self, p: Var, q: Var, eps: f64) -> Result<Var> {
        if self.vals[p.0].shape() != self.vals[q.0].shape() {
            return Err(Error::Dim {
                op: "kl_mean",
                left: self.vals[p.0].shape().to_vec(),
                right: self.vals[q.0].shape().to_vec(),
            });
        }
        let rows = self.vals[p.0].rows();
        let total: f64 = self.vals[p.0]
            .data()
            .iter()
            .zip(self.vals[q.0].data())
            .map(|(&pi, &qi)| pi * (pi.max(eps).ln() - qi.max(eps).ln()))
            .sum();
        let val = Tensor::scalar(total / rows as f64);
        Ok(self.push(
            Op::KlMean {
                p: p.0,
                q: q.0,
                eps,
            },
            val,
        ))
    }

    // ── Reductions ───────────────────────────────────────────────────

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total: f64 = self.vals[a.0].data().iter().sum();
        self.push(Op::SumAll { a: a.0 }, Tensor::scalar(total))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.vals[a.0].numel() as f64;
        let total: f64 = self.vals[a.0].data().iter().sum();
        self.push(Op::MeanAll { a: a.0 }, Tensor::scalar(total / n))
    }

    // ── Backward pass ────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss node. Populates the grad slot of
    /// every node; nodes not on a path to the loss receive zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.vals[loss.0].is_scalar() {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.vals[loss.0].shape()
            )));
        }
        self.vals[loss.0].grad = Some(vec![1.0]);
        for idx in (0..self.ops.len()).rev() {
            if self.vals[idx].grad.is_none() {
                continue;
            }
            let op = self.ops[idx].clone();
            self.backward_op(idx, &op);
        }
        for v in &mut self.vals {
            if v.grad.is_none() {
                v.grad = Some(vec![0.0; v.numel()]);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, idx: usize, contrib: &[f64]) {
        match &mut self.vals[idx].grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += ci;
                }
            }
            None => self.vals[idx].grad = Some(contrib.to_vec()),
        }
    }

    fn backward_op(&mut self, out: usize, op: &Op) {
        let g = self.vals[out].grad.clone().unwrap();
        match op {
            Op::Leaf | Op::Detach { .. } => {}
            Op::MatMul { a, b } => {
                let (m, k) = {
                    let s = self.vals[*a].shape();
                    (s[0], s[1])
                };
                let n = self.vals[*b].shape()[1];
                // dA = G · Bᵀ
                let b_data = self.vals[*b].data();
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * b_data[p * n + j];
                        }
                        da[i * k + p] = s;
                    }
                }
                // dB = Aᵀ · G
                let a_data = self.vals[*a].data();
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for j in 0..n {
                        let mut s = 0.0;
                        for i in 0..m {
                            s += a_data[i * k + p] * g[i * n + j];
                        }
                        db[p * n + j] = s;
                    }
                }
                self.accumulate(*a, &da);
                self.accumulate(*b, &db);
            }
            Op::Add { a, b } => {
                self.accumulate(*a, &g);
                self.accumulate(*b, &g);
            }
            Op::Sub { a, b } => {
                self.accumulate(*a, &g);
                let neg: Vec<f64> = g.iter().map(|&x| -x).collect();
                self.accumulate(*b, &neg);
            }
            Op::Mul { a, b } => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.vals[*b].data())
                    .map(|(&gi, &bi)| gi * bi)
                    .collect();
                let db: Vec<f64> = g
                    .iter()
                    .zip(self.vals[*a].data())
                    .map(|(&gi, &ai)| gi * ai)
                    .collect();
                self.accumulate(*a, &da);
                self.accumulate(*b, &db);
            }
            Op::Scale { a, c } => {
                let da: Vec<f64> = g.iter().map(|&gi| c * gi).collect();
                self.accumulate(*a, &da);
            }
            Op::AddScalar { a } => self.accumulate(*a, &g),
            Op::Clamp { a, lo, hi } => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.vals[*a].data())
                    .map(|(&gi, &x)| if x >= *lo && x <= *hi { gi } else { 0.0 })
                    .collect();
                self.accumulate(*a, &da);
            }
            Op::Spike { v, v_th, spec } => {
                let dv: Vec<f64> = g
                    .iter()
                    .zip(self.vals[*v].data())
                    .map(|(&gi, &x)| gi * spec.derivative(x - v_th))
                    .collect();
                self.accumulate(*v, &dv);
            }
            Op::SigmoidShift { v, center, steep } => {
                let dv: Vec<f64> = g
                    .iter()
                    .zip(self.vals[*v].data())
                    .map(|(&gi, &x)| {
                        let s = 1.0 / (1.0 + (-steep * (x - center)).exp());
                        gi * steep * s * (1.0 - s)
                    })
                    .collect();
                self.accumulate(*v, &dv);
            }
            Op::AddRow { a, bias } => {
                let cols = self.vals[*a].cols();
                let mut dbias = vec![0.0; cols];
                for (i, &gi) in g.iter().enumerate() {
                    dbias[i % cols] += gi;
                }
                self.accumulate(*a, &g);
                self.accumulate(*bias, &dbias);
            }
            Op::SoftmaxRows { a } => {
                let (rows, cols) = (self.vals[out].rows(), self.vals[out].cols());
                let p = self.vals[out].data();
                let mut da = vec![0.0; rows * cols];
                for r in 0..rows {
                    let pr = &p[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = pr.iter().zip(gr).map(|(&pi, &gi)| pi * gi).sum();
                    for j in 0..cols {
                        da[r * cols + j] = pr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(*a, &da);
            }
            Op::CeMean { p, labels, eps } => {
                let (rows, cols) = (self.vals[*p].rows(), self.vals[*p].cols());
                let pd = self.vals[*p].data();
                let mut dp = vec![0.0; rows * cols];
                let scale = g[0] / rows as f64;
                for (r, &y) in labels.iter().enumerate() {
                    let v = pd[r * cols + y];
                    if v >= *eps {
                        dp[r * cols + y] = -scale / v;
                    }
                }
                self.accumulate(*p, &dp);
            }
            Op::KlMean { p, q, eps } => {
                let rows = self.vals[*p].rows();
                let scale = g[0] / rows as f64;
                let pd = self.vals[*p].data();
                let qd = self.vals[*q].data();
                let mut dp = vec![0.0; pd.len()];
                let mut dq = vec![0.0; qd.len()];
                for i in 0..pd.len() {
                    let (pi, qi) = (pd[i], qd[i]);
                    let log_ratio = pi.max(*eps).ln() - qi.max(*eps).ln();
                    dp[i] = scale * (log_ratio + if pi >= *eps { 1.0 } else { 0.0 });
                    dq[i] = if qi >= *eps { -scale * pi / qi } else { 0.0 };
                }
                self.accumulate(*p, &dp);
                self.accumulate(*q, &dq);
            }
            Op::SumAll { a } => {
                let da = vec![g[0]; self.vals[*a].numel()];
                self.accumulate(*a, &da);
            }
            Op::MeanAll { a } => {
                let n = self.vals[*a].numel();
                let da = vec![g[0] / n as f64; n];
                self.accumulate(*a, &da);
            }
            Op::Sqrt { a } => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.vals[*a].data())
                    .map(|(&gi, &x)| {
                        let r = x.sqrt();
                        if r > 0.0 {
                            gi * 0.5 / r
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(*a, &da);
            }
        }
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{SurrogateKind, SurrogateSpec};

    fn tape() -> Tape {
        Tape::new(0)
    }

    #[test]
    fn matmul_identity() {
        let mut t = tape();
        let i2 = t
            .input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = t.input(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let out = t.matmul(i2, m).unwrap();
        assert_eq!(t.value_data(out), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_projector() {
        let mut t = tape();
        let p = t.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let v = t.input(Tensor::matrix(2, 1, vec![5.0, 7.0]).unwrap());
        let out = t.matmul(p, v).unwrap();
        assert_eq!(t.value_data(out), &[5.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut t = tape();
        let a = t.input(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = t.input(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        match t.matmul(a, b) {
            Err(Error::Dim { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected Dim error, got {other:?}"),
        }
    }

    #[test]
    fn elementwise_trivials() {
        let mut t = tape();
        let a = t.input(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
        let b = t.input(Tensor::from_vec(vec![2], vec![3.0, 4.0]).unwrap());
        let s = t.add(a, b).unwrap();
        assert_eq!(t.value_data(s), &[4.0, 6.0]);

        let c = t.input(Tensor::from_vec(vec![2], vec![2.0, 3.0]).unwrap());
        let d = t.input(Tensor::from_vec(vec![2], vec![0.0, 5.0]).unwrap());
        let m = t.mul(c, d).unwrap();
        assert_eq!(t.value_data(m), &[0.0, 15.0]);

        let e = t.input(Tensor::from_vec(vec![3], vec![-0.2, 0.5, 1.3]).unwrap());
        let cl = t.clamp(e, 0.0, 1.0).unwrap();
        assert_eq!(t.value_data(cl), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn spike_threshold_inclusive_and_binary() {
        let mut t = tape();
        let v = t.input(Tensor::from_vec(vec![3], vec![0.3, 0.5, 0.7]).unwrap());
        let s = t.spike(v, 0.5, SurrogateSpec::default());
        assert_eq!(t.value_data(s), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn spike_forward_identical_across_surrogates() {
        let data = vec![-0.4, 0.1, 0.5, 0.9, 2.0];
        let mut outs = Vec::new();
        for kind in [
            SurrogateKind::Triangle,
            SurrogateKind::Rectangle,
            SurrogateKind::SigmoidDerivative,
        ] {
            let mut t = tape();
            let v = t.input(Tensor::from_vec(vec![5], data.clone()).unwrap());
            let s = t.spike(v, 0.5, SurrogateSpec::new(kind, 0.8).unwrap());
            outs.push(t.value_data(s).to_vec());
        }
        assert_eq!(outs[0], outs[1]);
        assert_eq!(outs[0], outs[2]);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut t = tape();
        let x = t.input(Tensor::matrix(2, 3, vec![0.5; 6]).unwrap());
        let loss = t.sum_all(x);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_product_swaps_values() {
        let mut t = tape();
        let x = t.input(Tensor::scalar(2.0));
        let y = t.input(Tensor::scalar(3.0));
        let p = t.mul(x, y).unwrap();
        t.backward(p).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[3.0]);
        assert_eq!(t.grad(y).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut t = tape();
        let x = t.input(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_accumulates_over_paths_and_zeroes_unreachable() {
        let mut t = tape();
        let x = t.input(Tensor::scalar(3.0));
        let unused = t.input(Tensor::scalar(9.0));
        let sq = t.mul(x, x).unwrap(); // d/dx x^2 = 2x via two paths
        t.backward(sq).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[6.0]);
        assert_eq!(t.grad(unused).unwrap(), &[0.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut t = tape();
        let x = t.input(Tensor::scalar(2.0));
        let d = t.detach(x);
        let y = t.input(Tensor::scalar(5.0));
        let p = t.mul(d, y).unwrap();
        t.backward(p).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.0]);
        assert_eq!(t.grad(y).unwrap(), &[2.0]);
    }

    #[test]
    fn forward_determinism_bitwise() {
        let run = || {
            let mut t = tape();
            let a = t.input(Tensor::matrix(2, 2, vec![0.3, -1.2, 0.77, 0.001]).unwrap());
            let b = t.input(Tensor::matrix(2, 2, vec![1.5, 0.25, -0.5, 2.0]).unwrap());
            let m = t.matmul(a, b).unwrap();
            let s = t.spike(m, 0.5, SurrogateSpec::default());
            let sm = t.softmax_rows(s).unwrap();
            t.value_data(sm).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ce_mean_rejects_bad_label() {
        let mut t = tape();
        let p = t.input(Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap());
        assert!(matches!(
            t.ce_mean(p, &[2], 1e-12),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn kl_mean_zero_on_identical_inputs() {
        let mut t = tape();
        let p = t.input(Tensor::matrix(1, 3, vec![0.2, 0.3, 0.5]).unwrap());
        let q = t.input(Tensor::matrix(1, 3, vec![0.2, 0.3, 0.5]).unwrap());
        let kl = t.kl_mean(p, q, 1e-12).unwrap();
        assert_eq!(t.value_data(kl), &[0.0]);
    }

    #[test]
    fn recorded_graph_is_topologically_ordered() {
        let mut t = tape();
        let a = t.input(Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let b = t.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = t.matmul(a, b).unwrap();
        let s = t.spike(m, 0.2, SurrogateSpec::default());
        let d = t.detach(s);
        let p = t.softmax_rows(d).unwrap();
        let q = t.softmax_rows(m).unwrap();
        let kl = t.kl_mean(p, q, 1e-12).unwrap();
        let _ = t.sum_all(kl);
        assert!(t.is_topologically_ordered());
    }
}
