//! Reverse-mode gradient tape.
//!
//! Operations are recorded at tensor granularity: each node stores its value
//! and the op that produced it, and the backward pass replays the ops in
//! exact reverse order, applying one vector-Jacobian product per op.
//! Gradient accumulation is a sequential sum in reverse recording order, so
//! identical tapes produce bit-identical gradients.
//!
//! The tape is single-writer: one tape per training step, never shared
//! across threads. Repeated `backward` calls accumulate on top of existing
//! gradients; call [`Tape::reset_gradients`] first if a fresh pass is wanted.

use crate::error::{Error, Result};
use crate::grid::{clamp_for_arccos, normalize_rows_data, row_norm};
use crate::scalar::Scalar;
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// One recorded primitive. Ops hold only node references and small scalars;
/// the saved inputs live in the node arena.
#[derive(Debug, Clone, Copy)]
enum Op<F> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, F),
    AddConst(NodeId, F),
    /// A[m,k] @ B[k,n]
    Matmul(NodeId, NodeId),
    /// A[m,k] @ B[n,k]^T
    MatmulNt(NodeId, NodeId),
    /// A[k,m]^T @ B[k,n]
    MatmulTn(NodeId, NodeId),
    /// X @ X^T with the upper triangle mirrored bitwise.
    Gram(NodeId),
    NormalizeRows { input: NodeId, epsilon: F },
    SoftmaxRows { input: NodeId, sharpness: F },
    LogSumExpRows(NodeId),
    TakeDiag(NodeId),
    ReplaceDiag { matrix: NodeId, diag: NodeId },
    Arccos(NodeId),
    Cos(NodeId),
    ClampMax { input: NodeId, cap: F },
    LeakyRelu { input: NodeId, slope: F },
    AbsSum(NodeId),
    Sum(NodeId),
    ConcatCols(NodeId, NodeId),
    Reshape(NodeId),
    /// [N,C] plus a length-C bias broadcast over rows.
    AddBiasRows { input: NodeId, bias: NodeId },
    Conv2d { input: NodeId, kernel: NodeId, bias: NodeId, stride: usize, pad: usize },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Tensor<F>>>,
    params: Vec<(String, NodeId)>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        id
    }

    /// Leaf node for data that gradients may flow to but that is not a
    /// trainable parameter.
    pub fn input(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Named leaf; its gradient is retrievable through [`Tape::param_grad`].
    pub fn parameter(&mut self, name: &str, value: Tensor<F>) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.params.push((name.to_string(), id));
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    // ── Traced operations ────────────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: F) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: NodeId, c: F) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a, c))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::Matmul(a, b))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul_nt(self.value(a), self.value(b));
        self.push(v, Op::MatmulNt(a, b))
    }

    pub fn matmul_tn(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul_tn(self.value(a), self.value(b));
        self.push(v, Op::MatmulTn(a, b))
    }

    /// X @ X^T for X[N,C]. The lower triangle is computed once and mirrored,
    /// so the result is symmetric bitwise.
    pub fn gram(&mut self, x: NodeId) -> NodeId {
        let xt = self.value(x);
        assert_eq!(xt.dims().len(), 2, "gram expects a matrix");
        let (n, c) = (xt.dims()[0], xt.dims()[1]);
        let data = xt.data();
        let mut out = vec![F::zero(); n * n];
        for i in 0..n {
            let ri = &data[i * c..(i + 1) * c];
            for j in 0..=i {
                let rj = &data[j * c..(j + 1) * c];
                let dot = ri
                    .iter()
                    .zip(rj.iter())
                    .fold(F::zero(), |acc, (&a, &b)| acc + a * b);
                out[i * n + j] = dot;
                out[j * n + i] = dot;
            }
        }
        let v = Tensor::new(vec![n, n], out).unwrap();
        self.push(v, Op::Gram(x))
    }

    pub fn normalize_rows(&mut self, input: NodeId, epsilon: F) -> NodeId {
        assert!(epsilon > F::zero());
        let t = self.value(input);
        assert_eq!(t.dims().len(), 2, "normalize_rows expects a matrix");
        let channels = t.dims()[1];
        let data = normalize_rows_data(t.data(), channels, epsilon);
        let v = Tensor::new(t.dims().to_vec(), data).unwrap();
        self.push(v, Op::NormalizeRows { input, epsilon })
    }

    pub fn softmax_rows(&mut self, input: NodeId, sharpness: F) -> NodeId {
        let v = crate::grid::softmax_rows(self.value(input), sharpness);
        self.push(v, Op::SoftmaxRows { input, sharpness })
    }

    /// Row-wise log(sum(exp(x))) of an [N,M] matrix, max-shifted.
    pub fn logsumexp_rows(&mut self, input: NodeId) -> NodeId {
        let t = self.value(input);
        assert_eq!(t.dims().len(), 2);
        let mut out = Vec::with_capacity(t.dims()[0]);
        for row in t.rows() {
            let hi = row.iter().fold(F::neg_infinity(), |acc, &x| acc.max(x));
            let sum = row
                .iter()
                .fold(F::zero(), |acc, &x| acc + (x - hi).exp());
            out.push(hi + sum.ln());
        }
        let v = Tensor::new(vec![t.dims()[0]], out).unwrap();
        self.push(v, Op::LogSumExpRows(input))
    }

    pub fn take_diag(&mut self, input: NodeId) -> NodeId {
        let t = self.value(input);
        assert_eq!(t.dims().len(), 2);
        assert_eq!(t.dims()[0], t.dims()[1], "take_diag expects square");
        let n = t.dims()[0];
        let data: Vec<F> = (0..n).map(|i| t.at(i, i)).collect();
        let v = Tensor::new(vec![n], data).unwrap();
        self.push(v, Op::TakeDiag(input))
    }

    pub fn replace_diag(&mut self, matrix: NodeId, diag: NodeId) -> NodeId {
        let m = self.value(matrix);
        let d = self.value(diag);
        assert_eq!(m.dims().len(), 2);
        assert_eq!(m.dims()[0], m.dims()[1]);
        assert_eq!(d.len(), m.dims()[0]);
        let n = m.dims()[0];
        let mut data = m.data().to_vec();
        for i in 0..n {
            data[i * n + i] = d.data()[i];
        }
        let v = Tensor::new(vec![n, n], data).unwrap();
        self.push(v, Op::ReplaceDiag { matrix, diag })
    }

    /// Elementwise arccos with inputs clamped to [-1+1e-7, 1-1e-7]; the
    /// derivative is evaluated at the clamped argument.
    pub fn arccos(&mut self, input: NodeId) -> NodeId {
        let v = self.value(input).map(|x| clamp_for_arccos(x).acos());
        self.push(v, Op::Arccos(input))
    }

    pub fn cos(&mut self, input: NodeId) -> NodeId {
        let v = self.value(input).map(|x| x.cos());
        self.push(v, Op::Cos(input))
    }

    pub fn clamp_max(&mut self, input: NodeId, cap: F) -> NodeId {
        let v = self.value(input).map(|x| x.min(cap));
        self.push(v, Op::ClampMax { input, cap })
    }

    pub fn leaky_relu(&mut self, input: NodeId, slope: F) -> NodeId {
        let v = self
            .value(input)
            .map(|x| if x > F::zero() { x } else { x * slope });
        self.push(v, Op::LeakyRelu { input, slope })
    }

    /// Sum of absolute values, as a scalar node.
    pub fn abs_sum(&mut self, input: NodeId) -> NodeId {
        let s = self
            .value(input)
            .data()
            .iter()
            .fold(F::zero(), |acc, &x| acc + x.abs());
        self.push(Tensor::scalar(s), Op::AbsSum(input))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).sum();
        self.push(Tensor::scalar(s), Op::Sum(input))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.dims().len(), 2);
        assert_eq!(tb.dims().len(), 2);
        assert_eq!(ta.dims()[0], tb.dims()[0], "concat_cols row mismatch");
        let (n, ca, cb) = (ta.dims()[0], ta.dims()[1], tb.dims()[1]);
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(&ta.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&tb.data()[i * cb..(i + 1) * cb]);
        }
        let v = Tensor::new(vec![n, ca + cb], data).unwrap();
        self.push(v, Op::ConcatCols(a, b))
    }

    pub fn reshape(&mut self, input: NodeId, dims: Vec<usize>) -> NodeId {
        let v = self.value(input).reshaped(dims).expect("reshape size");
        self.push(v, Op::Reshape(input))
    }

    pub fn add_bias_rows(&mut self, input: NodeId, bias: NodeId) -> NodeId {
        let t = self.value(input);
        let b = self.value(bias);
        assert_eq!(t.dims().len(), 2);
        assert_eq!(b.len(), t.dims()[1], "bias length");
        let c = t.dims()[1];
        let mut data = t.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            for (x, &bv) in row.iter_mut().zip(b.data()) {
                *x = *x + bv;
            }
        }
        let v = Tensor::new(t.dims().to_vec(), data).unwrap();
        self.push(v, Op::AddBiasRows { input, bias })
    }

    /// 2-D convolution over an [H,W,Cin] input with an [kh,kw,Cin,Cout]
    /// kernel, zero padding `pad` and square stride.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) -> NodeId {
        let v = conv2d_forward(
            self.value(input),
            self.value(kernel),
            self.value(bias),
            stride,
            pad,
        );
        self.push(v, Op::Conv2d { input, kernel, bias, stride, pad })
    }

    /// Distance of the recorded computation to its nearest non-smooth point
    /// (abs at zero, leaky-relu at zero, clamp boundaries, the arccos clamp,
    /// the normalize epsilon branch). Finite-difference checks reject
    /// instances where this is small, since the two-sided difference would
    /// straddle a kink. Infinite when no kinked op was recorded.
    pub fn min_kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        let mut fold = |m: f64| {
            if m < margin {
                margin = m;
            }
        };
        for node in &self.nodes {
            match node.op {
                Op::AbsSum(input) => {
                    for &x in self.value(input).data() {
                        fold(x.abs().to_f64());
                    }
                }
                Op::LeakyRelu { input, .. } => {
                    for &x in self.value(input).data() {
                        fold(x.abs().to_f64());
                    }
                }
                Op::ClampMax { input, cap } => {
                    for &x in self.value(input).data() {
                        fold((x - cap).abs().to_f64());
                    }
                }
                Op::Arccos(input) => {
                    // Clamped inputs are themselves invalid: the true local
                    // derivative is zero there while the recorded one is not.
                    let hi = 1.0 - crate::grid::ARCCOS_CLAMP;
                    for &x in self.value(input).data() {
                        fold(hi - x.abs().to_f64());
                    }
                }
                Op::NormalizeRows { input, epsilon } => {
                    let c = self.value(input).dims()[1];
                    for row in self.value(input).data().chunks_exact(c) {
                        fold((row_norm(row) - epsilon).abs().to_f64());
                    }
                }
                _ => {}
            }
        }
        margin
    }

    // ── Backward pass ────────────────────────────────────────────────

    pub fn reset_gradients(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.grads[id.0].as_ref()
    }

    /// Gradient of a named parameter; zeros if no gradient flowed to it.
    pub fn param_grad(&self, name: &str) -> Option<Tensor<F>> {
        let (_, id) = self.params.iter().find(|(n, _)| n == name)?;
        Some(match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[id.0].value.dims().to_vec()),
        })
    }

    fn accumulate(&mut self, id: NodeId, delta: Tensor<F>) {
        match &mut self.grads[id.0] {
            Some(acc) => {
                debug_assert_eq!(acc.dims(), delta.dims());
                for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                    *a = *a + *d;
                }
            }
            None => self.grads[id.0] = Some(delta),
        }
    }

    /// Reverse sweep seeding `d loss / d loss = 1`. Errors if `loss` is not
    /// a scalar node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::DimensionMismatch(format!(
                "backward seed must be scalar, got dims {:?}",
                self.nodes[loss.0].value.dims()
            )));
        }
        // Interior grads are scratch for this pass; only leaf accumulators
        // (parameters and inputs) persist across backward calls.
        for (node, g) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        self.accumulate(loss, Tensor::scalar(F::one()));

        for i in (0..=loss.0).rev() {
            let g = match &self.grads[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            let op = self.nodes[i].op;
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(b), |gv, bv| gv * bv);
                    let db = g.zip_map(self.value(a), |gv, av| gv * av);
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Scale(a, c) => {
                    self.accumulate(a, g.map(|x| x * c));
                }
                Op::AddConst(a, _) => {
                    self.accumulate(a, g);
                }
                Op::Matmul(a, b) => {
                    let da = matmul_nt(&g, self.value(b));
                    let db = matmul_tn(self.value(a), &g);
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::MatmulNt(a, b) => {
                    // C = A B^T: dA = G B, dB = G^T A
                    let da = matmul(&g, self.value(b));
                    let db = matmul_tn(&g, self.value(a));
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::MatmulTn(a, b) => {
                    // C = A^T B: dA = B G^T, dB = A G
                    let da = matmul_nt(self.value(b), &g);
                    let db = matmul(self.value(a), &g);
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Gram(x) => {
                    // S = X X^T: dX = (G + G^T) X
                    let sym = {
                        let n = g.dims()[0];
                        let mut data = vec![F::zero(); n * n];
                        for r in 0..n {
                            for c in 0..n {
                                data[r * n + c] = g.at(r, c) + g.at(c, r);
                            }
                        }
                        Tensor::new(vec![n, n], data).unwrap()
                    };
                    let dx = matmul(&sym, self.value(x));
                    self.accumulate(x, dx);
                }
                Op::NormalizeRows { input, epsilon } => {
                    let xin = self.value(input);
                    let yout = &self.nodes[i].value;
                    let c = xin.dims()[1];
                    let mut dx = vec![F::zero(); xin.len()];
                    for (r, xrow) in xin.data().chunks_exact(c).enumerate() {
                        let grow = &g.data()[r * c..(r + 1) * c];
                        let yrow = &yout.data()[r * c..(r + 1) * c];
                        let drow = &mut dx[r * c..(r + 1) * c];
                        let norm = row_norm(xrow);
                        if norm > epsilon {
                            let dot = grow
                                .iter()
                                .zip(yrow.iter())
                                .fold(F::zero(), |acc, (&gv, &yv)| acc + gv * yv);
                            let inv = F::one() / norm;
                            for ((d, &gv), &yv) in
                                drow.iter_mut().zip(grow.iter()).zip(yrow.iter())
                            {
                                *d = (gv - yv * dot) * inv;
                            }
                        } else {
                            let inv = F::one() / epsilon;
                            for (d, &gv) in drow.iter_mut().zip(grow.iter()) {
                                *d = gv * inv;
                            }
                        }
                    }
                    let dims = xin.dims().to_vec();
                    self.accumulate(input, Tensor::new(dims, dx).unwrap());
                }
                Op::SoftmaxRows { input, sharpness } => {
                    let y = &self.nodes[i].value;
                    let cols = y.dims()[1];
                    let mut dx = vec![F::zero(); y.len()];
                    for r in 0..y.dims()[0] {
                        let yrow = &y.data()[r * cols..(r + 1) * cols];
                        let grow = &g.data()[r * cols..(r + 1) * cols];
                        let dot = grow
                            .iter()
                            .zip(yrow.iter())
                            .fold(F::zero(), |acc, (&gv, &yv)| acc + gv * yv);
                        let drow = &mut dx[r * cols..(r + 1) * cols];
                        for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d = sharpness * yv * (gv - dot);
                        }
                    }
                    let dims = y.dims().to_vec();
                    self.accumulate(input, Tensor::new(dims, dx).unwrap());
                }
                Op::LogSumExpRows(input) => {
                    let x = self.value(input);
                    let v = &self.nodes[i].value;
                    let cols = x.dims()[1];
                    let mut dx = vec![F::zero(); x.len()];
                    for r in 0..x.dims()[0] {
                        let gv = g.data()[r];
                        let vr = v.data()[r];
                        let xrow = &x.data()[r * cols..(r + 1) * cols];
                        let drow = &mut dx[r * cols..(r + 1) * cols];
                        for (d, &xv) in drow.iter_mut().zip(xrow) {
                            *d = gv * (xv - vr).exp();
                        }
                    }
                    let dims = x.dims().to_vec();
                    self.accumulate(input, Tensor::new(dims, dx).unwrap());
                }
                Op::TakeDiag(input) => {
                    let n = g.len();
                    let mut dm = vec![F::zero(); n * n];
                    for r in 0..n {
                        dm[r * n + r] = g.data()[r];
                    }
                    self.accumulate(input, Tensor::new(vec![n, n], dm).unwrap());
                }
                Op::ReplaceDiag { matrix, diag } => {
                    let n = g.dims()[0];
                    let mut dm = g.data().to_vec();
                    let mut dd = vec![F::zero(); n];
                    for r in 0..n {
                        dd[r] = dm[r * n + r];
                        dm[r * n + r] = F::zero();
                    }
                    self.accumulate(matrix, Tensor::new(vec![n, n], dm).unwrap());
                    self.accumulate(diag, Tensor::new(vec![n], dd).unwrap());
                }
                Op::Arccos(input) => {
                    let dx = g.zip_map(self.value(input), |gv, xv| {
                        let xc = clamp_for_arccos(xv);
                        -gv / (F::one() - xc * xc).sqrt()
                    });
                    self.accumulate(input, dx);
                }
                Op::Cos(input) => {
                    let dx = g.zip_map(self.value(input), |gv, xv| -gv * xv.sin());
                    self.accumulate(input, dx);
                }
                Op::ClampMax { input, cap } => {
                    let dx = g.zip_map(self.value(input), |gv, xv| {
                        if xv < cap {
                            gv
                        } else {
                            F::zero()
                        }
                    });
                    self.accumulate(input, dx);
                }
                Op::LeakyRelu { input, slope } => {
                    let dx = g.zip_map(self.value(input), |gv, xv| {
                        if xv > F::zero() {
                            gv
                        } else {
                            gv * slope
                        }
                    });
                    self.accumulate(input, dx);
                }
                Op::AbsSum(input) => {
                    let gv = g.item();
                    let dx = self.value(input).map(|xv| {
                        if xv > F::zero() {
                            gv
                        } else if xv < F::zero() {
                            -gv
                        } else {
                            F::zero()
                        }
                    });
                    self.accumulate(input, dx);
                }
                Op::Sum(input) => {
                    let gv = g.item();
                    let dims = self.value(input).dims().to_vec();
                    let n: usize = dims.iter().product();
                    self.accumulate(input, Tensor::new(dims, vec![gv; n]).unwrap());
                }
                Op::ConcatCols(a, b) => {
                    let (ca, cb) = (self.value(a).dims()[1], self.value(b).dims()[1]);
                    let n = self.value(a).dims()[0];
                    let mut da = Vec::with_capacity(n * ca);
                    let mut db = Vec::with_capacity(n * cb);
                    for row in g.data().chunks_exact(ca + cb) {
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    self.accumulate(a, Tensor::new(vec![n, ca], da).unwrap());
                    self.accumulate(b, Tensor::new(vec![n, cb], db).unwrap());
                }
                Op::Reshape(input) => {
                    let dims = self.value(input).dims().to_vec();
                    let dx = g.reshaped(dims).unwrap();
                    self.accumulate(input, dx);
                }
                Op::AddBiasRows { input, bias } => {
                    let c = g.dims()[1];
                    let mut db = vec![F::zero(); c];
                    for row in g.data().chunks_exact(c) {
                        for (acc, &gv) in db.iter_mut().zip(row) {
                            *acc = *acc + gv;
                        }
                    }
                    self.accumulate(input, g.clone());
                    self.accumulate(bias, Tensor::new(vec![c], db).unwrap());
                }
                Op::Conv2d { input, kernel, bias, stride, pad } => {
                    let (di, dk, db) = conv2d_backward(
                        self.value(input),
                        self.value(kernel),
                        &g,
                        stride,
                        pad,
                    );
                    self.accumulate(input, di);
                    self.accumulate(kernel, dk);
                    self.accumulate(bias, db);
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn conv2d_output_dims(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> (usize, usize) {
    ((h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1)
}

fn conv2d_forward<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    bias: &Tensor<F>,
    stride: usize,
    pad: usize,
) -> Tensor<F> {
    assert_eq!(input.dims().len(), 3, "conv input [H,W,Cin]");
    assert_eq!(kernel.dims().len(), 4, "conv kernel [kh,kw,Cin,Cout]");
    let (h, w, cin) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let (kh, kw, kci, cout) = (
        kernel.dims()[0],
        kernel.dims()[1],
        kernel.dims()[2],
        kernel.dims()[3],
    );
    assert_eq!(cin, kci, "conv channel mismatch");
    assert_eq!(bias.len(), cout, "conv bias length");
    let (ho, wo) = conv2d_output_dims(h, w, kh, kw, stride, pad);
    let mut out = vec![F::zero(); ho * wo * cout];
    for oy in 0..ho {
        for ox in 0..wo {
            let opx = &mut out[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
            opx.copy_from_slice(bias.data());
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let ipx = &input.data()
                        [((iy as usize) * w + ix as usize) * cin..][..cin];
                    let ktap = &kernel.data()[(ky * kw + kx) * cin * cout..][..cin * cout];
                    for (ci, &iv) in ipx.iter().enumerate() {
                        let krow = &ktap[ci * cout..(ci + 1) * cout];
                        for (o, &kv) in opx.iter_mut().zip(krow) {
                            *o = *o + iv * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![ho, wo, cout], out).unwrap()
}

fn conv2d_backward<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    grad_out: &Tensor<F>,
    stride: usize,
    pad: usize,
) -> (Tensor<F>, Tensor<F>, Tensor<F>) {
    let (h, w, cin) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let (kh, kw, _, cout) = (
        kernel.dims()[0],
        kernel.dims()[1],
        kernel.dims()[2],
        kernel.dims()[3],
    );
    let (ho, wo) = (grad_out.dims()[0], grad_out.dims()[1]);
    let mut din = vec![F::zero(); h * w * cin];
    let mut dk = vec![F::zero(); kh * kw * cin * cout];
    let mut db = vec![F::zero(); cout];
    for oy in 0..ho {
        for ox in 0..wo {
            let gpx = &grad_out.data()[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
            for (acc, &gv) in db.iter_mut().zip(gpx) {
                *acc = *acc + gv;
            }
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let ibase = ((iy as usize) * w + ix as usize) * cin;
                    let kbase = (ky * kw + kx) * cin * cout;
                    for ci in 0..cin {
                        let iv = input.data()[ibase + ci];
                        let krow = &kernel.data()[kbase + ci * cout..][..cout];
                        let dkrow = &mut dk[kbase + ci * cout..][..cout];
                        let mut acc = F::zero();
                        for ((dkv, &kv), &gv) in dkrow.iter_mut().zip(krow).zip(gpx) {
                            *dkv = *dkv + iv * gv;
                            acc = acc + kv * gv;
                        }
                        din[ibase + ci] = din[ibase + ci] + acc;
                    }
                }
            }
        }
    }
    (
        Tensor::new(vec![h, w, cin], din).unwrap(),
        Tensor::new(kernel.dims().to_vec(), dk).unwrap(),
        Tensor::new(vec![cout], db).unwrap(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn quadratic_gradient() {
        // loss = sum(x^2) over x = [1,2,3] -> grad [2,4,6]
        let mut tape = Tape::<f64>::new();
        let x = tape.parameter("x", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let sq = tape.mul(x, x);
        let loss = tape.sum(sq);
        assert!((tape.value(loss).item() - 14.0).abs() < 1e-12);
        tape.backward(loss).unwrap();
        assert_eq!(tape.param_grad("x").unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_loss_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.parameter("x", Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        let c = tape.input(Tensor::scalar(5.0));
        let loss = tape.scale(c, 2.0);
        tape.backward(loss).unwrap();
        let _ = x;
        assert_eq!(tape.param_grad("x").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_seed_is_usage_error() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn backward_accumulates_until_reset() {
        let mut tape = Tape::new();
        let x = tape.parameter("x", Tensor::new(vec![1], vec![3.0]).unwrap());
        let sq = tape.mul(x, x);
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.param_grad("x").unwrap().data(), &[12.0]);
        tape.reset_gradients();
        tape.backward(loss).unwrap();
        assert_eq!(tape.param_grad("x").unwrap().data(), &[6.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // y = x*x, loss = sum(y) + sum(x) -> dx = 2x + 1
        let mut tape = Tape::new();
        let x = tape.parameter("x", Tensor::new(vec![2], vec![2.0, -3.0]).unwrap());
        let sq = tape.mul(x, x);
        let s1 = tape.sum(sq);
        let s2 = tape.sum(x);
        let loss = tape.add(s1, s2);
        tape.backward(loss).unwrap();
        assert_eq!(tape.param_grad("x").unwrap().data(), &[5.0, -5.0]);
    }

    /// Central-difference check of a scalar-valued tape program.
    fn finite_diff_check(
        dim: usize,
        build: impl Fn(&mut Tape<f64>, NodeId) -> NodeId,
        x0: Vec<f64>,
    ) {
        let eval = |xs: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let x = tape.input(Tensor::new(vec![dim], xs.to_vec()).unwrap());
            let loss = build(&mut tape, x);
            tape.value(loss).item()
        };
        let mut tape = Tape::new();
        let x = tape.parameter("x", Tensor::new(vec![dim], x0.clone()).unwrap());
        let loss = build(&mut tape, x);
        tape.backward(loss).unwrap();
        let analytic = tape.param_grad("x").unwrap();
        let h = 1e-6;
        for i in 0..dim {
            let mut plus = x0.clone();
            plus[i] += h;
            let mut minus = x0.clone();
            minus[i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!(
                (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2) < 1e-5,
                "component {i}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn softmax_logsumexp_chain_matches_fd() {
        let mut rng = SplitMix64::new(21);
        let x0: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        finite_diff_check(
            6,
            |tape, x| {
                let m = tape.reshape(x, vec![2, 3]);
                let sm = tape.softmax_rows(m, 3.0);
                let lse = tape.logsumexp_rows(sm);
                tape.sum(lse)
            },
            x0,
        );
    }

    #[test]
    fn normalize_chain_matches_fd() {
        let mut rng = SplitMix64::new(22);
        let x0: Vec<f64> = (0..8).map(|_| rng.uniform(0.2, 1.0)).collect();
        finite_diff_check(
            8,
            |tape, x| {
                let m = tape.reshape(x, vec![2, 4]);
                let n = tape.normalize_rows(m, 1e-9);
                let w = tape.input(
                    Tensor::new(vec![2, 4], (0..8).map(|i| 0.1 * i as f64 - 0.3).collect())
                        .unwrap(),
                );
                let prod = tape.mul(n, w);
                tape.sum(prod)
            },
            x0,
        );
    }

    #[test]
    fn conv_matches_direct_loop_oracle() {
        // Random 4x4x2 input, 3x3 kernel to 2 channels, stride 2, pad 1.
        let mut rng = SplitMix64::new(23);
        let input =
            Tensor::new(vec![4, 4, 2], (0..32).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let kernel = Tensor::new(
            vec![3, 3, 2, 2],
            (0..36).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let bias = Tensor::new(vec![2], vec![0.1, -0.2]).unwrap();
        let mut tape = Tape::new();
        let i = tape.input(input.clone());
        let k = tape.input(kernel.clone());
        let b = tape.input(bias.clone());
        let out = tape.conv2d(i, k, b, 2, 1);
        assert_eq!(tape.value(out).dims(), &[2, 2, 2]);
        for oy in 0..2usize {
            for ox in 0..2usize {
                for co in 0..2usize {
                    let mut acc = bias.data()[co];
                    for ky in 0..3usize {
                        for kx in 0..3usize {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if iy < 0 || iy >= 4 || ix < 0 || ix >= 4 {
                                continue;
                            }
                            for ci in 0..2usize {
                                acc += input.data()[((iy as usize) * 4 + ix as usize) * 2 + ci]
                                    * kernel.data()[((ky * 3 + kx) * 2 + ci) * 2 + co];
                            }
                        }
                    }
                    let got = tape.value(out).data()[(oy * 2 + ox) * 2 + co];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn matmul_variants_match_fd() {
        let mut rng = SplitMix64::new(24);
        let x0: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let other =
            Tensor::new(vec![3, 2], (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        for variant in 0..3 {
            let other = other.clone();
            finite_diff_check(
                6,
                move |tape, x| {
                    let a = tape.reshape(x, vec![2, 3]);
                    let b = tape.input(other.clone());
                    let prod = match variant {
                        0 => tape.matmul(a, b),                  // [2,3]x[3,2]
                        1 => {
                            let bt = tape.reshape(b, vec![2, 3]);
                            tape.matmul_nt(a, bt) // [2,3]x[2,3]^T
                        }
                        _ => {
                            let at = tape.reshape(a, vec![3, 2]);
                            tape.matmul_tn(at, b) // [3,2]^T x [3,2]
                        }
                    };
                    tape.abs_sum(prod)
                },
                x0.clone(),
            );
        }
    }

    #[test]
    fn gram_is_bitwise_symmetric_and_matches_fd() {
        let mut rng = SplitMix64::new(25);
        let x0: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
        {
            let mut tape = Tape::<f64>::new();
            let x = tape.input(Tensor::new(vec![4, 2], x0.clone()).unwrap());
            let s = tape.gram(x);
            let sv = tape.value(s);
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(sv.at(i, j).to_bits(), sv.at(j, i).to_bits());
                }
            }
        }
        let w = Tensor::new(vec![4, 4], (0..16).map(|i| (i as f64) * 0.07 - 0.4).collect())
            .unwrap();
        finite_diff_check(
            8,
            move |tape, x| {
                let m = tape.reshape(x, vec![4, 2]);
                let s = tape.gram(m);
                let wid = tape.input(w.clone());
                let prod = tape.mul(s, wid);
                tape.sum(prod)
            },
            x0,
        );
    }
}
