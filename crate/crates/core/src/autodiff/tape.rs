use alloc::vec;
use alloc::vec::Vec;

use super::Scalar;

/// Handle to a node on a [`Tape`]. Every node is a row-major matrix; scalars
/// are `1 x 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Vec<f64>),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Gather(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Softmax(Var),
    Gelu(Var),
    Tanh(Var),
    Relu(Var),
    RmsNorm {
        x: Var,
        gain: Var,
        inv_rms: Vec<S>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        smoothing: f64,
        probs: Vec<S>,
    },
    Sum(Var),
    SumAll(Vec<Var>),
}

struct Node<S> {
    value: Vec<S>,
    rows: usize,
    cols: usize,
    needs_grad: bool,
    op: Op<S>,
}

/// Reverse-mode autodiff tape over matrix-valued nodes.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Tape::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_K: f64 = 0.044_715;
const RMS_EPS: f64 = 1e-6;

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<S>, rows: usize, cols: usize, needs_grad: bool, op: Op<S>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<S> {
        &self.nodes[v.0]
    }

    fn grad_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Vec<S>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape");
        self.push(value, rows, cols, true, Op::Leaf)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Vec<S>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "constant shape");
        self.push(value, rows, cols, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> S {
        let n = self.node(v);
        assert_eq!(n.value.len(), 1, "not a scalar node");
        n.value[0]
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!((r, c), self.shape(b), "add shape");
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.grad_any(&[a, b]);
        self.push(value, r, c, ng, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!((r, c), self.shape(b), "sub shape");
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let ng = self.grad_any(&[a, b]);
        self.push(value, r, c, ng, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!((r, c), self.shape(b), "mul shape");
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.grad_any(&[a, b]);
        self.push(value, r, c, ng, Op::Mul(a, b))
    }

    /// `x [r, c] + row [1, c]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(row), (1, c), "add_row shape");
        let xv = self.value(x);
        let bv = self.value(row);
        let mut value = xv.to_vec();
        for i in 0..r {
            for j in 0..c {
                value[i * c + j] += bv[j];
            }
        }
        let ng = self.grad_any(&[x, row]);
        self.push(value, r, c, ng, Op::AddRow(x, row))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let (r, cols) = self.shape(x);
        let value = self.value(x).iter().map(|v| v.scale(c)).collect();
        let ng = self.grad_any(&[x]);
        self.push(value, r, cols, ng, Op::Scale(x, c))
    }

    /// `x + k` for a constant `k` of the same shape.
    pub fn add_const(&mut self, x: Var, k: &[f64]) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(k.len(), r * c, "add_const shape");
        let value = self.value(x).iter().zip(k).map(|(v, k)| *v + S::from_f64(*k)).collect();
        let ng = self.grad_any(&[x]);
        self.push(value, r, c, ng, Op::AddConst(x))
    }

    /// `x * k` elementwise for a constant `k` (dropout masks).
    pub fn mul_const(&mut self, x: Var, k: Vec<f64>) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(k.len(), r * c, "mul_const shape");
        let value = self.value(x).iter().zip(&k).map(|(v, k)| v.scale(*k)).collect();
        let ng = self.grad_any(&[x]);
        self.push(value, r, c, ng, Op::MulConst(x, k))
    }

    /// `a [n, k] · b [k, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimension");
        let value = matmul(self.value(a), self.value(b), n, k, m);
        let ng = self.grad_any(&[a, b]);
        self.push(value, n, m, ng, Op::MatMul(a, b))
    }

    /// `a [n, k] · bᵀ` for `b [m, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape(a);
        let (m, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_nt inner dimension");
        let value = matmul_nt(self.value(a), self.value(b), n, k, m);
        let ng = self.grad_any(&[a, b]);
        self.push(value, n, m, ng, Op::MatMulNT(a, b))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let (rows, c) = self.shape(table);
        let tv = self.value(table);
        let mut value = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            assert!(id < rows, "gather index {id} out of range {rows}");
            value.extend_from_slice(&tv[id * c..(id + 1) * c]);
        }
        let ng = self.grad_any(&[table]);
        self.push(value, ids.len(), c, ng, Op::Gather(table, ids.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(x);
        assert!(start + len <= c, "slice_cols range");
        let xv = self.value(x);
        let mut value = Vec::with_capacity(r * len);
        for i in 0..r {
            value.extend_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        let ng = self.grad_any(&[x]);
        self.push(value, r, len, ng, Op::SliceCols(x, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let r = self.shape(parts[0]).0;
        let total: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut value = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                let (pr, pc) = self.shape(*p);
                assert_eq!(pr, r, "concat_cols rows");
                value.extend_from_slice(&self.value(*p)[i * pc..(i + 1) * pc]);
            }
        }
        let ng = self.grad_any(parts);
        self.push(value, r, total, ng, Op::ConcatCols(parts.to_vec()))
    }

    /// Column means: `[r, c] -> [1, c]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let xv = self.value(x);
        let mut value = vec![S::zero(); c];
        for i in 0..r {
            for j in 0..c {
                value[j] += xv[i * c + j];
            }
        }
        let inv = 1.0 / r as f64;
        value.iter_mut().for_each(|v| *v = v.scale(inv));
        let ng = self.grad_any(&[x]);
        self.push(value, 1, c, ng, Op::MeanRows(x))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let value = softmax_rows(self.value(x), r, c);
        let ng = self.grad_any(&[x]);
        self.push(value, r, c, ng, Op::Softmax(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let value = self
            .value(x)
            .iter()
            .map(|&v| {
                let u = (v + v * v * v.scale(GELU_K)).scale(GELU_C);
                v.scale(0.5) * (S::one() + u.tanh())
            })
            .collect();
        let ng = self.grad_any(&[x]);
        self.push(value, r, c, ng, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let value = self.value(x).iter().map(|v| v.tanh()).collect();
        let ng = self.grad_any(&[x]);
        self.push(value, r, c, ng, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let value = self.value(x).iter().map(|&v| if v.value() > 0.0 { v } else { S::zero() }).collect();
        let ng = self.grad_any(&[x]);
        self.push(value, r, c, ng, Op::Relu(x))
    }

    /// Row-wise RMS normalization with a learned `[1, c]` gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(gain), (1, c), "rms_norm gain shape");
        let xv = self.value(x);
        let gv = self.value(gain);
        let mut value = Vec::with_capacity(r * c);
        let mut inv_rms = Vec::with_capacity(r);
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mut ms = S::zero();
            for v in row {
                ms += *v * *v;
            }
            let ir = S::one() / (ms.scale(1.0 / c as f64) + S::from_f64(RMS_EPS)).sqrt();
            for j in 0..c {
                value.push(row[j] * ir * gv[j]);
            }
            inv_rms.push(ir);
        }
        let ng = self.grad_any(&[x, gain]);
        self.push(value, r, c, ng, Op::RmsNorm { x, gain, inv_rms })
    }

    /// Summed label-smoothed cross-entropy of `logits [n, V]` against `targets`.
    ///
    /// The smoothed target puts `1 - smoothing + smoothing / V` on the gold
    /// token and `smoothing / V` elsewhere.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], smoothing: f64) -> Var {
        let (n, v) = self.shape(logits);
        assert_eq!(targets.len(), n, "cross_entropy targets");
        let lv = self.value(logits);
        let mut probs = Vec::with_capacity(n * v);
        let mut total = S::zero();
        let off = smoothing / v as f64;
        for (i, &t) in targets.iter().enumerate() {
            assert!(t < v, "target {t} outside vocabulary {v}");
            let row = &lv[i * v..(i + 1) * v];
            let lse = log_sum_exp(row);
            let mut sum_logp = S::zero();
            for x in row {
                let lp = *x - lse;
                sum_logp += lp;
                probs.push(lp.exp());
            }
            let gold = row[t] - lse;
            total -= gold.scale(1.0 - smoothing) + sum_logp.scale(off);
        }
        let ng = self.grad_any(&[logits]);
        self.push(
            vec![total],
            1,
            1,
            ng,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                smoothing,
                probs,
            },
        )
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let mut total = S::zero();
        for v in self.value(x) {
            total += *v;
        }
        let ng = self.grad_any(&[x]);
        self.push(vec![total], 1, 1, ng, Op::Sum(x))
    }

    /// Sum of scalar nodes.
    pub fn sum_all(&mut self, xs: &[Var]) -> Var {
        let mut total = S::zero();
        for x in xs {
            total += self.scalar(*x);
        }
        let ng = self.grad_any(xs);
        self.push(vec![total], 1, 1, ng, Op::SumAll(xs.to_vec()))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients<S> {
        assert_eq!(self.node(root).value.len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Vec<S>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(vec![S::one()]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backprop_node(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| {
                    for (d, s) in gb.iter_mut().zip(g) {
                        *d -= *s;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                self.acc(grads, *a, |ga| {
                    for k in 0..g.len() {
                        ga[k] += g[k] * bv[k];
                    }
                });
                self.acc(grads, *b, |gb| {
                    for k in 0..g.len() {
                        gb[k] += g[k] * av[k];
                    }
                });
            }
            Op::AddRow(x, row) => {
                let c = node.cols;
                self.acc(grads, *x, |gx| add_into(gx, g));
                self.acc(grads, *row, |gr| {
                    for i in 0..node.rows {
                        for j in 0..c {
                            gr[j] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Scale(x, c) => {
                self.acc(grads, *x, |gx| {
                    for (d, s) in gx.iter_mut().zip(g) {
                        *d += s.scale(*c);
                    }
                });
            }
            Op::AddConst(x) => self.acc(grads, *x, |gx| add_into(gx, g)),
            Op::MulConst(x, k) => {
                self.acc(grads, *x, |gx| {
                    for ((d, s), k) in gx.iter_mut().zip(g).zip(k) {
                        *d += s.scale(*k);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (n, k) = self.shape(*a);
                let m = node.cols;
                let av = self.value(*a);
                let bv = self.value(*b);
                // dA = G · Bᵀ, dB = Aᵀ · G
                self.acc(grads, *a, |ga| {
                    let d = matmul_nt(g, bv, n, m, k);
                    add_into(ga, &d);
                });
                self.acc(grads, *b, |gb| {
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            let dst = &mut gb[p * m..(p + 1) * m];
                            for j in 0..m {
                                dst[j] += aip * grow[j];
                            }
                        }
                    }
                });
            }
            Op::MatMulNT(a, b) => {
                let (n, k) = self.shape(*a);
                let m = node.cols;
                let av = self.value(*a);
                let bv = self.value(*b);
                // out = A · Bᵀ: dA = G · B, dB = Gᵀ · A
                self.acc(grads, *a, |ga| {
                    let d = matmul(g, bv, n, m, k);
                    add_into(ga, &d);
                });
                self.acc(grads, *b, |gb| {
                    for i in 0..n {
                        let arow = &av[i * k..(i + 1) * k];
                        for j in 0..m {
                            let gij = g[i * m + j];
                            let dst = &mut gb[j * k..(j + 1) * k];
                            for p in 0..k {
                                dst[p] += gij * arow[p];
                            }
                        }
                    }
                });
            }
            Op::Gather(table, ids) => {
                let c = node.cols;
                self.acc(grads, *table, |gt| {
                    for (i, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * c..(id + 1) * c], &g[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.shape(*x);
                let len = node.cols;
                self.acc(grads, *x, |gx| {
                    for i in 0..r {
                        add_into(&mut gx[i * c + start..i * c + start + len], &g[i * len..(i + 1) * len]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.cols;
                let mut offset = 0;
                for p in parts {
                    let (r, pc) = self.shape(*p);
                    self.acc(grads, *p, |gp| {
                        for i in 0..r {
                            add_into(&mut gp[i * pc..(i + 1) * pc], &g[i * total + offset..i * total + offset + pc]);
                        }
                    });
                    offset += pc;
                }
            }
            Op::MeanRows(x) => {
                let (r, c) = self.shape(*x);
                let inv = 1.0 / r as f64;
                self.acc(grads, *x, |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j].scale(inv);
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let (r, c) = (node.rows, node.cols);
                let y = &node.value;
                self.acc(grads, *x, |gx| {
                    for i in 0..r {
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let mut dot = S::zero();
                        for j in 0..c {
                            dot += gr[j] * yr[j];
                        }
                        for j in 0..c {
                            gx[i * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                self.acc(grads, *x, |gx| {
                    for k in 0..g.len() {
                        let v = xv[k];
                        let v2 = v * v;
                        let t = ((v + v2 * v.scale(GELU_K)).scale(GELU_C)).tanh();
                        let du = (S::one() + v2.scale(3.0 * GELU_K)).scale(GELU_C);
                        let d = (S::one() + t).scale(0.5) + v.scale(0.5) * (S::one() - t * t) * du;
                        gx[k] += g[k] * d;
                    }
                });
            }
            Op::Tanh(x) => {
                let y = &node.value;
                self.acc(grads, *x, |gx| {
                    for k in 0..g.len() {
                        gx[k] += g[k] * (S::one() - y[k] * y[k]);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                self.acc(grads, *x, |gx| {
                    for k in 0..g.len() {
                        if xv[k].value() > 0.0 {
                            gx[k] += g[k];
                        }
                    }
                });
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (r, c) = (node.rows, node.cols);
                let xv = self.value(*x);
                let gv = self.value(*gain);
                self.acc(grads, *gain, |gg| {
                    for i in 0..r {
                        for j in 0..c {
                            gg[j] += g[i * c + j] * xv[i * c + j] * inv_rms[i];
                        }
                    }
                });
                // dx_k = r·gh_k − r³·x_k/c · Σ_j gh_j x_j, with gh = g ⊙ gain
                self.acc(grads, *x, |gx| {
                    let inv_c = 1.0 / c as f64;
                    for i in 0..r {
                        let ir = inv_rms[i];
                        let mut dot = S::zero();
                        for j in 0..c {
                            dot += g[i * c + j] * gv[j] * xv[i * c + j];
                        }
                        let coef = ir * ir * ir * dot.scale(inv_c);
                        for j in 0..c {
                            gx[i * c + j] += ir * g[i * c + j] * gv[j] - coef * xv[i * c + j];
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                smoothing,
                probs,
            } => {
                let (n, v) = self.shape(*logits);
                let off = smoothing / v as f64;
                let gold = 1.0 - smoothing + off;
                let g0 = g[0];
                self.acc(grads, *logits, |gl| {
                    for i in 0..n {
                        for j in 0..v {
                            let q = if j == targets[i] { gold } else { off };
                            gl[i * v + j] += g0 * (probs[i * v + j] - S::from_f64(q));
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let g0 = g[0];
                self.acc(grads, *x, |gx| gx.iter_mut().for_each(|d| *d += g0));
            }
            Op::SumAll(xs) => {
                let g0 = g[0];
                for x in xs {
                    self.acc(grads, *x, |gx| gx[0] += g0);
                }
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<S>>], v: Var, f: impl FnOnce(&mut [S])) {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![S::zero(); node.value.len()]);
        f(slot);
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to a leaf; `None` if the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn zip_map<S: Scalar>(a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

pub(crate) fn matmul<S: Scalar>(a: &[S], b: &[S], n: usize, k: usize, m: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * m..(p + 1) * m];
            for j in 0..m {
                orow[j] += aip * brow[j];
            }
        }
    }
    out
}

pub(crate) fn matmul_nt<S: Scalar>(a: &[S], b: &[S], n: usize, k: usize, m: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            out[i * m + j] = acc;
        }
    }
    out
}

fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let mut max = row[0];
    for v in row {
        if v.value() > max.value() {
            max = *v;
        }
    }
    let mut sum = S::zero();
    for v in row {
        sum += (*v - max).exp();
    }
    max + sum.ln()
}

pub(crate) fn softmax_rows<S: Scalar>(x: &[S], r: usize, c: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = &x[i * c..(i + 1) * c];
        let mut max = row[0];
        for v in row {
            if v.value() > max.value() {
                max = *v;
            }
        }
        let start = out.len();
        let mut sum = S::zero();
        for v in row {
            let e = (*v - max).exp();
            sum += e;
            out.push(e);
        }
        let inv = S::one() / sum;
        for e in &mut out[start..] {
            *e *= inv;
        }
    }
    out
}
