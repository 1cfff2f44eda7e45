//! Reverse-mode tape over dense f32 buffers.
//!
//! Forward calls allocate an output node in the arena and record an op;
//! [`Tape::backward`] consumes the tape and replays the ops in reverse,
//! accumulating vector-Jacobian products. Each record's inputs precede it,
//! so one reverse sweep visits every record exactly once.

use super::tensor::Tensor;

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct Node {
    data: Vec<f32>,
    shape: Vec<usize>,
}

enum Op {
    /// out = a[m,k] @ b[k,n]
    Matmul { a: Var, b: Var, out: Var, m: usize, k: usize, n: usize },
    /// out = a[m,k] @ b[n,k]^T
    MatmulTb { a: Var, b: Var, out: Var, m: usize, k: usize, n: usize },
    /// out = a + b (same shape)
    Add { a: Var, b: Var, out: Var },
    /// out[r, :] = a[r, :] + row
    AddRow { a: Var, row: Var, out: Var, rows: usize, cols: usize },
    /// out = a * b elementwise
    Mul { a: Var, b: Var, out: Var },
    /// out = c * a
    Scale { a: Var, c: f32, out: Var },
    /// out = a + k (constant, excluded from differentiation)
    AddConst { a: Var, out: Var },
    /// out = a * k elementwise (constant mask; dropout, masking)
    MulConst { a: Var, k: Vec<f32>, out: Var },
    Relu { a: Var, out: Var },
    Sigmoid { a: Var, out: Var },
    SoftmaxRows { a: Var, out: Var, rows: usize, cols: usize },
    /// Last-axis layer norm with affine gain/bias; saves per-row mean and
    /// 1/sqrt(var + eps) from the forward pass.
    LayerNorm { x: Var, gain: Var, bias: Var, out: Var, rows: usize, cols: usize, mean: Vec<f32>, inv_std: Vec<f32> },
    /// out[i, :] = table[rows[i], :]
    GatherRows { table: Var, rows: Vec<usize>, out: Var, cols: usize },
    /// Column-wise concatenation of 2-D parts with equal row counts.
    ConcatCols { parts: Vec<(Var, usize)>, out: Var, rows: usize },
    /// out = a[:, start..start+len]
    SliceCols { a: Var, out: Var, rows: usize, cols: usize, start: usize, len: usize },
    /// out = sum of all elements (scalar)
    Sum { a: Var, out: Var },
    /// Mean over unmasked rows of -sum_c w_c * log softmax(logits)_c.
    /// Saves the row softmax and per-row weight sums from the forward pass.
    WeightedCrossEntropy { logits: Var, out: Var, rows: usize, cols: usize, weights: Vec<f32>, probs: Vec<f32>, row_weight: Vec<f32>, active_rows: usize },
    /// Mean over masked-in positions of -[y log p + (1-y) log(1-p)] with p
    /// clamped to [1e-7, 1-1e-7]; gradient is zero where the clamp binds.
    BinaryCrossEntropy { probs: Var, out: Var, labels: Vec<f32>, mask: Vec<f32>, active: usize },
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`, if any gradient flowed to it.
    pub fn get(&self, var: Var) -> Option<&[f32]> {
        self.grads[var.0].as_deref()
    }

    /// Accumulate the gradient for `var` into `tensor.grad`, treating
    /// "no flow" as zeros so the tensor always ends up with a buffer.
    pub fn accumulate_into(&self, var: Var, tensor: &mut Tensor) {
        match self.get(var) {
            Some(g) => tensor.accumulate_grad(g),
            None => tensor.ensure_grad(),
        }
    }
}

pub const BCE_CLAMP: f32 = 1e-7;
const LAYER_NORM_EPS: f32 = 1e-5;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push_node(&mut self, data: Vec<f32>, shape: Vec<usize>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { data, shape });
        Var(self.nodes.len() - 1)
    }

    /// Register a trainable tensor; its gradient is exported after
    /// backward via [`Gradients::accumulate_into`]. The tape computes
    /// gradients for every node the loss reaches; `param` vs [`Tape::constant`]
    /// records intent at the call site.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push_node(t.data().to_vec(), t.shape().to_vec())
    }

    /// Register a value whose gradient nobody will read.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push_node(t.data().to_vec(), t.shape().to_vec())
    }

    pub fn leaf(&mut self, data: Vec<f32>, shape: Vec<usize>) -> Var {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, data.len(), "leaf shape {:?} implies {} elements, got {}", shape, numel, data.len());
        self.push_node(data, shape)
    }

    pub fn zero_scalar(&mut self) -> Var {
        self.push_node(vec![0.0], vec![1])
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar_value(&self, v: Var) -> f32 {
        assert_eq!(self.nodes[v.0].data.len(), 1, "scalar_value on non-scalar");
        self.nodes[v.0].data[0]
    }

    fn dims2(&self, v: Var, what: &str) -> (usize, usize) {
        let s = &self.nodes[v.0].shape;
        match s.len() {
            2 => (s[0], s[1]),
            1 => (1, s[0]),
            _ => panic!("{what}: expected 1-D or 2-D value, got shape {s:?}"),
        }
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, ka) = self.dims2(a, "matmul lhs");
        let (kb, n) = self.dims2(b, "matmul rhs");
        assert_eq!(
            ka, kb,
            "matmul dimension mismatch: lhs {:?} vs rhs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let data = matmul_kernel(self.value(a), self.value(b), m, ka, n);
        let out = self.push_node(data, vec![m, n]);
        self.ops.push(Op::Matmul { a, b, out, m, k: ka, n });
        out
    }

    /// a[m,k] @ b[n,k]^T -> [m,n]
    pub fn matmul_tb(&mut self, a: Var, b: Var) -> Var {
        let (m, ka) = self.dims2(a, "matmul_tb lhs");
        let (n, kb) = self.dims2(b, "matmul_tb rhs");
        assert_eq!(
            ka, kb,
            "matmul_tb dimension mismatch: lhs {:?} vs rhs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let data = matmul_tb_kernel(self.value(a), self.value(b), m, ka, n);
        let out = self.push_node(data, vec![m, n]);
        self.ops.push(Op::MatmulTb { a, b, out, m, k: ka, n });
        out
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "add shape mismatch: {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let data: Vec<f32> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.nodes[a.0].shape.clone();
        let out = self.push_node(data, shape);
        self.ops.push(Op::Add { a, b, out });
        out
    }

    /// Broadcast-add a row vector to every row of a 2-D value.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (rows, cols) = self.dims2(a, "add_row lhs");
        assert_eq!(
            self.value(row).len(),
            cols,
            "add_row: row length {} vs {} columns",
            self.value(row).len(),
            cols
        );
        let mut data = self.value(a).to_vec();
        let rv = self.value(row).to_vec();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += rv[c];
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let out = self.push_node(data, shape);
        self.ops.push(Op::AddRow { a, row, out, rows, cols });
        out
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "mul shape mismatch: {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let data: Vec<f32> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let shape = self.nodes[a.0].shape.clone();
        let out = self.push_node(data, shape);
        self.ops.push(Op::Mul { a, b, out });
        out
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let data: Vec<f32> = self.value(a).iter().map(|x| x * c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let out = self.push_node(data, shape);
        self.ops.push(Op::Scale { a, c, out });
        out
    }

    /// Add an untracked constant elementwise (e.g. an attention key mask of
    /// zeros and -inf).
    pub fn add_const(&mut self, a: Var, k: &[f32]) -> Var {
        assert_eq!(self.value(a).len(), k.len(), "add_const length mismatch");
        let data: Vec<f32> = self.value(a).iter().zip(k).map(|(x, y)| x + y).collect();
        let shape = self.nodes[a.0].shape.clone();
        let out = self.push_node(data, shape);
        self.ops.push(Op::AddConst { a, out });
        out
    }

    /// Multiply by an untracked constant mask (dropout).
    pub fn mul_const(&mut self, a: Var, k: Vec<f32>) -> Var {
        assert_eq!(self.value(a).len(), k.len(), "mul_const length mismatch");
        let data: Vec<f32> = self.value(a).iter().zip(&k).map(|(x, y)| x * y).collect();
        let shape = self.nodes[a.0].shape.clone();
        let out = self.push_node(data, shape);
        self.ops.push(Op::MulConst { a, k, out });
        out
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data: Vec<f32> = self.value(a).iter().map(|x| x.max(0.0)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let out = self.push_node(data, shape);
        self.ops.push(Op::Relu { a, out });
        out
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data: Vec<f32> = self.value(a).iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        let shape = self.nodes[a.0].shape.clone();
        let out = self.push_node(data, shape);
        self.ops.push(Op::Sigmoid { a, out });
        out
    }

    /// Row-wise softmax, stabilized by row-max subtraction. Rejects NaN
    /// input; a row with every entry -inf (fully masked) is also an error.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (rows, cols) = self.dims2(a, "softmax_rows");
        assert!(cols > 0, "softmax_rows on zero-width value");
        let x = self.value(a);
        assert!(!x.iter().any(|v| v.is_nan()), "softmax_rows: NaN input");
        let mut data = vec![0.0f32; x.len()];
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            assert!(
                max > f32::NEG_INFINITY,
                "softmax_rows: row {r} is entirely -inf (all keys masked)"
            );
            let mut sum = 0.0f32;
            for c in 0..cols {
                let e = (row[c] - max).exp();
                data[r * cols + c] = e;
                sum += e;
            }
            for c in 0..cols {
                data[r * cols + c] /= sum;
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let out = self.push_node(data, shape);
        self.ops.push(Op::SoftmaxRows { a, out, rows, cols });
        out
    }

    /// Normalize the last axis to mean 0 / variance 1 (epsilon 1e-5 inside
    /// the square root), then apply elementwise gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (rows, cols) = self.dims2(x, "layer_norm input");
        assert_eq!(self.value(gain).len(), cols, "layer_norm gain length");
        assert_eq!(self.value(bias).len(), cols, "layer_norm bias length");
        let xv = self.value(x);
        let g = self.value(gain).to_vec();
        let b = self.value(bias).to_vec();
        let mut data = vec![0.0f32; xv.len()];
        let mut mean = vec![0.0f32; rows];
        let mut inv_std = vec![0.0f32; rows];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mu = row.iter().sum::<f32>() / cols as f32;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f32>() / cols as f32;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            mean[r] = mu;
            inv_std[r] = inv;
            for c in 0..cols {
                data[r * cols + c] = (row[c] - mu) * inv * g[c] + b[c];
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        let out = self.push_node(data, shape);
        self.ops.push(Op::LayerNorm { x, gain, bias, out, rows, cols, mean, inv_std });
        out
    }

    /// Select rows of a 2-D value (embedding lookup, slot anchor selection).
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Var {
        let (n_rows, cols) = self.dims2(table, "gather_rows table");
        let tv = self.value(table);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            assert!(r < n_rows, "gather_rows: row {r} out of range (table has {n_rows} rows)");
            data.extend_from_slice(&tv[r * cols..(r + 1) * cols]);
        }
        let out = self.push_node(data, vec![rows.len(), cols]);
        self.ops.push(Op::GatherRows { table, rows: rows.to_vec(), out, cols });
        out
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.dims2(parts[0], "concat_cols part").0;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0usize;
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols part");
            assert_eq!(r, rows, "concat_cols: row count mismatch ({r} vs {rows})");
            widths.push(c);
            total += c;
        }
        let mut data = vec![0.0f32; rows * total];
        let mut offset = 0usize;
        for (i, &p) in parts.iter().enumerate() {
            let c = widths[i];
            let pv = self.value(p).to_vec();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + c]
                    .copy_from_slice(&pv[r * c..(r + 1) * c]);
            }
            offset += c;
        }
        let out = self.push_node(data, vec![rows, total]);
        let parts: Vec<(Var, usize)> = parts.iter().cloned().zip(widths).collect();
        self.ops.push(Op::ConcatCols { parts, out, rows });
        out
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (rows, cols) = self.dims2(a, "slice_cols");
        assert!(start + len <= cols, "slice_cols: {start}+{len} exceeds {cols} columns");
        let av = self.value(a);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&av[r * cols + start..r * cols + start + len]);
        }
        let out = self.push_node(data, vec![rows, len]);
        self.ops.push(Op::SliceCols { a, out, rows, cols, start, len });
        out
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f32 = self.value(a).iter().sum();
        let out = self.push_node(vec![s], vec![1]);
        self.ops.push(Op::Sum { a, out });
        out
    }

    /// Mean over unmasked rows of `-sum_c w_c log softmax(logits)_c`.
    ///
    /// Each weight row must sum to 1 (supervised) or 0 (masked out);
    /// negative weights are a contract violation. Returns 0 when every row
    /// is masked.
    pub fn weighted_cross_entropy(&mut self, logits: Var, target_weights: &Tensor) -> Var {
        let (rows, cols) = self.dims2(logits, "weighted_cross_entropy logits");
        assert_eq!(
            target_weights.shape(),
            self.shape(logits),
            "weighted_cross_entropy: weights shape {:?} vs logits shape {:?}",
            target_weights.shape(),
            self.shape(logits)
        );
        let w = target_weights.data();
        assert!(
            w.iter().all(|&x| x >= 0.0),
            "weighted_cross_entropy: negative target weight"
        );
        let x = self.value(logits);
        let mut probs = vec![0.0f32; x.len()];
        let mut row_weight = vec![0.0f32; rows];
        let mut active_rows = 0usize;
        let mut loss = 0.0f32;
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let wrow = &w[r * cols..(r + 1) * cols];
            let wsum: f32 = wrow.iter().sum();
            row_weight[r] = wsum;
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0f32;
            for c in 0..cols {
                let e = (row[c] - max).exp();
                probs[r * cols + c] = e;
                z += e;
            }
            let log_z = z.ln();
            for c in 0..cols {
                probs[r * cols + c] /= z;
            }
            if wsum > 0.0 {
                assert!(
                    (wsum - 1.0).abs() < 1e-4,
                    "weighted_cross_entropy: row {r} weights sum to {wsum}, expected 1 or 0"
                );
                active_rows += 1;
                for c in 0..cols {
                    if wrow[c] > 0.0 {
                        // log softmax = x - max - log z
                        loss -= wrow[c] * (row[c] - max - log_z);
                    }
                }
            }
        }
        if active_rows > 0 {
            loss /= active_rows as f32;
        }
        let out = self.push_node(vec![loss], vec![1]);
        self.ops.push(Op::WeightedCrossEntropy {
            logits,
            out,
            rows,
            cols,
            weights: w.to_vec(),
            probs,
            row_weight,
            active_rows,
        });
        out
    }

    /// Mean over masked-in positions of the binary cross entropy between
    /// `probs` and `labels`, with probabilities clamped to
    /// `[1e-7, 1 - 1e-7]`. Labels and mask entries must be exactly 0 or 1.
    /// Returns a zero scalar (carrying no gradient) when the mask is empty.
    pub fn binary_cross_entropy(&mut self, probs: Var, labels: &[f32], mask: &[f32]) -> Var {
        let n = self.value(probs).len();
        assert_eq!(labels.len(), n, "binary_cross_entropy: {} labels for {} probs", labels.len(), n);
        assert_eq!(mask.len(), n, "binary_cross_entropy: {} mask entries for {} probs", mask.len(), n);
        assert!(
            labels.iter().all(|&y| y == 0.0 || y == 1.0),
            "binary_cross_entropy: label outside {{0,1}}"
        );
        assert!(
            mask.iter().all(|&m| m == 0.0 || m == 1.0),
            "binary_cross_entropy: mask outside {{0,1}}"
        );
        let active = mask.iter().filter(|&&m| m == 1.0).count();
        let mut loss = 0.0f32;
        if active > 0 {
            let p = self.value(probs);
            for i in 0..n {
                if mask[i] == 1.0 {
                    let pc = p[i].clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    loss -= labels[i] * pc.ln() + (1.0 - labels[i]) * (1.0 - pc).ln();
                }
            }
            loss /= active as f32;
        }
        let out = self.push_node(vec![loss], vec![1]);
        self.ops.push(Op::BinaryCrossEntropy {
            probs,
            out,
            labels: labels.to_vec(),
            mask: mask.to_vec(),
            active,
        });
        out
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss with seed gradient 1.
    pub fn backward(self, loss: Var) -> Gradients {
        self.backward_seeded(loss, 1.0)
    }

    /// Reverse sweep with an explicit seed (e.g. 1/batch for averaging
    /// per-example losses). Consumes the tape: records are visited exactly
    /// once and cannot be replayed.
    pub fn backward_seeded(self, loss: Var, seed: f32) -> Gradients {
        assert_eq!(
            self.nodes[loss.0].data.len(),
            1,
            "backward on non-scalar value of shape {:?}",
            self.nodes[loss.0].shape
        );
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![seed]);
        let Tape { nodes, ops } = self;
        for op in ops.iter().rev() {
            backward_op(op, &nodes, &mut grads);
        }
        // Drop intermediate gradients; callers only read leaves, but keeping
        // them is harmless and useful in tests.
        Gradients { grads }
    }
}

fn add_into(target: &mut Option<Vec<f32>>, delta: &[f32]) {
    match target {
        Some(t) => {
            for (a, d) in t.iter_mut().zip(delta) {
                *a += d;
            }
        }
        None => *target = Some(delta.to_vec()),
    }
}

fn backward_op(op: &Op, nodes: &[Node], grads: &mut Vec<Option<Vec<f32>>>) {
    match op {
        Op::Matmul { a, b, out, m, k, n } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            // dA = dC @ B^T
            let d_a = matmul_tb_kernel(&d_out, &nodes[b.0].data, *m, *n, *k);
            add_into(&mut grads[a.0], &d_a);
            // dB = A^T @ dC
            let d_b = matmul_at_kernel(&nodes[a.0].data, &d_out, *m, *k, *n);
            add_into(&mut grads[b.0], &d_b);
        }
        Op::MatmulTb { a, b, out, m, k, n } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            // dA = dC @ B
            let d_a = matmul_kernel(&d_out, &nodes[b.0].data, *m, *n, *k);
            add_into(&mut grads[a.0], &d_a);
            // dB = dC^T @ A
            let d_b = matmul_at_kernel(&d_out, &nodes[a.0].data, *m, *n, *k);
            add_into(&mut grads[b.0], &d_b);
        }
        Op::Add { a, b, out } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            add_into(&mut grads[a.0], &d_out);
            add_into(&mut grads[b.0], &d_out);
        }
        Op::AddRow { a, row, out, rows, cols } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            add_into(&mut grads[a.0], &d_out);
            let mut d_row = vec![0.0f32; *cols];
            for r in 0..*rows {
                for c in 0..*cols {
                    d_row[c] += d_out[r * cols + c];
                }
            }
            add_into(&mut grads[row.0], &d_row);
        }
        Op::Mul { a, b, out } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            let d_a: Vec<f32> =
                d_out.iter().zip(&nodes[b.0].data).map(|(d, y)| d * y).collect();
            add_into(&mut grads[a.0], &d_a);
            let d_b: Vec<f32> =
                d_out.iter().zip(&nodes[a.0].data).map(|(d, x)| d * x).collect();
            add_into(&mut grads[b.0], &d_b);
        }
        Op::Scale { a, c, out } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            let d_a: Vec<f32> = d_out.iter().map(|d| d * c).collect();
            add_into(&mut grads[a.0], &d_a);
        }
        Op::AddConst { a, out } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            add_into(&mut grads[a.0], &d_out);
        }
        Op::MulConst { a, k, out } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            let d_a: Vec<f32> = d_out.iter().zip(k).map(|(d, m)| d * m).collect();
            add_into(&mut grads[a.0], &d_a);
        }
        Op::Relu { a, out } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            let d_a: Vec<f32> = d_out
                .iter()
                .zip(&nodes[a.0].data)
                .map(|(d, &x)| if x > 0.0 { *d } else { 0.0 })
                .collect();
            add_into(&mut grads[a.0], &d_a);
        }
        Op::Sigmoid { a, out } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            let d_a: Vec<f32> = d_out
                .iter()
                .zip(&nodes[out.0].data)
                .map(|(d, &y)| d * y * (1.0 - y))
                .collect();
            add_into(&mut grads[a.0], &d_a);
        }
        Op::SoftmaxRows { a, out, rows, cols } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            let y = &nodes[out.0].data;
            let mut d_a = vec![0.0f32; y.len()];
            for r in 0..*rows {
                let base = r * cols;
                let mut dot = 0.0f32;
                for c in 0..*cols {
                    dot += d_out[base + c] * y[base + c];
                }
                for c in 0..*cols {
                    d_a[base + c] = y[base + c] * (d_out[base + c] - dot);
                }
            }
            add_into(&mut grads[a.0], &d_a);
        }
        Op::LayerNorm { x, gain, bias, out, rows, cols, mean, inv_std } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            let xv = &nodes[x.0].data;
            let g = &nodes[gain.0].data;
            let mut d_x = vec![0.0f32; xv.len()];
            let mut d_gain = vec![0.0f32; *cols];
            let mut d_bias = vec![0.0f32; *cols];
            for r in 0..*rows {
                let base = r * cols;
                let inv = inv_std[r];
                let mu = mean[r];
                // x_hat, then the two row means the input gradient needs
                let mut mean_dxh = 0.0f32;
                let mut mean_dxh_xh = 0.0f32;
                for c in 0..*cols {
                    let xh = (xv[base + c] - mu) * inv;
                    let dy = d_out[base + c];
                    d_gain[c] += dy * xh;
                    d_bias[c] += dy;
                    let dxh = dy * g[c];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xh;
                }
                mean_dxh /= *cols as f32;
                mean_dxh_xh /= *cols as f32;
                for c in 0..*cols {
                    let xh = (xv[base + c] - mu) * inv;
                    let dxh = d_out[base + c] * g[c];
                    d_x[base + c] = inv * (dxh - mean_dxh - xh * mean_dxh_xh);
                }
            }
            add_into(&mut grads[x.0], &d_x);
            add_into(&mut grads[gain.0], &d_gain);
            add_into(&mut grads[bias.0], &d_bias);
        }
        Op::GatherRows { table, rows, out, cols } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            let mut d_table = vec![0.0f32; nodes[table.0].data.len()];
            for (i, &r) in rows.iter().enumerate() {
                for c in 0..*cols {
                    d_table[r * cols + c] += d_out[i * cols + c];
                }
            }
            add_into(&mut grads[table.0], &d_table);
        }
        Op::ConcatCols { parts, out, rows } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            let total: usize = parts.iter().map(|(_, c)| c).sum();
            let mut offset = 0usize;
            for (part, c) in parts {
                let mut d_p = vec![0.0f32; rows * c];
                for r in 0..*rows {
                    d_p[r * c..(r + 1) * c]
                        .copy_from_slice(&d_out[r * total + offset..r * total + offset + c]);
                }
                add_into(&mut grads[part.0], &d_p);
                offset += c;
            }
        }
        Op::SliceCols { a, out, rows, cols, start, len } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            let mut d_a = vec![0.0f32; nodes[a.0].data.len()];
            for r in 0..*rows {
                for c in 0..*len {
                    d_a[r * cols + start + c] = d_out[r * len + c];
                }
            }
            add_into(&mut grads[a.0], &d_a);
        }
        Op::Sum { a, out } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            let d = d_out[0];
            let d_a = vec![d; nodes[a.0].data.len()];
            add_into(&mut grads[a.0], &d_a);
        }
        Op::WeightedCrossEntropy {
            logits,
            out,
            rows,
            cols,
            weights,
            probs,
            row_weight,
            active_rows,
        } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            if *active_rows == 0 {
                return;
            }
            let d = d_out[0] / *active_rows as f32;
            let mut d_logits = vec![0.0f32; probs.len()];
            for r in 0..*rows {
                if row_weight[r] == 0.0 {
                    continue;
                }
                let base = r * cols;
                for c in 0..*cols {
                    d_logits[base + c] =
                        d * (probs[base + c] * row_weight[r] - weights[base + c]);
                }
            }
            add_into(&mut grads[logits.0], &d_logits);
        }
        Op::BinaryCrossEntropy { probs, out, labels, mask, active } => {
            let Some(d_out) = grads[out.0].clone() else { return };
            if *active == 0 {
                return;
            }
            let d = d_out[0] / *active as f32;
            let p = &nodes[probs.0].data;
            let mut d_p = vec![0.0f32; p.len()];
            for i in 0..p.len() {
                if mask[i] == 1.0 && p[i] > BCE_CLAMP && p[i] < 1.0 - BCE_CLAMP {
                    d_p[i] = d * (p[i] - labels[i]) / (p[i] * (1.0 - p[i]));
                }
            }
            add_into(&mut grads[probs.0], &d_p);
        }
    }
}

// ── matmul kernels ──────────────────────────────────────────────────
// ikj loop order keeps the inner loop contiguous over both C and B rows so
// the compiler can vectorize it.

pub(crate) fn matmul_kernel(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
    c
}

/// C[m,n] = A[m,k] @ B[n,k]^T — row-dot-row, contiguous on both sides.
pub(crate) fn matmul_tb_kernel(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = 0.0f32;
            for (av, bv) in a_row.iter().zip(b_row) {
                s += av * bv;
            }
            c[i * n + j] = s;
        }
    }
    c
}

/// C[k,n] = A[m,k]^T @ B[m,n] — accumulate one outer product per row pair.
pub(crate) fn matmul_at_kernel(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; k * n];
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
    c
}
