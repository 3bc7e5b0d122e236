use crate::scalar::Scalar;

use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Matmul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Scale { x: Var, c: S },
    Silu { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: S },
    Softmax { x: Var },
    LogSoftmax { x: Var },
    Transpose { x: Var },
    SelectRows { x: Var, rows: Vec<usize> },
    PermuteRows { x: Var, perm: Vec<usize> },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    RepeatRow { x: Var, n: usize },
    SliceCols { x: Var, start: usize, end: usize },
    MeanRows { x: Var },
    SumAll { x: Var },
    MseMasked { pred: Var, target: Var, masked: Vec<usize> },
    NllLoss { log_probs: Var, labels: Vec<usize> },
}

/// Ordered record of executed primitive ops.
///
/// A tape owns the values it produces; leaves are copied in and gradients are
/// read back out after [`Tape::backward`]. A tape is single-threaded and
/// single-use: backward may run once, then the tape only serves reads.
pub struct Tape<S: Scalar> {
    datas: Vec<Vec<S>>,
    shapes: Vec<Vec<usize>>,
    requires: Vec<bool>,
    grads: Vec<Option<Vec<S>>>,
    ops: Vec<Op<S>>,
    consumed: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            datas: Vec::new(),
            shapes: Vec::new(),
            requires: Vec::new(),
            grads: Vec::new(),
            ops: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, data: Vec<S>, shape: Vec<usize>, requires: bool, op: Op<S>) -> Var {
        let id = self.datas.len();
        self.datas.push(data);
        self.shapes.push(shape);
        self.requires.push(requires);
        self.grads.push(None);
        self.ops.push(op);
        Var(id)
    }

    /// Records an input value. `requires_grad` marks it as a gradient target.
    pub fn leaf(&mut self, data: Vec<S>, shape: Vec<usize>, requires_grad: bool) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.data, t.shape, requires_grad, Op::Leaf))
    }

    /// Records a copy of `t` as a leaf, honoring its `requires_grad` flag.
    pub fn leaf_tensor(&mut self, t: &Tensor<S>) -> Var {
        self.push(t.data.clone(), t.shape.clone(), t.requires_grad, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.datas[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.shapes[v.0]
    }

    /// Gradient of the backward root with respect to `v`, if one was computed.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads[v.0].as_deref()
    }

    pub fn len(&self) -> usize {
        self.datas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datas.is_empty()
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shapes[v.0].as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(TensorError::Shape { op, detail: format!("expected 2-d value, got shape {other:?}") }),
        }
    }

    // ── forward ops ─────────────────────────────────────────────────────

    /// Matrix product of `a: [m×k]` and `b: [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(TensorError::Shape { op: "matmul", detail: format!("inner dimensions disagree: {m}x{k} vs {k2}x{n}") });
        }
        let data = matmul_raw(&self.datas[a.0], &self.datas[b.0], m, k, n);
        let req = self.requires[a.0] || self.requires[b.0];
        Ok(self.push(data, vec![m, n], req, Op::Matmul { a, b }))
    }

    /// Elementwise sum of two same-shape values.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shapes[a.0] != self.shapes[b.0] {
            return Err(TensorError::Shape { op: "add", detail: format!("{:?} vs {:?}", self.shapes[a.0], self.shapes[b.0]) });
        }
        let data: Vec<S> = self.datas[a.0].iter().zip(&self.datas[b.0]).map(|(&x, &y)| x + y).collect();
        let shape = self.shapes[a.0].clone();
        let req = self.requires[a.0] || self.requires[b.0];
        Ok(self.push(data, shape, req, Op::Add { a, b }))
    }

    /// Elementwise (Hadamard) product of two same-shape values.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shapes[a.0] != self.shapes[b.0] {
            return Err(TensorError::Shape { op: "mul", detail: format!("{:?} vs {:?}", self.shapes[a.0], self.shapes[b.0]) });
        }
        let data: Vec<S> = self.datas[a.0].iter().zip(&self.datas[b.0]).map(|(&x, &y)| x * y).collect();
        let shape = self.shapes[a.0].clone();
        let req = self.requires[a.0] || self.requires[b.0];
        Ok(self.push(data, shape, req, Op::Mul { a, b }))
    }

    /// Adds a `[d]` bias row-wise to `x: [n×d]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, d) = self.dims2(x, "add_bias")?;
        if self.shapes[bias.0].as_slice() != [d] {
            return Err(TensorError::Shape {
                op: "add_bias",
                detail: format!("bias shape {:?} does not match row width {d}", self.shapes[bias.0]),
            });
        }
        let mut data = self.datas[x.0].clone();
        let b = &self.datas[bias.0];
        for r in 0..n {
            for j in 0..d {
                data[r * d + j] = data[r * d + j] + b[j];
            }
        }
        let req = self.requires[x.0] || self.requires[bias.0];
        Ok(self.push(data, vec![n, d], req, Op::AddBias { x, bias }))
    }

    /// Multiplies every element by the constant `c`.
    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let data: Vec<S> = self.datas[x.0].iter().map(|&v| v * c).collect();
        let shape = self.shapes[x.0].clone();
        let req = self.requires[x.0];
        self.push(data, shape, req, Op::Scale { x, c })
    }

    /// Elementwise `x · σ(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        let data: Vec<S> = self.datas[x.0].iter().map(|&v| v * sigmoid(v)).collect();
        let shape = self.shapes[x.0].clone();
        let req = self.requires[x.0];
        self.push(data, shape, req, Op::Silu { x })
    }

    /// Per-last-axis normalization of `x: [n×d]` followed by `γ·x̂ + β`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var> {
        let (n, d) = self.dims2(x, "layer_norm")?;
        if self.shapes[gamma.0].as_slice() != [d] || self.shapes[beta.0].as_slice() != [d] {
            return Err(TensorError::Shape {
                op: "layer_norm",
                detail: format!("gamma/beta must be [{d}], got {:?} and {:?}", self.shapes[gamma.0], self.shapes[beta.0]),
            });
        }
        if !(eps > S::zero()) {
            return Err(TensorError::Arg { op: "layer_norm", detail: "eps must be positive".into() });
        }
        let xs = &self.datas[x.0];
        let g = &self.datas[gamma.0];
        let b = &self.datas[beta.0];
        let mut data = vec![S::zero(); n * d];
        for r in 0..n {
            let row = &xs[r * d..(r + 1) * d];
            let (mean, rstd) = row_stats(row, eps);
            for j in 0..d {
                data[r * d + j] = (row[j] - mean) * rstd * g[j] + b[j];
            }
        }
        let req = self.requires[x.0] || self.requires[gamma.0] || self.requires[beta.0];
        Ok(self.push(data, vec![n, d], req, Op::LayerNorm { x, gamma, beta, eps }))
    }

    /// Last-axis softmax with max-subtraction; every row sums to one.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims2(x, "softmax")?;
        let xs = &self.datas[x.0];
        let mut data = vec![S::zero(); n * d];
        for r in 0..n {
            let row = &xs[r * d..(r + 1) * d];
            let m = row_max(row);
            let mut sum = S::zero();
            for j in 0..d {
                let e = (row[j] - m).exp();
                data[r * d + j] = e;
                sum = sum + e;
            }
            for j in 0..d {
                data[r * d + j] = data[r * d + j] / sum;
            }
        }
        let req = self.requires[x.0];
        Ok(self.push(data, vec![n, d], req, Op::Softmax { x }))
    }

    /// Last-axis log-softmax, the numerically stable path into [`Tape::nll_loss`].
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims2(x, "log_softmax")?;
        let xs = &self.datas[x.0];
        let mut data = vec![S::zero(); n * d];
        for r in 0..n {
            let row = &xs[r * d..(r + 1) * d];
            let m = row_max(row);
            let mut sum = S::zero();
            for j in 0..d {
                sum = sum + (row[j] - m).exp();
            }
            let lse = m + sum.ln();
            for j in 0..d {
                data[r * d + j] = row[j] - lse;
            }
        }
        let req = self.requires[x.0];
        Ok(self.push(data, vec![n, d], req, Op::LogSoftmax { x }))
    }

    /// Transpose of a 2-d value.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims2(x, "transpose")?;
        let xs = &self.datas[x.0];
        let mut data = vec![S::zero(); n * d];
        for r in 0..n {
            for j in 0..d {
                data[j * n + r] = xs[r * d + j];
            }
        }
        let req = self.requires[x.0];
        Ok(self.push(data, vec![d, n], req, Op::Transpose { x }))
    }

    /// Gathers `rows` (indices into `x: [n×d]`, duplicates allowed) into a new value.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, d) = self.dims2(x, "select_rows")?;
        if rows.is_empty() {
            return Err(TensorError::Arg { op: "select_rows", detail: "empty row selection".into() });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(TensorError::Arg { op: "select_rows", detail: format!("row index {bad} out of range for {n} rows") });
        }
        let xs = &self.datas[x.0];
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            data.extend_from_slice(&xs[r * d..(r + 1) * d]);
        }
        let req = self.requires[x.0];
        Ok(self.push(data, vec![rows.len(), d], req, Op::SelectRows { x, rows: rows.to_vec() }))
    }

    /// Reorders rows: `out[i] = x[perm[i]]`. `perm` must be a permutation of `0..n`.
    pub fn permute_rows(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let (n, d) = self.dims2(x, "permute_rows")?;
        if perm.len() != n {
            return Err(TensorError::Arg {
                op: "permute_rows",
                detail: format!("permutation length {} does not match {n} rows", perm.len()),
            });
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(TensorError::Arg { op: "permute_rows", detail: "not a permutation".into() });
            }
            seen[p] = true;
        }
        let xs = &self.datas[x.0];
        let mut data = Vec::with_capacity(n * d);
        for &p in perm {
            data.extend_from_slice(&xs[p * d..(p + 1) * d]);
        }
        let req = self.requires[x.0];
        Ok(self.push(data, vec![n, d], req, Op::PermuteRows { x, perm: perm.to_vec() }))
    }

    /// Stacks values of equal width on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Arg { op: "concat_rows", detail: "no parts".into() });
        }
        let (_, d) = self.dims2(parts[0], "concat_rows")?;
        let mut total = 0;
        for &p in parts {
            let (np, dp) = self.dims2(p, "concat_rows")?;
            if dp != d {
                return Err(TensorError::Shape { op: "concat_rows", detail: format!("width {dp} != {d}") });
            }
            total += np;
        }
        let mut data = Vec::with_capacity(total * d);
        for &p in parts {
            data.extend_from_slice(&self.datas[p.0]);
        }
        let req = parts.iter().any(|&p| self.requires[p.0]);
        Ok(self.push(data, vec![total, d], req, Op::ConcatRows { parts: parts.to_vec() }))
    }

    /// Concatenates values of equal row count side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Arg { op: "concat_cols", detail: "no parts".into() });
        }
        let (n, _) = self.dims2(parts[0], "concat_cols")?;
        let mut width = 0;
        for &p in parts {
            let (np, dp) = self.dims2(p, "concat_cols")?;
            if np != n {
                return Err(TensorError::Shape { op: "concat_cols", detail: format!("row count {np} != {n}") });
            }
            width += dp;
        }
        let mut data = vec![S::zero(); n * width];
        let mut col = 0;
        for &p in parts {
            let dp = self.shapes[p.0][1];
            let src = &self.datas[p.0];
            for r in 0..n {
                data[r * width + col..r * width + col + dp].copy_from_slice(&src[r * dp..(r + 1) * dp]);
            }
            col += dp;
        }
        let req = parts.iter().any(|&p| self.requires[p.0]);
        Ok(self.push(data, vec![n, width], req, Op::ConcatCols { parts: parts.to_vec() }))
    }

    /// Repeats a `[1×d]` row `n` times.
    pub fn repeat_row(&mut self, x: Var, n: usize) -> Result<Var> {
        let (r, d) = self.dims2(x, "repeat_row")?;
        if r != 1 {
            return Err(TensorError::Shape { op: "repeat_row", detail: format!("expected a single row, got {r}") });
        }
        if n == 0 {
            return Err(TensorError::Arg { op: "repeat_row", detail: "repeat count must be positive".into() });
        }
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(&self.datas[x.0]);
        }
        let req = self.requires[x.0];
        Ok(self.push(data, vec![n, d], req, Op::RepeatRow { x, n }))
    }

    /// Column slice `x[:, start..end]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, d) = self.dims2(x, "slice_cols")?;
        if start >= end || end > d {
            return Err(TensorError::Arg { op: "slice_cols", detail: format!("bad column range {start}..{end} for width {d}") });
        }
        let w = end - start;
        let xs = &self.datas[x.0];
        let mut data = Vec::with_capacity(n * w);
        for r in 0..n {
            data.extend_from_slice(&xs[r * d + start..r * d + end]);
        }
        let req = self.requires[x.0];
        Ok(self.push(data, vec![n, w], req, Op::SliceCols { x, start, end }))
    }

    /// Mean over rows of `x: [n×d]`, producing `[1×d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims2(x, "mean_rows")?;
        let xs = &self.datas[x.0];
        let inv = S::one() / S::from(n).unwrap();
        let mut data = vec![S::zero(); d];
        for r in 0..n {
            for j in 0..d {
                data[j] = data[j] + xs[r * d + j];
            }
        }
        for v in &mut data {
            *v = *v * inv;
        }
        let req = self.requires[x.0];
        Ok(self.push(data, vec![1, d], req, Op::MeanRows { x }))
    }

    /// Sum of all elements, producing a scalar (shape `[1]`).
    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut s = S::zero();
        for &v in &self.datas[x.0] {
            s = s + v;
        }
        let req = self.requires[x.0];
        self.push(vec![s], vec![1], req, Op::SumAll { x })
    }

    /// Mean squared error over the masked rows of `pred`/`target: [P×d]` only.
    /// Unmasked rows contribute nothing to the value or the gradient.
    pub fn mse_masked(&mut self, pred: Var, target: Var, masked: &[usize]) -> Result<Var> {
        let (p, d) = self.dims2(pred, "mse_masked")?;
        if self.shapes[target.0].as_slice() != [p, d] {
            return Err(TensorError::Shape {
                op: "mse_masked",
                detail: format!("target shape {:?} != [{p}, {d}]", self.shapes[target.0]),
            });
        }
        if masked.is_empty() {
            return Err(TensorError::Arg { op: "mse_masked", detail: "empty mask set".into() });
        }
        if let Some(&bad) = masked.iter().find(|&&r| r >= p) {
            return Err(TensorError::Arg { op: "mse_masked", detail: format!("masked index {bad} out of range for {p} rows") });
        }
        let pr = &self.datas[pred.0];
        let tg = &self.datas[target.0];
        let mut acc = S::zero();
        for &r in masked {
            for j in 0..d {
                let diff = pr[r * d + j] - tg[r * d + j];
                acc = acc + diff * diff;
            }
        }
        let denom = S::from(masked.len() * d).unwrap();
        let req = self.requires[pred.0] || self.requires[target.0];
        Ok(self.push(vec![acc / denom], vec![1], req, Op::MseMasked { pred, target, masked: masked.to_vec() }))
    }

    /// Mean over the batch of `−log p(label)` given `log_probs: [B×C]`.
    pub fn nll_loss(&mut self, log_probs: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.dims2(log_probs, "nll_loss")?;
        if labels.len() != b {
            return Err(TensorError::Arg { op: "nll_loss", detail: format!("{} labels for batch of {b}", labels.len()) });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::Arg { op: "nll_loss", detail: format!("label {bad} out of range for {c} classes") });
        }
        let lp = &self.datas[log_probs.0];
        let mut acc = S::zero();
        for (r, &l) in labels.iter().enumerate() {
            acc = acc - lp[r * c + l];
        }
        let loss = acc / S::from(b).unwrap();
        let req = self.requires[log_probs.0];
        Ok(self.push(vec![loss], vec![1], req, Op::NllLoss { log_probs, labels: labels.to_vec() }))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Populates gradients of every `requires_grad` value reachable from the
    /// scalar `root`. Gradients accumulate additively for values consumed by
    /// multiple ops. A second call on the same tape is an error.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if self.datas[root.0].len() != 1 {
            return Err(TensorError::Arg { op: "backward", detail: format!("root must be scalar, got shape {:?}", self.shapes[root.0]) });
        }
        self.consumed = true;
        self.grads[root.0] = Some(vec![S::one()]);

        for i in (0..=root.0).rev() {
            if !self.requires[i] {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            let op = self.ops[i].clone();
            self.backprop_op(i, &op, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Routes the output gradient `g` of node `out` into the inputs of `op`.
    /// Each arm borrows `self.grads` mutably and `self.datas` immutably; the
    /// fields are disjoint so both borrows coexist.
    fn backprop_op(&mut self, out: usize, op: &Op<S>, g: &[S]) {
        let datas = &self.datas;
        let shapes = &self.shapes;
        let requires = &self.requires;
        let grads = &mut self.grads;

        fn buf<'a, S: Scalar>(grads: &'a mut [Option<Vec<S>>], datas: &[Vec<S>], v: Var) -> &'a mut Vec<S> {
            let len = datas[v.0].len();
            grads[v.0].get_or_insert_with(|| vec![S::zero(); len])
        }

        match *op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = (shapes[a.0][0], shapes[a.0][1]);
                let n = shapes[b.0][1];
                if requires[a.0] {
                    // dA[i,p] = Σ_j g[i,j]·B[p,j]
                    let bd = &datas[b.0];
                    let ga = buf(grads, datas, a);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let garow = &mut ga[i * k..(i + 1) * k];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let mut acc = S::zero();
                            for (gv, bv) in grow.iter().zip(brow) {
                                acc = acc + *gv * *bv;
                            }
                            garow[p] = garow[p] + acc;
                        }
                    }
                }
                if requires[b.0] {
                    // dB[p,j] = Σ_i A[i,p]·g[i,j]
                    let ad = &datas[a.0];
                    let gb = buf(grads, datas, b);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            let gbrow = &mut gb[p * n..(p + 1) * n];
                            for (gbv, gv) in gbrow.iter_mut().zip(grow) {
                                *gbv = *gbv + av * *gv;
                            }
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if requires[v.0] {
                        let gv = buf(grads, datas, v);
                        for (dst, src) in gv.iter_mut().zip(g) {
                            *dst = *dst + *src;
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                if requires[a.0] {
                    let bd = &datas[b.0];
                    let ga = buf(grads, datas, a);
                    for ((dst, src), bv) in ga.iter_mut().zip(g).zip(bd) {
                        *dst = *dst + *src * *bv;
                    }
                }
                if requires[b.0] {
                    let ad = &datas[a.0];
                    let gb = buf(grads, datas, b);
                    for ((dst, src), av) in gb.iter_mut().zip(g).zip(ad) {
                        *dst = *dst + *src * *av;
                    }
                }
            }
            Op::AddBias { x, bias } => {
                let (n, d) = (shapes[x.0][0], shapes[x.0][1]);
                if requires[x.0] {
                    let gx = buf(grads, datas, x);
                    for (dst, src) in gx.iter_mut().zip(g) {
                        *dst = *dst + *src;
                    }
                }
                if requires[bias.0] {
                    let gb = buf(grads, datas, bias);
                    for r in 0..n {
                        for j in 0..d {
                            gb[j] = gb[j] + g[r * d + j];
                        }
                    }
                }
            }
            Op::Scale { x, c } => {
                if requires[x.0] {
                    let gx = buf(grads, datas, x);
                    for (dst, src) in gx.iter_mut().zip(g) {
                        *dst = *dst + *src * c;
                    }
                }
            }
            Op::Silu { x } => {
                if requires[x.0] {
                    let xd = &datas[x.0];
                    let gx = buf(grads, datas, x);
                    for ((dst, src), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        let s = sigmoid(xv);
                        let deriv = s * (S::one() + xv * (S::one() - s));
                        *dst = *dst + *src * deriv;
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (n, d) = (shapes[x.0][0], shapes[x.0][1]);
                let invd = S::one() / S::from(d).unwrap();
                let xd = &datas[x.0];
                let gmd = &datas[gamma.0];
                let mut dgamma = vec![S::zero(); d];
                let mut dbeta = vec![S::zero(); d];
                let mut dx = vec![S::zero(); n * d];
                for r in 0..n {
                    let row = &xd[r * d..(r + 1) * d];
                    let (mean, rstd) = row_stats(row, eps);
                    let grow = &g[r * d..(r + 1) * d];
                    let mut mean_dxhat = S::zero();
                    let mut mean_dxhat_xhat = S::zero();
                    for j in 0..d {
                        let xhat = (row[j] - mean) * rstd;
                        dgamma[j] = dgamma[j] + grow[j] * xhat;
                        dbeta[j] = dbeta[j] + grow[j];
                        let dxhat = grow[j] * gmd[j];
                        mean_dxhat = mean_dxhat + dxhat;
                        mean_dxhat_xhat = mean_dxhat_xhat + dxhat * xhat;
                    }
                    mean_dxhat = mean_dxhat * invd;
                    mean_dxhat_xhat = mean_dxhat_xhat * invd;
                    for j in 0..d {
                        let xhat = (row[j] - mean) * rstd;
                        let dxhat = grow[j] * gmd[j];
                        dx[r * d + j] = rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
                if requires[x.0] {
                    let gx = buf(grads, datas, x);
                    for (dst, src) in gx.iter_mut().zip(&dx) {
                        *dst = *dst + *src;
                    }
                }
                if requires[gamma.0] {
                    let gg = buf(grads, datas, gamma);
                    for (dst, src) in gg.iter_mut().zip(&dgamma) {
                        *dst = *dst + *src;
                    }
                }
                if requires[beta.0] {
                    let gb = buf(grads, datas, beta);
                    for (dst, src) in gb.iter_mut().zip(&dbeta) {
                        *dst = *dst + *src;
                    }
                }
            }
            Op::Softmax { x } => {
                if requires[x.0] {
                    let (n, d) = (shapes[x.0][0], shapes[x.0][1]);
                    // uses the stored output y: dx = y∘(g − Σ g∘y)
                    let y = &datas[out];
                    let gx = buf(grads, datas, x);
                    for r in 0..n {
                        let yrow = &y[r * d..(r + 1) * d];
                        let grow = &g[r * d..(r + 1) * d];
                        let mut dot = S::zero();
                        for j in 0..d {
                            dot = dot + grow[j] * yrow[j];
                        }
                        for j in 0..d {
                            gx[r * d + j] = gx[r * d + j] + yrow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax { x } => {
                if requires[x.0] {
                    let (n, d) = (shapes[x.0][0], shapes[x.0][1]);
                    // dx = g − exp(stored output)·Σ g
                    let y = &datas[out];
                    let gx = buf(grads, datas, x);
                    for r in 0..n {
                        let yrow = &y[r * d..(r + 1) * d];
                        let grow = &g[r * d..(r + 1) * d];
                        let mut gsum = S::zero();
                        for j in 0..d {
                            gsum = gsum + grow[j];
                        }
                        for j in 0..d {
                            gx[r * d + j] = gx[r * d + j] + grow[j] - yrow[j].exp() * gsum;
                        }
                    }
                }
            }
            Op::Transpose { x } => {
                if requires[x.0] {
                    let (n, d) = (shapes[x.0][0], shapes[x.0][1]);
                    let gx = buf(grads, datas, x);
                    for r in 0..n {
                        for j in 0..d {
                            gx[r * d + j] = gx[r * d + j] + g[j * n + r];
                        }
                    }
                }
            }
            Op::SelectRows { x, ref rows } => {
                if requires[x.0] {
                    let d = shapes[x.0][1];
                    let gx = buf(grads, datas, x);
                    for (out_r, &src_r) in rows.iter().enumerate() {
                        for j in 0..d {
                            gx[src_r * d + j] = gx[src_r * d + j] + g[out_r * d + j];
                        }
                    }
                }
            }
            Op::PermuteRows { x, ref perm } => {
                if requires[x.0] {
                    let d = shapes[x.0][1];
                    let gx = buf(grads, datas, x);
                    for (out_r, &src_r) in perm.iter().enumerate() {
                        for j in 0..d {
                            gx[src_r * d + j] = gx[src_r * d + j] + g[out_r * d + j];
                        }
                    }
                }
            }
            Op::ConcatRows { ref parts } => {
                let mut row = 0;
                for &p in parts {
                    let (np, d) = (shapes[p.0][0], shapes[p.0][1]);
                    if requires[p.0] {
                        let gp = buf(grads, datas, p);
                        for (dst, src) in gp.iter_mut().zip(&g[row * d..(row + np) * d]) {
                            *dst = *dst + *src;
                        }
                    }
                    row += np;
                }
            }
            Op::ConcatCols { ref parts } => {
                let n = shapes[parts[0].0][0];
                let width: usize = parts.iter().map(|&p| shapes[p.0][1]).sum();
                let mut col = 0;
                for &p in parts {
                    let dp = shapes[p.0][1];
                    if requires[p.0] {
                        let gp = buf(grads, datas, p);
                        for r in 0..n {
                            for j in 0..dp {
                                gp[r * dp + j] = gp[r * dp + j] + g[r * width + col + j];
                            }
                        }
                    }
                    col += dp;
                }
            }
            Op::RepeatRow { x, n } => {
                if requires[x.0] {
                    let d = shapes[x.0][1];
                    let gx = buf(grads, datas, x);
                    for r in 0..n {
                        for j in 0..d {
                            gx[j] = gx[j] + g[r * d + j];
                        }
                    }
                }
            }
            Op::SliceCols { x, start, end } => {
                if requires[x.0] {
                    let (n, d) = (shapes[x.0][0], shapes[x.0][1]);
                    let w = end - start;
                    let gx = buf(grads, datas, x);
                    for r in 0..n {
                        for j in 0..w {
                            gx[r * d + start + j] = gx[r * d + start + j] + g[r * w + j];
                        }
                    }
                }
            }
            Op::MeanRows { x } => {
                if requires[x.0] {
                    let (n, d) = (shapes[x.0][0], shapes[x.0][1]);
                    let inv = S::one() / S::from(n).unwrap();
                    let gx = buf(grads, datas, x);
                    for r in 0..n {
                        for j in 0..d {
                            gx[r * d + j] = gx[r * d + j] + g[j] * inv;
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                if requires[x.0] {
                    let gx = buf(grads, datas, x);
                    for dst in gx.iter_mut() {
                        *dst = *dst + g[0];
                    }
                }
            }
            Op::MseMasked { pred, target, ref masked } => {
                let d = shapes[pred.0][1];
                let denom = S::from(masked.len() * d).unwrap();
                let coeff = S::from(2.0).unwrap() * g[0] / denom;
                if requires[pred.0] {
                    let pd = &datas[pred.0];
                    let td = &datas[target.0];
                    let gp = buf(grads, datas, pred);
                    for &r in masked {
                        for j in 0..d {
                            gp[r * d + j] = gp[r * d + j] + coeff * (pd[r * d + j] - td[r * d + j]);
                        }
                    }
                }
                if requires[target.0] {
                    let pd = &datas[pred.0];
                    let td = &datas[target.0];
                    let gt = buf(grads, datas, target);
                    for &r in masked {
                        for j in 0..d {
                            gt[r * d + j] = gt[r * d + j] - coeff * (pd[r * d + j] - td[r * d + j]);
                        }
                    }
                }
            }
            Op::NllLoss { log_probs, ref labels } => {
                if requires[log_probs.0] {
                    let c = shapes[log_probs.0][1];
                    let inv_b = S::one() / S::from(labels.len()).unwrap();
                    let gl = buf(grads, datas, log_probs);
                    for (r, &l) in labels.iter().enumerate() {
                        gl[r * c + l] = gl[r * c + l] - g[0] * inv_b;
                    }
                }
            }
        }
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

fn row_max<S: Scalar>(row: &[S]) -> S {
    let mut m = row[0];
    for &v in &row[1..] {
        if v > m {
            m = v;
        }
    }
    m
}

fn row_stats<S: Scalar>(row: &[S], eps: S) -> (S, S) {
    let d = S::from(row.len()).unwrap();
    let mut mean = S::zero();
    for &v in row {
        mean = mean + v;
    }
    mean = mean / d;
    let mut var = S::zero();
    for &v in row {
        let c = v - mean;
        var = var + c * c;
    }
    var = var / d;
    (mean, S::one() / (var + eps).sqrt())
}

/// Row-major `[m×k]·[k×n]` with fixed `i,p,j` loop order.
pub(crate) fn matmul_raw<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
    c
}
