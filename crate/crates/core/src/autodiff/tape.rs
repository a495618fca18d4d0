use std::borrow::Cow;

use super::{AutodiffError, Tensor};

/// Stand-in for negative infinity in masked logits. Finite so that softmax
/// never sees `inf - inf`; its exponent still underflows to exactly zero.
pub const NEG_INF: f64 = f64::MIN;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `b` is broadcast over the leading axes of `a`.
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    /// Reduction over `axis` of a tensor viewed as `[outer, len, inner]`.
    Mean {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Sum(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Tanh(Var),
    Relu(Var),
    MaskedFill {
        x: Var,
        mask: Vec<bool>,
    },
    Transpose(Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Index {
        x: Var,
        at: usize,
    },
}

struct Node<'p> {
    shape: Vec<usize>,
    value: Cow<'p, [f64]>,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode gradient tape.
///
/// Every operation appends a node holding its forward value; [`Tape::backward`]
/// walks the nodes in reverse. Parameters can be borrowed for the lifetime
/// `'p` to avoid copying weights into every tape.
#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    tags: Vec<(Var, usize)>,
}

/// Gradients of a scalar with respect to the leaves of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    leaves: Vec<(Var, Vec<f64>)>,
    tagged: Vec<(usize, Vec<f64>)>,
}

impl Gradients {
    /// Gradient for a leaf created with [`Tape::leaf`] or [`Tape::param`].
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.leaves
            .iter()
            .find(|(leaf, _)| *leaf == v)
            .map(|(_, g)| g.as_slice())
    }

    /// Gradients of tagged parameters, one entry per tag, in tag order.
    pub fn tagged(&self) -> &[(usize, Vec<f64>)] {
        &self.tagged
    }

    /// Add tagged gradients into `params[tag]`.
    pub fn accumulate_into(&self, params: &mut [Tensor]) -> Result<(), AutodiffError> {
        for (tag, g) in &self.tagged {
            let p = params
                .get_mut(*tag)
                .ok_or_else(|| AutodiffError::InvalidArgument(format!("no parameter with tag {tag}")))?;
            p.accumulate_grad(g)?;
        }
        Ok(())
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> AutodiffError {
    AutodiffError::Shape(format!("{what}: {a:?} vs {b:?}"))
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().unwrap_or(&1)
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'p, [f64]>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Owned leaf; tracked for gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        let shape = t.shape().to_vec();
        let data = t.data().to_vec();
        self.push(shape, Cow::Owned(data), Op::Leaf, needs)
    }

    /// Constant from raw data.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var, AutodiffError> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(t))
    }

    /// Borrowed parameter leaf. When `tag` is set the leaf is tracked and its
    /// gradient reported under that tag; otherwise it is a constant.
    pub fn param(&mut self, t: &'p Tensor, tag: Option<usize>) -> Var {
        let v = self.push(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Leaf, tag.is_some());
        if let Some(tag) = tag {
            self.tags.push((v, tag));
        }
        v
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let x = va[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &vb[p * m..(p + 1) * m];
                for (o, y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let g = self.grad_of(&[a, b]);
        Ok(self.push(vec![n, m], Cow::Owned(out), Op::MatMul(a, b), g))
    }

    /// Elementwise sum; `b` may be broadcast over leading axes of `a`
    /// (its shape must equal a suffix of `a`'s shape, ignoring leading 1s).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let core: Vec<usize> = sb.iter().copied().skip_while(|&d| d == 1).collect();
        let ok = sa == sb || (core.len() <= sa.len() && sa[sa.len() - core.len()..] == core[..]);
        if !ok {
            return Err(shape_err("add", sa, sb));
        }
        let shape = sa.to_vec();
        let (va, vb) = (self.value(a), self.value(b));
        let bl = vb.len();
        let out: Vec<f64> = va.iter().enumerate().map(|(i, x)| x + vb[i % bl]).collect();
        let g = self.grad_of(&[a, b]);
        Ok(self.push(shape, Cow::Owned(out), Op::Add(a, b), g))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("mul", sa, sb));
        }
        let shape = sa.to_vec();
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let g = self.grad_of(&[a, b]);
        Ok(self.push(shape, Cow::Owned(out), Op::Mul(a, b), g))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let shape = self.shape(a).to_vec();
        let out = self.value(a).iter().map(|x| x * c).collect();
        let g = self.grad_of(&[a]);
        self.push(shape, Cow::Owned(out), Op::Scale(a, c), g)
    }

    /// Concatenate along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::InvalidArgument("concat of nothing".into()))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut width = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(shape_err("concat", self.shape(*first), s));
            }
            width += last_dim(s);
        }
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                let w = last_dim(self.shape(*p));
                out.extend_from_slice(&self.value(*p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(width);
        let g = self.grad_of(parts);
        Ok(self.push(shape, Cow::Owned(out), Op::Concat(parts.to_vec()), g))
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || s[axis] == 0 {
            return Err(AutodiffError::Shape(format!("mean over axis {axis} of {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let v = self.value(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += v[base + i];
                }
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|y| *y *= inv);
        let mut shape = s.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let g = self.grad_of(&[x]);
        Ok(self.push(shape, Cow::Owned(out), Op::Mean { x, outer, len, inner }, g))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().sum();
        let g = self.grad_of(&[x]);
        self.push(vec![1], Cow::Owned(vec![total]), Op::Sum(x), g)
    }

    fn rowwise(&self, x: Var, f: impl Fn(&[f64], &mut [f64])) -> Vec<f64> {
        let w = last_dim(self.shape(x));
        let v = self.value(x);
        let mut out = vec![0.0; v.len()];
        for (src, dst) in v.chunks(w).zip(out.chunks_mut(w)) {
            f(src, dst);
        }
        out
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = self.rowwise(x, |src, dst| {
            let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (s - max).exp();
                z += *d;
            }
            dst.iter_mut().for_each(|d| *d /= z);
        });
        let shape = self.shape(x).to_vec();
        let g = self.grad_of(&[x]);
        self.push(shape, Cow::Owned(out), Op::Softmax(x), g)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let out = self.rowwise(x, |src, dst| {
            let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = src.iter().map(|s| (s - max).exp()).sum();
            let lse = max + z.ln();
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s - lse;
            }
        });
        let shape = self.shape(x).to_vec();
        let g = self.grad_of(&[x]);
        self.push(shape, Cow::Owned(out), Op::LogSoftmax(x), g)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let g = self.grad_of(&[x]);
        self.push(shape, Cow::Owned(out), Op::Tanh(x), g)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|v| v.max(0.0)).collect();
        let g = self.grad_of(&[x]);
        self.push(shape, Cow::Owned(out), Op::Relu(x), g)
    }

    /// Overwrite masked positions with `value`. The mask covers either the
    /// whole tensor or its last axis (then it applies to every row).
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], value: f64) -> Result<Var, AutodiffError> {
        let s = self.shape(x);
        let numel: usize = s.iter().product();
        if mask.len() != numel && mask.len() != last_dim(s) {
            return Err(shape_err("masked_fill", s, &[mask.len()]));
        }
        let shape = s.to_vec();
        let ml = mask.len();
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| if mask[i % ml] { value } else { *v })
            .collect();
        let g = self.grad_of(&[x]);
        Ok(self.push(shape, Cow::Owned(out), Op::MaskedFill { x, mask: mask.to_vec() }, g))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(AutodiffError::Shape(format!("transpose of {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let v = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let g = self.grad_of(&[x]);
        Ok(self.push(vec![c, r], Cow::Owned(out), Op::Transpose(x), g))
    }

    /// Rows `start..start + len` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(x);
        if s.len() != 2 || start + len > s[0] {
            return Err(AutodiffError::Shape(format!("rows {start}..{} of {s:?}", start + len)));
        }
        let c = s[1];
        let out = self.value(x)[start * c..(start + len) * c].to_vec();
        let g = self.grad_of(&[x]);
        Ok(self.push(vec![len, c], Cow::Owned(out), Op::SliceRows { x, start }, g))
    }

    /// Row `i` of a 2-D tensor as a `[1, cols]` tensor.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var, AutodiffError> {
        self.slice_rows(x, i, 1)
    }

    /// Columns `start..start + len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(x);
        if s.len() != 2 || start + len > s[1] {
            return Err(AutodiffError::Shape(format!("cols {start}..{} of {s:?}", start + len)));
        }
        let (r, c) = (s[0], s[1]);
        let v = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&v[i * c + start..i * c + start + len]);
        }
        let g = self.grad_of(&[x]);
        Ok(self.push(vec![r, len], Cow::Owned(out), Op::SliceCols { x, start }, g))
    }

    /// Element at flat index `at`, shape `[1]`.
    pub fn index(&mut self, x: Var, at: usize) -> Result<Var, AutodiffError> {
        let v = *self
            .value(x)
            .get(at)
            .ok_or_else(|| AutodiffError::Shape(format!("index {at} of {:?}", self.shape(x))))?;
        let g = self.grad_of(&[x]);
        Ok(self.push(vec![1], Cow::Owned(vec![v]), Op::Index { x, at }, g))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(AutodiffError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        adj[loss.0] = vec![1.0];
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || adj[idx].is_empty() || matches!(node.op, Op::Leaf) {
                continue;
            }
            let dy = std::mem::take(&mut adj[idx]);
            self.propagate(idx, &dy, &mut adj);
            adj[idx] = dy;
        }

        let mut leaves = Vec::new();
        for (idx, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if matches!(node.op, Op::Leaf) && node.needs_grad {
                let g = if adj[idx].is_empty() {
                    vec![0.0; node.value.len()]
                } else {
                    adj[idx].clone()
                };
                leaves.push((Var(idx), g));
            }
        }
        let mut tagged: Vec<(usize, Vec<f64>)> = Vec::new();
        for (v, tag) in &self.tags {
            let g = leaves
                .iter()
                .find(|(l, _)| l == v)
                .map(|(_, g)| g.clone())
                .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()]);
            match tagged.iter_mut().find(|(t, _)| t == tag) {
                Some((_, acc)) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => tagged.push((*tag, g)),
            }
        }
        tagged.sort_by_key(|(t, _)| *t);
        Ok(Gradients { leaves, tagged })
    }

    fn propagate(&self, idx: usize, dy: &[f64], adj: &mut [Vec<f64>]) {
        let node = &self.nodes[idx];
        let acc = |v: Var, adj: &mut [Vec<f64>], f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = &mut adj[v.0];
            if slot.is_empty() {
                *slot = vec![0.0; self.nodes[v.0].value.len()];
            }
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, adj, &mut |ga| {
                    for i in 0..n {
                        let drow = &dy[i * m..(i + 1) * m];
                        for p in 0..k {
                            let brow = &vb[p * m..(p + 1) * m];
                            ga[i * k + p] += drow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, adj, &mut |gb| {
                    for i in 0..n {
                        let drow = &dy[i * m..(i + 1) * m];
                        for p in 0..k {
                            let x = va[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (g, d) in gb[p * m..(p + 1) * m].iter_mut().zip(drow) {
                                *g += x * d;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, adj, &mut |ga| ga.iter_mut().zip(dy).for_each(|(g, d)| *g += d));
                acc(*b, adj, &mut |gb| {
                    let bl = gb.len();
                    for (i, d) in dy.iter().enumerate() {
                        gb[i % bl] += d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, adj, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += dy[i] * vb[i];
                    }
                });
                acc(*b, adj, &mut |gb| {
                    for i in 0..gb.len() {
                        gb[i] += dy[i] * va[i];
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(*a, adj, &mut |ga| ga.iter_mut().zip(dy).for_each(|(g, d)| *g += c * d));
            }
            Op::Concat(parts) => {
                let width = last_dim(&node.shape);
                let rows = dy.len() / width.max(1);
                let mut offset = 0;
                for p in parts {
                    let w = last_dim(self.shape(*p));
                    acc(*p, adj, &mut |gp| {
                        for r in 0..rows {
                            for j in 0..w {
                                gp[r * w + j] += dy[r * width + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::Mean { x, outer, len, inner } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                let inv = 1.0 / len as f64;
                acc(*x, adj, &mut |gx| {
                    for o in 0..outer {
                        for l in 0..len {
                            for i in 0..inner {
                                gx[(o * len + l) * inner + i] += dy[o * inner + i] * inv;
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, adj, &mut |gx| gx.iter_mut().for_each(|g| *g += dy[0]));
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let w = last_dim(&node.shape);
                acc(*x, adj, &mut |gx| {
                    for r in 0..y.len() / w {
                        let ys = &y[r * w..(r + 1) * w];
                        let ds = &dy[r * w..(r + 1) * w];
                        let dot: f64 = ys.iter().zip(ds).map(|(a, b)| a * b).sum();
                        for j in 0..w {
                            gx[r * w + j] += ys[j] * (ds[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let w = last_dim(&node.shape);
                acc(*x, adj, &mut |gx| {
                    for r in 0..y.len() / w {
                        let ys = &y[r * w..(r + 1) * w];
                        let ds = &dy[r * w..(r + 1) * w];
                        let total: f64 = ds.iter().sum();
                        for j in 0..w {
                            gx[r * w + j] += ds[j] - ys[j].exp() * total;
                        }
                    }
                });
            }
            Op::Tanh(x) => {
                let y = &node.value;
                acc(*x, adj, &mut |gx| {
                    for i in 0..gx.len() {
                        gx[i] += dy[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                acc(*x, adj, &mut |gx| {
                    for i in 0..gx.len() {
                        if xv[i] > 0.0 {
                            gx[i] += dy[i];
                        }
                    }
                });
            }
            Op::MaskedFill { x, mask } => {
                let ml = mask.len();
                acc(*x, adj, &mut |gx| {
                    for i in 0..gx.len() {
                        if !mask[i % ml] {
                            gx[i] += dy[i];
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let s = self.shape(*x);
                let (r, c) = (s[0], s[1]);
                acc(*x, adj, &mut |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += dy[j * r + i];
                        }
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let c = self.shape(*x)[1];
                let off = start * c;
                acc(*x, adj, &mut |gx| {
                    for (i, d) in dy.iter().enumerate() {
                        gx[off + i] += d;
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let c = self.shape(*x)[1];
                let len = node.shape[1];
                acc(*x, adj, &mut |gx| {
                    for r in 0..node.shape[0] {
                        for j in 0..len {
                            gx[r * c + start + j] += dy[r * len + j];
                        }
                    }
                });
            }
            Op::Index { x, at } => {
                acc(*x, adj, &mut |gx| gx[*at] += dy[0]);
            }
        }
    }
}
