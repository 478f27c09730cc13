use super::kernels;
use super::{Result, Tensor, TensorError};
use super::ParameterSet;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Tanh(Var),
    Embed { table: Var, ids: Vec<usize> },
    ConcatCols(Vec<Var>),
    LogSoftmax { x: Var, outer: usize, len: usize, inner: usize },
    Pick { x: Var, idx: Vec<usize> },
    SegmentSum { x: Var, seg: Vec<usize> },
    Gather { x: Var, idx: Vec<usize> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst { x: Var, c: Vec<f64> },
    Exp(Var),
    LogSigmoid(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Min(Var, Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

/// Define-by-run computation graph.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid reverse topological order for backpropagation. A graph can be
/// differentiated once; build a new graph for the next pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(TensorError::Shape(msg))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, values: Vec<f64>, op: Op, parents: &[Var]) -> Result<Var> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(name));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            shape,
            values,
            op,
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, t: &Tensor, requires_grad: bool, param: Option<String>) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            values: t.values().to_vec(),
            op: Op::Leaf,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf(t, false, None)
    }

    /// A leaf that receives gradients but is not tied to a named parameter.
    pub fn variable(&mut self, t: &Tensor) -> Var {
        self.leaf(t, true, None)
    }

    /// Trainable leaf copied from `params[name]`.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<Var> {
        let t = params.get(name).ok_or_else(|| TensorError::Usage(format!("unknown parameter {name}")))?;
        Ok(self.leaf(t, true, Some(name.to_string())))
    }

    /// Detached copy of `params[name]`.
    pub fn frozen(&mut self, params: &ParameterSet, name: &str) -> Result<Var> {
        let t = params.get(name).ok_or_else(|| TensorError::Usage(format!("unknown parameter {name}")))?;
        Ok(self.leaf(t, false, None))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::from_parts(n.shape.clone(), n.values.clone())
    }

    pub fn item(&self, v: Var) -> Result<f64> {
        let vals = self.value(v);
        if vals.len() != 1 {
            return shape_err(format!("item() on node of shape {:?}", self.shape(v)));
        }
        Ok(vals[0])
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => shape_err(format!("{what}: expected a matrix, got shape {s:?}")),
        }
    }

    /// `x · w + b` for `x: [rows, inner]`, `w: [inner, cols]`, `b: [cols]`.
    /// A 1-D `x` is treated as a single row and yields a 1-D output.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (rows, inner, one_d) = match self.shape(x) {
            [n] => (1, *n, true),
            [r, c] => (*r, *c, false),
            s => return shape_err(format!("affine: input must be 1-D or 2-D, got {s:?}")),
        };
        let (wi, cols) = self.dims2(w, "affine weight")?;
        if wi != inner {
            return shape_err(format!("affine: input inner dim {inner} != weight rows {wi}"));
        }
        if self.shape(b) != [cols] {
            return shape_err(format!("affine: bias shape {:?} != [{cols}]", self.shape(b)));
        }
        let out = kernels::affine(self.value(x), self.value(w), self.value(b), rows, inner, cols);
        let shape = if one_d { vec![cols] } else { vec![rows, cols] };
        self.push("affine", shape, out, Op::Affine { x, w, b }, &[x, w, b])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        self.push("tanh", self.shape(x).to_vec(), out, Op::Tanh(x), &[x])
    }

    /// Rows of `table: [vocab, dim]` selected by `ids`, giving `[ids.len(), dim]`.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.dims2(table, "embed table")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return shape_err(format!("embed: id {bad} out of range for vocab {vocab}"));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&t[i * dim..(i + 1) * dim]);
        }
        self.push("embed", vec![ids.len(), dim], out, Op::Embed { table, ids: ids.to_vec() }, &[table])
    }

    /// Column-wise concatenation of matrices that share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("concat_cols: no inputs".into());
        }
        let rows = self.dims2(parts[0], "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != rows {
                return shape_err(format!("concat_cols: row counts {rows} and {r} differ"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        self.push("concat_cols", vec![rows, total], out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Log-softmax along `axis`.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return shape_err(format!("log_softmax: axis {axis} invalid for shape {shape:?}"));
        }
        if self.value(x).iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite("log_softmax input"));
        }
        let outer = shape[..axis].iter().product();
        let len = shape[axis];
        let inner = shape[axis + 1..].iter().product();
        let out = kernels::log_softmax(self.value(x), outer, len, inner);
        self.push("log_softmax", shape, out, Op::LogSoftmax { x, outer, len, inner }, &[x])
    }

    /// `out[r] = x[r, idx[r]]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims2(x, "pick")?;
        if idx.len() != rows {
            return shape_err(format!("pick: {} indices for {rows} rows", idx.len()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= cols) {
            return shape_err(format!("pick: column {bad} out of range {cols}"));
        }
        let xv = self.value(x);
        let out = idx.iter().enumerate().map(|(r, &c)| xv[r * cols + c]).collect();
        self.push("pick", vec![rows], out, Op::Pick { x, idx: idx.to_vec() }, &[x])
    }

    /// Sums entries of a vector into `n` buckets: `out[seg[r]] += x[r]`.
    pub fn segment_sum(&mut self, x: Var, seg: &[usize], n: usize) -> Result<Var> {
        let xv = self.value(x);
        if self.shape(x).len() != 1 || seg.len() != xv.len() {
            return shape_err(format!("segment_sum: {} segment ids for shape {:?}", seg.len(), self.shape(x)));
        }
        if let Some(&bad) = seg.iter().find(|&&s| s >= n) {
            return shape_err(format!("segment_sum: segment {bad} out of range {n}"));
        }
        let mut out = vec![0.0; n];
        for (&s, &v) in seg.iter().zip(xv) {
            out[s] += v;
        }
        self.push("segment_sum", vec![n], out, Op::SegmentSum { x, seg: seg.to_vec() }, &[x])
    }

    /// `out[p] = x[idx[p]]` for a vector `x`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if self.shape(x).len() != 1 {
            return shape_err(format!("gather: expected a vector, got {:?}", self.shape(x)));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.len()) {
            return shape_err(format!("gather: index {bad} out of range {}", xv.len()));
        }
        let out = idx.iter().map(|&i| xv[i]).collect();
        self.push("gather", vec![idx.len()], out, Op::Gather { x, idx: idx.to_vec() }, &[x])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("{what}: shapes {:?} and {:?} differ", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push("add", self.shape(a).to_vec(), out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push("sub", self.shape(a).to_vec(), out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push("mul", self.shape(a).to_vec(), out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v * c).collect();
        self.push("scale", self.shape(x).to_vec(), out, Op::Scale(x, c), &[x])
    }

    /// Elementwise product with a constant array of the same length.
    pub fn mul_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return shape_err(format!("mul_const: {} constants for shape {:?}", c.len(), self.shape(x)));
        }
        let out = self.value(x).iter().zip(c).map(|(a, b)| a * b).collect();
        self.push("mul_const", self.shape(x).to_vec(), out, Op::MulConst { x, c: c.to_vec() }, &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v.exp()).collect();
        self.push("exp", self.shape(x).to_vec(), out, Op::Exp(x), &[x])
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| kernels::log_sigmoid(v)).collect();
        self.push("log_sigmoid", self.shape(x).to_vec(), out, Op::LogSigmoid(x), &[x])
    }

    /// Clamp into `[lo, hi]`; the gradient is zero wherever the bound is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(TensorError::Usage(format!("clamp: lo {lo} > hi {hi}")));
        }
        let out = self.value(x).iter().map(|v| v.clamp(lo, hi)).collect();
        self.push("clamp", self.shape(x).to_vec(), out, Op::Clamp { x, lo, hi }, &[x])
    }

    /// Elementwise minimum. Ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "min")?;
        let out = self.zip_with(a, b, |x, y| if x <= y { x } else { y });
        self.push("min", self.shape(a).to_vec(), out, Op::Min(a, b), &[a, b])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        self.push("sum", vec![], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return shape_err("mean of empty tensor".into());
        }
        let s: f64 = self.value(x).iter().sum();
        self.push("mean", vec![], vec![s / n as f64], Op::Mean(x), &[x])
    }

    /// Reverse-mode sweep from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(TensorError::Usage("backward already ran on this graph".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        if grads.iter().flatten().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(TensorError::NonFinite("backward"));
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.as_ref()?.get(v.0)?.as_deref()
    }

    /// `(parameter name, gradient)` for every named leaf reached by backward.
    pub fn param_grads(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| {
            let name = n.param.as_deref()?;
            let g = self.grads.as_ref()?.get(i)?.as_deref()?;
            Some((name, g))
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !self.wants(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(contrib).for_each(|(e, c)| *e += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let inner = self.shape(*w)[0];
                let cols = self.shape(*w)[1];
                let rows = self.value(*x).len() / inner;
                if self.wants(*x) {
                    acc(*x, kernels::affine_grad_input(g, self.value(*w), rows, inner, cols));
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; inner * cols];
                    kernels::affine_grad_weight(self.value(*x), g, &mut dw, rows, inner, cols);
                    acc(*w, dw);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; cols];
                    for r in 0..rows {
                        for (d, &gv) in db.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                            *d += gv;
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Tanh(x) => {
                let dx = node.values.iter().zip(g).map(|(y, gv)| gv * (1.0 - y * y)).collect();
                acc(*x, dx);
            }
            Op::Embed { table, ids } => {
                let dim = self.shape(*table)[1];
                let mut dt = vec![0.0; self.value(*table).len()];
                for (r, &id) in ids.iter().enumerate() {
                    for (d, &gv) in dt[id * dim..(id + 1) * dim].iter_mut().zip(&g[r * dim..(r + 1) * dim]) {
                        *d += gv;
                    }
                }
                acc(*table, dt);
            }
            Op::ConcatCols(parts) => {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        acc(p, dp);
                    }
                    offset += w;
                }
            }
            Op::LogSoftmax { x, outer, len, inner } => {
                acc(*x, kernels::log_softmax_grad(&node.values, g, *outer, *len, *inner));
            }
            Op::Pick { x, idx } => {
                let cols = self.shape(*x)[1];
                let mut dx = vec![0.0; self.value(*x).len()];
                for (r, (&c, &gv)) in idx.iter().zip(g).enumerate() {
                    dx[r * cols + c] += gv;
                }
                acc(*x, dx);
            }
            Op::SegmentSum { x, seg } => {
                acc(*x, seg.iter().map(|&s| g[s]).collect());
            }
            Op::Gather { x, idx } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (&j, &gv) in idx.iter().zip(g) {
                    dx[j] += gv;
                }
                acc(*x, dx);
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, g.iter().zip(bv).map(|(gv, y)| gv * y).collect());
                acc(*b, g.iter().zip(av).map(|(gv, x)| gv * x).collect());
            }
            Op::Scale(x, c) => acc(*x, g.iter().map(|v| v * c).collect()),
            Op::MulConst { x, c } => acc(*x, g.iter().zip(c).map(|(gv, cv)| gv * cv).collect()),
            Op::Exp(x) => acc(*x, g.iter().zip(&node.values).map(|(gv, y)| gv * y).collect()),
            Op::LogSigmoid(x) => {
                let dx = g.iter().zip(self.value(*x)).map(|(gv, &v)| gv * kernels::sigmoid(-v)).collect();
                acc(*x, dx);
            }
            Op::Clamp { x, lo, hi } => {
                let dx = g
                    .iter()
                    .zip(self.value(*x))
                    .map(|(gv, &v)| if v < *lo || v > *hi { 0.0 } else { *gv })
                    .collect();
                acc(*x, dx);
            }
            Op::Min(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let pick_a: Vec<bool> = av.iter().zip(bv).map(|(x, y)| x <= y).collect();
                acc(*a, g.iter().zip(&pick_a).map(|(gv, &p)| if p { *gv } else { 0.0 }).collect());
                acc(*b, g.iter().zip(&pick_a).map(|(gv, &p)| if p { 0.0 } else { *gv }).collect());
            }
            Op::Sum(x) => acc(*x, vec![g[0]; self.value(*x).len()]),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                acc(*x, vec![g[0] / n as f64; n]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, v: Vec<f64>) -> Tensor {
        Tensor::new(shape, v).unwrap()
    }

    #[test]
    fn affine_identity_and_diag() {
        let mut g = Graph::new();
        let x = g.constant(&t(vec![2], vec![1.0, 0.0]));
        let w = g.constant(&Tensor::identity(2));
        let b = g.constant(&t(vec![2], vec![0.0, 0.0]));
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y), &[1.0, 0.0]);

        let x = g.constant(&t(vec![2], vec![1.0, 1.0]));
        let w = g.constant(&t(vec![2, 2], vec![2.0, 0.0, 0.0, 3.0]));
        let b = g.constant(&t(vec![2], vec![1.0, 1.0]));
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y), &[3.0, 4.0]);
    }

    #[test]
    fn affine_bias_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.constant(&t(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let w = g.variable(&t(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]));
        let b = g.variable(&t(vec![2], vec![0.0, 0.0]));
        let y = g.affine(x, w, b).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        // one contribution per row
        assert_eq!(g.grad(b).unwrap(), &[3.0, 3.0]);
    }

    #[test]
    fn affine_shape_mismatch() {
        let mut g = Graph::new();
        let x = g.constant(&t(vec![3], vec![1.0, 2.0, 3.0]));
        let w = g.constant(&Tensor::identity(2));
        let b = g.constant(&t(vec![2], vec![0.0, 0.0]));
        assert!(matches!(g.affine(x, w, b), Err(TensorError::Shape(_))));
    }

    #[test]
    fn log_softmax_examples() {
        let mut g = Graph::new();
        let ln2 = std::f64::consts::LN_2;
        for logits in [[0.0, 0.0], [1000.0, 1000.0]] {
            let x = g.constant(&t(vec![2], logits.to_vec()));
            let y = g.log_softmax(x, 0).unwrap();
            for v in g.value(y) {
                assert!((v + ln2).abs() < 1e-15);
            }
        }
        let x = g.constant(&t(vec![2], vec![1.0, 0.0]));
        let y = g.log_softmax(x, 0).unwrap();
        let e = std::f64::consts::E;
        let a = (e / (e + 1.0)).ln();
        let b = (1.0 / (e + 1.0)).ln();
        assert!((g.value(y)[0] - a).abs() < 1e-15);
        assert!((g.value(y)[1] - b).abs() < 1e-15);
        assert!((a + 0.313_261_687_518_222_8).abs() < 1e-15);
    }

    #[test]
    fn log_softmax_axis_zero_on_matrix() {
        let mut g = Graph::new();
        let x = g.constant(&t(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5]));
        let y = g.log_softmax(x, 0).unwrap();
        for c in 0..3 {
            let s: f64 = (0..2).map(|r| g.value(y)[r * 3 + c].exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(g.log_softmax(x, 2).is_err());
    }

    #[test]
    fn backward_sum_and_zero_scale() {
        let mut g = Graph::new();
        let p = g.variable(&t(vec![3], vec![1.0, 2.0, 3.0]));
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(p).unwrap(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let p = g.variable(&t(vec![3], vec![1.0, 2.0, 3.0]));
        let z = g.scale(p, 0.0).unwrap();
        let s = g.sum(z).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(p).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_repeat() {
        let mut g = Graph::new();
        let p = g.variable(&t(vec![2], vec![1.0, 2.0]));
        assert!(matches!(g.backward(p), Err(TensorError::Usage(_))));
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(TensorError::Usage(_))));
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut g = Graph::new();
        let p = g.constant(&t(vec![1], vec![800.0]));
        assert!(matches!(g.exp(p), Err(TensorError::NonFinite(_))));
    }

    #[test]
    fn min_clamp_routing() {
        let mut g = Graph::new();
        let r = g.variable(&t(vec![2], vec![1.3, 0.7]));
        let adv = [1.0, -1.0];
        let a = g.mul_const(r, &adv).unwrap();
        let c = g.clamp(r, 0.8, 1.2).unwrap();
        let b = g.mul_const(c, &adv).unwrap();
        let m = g.min(a, b).unwrap();
        let v = g.value(m).to_vec();
        assert!((v[0] - 1.2).abs() < 1e-15);
        assert!((v[1] + 0.8).abs() < 1e-15);
        let s = g.sum(m).unwrap();
        g.backward(s).unwrap();
        // both entries sit on the clipped branch
        assert_eq!(g.grad(r).unwrap(), &[0.0, 0.0]);
    }
}
